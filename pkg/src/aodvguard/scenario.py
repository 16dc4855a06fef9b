"""Scenario description, defaults, and the YAML scenario file format.

Schema (every key optional; omitted keys take the defaults shown)::

    field: {width: 2000, height: 2000}      # meters
    node_count: 69
    radio_range: 250                        # meters
    sim_duration: 17.2                      # seconds
    seed: 1
    defense_enabled: true
    placement: seeded_connected             # | seeded_uniform | {explicit: [[x, y], ...]}
    background_flows: 0
    sweep_interval: 0.1                     # seconds between route/blacklist sweeps
    defense: {accept_limit: 3, blacklist_limit: 10, base_blacklist_timeout: 5.0,
              strict_mode: false}
    queue: {service_rate: 200, capacity: 50, per_hop_latency: 0.002}
    aodv: {route_lifetime: 3.0, dedup_horizon: 3.0, buffer_capacity: 64,
           buffer_timeout: 1.5, rreq_ratelimit: 10, rreq_ttl: 35,
           discovery_timeout: 0.5, rreq_retries: 2}
    flows:                                  # replaces the default four flows
      - {src: 48, dst: 20, start: 11, end: 16, rate: 4, packet_size: 512}
    attackers:                              # replaces the default attacker
      - {node: 0, flood_rate: 20, start: 1, end: 17,
         target_mode: nonexistent}          # | random_existing
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from .aodv import AodvParams
from .floodguard import DefenseParams

DEFAULT_RATE = 4.0
DEFAULT_PACKET_SIZE = 512

Position = Tuple[float, float]


class ScenarioError(ValueError):
    def __init__(self, message: str, field: Optional[str] = None,
                 path: Optional[str] = None, line: Optional[int] = None):
        self.message = message
        self.field = field
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        label = f"{field}: " if field else ""
        super().__init__(f"{where}{label}{message}")


@dataclass(frozen=True)
class TrafficFlow:
    src: int
    dst: int
    start: float
    end: float
    rate: float = DEFAULT_RATE
    packet_size: int = DEFAULT_PACKET_SIZE


@dataclass(frozen=True)
class AttackerProfile:
    node: int = 0
    flood_rate: float = 20.0
    start: float = 1.0
    end: float = 17.0
    target_mode: str = "nonexistent"


@dataclass(frozen=True)
class QueueParams:
    service_rate: float = 200.0
    capacity: int = 50
    per_hop_latency: float = 0.002


TABLE1_FLOWS = (
    TrafficFlow(48, 20, 11.0, 16.0),
    TrafficFlow(18, 27, 5.0, 12.0),
    TrafficFlow(31, 66, 6.0, 11.0),
    TrafficFlow(45, 16, 9.0, 12.0),
)

PLACEMENTS = ("seeded_connected", "seeded_uniform")
TARGET_MODES = ("nonexistent", "random_existing")


@dataclass(frozen=True)
class ScenarioConfig:
    field_size: Tuple[float, float] = (2000.0, 2000.0)
    node_count: int = 69
    radio_range: float = 250.0
    sim_duration: float = 17.2
    seed: int = 1
    defense_enabled: bool = True
    defense: DefenseParams = DefenseParams()
    flows: Tuple[TrafficFlow, ...] = TABLE1_FLOWS
    attackers: Tuple[AttackerProfile, ...] = (AttackerProfile(),)
    placement: Union[str, Tuple[Position, ...]] = "seeded_connected"
    queue: QueueParams = QueueParams()
    aodv: AodvParams = AodvParams()
    background_flows: int = 0
    sweep_interval: float = 0.1

    def with_(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def fingerprint(self) -> str:
        """Hash of everything except the seed and whether the defense is on."""
        d = self.to_dict()
        d.pop("seed")
        d.pop("defense_enabled")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def validate(cfg: ScenarioConfig) -> None:
    """Raise ScenarioError naming the first offending field."""
    w, h = cfg.field_size
    if not (w > 0 and h > 0):
        raise ScenarioError("field dimensions must be positive", "field")
    for name in ("node_count", "radio_range", "sim_duration", "sweep_interval"):
        value = getattr(cfg, name)
        if not value > 0:
            raise ScenarioError(f"must be positive, got {value!r}", name)
    if cfg.background_flows < 0:
        raise ScenarioError("must be non-negative", "background_flows")
    if not 0 <= cfg.seed < 2**64:
        raise ScenarioError("must be an unsigned 64-bit integer", "seed")
    n = cfg.node_count
    if isinstance(cfg.placement, str):
        if cfg.placement not in PLACEMENTS:
            raise ScenarioError(f"unknown placement {cfg.placement!r}", "placement")
    else:
        if len(cfg.placement) != n:
            raise ScenarioError(
                f"explicit placement lists {len(cfg.placement)} positions "
                f"for {n} nodes", "placement")
        for x, y in cfg.placement:
            if not (0 <= x <= w and 0 <= y <= h):
                raise ScenarioError(f"position ({x}, {y}) lies outside the field", "placement")
    for i, f in enumerate(cfg.flows):
        tag = f"flows[{i}]"
        for end in ("src", "dst"):
            if not 0 <= getattr(f, end) < n:
                raise ScenarioError(f"node {getattr(f, end)} does not exist", f"{tag}.{end}")
        if f.src == f.dst:
            raise ScenarioError("src and dst must differ", f"{tag}.dst")
        if not 0 <= f.start < f.end <= cfg.sim_duration:
            raise ScenarioError("need 0 <= start < end <= sim_duration", f"{tag}.end")
        if not f.rate > 0:
            raise ScenarioError("must be positive", f"{tag}.rate")
        if not f.packet_size > 0:
            raise ScenarioError("must be positive", f"{tag}.packet_size")
    for i, a in enumerate(cfg.attackers):
        tag = f"attackers[{i}]"
        if not 0 <= a.node < n:
            raise ScenarioError(f"node {a.node} does not exist", f"{tag}.node")
        if not a.flood_rate > 0:
            raise ScenarioError("must be positive", f"{tag}.flood_rate")
        if not 0 <= a.start < a.end:
            raise ScenarioError("need 0 <= start < end", f"{tag}.end")
        if a.target_mode not in TARGET_MODES:
            raise ScenarioError(f"unknown target_mode {a.target_mode!r}", f"{tag}.target_mode")


# -- placement ---------------------------------------------------------------

def place_nodes(cfg: ScenarioConfig, rng: random.Random) -> List[Position]:
    if not isinstance(cfg.placement, str):
        return [(float(x), float(y)) for x, y in cfg.placement]
    w, h = cfg.field_size
    if cfg.placement == "seeded_uniform":
        return [(rng.uniform(0, w), rng.uniform(0, h)) for _ in range(cfg.node_count)]
    return _connected_placement(cfg.node_count, w, h, cfg.radio_range, rng)


def _connected_placement(n: int, w: float, h: float, r: float,
                         rng: random.Random) -> List[Position]:
    # uniform draws, kept only when within range of an already placed node,
    # so the unit-disk graph is connected by construction
    r2 = r * r
    pts = [(rng.uniform(0, w), rng.uniform(0, h))]
    while len(pts) < n:
        x, y = rng.uniform(0, w), rng.uniform(0, h)
        if any((x - px) ** 2 + (y - py) ** 2 <= r2 for px, py in pts):
            pts.append((x, y))
    return pts


def background_flows(cfg: ScenarioConfig, rng: random.Random) -> List[TrafficFlow]:
    """Seeded random extra flows between non-attacker nodes."""
    attackers = {a.node for a in cfg.attackers}
    genuine = [i for i in range(cfg.node_count) if i not in attackers]
    flows = []
    if len(genuine) < 2:
        return flows
    for _ in range(cfg.background_flows):
        src, dst = rng.sample(genuine, 2)
        start = round(rng.uniform(0.0, cfg.sim_duration / 2), 3)
        end = min(cfg.sim_duration, start + 5.0)
        flows.append(TrafficFlow(src, dst, start, end))
    return flows


# -- file format -------------------------------------------------------------

_TOP_KEYS = {
    "field", "node_count", "radio_range", "sim_duration", "seed", "defense_enabled",
    "placement", "background_flows", "sweep_interval", "defense", "queue", "aodv",
    "flows", "attackers",
}
_SECTIONS = {
    "defense": DefenseParams,
    "queue": QueueParams,
    "aodv": AodvParams,
}


def _key_lines(node, prefix="") -> Dict[str, int]:
    """Map dotted key paths to 1-based line numbers from a composed YAML tree."""
    lines: Dict[str, int] = {}
    if isinstance(node, yaml.MappingNode):
        for knode, vnode in node.value:
            path = f"{prefix}.{knode.value}" if prefix else str(knode.value)
            lines[path] = knode.start_mark.line + 1
            lines.update(_key_lines(vnode, path))
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            lines[path] = item.start_mark.line + 1
            lines.update(_key_lines(item, path))
    return lines


def _line_for(lines: Dict[str, int], field_path: Optional[str]) -> Optional[int]:
    while field_path:
        if field_path in lines:
            return lines[field_path]
        cut = max(field_path.rfind("."), field_path.rfind("["))
        field_path = field_path[:cut] if cut > 0 else ""
    return None


def _fields_of(cls) -> Dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _build(cls, raw: Any, tag: str, defaults=None):
    if not isinstance(raw, dict):
        raise ScenarioError("expected a mapping", tag)
    known = _fields_of(cls)
    for key in raw:
        if key not in known:
            raise ScenarioError(f"unknown key {key!r}", f"{tag}.{key}")
    kwargs = dataclasses.asdict(defaults) if defaults is not None else {}
    kwargs.update(raw)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ScenarioError(str(exc), tag) from None
    except ValueError as exc:
        msg = str(exc)
        name = next((k for k in known if msg.startswith(k)), None)
        raise ScenarioError(msg, f"{tag}.{name}" if name else tag) from None


def config_from_dict(raw: Optional[Dict[str, Any]]) -> ScenarioConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ScenarioError("top level must be a mapping")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ScenarioError(f"unknown key {key!r}", key)
    base = ScenarioConfig()
    kw: Dict[str, Any] = {}
    for key in ("node_count", "background_flows"):
        if key in raw:
            if not isinstance(raw[key], int) or isinstance(raw[key], bool):
                raise ScenarioError("expected an integer", key)
            kw[key] = raw[key]
    if "seed" in raw:
        if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
            raise ScenarioError("expected an integer", "seed")
        kw["seed"] = raw["seed"]
    for key in ("radio_range", "sim_duration", "sweep_interval"):
        if key in raw:
            if not isinstance(raw[key], (int, float)) or isinstance(raw[key], bool):
                raise ScenarioError("expected a number", key)
            kw[key] = float(raw[key])
    if "defense_enabled" in raw:
        if not isinstance(raw["defense_enabled"], bool):
            raise ScenarioError("expected true or false", "defense_enabled")
        kw["defense_enabled"] = raw["defense_enabled"]
    if "field" in raw:
        fld = raw["field"]
        if not isinstance(fld, dict) or set(fld) - {"width", "height"}:
            raise ScenarioError("expected {width, height}", "field")
        kw["field_size"] = (float(fld.get("width", base.field_size[0])),
                            float(fld.get("height", base.field_size[1])))
    if "placement" in raw:
        p = raw["placement"]
        if isinstance(p, dict):
            if set(p) != {"explicit"} or not isinstance(p["explicit"], list):
                raise ScenarioError("expected {explicit: [[x, y], ...]}", "placement")
            try:
                kw["placement"] = tuple((float(x), float(y)) for x, y in p["explicit"])
            except (TypeError, ValueError):
                raise ScenarioError("positions must be [x, y] pairs", "placement.explicit") from None
        else:
            kw["placement"] = p
    for key, cls in _SECTIONS.items():
        if key in raw:
            kw[key] = _build(cls, raw[key], key, getattr(base, key))
    if "flows" in raw:
        if not isinstance(raw["flows"], list):
            raise ScenarioError("expected a list", "flows")
        kw["flows"] = tuple(_build(TrafficFlow, f, f"flows[{i}]")
                            for i, f in enumerate(raw["flows"]))
    if "attackers" in raw:
        if not isinstance(raw["attackers"], list):
            raise ScenarioError("expected a list", "attackers")
        kw["attackers"] = tuple(_build(AttackerProfile, a, f"attackers[{i}]")
                                for i, a in enumerate(raw["attackers"]))
    cfg = base.with_(**kw)
    validate(cfg)
    return cfg


def parse_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """Load a scenario file; missing keys fall back to the default scenario."""
    path = Path(path)
    text = path.read_text()
    try:
        tree = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError(f"cannot parse: {getattr(exc, 'problem', exc)}",
                            path=str(path), line=line) from None
    lines = _key_lines(tree) if tree is not None else {}
    try:
        return config_from_dict(raw)
    except ScenarioError as exc:
        raise ScenarioError(exc.message, exc.field, str(path),
                            _line_for(lines, exc.field)) from None
