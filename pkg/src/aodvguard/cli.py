"""Command line entry point: ``aodvguard run|compare|validate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .kernel import simulate
from .metrics import (
    SCHEMA_VERSION, MetricsReport, compare, mean_report, write_series,
)
from .scenario import ScenarioConfig, ScenarioError, parse_scenario, validate

log = logging.getLogger("aodvguard")

EMIT_CHOICES = ("json", "csv", "table")


@dataclass
class RunSpec:
    scenario_path: Optional[Path]
    mode: str  # "original" | "proposed" | "compare"
    seeds: List[int] = field(default_factory=lambda: [1, 2, 3])
    output_dir: Path = Path("out")
    emit: Tuple[str, ...] = EMIT_CHOICES
    strict_mode: bool = False
    jobs: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.mode not in ("original", "proposed", "compare"):
            raise ValueError(f"unknown mode {self.mode!r}")


def load_config(path: Optional[Path], strict_mode: bool = False) -> ScenarioConfig:
    cfg = parse_scenario(path) if path is not None else ScenarioConfig()
    if strict_mode:
        cfg = cfg.with_(defense=replace(cfg.defense, strict_mode=True))
    return cfg


def _one(cfg: ScenarioConfig) -> MetricsReport:
    return simulate(cfg)[0]


def run_configs(configs: Sequence[ScenarioConfig], jobs: int = 1) -> List[MetricsReport]:
    """Run independent simulations; results come back in input order."""
    if jobs <= 1 or len(configs) <= 1:
        return [_one(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_one, configs))


def _summary_table(report: MetricsReport, title: str) -> str:
    rows = [
        ("Average End-to-end delay [sec]", report.avg_end_to_end_delay),
        ("Receiving packets", report.avg_nodes_receiving),
        ("Forwarding packets", report.avg_nodes_forwarding),
        ("Average RTT [sec]", report.avg_rtt),
        ("Average processing time [sec]", report.avg_processing_time),
        ("Dropped data packets", report.dropped_total),
        ("Delivered data packets", report.delivered),
        ("Generated data packets", report.generated),
        ("Route validity on flows [sec]", report.flow_route_validity),
    ]
    width = max(len(r[0]) for r in rows)
    lines = [f"{'':{width}}  {title}"]
    for label, v in rows:
        text = "n/a" if v is None else f"{v:.5f}"
        lines.append(f"{label:{width}}  {text:>{len(title)}}")
    return "\n".join(lines) + "\n"


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_experiment(spec: RunSpec) -> int:
    cfg = load_config(spec.scenario_path, spec.strict_mode)
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)

    if spec.mode == "compare":
        modes = [("original", False), ("proposed", True)]
    else:
        modes = [(spec.mode, spec.mode == "proposed")]
    configs = [cfg.with_(seed=s, defense_enabled=on) for _, on in modes for s in spec.seeds]
    log.info("running %d simulations", len(configs))
    try:
        reports = run_configs(configs, spec.jobs)
    except Exception as exc:  # any run failure marks the output directory
        (out / "INCOMPLETE").write_text(f"run failed: {exc!r}\n")
        log.error("simulation failed: %s", exc)
        return 1
    (out / "INCOMPLETE").unlink(missing_ok=True)

    k = len(spec.seeds)
    averaged = {name: mean_report(reports[i * k:(i + 1) * k]) for i, (name, _) in enumerate(modes)}

    payload = {
        "schema_version": SCHEMA_VERSION,
        "mode": spec.mode,
        "seeds": list(spec.seeds),
        "scenario": cfg.to_dict(),
    }
    if spec.mode == "compare":
        table = compare(averaged["original"], averaged["proposed"])
        payload["original"] = averaged["original"].to_dict()
        payload["proposed"] = averaged["proposed"].to_dict()
        payload["comparison"] = table.to_dict()
        text = table.render()
    else:
        payload["report"] = averaged[spec.mode].to_dict()
        title = "Proposed AODV" if spec.mode == "proposed" else "Original AODV"
        text = _summary_table(averaged[spec.mode], title)

    if "json" in spec.emit:
        _write_json(out / "report.json", payload)
    if "csv" in spec.emit:
        for name, report in averaged.items():
            sub = out / "series" / name if spec.mode == "compare" else out / "series"
            write_series(report, sub)
    if "table" in spec.emit:
        (out / "comparison.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def _seeds(text: str) -> List[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or any(not 0 <= s < 2**64 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be a non-empty list of unsigned 64-bit ints")
    return seeds


def _emit(text: str) -> Tuple[str, ...]:
    items = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in items if s not in EMIT_CHOICES]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"--emit takes a subset of {','.join(EMIT_CHOICES)}")
    return items


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aodvguard",
        description="AODV simulator with a neighbor-enforced RREQ flood defense.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, with_defense: bool):
        p.add_argument("--scenario", type=Path, default=None,
                       help="YAML scenario file (default: the built-in default scenario)")
        p.add_argument("--seeds", type=_seeds, default=[1, 2, 3], help="comma-separated seeds")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--emit", type=_emit, default=EMIT_CHOICES, help="json,csv,table")
        p.add_argument("--strict-mode", action="store_true",
                       help="ignore all traffic from blacklisted neighbors")
        p.add_argument("--jobs", type=int, default=1, help="parallel simulations")
        if with_defense:
            p.add_argument("--defense", choices=("on", "off"), default="on")

    common(sub.add_parser("run", help="run one protocol variant"), True)
    common(sub.add_parser("compare", help="run original and proposed, then compare"), False)
    v = sub.add_parser("validate", help="parse and validate a scenario file")
    v.add_argument("--scenario", type=Path, default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.verb == "validate":
            cfg = load_config(args.scenario)
            validate(cfg)
            print(f"ok: {cfg.node_count} nodes, {len(cfg.flows)} flows, "
                  f"{len(cfg.attackers)} attackers, {cfg.sim_duration} s")
            return 0
        mode = "compare" if args.verb == "compare" else (
            "proposed" if args.defense == "on" else "original")
        spec = RunSpec(args.scenario, mode, args.seeds, args.out, args.emit,
                       args.strict_mode, args.jobs)
        return run_experiment(spec)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
