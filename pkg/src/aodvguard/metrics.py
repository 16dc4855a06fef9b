"""Event-stream metrics: delays, RTT, hop participation, drops, throughput.

The collector consumes :class:`MetricEvent` values in time order and keeps
O(1) accumulators; :func:`finalize` turns them into a :class:`MetricsReport`.
Interval ``k`` of every time series covers ``[k, k + 1)`` seconds.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

SCHEMA_VERSION = 1

SENT = "Sent"
RECEIVED = "Received"
FORWARDED = "Forwarded"
DROPPED = "Dropped"
ACK_RECEIVED = "AckReceived"
SCREEN = "ScreenDecision"
ROUTE_INVALIDATED = "RouteInvalidated"
ROUTE_INSTALLED = "RouteInstalled"
CONTROL_SENT = "ControlSent"
CONTROL_DROPPED = "ControlDropped"
UNBLOCKED = "Unblocked"

THROUGHPUT_KINDS = ("generated", "sent", "forwarded", "received")


@dataclass(frozen=True)
class MetricEvent:
    time: float
    kind: str
    node: int
    flow: Optional[int] = None
    seq: Optional[int] = None
    src: Optional[int] = None
    dst: Optional[int] = None
    size: int = 0
    reason: Optional[str] = None
    peer: Optional[int] = None  # neighbor, route destination, or packet origin
    stamp: Optional[float] = None  # tx time (Forwarded), data send time (Received/AckReceived)


class OutOfOrderEvent(RuntimeError):
    pass


def n_intervals(sim_duration: float) -> int:
    return max(1, math.ceil(sim_duration))


class Collector:
    def __init__(self, sim_duration: float, keep_log: bool = False):
        self.sim_duration = sim_duration
        self.n = n_intervals(sim_duration)
        self.keep_log = keep_log
        self.log: List[MetricEvent] = []
        self.last_time = -math.inf

        self.delay_sum = 0.0
        self.delivered = 0
        self.pair_delay: Dict[Tuple[int, int], List[float]] = defaultdict(lambda: [0.0, 0])
        self.rtt_sum = 0.0
        self.acked = 0
        self.rtt_samples: List[Tuple[float, float]] = []
        self.proc_sum = 0.0
        self.proc_count = 0
        self._hops: Dict[Tuple[int, int], List[int]] = {}
        self.recv_total = 0
        self.fwd_total = 0
        self.generated = 0
        self.data_drops: Counter = Counter()
        self.control_drops: Counter = Counter()
        self.drop_per_interval = [0] * self.n
        self.flow_counts: Dict[int, Counter] = defaultdict(Counter)
        self.series = {k: [[0, 0] for _ in range(self.n)] for k in THROUGHPUT_KINDS}
        self.per_node: Dict[str, Dict[int, List[int]]] = {k: {} for k in THROUGHPUT_KINDS}
        self.screen_counts: Counter = Counter()
        self.blacklists: List[Dict[str, Any]] = []
        self.unblocks = 0
        self.control_sent: Counter = Counter()
        self._open_routes: Dict[Tuple[int, int], float] = {}
        self.route_valid: Dict[Tuple[int, int], float] = defaultdict(float)

    def _bucket(self, t: float) -> int:
        return min(self.n - 1, max(0, int(math.floor(t))))

    def _tput(self, kind: str, t: float, node: int, size: int) -> None:
        k = self._bucket(t)
        cell = self.series[kind][k]
        cell[0] += size * 8
        cell[1] += 1
        row = self.per_node[kind].get(node)
        if row is None:
            row = self.per_node[kind][node] = [0] * self.n
        row[k] += 1

    def record(self, ev: MetricEvent) -> None:
        if ev.time < self.last_time:
            raise OutOfOrderEvent(
                f"event at {ev.time!r} after {self.last_time!r}: {ev.kind}")
        self.last_time = ev.time
        if self.keep_log:
            self.log.append(ev)
        kind = ev.kind

        if kind == SENT:
            self.generated += 1
            self.flow_counts[ev.flow]["sent"] += 1
            self._hops[(ev.flow, ev.seq)] = [0, 0]
            self._tput("generated", ev.time, ev.node, ev.size)
        elif kind == FORWARDED:
            if ev.node == ev.src:
                self._tput("sent", ev.stamp, ev.node, ev.size)
            else:
                self._tput("forwarded", ev.stamp, ev.node, ev.size)
                self.proc_sum += ev.stamp - ev.time
                self.proc_count += 1
                self._hops[(ev.flow, ev.seq)][1] += 1
        elif kind == RECEIVED:
            key = (ev.flow, ev.seq)
            if ev.node != ev.dst:
                self._hops[key][0] += 1
                return
            delay = ev.time - ev.stamp
            self.delay_sum += delay
            self.delivered += 1
            pd = self.pair_delay[(ev.src, ev.dst)]
            pd[0] += delay
            pd[1] += 1
            recv, fwd = self._hops.pop(key)
            self.recv_total += recv
            self.fwd_total += fwd
            self.flow_counts[ev.flow]["delivered"] += 1
            self._tput("received", ev.time, ev.node, ev.size)
        elif kind == DROPPED:
            self.data_drops[ev.reason] += 1
            self.drop_per_interval[self._bucket(ev.time)] += 1
            self.flow_counts[ev.flow]["dropped"] += 1
            self._hops.pop((ev.flow, ev.seq), None)
        elif kind == ACK_RECEIVED:
            rtt = ev.time - ev.stamp
            self.rtt_sum += rtt
            self.acked += 1
            self.rtt_samples.append((ev.time, rtt))
        elif kind == CONTROL_DROPPED:
            self.control_drops[ev.reason] += 1
        elif kind == CONTROL_SENT:
            self.control_sent[ev.reason] += 1
        elif kind == SCREEN:
            self.screen_counts[ev.reason] += 1
            if ev.reason == "DropAndBlacklist":
                self.blacklists.append({
                    "observer": ev.node, "neighbor": ev.peer, "time": ev.time,
                    "until": ev.stamp, "offense": ev.seq,
                })
        elif kind == UNBLOCKED:
            self.unblocks += 1
        elif kind == ROUTE_INSTALLED:
            self._open_routes.setdefault((ev.node, ev.peer), ev.time)
        elif kind == ROUTE_INVALIDATED:
            start = self._open_routes.pop((ev.node, ev.peer), None)
            if start is not None:
                self.route_valid[(ev.node, ev.peer)] += ev.time - start
        else:
            raise ValueError(f"unknown metric event kind {kind!r}")


@dataclass
class MetricsReport:
    sim_duration: float
    config_fingerprint: str
    defense_enabled: bool
    seeds: List[int]
    generated: float
    delivered: float
    acked: float
    avg_end_to_end_delay: Optional[float]
    avg_rtt: Optional[float]
    avg_processing_time: Optional[float]
    avg_nodes_receiving: Optional[float]
    avg_nodes_forwarding: Optional[float]
    pairwise_delays: Dict[str, float]
    dropped_total: float
    dropped_by_reason: Dict[str, float]
    control_dropped_by_reason: Dict[str, float]
    control_sent: Dict[str, float]
    dropped_cumulative_series: List[float]
    throughput_series: Dict[str, Dict[str, List[float]]]
    throughput_per_node: Dict[str, Dict[str, List[float]]]
    route_validity: Dict[str, float]
    flow_route_validity: float
    flow_counts: Dict[str, Dict[str, float]]
    screen_decisions: Dict[str, float]
    blacklist_events: List[Dict[str, Any]]
    unblocks: float
    rtt_samples: List[List[float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        d = dict(self.__dict__)
        d = {"schema_version": SCHEMA_VERSION, **d}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MetricsReport":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {version!r}")
        return cls(**d)

    def series_tables(self) -> Dict[str, List[float]]:
        """Every time series, keyed by CSV file stem."""
        out = {"dropped_cumulative": self.dropped_cumulative_series}
        for kind in THROUGHPUT_KINDS:
            out[f"throughput_{kind}_bits"] = self.throughput_series[kind]["bits"]
            out[f"throughput_{kind}_packets"] = self.throughput_series[kind]["packets"]
        return out


def _mean(total: float, count: int) -> Optional[float]:
    return total / count if count else None


def finalize(col: Collector, config) -> MetricsReport:
    """Build the report; ``config`` supplies duration, flows and fingerprint."""
    open_end = config.sim_duration
    validity = dict(col.route_valid)
    for key, start in col._open_routes.items():
        validity[key] = validity.get(key, 0.0) + max(0.0, open_end - start)

    flow_validity = 0.0
    attackers = {a.node for a in config.attackers}
    for f in config.flows:
        for (node, dest), dur in validity.items():
            if dest == f.dst and node not in (f.src, f.dst) and node not in attackers:
                flow_validity += dur

    cumulative = []
    running = 0
    for c in col.drop_per_interval:
        running += c
        cumulative.append(running)

    dropped_total = sum(col.data_drops.values())
    return MetricsReport(
        sim_duration=config.sim_duration,
        config_fingerprint=config.fingerprint(),
        defense_enabled=config.defense_enabled,
        seeds=[config.seed],
        generated=col.generated,
        delivered=col.delivered,
        acked=col.acked,
        avg_end_to_end_delay=_mean(col.delay_sum, col.delivered),
        avg_rtt=_mean(col.rtt_sum, col.acked),
        avg_processing_time=_mean(col.proc_sum, col.proc_count),
        avg_nodes_receiving=_mean(col.recv_total, col.delivered),
        avg_nodes_forwarding=_mean(col.fwd_total, col.delivered),
        pairwise_delays={f"{s}->{d}": v[0] / v[1]
                         for (s, d), v in sorted(col.pair_delay.items())},
        dropped_total=dropped_total,
        dropped_by_reason=dict(sorted(col.data_drops.items())),
        control_dropped_by_reason=dict(sorted(col.control_drops.items())),
        control_sent=dict(sorted(col.control_sent.items())),
        dropped_cumulative_series=cumulative,
        throughput_series={
            k: {"bits": [c[0] for c in col.series[k]], "packets": [c[1] for c in col.series[k]]}
            for k in THROUGHPUT_KINDS
        },
        throughput_per_node={
            k: {str(n): list(row) for n, row in sorted(col.per_node[k].items())}
            for k in THROUGHPUT_KINDS
        },
        route_validity={f"{n}->{d}": v for (n, d), v in sorted(validity.items())},
        flow_route_validity=flow_validity,
        flow_counts={str(f): dict(sorted(c.items())) for f, c in sorted(col.flow_counts.items())},
        screen_decisions=dict(sorted(col.screen_counts.items())),
        blacklist_events=list(col.blacklists),
        unblocks=col.unblocks,
        rtt_samples=[[t, r] for t, r in col.rtt_samples],
    )


# -- multi-seed aggregation ----------------------------------------------------

def _avg_opt(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def _avg_list(rows: Sequence[Sequence[float]]) -> List[float]:
    return [sum(col) / len(rows) for col in zip(*rows)]


def _avg_map(maps: Sequence[Dict[str, float]], missing_as_zero: bool = True) -> Dict[str, float]:
    keys = sorted(set().union(*maps))
    out = {}
    for k in keys:
        vals = [m[k] for m in maps if k in m]
        out[k] = sum(vals) / (len(maps) if missing_as_zero else len(vals))
    return out


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Arithmetic mean over seeds of every scalar and series."""
    if not reports:
        raise ValueError("need at least one report")
    if len({r.config_fingerprint for r in reports}) != 1 or \
            len({r.defense_enabled for r in reports}) != 1:
        raise ValueError("reports come from different configurations")
    if len(reports) == 1:
        return reports[0]
    first = reports[0]
    n = len(reports)

    def avg(name):
        return sum(getattr(r, name) for r in reports) / n

    kinds = THROUGHPUT_KINDS
    return MetricsReport(
        sim_duration=first.sim_duration,
        config_fingerprint=first.config_fingerprint,
        defense_enabled=first.defense_enabled,
        seeds=[s for r in reports for s in r.seeds],
        generated=avg("generated"),
        delivered=avg("delivered"),
        acked=avg("acked"),
        avg_end_to_end_delay=_avg_opt([r.avg_end_to_end_delay for r in reports]),
        avg_rtt=_avg_opt([r.avg_rtt for r in reports]),
        avg_processing_time=_avg_opt([r.avg_processing_time for r in reports]),
        avg_nodes_receiving=_avg_opt([r.avg_nodes_receiving for r in reports]),
        avg_nodes_forwarding=_avg_opt([r.avg_nodes_forwarding for r in reports]),
        pairwise_delays=_avg_map([r.pairwise_delays for r in reports], missing_as_zero=False),
        dropped_total=avg("dropped_total"),
        dropped_by_reason=_avg_map([r.dropped_by_reason for r in reports]),
        control_dropped_by_reason=_avg_map([r.control_dropped_by_reason for r in reports]),
        control_sent=_avg_map([r.control_sent for r in reports]),
        dropped_cumulative_series=_avg_list([r.dropped_cumulative_series for r in reports]),
        throughput_series={
            k: {u: _avg_list([r.throughput_series[k][u] for r in reports])
                for u in ("bits", "packets")}
            for k in kinds
        },
        throughput_per_node={},
        route_validity=_avg_map([r.route_validity for r in reports]),
        flow_route_validity=avg("flow_route_validity"),
        flow_counts={},
        screen_decisions=_avg_map([r.screen_decisions for r in reports]),
        blacklist_events=[],
        unblocks=avg("unblocks"),
        rtt_samples=[],
    )


# -- comparison ----------------------------------------------------------------

SCALAR_ROWS = (
    ("avg_end_to_end_delay", "Average End-to-end delay [sec]"),
    ("avg_nodes_receiving", "Receiving packets"),
    ("avg_nodes_forwarding", "Forwarding packets"),
    ("avg_rtt", "Average RTT [sec]"),
    ("avg_processing_time", "Average processing time [sec]"),
    ("dropped_total", "Dropped data packets"),
    ("delivered", "Delivered data packets"),
    ("generated", "Generated data packets"),
    ("flow_route_validity", "Route validity on flows [sec]"),
)


@dataclass
class ComparisonTable:
    rows: List[Tuple[str, str, Optional[float], Optional[float], Optional[float]]]
    series: Dict[str, Dict[str, List[float]]]

    def delta(self, key: str) -> Optional[float]:
        for k, _, _, _, d in self.rows:
            if k == key:
                return d
        raise KeyError(key)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": [{"metric": k, "label": lbl, "original": o, "proposed": p, "delta": d}
                     for k, lbl, o, p, d in self.rows],
            "series": self.series,
        }

    def render(self) -> str:
        def fmt(v):
            if v is None:
                return "n/a"
            if float(v).is_integer() and abs(v) >= 1:
                return f"{v:.0f}"
            return f"{v:.5f}"

        header = ("", "Original AODV", "Proposed AODV", "Delta")
        body = [(lbl, fmt(o), fmt(p), fmt(d)) for _, lbl, o, p, d in self.rows]
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(4)]
        lines = []
        for r in [header, *body]:
            lines.append("  ".join([r[0].ljust(widths[0])] +
                                   [r[i].rjust(widths[i]) for i in (1, 2, 3)]).rstrip())
        return "\n".join(lines) + "\n"


def _diff(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None or b is None:
        return None
    return b - a


def compare(original: MetricsReport, proposed: MetricsReport) -> ComparisonTable:
    """Side-by-side values with deltas (proposed minus original)."""
    if original.config_fingerprint != proposed.config_fingerprint:
        raise ValueError("reports come from different scenarios")
    if sorted(original.seeds) != sorted(proposed.seeds):
        raise ValueError("reports cover different seeds")
    rows = []
    for key, label in SCALAR_ROWS:
        o, p = getattr(original, key), getattr(proposed, key)
        rows.append((key, label, o, p, _diff(o, p)))
    o_series, p_series = original.series_tables(), proposed.series_tables()
    series = {
        name: {
            "original": o_series[name],
            "proposed": p_series[name],
            "delta": [b - a for a, b in zip(o_series[name], p_series[name])],
        }
        for name in o_series
    }
    return ComparisonTable(rows, series)


def series_csv(values: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["interval_start", "value"])
    for k, v in enumerate(values):
        w.writerow([k, v])
    return buf.getvalue()


def write_series(report: MetricsReport, directory: Path) -> List[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for stem, values in report.series_tables().items():
        path = directory / f"{stem}.csv"
        path.write_text(series_csv(values))
        written.append(path)
    return written
