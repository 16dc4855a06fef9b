"""Deterministic discrete-event engine.

The MAC is a single-server FIFO transmit queue per node: a packet handed to
the radio departs ``1 / service_rate`` seconds after the previous departure
(or after now, if idle), and reaches receivers ``per_hop_latency`` later.
A full queue drops the packet, which is how floods congest the network.
"""

from __future__ import annotations

import heapq
import itertools
import random
from collections import deque
from typing import Any, Deque, Dict, List, Optional, Tuple

from . import floodguard
from .aodv import AodvNode, ForwardAction, RreqAction, RrepAction, Send
from .floodguard import screen_rreq
from .metrics import (
    ACK_RECEIVED, CONTROL_DROPPED, CONTROL_SENT, DROPPED, FORWARDED, RECEIVED,
    SCREEN, SENT, UNBLOCKED, Collector, MetricEvent, MetricsReport, finalize,
)
from .packets import Ack, Data, RouteError, RouteReply, RouteRequest
from .scenario import ScenarioConfig, background_flows, place_nodes, validate

# event kinds
PACKET_DELIVERY = "PacketDelivery"
FLOW_TICK = "FlowTick"
ATTACKER_TICK = "AttackerTick"
ROUTE_SWEEP = "RouteSweep"
BUFFER_SWEEP = "BufferSweep"
BLACKLIST_SWEEP = "BlacklistSweep"
DISCOVERY = "Discovery"
SIM_END = "SimEnd"

MAC_QUEUE_OVERFLOW = "MacQueueOverflow"


class EventQueue:
    """Min-heap of (time, insertion counter, kind, payload)."""

    def __init__(self):
        self._heap: List[Tuple[float, int, str, Any]] = []
        self._counter = itertools.count()

    def push(self, time: float, kind: str, payload: Any = None) -> None:
        heapq.heappush(self._heap, (time, next(self._counter), kind, payload))

    def pop(self) -> Tuple[float, int, str, Any]:
        return heapq.heappop(self._heap)

    def __len__(self) -> int:
        return len(self._heap)


class TxQueue:
    def __init__(self, service_rate: float, capacity: int):
        self.service_time = 1.0 / service_rate
        self.capacity = capacity
        self.departures: Deque[float] = deque()
        self.busy_until = 0.0

    def enqueue(self, now: float) -> Optional[float]:
        """Departure time of a packet queued at ``now``, or None if full."""
        while self.departures and self.departures[0] <= now:
            self.departures.popleft()
        if len(self.departures) >= self.capacity:
            return None
        depart = max(now, self.busy_until) + self.service_time
        self.busy_until = depart
        self.departures.append(depart)
        return depart


def neighbor_sets(positions, radio_range: float) -> List[List[int]]:
    r2 = radio_range * radio_range
    n = len(positions)
    nbrs: List[List[int]] = [[] for _ in range(n)]
    for i in range(n):
        xi, yi = positions[i]
        for j in range(i + 1, n):
            dx, dy = xi - positions[j][0], yi - positions[j][1]
            if dx * dx + dy * dy <= r2:
                nbrs[i].append(j)
                nbrs[j].append(i)
    return nbrs


class World:
    def __init__(self, config: ScenarioConfig, keep_log: bool = False):
        self.config = config
        self.rng = random.Random(config.seed)
        self.positions = place_nodes(config, self.rng)
        self.neighbors = neighbor_sets(self.positions, config.radio_range)
        self._neighbor_set = [set(ns) for ns in self.neighbors]
        self.flows = list(config.flows) + background_flows(config, self.rng)
        self.attackers = list(config.attackers)
        attacker_ids = {a.node for a in self.attackers}
        self.collector = Collector(config.sim_duration, keep_log=keep_log)
        self.nodes = [
            AodvNode(i, config.aodv, malicious=i in attacker_ids, route_hook=self._route_hook)
            for i in range(config.node_count)
        ]
        self.queues = [TxQueue(config.queue.service_rate, config.queue.capacity)
                       for _ in range(config.node_count)]
        self.events = EventQueue()
        self.now = 0.0
        self.live: Dict[Tuple[int, int], Data] = {}
        self.finished = False
        self.tokens = itertools.count()

    # -- bookkeeping ------------------------------------------------------

    def emit(self, kind: str, node: int, **kw) -> None:
        self.collector.record(MetricEvent(self.now, kind, node, **kw))

    def _route_hook(self, kind: str, node: int, dest: int, now: float) -> None:
        self.collector.record(MetricEvent(now, kind, node, peer=dest))

    def drop_data(self, node: int, pkt: Data, reason: str) -> None:
        self.live.pop((pkt.flow_id, pkt.seq), None)
        self.emit(DROPPED, node, flow=pkt.flow_id, seq=pkt.seq, src=pkt.src,
                  dst=pkt.dst, size=pkt.size_bytes, reason=reason)

    def drop_control(self, node: int, pkt, reason: str) -> None:
        self.emit(CONTROL_DROPPED, node, reason=f"{type(pkt).__name__}:{reason}")

    def drop_ack(self, node: int, reason: str) -> None:
        self.emit(CONTROL_DROPPED, node, reason=f"Ack:{reason}")

    def in_flight(self) -> Dict[int, int]:
        counts: Dict[int, int] = {}
        for flow, _ in self.live:
            counts[flow] = counts.get(flow, 0) + 1
        return counts

    def is_neighbor(self, a: int, b: int) -> bool:
        return b in self._neighbor_set[a]


def build_scenario(config: ScenarioConfig, keep_log: bool = False) -> World:
    validate(config)
    world = World(config, keep_log=keep_log)
    ev = world.events
    for i, flow in enumerate(world.flows):
        ev.push(flow.start, FLOW_TICK, (i, 0))
    for i, profile in enumerate(world.attackers):
        ev.push(profile.start, ATTACKER_TICK, (i, 0))
    step = config.sweep_interval
    ev.push(step, ROUTE_SWEEP, 1)
    if config.defense_enabled:
        ev.push(step, BLACKLIST_SWEEP, 1)
    ev.push(config.sim_duration, SIM_END)
    return world


# -- radio ----------------------------------------------------------------

def transmit(world: World, sender: int, send: Send, now: float) -> Optional[float]:
    """Queue one packet on ``sender``'s radio; returns its departure or None."""
    pkt = send.pkt
    depart = world.queues[sender].enqueue(now)
    if depart is None:
        if isinstance(pkt, Data):
            world.drop_data(sender, pkt, MAC_QUEUE_OVERFLOW)
            if send.next_hop is not None:
                for rerr in world.nodes[sender].emit_and_process_rerr(send.next_hop, now):
                    transmit(world, sender, rerr, now)
        else:
            world.drop_control(sender, pkt, MAC_QUEUE_OVERFLOW)
        return None
    arrive = depart + world.config.queue.per_hop_latency
    if isinstance(pkt, Data):
        world.emit(FORWARDED, sender, flow=pkt.flow_id, seq=pkt.seq, src=pkt.src,
                   dst=pkt.dst, size=pkt.size_bytes, stamp=depart)
    elif not isinstance(pkt, Ack):
        origin = pkt.origin if isinstance(pkt, RouteRequest) else None
        world.emit(CONTROL_SENT, sender, reason=type(pkt).__name__, peer=origin,
                   seq=pkt.rreq_id if origin is not None else None, stamp=depart)
    if send.next_hop is None:
        for nbr in world.neighbors[sender]:
            world.events.push(arrive, PACKET_DELIVERY, (nbr, sender, pkt))
    else:
        world.events.push(arrive, PACKET_DELIVERY, (send.next_hop, sender, pkt))
    return depart


def broadcast(world: World, sender: int, pkt, now: float) -> Optional[float]:
    return transmit(world, sender, Send(pkt), now)


def _send_all(world: World, node: int, sends: List[Send], now: float) -> None:
    for s in sends:
        transmit(world, node, s, now)


# -- discovery --------------------------------------------------------------

def _discover(world: World, node_id: int, dest: int, now: float,
              attempt: int, token: int) -> None:
    node = world.nodes[node_id]
    sends, retry_at = node.originate_rreq(dest, now)
    if retry_at is not None:
        # blocked by the self rate limiter: try again when the window frees
        world.events.push(retry_at, DISCOVERY, (node_id, dest, attempt, token))
        return
    _send_all(world, node_id, sends, now)
    wait = node.params.discovery_timeout * (2 ** attempt)
    world.events.push(now + wait, DISCOVERY, (node_id, dest, attempt + 1, token))


def start_discovery(world: World, node_id: int, dest: int, now: float) -> None:
    token = next(world.tokens)
    world.nodes[node_id].discoveries[dest] = token
    _discover(world, node_id, dest, now, 0, token)


def _on_discovery(world: World, node_id: int, dest: int, attempt: int, token: int) -> None:
    node = world.nodes[node_id]
    now = world.now
    if node.discoveries.get(dest) != token:
        return  # answered, or superseded by a newer discovery
    if node.table.lookup(dest, now) is not None:
        node.discoveries.pop(dest, None)
        _send_all(world, node_id, node.flush_buffer(dest, now), now)
        return
    if not node.table.pending_buffer.get(dest) or attempt > node.params.rreq_retries:
        node.discoveries.pop(dest, None)
        return
    _discover(world, node_id, dest, now, attempt, token)


def _handle_data_at(world: World, node_id: int, pkt: Data, sender: Optional[int]) -> None:
    node = world.nodes[node_id]
    now = world.now
    action, sends = node.forward_data(pkt, now, sender)
    if action is ForwardAction.DELIVERED:
        world.live.pop((pkt.flow_id, pkt.seq), None)
        _send_all(world, node_id, sends, now)
        if not sends:
            world.drop_ack(node_id, "NoRoute")
    elif action is ForwardAction.FORWARDED:
        _send_all(world, node_id, sends, now)
    elif action is ForwardAction.BUFFERED:
        deadline = now + node.params.buffer_timeout
        world.events.push(deadline, BUFFER_SWEEP, node_id)
        if pkt.dst not in node.discoveries:
            start_discovery(world, node_id, pkt.dst, now)
    else:
        world.drop_data(node_id, pkt, action.value)


# -- event handlers ---------------------------------------------------------

def flow_tick(world: World, index: int, k: int) -> None:
    flow = world.flows[index]
    now = world.now
    if not flow.start <= now < flow.end:
        return
    pkt = Data(flow.src, flow.dst, index, k, flow.packet_size, now)
    world.live[(index, k)] = pkt
    world.emit(SENT, flow.src, flow=index, seq=k, src=flow.src, dst=flow.dst,
               size=flow.packet_size)
    _handle_data_at(world, flow.src, pkt, None)
    nxt = flow.start + (k + 1) / flow.rate
    if nxt < flow.end:
        world.events.push(nxt, FLOW_TICK, (index, k + 1))


def attacker_tick(world: World, index: int, k: int) -> None:
    profile = world.attackers[index]
    now = world.now
    if not profile.start <= now < profile.end:
        return
    n = world.config.node_count
    if profile.target_mode == "nonexistent":
        dest = n + k  # outside the id space: nobody can ever reply
    else:
        dest = world.rng.choice([i for i in range(n) if i != profile.node])
    send = world.nodes[profile.node].flood_rreq(dest, now)
    transmit(world, profile.node, send, now)
    nxt = profile.start + (k + 1) / profile.flood_rate
    if nxt < profile.end:
        world.events.push(nxt, ATTACKER_TICK, (index, k + 1))


def _screen(world: World, receiver: int, sender: int, now: float) -> bool:
    node = world.nodes[receiver]
    decision = screen_rreq(node.ledger, sender, now, world.config.defense)
    world.emit(SCREEN, receiver, peer=sender, reason=decision.kind.value,
               stamp=decision.until, seq=decision.offense)
    return decision.accepted


def deliver(world: World, receiver: int, sender: int, pkt) -> None:
    node = world.nodes[receiver]
    now = world.now
    cfg = world.config
    if cfg.defense_enabled and cfg.defense.strict_mode and not isinstance(pkt, RouteRequest) \
            and node.ledger.is_blacklisted(sender, now):
        if isinstance(pkt, Data):
            world.drop_data(receiver, pkt, "Blacklisted")
        else:
            world.drop_control(receiver, pkt, "Blacklisted")
        return

    if isinstance(pkt, RouteRequest):
        if cfg.defense_enabled and not node.malicious and not _screen(world, receiver, sender, now):
            return
        action, sends = node.process_rreq(pkt, sender, now)
        if action in (RreqAction.RATE_LIMITED, RreqAction.MALFORMED):
            world.drop_control(receiver, pkt, action.value)
        _send_all(world, receiver, sends, now)
    elif isinstance(pkt, RouteReply):
        action, sends = node.process_rrep(pkt, sender, now)
        if action in (RrepAction.NO_REVERSE_ROUTE, RrepAction.STALE):
            world.drop_control(receiver, pkt, action.value)
        _send_all(world, receiver, sends, now)
    elif isinstance(pkt, RouteError):
        _send_all(world, receiver, node.process_rerr(pkt, sender, now), now)
    elif isinstance(pkt, Data):
        world.emit(RECEIVED, receiver, flow=pkt.flow_id, seq=pkt.seq, src=pkt.src,
                   dst=pkt.dst, size=pkt.size_bytes, stamp=pkt.sent_at, peer=sender)
        _handle_data_at(world, receiver, pkt, sender)
    elif isinstance(pkt, Ack):
        if pkt.dst == receiver:
            world.emit(ACK_RECEIVED, receiver, flow=pkt.for_flow, seq=pkt.for_seq,
                       src=pkt.src, dst=pkt.dst, stamp=pkt.data_sent_at)
            return
        send = node.forward_ack(pkt, now)
        if send is None:
            world.drop_control(receiver, pkt, "NoRoute")
        else:
            transmit(world, receiver, send, now)


def _route_sweep(world: World, k: int) -> None:
    now = world.now
    for node in world.nodes:
        node.expire_routes(now)
        node.table.prune_seen(now, node.params.dedup_horizon)
    nxt = (k + 1) * world.config.sweep_interval
    if nxt < world.config.sim_duration:
        world.events.push(nxt, ROUTE_SWEEP, k + 1)


def _blacklist_sweep(world: World, k: int) -> None:
    now = world.now
    window = world.config.defense.window
    for node in world.nodes:
        for nbr in floodguard.tick_blacklists(node.ledger, now):
            world.emit(UNBLOCKED, node.id, peer=nbr)
        floodguard.prune_ledger(node.ledger, now, window)
    nxt = (k + 1) * world.config.sweep_interval
    if nxt < world.config.sim_duration:
        world.events.push(nxt, BLACKLIST_SWEEP, k + 1)


def _buffer_sweep(world: World, node_id: int) -> None:
    for pkt in world.nodes[node_id].expire_buffer(world.now):
        world.drop_data(node_id, pkt, ForwardAction.DROPPED_BUFFER_TIMEOUT.value)


def step(world: World) -> bool:
    """Process one event; returns False once the simulation has ended."""
    if world.finished:
        return False
    time, _, kind, payload = world.events.pop()
    if time < world.now:
        raise RuntimeError(f"causality violation: {kind} at {time} < {world.now}")
    world.now = time
    if kind == PACKET_DELIVERY:
        deliver(world, *payload)
    elif kind == FLOW_TICK:
        flow_tick(world, *payload)
    elif kind == ATTACKER_TICK:
        attacker_tick(world, *payload)
    elif kind == ROUTE_SWEEP:
        _route_sweep(world, payload)
    elif kind == BLACKLIST_SWEEP:
        _blacklist_sweep(world, payload)
    elif kind == BUFFER_SWEEP:
        _buffer_sweep(world, payload)
    elif kind == DISCOVERY:
        _on_discovery(world, *payload)
    elif kind == SIM_END:
        for node in world.nodes:
            node.expire_routes(time)
        world.finished = True
        return False
    else:
        raise ValueError(f"unknown event kind {kind!r}")
    return True


def run(world: World) -> MetricsReport:
    while step(world):
        pass
    return finalize(world.collector, world.config)


def simulate(config: ScenarioConfig, keep_log: bool = False) -> Tuple[MetricsReport, World]:
    world = build_scenario(config, keep_log=keep_log)
    report = run(world)
    return report, world
