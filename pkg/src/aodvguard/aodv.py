"""Per-node AODV state machine (an RFC 3561 subset).

Every handler is synchronous and returns the action taken together with the
transmissions the node wants to make. The simulation kernel owns timing and
the radio; this module owns routing state only.
"""

from __future__ import annotations

import enum
from collections import OrderedDict, deque
from dataclasses import dataclass
from typing import Callable, Deque, Dict, List, Optional, Tuple

from .floodguard import NeighborLedger
from .packets import (
    Ack,
    Data,
    Packet,
    RouteError,
    RouteReply,
    RouteRequest,
    seq_cmp,
    seq_incr,
    seq_newer,
)


@dataclass(frozen=True)
class AodvParams:
    route_lifetime: float = 3.0
    dedup_horizon: float = 3.0
    buffer_capacity: int = 64
    buffer_timeout: float = 1.5
    rreq_ratelimit: int = 10
    rreq_ttl: int = 35
    discovery_timeout: float = 0.5
    rreq_retries: int = 2

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class Send:
    """One transmission request. ``next_hop`` None means broadcast."""

    pkt: Packet
    next_hop: Optional[int] = None


class RreqAction(enum.Enum):
    DUPLICATE_DROPPED = "DuplicateDropped"
    REPLIED_AS_DESTINATION = "RepliedAsDestination"
    REPLIED_FROM_CACHE = "RepliedFromCache"
    REBROADCAST = "Rebroadcast"
    TTL_EXPIRED = "TtlExpired"
    RATE_LIMITED = "RateLimited"
    MALFORMED = "Malformed"


class RrepAction(enum.Enum):
    CONSUMED = "Consumed"
    FORWARDED = "Forwarded"
    STALE = "Stale"
    NO_REVERSE_ROUTE = "NoReverseRoute"


class ForwardAction(enum.Enum):
    DELIVERED = "Delivered"
    FORWARDED = "Forwarded"
    BUFFERED = "Buffered"
    DROPPED_NO_ROUTE = "DroppedNoRoute"
    DROPPED_BUFFER_FULL = "DroppedBufferFull"
    DROPPED_BUFFER_TIMEOUT = "DroppedBufferTimeout"


@dataclass
class RouteEntry:
    dest: int
    next_hop: int
    hop_count: int
    dest_seq: Optional[int]
    valid: bool
    expires_at: float

    def usable(self, now: float) -> bool:
        return self.valid and self.expires_at > now


class SelfRateLimiter:
    """Caps the RREQs a node originates or forwards per sliding window."""

    def __init__(self, limit_per_second: int = 10, window: float = 1.0, enabled: bool = True):
        self.limit_per_second = limit_per_second
        self.window_length = window
        self.enabled = enabled
        self.window: Deque[float] = deque()

    def _prune(self, now: float) -> None:
        while self.window and self.window[0] + self.window_length <= now:
            self.window.popleft()

    def permits(self, now: float) -> bool:
        if not self.enabled:
            return True
        self._prune(now)
        return len(self.window) < self.limit_per_second

    def record(self, now: float) -> None:
        self.window.append(now)

    def next_free(self, now: float) -> float:
        """Earliest time at which one more RREQ would be permitted."""
        self._prune(now)
        if len(self.window) < self.limit_per_second:
            return now
        return self.window[len(self.window) - self.limit_per_second] + self.window_length


@dataclass
class Buffered:
    pkt: Data
    enqueued_at: float


RouteHook = Callable[[str, int, int, float], None]


def _no_hook(kind: str, node: int, dest: int, now: float) -> None:
    pass


class RoutingTable:
    def __init__(self, owner: int, hook: RouteHook = _no_hook):
        self.owner = owner
        self.entries: Dict[int, RouteEntry] = {}
        self.rreq_seen: "OrderedDict[Tuple[int, int], float]" = OrderedDict()
        self.pending_buffer: Dict[int, Deque[Buffered]] = {}
        self._hook = hook

    def lookup(self, dest: int, now: float) -> Optional[RouteEntry]:
        entry = self.entries.get(dest)
        if entry is not None and entry.usable(now):
            return entry
        return None

    def update(
        self, dest: int, next_hop: int, hop_count: int, dest_seq: Optional[int],
        expires_at: float, now: float,
    ) -> bool:
        """Install or improve the route to ``dest``; returns True if changed.

        A candidate wins over a usable incumbent only with a fresher sequence
        number, or the same one and fewer hops. Ties keep the incumbent, but
        its lifetime is still extended.
        """
        entry = self.entries.get(dest)
        if entry is not None and entry.usable(now):
            better = False
            if dest_seq is not None:
                if entry.dest_seq is None or seq_newer(dest_seq, entry.dest_seq):
                    better = True
                elif dest_seq == entry.dest_seq and hop_count < entry.hop_count:
                    better = True
            if not better:
                if next_hop == entry.next_hop and dest_seq == entry.dest_seq:
                    entry.expires_at = max(entry.expires_at, expires_at)
                return False
            entry.next_hop = next_hop
            entry.hop_count = hop_count
            entry.dest_seq = dest_seq
            entry.expires_at = max(entry.expires_at, expires_at)
            return True
        if entry is not None and dest_seq is not None and entry.dest_seq is not None \
                and seq_newer(entry.dest_seq, dest_seq):
            # invalid entry still remembers a fresher seq; stale info is refused
            return False
        self.entries[dest] = RouteEntry(dest, next_hop, hop_count, dest_seq, True, expires_at)
        self._hook("RouteInstalled", self.owner, dest, now)
        return True

    def refresh(self, dest: int, expires_at: float, now: float) -> None:
        entry = self.lookup(dest, now)
        if entry is not None and entry.expires_at < expires_at:
            entry.expires_at = expires_at

    def invalidate(self, dest: int, now: float) -> None:
        entry = self.entries[dest]
        if entry.valid:
            entry.valid = False
            self._hook("RouteInvalidated", self.owner, dest, now)

    def prune_seen(self, now: float, horizon: float) -> None:
        cutoff = now - horizon
        while self.rreq_seen:
            key, stamp = next(iter(self.rreq_seen.items()))
            if stamp > cutoff:
                break
            self.rreq_seen.popitem(last=False)

    def buffer_len(self) -> int:
        return sum(len(q) for q in self.pending_buffer.values())


class AodvNode:
    def __init__(
        self,
        node_id: int,
        params: AodvParams = AodvParams(),
        malicious: bool = False,
        route_hook: RouteHook = _no_hook,
    ):
        self.id = node_id
        self.params = params
        self.malicious = malicious
        self.table = RoutingTable(node_id, route_hook)
        self.limiter = SelfRateLimiter(params.rreq_ratelimit, enabled=not malicious)
        self.ledger = NeighborLedger()
        self.own_seq = 0
        self.next_rreq_id = 0
        self.discoveries: Dict[int, int] = {}  # dest -> active discovery token
        self.rerr_seen: set = set()

    # -- route discovery ----------------------------------------------------

    def originate_rreq(self, dest: int, now: float) -> Tuple[List[Send], Optional[float]]:
        """Start (or retry) a discovery for ``dest``.

        Returns the transmissions and, when the self rate limiter blocked the
        attempt, the time at which it should be retried.
        """
        if not self.limiter.permits(now):
            return [], self.limiter.next_free(now)
        self.limiter.record(now)
        self.own_seq = seq_incr(self.own_seq)
        rreq_id = self.next_rreq_id
        self.next_rreq_id += 1
        known = self.table.entries.get(dest)
        rreq = RouteRequest(
            origin=self.id,
            origin_seq=self.own_seq,
            rreq_id=rreq_id,
            dest=dest,
            dest_seq=known.dest_seq if known is not None else None,
            hop_count=0,
            ttl=self.params.rreq_ttl,
        )
        self.table.rreq_seen[(self.id, rreq_id)] = now
        return [Send(rreq)], None

    def flood_rreq(self, dest: int, now: float) -> Send:
        """Emit a RREQ with no rate limit check, as a compromised node does."""
        self.limiter.record(now)
        self.own_seq = seq_incr(self.own_seq)
        rreq_id = self.next_rreq_id
        self.next_rreq_id += 1
        self.table.rreq_seen[(self.id, rreq_id)] = now
        return Send(RouteRequest(self.id, self.own_seq, rreq_id, dest, None, 0, self.params.rreq_ttl))

    def process_rreq(
        self, rreq: RouteRequest, sender: int, now: float
    ) -> Tuple[RreqAction, List[Send]]:
        if rreq.dest == rreq.origin or rreq.ttl < 0 or rreq.hop_count < 0:
            return RreqAction.MALFORMED, []
        key = (rreq.origin, rreq.rreq_id)
        stamp = self.table.rreq_seen.get(key)
        if rreq.origin == self.id or (
            stamp is not None and now - stamp < self.params.dedup_horizon
        ):
            return RreqAction.DUPLICATE_DROPPED, []
        self.table.rreq_seen.pop(key, None)
        self.table.rreq_seen[key] = now

        hops_to_origin = rreq.hop_count + 1
        self.table.update(
            rreq.origin, sender, hops_to_origin, rreq.origin_seq,
            now + self.params.route_lifetime, now,
        )

        if rreq.dest == self.id:
            if rreq.dest_seq is not None and seq_newer(rreq.dest_seq, self.own_seq):
                self.own_seq = rreq.dest_seq
            rrep = RouteReply(self.id, self.own_seq, rreq.origin, 0, self.params.route_lifetime)
            return RreqAction.REPLIED_AS_DESTINATION, [Send(rrep, sender)]

        cached = self.table.lookup(rreq.dest, now)
        if cached is not None and cached.dest_seq is not None and (
            rreq.dest_seq is None or seq_cmp(cached.dest_seq, rreq.dest_seq) >= 0
        ):
            rrep = RouteReply(
                rreq.dest, cached.dest_seq, rreq.origin, cached.hop_count,
                cached.expires_at - now,
            )
            return RreqAction.REPLIED_FROM_CACHE, [Send(rrep, sender)]

        if rreq.ttl <= 0:
            return RreqAction.TTL_EXPIRED, []
        if not self.limiter.permits(now):
            return RreqAction.RATE_LIMITED, []
        self.limiter.record(now)
        return RreqAction.REBROADCAST, [Send(rreq.rebroadcast())]

    def process_rrep(
        self, rrep: RouteReply, sender: int, now: float
    ) -> Tuple[RrepAction, List[Send]]:
        entry = self.table.entries.get(rrep.dest)
        if entry is not None and entry.dest_seq is not None and \
                seq_cmp(rrep.dest_seq, entry.dest_seq) < 0:
            return RrepAction.STALE, []
        self.table.update(
            rrep.dest, sender, rrep.hop_count + 1, rrep.dest_seq,
            now + rrep.lifetime, now,
        )
        if rrep.origin == self.id:
            self.discoveries.pop(rrep.dest, None)
            return RrepAction.CONSUMED, self.flush_buffer(rrep.dest, now)
        back = self.table.lookup(rrep.origin, now)
        if back is None:
            return RrepAction.NO_REVERSE_ROUTE, []
        self.table.refresh(rrep.origin, now + self.params.route_lifetime, now)
        fwd = RouteReply(rrep.dest, rrep.dest_seq, rrep.origin, rrep.hop_count + 1, rrep.lifetime)
        return RrepAction.FORWARDED, [Send(fwd, back.next_hop)]

    # -- data plane ---------------------------------------------------------

    def flush_buffer(self, dest: int, now: float) -> List[Send]:
        route = self.table.lookup(dest, now)
        queue = self.table.pending_buffer.get(dest)
        if route is None or not queue:
            return []
        sends = [Send(item.pkt, route.next_hop) for item in queue]
        queue.clear()
        self.table.refresh(dest, now + self.params.route_lifetime, now)
        return sends

    def forward_data(
        self, pkt: Data, now: float, sender: Optional[int] = None
    ) -> Tuple[ForwardAction, List[Send]]:
        """Handle a data packet generated here (``sender`` None) or received."""
        if pkt.dst == self.id:
            back = self.table.lookup(pkt.src, now)
            if back is None:
                return ForwardAction.DELIVERED, []
            self.table.refresh(pkt.src, now + self.params.route_lifetime, now)
            ack = Ack(pkt.flow_id, pkt.seq, self.id, pkt.src, pkt.sent_at)
            return ForwardAction.DELIVERED, [Send(ack, back.next_hop)]

        route = self.table.lookup(pkt.dst, now)
        if route is not None:
            expiry = now + self.params.route_lifetime
            self.table.refresh(pkt.dst, expiry, now)
            self.table.refresh(pkt.src, expiry, now)
            return ForwardAction.FORWARDED, [Send(pkt, route.next_hop)]

        if pkt.src != self.id:
            return ForwardAction.DROPPED_NO_ROUTE, []
        if self.table.buffer_len() >= self.params.buffer_capacity:
            return ForwardAction.DROPPED_BUFFER_FULL, []
        self.table.pending_buffer.setdefault(pkt.dst, deque()).append(Buffered(pkt, now))
        return ForwardAction.BUFFERED, []

    def expire_buffer(self, now: float) -> List[Data]:
        """Remove and return packets that have waited ``buffer_timeout`` or longer."""
        dropped = []
        for dest in sorted(self.table.pending_buffer):
            queue = self.table.pending_buffer[dest]
            while queue and queue[0].enqueued_at + self.params.buffer_timeout <= now:
                dropped.append(queue.popleft().pkt)
        return dropped

    def forward_ack(self, ack: Ack, now: float) -> Optional[Send]:
        route = self.table.lookup(ack.dst, now)
        if route is None:
            return None
        expiry = now + self.params.route_lifetime
        self.table.refresh(ack.dst, expiry, now)
        self.table.refresh(ack.src, expiry, now)
        return Send(ack, route.next_hop)

    # -- maintenance --------------------------------------------------------

    def expire_routes(self, now: float) -> int:
        count = 0
        for dest in sorted(self.table.entries):
            entry = self.table.entries[dest]
            if entry.valid and entry.expires_at <= now:
                self.table.invalidate(dest, now)
                count += 1
        return count

    def emit_and_process_rerr(self, broken_next_hop: int, now: float) -> List[Send]:
        """Invalidate every route through ``broken_next_hop`` and announce it once."""
        lost = []
        for dest in sorted(self.table.entries):
            entry = self.table.entries[dest]
            if entry.valid and entry.next_hop == broken_next_hop:
                if entry.dest_seq is not None:
                    entry.dest_seq = seq_incr(entry.dest_seq)
                self.table.invalidate(dest, now)
                lost.append((dest, entry.dest_seq if entry.dest_seq is not None else 0))
        lost = [item for item in lost if item not in self.rerr_seen]
        if not lost:
            return []
        self.rerr_seen.update(lost)
        return [Send(RouteError(tuple(lost)))]

    def process_rerr(self, rerr: RouteError, sender: int, now: float) -> List[Send]:
        """Drop routes the error names, unless ours is fresher; re-announce once."""
        lost = []
        for dest, seq in rerr.unreachable:
            entry = self.table.entries.get(dest)
            if entry is None or not entry.valid or entry.next_hop != sender:
                continue
            if entry.dest_seq is not None and seq_newer(entry.dest_seq, seq):
                continue
            entry.dest_seq = seq
            self.table.invalidate(dest, now)
            if (dest, seq) not in self.rerr_seen:
                lost.append((dest, seq))
        if not lost:
            return []
        self.rerr_seen.update(lost)
        return [Send(RouteError(tuple(lost)))]
