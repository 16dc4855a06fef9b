"""Neighbor-enforced RREQ flood screening.

Every node keeps a ledger of the route requests each neighbor has sent it.
A neighbor may have at most ``accept_limit`` requests processed per
sliding window; anything above that is dropped but still timestamped.
When the total count in the window (accepted plus dropped) goes above
``blacklist_limit`` the neighbor is blacklisted, and each repeat offense
doubles the blacklist duration.

Windows are half-open: a timestamp ``t`` is inside the window at ``now``
iff ``t <= now < t + window``.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional


@dataclass(frozen=True)
class DefenseParams:
    accept_limit: int = 3
    blacklist_limit: int = 10
    base_blacklist_timeout: float = 5.0
    window: float = 1.0
    strict_mode: bool = False

    def __post_init__(self):
        for name in ("accept_limit", "blacklist_limit", "base_blacklist_timeout", "window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.accept_limit >= self.blacklist_limit:
            raise ValueError(
                f"accept_limit < blacklist_limit violated "
                f"({self.accept_limit} >= {self.blacklist_limit})"
            )


class Screen(enum.Enum):
    ACCEPT = "Accept"
    DROP_OVER_ACCEPT_LIMIT = "DropOverAcceptLimit"
    DROP_BLACKLISTED = "DropBlacklisted"
    DROP_AND_BLACKLIST = "DropAndBlacklist"


@dataclass(frozen=True)
class ScreenDecision:
    kind: Screen
    until: Optional[float] = None
    offense: Optional[int] = None

    @property
    def accepted(self) -> bool:
        return self.kind is Screen.ACCEPT


ACCEPT = ScreenDecision(Screen.ACCEPT)
DROP_OVER_ACCEPT_LIMIT = ScreenDecision(Screen.DROP_OVER_ACCEPT_LIMIT)
DROP_BLACKLISTED = ScreenDecision(Screen.DROP_BLACKLISTED)


@dataclass
class NeighborRecord:
    rreq_timestamps: Deque[float] = field(default_factory=deque)
    accepted_timestamps: Deque[float] = field(default_factory=deque)
    offense_count: int = 0
    blacklisted_until: Optional[float] = None

    def is_blacklisted(self, now: float) -> bool:
        return self.blacklisted_until is not None and self.blacklisted_until > now


class NeighborLedger:
    """One observer's view of its neighbors. Never shared between nodes."""

    def __init__(self):
        self.records: Dict[int, NeighborRecord] = {}

    def record(self, neighbor: int) -> NeighborRecord:
        rec = self.records.get(neighbor)
        if rec is None:
            rec = self.records[neighbor] = NeighborRecord()
        return rec

    def is_blacklisted(self, neighbor: int, now: float) -> bool:
        rec = self.records.get(neighbor)
        return rec is not None and rec.is_blacklisted(now)

    def blacklisted(self, now: float) -> List[int]:
        return sorted(n for n, rec in self.records.items() if rec.is_blacklisted(now))


def offense_timeout(offense: int, params: DefenseParams) -> float:
    """Blacklist duration for the ``offense``-th offense (1-based)."""
    if offense < 1:
        raise ValueError(f"offense must be >= 1, got {offense}")
    return params.base_blacklist_timeout * 2.0 ** (offense - 1)


def _prune(stamps: Deque[float], now: float, window: float) -> None:
    while stamps and stamps[0] + window <= now:
        stamps.popleft()


def prune_record(rec: NeighborRecord, now: float, window: float) -> None:
    _prune(rec.rreq_timestamps, now, window)
    _prune(rec.accepted_timestamps, now, window)


def prune_ledger(ledger: NeighborLedger, now: float, window: float = 1.0) -> None:
    for rec in ledger.records.values():
        prune_record(rec, now, window)


def screen_rreq(
    ledger: NeighborLedger, neighbor: int, now: float, params: DefenseParams
) -> ScreenDecision:
    """Decide what to do with one RREQ received from ``neighbor`` at ``now``.

    Must be called with non-decreasing ``now`` for a given ledger.
    """
    rec = ledger.record(neighbor)
    rec.rreq_timestamps.append(now)
    prune_record(rec, now, params.window)

    if rec.is_blacklisted(now):
        return DROP_BLACKLISTED
    if len(rec.rreq_timestamps) > params.blacklist_limit:
        rec.offense_count += 1
        until = now + offense_timeout(rec.offense_count, params)
        rec.blacklisted_until = until
        return ScreenDecision(Screen.DROP_AND_BLACKLIST, until=until, offense=rec.offense_count)
    if len(rec.accepted_timestamps) >= params.accept_limit:
        return DROP_OVER_ACCEPT_LIMIT
    rec.accepted_timestamps.append(now)
    return ACCEPT


def tick_blacklists(ledger: NeighborLedger, now: float) -> List[int]:
    """Clear every blacklist whose expiry is at or before ``now``.

    Offense counts are kept so the next offense doubles again.
    """
    unblocked = []
    for neighbor in sorted(ledger.records):
        rec = ledger.records[neighbor]
        if rec.blacklisted_until is not None and rec.blacklisted_until <= now:
            rec.blacklisted_until = None
            unblocked.append(neighbor)
    return unblocked
