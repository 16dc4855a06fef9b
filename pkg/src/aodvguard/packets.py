"""In-memory AODV message values and sequence-number arithmetic."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

SEQ_MODULUS = 1 << 32


def seq_incr(seq: int) -> int:
    return (seq + 1) % SEQ_MODULUS


def seq_cmp(a: int, b: int) -> int:
    """Compare two 32-bit sequence numbers with wraparound.

    Returns a negative number if ``a`` is older than ``b``, zero if equal,
    positive if ``a`` is newer. The wrapped difference is interpreted as a
    signed 32-bit integer, so 0 is newer than 0xFFFFFFFF.
    """
    diff = (a - b) % SEQ_MODULUS
    if diff >= SEQ_MODULUS // 2:
        diff -= SEQ_MODULUS
    return diff


def seq_newer(a: int, b: int) -> bool:
    return seq_cmp(a, b) > 0


@dataclass(frozen=True)
class RouteRequest:
    origin: int
    origin_seq: int
    rreq_id: int
    dest: int
    dest_seq: Optional[int]  # None: unknown sequence number
    hop_count: int
    ttl: int

    def rebroadcast(self) -> "RouteRequest":
        return replace(self, hop_count=self.hop_count + 1, ttl=self.ttl - 1)


@dataclass(frozen=True)
class RouteReply:
    dest: int
    dest_seq: int
    origin: int
    hop_count: int
    lifetime: float


@dataclass(frozen=True)
class RouteError:
    unreachable: Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class Data:
    src: int
    dst: int
    flow_id: int
    seq: int
    size_bytes: int
    sent_at: float

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError("Data.size_bytes must be positive")


@dataclass(frozen=True)
class Ack:
    for_flow: int
    for_seq: int
    src: int  # the data destination, which emits the ack
    dst: int  # the data source, which consumes it
    data_sent_at: float


Packet = Union[RouteRequest, RouteReply, RouteError, Data, Ack]

ACK_SIZE_BYTES = 40
CONTROL_SIZE_BYTES = {RouteRequest: 24, RouteReply: 20, RouteError: 12}


def packet_size(pkt: Packet) -> int:
    if isinstance(pkt, Data):
        return pkt.size_bytes
    if isinstance(pkt, Ack):
        return ACK_SIZE_BYTES
    return CONTROL_SIZE_BYTES[type(pkt)]
