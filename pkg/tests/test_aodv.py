from pathlib import Path

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from aodvguard.aodv import (
    AodvNode, AodvParams, ForwardAction, RouteEntry, RreqAction, RrepAction,
    SelfRateLimiter,
)
from aodvguard.packets import Ack, Data, RouteError, RouteReply, RouteRequest
from oracles import max_sliding_count

FIXTURES = Path(__file__).parent / "fixtures"


def rreq(origin=0, rreq_id=0, dest=9, dest_seq=None, hop_count=0, ttl=5, origin_seq=1):
    return RouteRequest(origin, origin_seq, rreq_id, dest, dest_seq, hop_count, ttl)


def data(src=0, dst=2, seq=0, sent_at=0.0):
    return Data(src, dst, 0, seq, 512, sent_at)


def fill_limiter(node, n, now):
    for i in reversed(range(n)):
        node.limiter.record(now - 0.05 * (i + 1))


# -- originate_rreq -------------------------------------------------------------

def test_originate_under_limit_emits_one_rreq():
    node = AodvNode(3)
    sends, retry = node.originate_rreq(7, 1.0)
    assert retry is None
    assert len(sends) == 1 and sends[0].next_hop is None
    r = sends[0].pkt
    assert (r.origin, r.dest, r.hop_count, r.origin_seq, r.rreq_id) == (3, 7, 0, 1, 0)
    assert list(node.limiter.window) == [1.0]


def test_originate_increments_seq_and_rreq_id():
    node = AodvNode(3)
    node.originate_rreq(7, 1.0)
    r = node.originate_rreq(7, 2.0)[0][0].pkt
    assert (r.origin_seq, r.rreq_id) == (2, 1)


def test_originate_blocked_at_ratelimit_schedules_retry():
    node = AodvNode(3)
    fill_limiter(node, 10, 5.0)  # stamps 4.95 ... 4.50
    sends, retry = node.originate_rreq(7, 5.0)
    assert sends == []
    assert retry == pytest.approx(4.5 + 1.0)


def test_malicious_node_ignores_ratelimit():
    node = AodvNode(0, malicious=True)
    fill_limiter(node, 50, 5.0)
    sends, retry = node.originate_rreq(7, 5.0)
    assert len(sends) == 1 and retry is None


# -- process_rreq ------------------------------------------------------------------

def test_rreq_for_self_replies_with_hop_zero():
    node = AodvNode(9)
    action, sends = node.process_rreq(rreq(dest=9), sender=4, now=1.0)
    assert action is RreqAction.REPLIED_AS_DESTINATION
    (send,) = sends
    assert isinstance(send.pkt, RouteReply) and send.next_hop == 4
    assert send.pkt.hop_count == 0


def test_duplicate_within_horizon_dropped():
    node = AodvNode(5)
    node.process_rreq(rreq(), 4, 1.0)
    action, sends = node.process_rreq(rreq(), 6, 1.2)
    assert action is RreqAction.DUPLICATE_DROPPED and sends == []


def test_rreq_for_unknown_dest_is_rebroadcast():
    node = AodvNode(5)
    action, (send,) = node.process_rreq(rreq(ttl=5, hop_count=2), 4, 1.0)
    assert action is RreqAction.REBROADCAST
    assert (send.pkt.ttl, send.pkt.hop_count) == (4, 3)
    assert send.next_hop is None


def test_ttl_zero_is_not_rebroadcast():
    action, sends = AodvNode(5).process_rreq(rreq(ttl=0), 4, 1.0)
    assert action is RreqAction.TTL_EXPIRED and sends == []


def test_malformed_rreq_dropped():
    action, _ = AodvNode(5).process_rreq(rreq(origin=3, dest=3), 4, 1.0)
    assert action is RreqAction.MALFORMED


def test_fresh_cached_route_answers():
    node = AodvNode(5)
    node.table.entries[9] = RouteEntry(9, 6, 2, 4, True, 10.0)
    action, (send,) = node.process_rreq(rreq(dest=9, dest_seq=3), 4, 1.0)
    assert action is RreqAction.REPLIED_FROM_CACHE
    assert (send.pkt.dest_seq, send.pkt.hop_count, send.next_hop) == (4, 2, 4)


def test_stale_cached_route_does_not_answer():
    node = AodvNode(5)
    node.table.entries[9] = RouteEntry(9, 6, 2, 2, True, 10.0)
    action, _ = node.process_rreq(rreq(dest=9, dest_seq=3), 4, 1.0)
    assert action is RreqAction.REBROADCAST


def test_forwarding_respects_self_ratelimit():
    node = AodvNode(5)
    fill_limiter(node, 10, 1.0)
    action, sends = node.process_rreq(rreq(), 4, 1.0)
    assert action is RreqAction.RATE_LIMITED and sends == []


def test_reverse_route_hop_count_is_advertised_plus_one():
    node = AodvNode(5)
    node.process_rreq(rreq(hop_count=3, origin_seq=8), 4, 1.0)
    e = node.table.entries[0]
    assert (e.next_hop, e.hop_count, e.dest_seq, e.valid) == (4, 4, 8, True)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=40))
def test_dedup_at_most_one_non_duplicate_per_key(keys):
    node = AodvNode(9)
    passed = []
    for i, (origin, rid) in enumerate(keys):
        action, _ = node.process_rreq(rreq(origin=origin, rreq_id=rid, dest=8), 1, i * 0.01)
        if action is not RreqAction.DUPLICATE_DROPPED:
            passed.append((origin, rid))
    assert len(passed) == len(set(passed))


def test_hand_traced_three_node_discovery():
    trace = yaml.safe_load((FIXTURES / "line3_trace.yaml").read_text())
    nodes = {i: AodvNode(i) for i in range(3)}
    origin = nodes[0]
    (first,), _ = origin.originate_rreq(2, 0.0)
    first = RouteRequest(**{**first.pkt.__dict__, "ttl": 5})
    assert first.__dict__ == trace["rreq_from_0"]
    in_flight = {"rreq": first}
    now = 0.0
    for step in trace["steps"]:
        now += 0.01
        node = nodes[step["at"]]
        pkt = in_flight[step["receives"]]
        if step["receives"] == "rreq":
            action, sends = node.process_rreq(pkt, step["from"], now)
        else:
            action, sends = node.process_rrep(pkt, step["from"], now)
        assert action.value == step["action"]
        exp = step["emits"]
        if exp is None:
            assert sends == []
        else:
            (send,) = sends
            kind = exp.pop("kind")
            if exp.pop("broadcast", False):
                assert send.next_hop is None
            else:
                assert send.next_hop == exp.pop("to")
            for k, v in exp.items():
                assert getattr(send.pkt, k) == v, (step, k)
            in_flight[kind] = send.pkt
        r = step["route"]
        e = node.table.entries[r["dest"]]
        assert (e.next_hop, e.hop_count, e.dest_seq, e.valid) == (
            r["next_hop"], r["hop_count"], r["dest_seq"], True)


# -- process_rrep -------------------------------------------------------------------

def test_origin_flushes_buffer_fifo():
    node = AodvNode(0)
    for k in range(3):
        node.forward_data(data(seq=k, sent_at=k * 0.1), k * 0.1)
    action, sends = node.process_rrep(RouteReply(2, 1, 0, 1, 3.0), 1, 0.5)
    assert action is RrepAction.CONSUMED
    assert [s.pkt.seq for s in sends] == [0, 1, 2]
    assert all(s.next_hop == 1 for s in sends)
    assert node.table.pending_buffer[2] == type(node.table.pending_buffer[2])()


def test_intermediate_forwards_rrep_once_along_reverse_route():
    node = AodvNode(1)
    node.process_rreq(rreq(origin=0, dest=2), 0, 0.1)
    action, sends = node.process_rrep(RouteReply(2, 1, 0, 0, 3.0), 2, 0.2)
    assert action is RrepAction.FORWARDED
    (send,) = sends
    assert send.next_hop == 0 and send.pkt.hop_count == 1


def test_stale_rrep_leaves_table_unchanged():
    node = AodvNode(1)
    node.process_rreq(rreq(origin=0, dest=2), 0, 0.1)
    node.process_rrep(RouteReply(2, 5, 0, 0, 3.0), 2, 0.2)
    before = dict(node.table.entries[2].__dict__)
    action, sends = node.process_rrep(RouteReply(2, 4, 0, 0, 3.0), 3, 0.3)
    assert action is RrepAction.STALE and sends == []
    assert node.table.entries[2].__dict__ == before


def test_equal_seq_fewer_hops_replaces_route():
    node = AodvNode(1)
    node.process_rrep(RouteReply(2, 5, 1, 3, 3.0), 7, 0.1)
    node.process_rrep(RouteReply(2, 5, 1, 1, 3.0), 8, 0.2)
    assert node.table.entries[2].next_hop == 8


def test_equal_seq_equal_hops_keeps_incumbent():
    node = AodvNode(1)
    node.process_rrep(RouteReply(2, 5, 1, 1, 3.0), 7, 0.1)
    node.process_rrep(RouteReply(2, 5, 1, 1, 3.0), 8, 0.2)
    assert node.table.entries[2].next_hop == 7


def test_rrep_without_reverse_route_dropped():
    action, sends = AodvNode(1).process_rrep(RouteReply(2, 1, 0, 0, 3.0), 2, 0.2)
    assert action is RrepAction.NO_REVERSE_ROUTE and sends == []


# -- forward_data --------------------------------------------------------------------

def test_data_at_destination_delivered_with_ack():
    node = AodvNode(2)
    node.table.entries[0] = RouteEntry(0, 1, 2, 1, True, 9.0)
    action, (send,) = node.forward_data(data(), 1.0, sender=1)
    assert action is ForwardAction.DELIVERED
    assert isinstance(send.pkt, Ack) and send.next_hop == 1
    assert (send.pkt.src, send.pkt.dst, send.pkt.data_sent_at) == (2, 0, 0.0)


def test_no_route_at_source_buffers():
    node = AodvNode(0)
    action, sends = node.forward_data(data(), 1.0)
    assert action is ForwardAction.BUFFERED and sends == []
    assert node.table.buffer_len() == 1


def test_no_route_at_intermediate_dropped():
    action, _ = AodvNode(1).forward_data(data(), 1.0, sender=0)
    assert action is ForwardAction.DROPPED_NO_ROUTE


def test_buffer_full_drops():
    node = AodvNode(0, AodvParams(buffer_capacity=2))
    node.forward_data(data(seq=0), 0.0)
    node.forward_data(data(seq=1), 0.0)
    action, _ = node.forward_data(data(seq=2), 0.0)
    assert action is ForwardAction.DROPPED_BUFFER_FULL


def test_buffer_timeout_arithmetic():
    node = AodvNode(0, AodvParams(buffer_timeout=1.5))
    node.forward_data(data(seq=0), 0.0)
    node.forward_data(data(seq=1), 0.8)
    assert node.expire_buffer(1.4) == []
    assert [p.seq for p in node.expire_buffer(2.0)] == [0]  # waited 2.0 s > 1.5 s
    assert [p.seq for p in node.expire_buffer(2.3)] == [1]


def test_invalid_route_is_never_used():
    node = AodvNode(1)
    node.table.entries[2] = RouteEntry(2, 2, 1, 1, False, 9.0)
    assert node.forward_data(data(), 1.0, sender=0)[0] is ForwardAction.DROPPED_NO_ROUTE
    node.table.entries[2] = RouteEntry(2, 2, 1, 1, True, 1.0)
    assert node.forward_data(data(), 1.0, sender=0)[0] is ForwardAction.DROPPED_NO_ROUTE


def test_forwarding_refreshes_route_lifetime():
    node = AodvNode(1)
    node.table.entries[2] = RouteEntry(2, 2, 1, 1, True, 1.5)
    node.forward_data(data(), 1.0, sender=0)
    assert node.table.entries[2].expires_at == 1.0 + node.params.route_lifetime


# -- expire_routes ---------------------------------------------------------------------

def test_expire_empty_table():
    assert AodvNode(0).expire_routes(5.0) == 0


def test_expire_boundary_counts():
    node = AodvNode(0)
    node.table.entries[1] = RouteEntry(1, 1, 1, 1, True, 5.0)
    assert node.expire_routes(5.0) == 1
    assert not node.table.entries[1].valid


def test_expire_two_of_three():
    node = AodvNode(0)
    for dest, exp in [(1, 2.0), (2, 3.0), (3, 9.0)]:
        node.table.entries[dest] = RouteEntry(dest, 1, 1, 1, True, exp)
    assert node.expire_routes(4.0) == 2


def test_route_hook_sees_install_and_invalidate():
    seen = []
    node = AodvNode(1, route_hook=lambda kind, n, d, t: seen.append((kind, n, d, t)))
    node.process_rrep(RouteReply(2, 1, 1, 0, 1.0), 2, 0.5)
    node.expire_routes(2.0)
    assert seen == [("RouteInstalled", 1, 2, 0.5), ("RouteInvalidated", 1, 2, 2.0)]


# -- RERR --------------------------------------------------------------------------------

def test_rerr_nothing_via_broken_hop():
    node = AodvNode(0)
    node.table.entries[5] = RouteEntry(5, 3, 2, 1, True, 9.0)
    assert node.emit_and_process_rerr(4, 1.0) == []


def test_rerr_names_both_routes_once():
    node = AodvNode(0)
    node.table.entries[5] = RouteEntry(5, 4, 2, 1, True, 9.0)
    node.table.entries[6] = RouteEntry(6, 4, 3, 7, True, 9.0)
    node.table.entries[7] = RouteEntry(7, 3, 1, 1, True, 9.0)
    (send,) = node.emit_and_process_rerr(4, 1.0)
    assert send.next_hop is None
    assert [d for d, _ in send.pkt.unreachable] == [5, 6]
    assert node.table.entries[7].valid
    assert node.emit_and_process_rerr(4, 1.1) == []


def test_rerr_receiver_with_fresher_route_keeps_it():
    node = AodvNode(1)
    node.table.entries[5] = RouteEntry(5, 0, 2, 9, True, 9.0)
    assert node.process_rerr(RouteError(((5, 8),)), 0, 1.0) == []
    assert node.table.entries[5].valid


def test_rerr_receiver_with_older_route_invalidates_and_rebroadcasts_once():
    node = AodvNode(1)
    node.table.entries[5] = RouteEntry(5, 0, 2, 7, True, 9.0)
    (send,) = node.process_rerr(RouteError(((5, 8),)), 0, 1.0)
    assert send.pkt.unreachable == ((5, 8),)
    assert not node.table.entries[5].valid
    node.table.entries[5] = RouteEntry(5, 0, 2, 8, True, 9.0)
    assert node.process_rerr(RouteError(((5, 8),)), 0, 1.1) == []


# -- self rate limiter ---------------------------------------------------------------------

@settings(max_examples=200)
@given(st.lists(st.floats(0.0, 0.3, allow_nan=False), min_size=1, max_size=80))
def test_self_limit_compliance_over_any_window(gaps):
    limiter = SelfRateLimiter(10)
    t, emitted = 0.0, []
    for g in gaps:
        t += g
        if limiter.permits(t):
            limiter.record(t)
            emitted.append(t)
    assert max_sliding_count(emitted) <= 10


def test_next_free_is_when_oldest_leaves_window():
    limiter = SelfRateLimiter(2)
    limiter.record(0.2)
    limiter.record(0.7)
    assert limiter.next_free(0.9) == pytest.approx(1.2)
    assert limiter.permits(1.2)
