import pytest
from hypothesis import given, strategies as st

from pacer.core import (
    ConfigError,
    Emission,
    FormatError,
    ObservationTrace,
    Packet,
    PacketKind,
    PacerConfig,
    TraceEvent,
    check_time,
    pad_frame,
    strip_frame,
    trace_equal,
    trace_project,
)

CFG = PacerConfig()


def test_default_constants():
    assert (CFG.epsilon, CFG.delta_xmit, CFG.delta_delay, CFG.batch_max) == (120, 35, 20_000, 38)
    assert CFG.delta == CFG.epsilon + CFG.delta_delay == 20_120


@pytest.mark.parametrize("kw", [
    {"m_payload": 1500}, {"m_payload": 0}, {"batch_max": 0}, {"n_flows": 0},
    {"epsilon": 0}, {"delta_delay": -1}, {"cwnd": 0}, {"mtu": 1449, "m_payload": 1448},
])
def test_config_rejects(kw):
    with pytest.raises((ConfigError, ValueError)):
        PacerConfig(**kw)


def test_flow_range():
    cfg = PacerConfig(n_flows=3)
    assert list(cfg.flows()) == [1, 2, 3]
    with pytest.raises(ValueError):
        cfg.check_flow(4)
    with pytest.raises(ValueError):
        cfg.check_flow(0)


def test_time_checks():
    assert check_time(0) == 0
    with pytest.raises(ValueError):
        check_time(-1)
    with pytest.raises(OverflowError):
        check_time(2**63)
    with pytest.raises(TypeError):
        check_time(1.5)


def test_packet_shapes():
    dummy = Packet.data(1, 1, b"", CFG)
    assert dummy.kind is PacketKind.DUMMY and dummy.pad_len == CFG.m_payload and dummy.wire_size == CFG.mtu
    full = Packet.data(1, 2, b"x" * CFG.m_payload, CFG)
    assert full.kind is PacketKind.PAYLOAD and full.pad_len == 0 and full.wire_size == CFG.mtu
    ack = Packet.ack(1, 2)
    assert ack.pad_len == 0 and ack.wire_size < CFG.mtu
    for p in (dummy, full, ack):
        p.validate(CFG)
    with pytest.raises(ValueError):
        Packet.data(1, 1, b"x" * (CFG.m_payload + 1), CFG)


def test_trace_project_empty():
    assert len(trace_project([])) == 0


def test_trace_project_hides_kind():
    q = [Emission(100, Packet.data(1, 1, b"", CFG)), Emission(100, Packet.data(2, 1, b"secret", CFG))]
    assert list(trace_project(q)) == [(100, 1, 1500), (100, 2, 1500)]


def test_trace_project_keeps_order():
    q = [Emission(5, Packet.data(2, 1, b"", CFG)), Emission(5, Packet.data(1, 1, b"", CFG))]
    assert [e.flow for e in trace_project(q)] == [2, 1]


@given(st.lists(st.tuples(st.binary(max_size=40), st.binary(max_size=40)), min_size=2, max_size=2))
def test_payload_bytes_never_reach_trace(pairs):
    # two queues with the same timing and flows but arbitrary payloads
    qa = [Emission(i * 10, Packet.data(1, i, a, CFG)) for i, (a, _) in enumerate(pairs)]
    qb = [Emission(i * 10, Packet.data(1, i, b, CFG)) for i, (_, b) in enumerate(pairs)]
    assert trace_equal(trace_project(qa), trace_project(qb))


def test_trace_equal_cases():
    assert trace_equal(ObservationTrace(), ObservationTrace())
    a = ObservationTrace((TraceEvent(10, 1, 1500), TraceEvent(10, 2, 1500)))
    b = ObservationTrace((TraceEvent(10, 2, 1500), TraceEvent(10, 1, 1500)))
    assert trace_equal(a, b)
    c = ObservationTrace((TraceEvent(11, 1, 1500), TraceEvent(11, 2, 1500)))
    assert not trace_equal(a, ObservationTrace((TraceEvent(10, 1, 1500), TraceEvent(11, 2, 1500))))
    assert not trace_equal(a, c)


def test_trace_rejects_time_travel():
    with pytest.raises(ValueError):
        ObservationTrace((TraceEvent(10, 1, 1500), TraceEvent(9, 1, 1500)))


def test_trace_csv_roundtrip():
    t = ObservationTrace((TraceEvent(0, 1, 1500), TraceEvent(120, 2, 52)))
    assert ObservationTrace.from_csv(t.to_csv()) == t
    with pytest.raises(FormatError, match="2:"):
        ObservationTrace.from_csv("1,1,1500\n1,x,1500\n")


@given(st.binary(max_size=CFG.m_payload))
def test_pad_strip_identity(chunk):
    frame = pad_frame(chunk, CFG)
    assert len(frame) == CFG.m_payload + 2
    assert strip_frame(frame) == chunk


def test_strip_rejects_bad_header():
    with pytest.raises(ValueError):
        strip_frame(b"\xff\xff" + bytes(10))
