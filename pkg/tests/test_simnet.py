import numpy as np
import pytest
from dataclasses import replace

from pacer.core import ConformanceError, FormatError, ObservationTrace, PacerConfig, TraceEvent, trace_equal
from pacer.schedule import ExtendOne, ScheduleTemplate, ScheduleUpdate, check_i1, check_i2
from pacer.simnet import (
    Loss,
    ReferenceEnv,
    ReferenceGuest,
    Request,
    Scenario,
    build,
    contention_observe,
    dump_scenario,
    parse_scenario,
    random_scenario,
    run,
    simulate,
    step,
)

CFG = PacerConfig(delta_delay=1000, n_flows=2, cwnd=10)
T = ScheduleTemplate(0, CFG.delta, 120, 5)


def scen(**kw):
    base = dict(cfg=CFG, epochs=50, rtt=200, schedules=(T,), max_response=4000, secret=1)
    base.update(kw)
    return Scenario(**base)


def ceil_to(t, q=CFG.epsilon):
    return -(-t // q) * q


def test_inert_system_only_advances_time():
    sim = build(scen())
    for _ in range(5):
        step(sim)
    assert sim.config.tg == 5 * CFG.epsilon and sim.config.observed == []


def test_first_emission_after_delta():
    t = 100
    sim = build(scen(requests=(Request(t, 1),)))
    c, trace = run(sim, 12)
    assert c.flows[1].sched.anchor == t
    first = trace.events[0].time
    assert first == ceil_to(t + CFG.delta) and first >= t + CFG.delta


def test_slot_calendar_oracle():
    t = 100
    _, trace = run(build(scen(requests=(Request(t, 1),))))
    expected = [ceil_to(t + T.initial_delay + k * T.spacing) for k in range(T.count)]
    assert [e.time for e in trace] == expected
    assert {e.flow for e in trace} == {1} and {e.wire_size for e in trace} == {CFG.mtu}


def test_run_zero_and_determinism():
    s = random_scenario(3)
    assert len(run(build(s), 0)[1]) == 0
    assert run(build(s))[1] == run(build(s))[1]


def test_late_queued_update_only_changes_later_slots():
    # an update queued early in one epoch but effective three epochs later
    sim = build(scen(requests=(Request(100, 1),)))
    for _ in range(10):
        step(sim)
    c = sim.config
    te = c.tg + 3 * CFG.epsilon + 7
    before = c.flows[1].sched
    c.updates.temax = max(c.updates.temax or 0, 0)
    c.updates.for_flow(1).append(ScheduleUpdate(c.tg + 5, ExtendOne(), te))
    c.updates.temax = te
    step(sim)
    assert not c.updates.pending[1]
    after = c.flows[1].sched
    assert after.restrict(te - 1) == before.restrict(te - 1)
    assert after.times[-1] >= te


def test_invariants_hold_every_step():
    for seed in range(10):
        sim = build(random_scenario(seed))
        for _ in range(sim.scenario.epochs):
            step(sim)
            assert not check_i1(sim.config.updates) and not check_i2(sim.config.updates)


def test_causal_pairs_respect_delta():
    for seed in range(10):
        sim = build(random_scenario(seed))
        run(sim)
        for kind, flow, cause, effect in sim.config.causal_pairs:
            assert effect - cause >= sim.scenario.cfg.delta


def test_closed_rwnd_same_trace():
    s = scen(requests=(Request(100, 1), Request(900, 2)))
    assert trace_equal(simulate(s), simulate(replace(s, rwnd=0)))


def test_unauthenticated_request_changes_nothing():
    s = scen(requests=(Request(100, 1),))
    noisy = scen(requests=(Request(100, 1), Request(300, 2, 0, False)))
    assert trace_equal(simulate(s), simulate(noisy))


def test_loss_modes_extend_schedule():
    s = scen(requests=(Request(100, 1),), cfg=replace(CFG, cwnd=2), epochs=120)
    base = simulate(s)
    for mode in ("dupack", "timeout"):
        lossy = simulate(replace(s, losses=(Loss(1, 1, mode),)))
        assert len(lossy) == len(base) + 1


class LateEnv(ReferenceEnv):
    def step(self, c):
        out = super().step(c)
        return [e._replace(time=c.tg) for e in out]


class EagerGuest(ReferenceGuest):
    def effective_floor(self, c, ev, delay):
        return 0


def test_conformance_errors():
    s = scen(requests=(Request(100, 1), Request(100, 2)))
    with pytest.raises(ConformanceError):
        run(build(s, env_cls=LateEnv))
    with pytest.raises(ConformanceError):
        run(build(s, guest_cls=EagerGuest))


def test_scenario_roundtrip_and_errors():
    s = random_scenario(5)
    assert parse_scenario(dump_scenario(s)) == s
    with pytest.raises(FormatError, match="2:"):
        parse_scenario("seed = 1\nbogus = 2\n")
    with pytest.raises(FormatError, match="1:"):
        parse_scenario("requests = 10:1\n")
    with pytest.raises(FormatError):
        parse_scenario("n_flows = 1\nrequests = 10:2:0\n")


def test_contention_empty_trace_is_flat():
    d = contention_observe(ObservationTrace(), 0.01, 10.0, duration=5000)
    assert np.all(d == d[0]) and d[0] == 0


def test_contention_single_burst():
    trace = ObservationTrace((TraceEvent(1000, 1, 1500),))
    d = contention_observe(trace, 0.01, 10.0)
    assert d.max() == pytest.approx(1500 / 10.0)
    assert d[np.flatnonzero(np.arange(len(d)) / 0.01 == 1000)[0]] == pytest.approx(150.0)
    assert np.count_nonzero(d) == 2  # probes at 1000 and 1100 both wait


def test_contention_blind_to_secrets():
    s = scen(requests=(Request(100, 1), Request(500, 2)))
    a, b = simulate(s), simulate(s.with_secret(99))
    np.testing.assert_array_equal(contention_observe(a, 0.02, 5.0), contention_observe(b, 0.02, 5.0))


def test_contention_rejects_bad_rates():
    with pytest.raises(ValueError):
        contention_observe(ObservationTrace(), 0, 1)
