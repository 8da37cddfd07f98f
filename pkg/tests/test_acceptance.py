"""End-to-end acceptance checks, one test per criterion.

The terminal summary prints a PASS/FAIL line for each.
"""
import math
import random
import time
from collections import Counter
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from pacer import cluster as cl
from pacer.cli import main
from pacer.core import MaskingViolation, PacerConfig, PacketKind, pad_frame, strip_frame, trace_equal
from pacer.hypace import HyPace, constant_delay
from pacer.noninterference import MUTANTS, PASS, check_i3, verify
from pacer.profpace import percentile, profile, segment_logs
from pacer.schedule import CAUSAL_KINDS, ScheduleTemplate
from pacer.simnet import Loss, Request, Scenario, build, dump_scenario, random_scenario, run, simulate, step
from pacer.tunnel import IN_PKT, INDICATOR, OUT_READY, FlowState, LogRecord, enqueue_app_data, make_next_packet

from cluster_oracle import best_round, greedy
from conftest import busy_scenario

FUZZ_PAIRS = 100
FUZZ_EPOCHS = 200


def _fuzz_cases():
    rng = random.Random(2024)
    return [(random_scenario(seed, epochs=FUZZ_EPOCHS), rng.getrandbits(32), rng.getrandbits(32))
            for seed in range(FUZZ_PAIRS)]


def _default_constants_scenario(epochs: int = 420) -> Scenario:
    cfg = PacerConfig(n_flows=2, cwnd=6)
    d = cfg.delta
    return Scenario(
        cfg=cfg, seed=3, epochs=epochs, rtt=400, rto=2400, max_response=40_000,
        schedules=(ScheduleTemplate(0, d, 120, 10), ScheduleTemplate(1, d + 360, 240, 6)),
        requests=(Request(1, 1, 0), Request(50, 2, 1), Request(9_000, 2, 0)),
        losses=(Loss(1, 2, "timeout"), Loss(2, 3, "dupack")),
        secret=17,
    )


def test_criterion_1_noninterference_fuzz():
    """Random scenarios with randomized secret pairs: all pairs pass with byte-identical traces."""
    cases = _fuzz_cases()
    start = time.perf_counter()
    verdicts = [verify(replace(s, secret=0), 1, seed=i)[0] for i, (s, _, _) in enumerate(cases)]
    elapsed = time.perf_counter() - start
    assert [v.status for v in verdicts] == [PASS] * FUZZ_PAIRS
    assert all(v.witnesses == FUZZ_EPOCHS for v in verdicts)
    assert elapsed < 60, f"fuzz took {elapsed:.1f}s"

    private_differs = 0
    for s, x, y in cases:
        ca, ta = run(build(s.with_secret(x)))
        cb, tb = run(build(s.with_secret(y)))
        assert ta.to_csv() == tb.to_csv()
        payload = lambda c: [e.packet.payload for e in c.observed]
        queued = lambda c: [e.packet.queued_at for e in c.observed]
        private_differs += payload(ca) != payload(cb) or queued(ca) != queued(cb)
    # the secrets really change what happens behind the shape
    assert private_differs >= FUZZ_PAIRS // 2


def test_criterion_1_cli_verify_hundred_pairs(tmp_path, capsys):
    """The command-line verifier reports 100 passing pairs on the reference models."""
    path = tmp_path / "busy.scn"
    path.write_text(dump_scenario(busy_scenario()))
    assert main(["verify", "--scenario", str(path), "--pairs", "100"]) == 0
    assert capsys.readouterr().out.splitlines() == ["PASS"] * 100


def test_criterion_2_invariants_every_step():
    """I1 and I2 hold after every step; an I3 witness exists after every step of every pair."""
    violations = steps = witnessed = 0
    for s, x, y in _fuzz_cases():
        a, b = build(s.with_secret(x)), build(s.with_secret(y))
        for _ in range(s.epochs):
            step(a)
            step(b)
            for c in (a.config, b.config):
                q = c.updates
                for u in q.all_updates():
                    violations += not (u.queued_at <= u.effective_at <= q.temax)
            steps += 1
            witnessed += check_i3(a.config, b.config) is not None
    assert violations == 0
    assert witnessed == steps == FUZZ_PAIRS * FUZZ_EPOCHS


@pytest.mark.parametrize("mutant", sorted(MUTANTS))
def test_criterion_3_mutation_soundness(tmp_path, capsys, mutant):
    """Every planted leak is reported as FAIL with a step index by the verifier."""
    assert len(MUTANTS) >= 5
    path = tmp_path / "busy.scn"
    path.write_text(dump_scenario(busy_scenario()))
    code = main(["verify", "--scenario", str(path), "--pairs", "5", "--seed", "1", "--mutant", mutant])
    lines = capsys.readouterr().out.splitlines()
    assert code == 3
    assert any(line.startswith("FAIL step=") for line in lines), lines
    assert not any(line.startswith("CONFORMANCE") for line in lines)


def _run_with_handler_delay(s: Scenario, delay: int):
    sim = build(s)
    sim.hypace = HyPace(s.cfg, sim.config.db, constant_delay(delay), s.seed)
    c, _ = run(sim)
    return c.observed


def test_criterion_4_masking_non_influence():
    """Handler delays up to the bound change no emitted packet field; one more tick is refused."""
    s = busy_scenario()
    bound = s.cfg.delta_xmit
    runs = [_run_with_handler_delay(s, d) for d in (0, bound // 2, bound)]
    assert runs[0] and runs[0] == runs[1] == runs[2]
    with pytest.raises(MaskingViolation):
        _run_with_handler_delay(s, bound + 1)


def test_criterion_5_causal_delay_floors():
    """Every recorded cause/effect pair is at least delta apart, at fuzz scale and with default constants."""
    kinds = Counter()
    checked = 0
    scenarios = [s for s, _, _ in _fuzz_cases()] + [busy_scenario(), _default_constants_scenario()]
    for s in scenarios:
        c, _ = run(build(s))
        for p in c.causal_pairs:
            assert p.effect - p.cause >= s.cfg.delta, p
            kinds[p.kind] += 1
            checked += 1
    base = _default_constants_scenario()
    assert base.cfg.epsilon == 120 and base.cfg.delta_delay == 20_000 and base.cfg.delta == 20_120
    default_kinds = Counter(p.kind for p in run(build(base))[0].causal_pairs)
    assert set(default_kinds) == set(CAUSAL_KINDS), default_kinds
    assert set(kinds) == set(CAUSAL_KINDS) and checked > 1000


def _training_log(rng: random.Random, sids: list[int]):
    records, truth = [], []
    for flow in (1, 2):
        t = rng.randint(0, 1000)
        for _ in range(rng.randint(40, 120)):
            sid = rng.choice(sids)
            records.append(LogRecord(t, flow, IN_PKT, 1))
            if sid:
                records.append(LogRecord(t, flow, INDICATOR, sid))
            p = rng.randint(1, 12)
            d_i = rng.randint(0, 60_000)
            ts = t + d_i
            for _ in range(p):
                records.append(LogRecord(ts, flow, OUT_READY, rng.randint(1, 1448)))
                ts += rng.randint(1, 900)
            truth.append((sid, d_i, p))
            t = ts + rng.randint(1, 5000)
    records.sort(key=lambda r: r.ts)
    return records, truth


def test_criterion_6_profiler_oracle():
    """Nearest-rank percentiles match a sort oracle; templates cover the training exchanges."""
    rng = random.Random(6)
    for _ in range(1000):
        xs = [rng.randint(-10**6, 10**6) for _ in range(rng.randint(1, 300))]
        q = rng.choice([rng.randint(1, 100), Fraction(rng.randint(1, 10_000), 100)])
        rank = math.ceil(Fraction(q) * len(xs) / 100)
        assert percentile(xs, q) == sorted(xs)[max(rank, 1) - 1]

    cfg = PacerConfig()
    for trial in range(20):
        records, truth = _training_log(rng, [0, 3, 7, 11][: rng.randint(1, 4)])
        assert len(segment_logs(records)) == len(truth)
        templates = {t.sid: t for t in profile(records, cfg)[0]}
        for sid in {sid for sid, _, _ in truth}:
            rows = [(d_i, p) for s, d_i, p in truth if s == sid]
            t = templates[sid]
            assert t.initial_delay >= cfg.delta
            assert all(p <= t.count for _, p in rows)
            covered = sum(d_i <= t.initial_delay for d_i, _ in rows)
            assert covered >= 0.99 * len(rows)


def _check_clustering(result: cl.Clustering, corpus: list[cl.CorpusObject], c: int):
    objs = {o.id: o.segments for o in corpus}
    ids = [m for cluster in result.clusters for m in cluster.members]
    assert sorted(ids) == sorted(objs)
    for cluster in result.clusters:
        for m in cluster.members:
            seg = objs[m]
            assert len(cluster.ceiling) >= len(seg)
            assert all(cluster.ceiling[k] >= s for k, s in enumerate(seg))
        assert len(cluster.members) >= min(c, len(objs))
    # replay each round against exhaustive candidate search over what was left
    left = dict(objs)
    for rnd in result.rounds:
        assert frozenset(rnd.members) == best_round(left, c)
        for m in rnd.members:
            del left[m]
    assert [frozenset(x.members) for x in result.clusters] == greedy(objs, c)


def test_criterion_7_clustering_oracle():
    """Greedy clusterings partition, dominate, respect the size floor and pick each round optimally."""
    rng = random.Random(7)
    for trial in range(50):
        n = rng.randint(1, 8)
        docs = cl.documents([rng.randint(1, 40) for _ in range(n)], [f"d{i}" for i in range(n)])
        c = rng.randint(1, n)
        _check_clustering(cl.cluster_documents(docs, c), docs, c)

        n = rng.randint(1, 6)
        vids = [cl.CorpusObject(f"v{i}", tuple(rng.randint(1, 30) for _ in range(rng.randint(1, 4))))
                for i in range(n)]
        c = rng.randint(1, n)
        _check_clustering(cl.cluster_videos(vids, c), vids, c)


def test_criterion_8_rounding_bounds():
    """Power-of-two padding stays under 100% overhead; multiple-of-L padding adds at most L-1."""
    sizes = np.arange(1, 1_000_001, dtype=np.int64)
    ceil = cl.pow2_ceiling(sizes)
    assert ceil.tolist() == [1 << (s - 1).bit_length() for s in range(1, 1_000_001)]
    assert np.all(ceil >= sizes) and np.all(ceil - sizes < sizes)
    for step_ in (1, 2, 7, 100, 1500):
        ceil = cl.multiple_ceiling(sizes, step_)
        assert np.all(ceil % step_ == 0) and np.all(ceil >= sizes) and np.all(ceil - sizes <= step_ - 1)
    sample = cl.documents(np.random.default_rng(8).integers(1, 10**6, 3000).tolist())
    assert cl.overhead(cl.round_pow2(sample), sample).max_oh < 1.0
    rep = cl.overhead(cl.round_multiple(sample, 100), sample)
    assert rep.max_oh <= max(Fraction(99, o.segments[0]) for o in sample)


def test_criterion_9_tunnel_identity():
    """Padding then stripping restores random streams; padded packets are all MTU sized; rwnd hides nothing."""
    cfg = PacerConfig()
    rng = random.Random(9)
    for _ in range(1000):
        data = rng.randbytes(rng.randint(0, 20_000))
        fs = FlowState.new(1, cfg, rwnd=rng.choice([1 << 30, rng.randint(1, 3000)]))
        enqueue_app_data(fs, data, 0)
        frames, out = [], bytearray()
        while fs.outbound:
            pkt = make_next_packet(fs, cfg)
            pkt.validate(cfg)
            assert pkt.wire_size == cfg.mtu
            frame = pad_frame(pkt.payload, cfg)
            assert len(frame) == 2 + cfg.m_payload
            out += strip_frame(frame)
        assert bytes(out) == data

    for s in [busy_scenario()] + [random_scenario(seed) for seed in range(20)]:
        c, trace = run(build(s))
        for e in c.observed:
            if e.packet.kind is not PacketKind.ACK:
                assert e.packet.wire_size == s.cfg.mtu
        for rwnd in (0, 1, 700):
            assert trace_equal(trace, simulate(replace(s, rwnd=rwnd)))
