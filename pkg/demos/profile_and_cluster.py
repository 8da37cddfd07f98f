"""Build schedule templates from an application log, then pick padding sizes for a corpus.

The profiler splits a log into exchanges, groups them by traffic indicator
and turns high percentiles of the observed delays and packet counts into
templates. The clustering half compares three ways of padding objects so
that sizes reveal less: greedy clusters with a minimum size, rounding to
powers of two, and rounding to a multiple of a fixed step.
"""
import random

from pacer import cluster as cl
from pacer.core import PacerConfig
from pacer.profpace import profile, segment_logs
from pacer.tunnel import IN_PKT, INDICATOR, OUT_READY, LogRecord

rng = random.Random(5)
cfg = PacerConfig()

# a front page (sid 0) answers quickly with a few packets; a search page (sid 4) is slower and bigger
records, t = [], 0
for _ in range(300):
    sid = rng.choice([0, 0, 4])
    records.append(LogRecord(t, 1, IN_PKT, 1))
    if sid:
        records.append(LogRecord(t, 1, INDICATOR, sid))
    ts = t + (rng.randint(2_000, 9_000) if sid == 0 else rng.randint(15_000, 45_000))
    for _ in range(rng.randint(2, 6) if sid == 0 else rng.randint(8, 20)):
        records.append(LogRecord(ts, 1, OUT_READY, 1448))
        ts += rng.randint(20, 400)
    t = ts + rng.randint(1_000, 50_000)

print(f"{len(segment_logs(records))} exchanges in the log")
templates, warnings = profile(records, cfg)
for w in warnings:
    print("warning:", w)
for tpl in templates:
    print(f"sid {tpl.sid}: first packet after {tpl.initial_delay}, then every {tpl.spacing}, "
          f"{tpl.count} packets")

# page sizes drawn from a heavy-tailed distribution
sizes = sorted(int(rng.lognormvariate(10, 1.1)) + 200 for _ in range(400))
corpus = cl.documents(sizes, [f"page{i}" for i in range(len(sizes))])
print()
print(f"{'method':<14} {'c_min':>5} {'n1':>4} {'avg_oh':>8} {'max_oh':>8}")
rows = [(f"greedy c={c}", cl.cluster_documents(corpus, c)) for c in (2, 5, 10)]
rows += [("pow2", cl.round_pow2(corpus)), ("multiple 4096", cl.round_multiple(corpus, 4096))]
for label, result in rows:
    r = cl.overhead(result, corpus)
    print(f"{label:<14} {r.c_min_actual:>5} {r.n1:>4} {r.avg_oh:>8.3f} {r.max_oh:>8.3f}")
