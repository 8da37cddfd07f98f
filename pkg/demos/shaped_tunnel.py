"""Two servers hold different secrets; an observer on the wire cannot tell them apart.

Each run serves the same public requests, but the secret decides how long
the guest takes to answer and how large each response is. The shaped tunnel
sends on a calendar fixed by public events, so the packet traces come out
byte-identical. A contention probe sharing the bottleneck link sees the
same queueing delays too. Dropping the padding (a planted leak) breaks this
straight away.
"""
import numpy as np

from pacer.core import PacerConfig, PacketKind
from pacer.noninterference import MUTANTS
from pacer.schedule import ScheduleTemplate
from pacer.simnet import Loss, Request, Scenario, build, contention_observe, run

cfg = PacerConfig(delta_delay=900, n_flows=2, cwnd=6)
scenario = Scenario(
    cfg=cfg, seed=1, epochs=160, rtt=250, rto=1500, max_response=30_000,
    schedules=(ScheduleTemplate(0, cfg.delta, 120, 8), ScheduleTemplate(1, cfg.delta + 240, 240, 5)),
    requests=(Request(100, 1, 0), Request(130, 2, 1), Request(4000, 1, 1), Request(5200, 2, 0)),
    losses=(Loss(1, 3, "dupack"),),
)


def describe(label, config, trace):
    payload = sum(len(e.packet.payload) for e in config.observed)
    dummies = sum(e.packet.kind is PacketKind.DUMMY for e in config.observed)
    print(f"{label}: {len(trace)} packets, {dummies} dummies, {payload} payload bytes")


runs = {}
for secret in (1, 2):
    config, trace = run(build(scenario.with_secret(secret)))
    describe(f"secret {secret}", config, trace)
    runs[secret] = trace

print("traces byte-identical:", runs[1].to_csv() == runs[2].to_csv())

probe = {s: contention_observe(t, probe_rate=0.05, bottleneck_rate=20.0) for s, t in runs.items()}
print("probe delays identical:", np.array_equal(probe[1], probe[2]),
      f"(mean wait {probe[1].mean():.2f} ticks over {len(probe[1])} probes)")

leaky = {s: run(build(scenario.with_secret(s), **MUTANTS["pad-len"]))[1] for s in (1, 2)}
sizes = {s: sorted({e.wire_size for e in t}) for s, t in leaky.items()}
print("without padding, wire sizes differ:", sizes[1] != sizes[2])
print("  secret 1 sizes:", sizes[1][:6], "...")
print("  secret 2 sizes:", sizes[2][:6], "...")
