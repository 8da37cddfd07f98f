"""Run the paired-execution checker against the reference models and planted leaks.

Each pair shares every public input and differs only in the secret. After
every epoch the checker compares what the wire shows, the public agent
state, and whether the two pending update queues differ only by updates
one side has already applied. The first disagreement is reported with its
step and the field that diverged.
"""
from pacer.noninterference import MUTANTS, PairedRun, run_pair, verify
from pacer.simnet import random_scenario

scenario = random_scenario(14)
print(f"scenario: {scenario.cfg.n_flows} flows, {len(scenario.requests)} requests, "
      f"{len(scenario.losses)} losses, {scenario.epochs} epochs")

verdicts = verify(scenario, 20, seed=3)
print(f"reference models: {sum(v.ok for v in verdicts)}/{len(verdicts)} pairs pass")

v = run_pair(PairedRun(scenario, 10, 20))
print(f"one pair in detail: {v.line()}, {v.witnesses} steps witnessed, {v.trace_len} packets")

print()
print(f"{'mutant':<18} verdict")
for name in sorted(MUTANTS):
    found = next((v for v in verify(scenario, 10, seed=3, mutant=name) if not v.ok), None)
    print(f"{name:<18} {found.line() if found else 'not caught by this scenario'}")
