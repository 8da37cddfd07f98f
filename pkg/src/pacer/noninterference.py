"""Paired-run security harness.

Two runs share every public input and differ only in the secret seed. After
each full step they must show the adversary the same packets, agree on all
public agent state, and have update queues that differ only by a prefix one
side has already applied.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from .core import ConformanceError, Emission, MaskingViolation
from .hypace import HyPace
from .schedule import TransmitSchedule, UpdateEvent, update
from .simnet import (
    Configuration,
    ReferenceGuest,
    Scenario,
    Simulation,
    build,
    step,
)
from .tunnel import FlowState

PASS = "PASS"
FAIL = "FAIL"
CONFORMANCE = "CONFORMANCE"


# --- planted leaks ----------------------------------------------------------

class SecretEffectiveTime(ReferenceGuest):
    """Lets the secret processing delay push effective times later."""

    def effective_floor(self, c, ev, delay):
        return max(super().effective_floor(c, ev, delay), ev.time + c.cfg.delta + delay)


class SecretSid(ReferenceGuest):
    """Picks the schedule template from secret randomness."""

    def choose_sid(self, c, ev, rng):
        return rng.choice([t.sid for t in c.db])


class HandlerDelayStamp(HyPace):
    """Stamps packets when preparation finished instead of at the boundary."""

    def stamp(self, tg, delay):
        return tg + delay


class PadLenExposure(HyPace):
    """Sends payload unpadded, so wire size reveals response length."""

    def packet(self, fs, now):
        pkt = super().packet(fs, now)
        if pkt is None:
            return None
        return replace(pkt, wire_size=pkt.wire_size - pkt.pad_len)


class DummySuppression(HyPace):
    """Stays silent on slots with nothing to send."""

    def packet(self, fs, now):
        if not fs.pkt_queue and not fs.outbound:
            return None
        return super().packet(fs, now)


MUTANTS: dict[str, dict[str, type]] = {
    "secret-te": {"guest_cls": SecretEffectiveTime},
    "handler-delay": {"hypace_cls": HandlerDelayStamp},
    "pad-len": {"hypace_cls": PadLenExposure},
    "secret-sid": {"guest_cls": SecretSid},
    "dummy-suppression": {"hypace_cls": DummySuppression},
}


# --- results ----------------------------------------------------------------

@dataclass(frozen=True)
class PairedRun:
    scenario: Scenario
    secret_a: int
    secret_b: int
    n: int | None = None
    mutant: str | None = None

    def __post_init__(self) -> None:
        if self.mutant is not None and self.mutant not in MUTANTS:
            raise ValueError(f"unknown mutant {self.mutant!r}; choose from {sorted(MUTANTS)}")

    @property
    def steps(self) -> int:
        return self.scenario.epochs if self.n is None else self.n

    def sides(self) -> tuple[Simulation, Simulation]:
        kw = MUTANTS[self.mutant] if self.mutant else {}
        return (build(self.scenario.with_secret(self.secret_a), **kw),
                build(self.scenario.with_secret(self.secret_b), **kw))


@dataclass(frozen=True)
class Verdict:
    status: str
    step: int | None = None
    field: str | None = None
    detail: str = ""
    witnesses: int = 0
    trace_len: int = 0

    @property
    def ok(self) -> bool:
        return self.status == PASS

    def line(self) -> str:
        if self.status == PASS:
            return PASS
        return f"{self.status} step={self.step} field={self.field}"


class FlowWitness(NamedTuple):
    flow: int
    longer: str  # which side still holds the extra prefix: "a", "b" or "" when equal
    updates_a: tuple[tuple[UpdateEvent, int], ...]
    updates_b: tuple[tuple[UpdateEvent, int], ...]
    schedule_a: TransmitSchedule
    schedule_b: TransmitSchedule
    prefix: tuple[tuple[UpdateEvent, int], ...]


@dataclass(frozen=True)
class I3Witness:
    flows: tuple[FlowWitness, ...] = field(default_factory=tuple)

    @property
    def prefix_lengths(self) -> dict[int, int]:
        return {w.flow: len(w.prefix) for w in self.flows}


# --- comparisons ------------------------------------------------------------

def _env_public(c: Configuration) -> tuple:
    p = c.env_public
    return (tuple(e.public() for e in p.pending), p.next_request, p.consumed,
            tuple(sorted(p.received.items())))


def _flow_diff(a: FlowState, b: FlowState) -> str | None:
    for name in ("next_seq", "cwnd_right_edge", "key_installed", "dup_seq", "dup_count", "acked"):
        if getattr(a, name) != getattr(b, name):
            return name
    if a.unacked.keys() != b.unacked.keys():
        return "unacked"
    return None


def public_diff(ca: Configuration, cb: Configuration) -> str | None:
    """Name of the first public field on which two configurations disagree."""
    if ca.tg != cb.tg:
        return "tg"
    if _env_public(ca) != _env_public(cb):
        return "env_public"
    if [e.public() for e in ca.q_guest] != [e.public() for e in cb.q_guest]:
        return "q_guest"
    if ca.updates.temax != cb.updates.temax:
        return "temax"
    for flow in sorted(ca.flows):
        d = _flow_diff(ca.flows[flow], cb.flows[flow])
        if d is not None:
            return f"guest_public.{d}"
    return None


def trace_diff(a: list[Emission], b: list[Emission]) -> str | None:
    if len(a) != len(b):
        return "trace.count"
    ka = sorted((e.time, e.flow, e.packet.wire_size) for e in a)
    kb = sorted((e.time, e.flow, e.packet.wire_size) for e in b)
    for name, i in (("time", 0), ("flow", 1), ("wire_size", 2)):
        if [x[i] for x in ka] != [x[i] for x in kb]:
            return f"trace.{name}"
    return None


def _flow_witness(flow: int, ca: Configuration, cb: Configuration) -> FlowWitness | None:
    ua, ub = tuple(ca.updates.projection(flow)), tuple(cb.updates.projection(flow))
    pa, pb = ca.flows[flow].sched, cb.flows[flow].sched
    q = ca.cfg.epsilon
    if len(ua) >= len(ub):
        k = len(ua) - len(ub)
        if ua[k:] != ub or update(pa, ua[:k], db=ca.db, quantum=q) != pb:
            return None
        return FlowWitness(flow, "a" if k else "", ua, ub, pa, pb, ua[:k])
    k = len(ub) - len(ua)
    if ub[k:] != ua or update(pb, ub[:k], db=cb.db, quantum=q) != pa:
        return None
    return FlowWitness(flow, "b", ua, ub, pa, pb, ub[:k])


def check_i3(ca: Configuration, cb: Configuration) -> I3Witness | None:
    """Witness that the two configurations are related, or None.

    Per flow, one side's pending update projections must equal a prefix V
    followed by the other side's, and applying V to that side's schedule must
    give the other side's schedule. Public state and global time must agree.
    """
    if public_diff(ca, cb) is not None or ca.flows.keys() != cb.flows.keys():
        return None
    out = []
    for flow in sorted(ca.flows):
        w = _flow_witness(flow, ca, cb)
        if w is None:
            return None
        out.append(w)
    return I3Witness(tuple(out))


# --- driving ----------------------------------------------------------------

def _step(sim: Simulation) -> tuple[list[Emission] | None, Exception | None]:
    before = len(sim.config.observed)
    try:
        step(sim)
    except (ConformanceError, MaskingViolation) as exc:
        return None, exc
    return sim.config.observed[before:], None


def run_pair(p: PairedRun) -> Verdict:
    a, b = p.sides()
    witnesses = 0
    for k in range(p.steps):
        ea, xa = _step(a)
        eb, xb = _step(b)
        if xa is not None or xb is not None:
            exc = xa if xa is not None else xb
            return Verdict(CONFORMANCE, k, type(exc).__name__, str(exc), witnesses)
        d = trace_diff(ea, eb)
        if d is not None:
            return Verdict(FAIL, k, d, witnesses=witnesses)
        d = public_diff(a.config, b.config)
        if d is not None:
            return Verdict(FAIL, k, d, witnesses=witnesses)
        if check_i3(a.config, b.config) is None:
            return Verdict(FAIL, k, "i3", witnesses=witnesses)
        witnesses += 1
    return Verdict(PASS, witnesses=witnesses, trace_len=len(a.config.observed))


def random_pairs(scenario: Scenario, k: int, seed: int = 0, mutant: str | None = None) -> list[PairedRun]:
    rng = random.Random(seed)
    return [PairedRun(scenario, rng.getrandbits(32), rng.getrandbits(32), mutant=mutant) for _ in range(k)]


def verify(scenario: Scenario, k: int, seed: int = 0, mutant: str | None = None) -> list[Verdict]:
    return [run_pair(p) for p in random_pairs(scenario, k, seed, mutant)]
