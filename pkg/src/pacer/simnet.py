"""Executable system model: environment, guest and HyPace stepping over shared queues.

One :func:`step` advances global time by one epoch and runs the three
agents in a fixed order. The environment delivers inbound events that fall
in the epoch, the guest turns them into schedule updates and response
data, and HyPace applies the updates that have been queued and emits the
epoch's packets at its closing boundary.

Every agent keeps its state split into a public and a private part. The
reference models below only let private state (request contents, response
sizes, processing delays) reach fields the adversary cannot see.
"""
from __future__ import annotations

import io
import random
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import (
    ConformanceError,
    Emission,
    FormatError,
    ObservationTrace,
    OrderingViolation,
    PacerConfig,
    PacketKind,
    Time,
    trace_project,
)
from .hypace import CausalPair, HyPace, hashed_delay
from .schedule import (
    DEFAULT_SID,
    ScheduleDb,
    ScheduleTemplate,
    UpdateQueue,
    check_i1,
    check_i2,
    enqueue_update,
)
from .tunnel import FlowState, enqueue_app_data, indicate, on_ack, on_request_arrival, on_timeout

REQUEST = "request"
ACK = "ack"
TIMEOUT = "timeout"
_KIND_RANK = {REQUEST: 0, ACK: 1, TIMEOUT: 2}

DUPACK = "dupack"
LOSS_MODES = (DUPACK, TIMEOUT)


class InboundEvent(NamedTuple):
    time: Time
    flow: int
    kind: str
    arg: int  # sid for requests, acknowledged seq for acks (0 = duplicate)
    authenticated: bool = True
    payload: bytes = b""

    def public(self) -> tuple:
        return (self.time, self.flow, self.kind, self.arg, self.authenticated)

    def order(self) -> tuple:
        return (self.time, self.flow, _KIND_RANK[self.kind], self.arg)


class Request(NamedTuple):
    time: Time
    flow: int
    sid: int = DEFAULT_SID
    authenticated: bool = True


class Loss(NamedTuple):
    flow: int
    seq: int
    mode: str


# --- scenarios --------------------------------------------------------------

_CFG_KEYS = {f.name for f in fields(PacerConfig)}


@dataclass(frozen=True)
class Scenario:
    """Public inputs of a run plus the secret seed; everything else derives from these."""

    cfg: PacerConfig = field(default_factory=PacerConfig)
    seed: int = 0
    epochs: int = 100
    rtt: Time = 300
    rto: Time = 3000
    rwnd: int = 1 << 30
    max_response: int = 20_000
    requests: tuple[Request, ...] = ()
    losses: tuple[Loss, ...] = ()
    schedules: tuple[ScheduleTemplate, ...] = ()
    secret: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.rtt < 1 or self.rto < 1:
            raise ValueError("rtt and rto must be positive")
        for r in self.requests:
            self.cfg.check_flow(r.flow)
            if r.time < 1:
                raise ValueError("request times must be >= 1")
        for loss in self.losses:
            self.cfg.check_flow(loss.flow)
            if loss.mode not in LOSS_MODES:
                raise ValueError(f"unknown loss mode {loss.mode!r}")

    def db(self) -> ScheduleDb:
        templates = list(self.schedules)
        if not any(t.sid == DEFAULT_SID for t in templates):
            templates.append(ScheduleTemplate(DEFAULT_SID, self.cfg.delta, self.cfg.epsilon, self.cfg.cwnd))
        return ScheduleDb(templates, self.cfg.delta)

    def with_secret(self, secret: int) -> "Scenario":
        return replace(self, secret=secret)


def _ints(text: str, n_min: int, n_max: int, what: str) -> list[str]:
    parts = text.split(":")
    if not n_min <= len(parts) <= n_max:
        raise ValueError(f"malformed {what} item {text!r}")
    return parts


def _parse_item(key: str, item: str):
    if key == "requests":
        parts = _ints(item, 3, 4, "request")
        auth = True
        if len(parts) == 4:
            if parts[3] != "noauth":
                raise ValueError(f"unknown request flag {parts[3]!r}")
            auth = False
        return Request(int(parts[0]), int(parts[1]), int(parts[2]), auth)
    if key == "losses":
        parts = _ints(item, 3, 3, "loss")
        return Loss(int(parts[0]), int(parts[1]), parts[2])
    parts = _ints(item, 4, 4, "schedule")
    return ScheduleTemplate(*(int(p) for p in parts))


def parse_kv(text: str, path: str | None = None) -> list[tuple[int, str, str]]:
    out = []
    for lineno, raw in enumerate(io.StringIO(text), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"expected key = value, got {line!r}", lineno, path)
        key, value = (p.strip() for p in line.split("=", 1))
        out.append((lineno, key, value))
    return out


def config_from_kv(text: str, path: str | None = None, *, strict: bool = False) -> PacerConfig:
    """Read the PacerConfig keys of a key=value file; other keys are ignored unless ``strict``."""
    kw = {}
    for lineno, key, value in parse_kv(text, path):
        if key in _CFG_KEYS:
            try:
                kw[key] = int(value)
            except ValueError:
                raise FormatError(f"{key} must be an integer", lineno, path) from None
        elif strict:
            raise FormatError(f"unknown key {key!r}", lineno, path)
    try:
        return PacerConfig(**kw)
    except ValueError as exc:
        raise FormatError(str(exc), None, path) from None


def parse_scenario(text: str, path: str | None = None) -> Scenario:
    cfg_kw: dict[str, int] = {}
    kw: dict[str, object] = {}
    lists: dict[str, list] = {"requests": [], "losses": [], "schedules": []}
    scalar = {"seed", "epochs", "rtt", "rto", "rwnd", "max_response", "secret"}
    for lineno, key, value in parse_kv(text, path):
        try:
            if key in _CFG_KEYS:
                cfg_kw[key] = int(value)
            elif key in scalar:
                kw[key] = int(value)
            elif key in lists:
                lists[key].extend(_parse_item(key, item) for item in value.split())
            else:
                raise FormatError(f"unknown key {key!r}", lineno, path)
        except (ValueError, TypeError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"{key}: {exc}", lineno, path) from None
    try:
        cfg = PacerConfig(**cfg_kw)
        return Scenario(cfg=cfg, requests=tuple(lists["requests"]), losses=tuple(lists["losses"]),
                        schedules=tuple(lists["schedules"]), **kw)
    except ValueError as exc:
        raise FormatError(str(exc), None, path) from None


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text(), str(path))


def dump_scenario(s: Scenario) -> str:
    lines = [f"{f.name} = {getattr(s.cfg, f.name)}" for f in fields(PacerConfig)]
    for key in ("seed", "epochs", "rtt", "rto", "rwnd", "max_response", "secret"):
        lines.append(f"{key} = {getattr(s, key)}")
    reqs = " ".join(f"{r.time}:{r.flow}:{r.sid}" + ("" if r.authenticated else ":noauth") for r in s.requests)
    lines.append(f"requests = {reqs}")
    lines.append("losses = " + " ".join(f"{x.flow}:{x.seq}:{x.mode}" for x in s.losses))
    lines.append("schedules = " + " ".join(
        f"{t.sid}:{t.initial_delay}:{t.spacing}:{t.count}" for t in s.schedules))
    return "\n".join(lines) + "\n"


def random_scenario(seed: int, *, epochs: int = 200, cfg: PacerConfig | None = None) -> Scenario:
    """A small randomized scenario; the default configuration shrinks the guest bound so runs stay busy."""
    rng = random.Random(seed)
    if cfg is None:
        cfg = PacerConfig(delta_delay=rng.randint(600, 1200), n_flows=rng.randint(1, 3), cwnd=rng.randint(3, 10))
    horizon = epochs * cfg.epsilon
    schedules = []
    for sid in range(rng.randint(2, 3)):
        schedules.append(ScheduleTemplate(
            sid,
            cfg.delta + rng.randint(0, 3) * cfg.epsilon + rng.randint(0, cfg.epsilon - 1),
            rng.randint(1, 3) * cfg.epsilon - rng.randint(0, cfg.epsilon // 2),
            rng.randint(2, 10),
        ))
    sids = [t.sid for t in schedules]
    requests = []
    for flow in cfg.flows():
        t = 0
        for _ in range(rng.randint(1, 4)):
            t += rng.randint(1, max(2, int(horizon * 0.3)))
            if t >= int(horizon * 0.7):
                break
            requests.append(Request(t, flow, rng.choice(sids), rng.random() > 0.1))
    requests.sort()
    losses = []
    for flow in cfg.flows():
        for _ in range(rng.randint(0, 2)):
            losses.append(Loss(flow, rng.randint(1, 15), rng.choice(LOSS_MODES)))
    rtt = rng.randint(50, 800)
    return Scenario(cfg=cfg, seed=seed, epochs=epochs, rtt=rtt, rto=rtt * rng.randint(3, 6),
                    max_response=rng.choice([0, 2000, 20000, 60000]),
                    requests=tuple(requests), losses=tuple(losses), schedules=tuple(schedules),
                    secret=rng.getrandbits(32))


# --- agent state ------------------------------------------------------------

@dataclass
class EnvPublic:
    pending: list[InboundEvent] = field(default_factory=list)
    next_request: int = 0
    consumed: int = 0
    received: dict[int, int] = field(default_factory=dict)


@dataclass
class EnvPrivate:
    request_payloads: list[bytes] = field(default_factory=list)


@dataclass
class GuestPrivate:
    responses: list[tuple[Time, int, bytes]] = field(default_factory=list)
    served: int = 0


@dataclass
class Configuration:
    """The whole system at one epoch boundary ``tg``."""

    cfg: PacerConfig
    db: ScheduleDb
    env_public: EnvPublic
    env_private: EnvPrivate
    guest_private: GuestPrivate
    flows: dict[int, FlowState]
    updates: UpdateQueue = field(default_factory=UpdateQueue)
    q_guest: list[InboundEvent] = field(default_factory=list)
    observed: list[Emission] = field(default_factory=list)
    tg: Time = 0
    epoch: int = 0
    causal_pairs: list[CausalPair] = field(default_factory=list)

    @property
    def schedules(self) -> dict:
        return {f: fs.sched for f, fs in self.flows.items()}

    def trace(self) -> ObservationTrace:
        return trace_project(self.observed)


# --- reference models -------------------------------------------------------

class ReferenceEnv:
    """Client side and network: sends scripted requests, acknowledges every packet, drops scripted ones.

    Everything it emits depends only on public inputs and on what it has
    observed; request payloads are its only secret.
    """

    def __init__(self, scenario: Scenario):
        self.s = scenario

    def init(self) -> tuple[EnvPublic, EnvPrivate]:
        rng = random.Random(f"env:{self.s.secret}")
        payloads = [rng.randbytes(rng.randint(16, 256)) for _ in self.s.requests]
        return EnvPublic(), EnvPrivate(payloads)

    def _observe(self, pub: EnvPublic, em: Emission) -> None:
        pkt = em.packet
        if pkt.kind is PacketKind.ACK:
            return
        pub.received[pkt.flow] = pub.received.get(pkt.flow, 0) + 1
        loss = next((x for x in self.s.losses if x.flow == pkt.flow and x.seq == pkt.seq), None)
        if loss is None:
            pub.pending.append(InboundEvent(em.time + self.s.rtt, pkt.flow, ACK, pkt.seq))
        elif loss.mode == DUPACK:
            for i in range(1, 4):
                pub.pending.append(InboundEvent(em.time + self.s.rtt + i, pkt.flow, ACK, 0))
        else:
            pub.pending.append(InboundEvent(em.time + self.s.rto, pkt.flow, TIMEOUT, pkt.seq))

    def step(self, c: Configuration) -> list[InboundEvent]:
        pub, priv = c.env_public, c.env_private
        for em in c.observed[pub.consumed:]:
            self._observe(pub, em)
        pub.consumed = len(c.observed)
        horizon = c.tg + c.cfg.epsilon
        reqs = self.s.requests
        while pub.next_request < len(reqs) and reqs[pub.next_request].time <= horizon:
            r = reqs[pub.next_request]
            pub.pending.append(InboundEvent(r.time, r.flow, REQUEST, r.sid, r.authenticated,
                                            priv.request_payloads[pub.next_request]))
            pub.next_request += 1
        pub.pending.sort(key=InboundEvent.order)
        n = 0
        while n < len(pub.pending) and pub.pending[n].time <= horizon:
            n += 1
        out, pub.pending = pub.pending[:n], pub.pending[n:]
        return out


class ReferenceGuest:
    """Server side: answers requests after a secret processing delay with a secret-sized response.

    Each update is queued when processing finishes (secret) but takes effect
    at the causing event plus ``delta`` (public), bumped past the host's
    high-water mark.
    """

    def __init__(self, scenario: Scenario):
        self.s = scenario

    def init(self) -> GuestPrivate:
        return GuestPrivate()

    def _rng(self, c: Configuration, ev: InboundEvent) -> random.Random:
        return random.Random(f"guest:{self.s.secret}:{ev.time}:{ev.flow}:{ev.kind}:{ev.arg}:{ev.payload.hex()}")

    def processing_delay(self, c: Configuration, ev: InboundEvent, rng: random.Random) -> Time:
        return rng.randint(0, c.cfg.delta_delay)

    def choose_sid(self, c: Configuration, ev: InboundEvent, rng: random.Random) -> int:
        return ev.arg

    def effective_floor(self, c: Configuration, ev: InboundEvent, delay: Time) -> Time:
        return 0 if c.updates.temax is None else c.updates.temax + 1

    def handle(self, c: Configuration, ev: InboundEvent) -> list:
        fs = c.flows[ev.flow]
        rng = self._rng(c, ev)
        delay = self.processing_delay(c, ev, rng)
        tu = ev.time + delay
        floor = self.effective_floor(c, ev, delay)
        if ev.kind == REQUEST:
            sid = self.choose_sid(c, ev, rng)
            if not ev.authenticated:
                return []
            indicate(fs, sid, ev.time)
            ups = on_request_arrival(fs, ev.time, c.db, c.cfg, sid=sid, queued_at=tu, floor=floor)
            size = rng.randint(0, self.s.max_response)
            c.guest_private.responses.append((tu, ev.flow, rng.randbytes(size)))
            c.guest_private.served += 1
            return ups
        if ev.kind == ACK:
            return on_ack(fs, ev.arg, ev.time, c.cfg, queued_at=tu, floor=floor)
        return on_timeout(fs, ev.time, c.cfg, queued_at=tu, floor=floor)

    def step(self, c: Configuration) -> None:
        horizon = c.tg + c.cfg.epsilon
        events, c.q_guest = c.q_guest, []
        for ev in events:
            if ev.time > horizon:
                raise ConformanceError(f"guest consumed event at {ev.time} beyond {horizon}")
            for upd in self.handle(c, ev):
                if upd.queued_at < ev.time:
                    raise ConformanceError(f"guest queued an update at {upd.queued_at}, before its cause at {ev.time}")
                enqueue_update(c.updates, ev.flow, upd)
        keep = []
        for ready, flow, data in c.guest_private.responses:
            if ready <= horizon:
                enqueue_app_data(c.flows[flow], data, ready)
            else:
                keep.append((ready, flow, data))
        c.guest_private.responses = keep


# --- the composed system ----------------------------------------------------

@dataclass
class Simulation:
    scenario: Scenario
    config: Configuration
    env: ReferenceEnv
    guest: ReferenceGuest
    hypace: HyPace


def build(scenario: Scenario, *, env_cls=ReferenceEnv, guest_cls=ReferenceGuest,
          hypace_cls=HyPace) -> Simulation:
    cfg = scenario.cfg
    db = scenario.db()
    env = env_cls(scenario)
    guest = guest_cls(scenario)
    hyp = hypace_cls(cfg, db, hashed_delay(cfg.delta_xmit), scenario.seed)
    env_pub, env_priv = env.init()
    flows = {f: FlowState.new(f, cfg, rwnd=scenario.rwnd) for f in cfg.flows()}
    c = Configuration(cfg, db, env_pub, env_priv, guest.init(), flows)
    return Simulation(scenario, c, env, guest, hyp)


def step(sim: Simulation) -> Configuration:
    """Advance by one epoch: environment, then guest, then HyPace."""
    c = sim.config
    horizon = c.tg + c.cfg.epsilon
    inbound = sim.env.step(c)
    for ev in inbound:
        if not c.tg < ev.time <= horizon:
            raise ConformanceError(f"environment produced an event at {ev.time} outside ({c.tg}, {horizon}]")
    c.q_guest.extend(inbound)
    try:
        sim.guest.step(c)
    except OrderingViolation as exc:
        raise ConformanceError(f"guest broke update ordering: {exc}") from exc
    out = sim.hypace.step(c.flows, c.updates, horizon, c.epoch, sim.scenario.secret, c.causal_pairs)
    c.observed.extend(out)
    c.tg = horizon
    c.epoch += 1
    if check_i1(c.updates) or check_i2(c.updates):
        raise ConformanceError(f"update queue invariant broken at {c.tg}")
    return c


def run(sim: Simulation, n: int | None = None) -> tuple[Configuration, ObservationTrace]:
    n = sim.scenario.epochs if n is None else n
    if n < 0:
        raise ValueError("n must be >= 0")
    for _ in range(n):
        step(sim)
    return sim.config, sim.config.trace()


def simulate(scenario: Scenario, n: int | None = None) -> ObservationTrace:
    return run(build(scenario), n)[1]


# --- adversary demo ---------------------------------------------------------

def contention_observe(trace: ObservationTrace, probe_rate: float, bottleneck_rate: float, *,
                       probe_size: int = 64, duration: float | None = None) -> np.ndarray:
    """Queueing delay of a constant-rate probe sharing a FIFO bottleneck with the victim trace.

    ``probe_rate`` is probes per tick and ``bottleneck_rate`` bytes per tick.
    On a tie the victim packet is queued first.
    """
    if probe_rate <= 0 or bottleneck_rate <= 0:
        raise ValueError("rates must be positive")
    if duration is None:
        last = trace.events[-1].time if len(trace) else 0
        duration = last + 10 / probe_rate
    n_probes = int(np.floor(duration * probe_rate)) + 1
    probe_times = np.arange(n_probes) / probe_rate
    arrivals = [(e.time, 0, e.wire_size) for e in trace] + [(t, 1, probe_size) for t in probe_times]
    arrivals.sort(key=lambda a: (a[0], a[1]))
    delays = np.empty(n_probes)
    free = 0.0
    k = 0
    for t, is_probe, size in arrivals:
        start = max(t, free)
        free = start + size / bottleneck_rate
        if is_probe:
            delays[k] = start - t
            k += 1
    return delays
