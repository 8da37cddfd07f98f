"""Transmit schedules, the schedule database and time-effective schedule updates.

A schedule is an explicit ascending list of absolute slot times. Updates
carry an effective time and may only change what the schedule does at or
after that time; :func:`apply_update` enforces this by checking the fired
prefix and by construction of each update kind.
"""
from __future__ import annotations

import bisect
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, Union

from .core import (
    ConfigError,
    FormatError,
    OrderingViolation,
    PacerConfig,
    PrefixViolation,
    TemplateTooEager,
    Time,
    check_time,
)

DEFAULT_SID = 0

REQUEST_ARRIVAL = "request_arrival"
ACK_ENABLES = "ack_enables"
TIMER_RETRANSMIT = "timer_retransmit"
CAUSAL_KINDS = (REQUEST_ARRIVAL, ACK_ENABLES, TIMER_RETRANSMIT)


@dataclass(frozen=True)
class CausalRule:
    """A network event and the earliest time a transmission it causes may happen."""

    kind: str
    event_time: Time
    earliest_effect: Time

    @classmethod
    def after(cls, kind: str, event_time: Time, cfg: PacerConfig) -> "CausalRule":
        if kind not in CAUSAL_KINDS:
            raise ValueError(f"unknown causal kind {kind!r}")
        return cls(kind, event_time, event_time + cfg.delta)


class Slot(NamedTuple):
    time: Time
    cause: CausalRule | None = None


class WindowStep(NamedTuple):
    effective_at: Time
    edge: int
    cause: CausalRule | None = None


@dataclass(frozen=True)
class ScheduleTemplate:
    sid: int
    initial_delay: Time
    spacing: Time
    count: int

    def __post_init__(self) -> None:
        check_time(self.initial_delay, "initial_delay")
        check_time(self.spacing, "spacing")
        if self.count < 1:
            raise ConfigError(f"template {self.sid}: count must be >= 1")
        if self.count > 1 and self.spacing < 1:
            raise ConfigError(f"template {self.sid}: spacing must be >= 1 for multi-slot templates")

    @property
    def offsets(self) -> tuple[Time, ...]:
        return tuple(self.initial_delay + k * self.spacing for k in range(self.count))

    def to_line(self) -> str:
        return f"{self.sid},{self.initial_delay},{self.spacing},{self.count}"


class ScheduleDb:
    """Templates keyed by sid; the reserved default sid must be present."""

    def __init__(self, templates: Iterable[ScheduleTemplate], delta: Time):
        self.delta = delta
        self._templates: dict[int, ScheduleTemplate] = {}
        for t in templates:
            if t.sid in self._templates:
                raise ConfigError(f"duplicate sid {t.sid}")
            if t.initial_delay < delta:
                raise TemplateTooEager(
                    f"template {t.sid} fires {t.initial_delay} ticks after its anchor, below delta={delta}"
                )
            self._templates[t.sid] = t
        if DEFAULT_SID not in self._templates:
            raise ConfigError(f"schedule db lacks the default sid {DEFAULT_SID}")

    def __getitem__(self, sid: int) -> ScheduleTemplate:
        try:
            return self._templates[sid]
        except KeyError:
            raise KeyError(f"unknown sid {sid}") from None

    def __contains__(self, sid: object) -> bool:
        return sid in self._templates

    def __iter__(self):
        return iter(sorted(self._templates.values(), key=lambda t: t.sid))

    def __len__(self) -> int:
        return len(self._templates)

    @property
    def default(self) -> ScheduleTemplate:
        return self._templates[DEFAULT_SID]

    def dumps(self) -> str:
        return "".join(t.to_line() + "\n" for t in self)

    @classmethod
    def loads(cls, text: str, cfg: PacerConfig, path: str | None = None) -> "ScheduleDb":
        templates = []
        for lineno, raw in enumerate(io.StringIO(text), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise FormatError("expected sid,initial_delay_ns,spacing_ns,count", lineno, path)
            try:
                sid, init, spacing, count = (int(p) for p in parts)
                templates.append(ScheduleTemplate(sid, init, spacing, count))
            except (ValueError, TypeError) as exc:
                raise FormatError(str(exc), lineno, path) from None
        return cls(templates, cfg.delta)

    @classmethod
    def load(cls, path: str | Path, cfg: PacerConfig) -> "ScheduleDb":
        return cls.loads(Path(path).read_text(), cfg, str(path))


# Update events. Each carries only public information.

@dataclass(frozen=True)
class Install:
    sid: int
    anchor: Time
    cause: CausalRule | None = None


@dataclass(frozen=True)
class Replace:
    sid: int


@dataclass(frozen=True)
class Pause:
    pass


@dataclass(frozen=True)
class Resume:
    edge: int | None = None
    cause: CausalRule | None = None


@dataclass(frozen=True)
class ExtendOne:
    cause: CausalRule | None = None


UpdateEvent = Union[Install, Replace, Pause, Resume, ExtendOne]


@dataclass(frozen=True)
class ScheduleUpdate:
    queued_at: Time
    event: UpdateEvent
    effective_at: Time

    def __post_init__(self) -> None:
        check_time(self.queued_at, "queued_at")
        check_time(self.effective_at, "effective_at")

    @property
    def projection(self) -> tuple[UpdateEvent, Time]:
        """The update without its (possibly secret-dependent) queue time."""
        return (self.event, self.effective_at)


@dataclass(frozen=True)
class TransmitSchedule:
    """Slot calendar plus the congestion-window edge history HyPace gates on.

    ``cursor`` counts slots already transmitted; every slot before it is in
    the past. Slots later than ``paused_at`` are held until a Resume.
    """

    sid: int | None
    anchor: Time
    slots: tuple[Slot, ...] = ()
    spacing: Time = 1
    cursor: int = 0
    paused_at: Time | None = None
    pause_shift: Time = 0
    base_edge: int = 0
    windows: tuple[WindowStep, ...] = ()
    instance_start: int = 0

    @classmethod
    def idle(cls, base_edge: int) -> "TransmitSchedule":
        return cls(sid=None, anchor=0, base_edge=base_edge)

    @property
    def times(self) -> tuple[Time, ...]:
        return tuple(s.time for s in self.slots)

    @property
    def offsets(self) -> tuple[Time, ...]:
        return tuple(s.time - self.anchor for s in self.slots[self.instance_start:])

    def held(self, slot_time: Time) -> bool:
        return self.paused_at is not None and slot_time > self.paused_at

    def visible_until(self, t: Time) -> tuple[Time, ...]:
        """Slot times scheduled at or before ``t``; held slots are not scheduled."""
        out = []
        for s in self.slots:
            if s.time > t:
                break
            if not self.held(s.time):
                out.append(s.time)
        return tuple(out)

    def windows_until(self, t: Time) -> tuple[tuple[Time, int], ...]:
        return tuple((w.effective_at, w.edge) for w in self.windows if w.effective_at <= t)

    def restrict(self, t: Time) -> tuple:
        """Everything this schedule determines about transmissions up to ``t``."""
        return (self.base_edge, self.visible_until(t), self.windows_until(t))

    def edge_at(self, t: Time) -> int:
        i = bisect.bisect_right(self.windows, t, key=lambda w: w.effective_at)
        return self.windows[i - 1].edge if i else self.base_edge

    def window_step_at(self, t: Time) -> tuple[WindowStep | None, int]:
        """The window step in force at ``t`` and the edge that preceded it."""
        i = bisect.bisect_right(self.windows, t, key=lambda w: w.effective_at)
        if not i:
            return None, self.base_edge
        return self.windows[i - 1], (self.windows[i - 2].edge if i > 1 else self.base_edge)

    def due(self, now: Time) -> int:
        """Number of un-fired, un-held slots at or before ``now`` (backlog included)."""
        n = 0
        for s in self.slots[self.cursor:]:
            if s.time > now or self.held(s.time):
                break
            n += 1
        return n

    def next_slot(self) -> Time | None:
        if self.cursor >= len(self.slots):
            return None
        t = self.slots[self.cursor].time
        return None if self.held(t) else t

    def advance(self, n: int = 1) -> "TransmitSchedule":
        if self.cursor + n > len(self.slots):
            raise ValueError("cannot fire past the end of the schedule")
        return replace(self, cursor=self.cursor + n)


def _ceil_to(value: int, quantum: int) -> int:
    return -(-value // quantum) * quantum


def instantiate(template: ScheduleTemplate, anchor: Time, base_edge: int,
                cause: CausalRule | None = None) -> TransmitSchedule:
    return TransmitSchedule(
        sid=template.sid,
        anchor=anchor,
        slots=tuple(Slot(anchor + o, cause) for o in template.offsets),
        spacing=template.spacing,
        base_edge=base_edge,
    )


def instantiate_default(db: ScheduleDb, flow: int, arrival: Time, cfg: PacerConfig) -> TransmitSchedule:
    cfg.check_flow(flow)
    template = db.default
    if template.initial_delay < cfg.delta:
        raise TemplateTooEager(f"default template fires before delta={cfg.delta}")
    cause = CausalRule.after(REQUEST_ARRIVAL, arrival, cfg)
    return instantiate(template, check_time(arrival, "arrival"), cfg.cwnd, cause)


def _check_fired_before(sched: TransmitSchedule, effective_at: Time, what: str) -> None:
    if sched.cursor and sched.slots[sched.cursor - 1].time >= effective_at:
        raise PrefixViolation(
            f"{what} effective at {effective_at} would rewrite slot {sched.slots[sched.cursor - 1].time} "
            "that has already been transmitted"
        )


def _apply(sched: TransmitSchedule, event: UpdateEvent, te: Time, db: ScheduleDb | None,
           quantum: int) -> TransmitSchedule:
    if isinstance(event, Install):
        if db is None:
            raise ValueError("Install needs a schedule database")
        _check_fired_before(sched, te, "Install")
        template = db[event.sid]
        # keep everything strictly before te; the new instance starts no earlier than te
        keep = bisect.bisect_left(sched.slots, te, key=lambda s: s.time)
        anchor = max(event.anchor, te - template.initial_delay)
        fresh = tuple(Slot(anchor + o, event.cause) for o in template.offsets)
        return replace(sched, sid=event.sid, anchor=anchor, spacing=template.spacing,
                       slots=sched.slots[:keep] + fresh, instance_start=keep)

    if isinstance(event, Replace):
        if db is None:
            raise ValueError("Replace needs a schedule database")
        if sched.sid is None:
            raise PrefixViolation("Replace on a flow without an active schedule")
        _check_fired_before(sched, te, "Replace")
        template = db[event.sid]
        old = sched.slots[sched.instance_start:]
        new = tuple(Slot(sched.anchor + o, old[0].cause if old else None) for o in template.offsets)
        if [s.time for s in old if s.time < te] != [s.time for s in new if s.time < te]:
            raise PrefixViolation(
                f"Replace({event.sid}) at {te} disagrees with the played-out prefix of sid {sched.sid}"
            )
        # slots before te stay as they were, including their causes
        n_before = sum(1 for s in old if s.time < te)
        merged = old[:n_before] + new[n_before:]
        return replace(sched, sid=event.sid, spacing=template.spacing,
                       slots=sched.slots[: sched.instance_start] + merged)

    if isinstance(event, Pause):
        if sched.paused_at is not None:
            return sched
        _check_fired_before(sched, te, "Pause")
        return replace(sched, paused_at=te)

    if isinstance(event, Resume):
        out = sched
        if event.edge is not None:
            at = bisect.bisect_right(out.windows, te, key=lambda w: w.effective_at)
            step = WindowStep(te, event.edge, event.cause)
            out = replace(out, windows=out.windows[:at] + (step,) + out.windows[at:])
        if out.paused_at is not None:
            shift = _ceil_to(max(te - out.paused_at, 0), quantum)
            slots = tuple(Slot(s.time + shift, s.cause) if s.time > out.paused_at else s for s in out.slots)
            out = replace(out, slots=slots, paused_at=None, pause_shift=out.pause_shift + shift)
        return out

    if isinstance(event, ExtendOne):
        last = sched.slots[-1].time if sched.slots else None
        at = te if last is None else max(last + max(sched.spacing, 1), te)
        return replace(sched, slots=sched.slots + (Slot(at, event.cause),))

    raise TypeError(f"unknown update event {event!r}")


def apply_update(sched: TransmitSchedule, upd: ScheduleUpdate, *, db: ScheduleDb | None = None,
                 quantum: int = 1) -> TransmitSchedule:
    """Apply one update; the result agrees with ``sched`` on everything before its effective time.

    ``quantum`` is the epoch length: a Resume shifts held slots by the paused
    duration rounded up to a whole number of epochs.
    """
    if upd.queued_at > upd.effective_at:
        raise OrderingViolation(f"update queued at {upd.queued_at} after its effective time {upd.effective_at}")
    return _apply(sched, upd.event, upd.effective_at, db, quantum)


def update(sched: TransmitSchedule, projected: Sequence[tuple[UpdateEvent, Time]], *,
           db: ScheduleDb | None = None, quantum: int = 1) -> TransmitSchedule:
    """Fold projected (event, effective_at) updates into ``sched`` in order."""
    out = sched
    for event, te in projected:
        out = _apply(out, event, te, db, quantum)
    return out


@dataclass
class UpdateQueue:
    """Per-flow pending updates, each list ascending by effective time."""

    pending: dict[int, list[ScheduleUpdate]] = field(default_factory=dict)
    temax: Time | None = None

    def for_flow(self, flow: int) -> list[ScheduleUpdate]:
        return self.pending.setdefault(flow, [])

    def projection(self, flow: int) -> list[tuple[UpdateEvent, Time]]:
        return [u.projection for u in self.pending.get(flow, ())]

    def all_updates(self) -> Iterable[ScheduleUpdate]:
        for flow in sorted(self.pending):
            yield from self.pending[flow]

    def __len__(self) -> int:
        return sum(len(v) for v in self.pending.values())


def enqueue_update(q: UpdateQueue, flow: int, upd: ScheduleUpdate) -> UpdateQueue:
    if upd.queued_at > upd.effective_at:
        raise OrderingViolation(
            f"flow {flow}: update queued at {upd.queued_at} is effective earlier, at {upd.effective_at}"
        )
    if q.temax is not None and upd.effective_at <= q.temax:
        raise OrderingViolation(
            f"flow {flow}: effective time {upd.effective_at} does not exceed temax={q.temax}"
        )
    q.for_flow(flow).append(upd)
    q.temax = upd.effective_at
    return q


def update_prof(sched: TransmitSchedule, u: Sequence[ScheduleUpdate], now: Time, *,
                db: ScheduleDb | None = None, quantum: int = 1) -> tuple[TransmitSchedule, list[ScheduleUpdate]]:
    """Apply the leading updates that were queued by ``now``; stop at the first one that was not."""
    i = 0
    while i < len(u) and u[i].queued_at <= now:
        i += 1
    out = sched
    for upd in u[:i]:
        out = apply_update(out, upd, db=db, quantum=quantum)
    return out, list(u[i:])


def check_i1(q: UpdateQueue) -> list[ScheduleUpdate]:
    """Updates violating queued_at <= effective_at."""
    return [u for u in q.all_updates() if u.queued_at > u.effective_at]


def check_i2(q: UpdateQueue) -> list[ScheduleUpdate]:
    """Updates whose effective time exceeds the high-water mark."""
    if q.temax is None:
        return list(q.all_updates())
    return [u for u in q.all_updates() if u.effective_at > q.temax]
