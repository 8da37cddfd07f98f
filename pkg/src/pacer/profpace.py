"""Profile guest event logs and synthesize transmit-schedule templates.

A log is split per flow into exchanges. An exchange opens on an inbound
request (``in_pkt`` with arg 1) or on an indicator that arrives after the
open exchange has already answered. Each ``out_ready`` record counts as one
response packet. From the exchanges of one sid we estimate the initial
delay, the inter-packet gap and the packet count, and turn high percentiles
of each into a template.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .core import InsufficientData, PacerConfig, Time
from .schedule import DEFAULT_SID, ScheduleTemplate
from .tunnel import IN_PKT, INDICATOR, OUT_READY, LogRecord


@dataclass
class Segment:
    sid: int
    flow: int
    start: Time
    d_i: Time = 0
    d_s: list[Time] = field(default_factory=list)
    p: int = 0
    _last: Time | None = field(default=None, repr=False, compare=False)

    def add_response(self, ts: Time) -> None:
        if self._last is None:
            self.d_i = ts - self.start
        else:
            self.d_s.append(ts - self._last)
        self._last = ts
        self.p += 1


def segment_logs(log: Iterable[LogRecord]) -> list[Segment]:
    """Split a log into exchanges; exchanges without an indicator get the default sid.

    A segment that never answered has ``p == 0`` and ``d_i == 0``.
    """
    done: list[Segment] = []
    open_: dict[int, Segment] = {}
    last_ts: dict[int, Time] = {}
    for rec in log:
        if rec.ts < last_ts.get(rec.flow, 0):
            raise ValueError(f"flow {rec.flow}: log goes back in time at {rec.ts}")
        last_ts[rec.flow] = rec.ts
        cur = open_.get(rec.flow)
        if rec.event == IN_PKT:
            if rec.arg != 1:
                continue
            if cur is not None:
                done.append(cur)
            open_[rec.flow] = Segment(DEFAULT_SID, rec.flow, rec.ts)
        elif rec.event == INDICATOR:
            if cur is not None and cur.p == 0:
                cur.sid = rec.arg
            else:
                if cur is not None:
                    done.append(cur)
                open_[rec.flow] = Segment(rec.arg, rec.flow, rec.ts)
        elif rec.event == OUT_READY and cur is not None:
            cur.add_response(rec.ts)
    done.extend(open_.values())
    done.sort(key=lambda s: (s.start, s.flow))
    return done


def percentile(samples: Sequence[int], q: float | Fraction) -> int:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest sample."""
    if not samples:
        raise InsufficientData("percentile of an empty sample set")
    q = Fraction(q)
    if not 0 < q <= 100:
        raise ValueError(f"percentile rank must lie in (0, 100], got {q}")
    rank = max(1, math.ceil(q * len(samples) / 100))
    return sorted(samples)[rank - 1]


def synthesize(segments: Sequence[Segment], cfg: PacerConfig) -> ScheduleTemplate:
    sids = {s.sid for s in segments}
    if len(sids) > 1:
        raise ValueError(f"segments mix sids {sorted(sids)}")
    answered = [s for s in segments if s.p >= 1]
    if not answered:
        raise InsufficientData(f"sid {next(iter(sids), '?')}: no segment with a response")
    initial = max(percentile([s.d_i for s in answered], 99), cfg.delta)
    gaps = [g for s in answered for g in s.d_s]
    # single-packet exchanges leave no gaps to learn from
    spacing = max(percentile(gaps, 90), 1) if gaps else cfg.epsilon
    max_p = max(s.p for s in segments)
    return ScheduleTemplate(answered[0].sid, initial, spacing, (11 * max_p + 9) // 10)


def profile(log: Iterable[LogRecord], cfg: PacerConfig) -> tuple[list[ScheduleTemplate], list[str]]:
    """Templates for every sid with enough data, plus warnings for the ones skipped."""
    by_sid: dict[int, list[Segment]] = defaultdict(list)
    for s in segment_logs(log):
        by_sid[s.sid].append(s)
    if not by_sid:
        raise InsufficientData("log contains no exchanges")
    templates, warnings = [], []
    for sid in sorted(by_sid):
        try:
            templates.append(synthesize(by_sid[sid], cfg))
        except InsufficientData as exc:
            warnings.append(f"skipping sid {sid}: {exc}")
    if not any(t.sid == DEFAULT_SID for t in templates):
        templates.insert(0, ScheduleTemplate(DEFAULT_SID, cfg.delta, cfg.epsilon, cfg.cwnd))
        warnings.append(f"no usable exchanges for default sid {DEFAULT_SID}; using a fallback template")
    return templates, warnings
