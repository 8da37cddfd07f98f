"""Per-flow tunnel state and the guest-side handlers that turn network events into schedule updates.

Handlers never change what HyPace transmits directly. Everything that
affects transmission timing leaves here as a :class:`ScheduleUpdate` whose
effective time is at least ``delta`` after the network event that caused
it, so the guest's own processing time cannot show on the wire.
"""
from __future__ import annotations

import io
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from .core import FormatError, Packet, PacerConfig, Time
from .schedule import (
    ACK_ENABLES,
    DEFAULT_SID,
    REQUEST_ARRIVAL,
    TIMER_RETRANSMIT,
    CausalRule,
    ExtendOne,
    Install,
    Resume,
    ScheduleDb,
    ScheduleUpdate,
    TransmitSchedule,
)

IN_PKT = "in_pkt"
OUT_READY = "out_ready"
INDICATOR = "indicator"
LOG_EVENTS = (IN_PKT, OUT_READY, INDICATOR)


class LogRecord(NamedTuple):
    ts: Time
    flow: int
    event: str
    arg: int

    def to_line(self) -> str:
        return f"{self.ts},{self.flow},{self.event},{self.arg}"


def dump_log(records: Iterable[LogRecord]) -> str:
    return "".join(r.to_line() + "\n" for r in records)


def parse_log(text: str, path: str | None = None) -> list[LogRecord]:
    out = []
    for lineno, raw in enumerate(io.StringIO(text), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise FormatError("expected ts_ns,flow,event,arg", lineno, path)
        ts, flow, event, arg = parts
        if event not in LOG_EVENTS:
            raise FormatError(f"unknown event {event!r}", lineno, path)
        try:
            rec = LogRecord(int(ts), int(flow), event, int(arg))
        except ValueError:
            raise FormatError(f"non-integer field in {line!r}", lineno, path) from None
        if rec.ts < 0:
            raise FormatError("negative timestamp", lineno, path)
        out.append(rec)
    return out


def load_log(path: str | Path) -> list[LogRecord]:
    return parse_log(Path(path).read_text(), str(path))


@dataclass
class FlowState:
    """The per-flow region shared between the guest and HyPace.

    ``cwnd_right_edge`` is the guest transport's view. HyPace never reads it
    directly; it gates on the edge carried by Resume updates, which take
    effect only at their public effective time.
    """

    flow: int
    sched: TransmitSchedule
    tuple5: tuple = ()
    next_seq: int = 1
    cwnd_right_edge: int = 0
    rwnd: int = 1 << 30
    outbound: bytearray = field(default_factory=bytearray)
    pkt_queue: deque = field(default_factory=deque)
    key_installed: bool = True
    acked: set = field(default_factory=set)
    unacked: dict = field(default_factory=dict)
    dup_seq: int = -1
    dup_count: int = 0
    log: list = field(default_factory=list)

    @classmethod
    def new(cls, flow: int, cfg: PacerConfig, **kw) -> "FlowState":
        cfg.check_flow(flow)
        return cls(flow=flow, sched=TransmitSchedule.idle(cfg.cwnd), cwnd_right_edge=cfg.cwnd, **kw)

    def public_view(self) -> tuple:
        """State that must not depend on secrets; payload bytes are excluded."""
        return (
            self.flow,
            self.next_seq,
            self.cwnd_right_edge,
            self.key_installed,
            tuple(sorted(self.acked)),
            tuple(sorted(self.unacked)),
            self.dup_seq,
            self.dup_count,
        )


def _stamp(rules_and_events: list[tuple[CausalRule, object]], queued_at: Time, floor: Time) -> list[ScheduleUpdate]:
    # effective times must strictly increase; floor is one past the current high-water mark
    out = []
    te_prev = floor - 1
    for rule, event in rules_and_events:
        te = max(rule.earliest_effect, te_prev + 1)
        out.append(ScheduleUpdate(queued_at, event, te))
        te_prev = te
    return out


def enqueue_app_data(fs: FlowState, data: bytes, now: Time) -> FlowState:
    fs.outbound += data
    fs.log.append(LogRecord(now, fs.flow, OUT_READY, len(data)))
    return fs


def indicate(fs: FlowState, sid: int, now: Time) -> None:
    """Record an application traffic indicator for the profiler."""
    fs.log.append(LogRecord(now, fs.flow, INDICATOR, sid))


def make_next_packet(fs: FlowState, cfg: PacerConfig, now: Time = 0) -> Packet:
    """Cut the next MTU packet from the outbound queue, padding as needed.

    The chunk is limited by available bytes, the receiver window and
    ``m_payload``; an empty chunk yields a dummy. The receiver window is
    read, not consumed: it only decides how much payload rides along.
    """
    take = min(len(fs.outbound), max(fs.rwnd, 0), cfg.m_payload)
    chunk = bytes(fs.outbound[:take])
    del fs.outbound[:take]
    pkt = Packet.data(fs.flow, fs.next_seq, chunk, cfg, queued_at=now)
    fs.next_seq += 1
    return pkt


def on_request_arrival(fs: FlowState, arrival: Time, db: ScheduleDb, cfg: PacerConfig, *,
                       authenticated: bool = True, sid: int = DEFAULT_SID,
                       queued_at: Time | None = None, floor: Time = 0) -> list[ScheduleUpdate]:
    """Start a new exchange: instantiate the template for ``sid`` anchored at the arrival.

    Unauthenticated packets are dropped without a trace: no log record, no update.
    """
    if not (authenticated and fs.key_installed):
        return []
    db[sid]  # unknown sids fail here, not inside HyPace
    fs.log.append(LogRecord(arrival, fs.flow, IN_PKT, 1))
    rule = CausalRule.after(REQUEST_ARRIVAL, arrival, cfg)
    return _stamp([(rule, Install(sid, arrival, rule))], arrival if queued_at is None else queued_at, floor)


def _retransmit(fs: FlowState) -> bool:
    if not fs.unacked:
        return False
    seq = min(fs.unacked)
    payload = fs.unacked.pop(seq)
    if payload:
        fs.pkt_queue.appendleft(payload)
    # the lost transmission no longer occupies the window
    fs.cwnd_right_edge += 1
    return True


def on_ack(fs: FlowState, ack_seq: int, arrival: Time, cfg: PacerConfig, *,
           queued_at: Time | None = None, floor: Time = 0) -> list[ScheduleUpdate]:
    """Process one acknowledgement of transmission ``ack_seq``.

    A new ACK advances the window edge by one packet. The third duplicate of
    an already-acknowledged sequence number triggers a retransmission and a
    one-slot extension. Either way HyPace hears about it through updates
    effective no earlier than ``arrival + delta``.
    """
    fs.log.append(LogRecord(arrival, fs.flow, IN_PKT, 0))
    rule = CausalRule.after(ACK_ENABLES, arrival, cfg)
    tu = arrival if queued_at is None else queued_at
    if ack_seq > 0 and ack_seq not in fs.acked and ack_seq < fs.next_seq:
        fs.acked.add(ack_seq)
        fs.unacked.pop(ack_seq, None)
        fs.cwnd_right_edge += 1
        fs.dup_seq, fs.dup_count = ack_seq, 0
        return _stamp([(rule, Resume(fs.cwnd_right_edge, rule))], tu, floor)
    if ack_seq == 0 or ack_seq in fs.acked:
        if ack_seq != fs.dup_seq:
            fs.dup_seq, fs.dup_count = ack_seq, 0
        fs.dup_count += 1
        if fs.dup_count % 3 == 0 and _retransmit(fs):
            return _stamp([(rule, ExtendOne(rule)), (rule, Resume(fs.cwnd_right_edge, rule))], tu, floor)
    return []


def on_timeout(fs: FlowState, fire_time: Time, cfg: PacerConfig, *,
               queued_at: Time | None = None, floor: Time = 0) -> list[ScheduleUpdate]:
    """Retransmit the oldest unacknowledged transmission after a timer fires."""
    if not _retransmit(fs):
        return []
    rule = CausalRule.after(TIMER_RETRANSMIT, fire_time, cfg)
    tu = fire_time if queued_at is None else queued_at
    return _stamp([(rule, ExtendOne(rule)), (rule, Resume(fs.cwnd_right_edge, rule))], tu, floor)
