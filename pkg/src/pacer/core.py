"""Shared vocabulary: time, flows, packets, configuration and the adversary's view.

Time is an integer tick count. At the default scale one tick is one
microsecond, so ``PacerConfig()`` carries the microbenchmark constants
(120-tick epochs, 20 000-tick guest processing bound).
"""
from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

Time = int

TIME_MAX = 2**63 - 1
PAD_HEADER = struct.Struct("!H")


class PacerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PacerError, ValueError):
    pass


class TemplateTooEager(ConfigError):
    """A schedule template would fire before the causal-delay floor."""


class PrefixViolation(PacerError):
    """An update tried to rewrite slots at or before its effective time."""


class ConformanceError(PacerError):
    """An environment or guest model broke one of its assumptions."""


class OrderingViolation(ConformanceError):
    """An update was enqueued with an effective time not above the high-water mark."""


class MaskingViolation(PacerError):
    """The transmit handler ran longer than the masking budget."""


class BatchOverflow(PacerError):
    """More packets were due in one epoch than a batch may carry."""


class InsufficientData(PacerError):
    pass


class FormatError(PacerError, ValueError):
    """A line-oriented input file failed to parse."""

    def __init__(self, message: str, lineno: int | None = None, path: str | None = None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


def check_time(value: int, what: str = "time") -> Time:
    if not isinstance(value, int) or isinstance(value, bool):
        raise TypeError(f"{what} must be an integer tick count, got {type(value).__name__}")
    if value < 0:
        raise ValueError(f"{what} must be non-negative, got {value}")
    if value > TIME_MAX:
        raise OverflowError(f"{what} {value} exceeds the 64-bit tick range")
    return value


@dataclass(frozen=True)
class PacerConfig:
    epsilon: Time = 120
    delta_xmit: Time = 35
    delta_delay: Time = 20_000
    batch_max: int = 38
    mtu: int = 1500
    m_payload: int = 1448
    n_flows: int = 1
    cwnd: int = 10

    def __post_init__(self) -> None:
        for name in ("epsilon", "delta_xmit", "delta_delay"):
            check_time(getattr(self, name), name)
        if self.epsilon < 1:
            raise ConfigError("epsilon must be at least one tick")
        if not 0 < self.m_payload < self.mtu:
            raise ConfigError(f"m_payload must lie in (0, mtu), got {self.m_payload}")
        if self.m_payload + PAD_HEADER.size > self.mtu:
            raise ConfigError("mtu leaves no room for the padding header")
        if self.batch_max < 1:
            raise ConfigError("batch_max must be >= 1")
        if self.n_flows < 1:
            raise ConfigError("n_flows must be >= 1")
        if self.cwnd < 1:
            raise ConfigError("cwnd must be >= 1")

    @property
    def delta(self) -> Time:
        """Minimum gap between a causing network event and a transmission it enables."""
        return self.epsilon + self.delta_delay

    def flows(self) -> range:
        return range(1, self.n_flows + 1)

    def check_flow(self, flow: int) -> int:
        if not 1 <= flow <= self.n_flows:
            raise ValueError(f"flow {flow} outside [1, {self.n_flows}]")
        return flow


class PacketKind(enum.Enum):
    PAYLOAD = "payload"
    DUMMY = "dummy"
    ACK = "ack"


@dataclass(frozen=True)
class Packet:
    flow: int
    seq: int
    kind: PacketKind
    wire_size: int
    pad_len: int
    payload: bytes = b""
    queued_at: Time = 0

    @classmethod
    def data(cls, flow: int, seq: int, chunk: bytes, cfg: PacerConfig, queued_at: Time = 0) -> "Packet":
        """Build an MTU-sized packet around ``chunk``; an empty chunk makes a dummy."""
        if len(chunk) > cfg.m_payload:
            raise ValueError(f"chunk of {len(chunk)} bytes exceeds m_payload={cfg.m_payload}")
        kind = PacketKind.PAYLOAD if chunk else PacketKind.DUMMY
        return cls(flow, seq, kind, cfg.mtu, cfg.m_payload - len(chunk), bytes(chunk), queued_at)

    @classmethod
    def ack(cls, flow: int, seq: int, size: int = 52, queued_at: Time = 0) -> "Packet":
        return cls(flow, seq, PacketKind.ACK, size, 0, b"", queued_at)

    def validate(self, cfg: PacerConfig) -> None:
        if self.kind is PacketKind.ACK:
            if self.pad_len != 0 or self.wire_size >= cfg.mtu:
                raise ValueError("ack packets are never padded")
            return
        if self.wire_size != cfg.mtu:
            raise ValueError(f"{self.kind.value} packet has wire_size {self.wire_size} != mtu")
        if self.pad_len + len(self.payload) != cfg.m_payload:
            raise ValueError("pad_len and payload do not fill m_payload")
        if self.kind is PacketKind.DUMMY and self.pad_len != cfg.m_payload:
            raise ValueError("dummy packet carries payload")


def pad_frame(chunk: bytes, cfg: PacerConfig) -> bytes:
    """Encode ``chunk`` as a fixed-length frame: 2-byte pad length, data, zero fill."""
    if len(chunk) > cfg.m_payload:
        raise ValueError("chunk exceeds m_payload")
    pad = cfg.m_payload - len(chunk)
    return PAD_HEADER.pack(pad) + chunk + bytes(pad)


def strip_frame(frame: bytes) -> bytes:
    (pad,) = PAD_HEADER.unpack_from(frame)
    body = frame[PAD_HEADER.size:]
    if pad > len(body):
        raise ValueError("padding header larger than frame")
    return body[: len(body) - pad]


@dataclass(frozen=True)
class Emission:
    """A packet as it leaves the host: the adversary sees only time, flow and size."""

    time: Time
    packet: Packet

    @property
    def flow(self) -> int:
        return self.packet.flow


class TraceEvent(NamedTuple):
    time: Time
    flow: int
    wire_size: int


@dataclass(frozen=True)
class ObservationTrace:
    events: tuple[TraceEvent, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("trace times must be non-decreasing")

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def canonical(self) -> tuple[TraceEvent, ...]:
        return tuple(sorted(self.events))

    def to_csv(self) -> str:
        return "".join(f"{e.time},{e.flow},{e.wire_size}\n" for e in self.events)

    @classmethod
    def from_csv(cls, text: str) -> "ObservationTrace":
        events = []
        for lineno, line in enumerate(io.StringIO(text), 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise FormatError("expected time_ns,flow,wire_size", lineno)
            try:
                events.append(TraceEvent(*(int(p) for p in parts)))
            except ValueError:
                raise FormatError(f"non-integer field in {line!r}", lineno) from None
        return cls(tuple(events))


def trace_project(queue_e: Iterable[Emission]) -> ObservationTrace:
    return ObservationTrace(tuple(TraceEvent(e.time, e.packet.flow, e.packet.wire_size) for e in queue_e))


def trace_equal(a: ObservationTrace, b: ObservationTrace) -> bool:
    # emissions form a set in the model, so order among equal timestamps is irrelevant
    return a.canonical() == b.canonical()
