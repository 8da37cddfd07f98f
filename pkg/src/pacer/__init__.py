"""Schedule-driven traffic shaping: padded and dummy transmission on public calendars,
an executable model of host, guest and network, and the tooling that builds schedules.
"""
from .core import (
    BatchOverflow,
    ConfigError,
    ConformanceError,
    Emission,
    FormatError,
    InsufficientData,
    MaskingViolation,
    ObservationTrace,
    OrderingViolation,
    Packet,
    PacketKind,
    PacerConfig,
    PacerError,
    PrefixViolation,
    TemplateTooEager,
    TraceEvent,
    pad_frame,
    strip_frame,
    trace_equal,
    trace_project,
)
from .hypace import EpochEngine, HyPace, peek_next_slot, run_epoch
from .schedule import (
    ScheduleDb,
    ScheduleTemplate,
    ScheduleUpdate,
    TransmitSchedule,
    UpdateQueue,
    apply_update,
    enqueue_update,
    instantiate_default,
    update_prof,
)

__version__ = "0.1.0"
