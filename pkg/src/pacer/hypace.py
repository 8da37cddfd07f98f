"""Epoch-batched transmission with handler-delay masking.

Each call to :meth:`HyPace.step` handles the epoch ending at ``tg``: it
applies the updates that reached it by ``tg``, then emits one packet for
every slot due at or before ``tg`` whose flow has window room, all stamped
at ``tg`` itself. Slots blocked by a closed window stay due and are
re-checked next epoch.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .core import BatchOverflow, Emission, MaskingViolation, Packet, PacerConfig, Time, check_time
from .schedule import ScheduleDb, UpdateQueue, update_prof
from .tunnel import FlowState, make_next_packet

HandlerDelay = Callable[[int, int, int], Time]


def no_delay(seed: int, epoch: int, secret_tag: int) -> Time:
    return 0


def constant_delay(value: Time) -> HandlerDelay:
    def model(seed: int, epoch: int, secret_tag: int) -> Time:
        return value
    return model


def hashed_delay(bound: Time) -> HandlerDelay:
    """A secret-dependent delay in ``[0, bound]``, deterministic in its inputs."""
    def model(seed: int, epoch: int, secret_tag: int) -> Time:
        h = hashlib.blake2b(f"{seed}:{epoch}:{secret_tag}".encode(), digest_size=8).digest()
        return int.from_bytes(h, "big") % (bound + 1)
    return model


class CausalPair(NamedTuple):
    kind: str
    flow: int
    cause: Time
    effect: Time


class HyPace:
    """Transmission policy for one host. Subclasses in the mutation suite override the hooks."""

    def __init__(self, cfg: PacerConfig, db: ScheduleDb, delay_model: HandlerDelay = no_delay, seed: int = 0):
        self.cfg = cfg
        self.db = db
        self.delay_model = delay_model
        self.seed = seed

    def handler_delay(self, epoch: int, secret_tag: int) -> Time:
        delay = check_time(self.delay_model(self.seed, epoch, secret_tag), "handler delay")
        if delay > self.cfg.delta_xmit:
            raise MaskingViolation(
                f"epoch {epoch}: handler delay {delay} exceeds delta_xmit={self.cfg.delta_xmit}"
            )
        return delay

    def stamp(self, tg: Time, delay: Time) -> Time:
        # spinning until the boundary hides however long preparation took
        return tg

    def packet(self, fs: FlowState, now: Time) -> Packet | None:
        if fs.pkt_queue:
            chunk = fs.pkt_queue.popleft()
            pkt = Packet.data(fs.flow, fs.next_seq, chunk, self.cfg, queued_at=now)
            fs.next_seq += 1
            return pkt
        return make_next_packet(fs, self.cfg, now)

    def apply_updates(self, flows: dict[int, FlowState], updates: UpdateQueue, tg: Time) -> None:
        for flow in sorted(flows):
            fs = flows[flow]
            pending = updates.pending.get(flow)
            if pending:
                fs.sched, rest = update_prof(fs.sched, pending, tg, db=self.db, quantum=self.cfg.epsilon)
                updates.pending[flow] = rest

    def emit(self, flows: dict[int, FlowState], tg: Time, delay: Time,
             pairs: list[CausalPair] | None = None) -> list[Emission]:
        plan = []
        for flow in sorted(flows):
            fs = flows[flow]
            room = max(0, fs.sched.edge_at(tg) - fs.next_seq + 1)
            n = min(fs.sched.due(tg), room)
            if n:
                plan.append((fs, n))
        total = sum(n for _, n in plan)
        if total > self.cfg.batch_max:
            raise BatchOverflow(f"{total} packets due at {tg}, batch_max={self.cfg.batch_max}")
        at = self.stamp(tg, delay)
        out = []
        for fs, n in plan:
            step, prev_edge = fs.sched.window_step_at(tg)
            for i in range(n):
                slot = fs.sched.slots[fs.sched.cursor + i]
                pkt = self.packet(fs, tg)
                if pkt is None:
                    continue
                fs.unacked[pkt.seq] = pkt.payload
                out.append(Emission(at, pkt))
                if pairs is not None:
                    if slot.cause is not None:
                        pairs.append(CausalPair(slot.cause.kind, fs.flow, slot.cause.event_time, at))
                    if step is not None and step.cause is not None and pkt.seq > prev_edge:
                        pairs.append(CausalPair(step.cause.kind, fs.flow, step.cause.event_time, at))
            fs.sched = fs.sched.advance(n)
        return out

    def step(self, flows: dict[int, FlowState], updates: UpdateQueue, tg: Time, epoch: int,
             secret_tag: int = 0, pairs: list[CausalPair] | None = None) -> list[Emission]:
        delay = self.handler_delay(epoch, secret_tag)
        self.apply_updates(flows, updates, tg)
        return self.emit(flows, tg, delay, pairs)


@dataclass
class EpochEngine:
    """A standalone host: flows, their pending updates and the epoch clock."""

    cfg: PacerConfig
    db: ScheduleDb
    flows: dict[int, FlowState] = field(default_factory=dict)
    updates: UpdateQueue = field(default_factory=UpdateQueue)
    now: Time = 0
    epoch: int = 0
    handler_delay_model: HandlerDelay = no_delay
    seed: int = 0
    secret_tag: int = 0
    causal_pairs: list[CausalPair] = field(default_factory=list)
    hypace: HyPace | None = None

    def __post_init__(self) -> None:
        if not self.flows:
            self.flows = {f: FlowState.new(f, self.cfg) for f in self.cfg.flows()}
        if self.hypace is None:
            self.hypace = HyPace(self.cfg, self.db, self.handler_delay_model, self.seed)


def run_epoch(e: EpochEngine) -> list[Emission]:
    """Handle the epoch ``(now, now + epsilon]``; its packets leave at the closing boundary."""
    tg = e.now + e.cfg.epsilon
    out = e.hypace.step(e.flows, e.updates, tg, e.epoch, e.secret_tag, e.causal_pairs)
    e.now = tg
    e.epoch += 1
    return out


def peek_next_slot(e: EpochEngine) -> tuple[int, Time] | None:
    best = None
    for flow in sorted(e.flows):
        t = e.flows[flow].sched.next_slot()
        if t is not None and (best is None or t < best[1]):
            best = (flow, t)
    return best
