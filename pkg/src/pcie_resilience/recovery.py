"""Snapshot, compare, flag, interrupt and on-the-fly recovery.

The requester keeps a golden copy of every byte it writes.  The completer's
delivered image is compared against it as data lands; nothing is released
to the downstream consumer until it is present, matches the golden copy and
is not inside a range flagged for repair.  A flagged or missing range is
rewritten from the golden stream one cycle after its interrupt is accepted.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

from .errors import ErrorEvent, Severity
from .ltssm import LinkState, LtssmEvent, ltssm_step

if TYPE_CHECKING:
    from .link import Simulator

log = logging.getLogger(__name__)

# Cycles the non-fatal repair path takes in this model; retrain_cost defaults
# to ten times this.
NONFATAL_REPAIR_CYCLES = 4


class SnapshotStale(RuntimeError):
    pass


class RecoveryMode(enum.Enum):
    Proposed = "proposed"
    Baseline = "baseline"


@dataclass(frozen=True)
class Snapshot:
    cycle: int
    delivered_image: bytes
    next_expected_seq: int
    credit_state: tuple
    golden_cursor: int


@dataclass(frozen=True)
class Mismatch:
    offset: int
    golden_byte: Optional[int]
    observed_byte: int


@dataclass(frozen=True)
class InterruptEvent:
    event: ErrorEvent
    raised_cycle: int
    accepted_cycle: int


@dataclass(frozen=True)
class RecoveryRecord:
    kind: str
    fault_id: Optional[int]
    flag_cycle: int
    accepted_cycle: int
    corrected_cycle: int
    latency_cycles: int
    bytes_corrected: int

    @property
    def flag_to_corrected(self) -> int:
        return self.corrected_cycle - self.flag_cycle


@dataclass(frozen=True)
class Disposition:
    link_down_cycles: int
    recovered: bool


def compare_and_flag(golden: bytes, snapshot: Snapshot) -> Optional[Mismatch]:
    """First offset where the snapshot's delivered window departs from golden."""
    start = snapshot.golden_cursor
    if start > len(golden):
        raise ValueError(f"golden_cursor {start} beyond golden stream ({len(golden)} bytes)")
    image = snapshot.delivered_image
    ref = golden[start:start + len(image)]
    if image == ref:
        return None
    for i, observed in enumerate(image):
        if i >= len(ref):
            return Mismatch(start + i, None, observed)
        if ref[i] != observed:
            return Mismatch(start + i, ref[i], observed)
    return None


class DeliveryTracker:
    """Golden stream, the completer's delivered image and the consumer cursor."""

    def __init__(self):
        self.golden = bytearray()
        self.image = bytearray()
        self.extents: dict[int, int] = {}   # committed, unreleased: offset -> length
        self.flagged: list[tuple[int, int]] = []
        self.cursor = 0
        self.corrupted_delivered = 0

    def append_golden(self, data: bytes) -> int:
        offset = len(self.golden)
        self.golden += data
        return offset

    def read(self, offset: int, length: int) -> bytes:
        out = bytes(self.image[offset:offset + length])
        return out + bytes(length - len(out))

    def _write(self, offset: int, data: bytes) -> None:
        end = offset + len(data)
        if end > len(self.image):
            self.image.extend(bytes(end - len(self.image)))
        self.image[offset:end] = data

    def commit(self, offset: int, data: bytes) -> Optional[Mismatch]:
        """Land a write; returns the first mismatch against golden, flagging its range."""
        if not data:
            return None
        self._write(offset, data)
        end = offset + len(data)
        if end > self.cursor:
            self.extents[offset] = max(self.extents.get(offset, 0), len(data))
        ref = self.golden[offset:end]
        if ref == data:
            return None
        self.flagged.append((offset, end))
        snap = Snapshot(0, bytes(data), 0, (), offset)
        return compare_and_flag(bytes(self.golden), snap)

    def is_flagged(self, start: int, end: int) -> bool:
        return any(a < end and start < b for a, b in self.flagged)

    def flag(self, start: int, end: int) -> None:
        if not self.is_flagged(start, end):
            self.flagged.append((start, end))

    def fill_from_golden(self, start: int, end: int) -> int:
        end = min(end, len(self.golden))
        if end <= start:
            return 0
        self._write(start, bytes(self.golden[start:end]))
        self.flagged = [(a, b) for a, b in self.flagged if not (a < end and start < b)]
        if end > self.cursor:
            self.extents[start] = max(self.extents.get(start, 0), end - start)
        return end - start

    def window(self) -> bytes:
        """Committed bytes contiguous from the cursor, not yet released."""
        pos = self.cursor
        while pos in self.extents:
            pos += self.extents[pos]
        return bytes(self.image[self.cursor:pos])

    def release(self) -> int:
        """Hand contiguous, unflagged bytes to the consumer; returns the count released."""
        released = 0
        while self.cursor in self.extents:
            length = self.extents[self.cursor]
            start, end = self.cursor, self.cursor + length
            if self.is_flagged(start, end):
                break
            del self.extents[start]
            got = self.image[start:end]
            ref = self.golden[start:end]
            if got != ref:
                self.corrupted_delivered += sum(a != b for a, b in zip(got, ref)) + max(0, len(got) - len(ref))
            self.cursor = end
            released += length
        # drop extents that were overtaken by a longer one
        for off in [o for o, n in self.extents.items() if o + n <= self.cursor]:
            del self.extents[off]
        return released

    def consumer_stream(self) -> bytes:
        return bytes(self.image[:self.cursor])


class SnapshotStore:
    """Recent snapshots; only a bounded tail is kept, plus a running count."""

    def __init__(self, keep: int = 64):
        self.recent: deque[Snapshot] = deque(maxlen=keep)
        self.taken = 0

    def add(self, snap: Snapshot) -> None:
        self.recent.append(snap)
        self.taken += 1

    @property
    def latest(self) -> Optional[Snapshot]:
        return self.recent[-1] if self.recent else None


def handle_fatal(event: ErrorEvent, mode: RecoveryMode, link: LinkState,
                 retrain_cost: int) -> tuple[Disposition, LinkState]:
    if event.severity is not Severity.FatalUncorrectable:
        raise ValueError(f"{event.kind.value} is not fatal; it never reaches handle_fatal")
    if mode is RecoveryMode.Proposed:
        return Disposition(0, True), link
    link, _ = ltssm_step(link, LtssmEvent.FatalSeen)
    return Disposition(retrain_cost, True), link


class RecoveryController:
    """Interrupt handling for non-correctable events.

    An event flagged at cycle t is accepted at t+1 and corrected at t+2.
    In baseline mode fatal events retrain the link instead.
    """

    def __init__(self, mode: RecoveryMode = RecoveryMode.Proposed, snapshot_interval: int = 1,
                 retrain_cost: int = 40):
        self.mode = RecoveryMode(mode)
        self.snapshot_interval = snapshot_interval
        self.retrain_cost = retrain_cost
        self.snapshots = SnapshotStore()
        self.pending: list[InterruptEvent] = []
        self.interrupts: list[InterruptEvent] = []
        self.records: list[RecoveryRecord] = []
        self.dispositions: list[tuple[ErrorEvent, Disposition]] = []
        self.stale: list[ErrorEvent] = []

    def raise_interrupt(self, event: ErrorEvent, now: int) -> None:
        if event.severity is Severity.Correctable:
            raise ValueError("correctable events are handled in-layer")
        irq = InterruptEvent(event, now, now + 1)
        self.pending.append(irq)
        self.interrupts.append(irq)

    @property
    def busy(self) -> bool:
        return bool(self.pending)

    def recover(self, sim: "Simulator", snapshot: Optional[Snapshot], irq: InterruptEvent,
                now: int) -> RecoveryRecord:
        if snapshot is None or snapshot.cycle < irq.event.cycle:
            raise SnapshotStale(
                f"latest snapshot at cycle {getattr(snapshot, 'cycle', None)} predates "
                f"corruption at cycle {irq.event.cycle}"
            )
        span = irq.event.context.get("span")
        corrected = sim.tracker.fill_from_golden(span[0], span[0] + span[1]) if span else 0
        return RecoveryRecord(
            irq.event.kind.value, irq.event.attributed_fault, irq.raised_cycle,
            irq.accepted_cycle, now, now - irq.accepted_cycle, corrected,
        )

    def step(self, sim: "Simulator", now: int) -> bool:
        """Advance pending interrupts; returns True when a correction was applied."""
        corrected = False
        still = []
        for irq in self.pending:
            ev = irq.event
            fatal = ev.severity is Severity.FatalUncorrectable
            if now == irq.accepted_cycle and fatal and self.mode is RecoveryMode.Baseline:
                disp, link = handle_fatal(ev, self.mode, sim.link, self.retrain_cost)
                self.dispositions.append((ev, disp))
                sim.start_retrain(link, ev)
            elif now == irq.accepted_cycle + 1:
                try:
                    self.records.append(self.recover(sim, self.snapshots.latest, irq, now))
                    corrected = True
                except SnapshotStale as exc:
                    # no image rewrite: fall back to re-issuing the request
                    log.warning("recovery skipped: %s", exc)
                    self.stale.append(ev)
                    stale = True
                else:
                    stale = False
                if fatal:
                    disp, _ = handle_fatal(ev, self.mode, sim.link, self.retrain_cost)
                    self.dispositions.append((ev, disp))
                    sim.repair(ev)
                    if stale and self.mode is RecoveryMode.Proposed:
                        sim.reissue(ev)
                else:
                    sim.reissue(ev)
                ev.resolved_cycle = now
            else:
                still.append(irq)
        self.pending = still
        return corrected

    def maybe_snapshot(self, sim: "Simulator", now: int, delivered: bool) -> None:
        if delivered or now % self.snapshot_interval == 0:
            self.snapshots.add(sim.snapshot())
