"""Cycle-driven three-layer link between a requester and a completer.

Each direction (a *lane*) is a six-stage pipeline, one cycle per stage::

    TX TL -> TX DL -> TX PL -> RX PL -> RX DL -> RX TL
      r1       r2       r3       r4       r5

``r1``..``r5`` are the output registers of the first five stages; RX TL
consumes ``r5``.  Stages are evaluated back to front so every item moves at
most one stage per tick.  DLLPs (Ack/Nak/FcUpdate) travel back from the
receiver to the transmitter with a fixed latency.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Optional

from .errors import AerRegisters, ErrorEvent, ErrorKind, Severity, aer_record
from .ltssm import LinkState, Ltssm, LtssmEvent, TRAINING_STATES, ltssm_step
from .packet import (
    HEADER_LEN, SEQ_MOD, DlFrame, Dllp, DllpKind, Malformed, Tlp, TlpKind,
    frame_bytes, make_dllp, make_tlp, parse_tlp, seq_delta, serialize_tlp,
)
from .recovery import DeliveryTracker, RecoveryController, Snapshot, compare_and_flag

log = logging.getLogger(__name__)

GOLDEN_BASE = 0x1000_0000
ABORT_BASE = 0xFFFF_0000_0000
ABORT_SIZE = 0x1_0000


class LinkDown(RuntimeError):
    pass


class NoFreeTag(RuntimeError):
    pass


@dataclass
class LinkConfig:
    completion_timeout_cycles: int = 1024
    replay_timeout_cycles: int = 64
    retrain_cost: int = 40
    replay_capacity: int = 32
    hdr_credits: int = 8
    data_credits_dw: int = 256
    fc_update_interval: int = 16
    fc_deadline: int = 512
    dllp_latency: int = 3
    accept_msgs: bool = False


def credit_cost(raw: bytes) -> tuple[int, int]:
    """Credits for a serialized TLP: one header plus every DW past the header.

    Counted from the byte length so both ends agree even when the header is
    unreadable.
    """
    return 1, max(0, len(raw) - HEADER_LEN) // 4


@dataclass
class Flit:
    """A TLP on its way through a lane, with simulation bookkeeping.

    ``span`` is the golden-stream range a write covers, ``origin`` the request
    as the requester issued it, ``fault_id`` the fault that touched it.
    """

    raw: bytes
    origin: Optional[Tlp] = None
    frame: Optional[DlFrame] = None
    span: Optional[tuple[int, int]] = None
    fault_id: Optional[int] = None
    symbol_error: bool = False
    dummy: bool = False


@dataclass
class Outstanding:
    submit_cycle: int
    kind: TlpKind
    request: Tlp
    timeout_at: Optional[int] = None    # armed when the request leaves TX TL
    fault_id: Optional[int] = None


class DlResult(enum.Enum):
    Accept = "Accept"
    Nak = "Nak"
    Duplicate = "Duplicate"


class ReplayBuffer:
    def __init__(self, capacity: int = 32):
        self.capacity = capacity
        self.entries: dict[int, Flit] = {}    # seq -> flit, oldest first
        self.timer_start: Optional[int] = None

    def __len__(self):
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def add(self, flit: Flit, now: int) -> None:
        if not self.entries:
            self.timer_start = now
        self.entries[flit.frame.seq_num] = flit

    def purge_through(self, seq: int) -> int:
        n = 0
        while self.entries:
            head = next(iter(self.entries))
            if seq_delta(seq, head) < 0:
                break
            del self.entries[head]
            n += 1
        return n


class Endpoint:
    def __init__(self, name: str, requester_id: int, config: LinkConfig):
        self.name = name
        self.requester_id = requester_id
        self.config = config
        # transmit side
        self.tx_queue: deque[Flit] = deque()
        self.next_seq = 0
        self.replay = ReplayBuffer(config.replay_capacity)
        self.replay_queue: deque[Flit] = deque()
        self.consumed = [0, 0]
        self.limit = [config.hdr_credits, config.data_credits_dw]
        self.last_fc_cycle = 0
        self.fc_error_raised = False
        self.drop_ack_fault: Optional[int] = None
        self.fc_suppress_fault: Optional[int] = None
        self.violate_fault: Optional[int] = None
        self.replay_event: Optional[ErrorEvent] = None
        self.dllp_events: list[ErrorEvent] = []
        # receive side
        self.expected_seq = 0
        self.nak_pending = False
        self.nak_event: Optional[ErrorEvent] = None
        self.received = [0, 0]
        self.advertised = [config.hdr_credits, config.data_credits_dw]
        self.overflowed: Optional[int] = None
        # transaction layer
        self.outstanding: dict[int, Outstanding] = {}
        self.write_tag = 0
        self.accept_msgs = config.accept_msgs
        self.stalled_tags: dict[int, tuple[int, int]] = {}
        self.withheld: list[tuple[int, Flit]] = []
        self.completed_reads: list[tuple[int, int, bytes]] = []

    def free_tag(self) -> int:
        for tag in range(256):
            if tag not in self.outstanding:
                return tag
        raise NoFreeTag("all 256 tags in flight")

    def credits_ok(self, raw: bytes) -> bool:
        h, d = credit_cost(raw)
        return self.consumed[0] + h <= self.limit[0] and self.consumed[1] + d <= self.limit[1]

    def dl_receive(self, frame: DlFrame) -> tuple[DlResult, Optional[ErrorKind]]:
        """LCRC and sequence checks for one received frame (state is not modified)."""
        if not frame.lcrc_ok():
            return DlResult.Nak, ErrorKind.BadTlp
        d = seq_delta(frame.seq_num, self.expected_seq)
        if d == 0:
            return DlResult.Accept, None
        if d < 0:
            return DlResult.Duplicate, None
        return DlResult.Nak, ErrorKind.DllProtocolError


class Lane:
    """One direction of the link: ``src`` transmits, ``dst`` receives."""

    def __init__(self, name: str, src: Endpoint, dst: Endpoint):
        self.name = name
        self.src = src
        self.dst = dst
        self.regs: list[Optional[Flit]] = [None] * 5
        self.dllps: deque[tuple[int, Dllp, Optional[int]]] = deque()

    def flits(self):
        """Every TLP not yet consumed by RX TL: queued first, then by stage."""
        yield from self.src.tx_queue
        for f in self.regs:
            if f is not None:
                yield f

    def idle(self) -> bool:
        return not self.src.tx_queue and not any(self.regs) and not self.src.replay.entries


@dataclass
class TraceRecord:
    cycle: int
    tx_data: Optional[bytes] = None
    rx_data: Optional[bytes] = None
    err_flag: bool = False
    err_kind: Optional[str] = None
    pr_recovery: bool = False
    ltssm: str = "L0"

    def line(self) -> str:
        return (
            f"cycle={self.cycle} tx={self.tx_data.hex() if self.tx_data is not None else '-'} "
            f"rx={self.rx_data.hex() if self.rx_data is not None else '-'} "
            f"err={int(self.err_flag)} kind={self.err_kind or '-'} "
            f"pr={int(self.pr_recovery)} ltssm={self.ltssm}"
        )


class Simulator:
    def __init__(self, config: Optional[LinkConfig] = None,
                 recovery: Optional[RecoveryController] = None):
        self.config = config or LinkConfig()
        self.recovery = recovery or RecoveryController(retrain_cost=self.config.retrain_cost)
        self.tracker = DeliveryTracker()
        self.requester = Endpoint("requester", 0x0100, self.config)
        self.completer = Endpoint("completer", 0x0200, self.config)
        self.down = Lane("down", self.requester, self.completer)
        self.up = Lane("up", self.completer, self.requester)
        self.link = LinkState()
        self.now = 0
        self.trace: list[TraceRecord] = []
        self.events: list[ErrorEvent] = []
        self.fault_events: dict[int, list[ErrorEvent]] = {}
        self.aer = AerRegisters()
        self.fault_hook: Optional[Callable[["Simulator"], None]] = None
        self.reissues: list[tuple[int, Tlp, int, Optional[int]]] = []
        self.pending_reissue: deque[tuple[Tlp, Optional[tuple[int, int]], ErrorEvent]] = deque()
        self.retrain_events: list[ErrorEvent] = []
        self.link_down_cycles = 0
        self.train_fail_fault: Optional[int] = None
        self._cycle_events: list[ErrorEvent] = []
        self._delivered = False
        self._rec: Optional[TraceRecord] = None

    # -- events -----------------------------------------------------------------------------------

    def emit(self, kind: ErrorKind, fault_id: Optional[int] = None, seq_or_tag: int = 0,
             detail: str = "", **context) -> ErrorEvent:
        ev = ErrorEvent(kind, self.now, seq_or_tag, fault_id, detail, context)
        self.events.append(ev)
        self._cycle_events.append(ev)
        self.aer = aer_record(self.aer, ev)
        if fault_id is not None:
            self.fault_events.setdefault(fault_id, []).append(ev)
        if ev.severity is not Severity.Correctable:
            self.recovery.raise_interrupt(ev, self.now)
        log.debug("cycle %d: %s (fault %s) %s", self.now, kind.value, fault_id, detail)
        return ev

    # -- transaction layer: submit ----------------------------------------------------------------

    def tl_submit(self, kind: TlpKind, address: int, payload: bytes = b"", *,
                  length_dw: Optional[int] = None, ecrc: bool = False,
                  endpoint: Optional[Endpoint] = None) -> int:
        ep = endpoint or self.requester
        if self.link.ltssm is not Ltssm.L0:
            raise LinkDown(f"link is in {self.link.ltssm.value}")
        kind = TlpKind(kind)
        if kind is TlpKind.MemRd:
            tag = ep.free_tag()
        else:
            tag = ep.write_tag
            ep.write_tag = (ep.write_tag + 1) & 0xFF
        if length_dw is None:
            length_dw = len(payload) // 4
        tlp = make_tlp(kind, requester_id=ep.requester_id, tag=tag, address=address,
                       length_dw=length_dw, payload=payload, with_ecrc=ecrc)
        span = None
        if kind is TlpKind.MemWr and payload and address >= GOLDEN_BASE:
            span = (address - GOLDEN_BASE, len(payload))
        if kind is TlpKind.MemRd:
            ep.outstanding[tag] = Outstanding(self.now, kind, tlp)
        ep.tx_queue.append(Flit(serialize_tlp(tlp), origin=tlp, span=span))
        return tag

    def submit_write(self, payload: bytes, *, ecrc: bool = False) -> int:
        """Append ``payload`` to the golden stream and write it at its golden address."""
        self._require_l0()
        offset = self.tracker.append_golden(payload)
        return self.tl_submit(TlpKind.MemWr, GOLDEN_BASE + offset, payload, ecrc=ecrc)

    def _require_l0(self):
        if self.link.ltssm is not Ltssm.L0:
            raise LinkDown(f"link is in {self.link.ltssm.value}")

    def reissue(self, event: ErrorEvent) -> None:
        req = event.context.get("request")
        if req is None:
            return
        self.pending_reissue.append((req, event.context.get("span"), event))
        self._drain_reissues()

    def _drain_reissues(self):
        while self.pending_reissue and self.link.ltssm is Ltssm.L0:
            req, span, ev = self.pending_reissue[0]
            try:
                if req.kind is TlpKind.MemRd:
                    tag = self.tl_submit(TlpKind.MemRd, req.address, length_dw=req.length_dw,
                                         ecrc=req.ecrc_present)
                else:
                    tag = self.tl_submit(req.kind, req.address, req.payload, ecrc=req.ecrc_present)
            except NoFreeTag:
                return
            self.pending_reissue.popleft()
            self.reissues.append((self.now, req, tag, ev.attributed_fault))

    # -- recovery hooks ---------------------------------------------------------------------------

    def lane(self, name: str) -> Lane:
        return self.down if name == "down" else self.up

    def resync_credits(self, lane: Lane) -> None:
        dst, src = lane.dst, lane.src
        cfg = self.config
        dst.advertised = [dst.received[0] + cfg.hdr_credits, dst.received[1] + cfg.data_credits_dw]
        dst.overflowed = None
        src.limit = list(dst.advertised)
        src.violate_fault = None
        src.fc_suppress_fault = None
        src.fc_error_raised = False
        src.last_fc_cycle = self.now

    def repair(self, event: ErrorEvent) -> None:
        """Proposed-mode state repair after a fatal event; the link stays in L0."""
        if event.kind in (ErrorKind.ReceiverOverflow, ErrorKind.FlowControlProtocolError):
            self.resync_credits(self.lane(event.context.get("lane", "down")))

    def start_retrain(self, link: LinkState, event: ErrorEvent) -> None:
        self.link = link
        self.retrain_events.append(event)
        for lane in (self.down, self.up):
            lane.regs[1] = lane.regs[2] = lane.regs[3] = None
            lane.dllps.clear()
            lane.src.replay_queue = deque(lane.src.replay.entries.values())
            lane.dst.nak_pending = False
        if event.context.get("request") is not None and event.kind is ErrorKind.MalformedTlp:
            self.pending_reissue.append((event.context["request"], event.context.get("span"), event))

    def _link_up(self) -> None:
        for lane in (self.down, self.up):
            self.resync_credits(lane)
            lane.src.drop_ack_fault = None
            lane.src.replay.timer_start = self.now if lane.src.replay.entries else None
            if lane.dst.nak_event is not None:
                lane.dst.nak_event.resolved_cycle = self.now
                lane.dst.nak_event = None
        for ev in self.retrain_events:
            ev.resolved_cycle = self.now
        self.retrain_events = []

    def break_training(self, fault_id: Optional[int] = None) -> Optional[ErrorEvent]:
        self.link, err = ltssm_step(self.link, LtssmEvent.TrainFail)
        if err is not None:
            return self.emit(err, fault_id, detail="link training failure")
        return None

    def snapshot(self) -> Snapshot:
        c = self.completer
        return Snapshot(self.now, self.tracker.window(), c.expected_seq,
                        (tuple(c.received), tuple(c.advertised),
                         tuple(self.requester.consumed), tuple(self.requester.limit)),
                        self.tracker.cursor)

    # -- tick -------------------------------------------------------------------------------------

    def train(self, max_cycles: int = 100) -> None:
        for _ in range(max_cycles):
            if self.link.ltssm is Ltssm.L0:
                return
            self.tick()
        raise RuntimeError("link failed to train")

    def tick(self) -> list[ErrorEvent]:
        self._cycle_events = []
        self._delivered = False
        rec = self._rec = TraceRecord(self.now)
        if self.fault_hook is not None:
            self.fault_hook(self)
        self._advance_ltssm()
        rec.ltssm = self.link.ltssm.value     # the state this cycle's stages ran in
        if self.link.ltssm is Ltssm.L0:
            self._drain_reissues()
            for lane in (self.down, self.up):
                self._deliver_dllps(lane)
            for lane in (self.down, self.up):
                self._run_stages(lane)
            for lane in (self.down, self.up):
                self._dl_timers(lane)
        else:
            self.link_down_cycles += self.link.ltssm is Ltssm.RecoveryRetrain
        self._tl_timers()
        rec.pr_recovery = self.recovery.step(self, self.now)
        self._audit()
        self.tracker.release()
        if self._cycle_events:
            rec.err_flag = True
            rec.err_kind = ",".join(e.kind.value for e in self._cycle_events)
        self.trace.append(rec)
        self.now += 1
        return list(self._cycle_events)

    def _advance_ltssm(self) -> None:
        s = self.link.ltssm
        if s in TRAINING_STATES:
            self.link, _ = ltssm_step(self.link, LtssmEvent.TrainOk)
            if self.link.ltssm is Ltssm.L0:
                self._link_up()
        elif s is Ltssm.RecoveryRetrain:
            if self.link.cycles_in_state >= self.config.retrain_cost:
                self.link, _ = ltssm_step(self.link, LtssmEvent.RetrainDone)
                self._link_up()
            else:
                self.link = replace(self.link, cycles_in_state=self.link.cycles_in_state + 1)
        else:
            self.link = replace(self.link, cycles_in_state=self.link.cycles_in_state + 1)

    def _audit(self) -> None:
        self.recovery.maybe_snapshot(self, self.now, self._delivered)
        # compare-at-commit already flags mismatches; this is the snapshot-level backstop
        snap = self.recovery.snapshots.latest
        if snap is None or snap.cycle != self.now or not snap.delivered_image:
            return
        mm = compare_and_flag(self.tracker.golden, snap)
        if mm is not None and not self.tracker.is_flagged(mm.offset, mm.offset + 1):
            self.tracker.flag(mm.offset, mm.offset + 1)
            self.emit(ErrorKind.CorruptedRxTlp, detail=f"delivered image differs at {mm.offset}",
                      span=(mm.offset, 1), lane="down")

    # -- DLLPs ------------------------------------------------------------------------------------

    def _send_dllp(self, lane: Lane, dllp: Dllp, fault_id: Optional[int] = None) -> None:
        lane.dllps.append((self.now + self.config.dllp_latency, dllp, fault_id))

    def _deliver_dllps(self, lane: Lane) -> None:
        src = lane.src
        while lane.dllps and lane.dllps[0][0] <= self.now:
            _, dllp, fault_id = lane.dllps.popleft()
            if not dllp.crc_ok():
                ev = self.emit(ErrorKind.BadDllp, fault_id, dllp.seq_num,
                               f"DLLP CRC mismatch on {dllp.kind.name}", lane=lane.name)
                src.dllp_events.append(ev)
                continue
            if dllp.kind is DllpKind.FcUpdate:
                if src.fc_suppress_fault is not None:
                    continue
                # modular counters; a stale update (behind the current limit) is ignored
                dh = (dllp.hdr_credits - src.limit[0]) % 256
                dd = (dllp.data_credits_dw - src.limit[1]) % 65536
                if dh < 128 and dd < 32768:
                    src.limit[0] += dh
                    src.limit[1] += dd
                src.last_fc_cycle = self.now
                for ev in src.dllp_events:
                    ev.resolved_cycle = self.now
                src.dllp_events = []
            elif dllp.kind is DllpKind.Ack:
                if src.drop_ack_fault is not None:
                    continue
                self._ack(src, dllp.seq_num)
            else:
                self._ack(src, dllp.seq_num)
                src.replay_queue = deque(src.replay.entries.values())
                src.replay.timer_start = self.now if src.replay.entries else None

    def _ack(self, src: Endpoint, seq: int) -> None:
        if src.replay.purge_through(seq):
            src.replay.timer_start = self.now if src.replay.entries else None
            if src.replay_event is not None:
                src.replay_event.resolved_cycle = self.now
                src.replay_event = None

    # -- pipeline ---------------------------------------------------------------------------------

    def _run_stages(self, lane: Lane) -> None:
        regs, src = lane.regs, lane.src
        rec = self._rec
        # RX TL
        if regs[4] is not None:
            flit, regs[4] = regs[4], None
            self.tl_receive(lane, flit)
        # RX DL
        if regs[3] is not None:
            flit, regs[3] = regs[3], None
            self._rx_dl(lane, flit)
        # RX PL
        if regs[2] is not None:
            flit, regs[2] = regs[2], None
            if flit.symbol_error:
                self.emit(ErrorKind.RxError, flit.fault_id, flit.frame.seq_num,
                          "symbol error on receive", lane=lane.name)
                self._nak(lane, self._last_event())
            else:
                regs[3] = flit
                if lane is self.down:
                    rec.rx_data = flit.frame.wire()
        # TX PL
        if regs[1] is not None:
            flit, regs[1] = regs[1], None
            regs[2] = flit
            if lane is self.down:
                rec.tx_data = flit.frame.wire()
        # TX DL
        while src.replay_queue:
            flit = src.replay_queue.popleft()
            if flit.frame.seq_num in src.replay.entries:
                regs[1] = flit
                break
        else:
            if regs[0] is not None and not src.replay.full:
                flit, regs[0] = regs[0], None
                flit.frame = frame_bytes(src.next_seq, flit.raw)
                src.next_seq = (src.next_seq + 1) % SEQ_MOD
                src.replay.add(flit, self.now)
                regs[1] = flit
        # TX TL
        if regs[0] is None:
            if src.violate_fault is not None:
                dummy = make_tlp(TlpKind.MemWr, requester_id=src.requester_id, address=GOLDEN_BASE)
                raw = serialize_tlp(dummy)
                self._consume(src, raw)
                regs[0] = Flit(raw, origin=dummy, fault_id=src.violate_fault, dummy=True)
            elif src.tx_queue and src.credits_ok(src.tx_queue[0].raw):
                flit = src.tx_queue.popleft()
                self._consume(src, flit.raw)
                regs[0] = flit
                if flit.origin is not None and flit.origin.kind is TlpKind.MemRd:
                    o = src.outstanding.get(flit.origin.tag)
                    if o is not None and o.timeout_at is None:
                        o.timeout_at = self.now + self.config.completion_timeout_cycles

    def _last_event(self) -> ErrorEvent:
        return self._cycle_events[-1]

    @staticmethod
    def _consume(src: Endpoint, raw: bytes) -> None:
        h, d = credit_cost(raw)
        src.consumed[0] += h
        src.consumed[1] += d

    def _nak(self, lane: Lane, event: ErrorEvent) -> None:
        dst = lane.dst
        if dst.nak_pending:
            event.resolved_cycle = self.now
            return
        dst.nak_pending = True
        dst.nak_event = event
        self._send_dllp(lane, make_dllp(DllpKind.Nak, (dst.expected_seq - 1) % SEQ_MOD))

    def _rx_dl(self, lane: Lane, flit: Flit) -> None:
        dst = lane.dst
        result, err = dst.dl_receive(flit.frame)
        seq = flit.frame.seq_num
        if result is DlResult.Accept:
            dst.expected_seq = (dst.expected_seq + 1) % SEQ_MOD
            if dst.nak_pending:
                dst.nak_pending = False
                if dst.nak_event is not None:
                    dst.nak_event.resolved_cycle = self.now
                    dst.nak_event = None
            self._send_dllp(lane, make_dllp(DllpKind.Ack, seq))
            lane.regs[4] = flit
        elif result is DlResult.Duplicate:
            self._send_dllp(lane, make_dllp(DllpKind.Ack, (dst.expected_seq - 1) % SEQ_MOD))
        elif err is ErrorKind.BadTlp:
            ev = self.emit(err, flit.fault_id, seq, "LCRC mismatch", lane=lane.name)
            self._nak(lane, ev)
        elif not dst.nak_pending:
            ev = self.emit(err, flit.fault_id, seq,
                           f"sequence {seq} ahead of expected {dst.expected_seq}", lane=lane.name)
            self._nak(lane, ev)

    # -- transaction layer: receive ---------------------------------------------------------------

    def tl_receive(self, lane: Lane, flit: Flit) -> list[ErrorEvent]:
        """Receive-side TL checks for one TLP, then delivery."""
        dst = lane.dst
        start = len(self._cycle_events)
        raw = flit.frame.tlp_bytes if flit.frame is not None else flit.raw
        h, d = credit_cost(raw)
        over = (dst.received[0] + h > dst.advertised[0]
                or dst.received[1] + d > dst.advertised[1])
        dst.received[0] += h
        dst.received[1] += d
        ctx = dict(lane=lane.name, span=flit.span, request=flit.origin)
        try:
            tlp = parse_tlp(raw)
        except Malformed as exc:
            self.emit(ErrorKind.MalformedTlp, flit.fault_id, detail=str(exc), **ctx)
            return self._cycle_events[start:]
        if not tlp.ecrc_ok():
            self.emit(ErrorKind.EcrcFailure, flit.fault_id, tlp.tag, "ECRC mismatch", **ctx)
            self._complete_with_error(dst, tlp)
            return self._cycle_events[start:]
        if not self._supported(dst, tlp):
            self.emit(ErrorKind.UnsupportedRequest, flit.fault_id, tlp.tag,
                      f"{tlp.kind.name} not supported by {dst.name}", **ctx)
            self._complete_with_error(dst, tlp)
            return self._cycle_events[start:]
        if tlp.kind in (TlpKind.Cpl, TlpKind.CplD) and tlp.tag not in dst.outstanding:
            self.emit(ErrorKind.UnexpectedCompletion, flit.fault_id, tlp.tag,
                      f"completion for tag {tlp.tag} never issued", lane=lane.name)
            return self._cycle_events[start:]
        if over:
            if dst.overflowed is None:
                dst.overflowed = flit.fault_id
                self.emit(ErrorKind.ReceiverOverflow, flit.fault_id, tlp.tag,
                          "receive buffer over advertised credits", **ctx)
            return self._cycle_events[start:]
        self._deliver(lane, flit, tlp)
        return self._cycle_events[start:]

    def _supported(self, ep: Endpoint, tlp: Tlp) -> bool:
        if ep is self.completer:
            return tlp.kind in (TlpKind.MemWr, TlpKind.MemRd) or (
                tlp.kind is TlpKind.Msg and ep.accept_msgs)
        return tlp.kind in (TlpKind.Cpl, TlpKind.CplD)

    def _complete_with_error(self, ep: Endpoint, tlp: Tlp) -> None:
        if ep is self.completer and tlp.kind in (TlpKind.MemRd, TlpKind.Msg):
            cpl = make_tlp(TlpKind.Cpl, requester_id=ep.requester_id, tag=tlp.tag)
            ep.tx_queue.append(Flit(serialize_tlp(cpl), origin=cpl))

    def _deliver(self, lane: Lane, flit: Flit, tlp: Tlp) -> None:
        dst = lane.dst
        if tlp.kind is TlpKind.MemWr:
            if tlp.payload and tlp.address >= GOLDEN_BASE:
                off = tlp.address - GOLDEN_BASE
                self._delivered = True
                mm = self.tracker.commit(off, tlp.payload)
                if mm is not None:
                    self.emit(ErrorKind.CorruptedRxTlp, flit.fault_id, tlp.tag,
                              f"delivered byte {mm.offset} differs from golden",
                              lane=lane.name, span=(off, len(tlp.payload)), request=flit.origin)
        elif tlp.kind is TlpKind.MemRd:
            if ABORT_BASE <= tlp.address < ABORT_BASE + ABORT_SIZE:
                self.emit(ErrorKind.CompleterAbort, flit.fault_id, tlp.tag,
                          f"read of {tlp.address:#x} aborted", lane=lane.name,
                          request=flit.origin)
                self._complete_with_error(dst, tlp)
                return
            nbytes = 4 * tlp.length_dw
            data = self.tracker.read(tlp.address - GOLDEN_BASE, nbytes) if tlp.address >= GOLDEN_BASE \
                else bytes(nbytes)
            cpl = make_tlp(TlpKind.CplD, requester_id=dst.requester_id, tag=tlp.tag,
                           address=tlp.address, payload=data)
            out = Flit(serialize_tlp(cpl), origin=cpl)
            if tlp.tag in dst.stalled_tags:
                fault_id, stall = dst.stalled_tags.pop(tlp.tag)
                dst.withheld.append((self.now + stall, out))
            else:
                dst.tx_queue.append(out)
        elif tlp.kind in (TlpKind.Cpl, TlpKind.CplD):
            req = dst.outstanding.pop(tlp.tag)
            if tlp.kind is TlpKind.CplD:
                dst.completed_reads.append((self.now, req.request.address, tlp.payload))

    # -- timers -----------------------------------------------------------------------------------

    def _dl_timers(self, lane: Lane) -> None:
        src, dst, cfg = lane.src, lane.dst, self.config
        rb = src.replay
        if (rb.entries and rb.timer_start is not None and not src.replay_queue
                and self.now - rb.timer_start >= cfg.replay_timeout_cycles):
            fault_id, src.drop_ack_fault = src.drop_ack_fault, None
            src.replay_event = self.emit(ErrorKind.ReplayTimeout, fault_id, next(iter(rb.entries)),
                                         "replay timer expired", lane=lane.name)
            src.replay_queue = deque(rb.entries.values())
            rb.timer_start = self.now
        if self.now % cfg.fc_update_interval == 0:
            dst.advertised = [dst.received[0] + cfg.hdr_credits,
                              dst.received[1] + cfg.data_credits_dw]
            self._send_dllp(lane, make_dllp(DllpKind.FcUpdate, 0, dst.advertised[0],
                                            dst.advertised[1]))
        if not src.fc_error_raised and self.now - src.last_fc_cycle > cfg.fc_deadline:
            src.fc_error_raised = True
            self.emit(ErrorKind.FlowControlProtocolError, src.fc_suppress_fault,
                      detail=f"no flow-control update for {self.now - src.last_fc_cycle} cycles",
                      lane=lane.name)

    def _tl_timers(self) -> None:
        ep = self.requester
        for tag in [t for t, o in ep.outstanding.items() if o.timeout_at is not None and o.timeout_at <= self.now]:
            o = ep.outstanding.pop(tag)
            self.emit(ErrorKind.CompletionTimeout, o.fault_id, tag,
                      f"no completion for tag {tag} since cycle {o.submit_cycle}",
                      lane="up", request=o.request)
        c = self.completer
        if c.withheld:
            # withheld completions outlive the requester's timeout and are discarded
            c.withheld = [(t, f) for t, f in c.withheld if t > self.now]

    # -- state queries ----------------------------------------------------------------------------

    def quiescent(self) -> bool:
        """No recovery or replay activity in progress anywhere on the link."""
        if self.link.ltssm is not Ltssm.L0 or self.recovery.busy or self.pending_reissue:
            return False
        for ep in (self.requester, self.completer):
            if (ep.replay_queue or ep.nak_pending or ep.drop_ack_fault is not None
                    or ep.fc_suppress_fault is not None or ep.violate_fault is not None
                    or ep.overflowed is not None or ep.fc_error_raised or ep.dllp_events
                    or ep.replay_event is not None or ep.nak_event is not None):
                return False
        return True

    def drained(self) -> bool:
        return (self.down.idle() and self.up.idle() and not self.requester.outstanding
                and not self.recovery.busy and not self.pending_reissue
                and self.tracker.cursor == len(self.tracker.golden)
                and not self.completer.withheld)
