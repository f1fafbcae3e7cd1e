"""Applies scheduled faults to a running simulator.

Frame faults mutate the frame sitting between TX DL and RX PL, so the LCRC
check at RX DL sees it two cycles later.  Header faults mutate a TLP before
it is framed (queued or in the TX TL register), so the frame carries a valid
LCRC and only transaction-layer checks can catch the damage.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, replace

from .faults import MAX_RETRIES, FaultKind, FaultSpec, NoTargetInFlight
from .link import ABORT_BASE, Flit, GOLDEN_BASE, Lane, Simulator
from .ltssm import Ltssm
from .packet import (
    HEADER_LEN, MAX_LENGTH_DW, SEQ_MOD, DllpKind, TlpKind, crc32, frame_bytes, make_tlp,
    seq_delta, serialize_tlp,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MutationRecord:
    fault_id: int
    cycle: int
    what: str
    golden: object
    mutated: object


def _flip(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 0x80 >> (bit % 8)
    return bytes(out)


def _on_wire(lane: Lane, want=lambda f: True) -> Flit:
    """A framed flit between TX DL and RX PL (r2 first, then r3).

    Replayed copies the receiver already holds are skipped: it would discard
    them as duplicates and the fault would go unseen.
    """
    expected = lane.dst.expected_seq
    for i in (1, 2):
        f = lane.regs[i]
        if (f is not None and f.fault_id is None and not f.dummy and want(f)
                and seq_delta(f.frame.seq_num, expected) >= 0):
            return f
    raise NoTargetInFlight("no frame between TX DL and RX PL")


def _pre_frame(sim: Simulator, want) -> tuple[object, int, Flit]:
    """An unframed TLP in the requester's TX queue or TX TL register."""
    lane = sim.down
    if lane.regs[0] is not None:
        f = lane.regs[0]
        if f.fault_id is None and not f.dummy and want(f):
            return lane.regs, 0, f
    for i, f in enumerate(lane.src.tx_queue):
        if f.fault_id is None and want(f):
            return lane.src.tx_queue, i, f
    raise NoTargetInFlight("no unframed TLP on the requester")


def _live_read(sim: Simulator, f: Flit) -> bool:
    """A MemRd that is the current request for its (outstanding) tag."""
    if f.origin is None or f.origin.kind is not TlpKind.MemRd:
        return False
    o = sim.requester.outstanding.get(f.origin.tag)
    return o is not None and o.request is f.origin


def _is(kind: TlpKind):
    return lambda f: f.origin is not None and f.origin.kind is kind and f.raw[0] == kind


def apply_fault(spec: FaultSpec, sim: Simulator) -> MutationRecord:
    """Apply one fault to the simulator's current state.

    Raises NoTargetInFlight when the fault needs an in-flight artifact and
    none is available this cycle.
    """
    k, p, fid = spec.kind, spec.params, spec.id
    now = sim.now
    if sim.link.ltssm is not Ltssm.L0:
        raise NoTargetInFlight("link not in L0")

    if k in (FaultKind.FlipTlpPayloadBit, FaultKind.FlipLcrcBit, FaultKind.FlipSeqNum,
             FaultKind.PlSymbolError):
        lane = sim.down
        if k is FaultKind.FlipTlpPayloadBit:
            flit = _on_wire(lane, lambda f: len(f.frame.tlp_bytes) > HEADER_LEN)
        else:
            flit = _on_wire(lane)
        idx = lane.regs.index(flit)
        frame = flit.frame
        if k is FaultKind.FlipTlpPayloadBit:
            payload_bits = (len(frame.tlp_bytes) - HEADER_LEN) * 8
            bit = HEADER_LEN * 8 + p["bit"] % payload_bits
            new = replace(frame, tlp_bytes=_flip(frame.tlp_bytes, bit))
            golden, mutated = frame.tlp_bytes, new.tlp_bytes
        elif k is FaultKind.FlipLcrcBit:
            new = replace(frame, lcrc=frame.lcrc ^ (1 << (p["bit"] % 32)))
            golden, mutated = frame.lcrc, new.lcrc
        elif k is FaultKind.FlipSeqNum:
            new = frame_bytes((frame.seq_num + p["skip"]) % SEQ_MOD, frame.tlp_bytes)
            golden, mutated = frame.seq_num, new.seq_num
        else:
            lane.regs[idx] = replace(flit, symbol_error=True, fault_id=fid)
            return MutationRecord(fid, now, f"symbol error on seq {frame.seq_num}",
                                  None, p["symbol"])
        lane.regs[idx] = replace(flit, frame=new, fault_id=fid)
        return MutationRecord(fid, now, f"{k.value} on seq {frame.seq_num}", golden, mutated)

    if k is FaultKind.FlipDllpCrcBit:
        for lane in (sim.down, sim.up):
            for i, (t, dllp, f) in enumerate(lane.dllps):
                if dllp.kind is DllpKind.FcUpdate and f is None:
                    bad = replace(dllp, crc16=dllp.crc16 ^ (1 << p["bit"]))
                    lane.dllps[i] = (t, bad, fid)
                    return MutationRecord(fid, now, f"FcUpdate CRC on {lane.name}",
                                          dllp.crc16, bad.crc16)
        raise NoTargetInFlight("no FcUpdate DLLP in flight")

    if k is FaultKind.DropAck:
        src = sim.requester
        if not src.replay.entries:
            raise NoTargetInFlight("nothing awaiting Ack")
        src.drop_ack_fault = fid
        return MutationRecord(fid, now, "drop Acks until replay timeout", None, None)

    if k is FaultKind.SuppressReplayAck:
        sim.requester.fc_suppress_fault = fid
        return MutationRecord(fid, now, "withhold FC updates", None, None)

    if k is FaultKind.ViolateCredit:
        sim.requester.violate_fault = fid
        return MutationRecord(fid, now, "transmit past advertised credits", None, None)

    if k is FaultKind.BreakTraining:
        sim.break_training(fid)
        return MutationRecord(fid, now, "training failure", Ltssm.L0.value, "TrainFail")

    if k is FaultKind.InjectUnexpectedCompletion:
        req = sim.requester
        tag = next(t for t in range(255, -1, -1) if t not in req.outstanding)
        cpl = make_tlp(TlpKind.CplD, requester_id=sim.completer.requester_id, tag=tag,
                       address=GOLDEN_BASE, payload=bytes(4))
        sim.completer.tx_queue.append(Flit(serialize_tlp(cpl), origin=cpl, fault_id=fid))
        return MutationRecord(fid, now, f"unsolicited CplD tag {tag}", None, tag)

    if k is FaultKind.StallCompletion:
        req = sim.requester
        _, _, flit = _pre_frame_or_wire_read(sim)
        tag = flit.origin.tag
        stall = sim.config.completion_timeout_cycles + 1 + p["stall"] % 64
        sim.completer.stalled_tags[tag] = (fid, stall)
        req.outstanding[tag].fault_id = fid
        flit.fault_id = fid
        return MutationRecord(fid, now, f"withhold CplD for tag {tag}", 0, stall)

    if k is FaultKind.MalformHeader:
        where, idx, flit = _pre_frame(sim, lambda f: _is(TlpKind.MemWr)(f) and f.span is not None)
        raw = bytearray(flit.raw)
        variant = p["variant"]
        if variant == 0:
            raw[0] = 0x06 + p["value"] % 250
        elif variant == 1:
            n = int.from_bytes(raw[12:14], "big")
            n = n + 2 if n + 2 <= MAX_LENGTH_DW else n - 2
            raw[12:14] = n.to_bytes(2, "big")
        else:
            raw[11] |= 1 + p["value"] % 3
        where[idx] = replace(flit, raw=bytes(raw), fault_id=fid)
        return MutationRecord(fid, now, f"malformed header variant {variant}", flit.raw, bytes(raw))

    if k is FaultKind.FlipEcrcBit:
        where, idx, flit = _pre_frame(sim, lambda f: f.origin is not None
                                      and f.origin.ecrc_present and f.origin.kind in
                                      (TlpKind.MemWr, TlpKind.MemRd)
                                      and (f.origin.kind is TlpKind.MemWr or _live_read(sim, f)))
        raw = _flip(flit.raw, (len(flit.raw) - 4) * 8 + p["bit"] % 32)
        where[idx] = replace(flit, raw=raw, fault_id=fid)
        return MutationRecord(fid, now, "ECRC bit flip", flit.raw[-4:], raw[-4:])

    if k in (FaultKind.SendUnsupportedRequest, FaultKind.ForceCompleterAbort):
        where, idx, flit = _pre_frame(sim, lambda f: _is(TlpKind.MemRd)(f) and _live_read(sim, f))
        raw = bytearray(flit.raw)
        if k is FaultKind.SendUnsupportedRequest:
            raw[0] = TlpKind.Msg
        else:
            raw[4:12] = (ABORT_BASE + p["offset"]).to_bytes(8, "big")
        if flit.origin.ecrc_present:
            raw[-4:] = crc32(bytes(raw[:-4])).to_bytes(4, "big")
        where[idx] = replace(flit, raw=bytes(raw), fault_id=fid)
        return MutationRecord(fid, now, k.value, flit.raw, bytes(raw))

    raise ValueError(f"unhandled fault kind {k}")


def _pre_frame_or_wire_read(sim: Simulator):
    """A MemRd on its way to the completer whose tag is still outstanding."""
    lane = sim.down

    def ok(f: Flit) -> bool:
        if f.fault_id is not None or not _live_read(sim, f):
            return False
        if f.origin.tag in sim.completer.stalled_tags:
            return False
        # a replayed copy the completer already accepted would never reach it again
        return f.frame is None or seq_delta(f.frame.seq_num, lane.dst.expected_seq) >= 0

    for f in lane.src.tx_queue:
        if ok(f):
            return lane.src.tx_queue, None, f
    for f in lane.regs:
        if f is not None and ok(f):
            return lane.regs, None, f
    raise NoTargetInFlight("no read in flight")


class FaultInjector:
    """Feeds a campaign into a simulator, one fault at a time.

    A fault is applied only when the link is quiescent and every earlier
    fault has been detected and resolved; until then it is deferred.  A
    fault whose target is missing is retried the next cycle, up to
    MAX_RETRIES times, then abandoned.
    """

    # faults whose consequence takes longer than the campaign spacing
    UNGATED = (FaultKind.StallCompletion,)
    # an armed fault that has produced nothing after this long stops gating
    ARM_LIMIT = 4096

    def __init__(self, campaign: list[FaultSpec], max_retries: int = MAX_RETRIES):
        self.pending: deque[FaultSpec] = deque(sorted(campaign, key=lambda s: (s.cycle, s.id)))
        self.max_retries = max_retries
        self.due: dict[int, int] = {}
        self.retries: dict[int, int] = {}
        self.applied: dict[int, tuple[FaultSpec, MutationRecord]] = {}
        self.abandoned: list[FaultSpec] = []
        self.armed: dict[int, int] = {}    # fault id -> cycle applied

    @property
    def done(self) -> bool:
        return not self.pending

    def abandon_pending(self) -> None:
        self.abandoned.extend(self.pending)
        self.pending.clear()

    def _settled(self, sim: Simulator) -> bool:
        for fid, applied in list(self.armed.items()):
            evs = sim.fault_events.get(fid)
            if not evs or any(e.resolved_cycle is None for e in evs):
                if sim.now - applied < self.ARM_LIMIT:
                    return False
                log.warning("fault %d still unresolved after %d cycles", fid, self.ARM_LIMIT)
            del self.armed[fid]
        return True

    def __call__(self, sim: Simulator) -> None:
        if not self.pending:
            return
        spec = self.pending[0]
        if self.due.get(spec.id, spec.cycle) > sim.now:
            return
        if not self._settled(sim) or not sim.quiescent():
            return
        try:
            rec = apply_fault(spec, sim)
        except NoTargetInFlight as exc:
            n = self.retries[spec.id] = self.retries.get(spec.id, 0) + 1
            if n > self.max_retries:
                log.warning("fault %d (%s) abandoned: %s", spec.id, spec.kind.value, exc)
                self.abandoned.append(self.pending.popleft())
            else:
                self.due[spec.id] = sim.now + 1
            return
        self.pending.popleft()
        self.applied[spec.id] = (spec, rec)
        if spec.kind not in self.UNGATED:
            self.armed[spec.id] = sim.now
