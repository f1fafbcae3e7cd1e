import pytest
from hypothesis import given, strategies as st

from pcie_resilience.errors import ErrorEvent, ErrorKind
from pcie_resilience.link import LinkConfig, Simulator
from pcie_resilience.ltssm import LinkState, Ltssm
from pcie_resilience.recovery import (
    NONFATAL_REPAIR_CYCLES, DeliveryTracker, Mismatch, RecoveryController, RecoveryMode, Snapshot,
    SnapshotStale, compare_and_flag, handle_fatal,
)

GOLDEN = bytes(range(32))
L0 = LinkState(Ltssm.L0)


def snap(image, cursor=0, cycle=0):
    return Snapshot(cycle, bytes(image), 0, (), cursor)


def test_compare_clean_prefix():
    assert compare_and_flag(GOLDEN, snap(GOLDEN[:20])) is None


def test_compare_single_divergence():
    img = bytearray(GOLDEN)
    img[12] = 0xEE
    assert compare_and_flag(GOLDEN, snap(img)) == Mismatch(12, 12, 0xEE)


def test_compare_reports_first():
    img = bytearray(GOLDEN)
    img[4] ^= 1
    img[9] ^= 1
    assert compare_and_flag(GOLDEN, snap(img)).offset == 4


def test_compare_past_golden():
    assert compare_and_flag(GOLDEN[:4], snap(GOLDEN[:6])) == Mismatch(4, None, 4)
    with pytest.raises(ValueError):
        compare_and_flag(GOLDEN, snap(b"", cursor=33))


@given(st.binary(min_size=1, max_size=64), st.data())
def test_compare_finds_any_flip(golden, data):
    i = data.draw(st.integers(0, len(golden) - 1))
    img = bytearray(golden)
    img[i] ^= data.draw(st.integers(1, 255))
    assert compare_and_flag(golden, snap(img)).offset == i


def test_handle_fatal_modes():
    ev = ErrorEvent(ErrorKind.DllProtocolError, 10)
    disp, link = handle_fatal(ev, RecoveryMode.Proposed, L0, 40)
    assert (disp.link_down_cycles, disp.recovered, link) == (0, True, L0)
    disp, link = handle_fatal(ev, RecoveryMode.Baseline, L0, 40)
    assert (disp.link_down_cycles, disp.recovered) == (40, True)
    assert link.ltssm is Ltssm.RecoveryRetrain


def test_handle_fatal_rejects_correctable():
    with pytest.raises(ValueError):
        handle_fatal(ErrorEvent(ErrorKind.BadTlp, 0), RecoveryMode.Baseline, L0, 40)


def test_retrain_is_ten_times_repair():
    assert LinkConfig().retrain_cost == 10 * NONFATAL_REPAIR_CYCLES


def test_correctable_raises_no_interrupt():
    rc = RecoveryController()
    with pytest.raises(ValueError):
        rc.raise_interrupt(ErrorEvent(ErrorKind.RxError, 0), 0)


def test_stale_snapshot():
    sim = Simulator(recovery=RecoveryController(snapshot_interval=8))
    sim.train()
    for _ in range(5):
        sim.tick()
    last = sim.recovery.snapshots.latest
    assert last.cycle == 0
    rc = sim.recovery
    ev = ErrorEvent(ErrorKind.CorruptedRxTlp, last.cycle + 3, context={"span": (0, 4)})
    rc.raise_interrupt(ev, ev.cycle)
    with pytest.raises(SnapshotStale):
        rc.recover(sim, last, rc.pending[0], ev.cycle + 2)


def test_corruption_is_held_then_corrected_in_one_cycle():
    sim = Simulator()
    sim.train()
    tr = sim.tracker
    off = tr.append_golden(bytes(range(16)))
    t = sim.now
    bad = bytearray(range(16))
    bad[5] ^= 0x40
    mm = tr.commit(off, bytes(bad))
    assert mm == Mismatch(5, 5, 5 ^ 0x40)
    sim.emit(ErrorKind.CorruptedRxTlp, None, 0, span=(off, 16))
    tr.release()
    assert tr.cursor == 0                  # flagged range held back
    sim.tick()                             # t: flag
    sim.tick()                             # t+1: accepted
    assert tr.cursor == 0
    sim.tick()                             # t+2: corrected and released
    rec = sim.recovery.records[0]
    assert (rec.flag_cycle, rec.accepted_cycle, rec.corrected_cycle) == (t, t + 1, t + 2)
    assert rec.latency_cycles == 1 and rec.flag_to_corrected == 2
    assert rec.bytes_corrected == 16
    assert tr.consumer_stream() == bytes(range(16)) and tr.corrupted_delivered == 0
    assert sim.trace[-1].pr_recovery


def test_tracker_releases_in_order():
    tr = DeliveryTracker()
    tr.append_golden(b"abcdefgh")
    tr.commit(4, b"efgh")
    assert tr.release() == 0
    tr.commit(0, b"abcd")
    assert tr.release() == 8 and tr.consumer_stream() == b"abcdefgh"
