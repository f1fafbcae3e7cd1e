import pytest
from hypothesis import given, settings, strategies as st

from pcie_resilience.errors import ErrorKind
from pcie_resilience.faults import FaultKind, FaultSpec
from pcie_resilience.injector import apply_fault
from pcie_resilience.link import GOLDEN_BASE, Flit, LinkConfig, LinkDown, NoFreeTag, Simulator
from pcie_resilience.ltssm import Ltssm
from pcie_resilience.recovery import RecoveryController, RecoveryMode
from pcie_resilience.packet import DlFrame, TlpKind, frame_bytes, make_tlp, serialize_tlp


@pytest.fixture
def sim():
    s = Simulator()
    s.train()
    return s


def run_until(sim, pred, limit=200):
    for _ in range(limit):
        sim.tick()
        if pred():
            return sim.now - 1
    raise AssertionError("condition never reached")


def test_training_takes_three_cycles():
    s = Simulator()
    s.train()
    assert s.now == 3 and s.link.ltssm is Ltssm.L0
    assert [r.ltssm for r in s.trace] == ["Polling", "Config", "L0"]


def test_submit_needs_l0():
    with pytest.raises(LinkDown):
        Simulator().tl_submit(TlpKind.MemRd, GOLDEN_BASE, length_dw=1)


def test_write_lands_six_cycles_after_submit(sim):
    c = sim.now - 1                       # last completed cycle
    sim.submit_write(bytes(range(64)))
    landed = run_until(sim, lambda: sim.tracker.cursor == 64)
    assert landed == c + 6
    assert sim.events == []


def test_idle_tick(sim):
    assert sim.tick() == []
    assert sim.trace[-1].line() == f"cycle={sim.now - 1} tx=- rx=- err=0 kind=- pr=0 ltssm=L0"


def test_tags_ascend_and_run_out(sim):
    assert sim.tl_submit(TlpKind.MemRd, GOLDEN_BASE, length_dw=1) == 0
    for i in range(1, 256):
        assert sim.tl_submit(TlpKind.MemRd, GOLDEN_BASE, length_dw=1) == i
    with pytest.raises(NoFreeTag):
        sim.tl_submit(TlpKind.MemRd, GOLDEN_BASE, length_dw=1)


def test_read_completes_and_retires_tag(sim):
    sim.submit_write(bytes(range(64)))
    tag = sim.tl_submit(TlpKind.MemRd, GOLDEN_BASE + 16, length_dw=4)
    run_until(sim, lambda: tag not in sim.requester.outstanding)
    _, addr, data = sim.requester.completed_reads[-1]
    assert addr == GOLDEN_BASE + 16 and data == bytes(range(16, 32))
    assert sim.events == []


def test_dl_receive_checks(sim):
    ep = sim.completer
    ok = frame_bytes(0, b"x" * 14)
    assert ep.dl_receive(ok)[1] is None
    bad = DlFrame(0, b"y" + ok.tlp_bytes[1:], ok.lcrc)
    assert ep.dl_receive(bad)[1] is ErrorKind.BadTlp
    assert ep.dl_receive(frame_bytes(2, ok.tlp_bytes))[1] is ErrorKind.DllProtocolError


def _flit_at(sim, stage):
    sim.submit_write(bytes(64))
    while sim.down.regs[stage] is None:
        sim.tick()


def test_payload_flip_caught_two_cycles_later_and_replayed(sim):
    _flit_at(sim, 1)
    original = sim.down.regs[1].frame
    spec = FaultSpec.build(0, sim.now, FaultKind.FlipTlpPayloadBit, 3)
    rec = apply_fault(spec, sim)
    diff = [a ^ b for a, b in zip(rec.golden, rec.mutated)]
    assert sum(bin(d).count("1") for d in diff) == 1
    t = sim.now
    sim.tick()
    sim.tick()
    assert sim.tick() != [] and sim.events[0].kind is ErrorKind.BadTlp
    assert sim.events[0].cycle == t + 2
    # the replay carries the original frame
    seen = []
    for _ in range(20):
        sim.tick()
        if sim.down.regs[1] is not None:
            seen.append(sim.down.regs[1].frame)
    assert original in seen
    run_until(sim, lambda: sim.tracker.cursor == 64)
    assert sim.tracker.consumer_stream() == bytes(64)
    assert sim.events[0].resolved_cycle is not None


def test_unexpected_completion(sim):
    cpl = make_tlp(TlpKind.CplD, tag=9, payload=bytes(4))
    sim.completer.tx_queue.append(Flit(serialize_tlp(cpl), origin=cpl))
    run_until(sim, lambda: bool(sim.events))
    assert sim.events[0].kind is ErrorKind.UnexpectedCompletion


def test_credits_never_exceeded_fault_free(sim):
    for i in range(200):
        if i % 2 == 0:
            sim.submit_write(bytes(256))
        sim.tick()
        for lane in (sim.down, sim.up):
            assert lane.src.consumed[0] <= lane.src.limit[0]
            assert lane.src.consumed[1] <= lane.src.limit[1]
            assert lane.dst.received[0] <= lane.dst.advertised[0]
    run_until(sim, sim.drained, 2000)
    assert sim.events == []
    assert sim.tracker.consumer_stream() == bytes(sim.tracker.golden)


def test_baseline_retrain_lasts_retrain_cost():
    s = Simulator(LinkConfig(), RecoveryController(RecoveryMode.Baseline))
    s.train()
    s.break_training(None)
    s.tick()
    s.tick()
    run_until(s, lambda: s.link.ltssm is Ltssm.L0)
    assert s.link_down_cycles == 40
    assert sum(r.ltssm == "RecoveryRetrain" for r in s.trace) == 40


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 64), min_size=1, max_size=12))
def test_delivery_in_submit_order(sizes):
    s = Simulator()
    s.train()
    for n in sizes:
        s.submit_write(bytes([n % 251]) * (4 * n))
        s.tick()
    run_until(s, s.drained, 5000)
    assert s.tracker.consumer_stream() == bytes(s.tracker.golden)
    assert all(r.ltssm == "L0" or (r.tx_data is None and r.rx_data is None) for r in s.trace)
