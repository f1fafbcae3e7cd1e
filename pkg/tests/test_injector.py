import copy

import pytest

from pcie_resilience.errors import expected_error_for
from pcie_resilience.faults import FaultKind, FaultSpec, NoTargetInFlight
from pcie_resilience.harness import CampaignConfig, simulate
from pcie_resilience.injector import FaultInjector, apply_fault
from pcie_resilience.link import Simulator
from pcie_resilience.ltssm import Ltssm


@pytest.mark.parametrize("kind", list(FaultKind))
def test_each_kind_yields_its_event(kind):
    cfg = CampaignConfig(seed=11, count_per_kind=3, horizon_cycles=4000, fault_kinds=[kind])
    sim, inj = simulate(cfg)
    assert len(inj.applied) == 3 and not inj.abandoned
    want = expected_error_for(kind)
    for fid in inj.applied:
        evs = sim.fault_events[fid]
        assert len(evs) == 1 and evs[0].kind is want
        assert evs[0].resolved_cycle is not None
    assert all(e.attributed_fault is not None for e in sim.events)


def test_no_target_on_idle_link():
    sim = Simulator()
    sim.train()
    for kind in (FaultKind.FlipLcrcBit, FaultKind.MalformHeader, FaultKind.StallCompletion,
                 FaultKind.DropAck):
        with pytest.raises(NoTargetInFlight):
            apply_fault(FaultSpec.build(0, sim.now, kind, 1), sim)


def test_no_target_outside_l0():
    with pytest.raises(NoTargetInFlight):
        apply_fault(FaultSpec.build(0, 0, FaultKind.BreakTraining, 1), Simulator())


def test_apply_is_reproducible():
    sim = Simulator()
    sim.train()
    sim.submit_write(bytes(range(64)), ecrc=True)
    sim.tick()
    sim.tick()
    twin = copy.deepcopy(sim)
    spec = FaultSpec.build(0, sim.now, FaultKind.FlipTlpPayloadBit, 1234)
    assert apply_fault(spec, sim) == apply_fault(spec, twin)
    assert sim.down.regs[1].frame == twin.down.regs[1].frame


def test_retry_bound_abandons():
    sim = Simulator()
    sim.train()
    inj = FaultInjector([FaultSpec.build(0, 0, FaultKind.StallCompletion, 1)], max_retries=5)
    sim.fault_hook = inj
    for _ in range(20):
        sim.tick()
    assert [s.id for s in inj.abandoned] == [0] and inj.retries[0] == 6


def test_break_training_keeps_l0_in_proposed_mode():
    cfg = CampaignConfig(seed=2, count_per_kind=2, horizon_cycles=2000,
                         fault_kinds=[FaultKind.BreakTraining])
    sim, _ = simulate(cfg)
    assert all(r.ltssm == Ltssm.L0.value for r in sim.trace[3:])
