import pytest
from hypothesis import given, settings, strategies as st

from pcie_resilience.faults import (
    MIN_SPACING, FaultKind, FaultSpec, HorizonTooSmall, SplitMix64, gen_campaign,
)
from pcie_resilience.harness import parse_fault


def test_splitmix_reference_values():
    # first outputs for seed 0 of the published splitmix64 generator
    rng = SplitMix64(0)
    assert [rng.next() for _ in range(3)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_empty_campaign():
    assert gen_campaign(1, 0, 100) == []


def test_campaign_is_deterministic():
    assert gen_campaign(1, 2, 10_000) == gen_campaign(1, 2, 10_000)
    assert gen_campaign(1, 2, 10_000) != gen_campaign(2, 2, 10_000)


def test_horizon_too_small():
    with pytest.raises(HorizonTooSmall):
        gen_campaign(1, 100, 100)


@settings(max_examples=50)
@given(st.integers(0, 2**64 - 1), st.integers(1, 4), st.integers(0, 5000))
def test_campaign_shape(seed, count, slack):
    horizon = 15 * count * MIN_SPACING + slack
    specs = gen_campaign(seed, count, horizon)
    assert len(specs) == 15 * count
    assert [s.cycle for s in specs] == sorted(s.cycle for s in specs)
    assert all(b.cycle - a.cycle >= MIN_SPACING for a, b in zip(specs, specs[1:]))
    assert all(0 <= s.cycle < horizon for s in specs)
    for k in FaultKind:
        assert sum(s.kind is k for s in specs) == count
    assert [s.id for s in specs] == list(range(len(specs)))


def test_params_come_from_fault_seed():
    a = FaultSpec.build(0, 10, FaultKind.MalformHeader, 99)
    b = FaultSpec.build(7, 500, "MalformHeader", 99)
    assert a.params == b.params and 0 <= a.params["variant"] < 3


def test_config_round_trip():
    spec = gen_campaign(5, 1, 1000)[3]
    back = parse_fault(spec.to_config())
    assert (back.kind, back.cycle, back.seed, back.params) == (spec.kind, spec.cycle, spec.seed, spec.params)
