"""Deterministic, seeded fault campaigns.

Campaigns are drawn from a splitmix64 stream so the same (seed, count,
horizon) produces the same list of faults in any implementation.  Each
fault's parameters come from a second splitmix64 stream seeded with the
fault's own ``seed``, so a fault can be replayed from (kind, cycle, seed).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

MASK64 = (1 << 64) - 1
MIN_SPACING = 32
MAX_RETRIES = 1000


class HorizonTooSmall(ValueError):
    pass


class NoTargetInFlight(LookupError):
    pass


class FaultKind(enum.Enum):
    FlipTlpPayloadBit = "FlipTlpPayloadBit"
    FlipLcrcBit = "FlipLcrcBit"
    FlipSeqNum = "FlipSeqNum"
    FlipDllpCrcBit = "FlipDllpCrcBit"
    DropAck = "DropAck"
    StallCompletion = "StallCompletion"
    ViolateCredit = "ViolateCredit"
    MalformHeader = "MalformHeader"
    InjectUnexpectedCompletion = "InjectUnexpectedCompletion"
    SendUnsupportedRequest = "SendUnsupportedRequest"
    ForceCompleterAbort = "ForceCompleterAbort"
    FlipEcrcBit = "FlipEcrcBit"
    PlSymbolError = "PlSymbolError"
    BreakTraining = "BreakTraining"
    SuppressReplayAck = "SuppressReplayAck"


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform-ish integer in [0, n) (plain modulo reduction)."""
        return self.next() % n

    def chance(self, percent: int) -> bool:
        return self.below(100) < percent


def fault_params(kind: FaultKind, seed: int) -> dict[str, int]:
    """Kind-specific parameters derived from the fault's own seed."""
    rng = SplitMix64(seed)
    raw = [rng.next() for _ in range(3)]
    if kind in (FaultKind.FlipTlpPayloadBit, FaultKind.FlipLcrcBit, FaultKind.FlipEcrcBit):
        return {"bit": raw[0] % (1 << 16)}
    if kind is FaultKind.FlipDllpCrcBit:
        return {"bit": raw[0] % 16}
    if kind is FaultKind.FlipSeqNum:
        return {"skip": 1 + raw[0] % 16}
    if kind is FaultKind.MalformHeader:
        return {"variant": raw[0] % 3, "value": raw[1] % (1 << 16)}
    if kind is FaultKind.StallCompletion:
        return {"stall": raw[0] % (1 << 16)}
    if kind is FaultKind.ForceCompleterAbort:
        return {"offset": (raw[0] % 1024) * 4}
    if kind is FaultKind.PlSymbolError:
        return {"symbol": raw[0] % (1 << 16)}
    return {}


@dataclass(frozen=True)
class FaultSpec:
    id: int
    cycle: int
    kind: FaultKind
    seed: int
    params: dict = field(default_factory=dict, compare=False, hash=False)

    @classmethod
    def build(cls, id: int, cycle: int, kind: FaultKind | str, seed: int) -> "FaultSpec":
        kind = FaultKind(kind)
        return cls(id, cycle, kind, seed & MASK64, fault_params(kind, seed & MASK64))

    def to_config(self) -> str:
        return f"{self.kind.value},{self.cycle},{self.seed}"


def gen_campaign(seed: int, count_per_kind: int, horizon: int,
                 kinds: list[FaultKind] | None = None) -> list[FaultSpec]:
    kinds = list(FaultKind) if kinds is None else [FaultKind(k) for k in kinds]
    n = count_per_kind * len(kinds)
    if n == 0:
        return []
    if n * MIN_SPACING > horizon:
        raise HorizonTooSmall(
            f"{n} faults at {MIN_SPACING}-cycle spacing need {n * MIN_SPACING} cycles, "
            f"horizon is {horizon}"
        )
    rng = SplitMix64(seed)
    slack = horizon - n * MIN_SPACING
    offsets = sorted(rng.below(slack + 1) for _ in range(n))
    cycles = [off + i * MIN_SPACING for i, off in enumerate(offsets)]
    order = [k for k in kinds for _ in range(count_per_kind)]
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        order[i], order[j] = order[j], order[i]
    return [FaultSpec.build(i, c, k, rng.next()) for i, (c, k) in enumerate(zip(cycles, order))]
