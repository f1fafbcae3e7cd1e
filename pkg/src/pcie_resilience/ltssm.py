"""LTSSM-lite: the link training state machine."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

from .errors import ErrorKind


class Ltssm(enum.Enum):
    Detect = "Detect"
    Polling = "Polling"
    Config = "Config"
    L0 = "L0"
    RecoveryRetrain = "RecoveryRetrain"
    Disabled = "Disabled"


class LtssmEvent(enum.Enum):
    TrainOk = "TrainOk"
    TrainFail = "TrainFail"
    FatalSeen = "FatalSeen"
    RetrainDone = "RetrainDone"


TRAINING_STATES = (Ltssm.Detect, Ltssm.Polling, Ltssm.Config)
_NEXT = {Ltssm.Detect: Ltssm.Polling, Ltssm.Polling: Ltssm.Config, Ltssm.Config: Ltssm.L0}


@dataclass(frozen=True)
class LinkState:
    ltssm: Ltssm = Ltssm.Detect
    cycles_in_state: int = 0
    retrain_count: int = 0

    def moved_to(self, ltssm: Ltssm, **kw) -> "LinkState":
        if ltssm is self.ltssm and not kw:
            return self
        return replace(self, ltssm=ltssm, cycles_in_state=0, **kw)


def ltssm_step(state: LinkState, event: LtssmEvent) -> tuple[LinkState, Optional[ErrorKind]]:
    """One LTSSM transition; returns the new state and any error raised.

    A TrainFail seen in L0 reports a TrainingError but leaves the link in L0:
    whether the link retrains is the fatal-error handler's decision.
    """
    s = state.ltssm
    if event is LtssmEvent.TrainOk:
        return (state.moved_to(_NEXT[s]) if s in _NEXT else state), None
    if event is LtssmEvent.TrainFail:
        if s in TRAINING_STATES or s is Ltssm.RecoveryRetrain:
            return state.moved_to(Ltssm.Detect), ErrorKind.TrainingError
        if s is Ltssm.L0:
            return state, ErrorKind.TrainingError
        return state, None
    if event is LtssmEvent.FatalSeen:
        if s is Ltssm.L0:
            return state.moved_to(Ltssm.RecoveryRetrain, retrain_count=state.retrain_count + 1), None
        return state, None
    if event is LtssmEvent.RetrainDone and s is Ltssm.RecoveryRetrain:
        return state.moved_to(Ltssm.L0), None
    return state, None
