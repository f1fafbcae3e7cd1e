from hypothesis import given, strategies as st

from pcie_resilience.errors import ErrorKind
from pcie_resilience.ltssm import LinkState, Ltssm, LtssmEvent, ltssm_step


def run(events, state=LinkState()):
    errs = []
    for e in events:
        state, err = ltssm_step(state, e)
        errs.append(err)
    return state, errs


def test_training_reaches_l0_in_three_steps():
    s, errs = run([LtssmEvent.TrainOk] * 3)
    assert s.ltssm is Ltssm.L0 and errs == [None] * 3


def test_train_fail_during_training_restarts():
    s, errs = run([LtssmEvent.TrainOk, LtssmEvent.TrainFail])
    assert s.ltssm is Ltssm.Detect
    assert errs[-1] is ErrorKind.TrainingError


def test_train_fail_in_l0_reports_but_stays():
    s, _ = run([LtssmEvent.TrainOk] * 3)
    s2, err = ltssm_step(s, LtssmEvent.TrainFail)
    assert err is ErrorKind.TrainingError and s2.ltssm is Ltssm.L0


def test_fatal_retrain_round_trip():
    s, _ = run([LtssmEvent.TrainOk] * 3 + [LtssmEvent.FatalSeen])
    assert s.ltssm is Ltssm.RecoveryRetrain and s.retrain_count == 1
    s, _ = run([LtssmEvent.RetrainDone], s)
    assert s.ltssm is Ltssm.L0


@given(st.lists(st.sampled_from(list(LtssmEvent)), max_size=40))
def test_errors_only_from_train_fail(events):
    state = LinkState()
    for e in events:
        new, err = ltssm_step(state, e)
        if err is not None:
            assert e is LtssmEvent.TrainFail and err is ErrorKind.TrainingError
        if new.ltssm is Ltssm.RecoveryRetrain and state.ltssm is not Ltssm.RecoveryRetrain:
            assert state.ltssm is Ltssm.L0 and e is LtssmEvent.FatalSeen
        state = new
