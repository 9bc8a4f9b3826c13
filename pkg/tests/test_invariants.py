"""Whole-execution invariants over fixed generated corpora."""
import pytest

from hotstuff_liveness.campaign import evaluate
from hotstuff_liveness.monitor import check_safety, classify_false_positive, is_hot
from hotstuff_liveness.scenarios import GeneratorConfig, fixture_deadlock, generate
from hotstuff_liveness.simnet import simulate


def corpus(kind, count, rounds=10):
    gcfg = GeneratorConfig.for_kind(kind, rounds=rounds, delay_injection=kind == "sync")
    return (generate(gcfg, seed) for seed in range(count))


@pytest.mark.parametrize("kind,rounds", [("2phase", 10), ("2phase", 20), ("sync", 10), ("hotstuff", 10)])
def test_true_violation_ends_hot_unless_forked(kind, rounds):
    """A run whose final correct locks conflict ends in a hot state.

    The exception is a run that already broke agreement: each side of the
    fork can keep executing on its own branch, so progress continues.
    """
    checked = 0
    for s in corpus(kind, 300, rounds):
        ex = simulate(s)
        if classify_false_positive(ex) or check_safety(ex) is not None:
            continue
        checked += 1
        assert is_hot(ex.states[-1], ex.store, s.config), s.seed
    if kind == "2phase":
        assert checked > 0


def test_forked_sync_run_keeps_executing_with_conflicting_locks():
    s = generate(GeneratorConfig.for_kind("sync", rounds=10, delay_injection=True), 868)
    ex = simulate(s)
    assert check_safety(ex) is not None and not classify_false_positive(ex)
    assert not is_hot(ex.states[-1], ex.store, s.config)


def test_conflict_is_not_hot_in_the_round_it_forms():
    # cut the deadlock right after round 2: the locks conflict but B2 was just executed
    ex = simulate(fixture_deadlock(silent_rounds=0))
    assert not classify_false_positive(ex)
    assert ex.states[-1].fresh_exec and not is_hot(ex.states[-1], ex.store, ex.scenario.config)


def test_basic_hotstuff_never_hot():
    for s in corpus("hotstuff", 300):
        res = evaluate(s)
        assert not any(res.hot), s.seed
