import numpy as np
import pytest
from hypothesis import given, strategies as st

from cprank.io import synth
from cprank.rank_reduce import (RankCollapse, SupportTracker, outer_solve_rr, prune, support,
                                support_closed)
from cprank.solver import SolverConfig, outer_solve
from cprank.tensor import FactorSet, reconstruct, unfold


def test_support_examples():
    m = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
    assert support(m) == {0, 2}
    assert support(np.zeros((3, 4))) == frozenset()
    assert support(np.ones((2, 5))) == set(range(5))


def test_support_is_exact():
    m = np.array([[1e-300, 0.0]])
    assert support(m) == {0}


def _fs(seed=0, R=3):
    rng = np.random.default_rng(seed)
    return FactorSet([rng.standard_normal((n, R)) for n in (4, 3, 5)])


def test_prune_zero_column_bit_exact():
    fs = _fs()
    fs.factors[2][:, 1] = 0.0
    out = prune(fs, {0, 2})
    assert out.rank == 2
    np.testing.assert_array_equal(reconstruct(out), reconstruct(fs))


def test_prune_all_is_identity():
    fs = _fs()
    out = prune(fs, range(3))
    for a, b in zip(out, fs):
        np.testing.assert_array_equal(a, b)


def test_prune_shapes():
    fs = _fs(R=5)
    out = prune(fs, {4, 0, 2})
    assert out.rank == 3 and out.shape == fs.shape
    np.testing.assert_array_equal(out[1], fs[1][:, [0, 2, 4]])


def test_prune_empty_and_out_of_range():
    with pytest.raises(RankCollapse):
        prune(_fs(), set())
    with pytest.raises(ValueError):
        prune(_fs(), {3})


def test_tracker_counts_and_resets():
    tr = SupportTracker(window=3)
    a, b = frozenset({0, 1}), frozenset({1})
    assert not tr.update(a)
    assert tr.stable_count == 0
    tr.update(a)
    tr.update(a)
    assert tr.stable_count == 2
    tr.update(b)
    assert tr.stable_count == 0
    tr.update(b)
    tr.update(b)
    assert tr.update(b)
    assert tr.stable_count == 3
    tr.update(b)
    assert tr.stable_count == 3


def test_tracker_same_size_different_set():
    tr = SupportTracker(window=2)
    tr.update(frozenset({0}))
    tr.update(frozenset({0}))
    tr.update(frozenset({1}))
    assert tr.stable_count == 0


def test_tracker_open_support_does_not_count():
    tr = SupportTracker(window=2)
    for _ in range(5):
        assert not tr.update(frozenset(), closed=False)
    assert tr.stable_count == 0


@given(st.lists(st.sampled_from([frozenset(), frozenset({0}), frozenset({0, 1})]), max_size=40),
       st.integers(1, 6))
def test_tracker_streak_semantics(seq, window):
    tr = SupportTracker(window=window)
    for i, s in enumerate(seq):
        tr.update(s)
        streak = 0
        j = i
        while j > 0 and seq[j - 1] == seq[i]:
            streak += 1
            j -= 1
        assert tr.stable_count == min(streak, window)
        assert 0 <= tr.stable_count <= window


def test_support_closed():
    X, truth = synth((6, 5, 4), 2, (1.0, 2.0), 0.0, seed=3)
    fs = FactorSet([np.column_stack([a, np.zeros(a.shape[0])]) for a in truth])
    fs.factors[0][:, 2] = 1.0 / np.sqrt(6)
    fs.factors[1][:, 2] = 1.0 / np.sqrt(5)
    # exact fit: gradient of the dead column is zero
    assert support_closed(unfold(X, 2), fs, 1e-4, 1e-5)
    # drop a true component: its residual reactivates the dead column slot
    fs.factors[2][:, 1] = 0.0
    fs.factors[0][:, 2] = truth[0][:, 1]
    fs.factors[1][:, 2] = truth[1][:, 1]
    assert not support_closed(unfold(X, 2), fs, 1e-4, 1e-5)


@pytest.fixture(scope="module")
def paired():
    X, _ = synth((10, 9, 8), 2, (1.0, 2.0), 0.0, seed=1001)
    cfg = SolverConfig(rank_init=4, seed=1)
    return X, cfg, outer_solve(X, cfg), outer_solve_rr(X, cfg)


def test_rr_prunes_once(paired):
    X, cfg, (fs, tr), (fr, trr) = paired
    assert trr.pruned_at is not None
    k = trr.pruned_at
    ranks = trr.column("rank")
    assert np.all(ranks[: k + 1] == cfg.rank_init)
    assert np.all(ranks[k + 1:] == fr.rank)
    assert np.all(trr.column("support_size")[k + 1:] == fr.rank)
    assert np.all(trr.column("lam")[k + 1:] == 0.0)


def test_rr_prune_instant_bit_exact(paired):
    _, _, _, (fr, trr) = paired
    before, after = trr.prune_rel_err
    assert abs(before - after) < 1e-15


def test_rr_matches_plain_solver(paired):
    X, cfg, (fs, tr), (fr, trr) = paired
    assert abs(tr[-1].rel_err - trr[-1].rel_err) < 1e-3
    assert trr.status == "Converged"
    assert len(trr) <= len(tr)
    assert trr.descent_violations(cfg.tau) == []
    for a in fr[:-1]:
        np.testing.assert_allclose(np.linalg.norm(a, axis=0), 1.0, atol=1e-12)


def test_rr_zero_tensor_collapses():
    fs, trace = outer_solve_rr(np.zeros((4, 4, 4)), SolverConfig(rank_init=3, stability_window=5))
    assert fs.rank == 0
    assert trace.prune_rel_err[1] == 1.0
    assert trace.status == "Converged"
