import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from minibatch_ac import oracle
from minibatch_ac.generators import random_garnet
from minibatch_ac.mdp import KernelChoice, PathCursor, Trajectory, TransitionSample, sample_trajectory
from minibatch_ac.policy import (PolicyFeatures, SoftmaxPolicy, action_probs,
                                 estimate_assumption1_constants, fisher_estimate, random_pairs,
                                 sample_action, score, tv_distance)

ONE_STATE = PolicyFeatures.tabular(1, 2)


def test_features_are_rescaled():
    f = PolicyFeatures(np.full((2, 2, 3), 4.0))
    assert f.max_norm == pytest.approx(1.0)
    small = PolicyFeatures(np.full((1, 2, 1), 0.5))
    assert small.max_norm == 0.5


@pytest.mark.parametrize("bad", [np.zeros((2, 2)), np.array([[[np.nan]]])])
def test_bad_features_rejected(bad):
    with pytest.raises(ValueError):
        PolicyFeatures(bad)


def test_parameter_shape_checked():
    with pytest.raises(ValueError):
        SoftmaxPolicy(ONE_STATE, np.zeros(3))


def test_zero_params_give_uniform():
    f = PolicyFeatures.tabular(3, 4)
    assert np.allclose(SoftmaxPolicy.zeros(f).action_table(), 0.25)


def test_log3_logit_gives_three_to_one():
    p = SoftmaxPolicy(ONE_STATE, [np.log(3.0), 0.0])
    assert np.allclose(action_probs(p, 0), [0.75, 0.25], atol=1e-15)


def test_large_logits_do_not_overflow():
    p = SoftmaxPolicy(ONE_STATE, [1000.0, 0.0])
    probs = action_probs(p, 0)
    assert np.all(np.isfinite(probs))
    assert probs[0] == pytest.approx(1.0) and probs[1] < 1e-300
    assert np.allclose(score(p, 0, 1), [-1.0, 1.0])


def test_uniform_scores_one_state():
    p = SoftmaxPolicy.zeros(ONE_STATE)
    assert np.allclose(score(p, 0, 0), [0.5, -0.5])
    assert np.allclose(score(p, 0, 1), [-0.5, 0.5])


def test_identical_features_give_zero_score():
    f = PolicyFeatures(np.tile(np.array([0.3, -0.2])[None, None, :], (2, 3, 1)))
    p = SoftmaxPolicy(f, [1.0, 2.0])
    assert np.allclose(p.score_table(), 0.0)


def test_log_prob_matches_table():
    f = PolicyFeatures(np.random.default_rng(0).normal(size=(3, 4, 2)))
    p = SoftmaxPolicy(f, [0.5, -1.5])
    for s in range(3):
        for a in range(4):
            assert p.log_prob(s, a) == pytest.approx(np.log(p.action_probs(s)[a]))


def test_score_matches_finite_differences():
    rng = np.random.default_rng(1)
    f = PolicyFeatures(rng.normal(size=(4, 3, 5)))
    worst = 0.0
    for _ in range(100):
        w = rng.normal(size=5)
        s, a = rng.integers(4), rng.integers(3)
        fd = np.zeros(5)
        for i in range(5):
            e = np.zeros(5)
            e[i] = 1e-5
            fd[i] = (SoftmaxPolicy(f, w + e).log_prob(s, a)
                     - SoftmaxPolicy(f, w - e).log_prob(s, a)) / 2e-5
        psi = score(SoftmaxPolicy(f, w), s, a)
        worst = max(worst, np.linalg.norm(psi - fd) / np.linalg.norm(psi))
    assert worst < 1e-6


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-20, 20)))
def test_score_is_zero_mean_and_bounded(w):
    f = PolicyFeatures(np.random.default_rng(2).normal(size=(3, 3, 4)))
    p = SoftmaxPolicy(f, w)
    table = p.action_table()
    assert np.allclose(table.sum(axis=1), 1.0, atol=1e-12)
    psi = p.score_table()
    mean = np.einsum("sa,sad->sd", table, psi)
    assert np.abs(mean).max() < 1e-10
    assert np.linalg.norm(psi, axis=2).max() <= 2 * f.max_norm + 1e-12


def test_deterministic_limit_always_samples_that_action():
    p = SoftmaxPolicy(ONE_STATE, [50.0, -50.0])
    cur = PathCursor.from_seed(0, state=0)
    assert all(sample_action(p, cur, 0) == 0 for _ in range(1000))


def test_uniform_sampling_frequencies():
    p = SoftmaxPolicy.zeros(PolicyFeatures.tabular(1, 4))
    cur = PathCursor.from_seed(8, state=0)
    draws = [sample_action(p, cur, 0) for _ in range(100_000)]
    assert np.abs(np.bincount(draws, minlength=4) / 1e5 - 0.25).max() < 0.01


def test_sampling_is_seeded():
    p = SoftmaxPolicy(PolicyFeatures.tabular(1, 5), np.arange(5.0))
    a = [sample_action(p, PathCursor.from_seed(3, state=0), 0) for _ in range(5)]
    assert len(set(a)) == 1


def test_tv_distance_cases():
    p = SoftmaxPolicy(ONE_STATE, [0.2, 0.1])
    assert tv_distance(p, p, 0) == 0.0
    left = SoftmaxPolicy(ONE_STATE, [40.0, -40.0])
    right = SoftmaxPolicy(ONE_STATE, [-40.0, 40.0])
    assert tv_distance(left, right, 0) == pytest.approx(1.0)
    other = SoftmaxPolicy(PolicyFeatures.tabular(1, 2), [0.0, 0.0])
    with pytest.raises(ValueError):
        tv_distance(p, SoftmaxPolicy(PolicyFeatures(np.ones((1, 2, 2)) * 0.1), [0, 0]), 0)
    assert tv_distance(p, other, 0) >= 0.0


def test_tv_bounded_by_estimated_constant():
    rng = np.random.default_rng(3)
    f = PolicyFeatures(rng.normal(size=(3, 3, 4)))
    consts = estimate_assumption1_constants(f, random_pairs(4, 200, rng))
    for w1, w2 in random_pairs(4, 50, np.random.default_rng(4), scale=0.5):
        p1, p2 = SoftmaxPolicy(f, w1), SoftmaxPolicy(f, w2)
        for s in range(3):
            assert tv_distance(p1, p2, s) <= consts.c_pi_bound * np.linalg.norm(w1 - w2) + 1e-12


def test_fisher_one_state_each_action_once():
    p = SoftmaxPolicy.zeros(ONE_STATE)
    batch = [TransitionSample(0, 0, 0, 0.0), TransitionSample(0, 1, 0, 0.0)]
    assert np.allclose(fisher_estimate(p, batch), [[0.25, -0.25], [-0.25, 0.25]])


def test_fisher_single_sample_is_rank_one():
    f = PolicyFeatures(np.random.default_rng(5).normal(size=(2, 3, 4)))
    p = SoftmaxPolicy(f, np.ones(4))
    F = fisher_estimate(p, [TransitionSample(1, 2, 0, 0.0)])
    psi = score(p, 1, 2)
    assert np.allclose(F, np.outer(psi, psi))
    assert np.linalg.matrix_rank(F, tol=1e-12) == 1


def test_fisher_empty_batch():
    with pytest.raises(ValueError):
        fisher_estimate(SoftmaxPolicy.zeros(ONE_STATE), [])


def test_fisher_psd_and_symmetric():
    rng = np.random.default_rng(6)
    f = PolicyFeatures(rng.normal(size=(4, 3, 5)))
    for _ in range(100):
        p = SoftmaxPolicy(f, rng.normal(size=5))
        n = int(rng.integers(1, 30))
        batch = Trajectory(rng.integers(4, size=n), rng.integers(3, size=n),
                           np.zeros(n, int), np.zeros(n), np.zeros(n, bool))
        F = fisher_estimate(p, batch)
        assert np.abs(F - F.T).max() < 1e-12
        assert np.linalg.eigvalsh(F).min() >= -1e-10


def test_sampled_fisher_matches_exact():
    mdp = random_garnet(5, 3, 2, seed=7)
    f = PolicyFeatures(np.random.default_rng(7).normal(size=(5, 3, 3)))
    p = SoftmaxPolicy(f, [0.3, -0.4, 0.2])
    traj = sample_trajectory(mdp, PathCursor.from_seed(0, state=0), p, 100_000,
                             KernelChoice.VISITATION)
    assert np.abs(fisher_estimate(p, traj) - oracle.exact_fisher(mdp, p)).max() < 0.02


def test_assumption_constants_tabular():
    f = PolicyFeatures.tabular(3, 2)
    consts = estimate_assumption1_constants(f, random_pairs(6, 100, np.random.default_rng(0)))
    assert consts.c_psi == 2.0
    assert consts.l_psi_bound == 2.0
    assert consts.c_pi <= 0.5 * consts.c_psi
    assert consts.l_psi <= consts.l_psi_bound


def test_identical_pairs_skipped():
    w = np.ones(4)
    consts = estimate_assumption1_constants(PolicyFeatures.tabular(2, 2),
                                            [(w, w), (w, w + 0.1)])
    assert consts.pairs_used == 1
    with pytest.raises(ValueError):
        estimate_assumption1_constants(PolicyFeatures.tabular(2, 2), [])


def test_score_lipschitz_within_analytic_bound():
    rng = np.random.default_rng(9)
    f = PolicyFeatures(rng.normal(size=(3, 4, 3)))
    consts = estimate_assumption1_constants(f, random_pairs(3, 300, rng))
    assert consts.l_psi <= consts.l_psi_bound
