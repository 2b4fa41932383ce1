import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import PHI3
from minibatch_ac import critic, oracle
from minibatch_ac.critic import (CriticModel, LinearSaProblem, linear_sa, minibatch_td,
                                 prescribe_sa_hyperparams, td_delta, td_linear_sa_problem)
from minibatch_ac.generators import random_garnet, two_state_chain
from minibatch_ac.mdp import FiniteMdp, PathCursor, TransitionSample, step
from minibatch_ac.policy import PolicyFeatures, SoftmaxPolicy, sample_action

from conftest import stay_table


def garnet_setup():
    mdp = random_garnet(5, 3, 2, seed=7)
    pi = np.full((5, 3), 1.0 / 3.0)
    model = CriticModel.random(5, 3, seed=0)
    return mdp, pi, model


def test_model_rescales_and_checks_rank():
    m = CriticModel(np.array([[2.0, 0.0], [0.0, 4.0], [1.0, 1.0]]))
    assert np.linalg.norm(m.phi, axis=1).max() == pytest.approx(1.0)
    assert np.array_equal(m.theta, np.zeros(2))
    with pytest.raises(ValueError):
        CriticModel(np.ones((3, 2)))
    assert np.array_equal(CriticModel.tabular(3).phi, np.eye(3))
    r = CriticModel.random(6, 3, seed=1)
    assert np.allclose(np.linalg.norm(r.phi, axis=1), 1.0)


def test_td_delta_cases(chain2):
    sample = TransitionSample(0, 1, 1, 1.0)
    assert td_delta(CriticModel.tabular(2), sample, 0.9) == 1.0
    m = CriticModel(PHI3, np.array([0.5, -1.0]))
    s = TransitionSample(2, 0, 1, 0.3)
    assert td_delta(m, s, 0.9) == pytest.approx(0.3 + 0.9 * PHI3[1] @ m.theta - PHI3[2] @ m.theta)


def test_td_delta_zero_at_bellman_values(chain2):
    pi = np.array([[0.3, 0.7], [0.6, 0.4]])
    V = oracle.value_function(chain2, pi)
    m = CriticModel(np.eye(2), V)
    cur = PathCursor.from_seed(0, state=0)
    for _ in range(50):
        a = int(cur.rng.integers(2))
        sample = step(chain2, cur, a)
        # deterministic transitions: delta equals the advantage of the action
        _, adv = oracle.q_and_advantage(chain2, pi)
        assert td_delta(m, sample, 0.9) == pytest.approx(adv[sample.state, a], abs=1e-12)


def test_td_delta_zero_on_deterministic_policy(chain2):
    V = oracle.value_function(chain2, stay_table())
    m = CriticModel(np.eye(2), V)
    for s0 in (0, 1):
        cur = PathCursor.from_seed(s0, state=s0)
        for _ in range(5):
            assert td_delta(m, step(chain2, cur, 0), 0.9) == pytest.approx(0.0, abs=1e-12)


def test_zero_rewards_keep_theta_zero(chain2):
    mdp = FiniteMdp(chain2.transition, np.zeros((2, 2, 2)), chain2.init_dist, 0.9, 1.0)
    res = minibatch_td(mdp, np.full((2, 2), 0.5), CriticModel.tabular(2), 0.5, 50, 8,
                       PathCursor.from_seed(0, state=0))
    assert np.array_equal(res.history, np.zeros((51, 2)))


def test_always_stay_converges_to_values(chain2):
    res = minibatch_td(chain2, stay_table(), CriticModel.tabular(2), 0.1, 500, 64,
                       PathCursor.from_seed(0, state=1), theta_star=np.array([0.0, 10.0]))
    assert np.linalg.norm(res.theta - [0.0, 10.0]) < 0.2
    assert len(res.errors) == 500


def reference_single_sample_td(mdp, pol, phi, beta, n, cursor):
    theta = np.zeros(phi.shape[1])
    out = [theta.copy()]
    for _ in range(n):
        a = sample_action(pol, cursor, cursor.state)
        x = step(mdp, cursor, a)
        delta = x.reward + mdp.discount * phi[x.next_state] @ theta - phi[x.state] @ theta
        theta = theta + beta * (delta * phi[x.state])
        out.append(theta.copy())
    return np.array(out)


def test_batch_one_matches_single_sample_reference():
    mdp, _, model = garnet_setup()
    pol = SoftmaxPolicy(PolicyFeatures.tabular(5, 3), np.linspace(-1, 1, 15))
    res = minibatch_td(mdp, pol, model, 0.3, 300, 1, PathCursor.from_seed(4, state=2))
    ref = reference_single_sample_td(mdp, pol, model.phi, 0.3, 300,
                                     PathCursor.from_seed(4, state=2))
    assert np.allclose(res.history, ref, rtol=0, atol=1e-12)


def test_trace_mode_is_identical_and_continuous():
    mdp, pi, model = garnet_setup()
    star = oracle.td_fixed_point(mdp, pi, model.phi).theta_star
    c1, c2 = PathCursor.from_seed(1, state=0), PathCursor.from_seed(1, state=0)
    r1 = minibatch_td(mdp, pi, model, 0.5, 40, 16, c1, theta_star=star, keep_path=True)
    r2 = minibatch_td(mdp, pi, model, 0.5, 40, 16, c2, theta_star=star, trace=True,
                      keep_path=True)
    assert np.array_equal(r1.history, r2.history) and np.array_equal(r1.errors, r2.errors)
    assert np.array_equal(r1.visited, r2.visited)
    assert c1.state == c2.state == r1.visited[-1] and c1.steps == 640
    rows = r2.trace_rows()
    assert [r[0] for r in rows] == list(range(1, 41))
    assert all(b[2] >= a[2] for a, b in zip(rows, rows[1:]))
    with pytest.raises(ValueError):
        minibatch_td(mdp, pi, model, 0.5, 2, 2, PathCursor.from_seed(0, state=0)).trace_rows()


def test_invalid_hyperparameters():
    mdp, pi, model = garnet_setup()
    for beta, n, m in ((0.0, 1, 1), (0.1, 0, 1), (0.1, 1, 0)):
        with pytest.raises(ValueError):
            minibatch_td(mdp, pi, model, beta, n, m, PathCursor.from_seed(0, state=0))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 40), st.integers(1, 30))
def test_td_determinism_property(seed, n_outer, batch):
    mdp, pi, model = garnet_setup()
    runs = [minibatch_td(mdp, pi, model, 0.4, n_outer, batch, PathCursor.from_seed(seed, state=0))
            for _ in range(2)]
    assert np.array_equal(runs[0].history, runs[1].history)
    assert runs[0].cursor.state == runs[1].cursor.state


def test_converged_error_small():
    mdp, pi, model = garnet_setup()
    star = oracle.td_fixed_point(mdp, pi, model.phi).theta_star
    errs = [minibatch_td(mdp, pi, model, 0.2, 600, 512, PathCursor.from_seed(s, state=0),
                         theta_star=star).errors[-1] for s in range(20)]
    assert np.mean(errs) < 10 * 0.01


# -- linear SA ---------------------------------------------------------------------

def test_linear_sa_problem_means():
    mdp, pi, model = garnet_setup()
    prob = td_linear_sa_problem(mdp, pi, model.phi)
    fp = oracle.td_fixed_point(mdp, pi, model.phi)
    assert np.allclose(prob.A, fp.A, atol=1e-12)
    assert np.allclose(prob.b, fp.b, atol=1e-12)
    assert np.allclose(prob.theta_star, fp.theta_star, atol=1e-9)
    assert prob.lambda_A == pytest.approx(2 * fp.lambda_A)
    assert prob.c_A <= 2.0 + 1e-12


def test_linear_sa_equilibrium():
    chain = np.array([[0.2, 0.8], [0.6, 0.4]])
    A_x = np.array([-np.eye(2), -2 * np.eye(2)])
    prob = LinearSaProblem(chain, A_x, np.zeros((2, 2)))
    res = linear_sa(prob, 0.3, 50, 4, PathCursor.from_seed(0, state=0))
    assert np.array_equal(res.history, np.zeros((51, 2)))
    with pytest.raises(ValueError):
        linear_sa(prob, 0.0, 5, 4, PathCursor.from_seed(0, state=0))


def test_linear_sa_reproduces_td():
    mdp, pi, model = garnet_setup()
    prob = td_linear_sa_problem(mdp, pi, model.phi)
    c1, c2 = PathCursor.from_seed(3, state=1), PathCursor.from_seed(3, state=1)
    td = minibatch_td(mdp, pi, model, 0.5, 200, 32, c1)
    sa = linear_sa(prob, 0.5, 200, 32, c2)
    # same transitions; only the summation order of the arithmetic differs
    assert np.abs(td.history - sa.history).max() < 1e-10
    assert c1.state == c2.state and c1.steps == c2.steps


def test_iid_chain_mean_drift():
    rng = np.random.default_rng(0)
    n = 4
    chain = np.full((n, n), 1.0 / n)
    A_x = rng.normal(size=(n, 2, 2)) - 2 * np.eye(2)
    b_x = rng.normal(size=(n, 2))
    prob = LinearSaProblem(chain, A_x, b_x)
    theta0 = np.array([0.5, -0.3])
    alpha = 0.1
    steps = []
    for seed in range(200):
        res = linear_sa(prob, alpha, 1, 10_000, PathCursor.from_seed(seed, state=0), theta0=theta0)
        steps.append(res.theta - theta0)
    steps = np.array(steps)
    expected = alpha * (prob.A @ theta0 + prob.b)
    se = steps.std(axis=0) / np.sqrt(len(steps))
    assert np.all(np.abs(steps.mean(axis=0) - expected) < 3 * se + 1e-12)


def test_prescription_structure():
    mdp, pi, model = garnet_setup()
    prob = td_linear_sa_problem(mdp, pi, model.phi)
    p1 = prescribe_sa_hyperparams(prob, 0.02)
    p2 = prescribe_sa_hyperparams(prob, 0.01)
    assert p2.batch_real == pytest.approx(2 * p1.batch_real)
    lam = prob.lambda_A
    assert p2.n_iter_real - p1.n_iter_real == pytest.approx(8 / (lam * p1.alpha) * np.log(2))
    assert p1.alpha == pytest.approx(min(lam / (8 * prob.c_A ** 2), 4 / lam))
    inst = prescribe_sa_hyperparams(prob, 0.01, kappa_rho=(1.0, 0.0))
    assert inst.mixing_factor == 1.0


def test_prescription_rejects_unstable_problem():
    prob = LinearSaProblem(np.array([[1.0]]), np.array([[[1.0]]]), np.array([[1.0]]))
    with pytest.raises(ValueError):
        prescribe_sa_hyperparams(prob, 0.1)


def test_prescription_achieves_target_on_small_problem():
    # scalar problem with a noisy drift and i.i.d. chain: the prescription is runnable
    chain = np.full((2, 2), 0.5)
    prob = LinearSaProblem(chain, np.array([[[-0.5]], [[-1.5]]]), np.array([[1.0], [1.0]]))
    eps = 0.05
    pres = prescribe_sa_hyperparams(prob, eps)
    assert pres.n_iter * pres.batch < 5e7
    errs = [linear_sa(prob, pres.alpha, pres.n_iter, pres.batch, PathCursor.from_seed(s, state=0),
                      theta_star=prob.theta_star).errors[-1] for s in range(20)]
    assert np.mean(errs) <= eps
