"""Exact per-policy quantities computed by dense linear algebra.

Conventions: the objective is ``J(w) = sum_s xi(s) V(s)`` (no (1 - gamma)
factor), so ``exact_gradient`` carries a ``1 / (1 - gamma)`` in front of the
visitation-weighted advantage sum; the Fisher matrix is the plain
``E_nu[psi psi^T]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .mdp import FiniteMdp
from .policy import PolicyFeatures, SoftmaxPolicy, estimate_assumption1_constants, random_pairs


class OracleError(ValueError):
    pass


def _table(policy) -> np.ndarray:
    if isinstance(policy, SoftmaxPolicy):
        return policy.action_table()
    return np.asarray(policy, dtype=float)


def policy_chain(mdp: FiniteMdp, policy) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state kernel P_pi and expected one-step reward r_pi."""
    pi = _table(policy)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    r_pi = np.einsum("sa,sat,sat->s", pi, mdp.transition, mdp.reward)
    return P_pi, r_pi


def visitation_state_action_chain(mdp: FiniteMdp, policy) -> np.ndarray:
    """(S*A) x (S*A) kernel of the restart chain (s,a) -> (s',a')."""
    pi = _table(policy)
    S, A = pi.shape
    Pt = mdp.visitation_transition()
    K = Pt[:, :, :, None] * pi[None, None, :, :]
    return K.reshape(S * A, S * A)


# -- Markov chains ---------------------------------------------------------

def _unit_eigen_multiplicity(K: np.ndarray, tol: float = 1e-9) -> int:
    eig = np.linalg.eigvals(K)
    return int(np.sum(np.abs(eig - 1.0) < tol))


def stationary_distribution(K: np.ndarray) -> np.ndarray:
    """Unique mu with mu K = mu, from a bordered linear solve.

    Raises OracleError when the unit eigenvalue is repeated (reducible chain)
    or another eigenvalue sits on the unit circle (periodic chain).
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    eig = np.linalg.eigvals(K)
    on_circle = np.abs(np.abs(eig) - 1.0) < 1e-9
    if _unit_eigen_multiplicity(K) != 1 or on_circle.sum() != 1:
        raise OracleError(
            f"chain is not ergodic: {int(on_circle.sum())} eigenvalues on the unit circle"
        )
    # replace one balance equation with the normalisation constraint
    M = K.T - np.eye(n)
    M[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    mu = np.linalg.solve(M, rhs)
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def mixing_constants(K: np.ndarray, tv_floor: float = 1e-12,
                     max_t: int = 1 << 20) -> tuple[float, float]:
    """Return (kappa, rho): rho is the second-largest eigenvalue modulus and
    kappa the smallest constant with max_s TV(K^t(s,.), mu) <= kappa rho^t on a
    log-spaced grid of t running until the TV distance drops below ``tv_floor``.
    """
    K = np.asarray(K, dtype=float)
    mu = stationary_distribution(K)
    moduli = np.sort(np.abs(np.linalg.eigvals(K)))[::-1]
    rho = float(moduli[1]) if len(moduli) > 1 else 0.0
    if rho < 1e-12:
        rho = 0.0

    def tv_at(t):
        Kt = np.linalg.matrix_power(K, t)
        return 0.5 * np.abs(Kt - mu[None, :]).sum(axis=1).max()

    t_end = 1
    while tv_at(t_end) >= tv_floor and t_end < max_t:
        t_end *= 2
    grid = np.unique(np.concatenate([[0, 1, 2, 3],
                                     np.round(np.logspace(0, math.log10(t_end), 40))]))
    kappa = 0.0
    for t in grid.astype(int):
        tv = tv_at(t)
        if tv < tv_floor:
            continue
        kappa = max(kappa, tv / rho ** t if rho > 0 else tv)
    return kappa, rho


# -- values -----------------------------------------------------------------

def value_function(mdp: FiniteMdp, policy) -> np.ndarray:
    P_pi, r_pi = policy_chain(mdp, policy)
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * P_pi, r_pi)


def q_and_advantage(mdp: FiniteMdp, policy) -> tuple[np.ndarray, np.ndarray]:
    V = value_function(mdp, policy)
    Q = np.einsum("sat,sat->sa", mdp.transition, mdp.reward + mdp.discount * V[None, None, :])
    return Q, Q - V[:, None]


def state_visitation(mdp: FiniteMdp, policy) -> np.ndarray:
    """d_pi = (1 - gamma) xi^T (I - gamma P_pi)^{-1}."""
    P_pi, _ = policy_chain(mdp, policy)
    S = mdp.num_states
    return np.linalg.solve((np.eye(S) - mdp.discount * P_pi).T,
                           (1.0 - mdp.discount) * mdp.init_dist)


def visitation_measure(mdp: FiniteMdp, policy) -> np.ndarray:
    """nu_pi(s, a) = d_pi(s) pi(a|s) as an S x A array."""
    return state_visitation(mdp, policy)[:, None] * _table(policy)


def visitation_via_chain(mdp: FiniteMdp, policy) -> np.ndarray:
    """Same measure, as the stationary law of the restart state-action chain."""
    pi = _table(policy)
    return stationary_distribution(visitation_state_action_chain(mdp, pi)).reshape(pi.shape)


def objective(mdp: FiniteMdp, policy) -> float:
    return float(mdp.init_dist @ value_function(mdp, policy))


def exact_gradient(mdp: FiniteMdp, policy: SoftmaxPolicy) -> np.ndarray:
    nu = visitation_measure(mdp, policy)
    _, adv = q_and_advantage(mdp, policy)
    psi = policy.score_table()
    return np.einsum("sa,sa,sad->d", nu, adv, psi) / (1.0 - mdp.discount)


def exact_fisher(mdp: FiniteMdp, policy: SoftmaxPolicy) -> np.ndarray:
    nu = visitation_measure(mdp, policy)
    psi = policy.score_table()
    F = np.einsum("sa,sad,sae->de", nu, psi, psi)
    return 0.5 * (F + F.T)


def surrogate_gradient(mdp: FiniteMdp, policy: SoftmaxPolicy, phi: np.ndarray,
                       theta: np.ndarray, successor: str = "literal") -> np.ndarray:
    """g(theta, w) = E_nu[ E[delta_theta | s, a] psi(s, a) ].

    The expectation of the actor's mini-batch direction when the critic
    parameter is held at ``theta``. With ``successor="literal"`` the TD error
    uses the restart-kernel successor (reward included); with ``"raw"`` it
    uses a draw from P(.|s, a).
    """
    v = np.asarray(phi) @ theta
    if successor == "literal":
        K = mdp.visitation_transition()
    elif successor == "raw":
        K = mdp.transition
    else:
        raise ValueError(f"successor must be 'literal' or 'raw', got {successor!r}")
    exp_delta = np.einsum("sat,sat->sa", K, mdp.reward + mdp.discount * v[None, None, :]) \
        - v[:, None]
    nu = visitation_measure(mdp, policy)
    return np.einsum("sa,sa,sad->d", nu, exp_delta, policy.score_table())


# -- TD fixed point -----------------------------------------------------------

@dataclass
class TdFixedPoint:
    A: np.ndarray
    b: np.ndarray
    theta_star: np.ndarray
    lambda_A: float
    mu: np.ndarray


def _check_full_rank(phi: np.ndarray):
    sv = np.linalg.svd(phi, compute_uv=False)
    if sv.min() <= 1e-10:
        raise OracleError(f"critic features are rank deficient (min singular value {sv.min():.3g})")


def td_fixed_point(mdp: FiniteMdp, policy, phi: np.ndarray) -> TdFixedPoint:
    """Mean TD drift A theta + b under the raw chain's stationary law.

    ``lambda_A = -lambda_max((A + A^T) / 2)`` certifies
    ``(theta - theta*)^T A (theta - theta*) <= -lambda_A ||theta - theta*||^2``.
    """
    phi = np.asarray(phi, dtype=float)
    _check_full_rank(phi)
    P_pi, r_pi = policy_chain(mdp, policy)
    mu = stationary_distribution(P_pi)
    D = np.diag(mu)
    A = phi.T @ D @ (mdp.discount * P_pi - np.eye(mdp.num_states)) @ phi
    b = phi.T @ (mu * r_pi)
    theta = -np.linalg.solve(A, b)
    lam = -float(np.linalg.eigvalsh(0.5 * (A + A.T)).max())
    if lam <= 0:
        raise OracleError(f"TD drift matrix is not negative definite (lambda_A = {lam:.3g})")
    return TdFixedPoint(A, b, theta, lam, mu)


# -- optimal control ----------------------------------------------------------

def optimal_value(mdp: FiniteMdp) -> tuple[float, np.ndarray, np.ndarray]:
    """Value iteration; returns (J*, V*, greedy deterministic policy as S x A)."""
    g = mdp.discount
    tol = 1e-12 * (1.0 - g) / g
    expected_r = np.einsum("sat,sat->sa", mdp.transition, mdp.reward)
    V = np.zeros(mdp.num_states)
    while True:
        Q = expected_r + g * mdp.transition @ V
        V_new = Q.max(axis=1)
        done = np.abs(V_new - V).max() < tol
        V = V_new
        if done:
            break
    Q = expected_r + g * mdp.transition @ V
    greedy = np.argmax(Q, axis=1)  # lowest index on ties
    pi = np.zeros((mdp.num_states, mdp.num_actions))
    pi[np.arange(mdp.num_states), greedy] = 1.0
    return float(mdp.init_dist @ V), V, pi


# -- approximation errors -----------------------------------------------------

def critic_approx_error(mdp: FiniteMdp, policy, phi: np.ndarray) -> float:
    """E_nu |V_pi(s) - phi(s) . theta*_pi|^2."""
    V = value_function(mdp, policy)
    fp = td_fixed_point(mdp, policy, phi)
    d = state_visitation(mdp, policy)
    return float(d @ (V - np.asarray(phi) @ fp.theta_star) ** 2)


def actor_approx_error(mdp: FiniteMdp, policy: SoftmaxPolicy) -> tuple[float, np.ndarray]:
    """min_p E_nu (psi . p - A_pi)^2 by weighted least squares; returns (error, p)."""
    nu = visitation_measure(mdp, policy).reshape(-1)
    _, adv = q_and_advantage(mdp, policy)
    psi = policy.score_table().reshape(len(nu), -1)
    sw = np.sqrt(nu)
    p, *_ = np.linalg.lstsq(psi * sw[:, None], adv.reshape(-1) * sw, rcond=None)
    resid = psi @ p - adv.reshape(-1)
    return float(nu @ resid ** 2), p


def max_over_policies(fn, mdp: FiniteMdp, features: PolicyFeatures, params, *args) -> float:
    """Max of a per-policy error over the given parameter vectors.

    A lower bound on the supremum over the whole parameter space.
    """
    return max(_scalar(fn(mdp, SoftmaxPolicy(features, w), *args)) for w in params)


def _scalar(x):
    return x[0] if isinstance(x, tuple) else x


# -- constants from the convergence analysis ---------------------------------

@dataclass
class LipschitzReport:
    l_j: float
    c_nu: float
    c_nu_half: float
    c_psi: float
    l_psi: float
    c_pi: float
    kappa: float
    rho: float
    empirical_ratio: float = float("nan")
    pairs_checked: int = 0

    @property
    def holds(self) -> bool:
        return self.empirical_ratio <= self.l_j


def _log_term(kappa: float, rho: float) -> float:
    # ceil(log_rho(1/kappa)); zero in the instant-mixing limits
    if rho <= 0.0 or kappa <= 1.0:
        return 0.0
    return float(math.ceil(math.log(1.0 / kappa) / math.log(rho)))


def visitation_mixing(mdp: FiniteMdp, features: PolicyFeatures, params) -> tuple[float, float]:
    """Worst (kappa, rho) of the restart state chain over a set of policies."""
    kappa = rho = 0.0
    for w in params:
        P_pi, _ = policy_chain(mdp, SoftmaxPolicy(features, w))
        K = mdp.discount * P_pi + (1.0 - mdp.discount) * mdp.init_dist[None, :]
        k, r = mixing_constants(K)
        kappa, rho = max(kappa, k), max(rho, r)
    return kappa, rho


def lipschitz_constants(mdp: FiniteMdp, features: PolicyFeatures, seed: int = 0,
                        n_pairs: int = 200, n_grid: int = 20, scale: float = 2.0,
                        check: bool = True) -> LipschitzReport:
    """Gradient Lipschitz constant L_J and an empirical sweep against it.

    The policy constants entering L_J are the analytic softmax upper bounds;
    mixing constants are the worst over w = 0 plus ``n_grid`` random policies.
    C_nu is taken as the larger of the two published forms (with and without
    the leading 1/2).
    """
    rng = np.random.default_rng(seed)
    grid = [np.zeros(features.dim)] + [rng.normal(scale=scale, size=features.dim)
                                       for _ in range(n_grid)]
    kappa, rho = visitation_mixing(mdp, features, grid)
    consts = estimate_assumption1_constants(features, random_pairs(features.dim, 20, rng, scale))
    c_pi = consts.c_pi_bound
    bracket = 1.0 + _log_term(kappa, rho) + 1.0 / (1.0 - rho)
    c_nu_half = 0.5 * c_pi * bracket
    c_nu = max(c_nu_half, c_pi * bracket)
    l_j = mdp.r_max / (1.0 - mdp.discount) * (4.0 * c_nu * consts.c_psi + consts.l_psi_bound)
    report = LipschitzReport(l_j, c_nu, c_nu_half, consts.c_psi, consts.l_psi_bound, c_pi,
                             kappa, rho)
    if check:
        ratio = 0.0
        for w1, w2 in random_pairs(features.dim, n_pairs, rng, scale):
            g1 = exact_gradient(mdp, SoftmaxPolicy(features, w1))
            g2 = exact_gradient(mdp, SoftmaxPolicy(features, w2))
            ratio = max(ratio, np.linalg.norm(g1 - g2) / np.linalg.norm(w1 - w2))
        report.empirical_ratio = float(ratio)
        report.pairs_checked = n_pairs
    return report


@dataclass
class FisherGap:
    lambdas: np.ndarray
    gaps: np.ndarray
    slope: float
    projection_residual: float


def fisher_direction_gap(mdp: FiniteMdp, policy: SoftmaxPolicy, lambdas) -> FisherGap:
    """||(F + lam I)^{-1} grad J - F^+ grad J|| for each regulariser value."""
    F = exact_fisher(mdp, policy)
    g = exact_gradient(mdp, policy)
    pinv = np.linalg.pinv(F, rcond=1e-12, hermitian=True)
    resid = float(np.linalg.norm(F @ (pinv @ g) - g))
    base = pinv @ g
    lambdas = np.asarray(lambdas, dtype=float)
    gaps = np.array([np.linalg.norm(np.linalg.solve(F + lam * np.eye(len(g)), g) - base)
                     if lam > 0 else 0.0 for lam in lambdas])
    mask = (lambdas > 0) & (gaps > 0)
    slope = float("nan")
    if mask.sum() >= 2:
        slope = float(np.polyfit(np.log(lambdas[mask]), np.log(gaps[mask]), 1)[0])
    return FisherGap(lambdas, gaps, slope, resid)


# -- bundled dump -------------------------------------------------------------

@dataclass
class OracleSolution:
    mu: np.ndarray
    nu: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    Adv: np.ndarray
    J: float
    grad_J: np.ndarray
    fisher: np.ndarray
    td_star: np.ndarray | None
    A_pi: np.ndarray | None
    b_pi: np.ndarray | None
    lambda_A: float | None
    kappa_rho: tuple[float, float]
    zeta_critic: float | None
    zeta_actor: float
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, tuple):
                return [conv(x) for x in v]
            return v
        return json.dumps({k: conv(v) for k, v in asdict(self).items()}, indent=2)


def solve(mdp: FiniteMdp, policy: SoftmaxPolicy, phi: np.ndarray | None = None) -> OracleSolution:
    P_pi, _ = policy_chain(mdp, policy)
    notes = []
    Q, adv = q_and_advantage(mdp, policy)
    fp = None
    zc = None
    if phi is not None:
        try:
            fp = td_fixed_point(mdp, policy, phi)
            zc = critic_approx_error(mdp, policy, phi)
        except OracleError as exc:
            notes.append(str(exc))
    return OracleSolution(
        mu=stationary_distribution(P_pi),
        nu=visitation_measure(mdp, policy),
        V=value_function(mdp, policy),
        Q=Q,
        Adv=adv,
        J=objective(mdp, policy),
        grad_J=exact_gradient(mdp, policy),
        fisher=exact_fisher(mdp, policy),
        td_star=None if fp is None else fp.theta_star,
        A_pi=None if fp is None else fp.A,
        b_pi=None if fp is None else fp.b,
        lambda_A=None if fp is None else fp.lambda_A,
        kappa_rho=mixing_constants(P_pi),
        zeta_critic=zc,
        zeta_actor=actor_approx_error(mdp, policy)[0],
        notes=notes,
    )
