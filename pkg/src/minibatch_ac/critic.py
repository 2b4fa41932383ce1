"""Mini-batch TD(0) with linear features and general mini-batch linear SA."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from . import oracle
from .mdp import FiniteMdp, PathCursor, TransitionSample
from .policy import SoftmaxPolicy


@dataclass(eq=False)
class CriticModel:
    """Linear value estimate V(s) = phi(s) . theta.

    Rows of ``phi`` are rescaled (jointly) so that max_s ||phi(s)|| <= 1.
    """

    phi: np.ndarray
    theta: np.ndarray | None = None

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 2:
            raise ValueError("critic features must be an S x d2 matrix")
        norm = np.linalg.norm(phi, axis=1).max()
        if norm > 1.0:
            phi = phi / norm
        sv = np.linalg.svd(phi, compute_uv=False)
        if sv.min() <= 1e-10:
            raise ValueError(f"critic features are rank deficient (min singular value {sv.min():.3g})")
        self.phi = phi
        self.theta = np.zeros(phi.shape[1]) if self.theta is None else np.array(self.theta, dtype=float)

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    def values(self) -> np.ndarray:
        return self.phi @ self.theta

    @classmethod
    def tabular(cls, num_states: int) -> "CriticModel":
        return cls(np.eye(num_states))

    @classmethod
    def random(cls, num_states: int, dim: int, seed: int) -> "CriticModel":
        rng = np.random.default_rng(seed)
        phi = rng.normal(size=(num_states, dim))
        return cls(phi / np.linalg.norm(phi, axis=1, keepdims=True))


def td_delta(model: CriticModel, sample: TransitionSample, discount: float) -> float:
    phi, theta = model.phi, model.theta
    return sample.reward + discount * phi[sample.next_state] @ theta - phi[sample.state] @ theta


def _action_table(policy) -> np.ndarray:
    return policy.action_table() if isinstance(policy, SoftmaxPolicy) else np.asarray(policy, float)


@dataclass
class TdRunResult:
    theta: np.ndarray
    cursor: PathCursor
    history: np.ndarray          # (T_c + 1) x d2, row k is theta_k
    errors: np.ndarray | None    # ||theta_k - theta*||^2 for k = 1..T_c
    entry_state: int
    wallclock_ns: np.ndarray | None = None
    visited: np.ndarray | None = field(default=None, repr=False)
    actions: np.ndarray | None = field(default=None, repr=False)

    def trace_rows(self):
        """CSV rows (k, theta_err_sq, wallclock_ns) for k = 1..T_c."""
        if self.errors is None:
            raise ValueError("no error trace: run without an oracle theta*")
        clock = self.wallclock_ns if self.wallclock_ns is not None else np.zeros(len(self.errors))
        return [(k + 1, float(e), int(c)) for k, (e, c) in enumerate(zip(self.errors, clock))]


def minibatch_td(mdp: FiniteMdp, policy, model: CriticModel, beta: float, n_outer: int,
                 batch: int, cursor: PathCursor, theta_star: np.ndarray | None = None,
                 trace: bool = False, keep_path: bool = False) -> TdRunResult:
    """Mini-batch TD on the raw kernel, continuing the cursor's path.

    Each outer step averages ``batch`` consecutive TD(0) directions
    delta * phi(s). ``model.theta`` is the starting point and is not modified.
    With ``trace`` the loop is driven one outer step at a time to time it;
    the numbers are identical either way.
    """
    if not beta > 0:
        raise ValueError("critic stepsize must be positive")
    if n_outer < 1 or batch < 1:
        raise ValueError("need at least one outer iteration and batch size >= 1")
    pi_cdf = _kernels.cdf_rows(_action_table(policy))
    entry = cursor.state
    args = (pi_cdf, mdp.transition_cdf, mdp.reward, model.phi, mdp.discount, beta)
    if trace:
        history = [model.theta.copy()]
        visited, actions, clock = [np.array([entry])], [], []
        t0 = time.perf_counter_ns()
        for _ in range(n_outer):
            u = cursor.uniforms((batch, _kernels.RAW_DRAWS))
            h, v, a = _kernels.minibatch_td(cursor.state, *args, history[-1], 1, batch, u)
            history.append(h[1])
            visited.append(v[1:])
            actions.append(a)
            cursor.state = int(v[-1])
            clock.append(time.perf_counter_ns() - t0)
        history = np.array(history)
        visited, actions = np.concatenate(visited), np.concatenate(actions)
        clock = np.array(clock, dtype=np.int64)
    else:
        u = cursor.uniforms((n_outer * batch, _kernels.RAW_DRAWS))
        history, visited, actions = _kernels.minibatch_td(cursor.state, *args, model.theta.copy(),
                                                          n_outer, batch, u)
        cursor.state = int(visited[-1])
        clock = None
    cursor.steps += n_outer * batch
    errors = None
    if theta_star is not None:
        errors = ((history[1:] - theta_star) ** 2).sum(axis=1)
    return TdRunResult(history[-1].copy(), cursor, history, errors, entry, clock,
                       visited if keep_path else None, actions if keep_path else None)


# -- general linear SA ---------------------------------------------------------

@dataclass(eq=False)
class LinearSaProblem:
    """theta <- theta + alpha * mean_batch(A_x theta + b_x) over a Markov chain.

    ``lambda_A`` follows the convention
    <theta - theta*, A (theta - theta*)> <= -(lambda_A / 2) ||theta - theta*||^2,
    i.e. it is twice the negated top eigenvalue of the symmetric part of A.
    ``sampler(cursor, n)`` may replace the default chain sampler; it must
    return the next ``n`` chain states and advance the cursor.
    """

    chain: np.ndarray
    A_x: np.ndarray              # n_chain x d x d
    b_x: np.ndarray              # n_chain x d
    sampler: Callable | None = None
    mu: np.ndarray = field(init=False)
    A: np.ndarray = field(init=False)
    b: np.ndarray = field(init=False)

    def __post_init__(self):
        self.chain = np.asarray(self.chain, dtype=float)
        self.A_x = np.asarray(self.A_x, dtype=float)
        self.b_x = np.asarray(self.b_x, dtype=float)
        self.mu = oracle.stationary_distribution(self.chain)
        self.A = np.einsum("x,xij->ij", self.mu, self.A_x)
        self.b = self.mu @ self.b_x
        if abs(np.linalg.det(self.A)) < 1e-300:
            raise ValueError("mean drift matrix A is singular")
        self._cdf = _kernels.cdf_rows(self.chain)

    @property
    def dim(self) -> int:
        return self.b_x.shape[1]

    @property
    def theta_star(self) -> np.ndarray:
        return -np.linalg.solve(self.A, self.b)

    @property
    def lambda_A(self) -> float:
        return -2.0 * float(np.linalg.eigvalsh(0.5 * (self.A + self.A.T)).max())

    @property
    def c_A(self) -> float:
        return float(np.linalg.norm(self.A_x, axis=(1, 2)).max())

    @property
    def c_b(self) -> float:
        return float(np.linalg.norm(self.b_x, axis=1).max())

    def sample(self, cursor: PathCursor, n: int) -> np.ndarray:
        if self.sampler is not None:
            return self.sampler(cursor, n)
        path = _kernels.chain_path(cursor.state, self._cdf, cursor.uniforms(n))
        cursor.state = int(path[-1])
        cursor.steps += n
        return path[1:]


@dataclass
class SaRunResult:
    theta: np.ndarray
    history: np.ndarray
    errors: np.ndarray | None
    cursor: PathCursor
    chain_states: np.ndarray | None = field(default=None, repr=False)


def linear_sa(problem: LinearSaProblem, alpha: float, n_iter: int, batch: int,
              cursor: PathCursor, theta0=None, theta_star: np.ndarray | None = None,
              keep_path: bool = False) -> SaRunResult:
    if not alpha > 0:
        raise ValueError("stepsize must be positive")
    theta = np.zeros(problem.dim) if theta0 is None else np.array(theta0, dtype=float)
    n_chain = problem.chain.shape[0]
    history = np.empty((n_iter + 1, problem.dim))
    history[0] = theta
    xs = problem.sample(cursor, n_iter * batch)
    for k in range(n_iter):
        counts = np.bincount(xs[k * batch:(k + 1) * batch], minlength=n_chain) / batch
        A_hat = np.tensordot(counts, problem.A_x, axes=1)
        b_hat = counts @ problem.b_x
        theta = theta + alpha * (A_hat @ theta + b_hat)
        history[k + 1] = theta
    errors = None if theta_star is None else ((history[1:] - theta_star) ** 2).sum(axis=1)
    return SaRunResult(theta, history, errors, cursor, xs if keep_path else None)


def td_linear_sa_problem(mdp: FiniteMdp, policy, phi: np.ndarray) -> LinearSaProblem:
    """TD(0) written as linear SA over transitions x = (s, a, s').

    A_x = phi(s) (gamma phi(s') - phi(s))^T and b_x = r(s, a, s') phi(s). The
    sampler walks the MDP exactly like :func:`minibatch_td`, so a shared seed
    gives the same transitions.
    """
    phi = np.asarray(phi, dtype=float)
    pi = _action_table(policy)
    S, A = pi.shape
    g = mdp.discount
    # chain over x = (s*A + a)*S + s'
    P = mdp.transition
    step_prob = (pi[:, :, None] * P).reshape(-1)            # prob of x starting from s
    chain = np.zeros((S * A * S, S * A * S))
    nxt = np.arange(S * A * S) % S
    for x in range(S * A * S):
        s2 = nxt[x]
        chain[x, s2 * A * S:(s2 + 1) * A * S] = step_prob[s2 * A * S:(s2 + 1) * A * S]
    s_of = np.arange(S * A * S) // (A * S)
    A_x = np.einsum("xi,xj->xij", phi[s_of], g * phi[nxt] - phi[s_of])
    b_x = mdp.reward.reshape(-1)[:, None] * phi[s_of]
    pi_cdf = _kernels.cdf_rows(pi)

    def sampler(cursor: PathCursor, n: int) -> np.ndarray:
        u = cursor.uniforms((n, _kernels.RAW_DRAWS))
        s, a, s2, _, _ = _kernels.sample_path(cursor.state, pi_cdf, mdp.transition_cdf,
                                              mdp.init_cdf, mdp.reward, 0.0, False, u)
        cursor.state = int(s2[-1])
        cursor.steps += n
        return (s * A + a) * S + s2

    return LinearSaProblem(chain, A_x, b_x, sampler)


@dataclass
class SaPrescription:
    alpha: float
    batch: int
    n_iter: int
    batch_real: float
    n_iter_real: float
    r_theta: float
    mixing_factor: float


def prescribe_sa_hyperparams(problem: LinearSaProblem, eps: float, theta0=None,
                             r_theta: float | None = None,
                             kappa_rho: tuple[float, float] | None = None) -> SaPrescription:
    """Constant stepsize, batch size and iteration count guaranteeing
    E||theta_K - theta*||^2 <= eps for mini-batch linear SA.

    ``r_theta`` defaults to twice ||theta*||; mixing constants default to those
    of the problem's chain.
    """
    lam = problem.lambda_A
    if lam <= 0:
        raise ValueError(f"lambda_A must be positive, got {lam}")
    c_a, c_b = problem.c_A, problem.c_b
    star = problem.theta_star
    if r_theta is None:
        r_theta = 2.0 * float(np.linalg.norm(star))
    kappa, rho = kappa_rho if kappa_rho is not None else oracle.mixing_constants(problem.chain)
    mix = (1.0 + (kappa - 1.0) * rho) / (1.0 - rho)
    alpha = min(lam / (8.0 * c_a ** 2), 4.0 / lam)
    theta0 = np.zeros(problem.dim) if theta0 is None else np.asarray(theta0, float)
    init_err = float(np.sum((theta0 - star) ** 2))
    k_real = 8.0 / (lam * alpha) * math.log(2.0 * init_err / eps) if init_err > 0 else 0.0
    m_real = (2.0 / lam + 2.0 * alpha) * 384.0 * (c_a ** 2 * r_theta ** 2 + c_b ** 2) * mix \
        / (lam * eps)
    return SaPrescription(alpha, max(1, math.ceil(m_real)), max(1, math.ceil(k_real)),
                          m_real, k_real, r_theta, mix)
