"""Nested-loop actor-critic (AC) and natural actor-critic (NAC) on one sample path."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg

from . import _kernels, oracle
from .critic import (CriticModel, SaPrescription, minibatch_td, prescribe_sa_hyperparams,
                     td_linear_sa_problem)
from .mdp import FiniteMdp, PathCursor, Trajectory
from .policy import PolicyFeatures, SoftmaxPolicy, estimate_assumption1_constants, random_pairs

METRICS = ("grad_norm_sq", "J_w", "gap", "theta_err_sq", "zeta_critic", "zeta_actor")
CSV_COLUMNS = ("t", "grad_norm_sq", "J_w", "gap", "theta_err_sq", "zeta_critic", "zeta_actor",
               "cumulative_samples", "wallclock_ns")


@dataclass
class ActorConfig:
    variant: str = "ac"              # "ac" or "nac"
    alpha: float = 0.1
    batch: int = 256                 # B
    lam: float = 1e-2                # Fisher regulariser, NAC only
    iterations: int = 100            # T
    beta: float = 0.5
    critic_iters: int = 20           # T_c
    critic_batch: int = 32           # M
    w0: np.ndarray | None = None
    seed: int = 0
    warm_start: bool = False
    # "literal": the TD error uses the sampled restart-kernel successor;
    # "raw": restart steps use a fresh draw from P(.|s, a) instead
    successor: str = "literal"

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in ("ac", "nac"):
            raise ValueError(f"variant must be 'ac' or 'nac', got {self.variant!r}")
        if self.alpha < 0 or self.batch < 1 or self.iterations < 1:
            raise ValueError("alpha must be >= 0 and batch, iterations >= 1")
        if self.critic_iters < 1 or self.critic_batch < 1 or not self.beta > 0:
            raise ValueError("critic needs beta > 0, T_c >= 1, M >= 1")
        if self.variant == "nac" and not self.lam > 0:
            raise ValueError("NAC needs a positive Fisher regulariser")
        if self.successor not in ("literal", "raw"):
            raise ValueError("successor must be 'literal' or 'raw'")

    @property
    def samples_per_iteration(self) -> int:
        return self.batch + self.critic_batch * self.critic_iters


@dataclass
class PhaseRecord:
    kind: str          # "critic" or "actor"
    entry: int
    exit: int
    samples: int


@dataclass
class RunTrace:
    """Per-iteration records for t = 0..T-1 plus the final iterate w_T."""

    config: ActorConfig
    j_star: float
    params: np.ndarray               # (T + 1) x d1, rows w_0 .. w_T
    thetas: np.ndarray               # T x d2
    metrics: dict[str, np.ndarray]   # each length T; NaN where not tracked
    cumulative_samples: np.ndarray
    wallclock_ns: np.ndarray
    final: dict[str, float]          # metrics of w_T
    t_hat: int
    cursor_state: int
    phases: list[PhaseRecord] = field(default_factory=list, repr=False)
    samples: list[Trajectory] | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.thetas)

    def metric_at(self, name: str, t: int) -> float:
        """Metric of iterate w_t for t in 0..T (t = T reads the final record)."""
        if t == len(self):
            return self.final[name]
        return float(self.metrics[name][t])

    @property
    def output_params(self) -> np.ndarray:
        return self.params[self.t_hat]

    def running_average(self, name: str) -> float:
        return float(np.mean(self.metrics[name]))

    def rows(self):
        for t in range(len(self)):
            yield (t, *(float(self.metrics[m][t]) for m in METRICS),
                   int(self.cumulative_samples[t]), int(self.wallclock_ns[t]))

    def write_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            writer.writerows(self.rows())


def actor_gradient_estimate(policy: SoftmaxPolicy, critic: CriticModel, batch: Trajectory,
                            discount: float) -> np.ndarray:
    """(1/B) sum_i delta_theta(s_i, a_i, s_{i+1}) psi_w(s_i, a_i)."""
    if len(batch) == 0:
        raise ValueError("actor batch is empty")
    v = critic.values()
    delta = batch.rewards + discount * v[batch.next_states] - v[batch.states]
    psi = policy.score_table()[batch.states, batch.actions]
    return delta @ psi / len(batch)


def ac_step(w: np.ndarray, v: np.ndarray, alpha: float) -> np.ndarray:
    return np.asarray(w) + alpha * np.asarray(v)


def nac_step(w: np.ndarray, fisher: np.ndarray, lam: float, v: np.ndarray,
             alpha: float) -> np.ndarray:
    """w + alpha (F + lam I)^{-1} v through a Cholesky solve."""
    if not lam > 0:
        raise ValueError("Fisher regulariser must be positive")
    M = np.asarray(fisher) + lam * np.eye(len(v))
    try:
        direction = scipy.linalg.cho_solve(scipy.linalg.cho_factor(M), v)
    except scipy.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"regularised Fisher matrix is not positive definite: {exc}")
    return np.asarray(w) + alpha * direction


def _oracle_metrics(mdp, policy, phi, theta, j_star, wanted) -> dict[str, float]:
    out = dict.fromkeys(METRICS, float("nan"))
    if "grad_norm_sq" in wanted:
        g = oracle.exact_gradient(mdp, policy)
        out["grad_norm_sq"] = float(g @ g)
    if "J_w" in wanted or "gap" in wanted:
        out["J_w"] = oracle.objective(mdp, policy)
        out["gap"] = j_star - out["J_w"]
    if "theta_err_sq" in wanted or "zeta_critic" in wanted:
        try:
            fp = oracle.td_fixed_point(mdp, policy, phi)
            if theta is not None:
                out["theta_err_sq"] = float(np.sum((theta - fp.theta_star) ** 2))
            if "zeta_critic" in wanted:
                out["zeta_critic"] = oracle.critic_approx_error(mdp, policy, phi)
        except oracle.OracleError:
            pass
    if "zeta_actor" in wanted:
        out["zeta_actor"] = oracle.actor_approx_error(mdp, policy)[0]
    return out


def run(mdp: FiniteMdp, features: PolicyFeatures, critic_phi: np.ndarray, config: ActorConfig,
        metrics: Iterable[str] = METRICS, cursor: PathCursor | None = None,
        keep_samples: bool = False) -> RunTrace:
    """Alternate critic phases (mini-batch TD on the raw kernel) and actor
    mini-batches on the restart kernel along one continuing path."""
    wanted = set(metrics)
    unknown = wanted - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    cfg = config
    critic = CriticModel(critic_phi)
    phi = critic.phi
    if cursor is None:
        cursor = PathCursor.from_seed(cfg.seed, init_dist=mdp.init_dist)
    w = np.zeros(features.dim) if cfg.w0 is None else np.array(cfg.w0, dtype=float)
    j_star = oracle.optimal_value(mdp)[0] if "gap" in wanted else float("nan")
    T, B = cfg.iterations, cfg.batch
    params = np.empty((T + 1, features.dim))
    thetas = np.empty((T, critic.dim))
    recs = {m: np.full(T, np.nan) for m in METRICS}
    clock = np.empty(T, dtype=np.int64)
    phases, kept = [], [] if keep_samples else None
    theta = np.zeros(critic.dim)
    t0 = time.perf_counter_ns()
    for t in range(T):
        params[t] = w
        policy = SoftmaxPolicy(features, w)
        # critic phase
        start = cursor.state
        critic.theta = theta if cfg.warm_start else np.zeros(critic.dim)
        td = minibatch_td(mdp, policy, critic, cfg.beta, cfg.critic_iters, cfg.critic_batch,
                          cursor)
        theta = td.theta
        critic.theta = theta
        phases.append(PhaseRecord("critic", start, cursor.state,
                                  cfg.critic_iters * cfg.critic_batch))
        # actor phase on the restart kernel
        start = cursor.state
        u = cursor.uniforms((B, _kernels.VISITATION_DRAWS))
        batch = Trajectory(*_kernels.sample_path(
            start, _kernels.cdf_rows(policy.action_table()), mdp.transition_cdf, mdp.init_cdf,
            mdp.reward, 1.0 - mdp.discount, True, u))
        cursor.state = int(batch.next_states[-1])
        cursor.steps += B
        phases.append(PhaseRecord("actor", start, cursor.state, B))
        td_batch = batch if cfg.successor == "literal" else _raw_successors(mdp, batch, cursor)
        if kept is not None:
            kept.append(batch)
        v = actor_gradient_estimate(policy, critic, td_batch, mdp.discount)
        thetas[t] = theta
        for name, value in _oracle_metrics(mdp, policy, phi, theta, j_star, wanted).items():
            recs[name][t] = value
        if cfg.variant == "ac":
            w = ac_step(w, v, cfg.alpha)
        else:
            psi = policy.score_table()[batch.states, batch.actions]
            F = psi.T @ psi / B
            w = nac_step(w, 0.5 * (F + F.T), cfg.lam, v, cfg.alpha)
        clock[t] = time.perf_counter_ns() - t0
    params[T] = w
    final = _oracle_metrics(mdp, SoftmaxPolicy(features, w), phi, None, j_star,
                            wanted - {"theta_err_sq"})
    t_hat = int(cursor.rng.integers(1, T + 1))
    cumulative = cfg.samples_per_iteration * np.arange(1, T + 1, dtype=np.int64)
    return RunTrace(cfg, j_star, params, thetas, recs, cumulative, clock, final, t_hat,
                    cursor.state, phases, kept)


def _raw_successors(mdp: FiniteMdp, batch: Trajectory, cursor: PathCursor) -> Trajectory:
    """Replace restart successors by a draw from P(.|s, a) for the TD error only."""
    idx = np.flatnonzero(batch.restarts)
    u = cursor.uniforms(len(idx))
    nxt = batch.next_states.copy()
    rew = batch.rewards.copy()
    if len(idx):
        cdf = mdp.transition_cdf[batch.states[idx], batch.actions[idx]]
        nxt[idx] = np.argmax(cdf > u[:, None], axis=1)
        rew[idx] = mdp.reward[batch.states[idx], batch.actions[idx], nxt[idx]]
    return Trajectory(batch.states, batch.actions, nxt, rew, batch.restarts)


# -- hyperparameter prescriptions ------------------------------------------------

@dataclass
class ActorPrescription:
    variant: str
    alpha: float
    batch: int
    iterations: int
    lam: float | None
    critic: SaPrescription
    critic_eps: float
    l_j: float
    zeta_critic: float
    batch_real: float
    iterations_real: float


def prescribe_actor_hyperparams(mdp: FiniteMdp, features: PolicyFeatures, critic_phi: np.ndarray,
                                variant: str, eps: float, lam_min: float = 1e-3,
                                seed: int = 0, n_grid: int = 20,
                                lipschitz: oracle.LipschitzReport | None = None,
                                ) -> ActorPrescription:
    """Stepsize, batch size, iteration count and critic settings from the
    finite-sample bounds.

    Policy-dependent quantities (mixing constants, ||theta*||, zeta_critic) are
    maximised over w = 0 and ``n_grid`` random parameters. In NAC, the
    batch-size terms that divide by zeta_critic use max(zeta_critic, lam_min^2).
    """
    variant = variant.lower()
    rng = np.random.default_rng(seed)
    grid = [np.zeros(features.dim)] + [rng.normal(scale=2.0, size=features.dim)
                                       for _ in range(n_grid)]
    rep = lipschitz or oracle.lipschitz_constants(mdp, features, seed=seed, check=False)
    l_j, r_max, g = rep.l_j, mdp.r_max, mdp.discount
    phi = CriticModel(critic_phi).phi
    policies = [SoftmaxPolicy(features, w) for w in grid]
    r_theta = 2.0 * max(np.linalg.norm(oracle.td_fixed_point(mdp, p, phi).theta_star)
                        for p in policies)
    zeta_c = max(oracle.critic_approx_error(mdp, p, phi) for p in policies)
    kappa, rho = oracle.visitation_mixing(mdp, features, grid)
    mix = (1.0 + (kappa - 1.0) * rho) / (1.0 - rho)
    problem = td_linear_sa_problem(mdp, policies[0], phi)
    if variant == "ac":
        lam = None
        alpha = 1.0 / (4.0 * l_j)
        b_real = 216.0 * (r_max + 2.0 * r_theta) ** 2 * mix / eps
        t_real = 48.0 * l_j * r_max / ((1.0 - g) * eps)
        critic_eps = eps / 108.0
    elif variant == "nac":
        lam = max(math.sqrt(zeta_c), lam_min)
        zc = max(zeta_c, lam_min ** 2)
        l_psi = estimate_assumption1_constants(features, random_pairs(features.dim, 20, rng)).l_psi
        alpha = lam ** 2 / (4.0 * l_j * (1.0 + lam))
        t_real = max(16.0 * l_j * (1.0 + lam) / (eps * (1.0 - g) * lam ** 2),
                     16.0 * r_max * l_psi * (1.0 + lam) / (eps * (1.0 - g) ** 2 * lam ** 2))
        b_real = max(
            24.0 * (r_max + 2.0 * r_theta) ** 2 * mix / zc,
            8.0 * r_max ** 2 * mix / (lam ** 2 * (1.0 - g) ** 2 * zc),
            3.0 * l_psi * (1.0 + lam) / (eps * (1.0 - g) * l_j)
            * (32.0 * r_max ** 2 / (lam ** 4 * (1.0 - g) ** 2)
               + 432.0 * (r_max + 2.0 * r_theta) ** 2 / lam ** 2) * mix,
        )
        critic_eps = min(zc / 64.0, eps * lam ** 2 * (1.0 - g) * l_j / (324.0 * l_psi * (1.0 + lam)))
    else:
        raise ValueError(f"variant must be 'ac' or 'nac', got {variant!r}")
    critic = prescribe_sa_hyperparams(problem, critic_eps, r_theta=r_theta)
    return ActorPrescription(variant, alpha, max(1, math.ceil(b_real)), max(1, math.ceil(t_real)),
                             lam, critic, critic_eps, l_j, zeta_c, b_real, t_real)


def prescribed_alpha(variant: str, l_j: float, lam: float | None = None) -> float:
    """Actor stepsize from the bounds: 1/(4 L_J) for AC, lam^2/(4 L_J (1 + lam)) for NAC."""
    variant = variant.lower()
    if variant == "ac":
        return 1.0 / (4.0 * l_j)
    if variant == "nac":
        if lam is None or not lam > 0:
            raise ValueError("NAC stepsize needs a positive regulariser")
        return lam ** 2 / (4.0 * l_j * (1.0 + lam))
    raise ValueError(f"variant must be 'ac' or 'nac', got {variant!r}")
