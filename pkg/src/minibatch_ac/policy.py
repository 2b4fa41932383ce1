"""Finite-action softmax (Boltzmann) policies over linear state-action features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .mdp import PathCursor, Trajectory, TransitionSample


@dataclass(frozen=True, eq=False)
class PolicyFeatures:
    """State-action features ``x[s, a]`` in R^d1, rescaled so max norm <= 1."""

    x: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim != 3:
            raise ValueError(f"features must have shape (S, A, d1), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        norm = np.linalg.norm(x, axis=2).max()
        if norm > 1.0:
            x = x / norm
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def dim(self) -> int:
        return self.x.shape[2]

    @property
    def num_states(self) -> int:
        return self.x.shape[0]

    @property
    def num_actions(self) -> int:
        return self.x.shape[1]

    @property
    def max_norm(self) -> float:
        return float(np.linalg.norm(self.x, axis=2).max())

    @classmethod
    def tabular(cls, num_states: int, num_actions: int) -> "PolicyFeatures":
        """One-hot features, d1 = S * A."""
        eye = np.eye(num_states * num_actions)
        return cls(eye.reshape(num_states, num_actions, num_states * num_actions))


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    features: PolicyFeatures
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float).reshape(-1)
        if w.shape != (self.features.dim,):
            raise ValueError(f"parameter has shape {w.shape}, expected ({self.features.dim},)")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "_table", None)

    @classmethod
    def zeros(cls, features: PolicyFeatures) -> "SoftmaxPolicy":
        return cls(features, np.zeros(features.dim))

    def with_params(self, w) -> "SoftmaxPolicy":
        return SoftmaxPolicy(self.features, w)

    def logits(self) -> np.ndarray:
        return self.features.x @ self.w

    def action_table(self) -> np.ndarray:
        """S x A matrix of action probabilities (cached per parameter vector)."""
        if self._table is None:
            z = self.logits()
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            table = e / e.sum(axis=1, keepdims=True)
            table.setflags(write=False)
            object.__setattr__(self, "_table", table)
        return self._table

    def action_probs(self, s: int) -> np.ndarray:
        return self.action_table()[s]

    def log_prob(self, s: int, a: int) -> float:
        z = self.logits()[s]
        m = z.max()
        return float(z[a] - m - np.log(np.exp(z - m).sum()))

    def mean_features(self) -> np.ndarray:
        """E_{a ~ pi(.|s)} x(s, a) for every state, shape S x d1."""
        return np.einsum("sa,sad->sd", self.action_table(), self.features.x)

    def score_table(self) -> np.ndarray:
        """psi(s, a) = x(s, a) - E_pi[x(s, .)] for all pairs, shape S x A x d1."""
        return self.features.x - self.mean_features()[:, None, :]

    def score(self, s: int, a: int) -> np.ndarray:
        x = self.features.x[s]
        return x[a] - self.action_probs(s) @ x


def action_probs(policy: SoftmaxPolicy, s: int) -> np.ndarray:
    return policy.action_probs(s)


def score(policy: SoftmaxPolicy, s: int, a: int) -> np.ndarray:
    return policy.score(s, a)


def sample_action(policy: SoftmaxPolicy, cursor: PathCursor, s: int) -> int:
    """Inverse-CDF draw from pi(.|s) using one uniform from the cursor."""
    cdf = _kernels.cdf_rows(policy.action_probs(s))
    return int(_kernels._inverse_cdf(cdf, cursor.uniform()))


def tv_distance(p1: SoftmaxPolicy, p2: SoftmaxPolicy, s: int) -> float:
    if p1.features is not p2.features and not np.array_equal(p1.features.x, p2.features.x):
        raise ValueError("policies must share the same feature set")
    return 0.5 * float(np.abs(p1.action_probs(s) - p2.action_probs(s)).sum())


def fisher_estimate(policy: SoftmaxPolicy,
                    batch: Trajectory | list[TransitionSample]) -> np.ndarray:
    """Sample Fisher matrix (1/B) sum_i psi(s_i, a_i) psi(s_i, a_i)^T."""
    if len(batch) == 0:
        raise ValueError("Fisher estimate needs a nonempty batch")
    if not isinstance(batch, Trajectory):
        batch = Trajectory.from_samples(batch)
    psi = policy.score_table()[batch.states, batch.actions]
    F = psi.T @ psi / len(batch)
    # exact symmetry; the product is symmetric up to rounding only
    return 0.5 * (F + F.T)


@dataclass(frozen=True)
class PolicyConstants:
    """Smoothness constants of the softmax class on a given feature set.

    ``c_psi``, ``l_psi_bound`` and ``c_pi_bound`` are analytic upper bounds;
    ``l_psi`` and ``c_pi`` are sweep maxima, hence lower bounds on the truth.
    """

    c_psi: float
    l_psi: float
    c_pi: float
    l_psi_bound: float
    c_pi_bound: float
    pairs_used: int


def estimate_assumption1_constants(features: PolicyFeatures,
                                   pairs: list[tuple[np.ndarray, np.ndarray]]) -> PolicyConstants:
    if not pairs:
        raise ValueError("need at least one parameter pair")
    xmax = features.max_norm
    l_psi = c_pi = 0.0
    used = 0
    for w1, w2 in pairs:
        dist = float(np.linalg.norm(np.asarray(w1) - np.asarray(w2)))
        if dist == 0.0:
            continue
        used += 1
        p1, p2 = SoftmaxPolicy(features, w1), SoftmaxPolicy(features, w2)
        dpsi = np.linalg.norm(p1.score_table() - p2.score_table(), axis=2).max()
        tv = 0.5 * np.abs(p1.action_table() - p2.action_table()).sum(axis=1).max()
        l_psi = max(l_psi, dpsi / dist)
        c_pi = max(c_pi, tv / dist)
    c_psi = 2.0 * xmax
    return PolicyConstants(c_psi=c_psi, l_psi=l_psi, c_pi=c_pi,
                           l_psi_bound=2.0 * xmax ** 2, c_pi_bound=0.5 * c_psi,
                           pairs_used=used)


def random_pairs(dim: int, n: int, rng: np.random.Generator, scale: float = 2.0):
    """Random parameter pairs mixing far-apart and nearby points."""
    pairs = []
    for i in range(n):
        w1 = rng.normal(scale=scale, size=dim)
        if i % 2:
            w2 = w1 + rng.normal(scale=1e-2 * scale, size=dim)
        else:
            w2 = rng.normal(scale=scale, size=dim)
        pairs.append((w1, w2))
    return pairs
