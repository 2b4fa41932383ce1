"""Tabular MDPs and the two Markovian samplers that share one sample path."""
from __future__ import annotations

import enum
import functools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import _kernels

PROB_TOL = 1e-12


class MdpError(ValueError):
    """Raised for malformed MDP definitions or invalid sampling requests."""


class KernelChoice(enum.Enum):
    RAW = "raw"
    VISITATION = "visitation"


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Dense tabular MDP ``(S, A, P, r, xi, gamma)``.

    ``transition[s, a, s']`` and ``reward[s, a, s']`` are S x A x S arrays.
    The constructor does not validate; call :func:`validate` for a report.
    """

    transition: np.ndarray
    reward: np.ndarray
    init_dist: np.ndarray
    discount: float
    r_max: float

    def __post_init__(self):
        for name in ("transition", "reward", "init_dist"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "r_max", float(self.r_max))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @functools.cached_property
    def transition_cdf(self) -> np.ndarray:
        return _kernels.cdf_rows(self.transition)

    @functools.cached_property
    def init_cdf(self) -> np.ndarray:
        return _kernels.cdf_rows(self.init_dist)

    def visitation_transition(self) -> np.ndarray:
        """Restart-mixed kernel gamma * P(.|s,a) + (1 - gamma) * xi."""
        g = self.discount
        return g * self.transition + (1.0 - g) * self.init_dist[None, None, :]

    def kernel(self, choice: KernelChoice) -> np.ndarray:
        if choice is KernelChoice.RAW:
            return self.transition
        return self.visitation_transition()

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "init_dist": self.init_dist.tolist(),
            "discount": self.discount,
            "r_max": self.r_max,
        }


def validate(mdp: FiniteMdp) -> list[str]:
    """Return every violated invariant as a readable message; empty if valid."""
    problems = []
    P, r, xi = mdp.transition, mdp.reward, mdp.init_dist
    if P.ndim != 3 or P.shape[0] != P.shape[2]:
        return [f"transition must have shape (S, A, S), got {P.shape}"]
    S, A = P.shape[:2]
    if S < 1 or A < 1:
        problems.append("num_states and num_actions must be positive")
    if r.shape != P.shape:
        problems.append(f"reward shape {r.shape} does not match transition {P.shape}")
    if xi.shape != (S,):
        problems.append(f"init_dist shape {xi.shape} does not match num_states {S}")
    for name, arr in (("transition", P), ("reward", r), ("init_dist", xi)):
        if not np.all(np.isfinite(arr)):
            problems.append(f"{name} has non-finite entries")
    for s, a in zip(*np.nonzero(P.min(axis=2) < 0)):
        problems.append(f"transition row (s={s}, a={a}) has negative entries")
    row_sums = P.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(row_sums - 1.0) > PROB_TOL)):
        problems.append(
            f"transition row (s={s}, a={a}) sums to {row_sums[s, a]:.12g} "
            f"(deficit {1.0 - row_sums[s, a]:.3g})"
        )
    if not mdp.r_max > 0:
        problems.append(f"r_max must be positive, got {mdp.r_max}")
    if r.shape == P.shape:
        over = np.argwhere(np.abs(r) > mdp.r_max)
        for s, a, s2 in over[:20]:
            problems.append(
                f"reward[{s}][{a}][{s2}] = {r[s, a, s2]:g} exceeds r_max = {mdp.r_max:g}"
            )
        if len(over) > 20:
            problems.append(f"... {len(over) - 20} more reward bound violations")
    if xi.shape == (S,):
        if np.any(xi < 0):
            problems.append("init_dist has negative entries")
        if abs(xi.sum() - 1.0) > PROB_TOL:
            problems.append(f"init_dist sums to {xi.sum():.12g}")
    if not 0.0 < mdp.discount < 1.0:
        problems.append(f"discount must lie in (0, 1), got {mdp.discount}")
    return problems


def ensure_valid(mdp: FiniteMdp) -> FiniteMdp:
    problems = validate(mdp)
    if problems:
        raise MdpError("invalid MDP:\n  " + "\n  ".join(problems))
    return mdp


@dataclass(frozen=True)
class TransitionSample:
    state: int
    action: int
    next_state: int
    reward: float
    restart: bool = False


@dataclass
class PathCursor:
    """Position on the single sample path plus the random stream driving it.

    The generator is Philox (counter based) so a 64-bit seed fixes every draw.
    """

    state: int
    rng: np.random.Generator = field(repr=False)
    steps: int = 0

    @classmethod
    def from_seed(cls, seed: int, state: int | None = None,
                  init_dist: np.ndarray | None = None) -> "PathCursor":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        if state is None:
            if init_dist is None:
                raise ValueError("need either an initial state or init_dist")
            state = _kernels._inverse_cdf(_kernels.cdf_rows(init_dist), rng.random())
        return cls(int(state), rng)

    def uniform(self) -> float:
        return float(self.rng.random())

    def uniforms(self, shape) -> np.ndarray:
        return self.rng.random(shape)


@dataclass(frozen=True)
class Trajectory(Sequence):
    """Consecutive transitions stored column-wise; indexes as TransitionSample."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    restarts: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trajectory(self.states[i], self.actions[i], self.next_states[i],
                              self.rewards[i], self.restarts[i])
        return TransitionSample(int(self.states[i]), int(self.actions[i]),
                                int(self.next_states[i]), float(self.rewards[i]),
                                bool(self.restarts[i]))

    def __iter__(self) -> Iterator[TransitionSample]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("states", "actions", "next_states", "rewards", "restarts"))

    @classmethod
    def from_samples(cls, samples: Sequence[TransitionSample]) -> "Trajectory":
        return cls(
            np.array([x.state for x in samples], dtype=np.int64),
            np.array([x.action for x in samples], dtype=np.int64),
            np.array([x.next_state for x in samples], dtype=np.int64),
            np.array([x.reward for x in samples], dtype=float),
            np.array([x.restart for x in samples], dtype=bool),
        )


def _check_state(mdp: FiniteMdp, s: int):
    if not 0 <= s < mdp.num_states:
        raise MdpError(f"state {s} out of range [0, {mdp.num_states})")


def step(mdp: FiniteMdp, cursor: PathCursor, action: int,
         kernel: KernelChoice = KernelChoice.RAW) -> TransitionSample:
    """Advance the cursor by one transition from ``(cursor.state, action)``.

    Under the visitation kernel a Bernoulli(1 - gamma) draw decides whether the
    successor is a restart from ``init_dist``; two uniforms are consumed either way.
    """
    s = cursor.state
    _check_state(mdp, s)
    if not 0 <= action < mdp.num_actions:
        raise MdpError(f"action {action} out of range [0, {mdp.num_actions})")
    restart = False
    if kernel is KernelChoice.VISITATION:
        restart = cursor.uniform() < 1.0 - mdp.discount
        row = mdp.init_dist if restart else mdp.transition[s, action]
    else:
        row = mdp.transition[s, action]
    s_next = _kernels._inverse_cdf(_kernels.cdf_rows(row), cursor.uniform())
    cursor.state = int(s_next)
    cursor.steps += 1
    return TransitionSample(s, int(action), int(s_next),
                            float(mdp.reward[s, action, s_next]), restart)


def sample_trajectory(mdp: FiniteMdp, cursor: PathCursor, action_probs: np.ndarray | Callable,
                      length: int, kernel: KernelChoice = KernelChoice.RAW) -> Trajectory:
    """Draw ``length`` consecutive transitions on the cursor's path.

    ``action_probs`` is either an S x A probability table or an object with an
    ``action_table()`` method (e.g. a softmax policy). Uses exactly the same
    uniforms, in the same order, as alternating ``sample_action`` and ``step``.
    """
    if length < 1:
        raise MdpError("trajectory length must be at least 1")
    _check_state(mdp, cursor.state)
    table = action_probs.action_table() if hasattr(action_probs, "action_table") else action_probs
    visitation = kernel is KernelChoice.VISITATION
    draws = _kernels.VISITATION_DRAWS if visitation else _kernels.RAW_DRAWS
    uniforms = cursor.uniforms((length, draws))
    states, actions, nxt, rewards, restarts = _kernels.sample_path(
        cursor.state, _kernels.cdf_rows(table), mdp.transition_cdf,
        mdp.init_cdf, mdp.reward, 1.0 - mdp.discount, visitation, uniforms)
    cursor.state = int(nxt[-1])
    cursor.steps += length
    return Trajectory(states, actions, nxt, rewards, restarts)


def load_mdp(path: str | Path) -> FiniteMdp:
    """Read an MDP definition from a YAML or JSON file and reject invalid ones."""
    import yaml

    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    return mdp_from_dict(data)


def mdp_from_dict(data: dict) -> FiniteMdp:
    missing = {"num_states", "num_actions", "transition", "discount"} - set(data)
    if "reward" not in data and "reward_fn" not in data:
        missing.add("reward")
    if missing:
        raise MdpError(f"MDP definition is missing {sorted(missing)}")
    S, A = int(data["num_states"]), int(data["num_actions"])
    transition = np.asarray(data["transition"], dtype=float)
    if transition.shape != (S, A, S):
        raise MdpError(f"transition shape {transition.shape} != ({S}, {A}, {S})")
    if "reward_fn" in data:
        reward = _reward_from_shorthand(data["reward_fn"], S, A)
    else:
        reward = np.asarray(data["reward"], dtype=float)
    init = data.get("init_dist", "uniform")
    init_dist = np.full(S, 1.0 / S) if init == "uniform" else np.asarray(init, dtype=float)
    mdp = FiniteMdp(transition, reward, init_dist, data["discount"], data.get("r_max", 1.0))
    return ensure_valid(mdp)


def _reward_from_shorthand(spec: str, S: int, A: int) -> np.ndarray:
    key, _, value = spec.partition("=")
    if key.strip() != "indicator_next_state":
        raise MdpError(f"unknown reward_fn shorthand {spec!r}")
    k = int(value)
    if not 0 <= k < S:
        raise MdpError(f"reward_fn target state {k} out of range")
    reward = np.zeros((S, A, S))
    reward[:, :, k] = 1.0
    return reward


def save_mdp(mdp: FiniteMdp, path: str | Path):
    import yaml

    path = Path(path)
    data = mdp.to_dict()
    if path.suffix == ".json":
        path.write_text(json.dumps(data, indent=2))
    else:
        path.write_text(yaml.safe_dump(data, sort_keys=False))
