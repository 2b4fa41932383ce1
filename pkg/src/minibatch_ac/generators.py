"""Named MDP generators used by configs and the acceptance suite."""
from __future__ import annotations

import numpy as np

from .mdp import FiniteMdp, MdpError, ensure_valid

STAY, SWITCH = 0, 1


def two_state_chain(discount: float = 0.9) -> FiniteMdp:
    """Two states, actions stay/switch, reward 1 for landing in state 1.

    Optimal values are 1 / (1 - gamma) in both states; the uniform policy
    earns half of that.
    """
    P = np.zeros((2, 2, 2))
    for s in range(2):
        P[s, STAY, s] = 1.0
        P[s, SWITCH, 1 - s] = 1.0
    r = np.zeros((2, 2, 2))
    r[:, :, 1] = 1.0
    return ensure_valid(FiniteMdp(P, r, np.full(2, 0.5), discount, 1.0))


def random_garnet(num_states: int, num_actions: int, branching: int, seed: int,
                  discount: float = 0.9, r_max: float = 1.0) -> FiniteMdp:
    """Garnet MDP: each (s, a) reaches ``branching`` distinct states with
    Dirichlet(1) weights; rewards uniform on [0, r_max]; uniform start."""
    if not 1 <= branching <= num_states:
        raise MdpError("branching must lie in [1, num_states]")
    rng = np.random.default_rng(seed)
    P = np.zeros((num_states, num_actions, num_states))
    for s in range(num_states):
        for a in range(num_actions):
            succ = rng.choice(num_states, size=branching, replace=False)
            P[s, a, succ] = rng.dirichlet(np.ones(branching))
    r = rng.uniform(0.0, r_max, size=(num_states, num_actions, num_states))
    return ensure_valid(FiniteMdp(P, r, np.full(num_states, 1.0 / num_states), discount, r_max))


_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


def gridworld(n: int, slip: float = 0.1, discount: float = 0.9) -> FiniteMdp:
    """n x n grid, four moves with slip to a uniformly random move.

    Reaching the bottom-right cell pays 1; every action from that cell
    restarts uniformly over the grid, keeping the chain ergodic.
    """
    S = n * n
    goal = S - 1
    P = np.zeros((S, 4, S))
    for s in range(S):
        if s == goal:
            P[s, :, :] = 1.0 / S
            continue
        i, j = divmod(s, n)
        dest = [min(max(i + di, 0), n - 1) * n + min(max(j + dj, 0), n - 1) for di, dj in _MOVES]
        for a in range(4):
            P[s, a, dest[a]] += 1.0 - slip
            for d in dest:
                P[s, a, d] += slip / 4
    r = np.zeros((S, 4, S))
    r[:, :, goal] = 1.0
    r[goal] = 0.0
    return ensure_valid(FiniteMdp(P, r, np.full(S, 1.0 / S), discount, 1.0))


GENERATORS = {
    "two_state_chain": two_state_chain,
    "random_garnet": random_garnet,
    "garnet": random_garnet,
    "gridworld": gridworld,
}


def generate_mdp(name: str, params: dict | None = None, seed: int | None = None) -> FiniteMdp:
    try:
        fn = GENERATORS[name]
    except KeyError:
        raise MdpError(f"unknown generator {name!r}; known: {sorted(GENERATORS)}") from None
    params = dict(params or {})
    if fn is random_garnet:
        params.setdefault("seed", 0 if seed is None else seed)
        for long, short in (("num_states", "S"), ("num_actions", "A")):
            if short in params:
                params[long] = params.pop(short)
    return fn(**params)
