"""Compiled inner loops for path sampling and mini-batch TD.

Every kernel consumes pre-drawn uniforms so that the only random stream is the
caller's ``numpy.random.Generator``. Raw steps use two uniforms
(action, next state); visitation steps use three (action, restart, next state).
"""
import numpy as np
from numba import njit

RAW_DRAWS = 2
VISITATION_DRAWS = 3


@njit(cache=True)
def _inverse_cdf(cdf, u):
    # first index with cdf > u; cdf[-1] == 1 so this always terminates
    n = cdf.shape[0]
    for i in range(n):
        if u < cdf[i]:
            return i
    return n - 1


@njit(cache=True)
def sample_path(start, action_cdf, transition_cdf, init_cdf, reward, restart_prob,
                visitation, uniforms):
    n = uniforms.shape[0]
    states = np.empty(n, dtype=np.int64)
    actions = np.empty(n, dtype=np.int64)
    next_states = np.empty(n, dtype=np.int64)
    rewards = np.empty(n, dtype=np.float64)
    restarts = np.zeros(n, dtype=np.bool_)
    s = start
    for i in range(n):
        a = _inverse_cdf(action_cdf[s], uniforms[i, 0])
        if visitation:
            if uniforms[i, 1] < restart_prob:
                s_next = _inverse_cdf(init_cdf, uniforms[i, 2])
                restarts[i] = True
            else:
                s_next = _inverse_cdf(transition_cdf[s, a], uniforms[i, 2])
        else:
            s_next = _inverse_cdf(transition_cdf[s, a], uniforms[i, 1])
        states[i] = s
        actions[i] = a
        next_states[i] = s_next
        rewards[i] = reward[s, a, s_next]
        s = s_next
    return states, actions, next_states, rewards, restarts


@njit(cache=True)
def minibatch_td(start, action_cdf, transition_cdf, reward, phi, gamma, beta,
                 theta0, n_outer, batch, uniforms):
    """Run ``n_outer`` TD updates of ``batch`` raw-kernel samples each.

    Returns the parameter history (row k is theta_k, k = 0..n_outer), the
    visited states (length n_outer * batch + 1) and the actions taken.
    """
    d = phi.shape[1]
    history = np.empty((n_outer + 1, d))
    history[0] = theta0
    theta = theta0.copy()
    visited = np.empty(n_outer * batch + 1, dtype=np.int64)
    taken = np.empty(n_outer * batch, dtype=np.int64)
    s = start
    visited[0] = s
    direction = np.empty(d)
    idx = 0
    for k in range(n_outer):
        direction[:] = 0.0
        for j in range(batch):
            a = _inverse_cdf(action_cdf[s], uniforms[idx, 0])
            s_next = _inverse_cdf(transition_cdf[s, a], uniforms[idx, 1])
            v_s = 0.0
            v_next = 0.0
            for i in range(d):
                v_s += phi[s, i] * theta[i]
                v_next += phi[s_next, i] * theta[i]
            delta = reward[s, a, s_next] + gamma * v_next - v_s
            for i in range(d):
                direction[i] += delta * phi[s, i]
            taken[idx] = a
            idx += 1
            visited[idx] = s_next
            s = s_next
        for i in range(d):
            theta[i] += beta * (direction[i] / batch)
        history[k + 1] = theta
    return history, visited, taken


@njit(cache=True)
def chain_path(start, chain_cdf, uniforms):
    n = uniforms.shape[0]
    out = np.empty(n + 1, dtype=np.int64)
    x = start
    out[0] = x
    for i in range(n):
        x = _inverse_cdf(chain_cdf[x], uniforms[i])
        out[i + 1] = x
    return out


def cdf_rows(probs):
    """Row-wise cumulative distribution with the tail pinned to exactly 1."""
    probs = np.asarray(probs, dtype=float)
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[..., -1:]
    # entries at or after the last positive mass must read 1.0 so that
    # zero-probability trailing outcomes are never selected
    positive = probs > 0
    last = probs.shape[-1] - 1 - np.argmax(positive[..., ::-1], axis=-1)
    idx = np.arange(probs.shape[-1])
    cdf = np.where(idx >= last[..., None], 1.0, cdf)
    return np.ascontiguousarray(cdf)
