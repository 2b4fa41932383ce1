"""Print the frozen reference numbers used by the tests.

Run ``python3 tests/reference/generate.py > tests/reference/frozen.py``; the
output is committed and never recomputed during test runs.
"""
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))

import independent as ref  # noqa: E402
from instances import GAMMA3, P3, PHI3, R3, W3, WX3, X3, XI3  # noqa: E402


def emit(name, value):
    arr = np.asarray(value, dtype=float)
    body = np.array2string(arr, separator=", ", precision=17, floatmode="unique",
                           max_line_width=96, threshold=10 ** 6)
    print(f"{name} = np.array({body})" if arr.ndim else f"{name} = {float(arr)!r}")


def main():
    print('"""Frozen outputs of tests/reference/independent.py (see generate.py)."""')
    print("import numpy as np\n")
    x_tab = np.eye(6).reshape(3, 2, 6)
    pi = ref.softmax_table(x_tab, W3)
    emit("PI3", pi)
    Q, V = ref.q_by_series(P3, R3, GAMMA3, pi)
    emit("V3", V)
    emit("Q3", Q)
    emit("J3", float(XI3 @ V))
    emit("NU3", ref.occupancy_by_series(P3, XI3, GAMMA3, pi))
    emit("MU3", ref.power_stationary(ref.markov_chain(P3, pi)))
    emit("GRAD3", ref.gradient_by_differences(P3, R3, XI3, GAMMA3, x_tab, W3))
    emit("FISHER3", ref.fisher_by_loops(P3, XI3, GAMMA3, x_tab, W3))
    theta, A = ref.td_fixed_point_normal_equations(P3, R3, GAMMA3, pi, PHI3)
    emit("THETA3", theta)
    emit("A3", A)
    emit("LAMBDA_A3", -np.linalg.eigvalsh(0.5 * (A + A.T)).max())
    emit("ZETA_CRITIC3", ref.critic_error_by_loops(P3, R3, XI3, GAMMA3, pi, PHI3))
    vstar, act = ref.policy_iteration(P3, R3, GAMMA3)
    emit("VSTAR3", vstar)
    emit("JSTAR3", float(XI3 @ vstar))
    emit("GREEDY3", act)
    # restricted features
    emit("GRADX3", ref.gradient_by_differences(P3, R3, XI3, GAMMA3, X3, WX3))
    emit("FISHERX3", ref.fisher_by_loops(P3, XI3, GAMMA3, X3, WX3))
    emit("ZETA_ACTORX3", ref.actor_error_normal_equations(P3, R3, XI3, GAMMA3, X3, WX3))
    emit("JX3", ref.objective(P3, R3, XI3, GAMMA3, X3, WX3))


if __name__ == "__main__":
    main()
