"""Acceptance checks shared by the ``check`` CLI command and the test suite.

Each check returns a :class:`CheckResult` whose ``quantities`` are the
deterministic measured values with their bounds; wall-clock runtime is kept
separately so that the CSV report is reproducible byte for byte.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import actor, critic, oracle
from .generators import random_garnet, two_state_chain
from .harness import ExperimentConfig, fit_loglog, run_experiment
from .mdp import PathCursor
from .policy import PolicyFeatures, SoftmaxPolicy

GARNET = {"generator": "random_garnet", "params": {"S": 5, "A": 3, "branching": 2}, "seed": 7}
GARNET_SEED = 7
TD_FEATURES = {"kind": "random", "dim": 3, "seed": 0}
TWO_STATE = {"generator": "two_state_chain"}
# samples a linear-SA run may consume inside the 60 s budget on one core
SA_SAMPLE_BUDGET = 5e8


@dataclass
class Quantity:
    name: str
    value: float
    bound: str
    passed: bool


@dataclass
class CheckResult:
    key: str
    title: str
    budget_s: float
    quantities: list[Quantity] = field(default_factory=list)
    runtime_s: float = 0.0
    note: str = ""

    def add(self, name: str, value: float, bound: str, passed: bool):
        self.quantities.append(Quantity(name, float(value), bound, bool(passed)))

    @property
    def within_budget(self) -> bool:
        return self.runtime_s <= self.budget_s

    @property
    def passed(self) -> bool:
        return bool(self.quantities) and all(q.passed for q in self.quantities) \
            and self.within_budget

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        vals = "; ".join(f"{q.name}={q.value:.6g} ({q.bound}){'' if q.passed else ' !'}"
                         for q in self.quantities)
        budget = f"{self.runtime_s:.1f}s/{self.budget_s:.0f}s"
        tail = f" -- {self.note}" if self.note and not self.passed else ""
        return f"[{status}] criterion {self.key}: {self.title} | {vals} | {budget}{tail}"


def _timed(fn):
    def wrapper(seed: int = 0) -> CheckResult:
        t0 = time.perf_counter()
        res = fn(seed)
        res.runtime_s = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _finite_difference(mdp, features, w, h=1e-5) -> np.ndarray:
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (oracle.objective(mdp, SoftmaxPolicy(features, w + e))
                - oracle.objective(mdp, SoftmaxPolicy(features, w - e))) / (2 * h)
    return g


@_timed
def check_oracle(seed: int = 0) -> CheckResult:
    """Oracle self-consistency on 50 seeded garnet instances."""
    res = CheckResult("1", "oracle self-consistency", 10.0)
    bell = vis = fd = tab = 0.0
    lam_min = math.inf
    for i in range(50):
        mdp = random_garnet(5, 3, 2, seed=seed + i)
        rng = np.random.default_rng(seed + i)
        feats = PolicyFeatures(rng.normal(size=(5, 3, 4)))
        pol = SoftmaxPolicy(feats, rng.normal(size=4))
        P_pi, r_pi = oracle.policy_chain(mdp, pol)
        V = oracle.value_function(mdp, pol)
        bell = max(bell, float(np.abs(r_pi + mdp.discount * P_pi @ V - V).max()))
        vis = max(vis, float(np.abs(oracle.visitation_measure(mdp, pol)
                                    - oracle.visitation_via_chain(mdp, pol)).max()))
        g = oracle.exact_gradient(mdp, pol)
        g_fd = _finite_difference(mdp, feats, pol.w)
        fd = max(fd, float(np.linalg.norm(g - g_fd) / max(np.linalg.norm(g), 1e-12)))
        theta = oracle.td_fixed_point(mdp, pol, np.eye(5)).theta_star
        tab = max(tab, float(np.abs(theta - V).max()))
        phi = critic.CriticModel.random(5, 3, seed=seed + i).phi
        lam_min = min(lam_min, oracle.td_fixed_point(mdp, pol, phi).lambda_A)
    res.add("bellman_residual", bell, "< 1e-9", bell < 1e-9)
    res.add("visitation_agreement", vis, "< 1e-9", vis < 1e-9)
    res.add("gradient_fd_rel_err", fd, "< 1e-5", fd < 1e-5)
    res.add("tabular_theta_vs_V", tab, "< 1e-9", tab < 1e-9)
    res.add("min_lambda_A", lam_min, "> 0", lam_min > 0)
    return res


def td_batch_sweep_config(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig.from_dict({
        "name": "td-batch-floor",
        "mdp": GARNET,
        "critic_features": TD_FEATURES,
        "algorithm": {"kind": "td", "beta": 0.5, "n_outer": 400, "batch": 32},
        "sweep": {"batch": [32, 64, 128, 256]},
        "replications": 20,
        "base_seed": seed,
        "scaling": [{"axis": "batch", "metric": "theta_err_sq", "reduce": "tail_mean",
                     "tail": 0.2, "slope_range": [-1.3, -0.7]}],
    })


@_timed
def check_td_floor(seed: int = 0) -> CheckResult:
    """Steady-state TD error falls like 1/M."""
    res = CheckResult("2", "mini-batch TD bias floor vs M", 60.0)
    fit = run_experiment(td_batch_sweep_config(seed)).slopes[0]
    res.add("slope", fit.slope, "in [-1.3, -0.7]", -1.3 <= fit.slope <= -0.7)
    res.add("r2", fit.r2, ">= 0.9", fit.r2 >= 0.9)
    return res


def _garnet_td_problem():
    mdp = random_garnet(5, 3, 2, seed=GARNET_SEED)
    pi = np.full((5, 3), 1.0 / 3.0)
    phi = critic.CriticModel.random(5, 3, seed=TD_FEATURES["seed"]).phi
    return mdp, critic.td_linear_sa_problem(mdp, pi, phi)


@_timed
def check_sa_contraction(seed: int = 0) -> CheckResult:
    """Transient contraction of mini-batch linear SA and the prescribed run."""
    res = CheckResult("3", "linear SA contraction and prescribed accuracy", 60.0)
    mdp, problem = _garnet_td_problem()
    star = problem.theta_star
    beta, batch, n_iter = 0.5, 256, 300
    errs = np.mean([critic.linear_sa(problem, beta, n_iter, batch,
                                     PathCursor.from_seed(seed + r, init_dist=mdp.init_dist),
                                     theta_star=star).errors for r in range(20)], axis=0)
    errs = np.concatenate([[float(star @ star)], errs])
    floor = errs[-n_iter // 3:].mean()
    transient = np.flatnonzero(errs[:-1] > 10.0 * floor)
    ratio = float((errs[transient + 1] / errs[transient]).max())
    bound = 1.0 - problem.lambda_A * beta / 8.0 + 0.05
    res.add("max_transient_ratio", ratio, f"<= {bound:.6g}", ratio <= bound)

    pres = critic.prescribe_sa_hyperparams(problem, 0.01)
    samples = float(pres.n_iter_real) * float(pres.batch_real)
    if samples > SA_SAMPLE_BUDGET:
        res.add("prescribed_samples", samples, f"<= {SA_SAMPLE_BUDGET:.0e} to run in budget",
                False)
        res.note = (f"prescription K={pres.n_iter}, M={pres.batch}, alpha={pres.alpha:.3g} "
                    f"needs {samples:.3g} samples; not run")
        return res
    finals = [critic.linear_sa(problem, pres.alpha, pres.n_iter, pres.batch,
                               PathCursor.from_seed(seed + r, init_dist=mdp.init_dist),
                               theta_star=star).errors[-1] for r in range(20)]
    err = float(np.mean(finals))
    res.add("prescribed_final_error", err, "<= 0.01", err <= 0.01)
    return res


def two_state_l_j() -> float:
    mdp = two_state_chain()
    return oracle.lipschitz_constants(mdp, PolicyFeatures.tabular(2, 2), seed=0,
                                      check=False).l_j


def ac_sweep_config(axis: str, seed: int = 0) -> ExperimentConfig:
    if axis == "iterations":
        sweep, fixed, reduce, tail = {"iterations": [250, 500, 1000, 2000]}, \
            {"batch": 512}, "mean", 1.0
    else:
        sweep, fixed, reduce, tail = {"batch": [64, 128, 256, 512]}, \
            {"iterations": 2000}, "tail_mean", 0.2
    return ExperimentConfig.from_dict({
        "name": f"ac-{axis}",
        "mdp": TWO_STATE,
        "algorithm": {"kind": "ac", "alpha": "prescribed", "beta": 0.5, "critic_iters": 20,
                      "critic_batch": 32, "metrics": ["grad_norm_sq"], **fixed},
        "sweep": sweep,
        "replications": 10,
        "base_seed": seed,
        "scaling": [{"axis": axis, "metric": "grad_norm_sq", "reduce": reduce, "tail": tail,
                     "slope_range": [-1.3, -0.7]}],
    })


def _ac_check(key: str, axis: str, title: str, seed: int) -> CheckResult:
    res = CheckResult(key, title, 120.0)
    fit = run_experiment(ac_sweep_config(axis, seed)).slopes[0]
    slope = fit.slope if fit.slope is not None else float("nan")
    res.add("slope", slope, "in [-1.3, -0.7]", -1.3 <= slope <= -0.7)
    for x, y in zip(fit.x, fit.y):
        res.add(f"grad_norm_sq@{axis}={int(x)}", y, "reported", True)
    res.note = f"alpha = 1/(4 L_J) = {1.0 / (4.0 * two_state_l_j()):.3g}"
    return res


@_timed
def check_ac_rate_T(seed: int = 0) -> CheckResult:
    """Average squared gradient norm vs T at the prescribed AC stepsize."""
    return _ac_check("4a", "iterations", "AC rate vs T", seed)


@_timed
def check_ac_rate_B(seed: int = 0) -> CheckResult:
    """Plateau of the squared gradient norm vs B at the prescribed AC stepsize."""
    return _ac_check("4b", "batch", "AC plateau vs B", seed)


NAC_LAMBDAS = (1e-3, 3e-3, 1e-2, 3e-2)


def nac_sweep_config(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig.from_dict({
        "name": "nac-lambda",
        "mdp": TWO_STATE,
        "algorithm": {"kind": "nac", "alpha": "prescribed", "iterations": 500, "batch": 1024,
                      "beta": 0.5, "critic_iters": 20, "critic_batch": 32,
                      "metrics": ["gap"]},
        "sweep": {"lam": list(NAC_LAMBDAS)},
        "replications": 10,
        "base_seed": seed,
    })


def gap_at_output(record) -> float:
    """Optimality gap of the uniformly drawn output iterate of one run."""
    series = record.series["gap"]
    return record.final["gap"] if record.t_hat == len(series) else series[record.t_hat]


@_timed
def check_nac(seed: int = 0) -> CheckResult:
    """NAC optimality gap at the prescribed stepsize and its growth in lambda."""
    res = CheckResult("5", "NAC global convergence and lambda floor", 120.0)
    j_star = oracle.optimal_value(two_state_chain())[0]
    res.add("J_star", j_star, "= 10", abs(j_star - 10.0) < 1e-9)
    result = run_experiment(nac_sweep_config(seed))
    gaps = []
    for point in result.points:
        runs = [r for r in result.runs if r.config_id == point.config_id and r.error is None]
        gaps.append(float(np.mean([gap_at_output(r) for r in runs])))
    main = gaps[NAC_LAMBDAS.index(1e-2)]
    res.add("gap@lam=1e-2", main, "< 0.1", main < 0.1)
    slope = fit_loglog(NAC_LAMBDAS, gaps)[0] if min(gaps) > 0 else float("nan")
    res.add("gap_vs_lambda_slope", slope, "<= 1.2", slope <= 1.2)
    l_j = two_state_l_j()
    res.note = (f"alpha = lam^2/(4 L_J (1+lam)) = {actor.prescribed_alpha('nac', l_j, 1e-2):.3g}"
                f" at lam=1e-2")
    return res


@_timed
def check_fisher(seed: int = 0) -> CheckResult:
    """Regularised natural direction approaches the pseudo-inverse one linearly in lambda."""
    res = CheckResult("6", "regularised Fisher direction vs lambda", 5.0)
    lambdas = np.logspace(-7, -4, 7)
    slopes = []
    for i in range(10):
        mdp = random_garnet(5, 3, 2, seed=seed + 100 + i)
        rng = np.random.default_rng(seed + 100 + i)
        feats = PolicyFeatures(rng.normal(size=(5, 3, 4)))
        pol = SoftmaxPolicy(feats, rng.normal(scale=0.5, size=4))
        slopes.append(oracle.fisher_direction_gap(mdp, pol, lambdas).slope)
    worst = float(max(slopes, key=lambda s: abs(s - 1.0)))
    res.add("worst_slope", worst, "in [0.9, 1.1]", abs(worst - 1.0) <= 0.1)
    return res


@_timed
def check_lipschitz(seed: int = 0) -> CheckResult:
    """Empirical gradient Lipschitz ratio against the computed L_J."""
    res = CheckResult("7", "gradient Lipschitz bound", 10.0)
    worst = 0.0
    for i in range(10):
        if i == 0:
            mdp, feats = two_state_chain(), PolicyFeatures.tabular(2, 2)
        else:
            mdp = random_garnet(5, 3, 2, seed=seed + 200 + i)
            rng = np.random.default_rng(seed + 200 + i)
            feats = PolicyFeatures(rng.normal(size=(5, 3, 4)))
        rep = oracle.lipschitz_constants(mdp, feats, seed=seed + i, n_pairs=200)
        worst = max(worst, rep.empirical_ratio / rep.l_j)
    res.add("max_ratio_over_L_J", worst, "<= 1", worst <= 1.0)
    return res


@_timed
def check_single_path(seed: int = 0) -> CheckResult:
    """Phase hand-off and sample accounting of an instrumented run."""
    res = CheckResult("8", "single-path integrity", 60.0)
    mdp = two_state_chain()
    broken = 0
    accounting = 0
    for variant in ("ac", "nac"):
        cfg = actor.ActorConfig(variant=variant, alpha=0.5, batch=64, iterations=50, beta=0.5,
                                critic_iters=5, critic_batch=16, seed=seed)
        cursor = PathCursor.from_seed(seed, init_dist=mdp.init_dist)
        tr = actor.run(mdp, PolicyFeatures.tabular(2, 2), np.eye(2), cfg, metrics=(),
                       cursor=cursor)
        broken += sum(a.exit != b.entry for a, b in zip(tr.phases, tr.phases[1:]))
        expected = (cfg.batch + cfg.critic_batch * cfg.critic_iters) * cfg.iterations
        accounting += abs(int(tr.cumulative_samples[-1]) - expected)
        accounting += abs(cursor.steps - expected)
        accounting += abs(sum(p.samples for p in tr.phases) - expected)
    res.add("broken_handoffs", broken, "= 0", broken == 0)
    res.add("sample_count_mismatch", accounting, "= 0", accounting == 0)
    return res


DETERMINISM_SUBSET = ("1", "2", "8")


@_timed
def check_determinism(seed: int = 0) -> CheckResult:
    """Two check runs with one seed give byte-identical CSV bodies."""
    res = CheckResult("9", "determinism of the check report", 60.0)
    first = report_csv(run_checks(DETERMINISM_SUBSET, seed))
    second = report_csv(run_checks(DETERMINISM_SUBSET, seed))
    res.add("identical_csv", float(first == second), "= 1", first == second)
    return res


CHECKS = {
    "1": check_oracle,
    "2": check_td_floor,
    "3": check_sa_contraction,
    "4a": check_ac_rate_T,
    "4b": check_ac_rate_B,
    "5": check_nac,
    "6": check_fisher,
    "7": check_lipschitz,
    "8": check_single_path,
    "9": check_determinism,
}


def select(keys) -> list[str]:
    """Expand criterion keys ("4" selects 4a and 4b)."""
    if not keys:
        return list(CHECKS)
    out = []
    for k in keys:
        match = [c for c in CHECKS if c == k or c.rstrip("ab") == k]
        if not match:
            raise KeyError(f"unknown criterion {k!r}; known: {', '.join(CHECKS)}")
        out.extend(m for m in match if m not in out)
    return out


def run_checks(keys=None, seed: int = 0, echo=None) -> list[CheckResult]:
    results = []
    for key in select(keys):
        r = CHECKS[key](seed)
        if echo is not None:
            echo(r.line())
        results.append(r)
    return results


REPORT_COLUMNS = ("criterion", "quantity", "value", "bound", "passed")


def report_csv(results: list[CheckResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in results:
        for q in r.quantities:
            writer.writerow((r.key, q.name, repr(q.value), q.bound, int(q.passed)))
    return buf.getvalue()


__all__ = ["CHECKS", "CheckResult", "report_csv", "run_checks", "select"]
