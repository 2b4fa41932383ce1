"""Experiment configs, seeded sweeps, aggregation and export."""
from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__, actor, critic, oracle
from .generators import generate_mdp
from .mdp import FiniteMdp, MdpError, PathCursor, load_mdp, mdp_from_dict
from .policy import PolicyFeatures, SoftmaxPolicy

KINDS = ("td", "sa", "ac", "nac")
REDUCERS = ("final", "mean", "tail_mean")
LONG_COLUMNS = ("config_id", "seed", "t", "metric", "value")

_TD_DEFAULTS = {"beta": 0.5, "n_outer": 200, "batch": 32, "policy_params": None}
_SA_DEFAULTS = {"alpha": 0.5, "n_iter": 200, "batch": 32, "policy_params": None,
                "prescribe_eps": None}
_ACTOR_FIELDS = {f.name for f in fields(actor.ActorConfig)} - {"variant", "seed"}
_ACTOR_EXTRA = {"metrics": list(actor.METRICS)}


class ConfigError(ValueError):
    pass


@dataclass
class ScalingCheck:
    axis: str
    metric: str
    reduce: str = "tail_mean"
    tail: float = 0.5
    slope_range: tuple[float, float] | None = None


@dataclass
class ExperimentConfig:
    name: str
    mdp: dict
    policy_features: dict
    critic_features: dict
    algorithm: dict
    sweep: dict = field(default_factory=dict)
    replications: int = 1
    base_seed: int = 0
    scaling: list[ScalingCheck] = field(default_factory=list)
    output: dict = field(default_factory=dict)
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = copy.deepcopy(data)
        for key in ("mdp", "algorithm"):
            if key not in data:
                raise ConfigError(f"config is missing the {key!r} block")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        scaling = data.pop("scaling", []) or []
        if isinstance(scaling, dict):
            scaling = [scaling]
        try:
            checks = [ScalingCheck(**{**s, "slope_range": tuple(s["slope_range"])}
                                   if s.get("slope_range") else s) for s in scaling]
        except TypeError as exc:
            raise ConfigError(f"bad scaling block: {exc}") from None
        data.setdefault("name", "experiment")
        data.setdefault("policy_features", {"kind": "tabular"})
        data.setdefault("critic_features", {"kind": "tabular"})
        cfg = cls(scaling=checks, **data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a mapping")
        return cls.from_dict(data)

    @property
    def kind(self) -> str:
        return str(self.algorithm.get("kind", "")).lower()

    def algorithm_params(self) -> dict:
        """Algorithm block with defaults filled in (without ``kind``)."""
        params = {k: v for k, v in self.algorithm.items() if k != "kind"}
        if self.kind == "td":
            return {**_TD_DEFAULTS, **params}
        if self.kind == "sa":
            return {**_SA_DEFAULTS, **params}
        defaults = {f.name: f.default for f in fields(actor.ActorConfig)
                    if f.name in _ACTOR_FIELDS}
        return {**defaults, **_ACTOR_EXTRA, **params}

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"algorithm.kind must be one of {KINDS}, got {self.kind!r}")
        if not isinstance(self.replications, int) or self.replications < 1:
            raise ConfigError("replications must be an integer >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        params = self.algorithm_params()
        allowed = set(params)
        extra = set(params) - ({*_TD_DEFAULTS} if self.kind == "td" else
                               {*_SA_DEFAULTS} if self.kind == "sa" else
                               _ACTOR_FIELDS | set(_ACTOR_EXTRA))
        if extra:
            raise ConfigError(f"unknown {self.kind} parameters {sorted(extra)}")
        for axis, values in self.sweep.items():
            if axis not in allowed:
                raise ConfigError(f"sweep axis {axis!r} is not a {self.kind} parameter")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep axis {axis!r} needs a nonempty list of values")
        for check in self.scaling:
            if check.axis not in self.sweep:
                raise ConfigError(f"scaling axis {check.axis!r} is not swept")
            if check.reduce not in REDUCERS:
                raise ConfigError(f"scaling reduce must be one of {REDUCERS}")
        if self.kind in ("ac", "nac"):
            for m in params["metrics"]:
                if m not in actor.METRICS:
                    raise ConfigError(f"unknown metric {m!r}")
        for point in self.points():
            try:
                _algorithm_from_point(self.kind, point, seed=0)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"invalid algorithm parameters {point}: {exc}") from None

    def points(self) -> list[dict]:
        """Full parameter dict of every sweep point, in sweep-product order."""
        base = self.algorithm_params()
        axes = list(self.sweep)
        out = []
        for combo in itertools.product(*(self.sweep[a] for a in axes)):
            out.append({**base, **dict(zip(axes, combo))})
        return out

    def seeds(self) -> list[int]:
        return [self.base_seed + r for r in range(self.replications)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scaling"] = [{**asdict(s), "slope_range": list(s.slope_range) if s.slope_range
                         else None} for s in self.scaling]
        return d

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring output and worker settings."""
        d = self.to_dict()
        d.pop("output", None)
        d.pop("workers", None)
        blob = json.dumps(d, sort_keys=True, default=_json_default).encode()
        return hashlib.sha256(blob).hexdigest()


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _algorithm_from_point(kind: str, point: dict, seed: int):
    if kind in ("ac", "nac"):
        cfg = {k: v for k, v in point.items() if k in _ACTOR_FIELDS}
        if cfg.get("alpha") == "prescribed":
            cfg["alpha"] = 0.0
        return actor.ActorConfig(variant=kind, seed=seed, **cfg)
    if kind == "td" and (point["beta"] <= 0 or point["n_outer"] < 1 or point["batch"] < 1):
        raise ValueError("TD needs beta > 0, n_outer >= 1, batch >= 1")
    if kind == "sa" and point["prescribe_eps"] is None and (
            point["alpha"] <= 0 or point["n_iter"] < 1 or point["batch"] < 1):
        raise ValueError("linear SA needs alpha > 0, n_iter >= 1, batch >= 1")
    return None


# -- building blocks from config ----------------------------------------------

def build_mdp(spec: dict, seed: int | None = None) -> FiniteMdp:
    spec = dict(spec)
    if "generator" in spec:
        try:
            return generate_mdp(spec["generator"], spec.get("params"), spec.get("seed", seed))
        except TypeError as exc:
            raise ConfigError(f"bad parameters for generator {spec['generator']!r}: {exc}") from None
    if "file" in spec:
        return load_mdp(spec["file"])
    if "inline" in spec:
        return mdp_from_dict(spec["inline"])
    raise ConfigError("mdp block needs one of 'generator', 'file' or 'inline'")


def build_policy_features(spec: dict, mdp: FiniteMdp) -> PolicyFeatures:
    kind = spec.get("kind", "tabular")
    S, A = mdp.num_states, mdp.num_actions
    if kind == "tabular":
        return PolicyFeatures.tabular(S, A)
    if kind == "random":
        rng = np.random.default_rng(spec.get("seed", 0))
        return PolicyFeatures(rng.normal(size=(S, A, int(spec["dim"]))))
    if kind == "matrix":
        return PolicyFeatures(np.asarray(spec["values"], dtype=float))
    raise ConfigError(f"unknown policy feature kind {kind!r}")


def build_critic_features(spec: dict, mdp: FiniteMdp) -> np.ndarray:
    kind = spec.get("kind", "tabular")
    if kind == "tabular":
        return critic.CriticModel.tabular(mdp.num_states).phi
    if kind == "random":
        return critic.CriticModel.random(mdp.num_states, int(spec["dim"]),
                                         seed=spec.get("seed", 0)).phi
    if kind == "matrix":
        return critic.CriticModel(np.asarray(spec["values"], dtype=float)).phi
    raise ConfigError(f"unknown critic feature kind {kind!r}")


def _policy(features: PolicyFeatures, params) -> SoftmaxPolicy:
    if params is None:
        return SoftmaxPolicy.zeros(features)
    return SoftmaxPolicy(features, np.asarray(params, dtype=float))


# -- single runs ---------------------------------------------------------------

@dataclass
class RunRecord:
    config_id: str
    seed: int
    series: dict[str, list]       # metric -> per-iteration values (None for NaN)
    total_samples: int = 0
    t_hat: int | None = None
    final: dict[str, float | None] = field(default_factory=dict)
    error: str | None = None


def _clean(values) -> list:
    return [None if v is None or not math.isfinite(v) else float(v) for v in values]


def run_single(cfg: ExperimentConfig, point: dict, config_id: str, seed: int,
               trace_dir: Path | None = None) -> RunRecord:
    mdp = build_mdp(cfg.mdp)
    features = build_policy_features(cfg.policy_features, mdp)
    phi = build_critic_features(cfg.critic_features, mdp)
    kind = cfg.kind
    cursor = PathCursor.from_seed(seed, init_dist=mdp.init_dist)
    if kind == "td":
        policy = _policy(features, point["policy_params"])
        star = oracle.td_fixed_point(mdp, policy, phi).theta_star
        res = critic.minibatch_td(mdp, policy, critic.CriticModel(phi), point["beta"],
                                  point["n_outer"], point["batch"], cursor, theta_star=star,
                                  trace=trace_dir is not None)
        if trace_dir is not None:
            _write_rows(trace_dir / f"{config_id}_seed{seed}.csv",
                        ("k", "theta_err_sq", "wallclock_ns"), res.trace_rows())
        return RunRecord(config_id, seed, {"theta_err_sq": _clean(res.errors)},
                         point["n_outer"] * point["batch"])
    if kind == "sa":
        policy = _policy(features, point["policy_params"])
        problem = critic.td_linear_sa_problem(mdp, policy, phi)
        alpha, n_iter, batch = point["alpha"], point["n_iter"], point["batch"]
        if point["prescribe_eps"] is not None:
            pres = critic.prescribe_sa_hyperparams(problem, float(point["prescribe_eps"]))
            alpha, n_iter, batch = pres.alpha, pres.n_iter, pres.batch
        res = critic.linear_sa(problem, alpha, n_iter, batch, cursor,
                               theta_star=problem.theta_star)
        return RunRecord(config_id, seed, {"theta_err_sq": _clean(res.errors)}, n_iter * batch)
    acfg = _algorithm_from_point(kind, point, seed)
    if point.get("alpha") == "prescribed":
        rep = oracle.lipschitz_constants(mdp, features, seed=0, check=False)
        acfg.alpha = actor.prescribed_alpha(kind, rep.l_j, acfg.lam)
    trace = actor.run(mdp, features, phi, acfg, metrics=point["metrics"], cursor=cursor)
    if trace_dir is not None:
        trace.write_csv(trace_dir / f"{config_id}_seed{seed}.csv")
    series = {m: _clean(trace.metrics[m]) for m in point["metrics"]}
    final = {m: _clean([trace.final[m]])[0] for m in point["metrics"] if m in trace.final}
    return RunRecord(config_id, seed, series, int(trace.cumulative_samples[-1]),
                     trace.t_hat, final)


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _guarded(args) -> RunRecord:
    cfg, point, config_id, seed, trace_dir = args
    try:
        return run_single(cfg, point, config_id, seed, trace_dir)
    except Exception as exc:  # recorded per run, siblings continue
        return RunRecord(config_id, seed, {}, error=f"{type(exc).__name__}: {exc}")


# -- aggregation ---------------------------------------------------------------

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class PointSummary:
    config_id: str
    params: dict                   # swept values only
    seeds: list[int]
    stats: dict[str, dict[str, list]]    # metric -> statistic -> per-iteration list
    scalar: dict[str, dict]        # metric -> {"values", "mean", "std"} of the reduced run value
    total_samples: int
    failures: dict[str, str]
    complete: bool


@dataclass
class SlopeFit:
    axis: str
    metric: str
    reduce: str
    x: list[float]
    y: list[float]
    slope: float | None
    intercept: float | None
    r2: float | None
    residuals: list[float]
    slope_range: list[float] | None = None
    passed: bool | None = None


@dataclass
class AggregateResult:
    name: str
    manifest: dict
    points: list[PointSummary] = field(default_factory=list)
    slopes: list[SlopeFit] = field(default_factory=list)
    runs: list[RunRecord] = field(default_factory=list)

    @property
    def total_samples(self) -> int:
        return sum(p.total_samples for p in self.points)

    def point(self, config_id: str) -> PointSummary:
        for p in self.points:
            if p.config_id == config_id:
                return p
        raise KeyError(config_id)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateResult":
        return cls(d["name"], d["manifest"], [PointSummary(**p) for p in d["points"]],
                   [SlopeFit(**s) for s in d["slopes"]], [RunRecord(**r) for r in d["runs"]])


def reduce_series(values: list, how: str, tail: float = 0.5) -> float | None:
    arr = np.array([np.nan if v is None else v for v in values], dtype=float)
    if arr.size == 0:
        return None
    if how == "final":
        v = arr[-1]
    elif how == "mean":
        v = np.nanmean(arr)
    elif how == "tail_mean":
        v = np.nanmean(arr[int(len(arr) * (1.0 - tail)):])
    else:
        raise ValueError(f"unknown reducer {how!r}")
    return None if not np.isfinite(v) else float(v)


def fit_loglog(x, y) -> tuple[float, float, float, np.ndarray]:
    """OLS of log y on log x: (slope, intercept, R^2, residuals)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2, resid


def _summarise(config_id, params, runs: list[RunRecord], seeds, reducers) -> PointSummary:
    ok = [r for r in runs if r.error is None]
    stats, scalar = {}, {}
    metrics = sorted({m for r in ok for m in r.series})
    for m in metrics:
        arr = np.array([[np.nan if v is None else v for v in r.series[m]] for r in ok], float)
        with warnings.catch_warnings():
            # all-NaN columns are expected for untracked metrics
            warnings.simplefilter("ignore", RuntimeWarning)
            entry = {"mean": _clean(np.nanmean(arr, axis=0)),
                     "std": _clean(np.nanstd(arr, axis=0))}
            for q in QUANTILES:
                entry[f"q{int(round(q * 100)):02d}"] = _clean(np.nanquantile(arr, q, axis=0))
        stats[m] = entry
        how, tail = reducers.get(m, ("final", 0.5))
        vals = [reduce_series(r.series[m], how, tail) for r in ok]
        finite = [v for v in vals if v is not None]
        scalar[m] = {"reduce": how, "values": vals,
                     "mean": float(np.mean(finite)) if finite else None,
                     "std": float(np.std(finite)) if finite else None}
    failures = {str(r.seed): r.error for r in runs if r.error is not None}
    return PointSummary(config_id, params, list(seeds), stats, scalar,
                        sum(r.total_samples for r in ok), failures, not failures)


def point_id(index: int, params: dict) -> str:
    tag = "_".join(f"{k}={params[k]}" for k in sorted(params))
    return f"p{index:03d}" + (f"_{tag}" if tag else "")


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, fmt: str | None = None,
                   workers: int | None = None, trace: bool = False) -> AggregateResult:
    """Run every (sweep point, seed) pair, aggregate in (config_id, seed) order,
    fit declared scaling slopes and optionally persist."""
    out = out if out is not None else cfg.output.get("path")
    fmt = fmt or cfg.output.get("format", "csv")
    workers = workers or cfg.workers
    trace_dir = None
    if trace and out is not None:
        trace_dir = Path(out) / "traces"
        trace_dir.mkdir(parents=True, exist_ok=True)
    points = cfg.points()
    swept = list(cfg.sweep)
    ids = [point_id(i, {a: p[a] for a in swept}) for i, p in enumerate(points)]
    seeds = cfg.seeds()
    jobs = [(cfg, p, cid, s, trace_dir) for p, cid in zip(points, ids) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_guarded, jobs))
    else:
        records = [_guarded(j) for j in jobs]
    records.sort(key=lambda r: (ids.index(r.config_id), r.seed))
    reducers = {c.metric: (c.reduce, c.tail) for c in cfg.scaling}
    summaries = []
    for p, cid in zip(points, ids):
        runs = [r for r in records if r.config_id == cid]
        summaries.append(_summarise(cid, {a: p[a] for a in swept}, runs, seeds, reducers))
    slopes = [_fit_check(c, summaries) for c in cfg.scaling]
    manifest = {"config_hash": cfg.config_hash(), "version": __version__,
                "seeds": seeds, "base_seed": cfg.base_seed, "points": ids,
                "kind": cfg.kind}
    result = AggregateResult(cfg.name, manifest, summaries, slopes, records)
    if out is not None:
        export(result, out, fmt)
    return result


def _fit_check(check: ScalingCheck, summaries: list[PointSummary]) -> SlopeFit:
    xs, ys = [], []
    for p in summaries:
        y = p.scalar.get(check.metric, {}).get("mean")
        if y is not None and y > 0 and p.params[check.axis] > 0:
            xs.append(float(p.params[check.axis]))
            ys.append(float(y))
    rng = list(check.slope_range) if check.slope_range else None
    if len(xs) < 2:
        return SlopeFit(check.axis, check.metric, check.reduce, xs, ys, None, None, None, [],
                        rng, False if rng else None)
    slope, intercept, r2, resid = fit_loglog(xs, ys)
    passed = None if rng is None else bool(rng[0] <= slope <= rng[1])
    return SlopeFit(check.axis, check.metric, check.reduce, xs, ys, slope, intercept, r2,
                    [float(v) for v in resid], rng, passed)


# -- export ----------------------------------------------------------------------

def long_rows(result: AggregateResult):
    for r in result.runs:
        for m in sorted(r.series):
            for t, v in enumerate(r.series[m]):
                yield (r.config_id, r.seed, t, m, "" if v is None else repr(v))


def export(result: AggregateResult, path: str | Path, fmt: str = "csv") -> list[Path]:
    """Write ``results.csv`` (long format) or ``results.json`` plus ``manifest.json``."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "manifest.json"]
        written[0].write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
        if fmt == "csv":
            target = out / "results.csv"
            _write_rows(target, LONG_COLUMNS, long_rows(result))
        else:
            target = out / "results.json"
            target.write_text(json.dumps(result.to_dict(), indent=1, sort_keys=True,
                                         default=_json_default) + "\n")
        written.append(target)
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return written


def load_result(path: str | Path) -> AggregateResult:
    return AggregateResult.from_dict(json.loads(Path(path).read_text()))


__all__ = ["AggregateResult", "ConfigError", "ExperimentConfig", "MdpError", "PointSummary",
           "RunRecord", "ScalingCheck", "SlopeFit", "export", "fit_loglog", "generate_mdp",
           "load_result", "run_experiment", "run_single"]
