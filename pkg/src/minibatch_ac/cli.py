"""Command-line entry point: ``minibatch-ac <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, checks, oracle
from .harness import (ConfigError, ExperimentConfig, build_critic_features, build_mdp,
                      build_policy_features, run_experiment)
from .mdp import MdpError
from .policy import SoftmaxPolicy

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2

# used when a run command gets no --config
DEFAULTS = {
    "td": {"name": "td", "mdp": checks.GARNET, "critic_features": checks.TD_FEATURES,
           "algorithm": {"kind": "td", "beta": 0.5, "n_outer": 200, "batch": 64}},
    "sa": {"name": "sa", "mdp": checks.GARNET, "critic_features": checks.TD_FEATURES,
           "algorithm": {"kind": "sa", "alpha": 0.5, "n_iter": 200, "batch": 64}},
    "ac": {"name": "ac", "mdp": checks.TWO_STATE,
           "algorithm": {"kind": "ac", "alpha": 1.0, "batch": 256, "iterations": 300}},
    "nac": {"name": "nac", "mdp": checks.TWO_STATE,
            "algorithm": {"kind": "nac", "alpha": 0.1, "lam": 0.01, "batch": 256,
                          "iterations": 300}},
}


def _common(p: argparse.ArgumentParser, config_required=False):
    p.add_argument("--config", required=config_required, help="YAML or JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--trace", action="store_true", help="write per-iteration CSV per run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minibatch-ac", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in ("td", "ac", "nac", "sa"):
        _common(sub.add_parser(f"run-{kind}", help=f"run {kind.upper()} from a config"))
    _common(sub.add_parser("sweep", help="run a sweep config"), config_required=True)
    dump = sub.add_parser("oracle-dump", help="exact quantities for one policy as JSON")
    dump.add_argument("--config", help="config supplying the MDP and feature blocks")
    dump.add_argument("--mdp", help="MDP file (YAML/JSON) or generator name")
    dump.add_argument("--params", help="comma-separated policy parameters (default zeros)")
    dump.add_argument("--seed", type=int, default=None, help="generator seed")
    dump.add_argument("--out", help="write JSON here instead of stdout")
    chk = sub.add_parser("check", help="run the acceptance checks")
    chk.add_argument("--only", help="comma-separated criteria, e.g. 1,4,8")
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument("--out", help="directory for check.csv")
    chk.add_argument("--format", choices=("csv",), default="csv")
    chk.add_argument("--workers", type=int, default=None, help="accepted; checks run serially")
    chk.add_argument("--config", help="accepted for uniformity; unused")
    chk.add_argument("--trace", action="store_true", help="accepted; unused")
    return parser


def _load(args, kind: str | None) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if kind is not None and cfg.kind != kind:
            raise ConfigError(f"config algorithm kind is {cfg.kind!r}, command expects {kind!r}")
    else:
        cfg = ExperimentConfig.from_dict(DEFAULTS[kind])
    if args.seed is not None:
        cfg.base_seed = args.seed
    return cfg


def _report(result) -> None:
    for point in result.points:
        parts = [point.config_id]
        for m, s in sorted(point.scalar.items()):
            if s["mean"] is not None:
                parts.append(f"{m}={s['mean']:.6g}+-{s['std']:.2g}")
        if point.failures:
            parts.append(f"failed seeds {sorted(point.failures)}")
        print("  ".join(parts))
    for fit in result.slopes:
        status = "" if fit.passed is None else (" PASS" if fit.passed else " FAIL")
        if fit.slope is None:
            print(f"slope {fit.metric} vs {fit.axis}: not enough points{status}")
        else:
            print(f"slope {fit.metric} vs {fit.axis}: {fit.slope:.4f} (R^2 {fit.r2:.4f}){status}")
    print(f"total samples {result.total_samples}")


def cmd_run(args, kind: str | None) -> int:
    cfg = _load(args, kind)
    # fail fast on a broken MDP or feature block instead of once per run
    mdp = build_mdp(cfg.mdp)
    build_policy_features(cfg.policy_features, mdp)
    build_critic_features(cfg.critic_features, mdp)
    result = run_experiment(cfg, out=args.out, fmt=args.format, workers=args.workers,
                            trace=args.trace)
    _report(result)
    return EXIT_OK


def cmd_oracle_dump(args) -> int:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        mdp = build_mdp(cfg.mdp)
        features = build_policy_features(cfg.policy_features, mdp)
        phi = build_critic_features(cfg.critic_features, mdp)
    else:
        if not args.mdp:
            raise ConfigError("oracle-dump needs --config or --mdp")
        spec = {"file": args.mdp} if Path(args.mdp).exists() else {"generator": args.mdp}
        mdp = build_mdp(spec, seed=args.seed)
        features = build_policy_features({"kind": "tabular"}, mdp)
        phi = build_critic_features({"kind": "tabular"}, mdp)
    w = np.zeros(features.dim)
    if args.params:
        w = np.array([float(v) for v in args.params.split(",")])
        if w.shape != (features.dim,):
            raise ConfigError(f"expected {features.dim} policy parameters, got {len(w)}")
    text = oracle.solve(mdp, SoftmaxPolicy(features, w), phi).to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_check(args) -> int:
    keys = [k.strip() for k in args.only.split(",")] if args.only else None
    try:
        keys = checks.select(keys)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    results = checks.run_checks(keys, args.seed, echo=lambda s: print(s, flush=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "check.csv").write_text(checks.report_csv(results))
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} criteria passed")
    return EXIT_OK if n_fail == 0 else EXIT_CHECK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command.startswith("run-"):
            return cmd_run(args, args.command[4:])
        if args.command == "sweep":
            return cmd_run(args, None)
        if args.command == "oracle-dump":
            return cmd_oracle_dump(args)
        return cmd_check(args)
    except (ConfigError, MdpError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
