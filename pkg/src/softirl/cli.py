"""Command-line front end: ``solve``, ``irl`` and ``verify``.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import environments, io
from .irl import IrlAborted, IrlConfig, run_irl
from .mdp import InvalidArgumentError, MdpValidationError, reward_of
from .metrics import ipm, pinsker_chain, true_reward_gap
from .sampling import (ExpertDataset, GenerativeModel, RngStream, empirical_expert_features,
                       generate_expert_dataset)
from .solver import (SolverError, feature_expectation_exact, occupancy, optimal_policy,
                     soft_value_iteration, truncated_feature_expectation)
from .verify import resolve_suites, run_suites

log = logging.getLogger("softirl")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

TRACE_COLUMNS = ["t", "samples_total", "grad_linf", "w_l1"]
DIAG_COLUMNS = ["subopt_exact", "tv_exact"]
SUMMARY_COLUMNS = ["run_id", "seed", "status", "T", "B", "eta_w", "samples_total", "w_bar_l1"]
METRIC_COLUMNS = ["expert_subopt", "tv", "ipm", "true_gap", "pinsker_lhs", "pinsker_rhs",
                  "vartheta_e", "assumption_ok", "pinsker_ok"]
VERIFY_COLUMNS = ["suite", "trial", "instance_seed", "value", "bound", "margin", "passed", "detail"]

SCHEMA = {
    "environment": {"name", "params", "file"},
    "reward": {"source", "weights"},
    "algorithm": {"T", "B", "eta_w", "stepsize_variant", "snapshot_every", "horizon_cap",
                  "workers"},
    "expert": {"N", "H", "dataset", "exact"},
    "evaluation": {"metrics", "exact_diagnostics"},
    "seeds": None,
    "out": None,
}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    environment: dict
    reward: dict = field(default_factory=lambda: {"source": "w_true"})
    algorithm: dict = field(default_factory=dict)
    expert: dict = field(default_factory=lambda: {"N": 100, "H": 50})
    evaluation: dict = field(default_factory=lambda: {"metrics": True, "exact_diagnostics": False})
    seeds: list = field(default_factory=lambda: [0])
    out: str = "out"
    base_dir: str = "."


def load_config(path) -> RunConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def parse_config(doc, base_dir=".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in doc.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        allowed = SCHEMA[key]
        if allowed is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            bad = set(value) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) {sorted(bad)} in section {key!r}")
    if "environment" not in doc:
        raise ConfigError("config needs an 'environment' section")
    env = doc["environment"]
    if ("name" in env) == ("file" in env):
        raise ConfigError("environment needs exactly one of 'name' or 'file'")
    cfg = RunConfig(environment=env, base_dir=base_dir)
    for key in ("reward", "algorithm", "expert", "evaluation"):
        if key in doc:
            merged = dict(getattr(cfg, key)) if key == "evaluation" else {}
            merged.update(doc[key])
            setattr(cfg, key, merged)
    if "seeds" in doc:
        seeds = doc["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("'seeds' must be a non-empty list of integers")
        cfg.seeds = seeds
    if "out" in doc:
        cfg.out = doc["out"]
    return cfg


def _path(cfg, p):
    return p if os.path.isabs(p) else os.path.join(cfg.base_dir, p)


def load_environment(cfg: RunConfig):
    env = cfg.environment
    if "file" in env:
        path = _path(cfg, env["file"])
        if not os.path.isfile(path):
            raise ConfigError(f"environment file not found: {path}")
        return io.load_mdp_file(path)
    try:
        return environments.build(env["name"], **env.get("params", {}))
    except TypeError as exc:
        raise ConfigError(f"environment params: {exc}") from None


def _reward_weights(cfg, bundle):
    section = cfg.reward
    if "weights" in section:
        return np.asarray(section["weights"], dtype=float)
    if section.get("source", "w_true") == "w_true":
        if bundle.w_true is None:
            raise ConfigError("environment has no w_true; give reward.weights")
        return bundle.w_true
    raise ConfigError(f"unknown reward source {section.get('source')!r}")


def irl_config(cfg: RunConfig, seed, workers=None) -> IrlConfig:
    alg = dict(cfg.algorithm)
    if workers is not None:
        alg["workers"] = workers
    try:
        return IrlConfig(T=alg.pop("T", 1000), B=alg.pop("B", 8), seed=seed, **alg)
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(f"algorithm section: {exc}") from None


def cmd_solve(cfg: RunConfig, out_dir):
    bundle = load_environment(cfg)
    m = bundle.mdp
    w = _reward_weights(cfg, bundle)
    r = reward_of(w, bundle.phi)
    vp = soft_value_iteration(m, r)
    pi = optimal_policy(vp, m.tau)
    os.makedirs(out_dir, exist_ok=True)
    result = {
        "J_star": float(m.initial_dist @ vp.v),
        "V": vp.v.tolist(),
        "Q": vp.q.tolist(),
        "pi": pi.tolist(),
        "nu": occupancy(m, pi).nu.tolist(),
        "sigma": feature_expectation_exact(m, pi, bundle.phi).tolist(),
        "residual": vp.residual,
        "iterations": vp.iterations,
    }
    with open(os.path.join(out_dir, "solve.json"), "w") as fh:
        json.dump(result, fh, indent=1)
        fh.write("\n")
    return EXIT_OK


def _expert_features(cfg, bundle, seed, out_dir):
    section = cfg.expert
    m, phi = bundle.mdp, bundle.phi
    if section.get("exact"):
        return truncated_feature_expectation(m, bundle.pi_expert, phi, int(section.get("H", 200)))
    if "dataset" in section:
        path = _path(cfg, section["dataset"])
        if not os.path.isfile(path):
            raise ConfigError(f"expert dataset not found: {path}")
        data = ExpertDataset.load(path)
    else:
        data = generate_expert_dataset(GenerativeModel(m), bundle.pi_expert, int(section["N"]),
                                       int(section["H"]), RngStream(seed).child("expert-data"), seed)
        data.save(os.path.join(out_dir, f"expert_seed{seed}.jsonl"))
    return empirical_expert_features(data, phi, m.gamma)


def run_seed(cfg: RunConfig, seed, out_dir, workers=None):
    """One IRL run; writes the trace CSV and w_bar sidecar, returns a summary row."""
    bundle = load_environment(cfg)
    m, phi = bundle.mdp, bundle.phi
    icfg = irl_config(cfg, seed, workers)
    row = {"run_id": f"seed{seed}", "seed": seed, "T": icfg.T, "B": icfg.B}
    diag = bool(cfg.evaluation.get("exact_diagnostics"))
    try:
        sigma_e = _expert_features(cfg, bundle, seed, out_dir)
        trace = run_irl(m, phi, sigma_e, icfg)
    except (IrlAborted, SolverError, FloatingPointError) as exc:
        row["status"] = f"failed: {exc}"
        return row
    rows = []
    for t in range(trace.T):
        rec = {"t": t, "samples_total": trace.samples_total[t], "grad_linf": trace.grad_linf[t],
               "w_l1": float(np.abs(trace.weights[t]).sum())}
        if diag and t in trace.policies:
            r_t = reward_of(trace.weights[t], phi)
            rep = pinsker_chain(m, r_t, trace.policies[t])
            rec["subopt_exact"] = rep.expert_subopt
            rec["tv_exact"] = rep.tv
        rows.append(rec)
    io.write_csv(os.path.join(out_dir, f"trace_seed{seed}.csv"),
                 TRACE_COLUMNS + (DIAG_COLUMNS if diag else []), rows)
    w_bar = trace.w_bar
    with open(os.path.join(out_dir, f"w_bar_seed{seed}.json"), "w") as fh:
        json.dump({"seed": seed, "eta_w": trace.eta_w, "w_bar": w_bar.tolist()}, fh)
        fh.write("\n")
    row.update(status="ok", eta_w=trace.eta_w, samples_total=trace.samples_total[-1],
               w_bar_l1=float(np.abs(w_bar).sum()))
    if cfg.evaluation.get("metrics", True):
        r_bar = reward_of(w_bar, phi)
        rep = pinsker_chain(m, r_bar, bundle.pi_expert)
        row.update(rep.as_row())
        sigma_star = feature_expectation_exact(m, optimal_policy(soft_value_iteration(m, r_bar), m.tau), phi)
        sigma_exp = feature_expectation_exact(m, bundle.pi_expert, phi)
        row["ipm"] = ipm(sigma_star, sigma_exp)
        if bundle.w_true is not None:
            row["true_gap"] = true_reward_gap(bundle.w_true, sigma_star, sigma_exp)
    return row


def cmd_irl(cfg: RunConfig, out_dir, jobs=1, workers=None):
    os.makedirs(out_dir, exist_ok=True)
    load_environment(cfg)
    for seed in cfg.seeds:
        irl_config(cfg, seed, workers)
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds,
                               [out_dir] * len(cfg.seeds), [workers] * len(cfg.seeds)))
    else:
        rows = [run_seed(cfg, s, out_dir, workers) for s in cfg.seeds]
    header = SUMMARY_COLUMNS + (METRIC_COLUMNS if cfg.evaluation.get("metrics", True) else [])
    io.write_csv(os.path.join(out_dir, "summary.csv"), header, rows)
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        log.error("seed %s %s", r["seed"], r["status"])
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_verify(selector, seed, trials, out_dir, mc_trials=4):
    try:
        names = resolve_suites(selector)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    checks = run_suites(names, trials, seed, mc_trials)
    os.makedirs(out_dir, exist_ok=True)
    rows = [{"suite": c.suite, "trial": c.trial, "instance_seed": c.instance_seed,
             "value": c.value, "bound": c.bound, "margin": c.margin, "passed": c.passed,
             "detail": c.detail} for c in checks]
    io.write_csv(os.path.join(out_dir, "verify_report.csv"), VERIFY_COLUMNS, rows)
    failures = [c for c in checks if not c.passed]
    for name in names:
        mine = [c for c in checks if c.suite == name]
        bad = sum(not c.passed for c in mine)
        print(f"{'FAIL' if bad else 'PASS'} {name}: {len(mine) - bad}/{len(mine)} "
              f"(min margin {min(c.margin for c in mine):.3g})")
    for c in failures:
        print(f"  violated: {c.suite} trial {c.trial} instance_seed={c.instance_seed} "
              f"value={c.value!r} bound={c.bound!r} {c.detail}")
    return EXIT_VERIFY if failures else EXIT_OK


def _seed_list(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="softirl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact soft-optimal solve of a configured environment")
    p.add_argument("--config", required=True)
    p.add_argument("--out")

    p = sub.add_parser("irl", help="run the model-free IRL algorithm over a seed sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=_seed_list, help="comma-separated seeds; overrides config")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1, help="seeds run in parallel processes")
    p.add_argument("--workers", type=int, help="threads per run for value estimation")

    p = sub.add_parser("verify", help="run randomized property suites")
    p.add_argument("--suite", default="lemmas")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--mc-trials", type=int, default=4,
                   help="trial cap for Monte Carlo suites")
    p.add_argument("--out", default="verify_out")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            return cmd_verify(args.suite, args.seed, args.trials, args.out, args.mc_trials)
        cfg = load_config(args.config)
        if args.out:
            cfg.out = args.out
        out_dir = _path(cfg, cfg.out) if not args.out else args.out
        if args.command == "solve":
            return cmd_solve(cfg, out_dir)
        if args.seed:
            cfg.seeds = args.seed
        return cmd_irl(cfg, out_dir, args.jobs, args.workers)
    except (ConfigError, MdpValidationError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
