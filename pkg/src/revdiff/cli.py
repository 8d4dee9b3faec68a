"""Command-line harness: ``revdiff {sample,sweep-w2,check,score-mse}``.

Every subcommand reads one JSON config (``--config``) and/or a shipped
preset (``--preset``); when both are given the config is merged over the
preset.  ``--seed`` overrides the config seed.  Exit codes: 0 success,
2 configuration error, 3 query budget exceeded, 4 check failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from ._validation import ConfigurationError
from .metrics import score_mse, wasserstein2
from .samplers import (
    SampleRun,
    expected_queries,
    run_reverse_diffusion,
    run_ula,
    schedule_practical,
    schedule_theory,
)
from .scores import EstimatorSpec
from .targets import GaussianMixture, QueryBudgetExceeded, make_target
from .theory import run_checks

log = logging.getLogger("revdiff")

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_CHECK = 0, 2, 3, 4
METHODS = ("ours", "ula", "rdmc")


# -- config handling ---------------------------------------------------------


def preset_names() -> list[str]:
    files = resources.files("revdiff").joinpath("presets").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("revdiff").joinpath("presets", f"{name}.json")
    if not path.is_file():
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(path.read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def read_config(args) -> dict:
    cfg = {}
    if args.preset:
        cfg = load_preset(args.preset)
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigurationError("config: top level must be a JSON object")
        cfg = _merge(cfg, user)
    if not cfg:
        raise ConfigurationError("give --config or --preset")
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


class _Fields:
    """Reads keys from a config block and reports unknown ones with their path."""

    def __init__(self, block, path: str):
        if not isinstance(block, dict):
            raise ConfigurationError(f"{path}: expected an object, got {type(block).__name__}")
        self.block = block
        self.path = path
        self.seen = set()

    def get(self, key, default=None, cast=None, required=False):
        self.seen.add(key)
        if key not in self.block:
            if required:
                raise ConfigurationError(f"{self.path}.{key}: required field missing")
            return default
        value = self.block[key]
        if cast is not None and value is not None:
            try:
                value = cast(value)
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"{self.path}.{key}: {exc}") from exc
        return value

    def done(self, ignore=()):
        extra = set(self.block) - self.seen - set(ignore)
        if extra:
            raise ConfigurationError(f"{self.path}: unknown field(s) {sorted(extra)}")


def _schedule(block, path):
    f = _Fields(block, path)
    if "epsilon" in block:
        eps = f.get("epsilon", cast=float)
        dim = f.get("dim", cast=int)
        f.done()
        return ("theory", eps, dim)
    T = f.get("T", cast=float, required=True)
    N = f.get("N", cast=int, required=True)
    n = f.get("n", 100, cast=int)
    f.done()
    return schedule_practical(T, N, n)


def _resolve_schedule(sched, dim):
    if isinstance(sched, tuple):
        _, eps, d = sched
        return schedule_theory(eps, d or dim)
    return sched


def _method_block(cfg: dict, path: str = "config"):
    present = [m for m in METHODS if m in cfg]
    if len(present) != 1:
        raise ConfigurationError(f"{path}: exactly one method block ({'/'.join(METHODS)}) required, found {present or 'none'}")
    return present[0], cfg[present[0]]


def _plan(method: str, block: dict, dim: int, path: str):
    """Turn a method block into a callable ``run(target, num_chains, seed, budget)``."""
    f = _Fields(block, f"{path}.{method}")
    if method == "ula":
        h = f.get("step_size", 0.01, cast=float)
        steps = f.get("steps", 50_000, cast=int)
        init = f.get("init", "standard")
        f.done()
        per_chain = (0, steps)

        def run(target, num_chains, seed, n_workers=None):
            return run_ula(target, h, steps, num_chains, init=init, seed=seed, n_workers=n_workers)

        return run, per_chain
    schedule = _resolve_schedule(_schedule(f.get("schedule", required=True), f"{path}.{method}.schedule"), dim)
    if method == "ours":
        est = f.get("estimator", {"kind": "self_normalized_dsi"})
        est = dict(est)
        est.setdefault("kind", "self_normalized_dsi")
        est.setdefault("particles", int(schedule.particles[0]))
    else:
        est = {
            "kind": "auxiliary_ula",
            "particles": int(schedule.particles[0]),
            "inner_steps": f.get("inner_steps", 100, cast=int),
            "inner_step_size": f.get("inner_step_size", 0.01, cast=float),
            "inner_init": f.get("inner_init", "standard"),
            "warm_start": f.get("warm_start", False, cast=bool),
        }
    f.done()
    try:
        spec = EstimatorSpec.from_dict(est)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}.{method}.estimator: {exc}") from exc
    if method == "ours" and spec.kind == "auxiliary_ula":
        raise ConfigurationError(f"{path}.ours.estimator: use the rdmc block for auxiliary_ula")
    per_chain = expected_queries(schedule, spec, 1)

    def run(target, num_chains, seed, n_workers=None):
        return run_reverse_diffusion(target, schedule, spec, num_chains, seed, n_workers=n_workers)

    return run, per_chain


def _execute(run, per_chain, target, num_chains, seed, budget, n_workers=None) -> SampleRun:
    """Run with the per-chain budget enforced in advance and while running."""
    planned = sum(per_chain)
    if budget is not None and planned > budget:
        raise QueryBudgetExceeded(per_chain[0] * num_chains, per_chain[1] * num_chains, int(budget) * num_chains)
    pot = target.as_potential(None if budget is None else int(budget) * num_chains)
    return run(pot, num_chains, seed, n_workers)


def _resolved_target(cfg, seed, path="config.target"):
    spec = cfg.get("target")
    if spec is None:
        raise ConfigurationError(f"{path}: required field missing")
    try:
        return make_target(spec, seed)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigurationError(f"{path}: cannot build target: {exc}") from exc


# -- output helpers ----------------------------------------------------------


def write_samples(path: Path, samples: np.ndarray) -> None:
    d = samples.shape[1]
    header = ",".join(f"x{i}" for i in range(d))
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in samples:
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def read_samples(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_rows(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format(v, ".17g") if isinstance(v, float) else v for k, v in row.items()})


def _outdir(args, default: str) -> Path:
    out = Path(args.output or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ---------------------------------------------------------------


def cmd_sample(cfg: dict, args) -> int:
    f = _Fields(cfg, "config")
    seed = f.get("seed", 0, cast=int)
    num_chains = f.get("num_chains", 1000, cast=int)
    budget = f.get("query_budget", None, cast=int)
    n_workers = f.get("n_workers", None, cast=int)
    f.get("target")
    method, block = _method_block(cfg)
    f.done(ignore=(method, "description"))
    target = _resolved_target(cfg, seed)
    run, per_chain = _plan(method, block, target.dim, "config")
    out = _outdir(args, "out")
    resolved = _merge(cfg, {"target": target.to_dict(), "seed": seed, "num_chains": num_chains})
    meta = {"method": method, "seed": seed, "num_chains": num_chains, "config": resolved}
    try:
        result = _execute(run, per_chain, target, num_chains, seed, budget, n_workers)
    except QueryBudgetExceeded as exc:
        meta.update(status="budget_exceeded", potential_queries=exc.queries,
                    gradient_queries=exc.gradient_queries, budget_total=exc.budget)
        (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
        log.error("%s", exc)
        return EXIT_BUDGET
    write_samples(out / "samples.csv", result.samples)
    meta.update(
        status="ok",
        potential_queries=result.potential_queries,
        gradient_queries=result.gradient_queries,
        queries_per_chain=result.total_queries // num_chains,
        wall_seconds=result.wall_seconds,
    )
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"{method}: {num_chains} chains, {result.potential_queries} potential + "
          f"{result.gradient_queries} gradient queries, {result.wall_seconds:.1f}s -> {out}")
    return EXIT_OK


def _sweep_point(task):
    R, method, block, seed, cfg = task
    target = make_target(_merge(cfg["target"], {"R": R}), seed)
    run, per_chain = _plan(method, block, target.dim, "config.methods")
    n = int(cfg.get("n_samples", 500))
    budget = cfg.get("query_budget")
    res = _execute(run, per_chain, target, n, seed, budget)
    ref = target.sample(int(cfg.get("reference_samples", n)), np.random.default_rng([seed, 2024]))
    w2 = wasserstein2(res.samples, ref)
    return {
        "R": float(R),
        "method": method,
        "seed": seed,
        "w2": w2.distance,
        "queries": res.total_queries // n,
        "potential_queries": res.potential_queries,
        "gradient_queries": res.gradient_queries,
        "wall_seconds": res.wall_seconds,
    }


def cmd_sweep_w2(cfg: dict, args) -> int:
    f = _Fields(cfg, "config")
    radii = f.get("radii", [2, 4, 6, 8, 10])
    if not radii:
        raise ConfigurationError("config.radii: must be non-empty")
    seeds = f.get("seeds", None)
    seed = f.get("seed", 0, cast=int)
    seeds = [seed] if seeds is None else [int(s) for s in seeds]
    methods = f.get("methods", required=True)
    f.get("target", {"preset": "three-mode-ring"})
    for key in ("n_samples", "reference_samples", "query_budget", "description"):
        f.get(key)
    f.done()
    cfg = dict(cfg)
    cfg.setdefault("target", {"preset": "three-mode-ring"})
    mf = _Fields(methods, "config.methods")
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(f"config.methods: unknown method {m!r}")
        _plan(m, mf.get(m), 2, "config.methods")
    tasks = [(float(R), m, methods[m], s, cfg) for R in radii for m in methods for s in seeds]
    out = _outdir(args, "out")
    try:
        if args.jobs and args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                rows = list(pool.map(_sweep_point, tasks))
        else:
            rows = []
            for task in tasks:
                rows.append(_sweep_point(task))
                r = rows[-1]
                print(f"R={r['R']:g} {r['method']:5s} seed={r['seed']} W2={r['w2']:.4f} ({r['wall_seconds']:.1f}s)")
    except QueryBudgetExceeded as exc:
        log.error("%s", exc)
        return EXIT_BUDGET
    write_rows(out / "results.csv", rows)
    return EXIT_OK


def cmd_check(cfg: dict, args) -> int:
    f = _Fields(cfg, "config")
    seed = f.get("seed", 0, cast=int)
    tol = f.get("tol", 1e-3, cast=float)
    num_points = f.get("num_points", 100, cast=int)
    n_samples = f.get("n_samples", 100_000, cast=int)
    f.get("target")
    f.get("description")
    f.done()
    target = _resolved_target(cfg, seed)
    reports = run_checks(target, seed, tol, num_points, n_samples)
    ok = all(r.passed for r in reports)
    for r in reports:
        print(f"{r.name:20s} {'PASS' if r.passed else 'FAIL'}  points={r.points_tested:<7d} worst={r.worst_violation:+.3e}")
    report = {"passed": ok, "target": target.to_dict(), "checks": [r.to_dict() for r in reports]}
    if args.output:
        (_outdir(args, ".") / "check.json").write_text(json.dumps(report, indent=2) + "\n")
    else:
        print(json.dumps(report, indent=2))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_score_mse(cfg: dict, args) -> int:
    f = _Fields(cfg, "config")
    seed = f.get("seed", 0, cast=int)
    t = f.get("t", 0.5, cast=float)
    ns = f.get("particles", [100, 1000, 10_000, 100_000])
    if not ns:
        raise ConfigurationError("config.particles: must be non-empty")
    estimators = f.get("estimators", ["self_normalized_dsi"])
    reps = f.get("replications", 200, cast=int)
    n_points = f.get("eval_points", 20, cast=int)
    f.get("target")
    f.get("description")
    f.done()
    target = _resolved_target(cfg, seed)
    points = target.noised(t).sample(n_points, np.random.default_rng([seed, 17]))
    rows = []
    for est in estimators:
        est = {"kind": est} if isinstance(est, str) else dict(est)
        for n in ns:
            spec = EstimatorSpec.from_dict({**est, "particles": int(n)})
            mse, se = score_mse(spec, target, t, points, reps, seed, return_stderr=True)
            rows.append({"n": int(n), "estimator": spec.kind, "t": t, "mse": mse, "stderr": se})
            print(f"{spec.kind:20s} n={n:<8d} mse={mse:.4e} +- {se:.1e}")
    write_rows(_outdir(args, "out") / "mse.csv", rows)
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "sweep-w2": cmd_sweep_w2, "check": cmd_check, "score-mse": cmd_score_mse}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="revdiff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", help="shipped preset name (see --list-presets)")
        p.add_argument("--output", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "sweep-w2":
            p.add_argument("--jobs", type=int, default=1, help="sweep points run in parallel processes")
    sub.add_parser("presets", help="list shipped presets")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK
    start = time.perf_counter()
    try:
        cfg = read_config(args)
        code = COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QueryBudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
