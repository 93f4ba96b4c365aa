"""Command-line experiment runner.

Usage::

    depsens shapley recipes/linear_strong.yaml --seed 0
    depsens validate recipes/linear_strong.yaml

Exit codes: 0 on success, 2 on a configuration error, 3 on a numerical
failure. Every run writes ``manifest.json`` to the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError
from scipy import linalg

from . import __version__
from . import kriging as kr
from .config import ConfigError, apply_overrides, build_problem, load_config
from .errors import BudgetError, DegenerateOutputError, ModelEvaluationError
from .input_model import sample
from .shapley import ShapleyConfig, seed_sequence, shapley_effects
from .sobol_rt import estimate_sobol_rt
from .uncertainty import bootstrap_exact, bootstrap_random, poc_experiment, write_poc_csv

log = logging.getLogger("depsens")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
INDEX_FIELDS = ["input", "index", "point", "lo", "hi", "method"]
DECOMP_FIELDS = ["input", "index", "metamodel", "mc", "total", "residual"]

SUBCOMMAND_METHODS = {
    "shapley": ("shapley-exact", "shapley-random"),
    "sobol-rt": ("sobol-rt",),
    "poc": ("poc",),
    "fit-gp": ("fit-gp",),
    "shapley-gp": ("shapley-gp",),
}


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})


def _interval_rows(families: dict, method_default: str) -> list:
    rows = []
    for kind, ests in families.items():
        for i, est in enumerate(ests):
            rows.append({"input": i, "index": kind, "point": est.point, "lo": est.lo, "hi": est.hi, "method": est.method or method_default})
    return rows


def _shapley_config(config, method: str, n_v=None, n_o=None, n_i=None, m=None) -> ShapleyConfig:
    b = config.budget
    return ShapleyConfig(
        method=method,
        n_v=n_v or b.n_v,
        n_o=n_o or b.n_o,
        n_i=n_i or b.n_i,
        m=m if m is not None else b.m,
        max_exact_dim=b.max_exact_dim,
        max_evaluations=b.max_evaluations,
    )


# -- diagnostics -----------------------------------------------------------------


def diagnose(config, base) -> list:
    """Problems that would stop a run, without running anything."""
    issues = []
    try:
        problem = build_problem(config, base)
    except (ConfigError, ValueError) as exc:
        msg = str(exc)
        if "positive definite" in msg:
            msg = f"input model: {msg}"
        return [msg]
    dist = problem.dist
    method = config.method
    if dist is None and method != "fit-gp":
        issues.append("a distribution block is required for this model and method")
        return issues
    d = dist.dim if dist is not None else problem.table.shape[1] - 1
    if problem.table is not None and method not in ("fit-gp", "shapley-gp"):
        issues.append("a tabulated model can only feed fit-gp or shapley-gp")
    if problem.table is not None and method == "shapley-gp" and not config.gp.model_file:
        issues.append("shapley-gp on a tabulated model needs gp.model_file")

    shap_method = None
    if method in ("shapley-exact", "shapley-random"):
        shap_method = method.split("-")[1]
    elif method == "shapley-gp":
        shap_method = config.gp.shapley_method
    elif method == "poc":
        shap_method = config.poc.shapley_method
    if shap_method == "exact" and d > config.budget.max_exact_dim:
        issues.append(
            f"exact permutations need d <= {config.budget.max_exact_dim} but d = {d} (d! = {math.factorial(d)})"
        )
    if shap_method is not None and not issues:
        grid = [None]
        if method == "poc":
            grid = config.poc.grid
        for g in grid:
            try:
                kw = {} if g is None else dict(n_o=g.n_o, n_i=g.n_i, m=g.m, n_v=g.n_v)
                sc = _shapley_config(config, shap_method, **kw)
            except ValueError as exc:
                issues.append(f"budget: {exc}")
                continue
            cost = sc.cost(d)
            if config.budget.max_evaluations is not None and cost > config.budget.max_evaluations:
                issues.append(f"run needs {cost} evaluations, budget cap is {config.budget.max_evaluations}")
            if method == "shapley-gp" and config.gp.sampler == "exact" and cost > config.gp.max_points:
                issues.append(
                    f"kriging realizations over {cost} points exceed the cap of {config.gp.max_points}; "
                    "reduce n_v/n_o or set gp.sampler: pivoted"
                )
    if method == "poc" and problem.truth is None:
        issues.append("poc needs analytic reference indices (Gaussian benchmarks or independent ishigami)")
    if method == "sobol-rt" and config.budget.N < 2:
        issues.append("budget.N must be >= 2")
    return issues


# -- subcommand bodies -------------------------------------------------------------


def _run_shapley(config, problem, seed, out):
    method = config.method.split("-")[1]
    sc = _shapley_config(config, method)
    run_ss, boot_ss = seed_sequence(seed).spawn(2)
    res = shapley_effects(problem.model, problem.dist, sc, run_ss)
    b = config.budget
    if b.n_boot > 0:
        boot = bootstrap_exact if method == "exact" else bootstrap_random
        families = boot(res, b.n_boot, b.alpha, boot_ss)
        rows = _interval_rows(families, "bootstrap")
    else:
        rows = []
        for kind in ("sh", "s_full", "st_ind"):
            for i, v in enumerate(getattr(res, kind)):
                rows.append({"input": i, "index": kind, "point": float(v), "lo": None, "hi": None, "method": "point"})
    _write_csv(out / "indices.csv", INDEX_FIELDS, rows)
    return {"evaluations": res.cost, "output_variance": res.variance, "indices": rows}


def _run_sobol(config, problem, seed, out):
    b = config.budget
    est = estimate_sobol_rt(
        problem.model, problem.dist, b.N, config.sobol.estimator, b.n_boot, b.alpha, np.random.default_rng(seed_sequence(seed))
    )
    families = {k: getattr(est, k) for k in ("s_full", "st_full", "s_ind", "st_ind")}
    rows = _interval_rows(families, "bootstrap")
    _write_csv(out / "indices.csv", INDEX_FIELDS, rows)
    return {"evaluations": est.cost, "indices": rows}


def _run_poc(config, problem, seed, out):
    pb = config.poc
    grid = [_shapley_config(config, pb.shapley_method, n_v=g.n_v, n_o=g.n_o, n_i=g.n_i, m=g.m) for g in pb.grid]
    reports = poc_experiment(
        problem.model,
        problem.dist,
        problem.truth,
        grid,
        runs=pb.runs,
        n_boot=config.budget.n_boot,
        alpha=config.budget.alpha,
        seed=seed_sequence(seed),
        interval=pb.interval,
        threads=config.threads,
    )
    write_poc_csv(reports, out / "poc.csv", out / "poc_runs.csv" if pb.write_runs else None)
    d = problem.dist.dim
    evaluations = sum(pb.runs * g.cost(d) for g in grid)
    summary = [
        {"budget": r.budget, "No": r.config.n_o, "Ni": r.config.n_i, "m": r.config.n_perms(d),
         "poc": {k: v.tolist() for k, v in r.poc.items()}}
        for r in reports
    ]
    return {"evaluations": evaluations, "poc": summary}


def _design(config, problem, rng):
    """Training design: optimized LHS at independence mapped through the margins."""
    dist = problem.dist
    u = kr.lhs_design(config.gp.n_design, dist.dim, rng, optimize=config.gp.optimize_design)
    x = dist.marginal_ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return x, problem.model(x)


def _fit(config, problem, seed):
    ss = seed_sequence(seed)
    design_ss, fit_ss, test_ss = ss.spawn(3)
    if problem.table is not None:
        x, y = problem.table[:, :-1], problem.table[:, -1]
    else:
        x, y = _design(config, problem, np.random.default_rng(design_ss))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        gp = kr.fit_gp(x, y, nugget=config.gp.nugget, trend=config.gp.trend, n_starts=config.gp.n_starts, seed=fit_ss)
    for w in caught:
        log.warning("%s", w.message)
    info = {"n_design": int(x.shape[0]), "theta": gp.theta.tolist(), "sigma2": gp.sigma2, "nugget": gp.nugget,
            "trend": gp.trend, "evaluations": 0 if problem.table is not None else int(x.shape[0])}
    if problem.table is None and config.gp.n_test > 0:
        xt = sample(problem.dist, config.gp.n_test, np.random.default_rng(test_ss))
        info["q2"] = kr.q2_score(gp, xt, problem.model(xt))
        info["evaluations"] += config.gp.n_test
    return gp, info


def _run_fit_gp(config, problem, seed, out):
    gp, info = _fit(config, problem, seed)
    kr.save_gp(gp, out / "gp_model.json")
    return info


def _run_shapley_gp(config, problem, seed, out, base):
    fit_ss, run_ss = seed_sequence(seed).spawn(2)
    if config.gp.model_file:
        path = Path(config.gp.model_file)
        gp = kr.load_gp(path if path.is_absolute() else base / path)
        info = {"model_file": str(path), "evaluations": 0}
    else:
        gp, info = _fit(config, problem, fit_ss)
    kr.save_gp(gp, out / "gp_model.json")
    sc = _shapley_config(config, config.gp.shapley_method)
    b = config.budget
    dist_out = kr.shapley_gp(
        gp, problem.dist, sc, n_h=b.n_h, n_boot=b.n_boot, seed=run_ss, sampler=config.gp.sampler,
        max_points=config.gp.max_points, tol=config.gp.pivot_tol, max_rank=config.gp.max_rank,
    )
    rows, drows = [], []
    q = (b.alpha / 2.0, 1.0 - b.alpha / 2.0)
    for kind, s in dist_out.samples.items():
        flat = s.reshape(-1, s.shape[-1])
        lo, hi = np.quantile(flat, q, axis=0)
        dec = dist_out.decomposition[kind]
        for i in range(flat.shape[1]):
            rows.append({"input": i, "index": kind, "point": float(flat[:, i].mean()), "lo": float(lo[i]),
                         "hi": float(hi[i]), "method": "gp-realizations"})
            drows.append({"input": i, "index": kind, **{k: float(dec[k][i]) for k in ("metamodel", "mc", "total", "residual")}})
    _write_csv(out / "indices.csv", INDEX_FIELDS, rows)
    _write_csv(out / "variance_decomposition.csv", DECOMP_FIELDS, drows)
    info.update({"points": dist_out.n_points, "indices": rows, "decomposition": drows})
    return info


# -- entry point -------------------------------------------------------------------


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depsens", description="Sensitivity analysis with dependent inputs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(SUBCOMMAND_METHODS) + ["validate"]:
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. budget.n_o=100")
        p.add_argument("--output", help="output directory (overrides 'output')")
        p.add_argument("--threads", type=int, help="cap on worker threads")
        if name != "validate":
            p.add_argument("--seed", type=int, required=True, help="64-bit root seed")
            p.add_argument("--method", help="override 'method' (shapley: shapley-exact or shapley-random)")
            p.add_argument("--n-v", type=int, dest="n_v")
            p.add_argument("--n-o", type=int, dest="n_o")
            p.add_argument("--n-i", type=int, dest="n_i")
            p.add_argument("--m", type=int)
            p.add_argument("--n-boot", type=int, dest="n_boot")
            p.add_argument("--n-h", type=int, dest="n_h")
    return parser


def _overrides(args) -> dict:
    ov = _parse_set(args.set)
    if args.output:
        ov["output"] = args.output
    if args.threads:
        ov["threads"] = args.threads
    if args.command == "validate":
        return ov
    ov["seed"] = args.seed
    if args.method:
        ov["method"] = args.method
    elif args.command != "shapley":
        ov["method"] = SUBCOMMAND_METHODS[args.command][0]
    for key in ("n_v", "n_o", "n_i", "m", "n_boot", "n_h"):
        if getattr(args, key) is not None:
            ov[f"budget.{key}"] = getattr(args, key)
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config, base = load_config(args.config)
        config = apply_overrides(config, _overrides(args))
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    issues = diagnose(config, base)
    if args.command == "validate":
        if issues:
            for msg in issues:
                print(f"error: {msg}")
            return EXIT_CONFIG
        print("ok")
        return EXIT_OK
    if config.method not in SUBCOMMAND_METHODS[args.command]:
        print(f"config error: subcommand {args.command!r} cannot run method {config.method!r}", file=sys.stderr)
        return EXIT_CONFIG
    if issues:
        for msg in issues:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG

    problem = build_problem(config, base)
    out = Path(config.output)
    if not out.is_absolute():
        out = Path.cwd() / out
    out.mkdir(parents=True, exist_ok=True)
    seed = config.seed
    t0 = time.perf_counter()
    try:
        if args.command == "shapley":
            result = _run_shapley(config, problem, seed, out)
        elif args.command == "sobol-rt":
            result = _run_sobol(config, problem, seed, out)
        elif args.command == "poc":
            result = _run_poc(config, problem, seed, out)
        elif args.command == "fit-gp":
            result = _run_fit_gp(config, problem, seed, out)
        else:
            result = _run_shapley_gp(config, problem, seed, out, base)
    except (DegenerateOutputError, ModelEvaluationError, BudgetError, linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure in {type(exc).__module__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    manifest = {
        "command": args.command,
        "config": config.model_dump(mode="json"),
        "seed": seed,
        "evaluations": result.pop("evaluations", None),
        "wall_clock_s": round(time.perf_counter() - t0, 3),
        "results": result,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, default=float)
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
