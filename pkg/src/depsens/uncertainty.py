"""Confidence intervals for Shapley runs and the coverage-probability harness.

* :func:`bc_percentile` -- bias-corrected percentile bootstrap interval;
* :func:`bootstrap_exact` -- resample ``y1`` and, independently per
  ``(permutation, prefix)`` slice, the ``n_o`` outer blocks (inner tuples
  are kept intact);
* :func:`bootstrap_random` -- resample ``y1`` and the permutations;
* :func:`clt_interval` -- normal interval from the spread of the
  per-permutation increments;
* :func:`poc_experiment` -- repeated runs against known indices.

None of these re-evaluate the model.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .shapley import ShapleyConfig, ShapleyResult, reduce_costs, seed_sequence, shapley_effects

__all__ = [
    "IntervalEstimate",
    "CoverageReport",
    "bc_percentile",
    "bootstrap_exact",
    "bootstrap_random",
    "clt_interval",
    "exact_replicates",
    "random_replicates",
    "poc_experiment",
    "write_poc_csv",
]

log = logging.getLogger(__name__)

KINDS = ("sh", "s_full", "st_ind")


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lo: float
    hi: float
    level: float
    method: str
    n_boot: int = 0

    def covers(self, value: float) -> bool:
        return bool(self.lo <= value <= self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


def bc_percentile(boot, point: float, alpha: float = 0.1):
    """Bias-corrected percentile interval of level ``1 - alpha``.

    The bootstrap CDF at the point estimate uses mid-ranks and is clamped to
    ``[1/(B+1), B/(B+1)]`` so the bias correction stays finite. Non-finite
    replicates are dropped.
    """
    boot = np.asarray(boot, dtype=float)
    boot = boot[np.isfinite(boot)]
    n = boot.size
    if n == 0:
        return float("nan"), float("nan")
    if np.all(boot == boot[0]):
        return float(point), float(point)
    g = (np.count_nonzero(boot < point) + 0.5 * np.count_nonzero(boot == point)) / n
    g = min(max(g, 1.0 / (n + 1)), n / (n + 1.0))
    if g == 0.5:
        probs = [alpha / 2.0, 1.0 - alpha / 2.0]  # no correction; skip the ndtr round trip
    else:
        z0 = ndtri(g)
        z = ndtri(alpha / 2.0)
        probs = [ndtr(2 * z0 + z), ndtr(2 * z0 - z)]
    lo, hi = np.quantile(boot, probs)
    return float(lo), float(hi)


def _boot_variances(y1, n_boot, rng, chunk_rows=2_000_000):
    n = y1.size
    per = max(1, chunk_rows // n)
    out = np.empty(n_boot)
    for s in range(0, n_boot, per):
        k = min(per, n_boot - s)
        out[s : s + k] = y1[rng.integers(0, n, size=(k, n))].var(axis=1, ddof=1)
    return out


def exact_replicates(y1, inner_var, perms, n_boot: int, seed=None, include_original=False):
    """Block-bootstrap replicates, shape ``(n_boot, 3, d)`` for (sh, s_full, st_ind).

    The resampling indices depend only on ``seed`` and the array shapes, so
    the same seed yields the same resamples for different outputs. With
    ``include_original`` the first replicate is the unresampled estimate.
    """
    rng = np.random.default_rng(seed_sequence(seed))
    m, d1, n_o = inner_var.shape
    d = d1 + 1
    n_new = n_boot - 1 if include_original else n_boot
    variances = _boot_variances(np.asarray(y1), n_new, rng)
    out = np.empty((n_boot, 3, d))
    start = 0
    if include_original:
        costs = inner_var.mean(axis=-1) / np.var(y1, ddof=1)
        out[0] = np.stack(reduce_costs(costs, perms)[:3])
        start = 1
    per = max(1, 4_000_000 // (m * d1 * n_o))
    for s in range(0, n_new, per):
        k = min(per, n_new - s)
        idx = rng.integers(0, n_o, size=(k, m, d1, n_o))
        means = np.take_along_axis(np.broadcast_to(inner_var, idx.shape), idx, axis=-1).mean(axis=-1)
        costs = means / variances[s : s + k, None, None]
        sh, s_full, st_ind, _ = reduce_costs(costs, perms)
        out[start + s : start + s + k] = np.stack([sh, s_full, st_ind], axis=1)
    return out


def random_replicates(y1, inner_var, perms, n_boot: int, seed=None, include_original=False):
    """Permutation-bootstrap replicates, shape ``(n_boot, 3, d)``."""
    rng = np.random.default_rng(seed_sequence(seed))
    m, d1, _ = inner_var.shape
    d = d1 + 1
    n_new = n_boot - 1 if include_original else n_boot
    variances = _boot_variances(np.asarray(y1), n_new, rng)
    slice_means = inner_var.mean(axis=-1)
    out = np.empty((n_boot, 3, d))
    start = 0
    if include_original:
        out[0] = np.stack(reduce_costs(slice_means / np.var(y1, ddof=1), perms)[:3])
        start = 1
    per = max(1, 2_000_000 // (m * d))
    for s in range(0, n_new, per):
        k = min(per, n_new - s)
        idx = rng.integers(0, m, size=(k, m))
        costs = slice_means[idx] / variances[s : s + k, None, None]
        sh, s_full, st_ind, _ = reduce_costs(costs, perms[idx])
        out[start + s : start + s + k] = np.stack([sh, s_full, st_ind], axis=1)
    return out


def _intervals(result, reps, alpha, method, n_boot):
    points = {"sh": result.sh, "s_full": result.s_full, "st_ind": result.st_ind}
    out = {}
    for j, kind in enumerate(KINDS):
        ests = []
        for i in range(result.dim):
            lo, hi = bc_percentile(reps[:, j, i], points[kind][i], alpha)
            if np.isfinite(lo) and not lo <= points[kind][i] <= hi:
                log.debug("%s[%d]: point %.4g outside [%.4g, %.4g]", kind, i, points[kind][i], lo, hi)
            ests.append(IntervalEstimate(float(points[kind][i]), lo, hi, 1.0 - alpha, method, n_boot))
        out[kind] = ests
    return out


def _require_blocks(result):
    if result.blocks is None:
        raise ValueError("result does not retain its evaluation blocks")


def bootstrap_exact(result: ShapleyResult, n_boot: int = 500, alpha: float = 0.1, seed=None) -> dict:
    """Block-bootstrap intervals for a run of the exact method.

    Returns ``{"sh": [...], "s_full": [...], "st_ind": [...]}``, one
    :class:`IntervalEstimate` per input.
    """
    _require_blocks(result)
    b = result.blocks
    reps = exact_replicates(b.y1, b.inner_var, b.perms, n_boot, seed)
    return _intervals(result, reps, alpha, "boot-bca-block", n_boot)


def bootstrap_random(result: ShapleyResult, n_boot: int = 500, alpha: float = 0.1, seed=None) -> dict:
    """Intervals from resampling the permutations of a random-method run."""
    _require_blocks(result)
    b = result.blocks
    reps = random_replicates(b.y1, b.inner_var, b.perms, n_boot, seed)
    return _intervals(result, reps, alpha, "boot-bca-perm", n_boot)


def clt_interval(result: ShapleyResult, alpha: float = 0.1) -> dict:
    """Symmetric normal intervals ``point -/+ z sigma / sqrt(count)``.

    For Shapley effects ``count = m``; for the extracted indices it is the
    number of permutations that place the input first (or last).
    """
    inc = result.increments
    m, d = inc.shape
    if m < 30:
        warnings.warn(f"CLT interval with only m = {m} permutations", RuntimeWarning, stacklevel=2)
    z = -ndtri(alpha / 2.0)
    perms = result.blocks.perms
    out = {"sh": [], "s_full": [], "st_ind": []}
    for i in range(d):
        sel = {"sh": np.ones(m, bool), "st_ind": perms[:, 0] == i, "s_full": perms[:, -1] == i}
        points = {"sh": result.sh[i], "s_full": result.s_full[i], "st_ind": result.st_ind[i]}
        for kind in KINDS:
            vals = inc[sel[kind], i]
            n = vals.size
            sd = vals.std(ddof=1) if n > 1 else float("nan")
            half = z * sd / np.sqrt(n) if n > 0 else float("nan")
            p = float(points[kind])
            out[kind].append(IntervalEstimate(p, p - half, p + half, 1.0 - alpha, "clt", 0))
    return out


@dataclass
class CoverageReport:
    """Coverage of one grid point: per index family, per input."""

    config: ShapleyConfig
    runs: int
    poc: dict
    mean_abs_error: dict
    budget: int
    width: dict = field(default_factory=dict)
    rows: list = field(default_factory=list, repr=False)

    def poc_mean(self, kind: str = "sh") -> float:
        return float(np.mean(self.poc[kind]))


def _one_run(model, dist, config, truth, n_boot, alpha, interval, ss):
    run_ss, boot_ss = ss.spawn(2)
    res = shapley_effects(model, dist, config, run_ss)
    if interval == "clt":
        ints = clt_interval(res, alpha)
    elif config.method == "exact":
        ints = bootstrap_exact(res, n_boot, alpha, boot_ss)
    else:
        ints = bootstrap_random(res, n_boot, alpha, boot_ss)
    return ints


def poc_experiment(
    model,
    dist,
    truth,
    grid,
    runs: int = 100,
    n_boot: int = 500,
    alpha: float = 0.1,
    seed=0,
    interval: str = "bootstrap",
    threads: int = 1,
):
    """Probability of coverage and mean absolute error over independent runs.

    ``grid`` is a sequence of :class:`ShapleyConfig`; ``truth`` any object
    with ``sh``, ``s_full`` and ``st_ind`` arrays. Every run gets its own
    child seed, so results do not depend on ``threads``.
    """
    master = seed_sequence(seed)
    grid_seeds = master.spawn(len(grid))
    reports = []
    for g, (config, gss) in enumerate(zip(grid, grid_seeds)):
        run_seeds = gss.spawn(runs)
        t0 = time.perf_counter()

        def job(ss):
            return _one_run(model, dist, config, truth, n_boot, alpha, interval, ss)

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                all_ints = list(pool.map(job, run_seeds))
        else:
            all_ints = [job(ss) for ss in run_seeds]

        d = dist.dim
        budget = config.n_o * config.n_i * config.n_perms(d)
        poc, mae, width, rows = {}, {}, {}, []
        for kind in KINDS:
            target = np.asarray(getattr(truth, kind), dtype=float)
            cover = np.zeros((runs, d), bool)
            err = np.zeros((runs, d))
            wid = np.zeros((runs, d))
            for r, ints in enumerate(all_ints):
                for i, est in enumerate(ints[kind]):
                    cover[r, i] = est.covers(target[i])
                    err[r, i] = abs(est.point - target[i])
                    wid[r, i] = est.width
                    rows.append(
                        {
                            "grid": g,
                            "method": config.method,
                            "n_o": config.n_o,
                            "n_i": config.n_i,
                            "m": config.n_perms(d),
                            "budget": budget,
                            "run": r,
                            "index": kind,
                            "input": i,
                            "point": est.point,
                            "lo": est.lo,
                            "hi": est.hi,
                            "truth": target[i],
                            "covered": int(cover[r, i]),
                            "abs_error": err[r, i],
                        }
                    )
            poc[kind] = cover.mean(axis=0)
            mae[kind] = err.mean(axis=0)
            width[kind] = np.nanmean(wid, axis=0)
        log.info("grid %d (%s, n_o=%d, n_i=%d): %.1fs", g, config.method, config.n_o, config.n_i, time.perf_counter() - t0)
        reports.append(CoverageReport(config, runs, poc, mae, budget, width, rows))
    return reports


POC_SUMMARY_FIELDS = ["budget", "method", "No", "Ni", "m", "index", "input", "poc", "mean_abs_error"]
POC_RUN_FIELDS = [
    "grid", "method", "n_o", "n_i", "m", "budget", "run", "index", "input",
    "point", "lo", "hi", "truth", "covered", "abs_error",
]


def write_poc_csv(reports, summary_path, runs_path=None):
    """Summary table (one row per grid point x index x input) and optional long-format runs."""
    with open(summary_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=POC_SUMMARY_FIELDS)
        w.writeheader()
        for rep in reports:
            d = len(rep.poc["sh"])
            for kind in KINDS:
                for i in range(d):
                    w.writerow(
                        {
                            "budget": rep.budget,
                            "method": rep.config.method,
                            "No": rep.config.n_o,
                            "Ni": rep.config.n_i,
                            "m": rep.config.n_perms(d),
                            "index": kind,
                            "input": i,
                            "poc": f"{rep.poc[kind][i]:.6g}",
                            "mean_abs_error": f"{rep.mean_abs_error[kind][i]:.6g}",
                        }
                    )
    if runs_path is not None:
        with open(runs_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=POC_RUN_FIELDS)
            w.writeheader()
            for rep in reports:
                for row in rep.rows:
                    w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
