"""Full and independent Sobol' indices through Rosenblatt transforms.

For the circular ordering starting at input ``i`` the transformed vector
``U`` has independent uniform components; ``U_1`` carries ``X_i`` with all
its dependence and ``U_d`` carries ``X_{i-1}`` stripped of it. A
pick-and-freeze design on ``U`` then gives, from ``4N`` model runs,

* ``S_i^full`` and ``ST_i^full`` (hybrid matrix sharing column 1 with ``A``),
* ``S_{i-1}^ind`` and ``ST_{i-1}^ind`` (hybrid sharing column ``d``).

Two estimators are available. ``janon``: for a pair ``(y, y')`` sharing the
frozen columns, ``m = mean((y + y')/2)``, ``V = mean((y^2 + y'^2)/2) - m^2``
and ``S = (mean(y y') - m^2) / V``; the closed index uses ``(yA, yH)`` and the
total index is ``1 - S(yB, yH)``. ``centered`` (labelled *Mara variant*):
outputs are centred by the pooled mean of ``yA`` and ``yB``, ``V`` is their
pooled variance, the closed index is ``mean(yA (yH - yB)) / V`` and the total
index ``mean((yB - yH)^2) / (2V)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateOutputError, evaluate
from .input_model import InputDistribution, as_generator, circular_ordering, inverse_rosenblatt
from .uncertainty import IntervalEstimate, bc_percentile

__all__ = [
    "PickFreezeDesign",
    "SobolEstimate",
    "pick_freeze_design",
    "janon_estimator",
    "centered_estimator",
    "estimate_sobol_rt",
    "ESTIMATORS",
]


@dataclass
class PickFreezeDesign:
    A: np.ndarray
    B: np.ndarray
    BA1: np.ndarray
    BAd: np.ndarray
    ordering: tuple
    N: int


@dataclass
class SobolEstimate:
    s_full: list
    st_full: list
    s_ind: list
    st_ind: list
    estimator: str
    N: int
    cost: int

    def points(self, kind: str) -> np.ndarray:
        return np.array([e.point for e in getattr(self, kind)])


def pick_freeze_design(N: int, d: int, i: int = 0, rng=None) -> PickFreezeDesign:
    """Uniform pick-and-freeze matrices for the ordering that starts at ``i``."""
    if N < 2:
        raise ValueError("N must be >= 2")
    rng = as_generator(rng)
    # rng.random() can return exactly 0, which has no normal quantile
    A = 1.0 - rng.random((N, d))
    B = 1.0 - rng.random((N, d))
    BA1 = B.copy()
    BA1[:, 0] = A[:, 0]
    BAd = B.copy()
    BAd[:, -1] = A[:, -1]
    return PickFreezeDesign(A, B, BA1, BAd, circular_ordering(i, d), N)


def _check_variance(v):
    if not np.all(np.asarray(v) > 0):
        raise DegenerateOutputError("estimated output variance is not positive")


def janon_estimator(yA, yB, yH):
    """Return ``(closed, total)`` with the Janon pooled-moment estimator.

    Broadcasts over leading axes, so bootstrap replicates can be stacked.
    """
    yA, yB, yH = (np.asarray(y, dtype=float) for y in (yA, yB, yH))

    def pair(y, yp):
        m = np.mean((y + yp) / 2.0, axis=-1)
        v = np.mean((y**2 + yp**2) / 2.0, axis=-1) - m**2
        _check_variance(v)
        return (np.mean(y * yp, axis=-1) - m**2) / v

    return pair(yA, yH), 1.0 - pair(yB, yH)


def centered_estimator(yA, yB, yH):
    """Return ``(closed, total)`` with the centred (Mara variant) estimator."""
    yA, yB, yH = (np.asarray(y, dtype=float) for y in (yA, yB, yH))
    mean = 0.5 * (yA.mean(axis=-1) + yB.mean(axis=-1))[..., None]
    a, b, h = yA - mean, yB - mean, yH - mean
    v = 0.5 * (np.mean(a**2, axis=-1) + np.mean(b**2, axis=-1))
    _check_variance(v)
    closed = np.mean(a * (h - b), axis=-1) / v
    total = np.mean((b - h) ** 2, axis=-1) / (2.0 * v)
    return closed, total


ESTIMATORS = {"janon": janon_estimator, "centered": centered_estimator, "mara": centered_estimator}


def _bootstrap(est, yA, yB, y1, yd, n_boot, rng, chunk_rows=2_000_000):
    N = yA.size
    out = np.empty((4, n_boot))
    per = max(1, chunk_rows // N)
    for s in range(0, n_boot, per):
        k = min(per, n_boot - s)
        idx = rng.integers(0, N, size=(k, N))
        a, b = yA[idx], yB[idx]
        out[0, s : s + k], out[1, s : s + k] = est(a, b, y1[idx])
        out[2, s : s + k], out[3, s : s + k] = est(a, b, yd[idx])
    return out


def estimate_sobol_rt(
    model,
    dist: InputDistribution,
    N: int,
    estimator: str = "janon",
    n_boot: int = 500,
    alpha: float = 0.1,
    rng=None,
) -> SobolEstimate:
    """Full/independent first-order and total indices of every input.

    Uses ``4 d N`` model evaluations. Intervals come from resampling the rows
    of ``(yA, yB, yBA1, yBAd)`` jointly and the bias-corrected percentile
    method; ``n_boot = 0`` gives degenerate intervals at the point estimate.
    """
    est = ESTIMATORS[estimator]
    rng = as_generator(rng)
    d = dist.dim
    streams = rng.spawn(d + 1)
    boot_rng = streams[-1]
    slots = {k: [None] * d for k in ("s_full", "st_full", "s_ind", "st_ind")}
    cost = 0
    for i in range(d):
        design = pick_freeze_design(N, d, i, streams[i])
        order = design.ordering
        mats = np.concatenate([design.A, design.B, design.BA1, design.BAd])
        y = evaluate(model, inverse_rosenblatt(dist, mats, order))
        cost += y.size
        yA, yB, y1, yd = y.reshape(4, N)
        prev = order[-1]

        s, st = est(yA, yB, y1)
        si, sti = est(yA, yB, yd)
        if n_boot > 0:
            bs, bst, bsi, bsti = _bootstrap(est, yA, yB, y1, yd, n_boot, boot_rng)
        else:
            bs = bst = bsi = bsti = None

        for kind, target, point, boot in (
            ("s_full", i, s, bs),
            ("st_full", i, st, bst),
            ("s_ind", prev, si, bsi),
            ("st_ind", prev, sti, bsti),
        ):
            point = float(point)
            lo, hi = (point, point) if boot is None else bc_percentile(boot, point, alpha)
            slots[kind][target] = IntervalEstimate(point, lo, hi, 1.0 - alpha, "boot-bca-rows", n_boot)
    return SobolEstimate(estimator=estimator, N=N, cost=cost, **slots)
