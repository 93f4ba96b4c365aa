"""Run configuration schema for the command-line runner.

A config is a YAML mapping::

    model:
      kind: linear-gaussian          # interactive-gaussian | ishigami | tabulated
      params: {sigma: [1, 1, 2], gamma: 0.5}
    distribution:                    # optional for the Gaussian benchmarks
      margins: [{kind: uniform, lower: -3.14, upper: 3.14}, ...]
      correlation: [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    method: shapley-exact            # shapley-random | sobol-rt | poc | fit-gp | shapley-gp
    budget: {n_v: 10000, n_o: 1000, n_i: 3, n_boot: 500, alpha: 0.1}
    output: results/linear

Unknown keys are rejected at every level.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import benchmarks as bm
from .input_model import InputDistribution

__all__ = ["RunConfig", "ConfigError", "load_config", "apply_overrides", "build_problem", "Problem"]

METHODS = ("shapley-exact", "shapley-random", "sobol-rt", "poc", "fit-gp", "shapley-gp")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Strict):
    kind: Literal["linear-gaussian", "interactive-gaussian", "ishigami", "tabulated"]
    params: dict = Field(default_factory=dict)
    data: Optional[str] = None  # tabulated: CSV with one column per input and the output last


class DistributionBlock(_Strict):
    margins: list[dict]
    correlation: Optional[list[list[float]]] = None


class BudgetBlock(_Strict):
    n_v: int = 10_000
    n_o: int = 1_000
    n_i: int = 3
    m: Optional[int] = None
    N: int = 10_000
    n_boot: int = 500
    alpha: float = Field(0.1, gt=0, lt=1)
    n_h: int = 300
    max_evaluations: Optional[int] = None
    max_exact_dim: int = 8


class GridPoint(_Strict):
    n_o: int
    n_i: int
    m: Optional[int] = None
    n_v: Optional[int] = None


class PocBlock(_Strict):
    runs: int = 100
    shapley_method: Literal["exact", "random"] = "exact"
    interval: Literal["bootstrap", "clt"] = "bootstrap"
    grid: list[GridPoint]
    write_runs: bool = True


class SobolBlock(_Strict):
    estimator: Literal["janon", "centered", "mara"] = "janon"


class GPBlock(_Strict):
    n_design: int = 200
    optimize_design: bool = True
    trend: Literal["linear", "constant"] = "linear"
    nugget: float = 1e-8
    n_starts: int = 10
    model_file: Optional[str] = None
    shapley_method: Literal["exact", "random"] = "exact"
    sampler: Literal["exact", "pivoted"] = "exact"
    max_points: int = 6000
    pivot_tol: float = 1e-6
    max_rank: int = 6000
    n_test: int = 10_000


class RunConfig(_Strict):
    model: ModelBlock
    distribution: Optional[DistributionBlock] = None
    method: Literal[METHODS]
    budget: BudgetBlock = Field(default_factory=BudgetBlock)
    poc: Optional[PocBlock] = None
    sobol: SobolBlock = Field(default_factory=SobolBlock)
    gp: GPBlock = Field(default_factory=GPBlock)
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    output: str = "results"
    threads: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.method == "poc" and self.poc is None:
            raise ValueError("method 'poc' needs a 'poc' block")
        if self.model.kind == "tabulated" and not self.model.data:
            raise ValueError("a tabulated model needs 'data'")
        return self


def load_config(path) -> tuple[RunConfig, Path]:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.model_validate(raw), path.parent


def apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """Return a validated copy with dotted keys (``budget.n_o``) replaced."""
    data = config.model_dump()
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {} if node.get(p) is None else node[p]
            node = node[p]
        node[parts[-1]] = value
    return RunConfig.model_validate(data)


class Problem:
    """Model callable, input distribution and reference indices built from a config."""

    def __init__(self, model, dist, truth=None, params=None, table=None):
        self.model = model
        self.dist = dist
        self.truth = truth
        self.params = params
        self.table = table


def _distribution(block: DistributionBlock) -> InputDistribution:
    try:
        return InputDistribution.from_dict(block.model_dump())
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"distribution: {exc}") from exc


def build_problem(config: RunConfig, base: Path = Path(".")) -> Problem:
    """Turn the model and distribution blocks into numerical objects.

    Raises :class:`ConfigError` (or ``ValueError`` from the constructors,
    e.g. a correlation matrix that is not positive definite).
    """
    kind, params = config.model.kind, dict(config.model.params)
    explicit = _distribution(config.distribution) if config.distribution else None
    try:
        if kind == "linear-gaussian":
            p = bm.LinearGaussianParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in params.items()})
            dist = explicit or p.distribution()
            truth = bm.analytic_indices_linear(p) if explicit is None else None
            return Problem(p.model(), dist, truth, p)
        if kind == "interactive-gaussian":
            p = bm.InteractiveParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in params.items()})
            dist = explicit or p.distribution()
            truth = bm.analytic_indices_interactive(p) if explicit is None else None
            return Problem(p.model(), dist, truth, p)
    except TypeError as exc:
        raise ConfigError(f"model.params: {exc}") from exc
    if kind == "ishigami":
        if params:
            raise ConfigError("the ishigami model takes no params")
        dist = explicit or bm.ishigami_distribution()
        truth = bm.oracle_ishigami_independent() if dist.is_independent else None
        return Problem(bm.eval_ishigami, dist, truth)
    # tabulated
    path = Path(config.model.data)
    if not path.is_absolute():
        path = base / path
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read tabulated data {path}: {exc}") from exc
    if table.shape[1] < 2:
        raise ConfigError("tabulated data needs at least one input column and one output column")

    def lookup(x):
        raise RuntimeError("a tabulated model cannot be evaluated at new points")

    return Problem(lookup, explicit, None, None, table)
