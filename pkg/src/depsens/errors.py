"""Exception types shared across modules."""

import numpy as np


class DegenerateOutputError(ValueError):
    """The estimated output variance is not positive."""


class BudgetError(ValueError):
    """A run would exceed its evaluation budget or a realization cap."""


class ModelEvaluationError(RuntimeError):
    """The model raised or returned a non-finite value."""

    def __init__(self, message, row=None, x=None):
        super().__init__(message)
        self.row = row
        self.x = x


def evaluate(model, x: np.ndarray) -> np.ndarray:
    """Evaluate a vectorized model on the rows of ``x`` and validate its output."""
    try:
        y = np.asarray(model(x), dtype=float).reshape(-1)
    except Exception as exc:
        raise ModelEvaluationError(f"model evaluation failed: {exc}") from exc
    if y.shape[0] != x.shape[0]:
        raise ModelEvaluationError(f"model returned {y.shape[0]} values for {x.shape[0]} rows")
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        row = int(bad[0])
        raise ModelEvaluationError(
            f"model returned {y[row]} at row {row}, x = {x[row].tolist()}", row=row, x=x[row]
        )
    return y
