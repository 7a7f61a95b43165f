"""Per-quarter-hour predictors: naive pass-through, OLS, and elastic net.

The elastic net minimizes, per quarter-hour,

    (1/2n) * ||y - X b||^2  +  lambda * (alpha*||b||_1 + (1-alpha)/2*||b||_2^2)

with alpha = 0.5 by default, solved by cyclic coordinate descent with warm
starts over a 1,000-step exponential lambda grid running from a data-derived
maximum down to 0.001. The penalty weight is selected by 10-fold
cross-validation; CV folds are contiguous blocks in day order by default
(an optional seeded shuffle reproduces package-default behaviour elsewhere).
There is no intercept and no internal re-standardization: inputs arrive
already centered and scaled by the transform pipeline, dummies stay as 0/1.
"""

from __future__ import annotations

import datetime as dt
import json
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ._kernels import MAX_SWEEPS_DEFAULT, enet_path_gram
from .errors import DataError, NumericalError
from .features import DesignMatrix
from .market_data import Dataset, Market

DEFAULT_ALPHA = 0.5
DEFAULT_LAMBDA_MIN = 0.001
DEFAULT_GRID_STEPS = 1000
DEFAULT_CV_FOLDS = 10
CD_TOL = 1e-7

NAIVE_EXAA = "NaiveEXAA"
KIND_LM = "LM"
KIND_EN = "EN"


@dataclass(frozen=True)
class LambdaGrid:
    """Descending, exponentially spaced penalty weights."""

    values: np.ndarray
    lambda_min: float
    lambda_max: float

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise NumericalError("lambda grid must be a non-empty vector")
        if np.any(values <= 0) or np.any(np.diff(values) > 0):
            raise NumericalError("lambda grid must be positive and descending")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def for_design(cls, design: DesignMatrix | np.ndarray, y=None,
                   alpha: float = DEFAULT_ALPHA,
                   steps: int = DEFAULT_GRID_STEPS,
                   lambda_min: float = DEFAULT_LAMBDA_MIN) -> "LambdaGrid":
        lam_max = lambda_max(design, y, alpha=alpha)
        if lam_max <= lambda_min:
            warnings.warn(
                f"data-derived lambda_max {lam_max:.3g} <= lambda_min "
                f"{lambda_min}; grid degenerates to a single point",
                stacklevel=2)
            return cls(np.array([lambda_min]), lambda_min, lambda_min)
        values = np.geomspace(lam_max, lambda_min, steps)
        return cls(values, lambda_min, lam_max)


def _design_arrays(design: DesignMatrix | np.ndarray, y=None):
    if isinstance(design, DesignMatrix):
        return design.X, design.y
    if y is None:
        raise DataError("pass y together with a plain feature matrix")
    return np.asarray(design, dtype=np.float64), np.asarray(y, dtype=np.float64)


def lambda_max(design: DesignMatrix | np.ndarray, y=None,
               alpha: float = DEFAULT_ALPHA) -> float:
    """Smallest penalty for which the elastic-net solution is all-zero.

    From the stationarity condition at b = 0: |x_j'y| / n <= lambda * alpha
    for every column j.
    """
    if alpha <= 0:
        raise NumericalError("alpha must be positive: ridge (alpha = 0) has "
                             "no finite all-zero threshold")
    X, y = _design_arrays(design, y)
    n = X.shape[0]
    if n == 0:
        raise DataError("empty design")
    return float(np.max(np.abs(X.T @ y)) / (n * alpha))


@dataclass(frozen=True)
class EnPath:
    """Coefficient path over a lambda grid, largest lambda first."""

    grid: LambdaGrid
    alpha: float
    betas: np.ndarray        # (len(grid), p)
    sweeps: np.ndarray

    def coefficients_at(self, lam: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.grid.values - lam)))
        return self.betas[idx]


def fit_en_path(design: DesignMatrix | np.ndarray, grid: LambdaGrid, y=None,
                alpha: float = DEFAULT_ALPHA, tol: float = CD_TOL,
                max_sweeps: int = MAX_SWEEPS_DEFAULT) -> EnPath:
    """Solve the elastic net along the grid with warm starts."""
    X, y = _design_arrays(design, y)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise NumericalError("design contains non-finite values")
    if not 0 <= alpha <= 1:
        raise NumericalError(f"alpha must lie in [0, 1], got {alpha}")
    n = X.shape[0]
    G = np.ascontiguousarray(X.T @ X / n)
    c = np.ascontiguousarray(X.T @ y / n)
    betas, sweeps, converged = enet_path_gram(
        G, c, grid.values, float(alpha), float(tol), int(max_sweeps))
    if not converged.all():
        bad = np.flatnonzero(~converged)
        raise NumericalError(
            f"coordinate descent did not converge within {max_sweeps} sweeps "
            f"at {bad.size} lambda value(s), first lambda = "
            f"{grid.values[bad[0]]:.6g}")
    return EnPath(grid, alpha, betas, sweeps)


def en_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray,
                 lam: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Mean-squared-form elastic-net objective (the one the solver minimizes)."""
    n = X.shape[0]
    resid = y - X @ beta
    penalty = alpha * np.sum(np.abs(beta)) \
        + 0.5 * (1 - alpha) * np.sum(beta ** 2)
    return float(0.5 * np.dot(resid, resid) / n + lam * penalty)


def kkt_violation(X: np.ndarray, y: np.ndarray, beta: np.ndarray,
                  lam: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Largest violation of the elastic-net stationarity conditions.

    With g = X'(y - X beta)/n: for nonzero b_j the condition is
    g_j = lam*((1-alpha)*b_j + alpha*sign(b_j)); for zero b_j it is
    |g_j| <= lam*alpha. Returns the max absolute slack, 0 at an exact optimum.
    """
    n = X.shape[0]
    g = X.T @ (y - X @ beta) / n
    nz = beta != 0
    slack = np.abs(g[~nz]) - lam * alpha
    worst_zero = float(slack.max()) if slack.size else 0.0
    target = lam * ((1 - alpha) * beta[nz] + alpha * np.sign(beta[nz]))
    worst_nz = float(np.max(np.abs(g[nz] - target))) if nz.any() else 0.0
    return max(worst_zero, max(worst_nz, 0.0))


def cross_validate(design: DesignMatrix | np.ndarray, grid: LambdaGrid, y=None,
                   folds: int = DEFAULT_CV_FOLDS, alpha: float = DEFAULT_ALPHA,
                   shuffle: bool = False, seed: int | None = None,
                   tol: float = CD_TOL) -> tuple[float, np.ndarray]:
    """Pick lambda by K-fold cross-validation over the grid.

    Folds are contiguous blocks in row (day) order, respecting serial
    dependence; ``shuffle=True`` gives seeded random folds instead. Returns
    (lambda_star, cv_curve) where the curve holds the mean held-out squared
    error per lambda and ties resolve toward the larger lambda.
    """
    X, y = _design_arrays(design, y)
    n = X.shape[0]
    if n < folds:
        raise DataError(f"{n} rows are too few for {folds}-fold CV")
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    blocks = np.array_split(order, folds)

    G_full = X.T @ X
    c_full = X.T @ y
    total_se = np.zeros(len(grid))
    for held_out in blocks:
        X_out, y_out = X[held_out], y[held_out]
        n_in = n - held_out.size
        G = np.ascontiguousarray((G_full - X_out.T @ X_out) / n_in)
        c = np.ascontiguousarray((c_full - X_out.T @ y_out) / n_in)
        betas, _, converged = enet_path_gram(
            G, c, grid.values, float(alpha), float(tol),
            int(MAX_SWEEPS_DEFAULT))
        if not converged.all():
            raise NumericalError("coordinate descent did not converge in a "
                                 "CV fold")
        resid = y_out[:, None] - X_out @ betas.T
        total_se += np.sum(resid ** 2, axis=0)
    cv_curve = total_se / n
    lambda_star = float(grid.values[int(np.argmin(cv_curve))])
    return lambda_star, cv_curve


@dataclass(frozen=True)
class FittedModel:
    """A fitted per-quarter-hour predictor.

    Naive pass-through models carry no coefficients; elastic-net models
    record the selected lambda and the CV curve alongside the coefficients.
    """

    qh: int
    kind: str
    names: tuple[str, ...]
    coefficients: np.ndarray
    alpha: float | None = None
    lambda_: float | None = None
    cv_curve: np.ndarray | None = None
    grid: LambdaGrid | None = None

    def __post_init__(self):
        coef = np.ascontiguousarray(self.coefficients, dtype=np.float64)
        if coef.shape != (len(self.names),):
            raise DataError("coefficient vector must match feature names")
        coef.flags.writeable = False
        object.__setattr__(self, "coefficients", coef)

    @classmethod
    def naive_exaa(cls, qh: int) -> "FittedModel":
        return cls(qh, NAIVE_EXAA, (), np.zeros(0))

    def predict(self, row, names: Sequence[str] | None = None) -> float:
        """Inner product with a feature row; no intercept."""
        if self.kind == NAIVE_EXAA:
            raise DataError("naive model predicts via fit_naive, not features")
        if isinstance(row, Mapping):
            missing = [n for n in self.names if n not in row]
            if missing:
                raise DataError(f"feature row is missing {missing}")
            row = np.array([row[n] for n in self.names], dtype=np.float64)
        else:
            row = np.asarray(row, dtype=np.float64)
            if names is not None and tuple(names) != self.names:
                raise DataError("feature names do not match the fitted model")
            if row.shape != (len(self.names),):
                raise DataError(
                    f"feature row has {row.shape} values, model expects "
                    f"{len(self.names)}")
        return float(row @ self.coefficients)

    def to_json_dict(self) -> dict:
        nonzero = {n: float(b) for n, b in zip(self.names, self.coefficients)
                   if b != 0.0}
        out = {"qh": self.qh, "kind": self.kind, "alpha": self.alpha,
               "lambda": self.lambda_, "nonzero_coefficients": nonzero,
               "n_features": len(self.names)}
        if self.cv_curve is not None:
            curve = np.asarray(self.cv_curve)
            out["cv"] = {
                "min": float(curve.min()),
                "at_lambda_max": float(curve[0]),
                "n_lambda": int(curve.size),
            }
        return out


def fit_ols(design: DesignMatrix | np.ndarray, y=None,
            names: Sequence[str] | None = None, qh: int = 1) -> FittedModel:
    """Least squares; rank-deficient designs get the minimum-norm solution."""
    X, y = _design_arrays(design, y)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise NumericalError("design contains non-finite values")
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        warnings.warn(f"rank-deficient design (rank {rank} < {X.shape[1]} "
                      "columns); returning the minimum-norm solution",
                      stacklevel=2)
    if isinstance(design, DesignMatrix):
        names, qh = design.names, design.qh
    elif names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    return FittedModel(qh, KIND_LM, tuple(names), beta)


def fit_en(design: DesignMatrix | np.ndarray, y=None,
           grid: LambdaGrid | None = None, alpha: float = DEFAULT_ALPHA,
           folds: int = DEFAULT_CV_FOLDS, shuffle: bool = False,
           seed: int | None = None, names: Sequence[str] | None = None,
           qh: int = 1) -> FittedModel:
    """Elastic net with CV-selected lambda, refitted on all rows."""
    X, y_arr = _design_arrays(design, y)
    if grid is None:
        grid = LambdaGrid.for_design(X, y_arr, alpha=alpha)
    lambda_star, cv_curve = cross_validate(X, grid, y_arr, folds=folds,
                                           alpha=alpha, shuffle=shuffle,
                                           seed=seed)
    path = fit_en_path(X, grid, y_arr, alpha=alpha)
    idx = int(np.argmin(cv_curve))
    beta = path.betas[idx].copy()
    if isinstance(design, DesignMatrix):
        names, qh = design.names, design.qh
    elif names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    return FittedModel(qh, KIND_EN, tuple(names), beta, alpha=alpha,
                       lambda_=lambda_star, cv_curve=cv_curve, grid=grid)


def fit_naive(dataset: Dataset, qh: int, day: dt.date) -> float:
    """Same-day EXAA price as the prediction, raw EUR/MWh."""
    if Market.EXAA_QH not in dataset:
        raise DataError("dataset has no EXAA_QH series for the naive model")
    series = dataset.get(Market.EXAA_QH)
    value = float(series.values[series.day_index(day), qh - 1])
    if not np.isfinite(value):
        raise DataError(f"missing EXAA value for {day} qh {qh}")
    return value


def predict(model: FittedModel, feature_row,
            names: Sequence[str] | None = None) -> float:
    return model.predict(feature_row, names)


def model_to_json(models: Sequence[FittedModel]) -> str:
    return json.dumps([m.to_json_dict() for m in models], sort_keys=True)
