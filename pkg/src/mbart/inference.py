"""Posterior summaries: predictions, intervals, effect curves, sigma traces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .tree import Forest, evaluate_forest_rows


@dataclass
class DrawSet:
    """Kept posterior draws plus everything needed to evaluate f at new x.

    Forests and sigmas live on the internal scale (y in [-0.5, 0.5], sign
    flipped predictors); meta["transforms"] records how to map back.
    """

    forests: list[Forest]
    sigmas: np.ndarray
    cutpoints: list[np.ndarray]
    meta: dict
    sigma_trace: Optional[np.ndarray] = None  # all iterations incl. burn-in
    test_draws: Optional[np.ndarray] = None  # (n_kept, n_test) fits at the run's x_test

    @property
    def n_draws(self) -> int:
        return len(self.sigmas)

    def y_to_original(self, values: np.ndarray) -> np.ndarray:
        tr = self.meta["transforms"]
        return (np.asarray(values) + 0.5) * tr["y_scale"] + tr["y_shift"]

    def sigma_to_original(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.meta["transforms"]["y_scale"]

    def x_to_internal(self, X: np.ndarray) -> np.ndarray:
        signs = np.asarray(self.meta["transforms"]["col_signs"], dtype=float)
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != signs.size:
            raise DataError(
                f"test matrix has {X.shape[1] if X.ndim == 2 else '?'} columns, "
                f"expected {signs.size}"
            )
        return X * signs


@dataclass
class EffectCurve:
    """Fitted f along one predictor with the others frozen."""

    var: int
    grid: np.ndarray
    fixed: np.ndarray
    means: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def draw_matrix(drawset: DrawSet, X_test: np.ndarray) -> np.ndarray:
    """(n_draws, n_test) matrix of forest evaluations on the internal scale."""
    if not drawset.forests:
        raise DataError("draw set holds no stored forests")
    Xi = drawset.x_to_internal(X_test)
    out = np.empty((len(drawset.forests), Xi.shape[0]))
    for k, forest in enumerate(drawset.forests):
        out[k] = evaluate_forest_rows(forest, Xi)
    return out


def predict(
    drawset: DrawSet,
    X_test: np.ndarray,
    q_lo: float = 0.025,
    q_hi: float = 0.975,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior mean of f plus equal-tailed pointwise quantiles, original scale."""
    fits = draw_matrix(drawset, X_test)
    mean = drawset.y_to_original(fits.mean(axis=0))
    lo = drawset.y_to_original(np.quantile(fits, q_lo, axis=0))
    hi = drawset.y_to_original(np.quantile(fits, q_hi, axis=0))
    return mean, lo, hi


def conditional_effects(
    drawset: DrawSet,
    var: int,
    grid: Sequence[float],
    fixed_combinations: np.ndarray,
    q_lo: float = 0.025,
    q_hi: float = 0.975,
) -> list[EffectCurve]:
    """One EffectCurve per frozen combination of the other predictors.

    fixed_combinations is (k, p) on the original scale; column ``var`` of
    each row is ignored and replaced by the grid values.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise DataError("effect grid is empty")
    fixed_combinations = np.atleast_2d(np.asarray(fixed_combinations, dtype=float))
    curves = []
    for combo in fixed_combinations:
        design = np.tile(combo, (grid.size, 1))
        design[:, var] = grid
        mean, lo, hi = predict(drawset, design, q_lo, q_hi)
        curves.append(EffectCurve(var, grid.copy(), combo.copy(), mean, lo, hi))
    return curves


def quantile_grid(values: np.ndarray, n: int = 15) -> np.ndarray:
    """n equally spaced quantiles of an observed predictor column."""
    qs = np.linspace(0.0, 1.0, n)
    return np.quantile(np.asarray(values, dtype=float), qs)


def rmse(f_hat: np.ndarray, f_true: np.ndarray) -> float:
    f_hat = np.asarray(f_hat, dtype=float)
    f_true = np.asarray(f_true, dtype=float)
    if f_hat.shape != f_true.shape:
        raise ValueError(f"length mismatch: {f_hat.shape} vs {f_true.shape}")
    return float(np.sqrt(np.mean((f_hat - f_true) ** 2)))


def sigma_summary(drawset: DrawSet) -> tuple[np.ndarray, float]:
    """Kept sigma draws on the original y scale and their mean."""
    sig = drawset.sigma_to_original(drawset.sigmas)
    return sig, float(sig.mean()) if sig.size else math.nan
