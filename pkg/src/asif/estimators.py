"""Point estimators and covariate balance statistics.

All estimators are pure functions of the assignment and the observed
outcomes.  Undefinedness (an empty arm) raises rather than returning NaN;
designs are expected to exclude such assignments from their support.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ParameterError, UndefinedEstimatorError
from .population import Assignment, FactorialAssignment


def diff_in_means(z: Assignment, yobs: np.ndarray) -> float:
    """Mean outcome among treated minus mean outcome among controls."""
    zb = z.as_array()
    yobs = np.asarray(yobs, dtype=float)
    if yobs.shape != zb.shape:
        raise DimensionError("yobs length must match assignment length")
    k = int(zb.sum())
    if k == 0 or k == len(zb):
        raise UndefinedEstimatorError(f"empty arm: {k} of {len(zb)} treated")
    return float(yobs[zb == 1].mean() - yobs[zb == 0].mean())


def post_stratified(z: Assignment, yobs: np.ndarray, blocks: Sequence) -> float:
    """Size-weighted average of within-block differences in means."""
    zb = z.as_array()
    yobs = np.asarray(yobs, dtype=float)
    blocks = list(blocks)
    if len(blocks) != len(zb) or yobs.shape != zb.shape:
        raise DimensionError("blocks and yobs must match assignment length")
    n = len(zb)
    total = 0.0
    for lab in sorted(set(blocks)):
        idx = np.array([i for i, b in enumerate(blocks) if b == lab])
        zj = zb[idx]
        kj = int(zj.sum())
        if kj == 0 or kj == len(idx):
            raise UndefinedEstimatorError(f"block {lab!r} has an empty arm")
        yj = yobs[idx]
        total += (len(idx) / n) * (yj[zj == 1].mean() - yj[zj == 0].mean())
    return float(total)


def factorial_main_effect(
    z: FactorialAssignment, yobs: np.ndarray, factor: int
) -> float:
    """Marginal mean with the chosen factor active minus with it passive."""
    bits = np.array(z.factor(factor))
    yobs = np.asarray(yobs, dtype=float)
    if yobs.shape != bits.shape:
        raise DimensionError("yobs length must match assignment length")
    k = int(bits.sum())
    if k == 0 or k == len(bits):
        raise UndefinedEstimatorError(f"factor {factor} has an empty marginal level")
    return float(yobs[bits == 1].mean() - yobs[bits == 0].mean())


def balance(z: Assignment, x: np.ndarray) -> float:
    """Covariate balance: mean covariate among treated minus among controls.

    Same formula as the difference in means, applied to a covariate
    instead of an outcome.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError("balance is defined for a single covariate column")
    return diff_in_means(z, x)


def diff_in_means_rows(Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized difference in means for a 0/1 matrix of assignments.

    ``Z`` has one assignment per row; every row must have a nonempty
    treated and control arm.  Used by the Monte Carlo experiment paths.
    """
    Z = np.asarray(Z)
    y = np.asarray(y, dtype=float)
    k = Z.sum(axis=1)
    if (k == 0).any() or (k == Z.shape[1]).any():
        raise UndefinedEstimatorError("a row has an empty arm")
    treated = Z @ y
    return treated / k - (y.sum() - treated) / (Z.shape[1] - k)


@dataclass(frozen=True)
class Estimator:
    """Named estimator wrapper: maps (assignment, observed outcomes) to a value."""

    name: str
    fn: Callable[[object, np.ndarray], float]

    def __call__(self, z, yobs: np.ndarray) -> float:
        return self.fn(z, yobs)

    @classmethod
    def difference_in_means(cls) -> "Estimator":
        return cls("diff_in_means", diff_in_means)

    @classmethod
    def post_stratified(cls, blocks: Sequence) -> "Estimator":
        blocks = tuple(blocks)
        return cls("post_stratified", lambda z, y: post_stratified(z, y, blocks))

    @classmethod
    def factorial_main_effect(cls, factor: int) -> "Estimator":
        if factor not in (0, 1):
            raise ParameterError(f"factor index must be 0 or 1, got {factor}")
        return cls(
            f"factorial_main_effect[{factor}]",
            lambda z, y: factorial_main_effect(z, y, factor),
        )

    @classmethod
    def from_function(cls, name: str, fn: Callable) -> "Estimator":
        return cls(name, fn)
