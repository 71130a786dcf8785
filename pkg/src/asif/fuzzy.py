"""Fuzzy confidence intervals for stochastic design maps.

A stochastic map yields a random interval even after the assignment is
observed.  The fuzzy interval summarizes the whole distribution: the
membership of a point is the probability, over the auxiliary draw, that
the realized interval contains it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ParameterError
from .estimators import Estimator
from .oracle import oracle_quantiles, sampling_distribution
from .population import Population, ate, observe
from .streams import rng_for, stable_tag


@dataclass(frozen=True)
class WeightedInterval:
    probability: float
    lower: float
    upper: float


@dataclass(frozen=True)
class FuzzyInterval:
    """Membership function of the random oracle interval on a grid.

    Membership is piecewise constant between realized interval endpoints:
    1 on the intersection of all realized intervals, 0 outside their
    union.
    """

    grid: np.ndarray
    membership: np.ndarray
    intervals: tuple[WeightedInterval, ...]
    mode: str
    draws: int | None = None

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        membership = np.asarray(self.membership, dtype=float)
        if grid.shape != membership.shape or grid.ndim != 1:
            raise ParameterError("grid and membership must be matching 1-d arrays")
        if grid.size == 0:
            raise ParameterError("grid must be non-empty")
        if not (np.diff(grid) > 0).all():
            raise ParameterError("grid must be strictly increasing")
        if (membership < -1e-12).any() or (membership > 1.0 + 1e-12).any():
            raise ParameterError("memberships must lie in [0, 1]")
        grid.setflags(write=False)
        membership.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "membership", membership)

    def membership_at(self, theta: float) -> float:
        """Exact membership of any point, from the realized intervals."""
        return float(
            math.fsum(
                w.probability
                for w in self.intervals
                if w.lower <= theta <= w.upper
            )
        )

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theta", "membership"])
            for t, m in zip(self.grid, self.membership):
                writer.writerow([repr(float(t)), repr(float(m))])

    @classmethod
    def from_csv(cls, path: str | Path) -> tuple[np.ndarray, np.ndarray]:
        """Reload the (theta, membership) table written by :meth:`to_csv`."""
        thetas, members = [], []
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                thetas.append(float(row["theta"]))
                members.append(float(row["membership"]))
        return np.array(thetas), np.array(members)


def default_grid(intervals: tuple[WeightedInterval, ...]) -> np.ndarray:
    """All realized interval endpoints plus midpoints between neighbors.

    Memberships are piecewise constant between endpoints, so this grid is
    a lossless summary.
    """
    points = sorted({w.lower for w in intervals} | {w.upper for w in intervals})
    grid = list(points)
    for a, b in zip(points[:-1], points[1:]):
        grid.append(0.5 * (a + b))
    return np.array(sorted(set(grid)))


def fuzzy_interval(
    z,
    design_map,
    estimator: Estimator,
    pop: Population,
    alpha: float,
    grid=None,
    mode: str = "exact",
    draws: int = 1000,
    seed: int = 0,
    estimand: Callable[[Population], float] = ate,
) -> FuzzyInterval:
    """Membership function of the stochastic map's random interval at ``z``.

    Exact mode integrates over the finitely many distinct windows the
    auxiliary draw can produce; Monte Carlo mode averages interval
    membership over seeded draws.
    """
    if not getattr(design_map, "stochastic", False):
        raise ParameterError("fuzzy intervals require a stochastic design map")
    center = estimator(z, observe(pop, z))
    tau = estimand(pop)
    quantile_cache: dict = {}

    def interval_for(design, key) -> tuple[float, float]:
        if key not in quantile_cache:
            dist = sampling_distribution(
                design, estimator, pop, estimand=estimand
            )
            quantile_cache[key] = oracle_quantiles(dist, alpha)
        lo_q, up_q = quantile_cache[key]
        return center - up_q, center - lo_q

    realized: list[WeightedInterval] = []
    if mode == "exact":
        for seg in design_map.window_mixture(z):
            lo, up = interval_for(seg.design, seg.key)
            realized.append(WeightedInterval(seg.probability, lo, up))
    elif mode == "mc":
        if draws <= 0:
            raise ParameterError("mc mode needs a positive draw count")
        weight = 1.0 / draws
        for i in range(draws):
            rng = rng_for(seed, stable_tag("fuzzy"), i)
            realization = design_map.draw(z, rng)
            lo, up = interval_for(realization.design, realization.key)
            realized.append(WeightedInterval(weight, lo, up))
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    intervals = tuple(realized)
    grid_arr = default_grid(intervals) if grid is None else np.asarray(grid, float)
    membership = np.array(
        [
            math.fsum(
                w.probability for w in intervals if w.lower <= t <= w.upper
            )
            for t in grid_arr
        ]
    )
    return FuzzyInterval(
        grid=grid_arr,
        membership=membership,
        intervals=intervals,
        mode=mode,
        draws=draws if mode == "mc" else None,
    )
