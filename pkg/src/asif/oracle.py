"""Oracle sampling distributions, quantiles, intervals, and coverage.

The oracle knows both potential outcomes, so it can form the exact
distribution of the estimation error under any design, read off its
quantiles, and measure how often the resulting intervals cover the true
effect, marginally and within cells of any statistic.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable

import numpy as np

from .design_maps import (
    ConditionalDesignMap,
    Statistic,
    canonical_cell_id,
    _cell_sort_key,
)
from .designs import Design
from .errors import (
    DegenerateDesignError,
    ParameterError,
    UndefinedEstimatorError,
)
from .estimators import Estimator
from .population import Population, ate, observe
from .streams import rng_for, stable_tag

# -- sampling distribution ----------------------------------------------------


@dataclass(frozen=True)
class SamplingDistribution:
    """Discrete distribution of the estimation error under a design.

    Atoms are sorted by value with equal values merged, so quantiles do
    not depend on enumeration order.
    """

    values: np.ndarray
    probs: np.ndarray
    mode: str = "exact"
    replicates: int | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if values.shape != probs.shape or values.ndim != 1:
            raise ParameterError("values and probs must be matching 1-d arrays")
        if not np.isfinite(values).all():
            raise ParameterError("atom values must be finite")
        if not (probs > 0).all():
            raise ParameterError("atom probabilities must be positive")
        if self.mode == "exact" and abs(math.fsum(probs.tolist()) - 1.0) > 1e-12:
            raise ParameterError("atom probabilities must sum to 1")
        if not (np.diff(values) > 0).all():
            raise ParameterError("atom values must be sorted and distinct")
        values.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_samples(
        cls, values, probs=None, mode: str = "exact", replicates: int | None = None
    ) -> "SamplingDistribution":
        """Merge equal values and sort; probabilities default to uniform."""
        values = np.asarray(values, dtype=float)
        if probs is None:
            probs = np.full(values.shape, 1.0 / len(values))
        probs = np.asarray(probs, dtype=float)
        uniq, inverse = np.unique(values, return_inverse=True)
        merged = np.zeros(uniq.shape)
        np.add.at(merged, inverse, probs)
        return cls(values=uniq, probs=merged, mode=mode, replicates=replicates)

    def mean(self) -> float:
        return float(math.fsum((self.values * self.probs).tolist()))

    def variance(self) -> float:
        m = self.mean()
        return float(math.fsum((self.probs * (self.values - m) ** 2).tolist()))


def sampling_distribution(
    design: Design,
    estimator: Estimator,
    pop: Population,
    mode: str = "exact",
    replicates: int | None = None,
    seed: int = 0,
    estimand: Callable[[Population], float] = ate,
) -> SamplingDistribution:
    """Distribution of (estimate - estimand) under the design.

    Exact mode enumerates the full support; Monte Carlo mode averages over
    seeded replicate draws.
    """
    tau = estimand(pop)
    if mode == "exact":
        pairs = design.enumerate_support()
        values = []
        for z, _ in pairs:
            values.append(_evaluate(estimator, pop, z) - tau)
        return SamplingDistribution.from_samples(
            values, [p for _, p in pairs], mode="exact"
        )
    if mode == "mc":
        if not replicates or replicates <= 0:
            raise ParameterError("mc mode needs a positive replicate count")
        values = []
        for i in range(replicates):
            z = design.sample(rng_for(seed, stable_tag("sampling"), i))
            values.append(_evaluate(estimator, pop, z) - tau)
        return SamplingDistribution.from_samples(
            values, mode="mc", replicates=replicates
        )
    raise ParameterError(f"unknown mode {mode!r}")


def _evaluate(estimator: Estimator, pop: Population, z) -> float:
    try:
        return estimator(z, observe(pop, z))
    except UndefinedEstimatorError as exc:
        raise UndefinedEstimatorError(
            f"estimator {estimator.name} undefined at assignment "
            f"{getattr(z, 'bits', z)}: {exc}"
        ) from exc


# -- quantiles and intervals ----------------------------------------------------


def oracle_quantiles(dist: SamplingDistribution, alpha: float) -> tuple[float, float]:
    """Level-alpha lower and upper quantiles of a discrete distribution.

    U is the smallest atom with at most alpha mass strictly above it; L is
    the largest atom with at most alpha mass strictly below it.  This
    guarantees P(L <= D <= U) >= 1 - 2 alpha on any finite support.
    """
    if not 0.0 < alpha < 0.5:
        raise ParameterError(f"alpha must be in (0, 0.5), got {alpha}")
    cum = np.cumsum(dist.probs)
    above = 1.0 - cum  # P(D > v_i)
    above[-1] = 0.0  # exactly zero by definition, immune to cumsum roundoff
    below = cum - dist.probs  # P(D < v_i)
    iu = int(np.argmax(above <= alpha))  # first index meeting the bound
    candidates = np.nonzero(below <= alpha)[0]
    il = int(candidates[-1])
    return float(dist.values[il]), float(dist.values[iu])


@dataclass(frozen=True)
class OracleInterval:
    """Oracle confidence interval [center - U, center - L]."""

    lower: float
    upper: float
    lower_quantile: float
    upper_quantile: float
    center: float

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise ParameterError("interval endpoints out of order")

    def contains(self, theta: float) -> bool:
        return self.lower <= theta <= self.upper


def oracle_interval(
    z,
    design: Design,
    estimator: Estimator,
    pop: Population,
    alpha: float,
    allow_outside_support: bool = False,
    estimand: Callable[[Population], float] = ate,
) -> OracleInterval:
    """Interval from the design's error quantiles, centered at the estimate.

    ``z`` must lie in the design's support unless the caller explicitly
    overrides (needed when demonstrating invalid maps whose analysis
    design excludes the observed assignment).
    """
    if not allow_outside_support and design.pmf(z) <= 0.0:
        raise ParameterError(
            "assignment is outside the analysis design support; "
            "pass allow_outside_support=True to override"
        )
    dist = sampling_distribution(design, estimator, pop, estimand=estimand)
    lo_q, up_q = oracle_quantiles(dist, alpha)
    center = _evaluate(estimator, pop, z)
    return OracleInterval(
        lower=center - up_q,
        upper=center - lo_q,
        lower_quantile=lo_q,
        upper_quantile=up_q,
        center=center,
    )


# -- coverage -------------------------------------------------------------------


@dataclass(frozen=True)
class CellCoverage:
    """Coverage of the procedure within one cell of the reporting statistic."""

    cell_id: str
    probability: float
    coverage: float
    se: float | None = None


@dataclass(frozen=True)
class CoverageReport:
    """Marginal and per-cell coverage of a design-map procedure."""

    alpha: float
    marginal: float
    cells: tuple[CellCoverage, ...]
    mode: str
    marginal_se: float | None = None
    replicates: int | None = None
    excluded_probability: float = 0.0
    excluded_count: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 0.5:
            raise ParameterError(f"alpha must be in (0, 0.5), got {self.alpha}")
        tol = 1e-9 if self.mode == "mc" else 1e-12
        if not -tol <= self.marginal <= 1.0 + tol:
            raise ParameterError("marginal coverage outside [0, 1]")
        for c in self.cells:
            if not -tol <= c.coverage <= 1.0 + tol:
                raise ParameterError(f"cell {c.cell_id} coverage outside [0, 1]")
        if self.mode == "exact" and self.cells:
            recombined = math.fsum(c.probability * c.coverage for c in self.cells)
            if abs(recombined - self.marginal) > 1e-12:
                raise ParameterError(
                    "marginal coverage does not match the cell decomposition"
                )

    @property
    def gamma(self) -> float:
        """Nominal level 1 - 2 alpha."""
        return 1.0 - 2.0 * self.alpha

    @property
    def attained_slack(self) -> float:
        """Excess of attained marginal coverage over the nominal level."""
        return self.marginal - self.gamma

    def cell(self, cell_id: str) -> CellCoverage:
        for c in self.cells:
            if c.cell_id == cell_id:
                return c
        raise KeyError(cell_id)

    def to_csv(self, path: str | Path) -> None:
        """Write cell rows plus a MARGINAL summary row."""
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell_id", "cell_prob", "coverage", "se"])
            for c in self.cells:
                writer.writerow(
                    [c.cell_id, repr(c.probability), repr(c.coverage),
                     "" if c.se is None else repr(c.se)]
                )
            writer.writerow(
                ["MARGINAL", repr(1.0 - self.excluded_probability),
                 repr(self.marginal),
                 "" if self.marginal_se is None else repr(self.marginal_se)]
            )

    @classmethod
    def from_csv(cls, path: str | Path, alpha: float, mode: str) -> "CoverageReport":
        """Reload a report written by :meth:`to_csv`."""
        cells = []
        marginal = None
        marginal_se = None
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                se = float(row["se"]) if row["se"] else None
                if row["cell_id"] == "MARGINAL":
                    marginal = float(row["coverage"])
                    marginal_se = se
                else:
                    cells.append(
                        CellCoverage(
                            cell_id=row["cell_id"],
                            probability=float(row["cell_prob"]),
                            coverage=float(row["coverage"]),
                            se=se,
                        )
                    )
        if marginal is None:
            raise ParameterError(f"{path}: missing MARGINAL row")
        return cls(
            alpha=alpha, marginal=marginal, cells=tuple(cells), mode=mode,
            marginal_se=marginal_se,
        )

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "mode": self.mode,
            "replicates": self.replicates,
            "marginal_coverage": self.marginal,
            "marginal_se": self.marginal_se,
            "excluded_probability": self.excluded_probability,
            "excluded_count": self.excluded_count,
            "cells": [
                {
                    "cell_id": c.cell_id,
                    "cell_prob": c.probability,
                    "coverage": c.coverage,
                    "se": c.se,
                }
                for c in self.cells
            ],
            "meta": self.meta,
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"
        )


@dataclass(frozen=True)
class CoverageProfile:
    """Per-assignment coverage of a procedure over the original design.

    ``covered`` holds, for each support assignment, the indicator that the
    interval covers the estimand (a fraction in [0, 1] for stochastic
    maps, averaging over the auxiliary draw).
    """

    assignments: tuple
    probabilities: np.ndarray
    covered: np.ndarray
    excluded: tuple = ()
    excluded_probability: float = 0.0

    def marginal(self) -> float:
        kept = 1.0 - self.excluded_probability
        return float(
            math.fsum((self.probabilities * self.covered).tolist()) / kept
        )


def coverage_profile(
    eta0: Design,
    design_map,
    estimator: Estimator,
    pop: Population,
    alpha: float,
    on_degenerate: str = "raise",
    estimand: Callable[[Population], float] = ate,
) -> CoverageProfile:
    """Exact per-assignment coverage of the procedure built from ``design_map``.

    ``on_degenerate="exclude"`` drops (and reports) assignments whose
    analysis design has empty support instead of raising; remaining mass
    is renormalized, which conditions the comparison away from the
    degenerate event.
    """
    if on_degenerate not in ("raise", "exclude"):
        raise ParameterError(f"unknown on_degenerate option {on_degenerate!r}")
    tau = estimand(pop)
    pairs = eta0.enumerate_support()
    tauhat: dict = {}

    def tau_hat(z) -> float:
        got = tauhat.get(z)
        if got is None:
            got = _evaluate(estimator, pop, z)
            tauhat[z] = got
        return got

    quantiles: dict[Hashable, tuple[float, float]] = {}

    def quantiles_of(design: Design, key: Hashable | None) -> tuple[float, float]:
        if key is not None and key in quantiles:
            return quantiles[key]
        values = [tau_hat(w) - tau for w, _ in design.enumerate_support()]
        dist = SamplingDistribution.from_samples(
            values, design.probabilities().tolist(), mode="exact"
        )
        got = oracle_quantiles(dist, alpha)
        if key is not None:
            quantiles[key] = got
        return got

    stochastic = getattr(design_map, "stochastic", False)
    covered = np.zeros(len(pairs))
    keep = np.ones(len(pairs), dtype=bool)
    excluded = []
    for i, (z, _) in enumerate(pairs):
        err = tau_hat(z) - tau
        if stochastic:
            total = 0.0
            for seg in design_map.window_mixture(z):
                lo_q, up_q = quantiles_of(seg.design, ("segment", seg.key))
                if lo_q <= err <= up_q:
                    total += seg.probability
            covered[i] = total
        else:
            try:
                design = design_map(z)
            except DegenerateDesignError:
                if on_degenerate == "raise":
                    raise
                keep[i] = False
                excluded.append(z)
                continue
            lo_q, up_q = quantiles_of(design, design_map.cache_key(z))
            covered[i] = 1.0 if lo_q <= err <= up_q else 0.0
    probs = np.array([p for _, p in pairs])
    excluded_probability = float(math.fsum(probs[~keep].tolist()))
    if excluded_probability > 0:
        kept_mass = math.fsum(probs[keep].tolist())
        probs = np.where(keep, probs / kept_mass, 0.0)
    return CoverageProfile(
        assignments=tuple(z for (z, _), k in zip(pairs, keep) if k),
        probabilities=probs[keep],
        covered=covered[keep],
        excluded=tuple(excluded),
        excluded_probability=excluded_probability,
    )


def _cells_from_profile(
    profile: CoverageProfile, cell_statistic: Statistic | None
) -> tuple[CellCoverage, ...]:
    if cell_statistic is None:
        return ()
    groups: dict = {}
    for z, p, c in zip(
        profile.assignments, profile.probabilities, profile.covered
    ):
        groups.setdefault(cell_statistic(z), []).append((p, c))
    cells = []
    for value in sorted(groups, key=_cell_sort_key):
        rows = groups[value]
        prob = math.fsum(p for p, _ in rows)
        cov = math.fsum(p * c for p, c in rows) / prob
        cells.append(
            CellCoverage(
                cell_id=canonical_cell_id(value), probability=prob, coverage=cov
            )
        )
    return tuple(cells)


def replicate_coverage(
    eta0: Design,
    design_map,
    estimator: Estimator,
    pop: Population,
    alpha: float,
    replicates: int,
    seed: int = 0,
    inner_replicates: int = 4000,
    on_degenerate: str = "raise",
    estimand: Callable[[Population], float] = ate,
):
    """Yield (assignment, covered) over seeded Monte Carlo replicates.

    ``covered`` is None for replicates excluded by a degenerate analysis
    design (only with ``on_degenerate="exclude"``).  Quantiles of each
    distinct analysis design are cached; analysis designs too large to
    enumerate get nested Monte Carlo quantiles on streams derived from
    the cache key, so results do not depend on replicate order.
    """
    if not replicates or replicates <= 0:
        raise ParameterError("mc mode needs a positive replicate count")
    tau = estimand(pop)
    stochastic = getattr(design_map, "stochastic", False)
    quantile_cache: dict = {}

    def quantiles_for(design: Design, key: Hashable | None) -> tuple[float, float]:
        if key is not None and key in quantile_cache:
            return quantile_cache[key]
        if design.mode == "exact":
            dist = sampling_distribution(design, estimator, pop, estimand=estimand)
        else:
            inner_seed = stable_tag(f"inner|{key!r}")
            dist = sampling_distribution(
                design, estimator, pop, mode="mc",
                replicates=inner_replicates,
                seed=seed ^ inner_seed, estimand=estimand,
            )
        got = oracle_quantiles(dist, alpha)
        if key is not None:
            quantile_cache[key] = got
        return got

    for i in range(replicates):
        rng = rng_for(seed, stable_tag("coverage"), i)
        z = eta0.sample(rng)
        if stochastic:
            realization = design_map.draw(z, rng)
            design, key = realization.design, ("segment", realization.key)
        else:
            try:
                design = design_map(z)
            except DegenerateDesignError:
                if on_degenerate == "raise":
                    raise
                yield z, None
                continue
            key = design_map.cache_key(z)
        lo_q, up_q = quantiles_for(design, key)
        err = _evaluate(estimator, pop, z) - tau
        yield z, 1 if lo_q <= err <= up_q else 0


def coverage(
    eta0: Design,
    design_map,
    estimator: Estimator,
    pop: Population,
    alpha: float,
    cell_statistic: Statistic | None = None,
    mode: str = "exact",
    replicates: int | None = None,
    seed: int = 0,
    inner_replicates: int = 4000,
    on_degenerate: str = "raise",
    estimand: Callable[[Population], float] = ate,
) -> CoverageReport:
    """Coverage of the design-map procedure over the original design.

    Exact mode enumerates the original design (and, for stochastic maps,
    integrates over the finitely many distinct windows).  Monte Carlo mode
    draws replicates of the assignment (and auxiliary draw), attaching
    binomial standard errors; analysis designs too large to enumerate fall
    back to nested sampling for their quantiles.

    Parameters
    ----------
    eta0 : Design
        The design actually used to randomize.
    design_map
        Deterministic or stochastic map from observed assignment to
        analysis design.
    estimator : Estimator
        Point estimator evaluated on (assignment, observed outcomes).
    pop : Population
        Fixed potential-outcome table.
    alpha : float
        One-sided tail level; the nominal coverage is ``1 - 2 * alpha``.
    cell_statistic : Statistic, optional
        Reporting statistic for per-cell conditional coverage.  Defaults
        to the map's own statistic for conditional maps.
    mode : {"exact", "mc"}
        Full enumeration or seeded Monte Carlo (``replicates`` draws).
    on_degenerate : {"raise", "exclude"}
        What to do when the analysis design of some assignment is empty;
        excluding renormalizes the remaining mass and reports the
        excluded probability.
    estimand : callable, optional
        Function of the population standing in for the average effect.

    Returns
    -------
    CoverageReport
        Marginal coverage, per-cell rows, and (in MC mode) standard
        errors; exact-mode reports satisfy the law of total coverage to
        1e-12.
    """
    if cell_statistic is None and isinstance(design_map, ConditionalDesignMap):
        cell_statistic = design_map.statistic
    if mode == "exact":
        profile = coverage_profile(
            eta0, design_map, estimator, pop, alpha,
            on_degenerate=on_degenerate, estimand=estimand,
        )
        marginal = profile.marginal()
        cells = _cells_from_profile(profile, cell_statistic)
        return CoverageReport(
            alpha=alpha,
            marginal=marginal,
            cells=cells,
            mode="exact",
            excluded_probability=profile.excluded_probability,
            excluded_count=len(profile.excluded),
            meta={
                "design": eta0.family,
                "map": design_map.name,
                "estimator": estimator.name,
            },
        )
    if mode != "mc":
        raise ParameterError(f"unknown mode {mode!r}")
    hits: dict = {}
    counts: dict = {}
    total_hits = 0
    excluded_count = 0
    for z, hit in replicate_coverage(
        eta0, design_map, estimator, pop, alpha,
        replicates=replicates, seed=seed,
        inner_replicates=inner_replicates,
        on_degenerate=on_degenerate, estimand=estimand,
    ):
        if hit is None:
            excluded_count += 1
            continue
        total_hits += hit
        if cell_statistic is not None:
            value = cell_statistic(z)
            counts[value] = counts.get(value, 0) + 1
            hits[value] = hits.get(value, 0) + hit
    used = replicates - excluded_count
    if used == 0:
        raise DegenerateDesignError("every replicate hit a degenerate design")
    marginal = total_hits / used
    cells = []
    for value in sorted(counts, key=_cell_sort_key):
        m = counts[value]
        c = hits[value] / m
        cells.append(
            CellCoverage(
                cell_id=canonical_cell_id(value),
                probability=m / used,
                coverage=c,
                se=math.sqrt(c * (1.0 - c) / m),
            )
        )
    return CoverageReport(
        alpha=alpha,
        marginal=marginal,
        cells=tuple(cells),
        mode="mc",
        marginal_se=math.sqrt(marginal * (1.0 - marginal) / used),
        replicates=replicates,
        excluded_probability=excluded_count / replicates,
        excluded_count=excluded_count,
        meta={
            "design": eta0.family,
            "map": design_map.name,
            "estimator": estimator.name,
        },
    )


# -- variance decomposition -----------------------------------------------------


@dataclass(frozen=True)
class CellMoments:
    cell_id: str
    probability: float
    mean: float
    variance: float


@dataclass(frozen=True)
class VarianceDecomposition:
    """Exact check of var = E[var | w] + var(E[. | w]) under a design."""

    total_variance: float
    expected_conditional_variance: float
    variance_of_conditional_means: float
    estimand: float
    cells: tuple[CellMoments, ...]
    conditional_mean_tolerance: float

    @property
    def residual(self) -> float:
        return self.total_variance - (
            self.expected_conditional_variance + self.variance_of_conditional_means
        )

    @property
    def relative_residual(self) -> float:
        scale = max(abs(self.total_variance), 1e-300)
        return abs(self.residual) / scale

    @property
    def conditional_means_equal_estimand(self) -> bool:
        return all(
            abs(c.mean - self.estimand) <= self.conditional_mean_tolerance
            for c in self.cells
        )


def variance_decomposition_check(
    eta0: Design,
    estimator: Estimator,
    pop: Population,
    w: Statistic,
    conditional_mean_tolerance: float = 1e-9,
    estimand: Callable[[Population], float] = ate,
) -> VarianceDecomposition:
    """Exact law-of-total-variance decomposition of the estimator under ``eta0``.

    Also reports whether every conditional mean equals the estimand, the
    condition under which conditioning leaves average precision unchanged.
    """
    pairs = eta0.enumerate_support()
    values = np.array([_evaluate(estimator, pop, z) for z, _ in pairs])
    probs = np.array([p for _, p in pairs])
    grand_mean = math.fsum((probs * values).tolist())
    total_var = math.fsum((probs * (values - grand_mean) ** 2).tolist())
    groups: dict = {}
    for i, (z, _) in enumerate(pairs):
        groups.setdefault(w(z), []).append(i)
    cells = []
    within = 0.0
    between = 0.0
    for value in sorted(groups, key=_cell_sort_key):
        idx = groups[value]
        p_cell = math.fsum(probs[i] for i in idx)
        mean_cell = math.fsum(probs[i] * values[i] for i in idx) / p_cell
        var_cell = (
            math.fsum(probs[i] * (values[i] - mean_cell) ** 2 for i in idx) / p_cell
        )
        within += p_cell * var_cell
        between += p_cell * (mean_cell - grand_mean) ** 2
        cells.append(
            CellMoments(
                cell_id=canonical_cell_id(value),
                probability=p_cell,
                mean=mean_cell,
                variance=var_cell,
            )
        )
    return VarianceDecomposition(
        total_variance=total_var,
        expected_conditional_variance=within,
        variance_of_conditional_means=between,
        estimand=estimand(pop),
        cells=tuple(cells),
        conditional_mean_tolerance=conditional_mean_tolerance,
    )
