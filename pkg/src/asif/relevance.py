"""Betting-game audit of confidence procedures.

A bettor who can predict over- or under-coverage from an observable event
has a strategy with positive expected return against the procedure.  This
module computes expected returns exactly, checks whether a given event is
relevant, constructs the cellwise adversarial strategy, and evaluates the
closed-form conditional-coverage curve for the truncated Bernoulli design
under a constant additive effect and a normal approximation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .design_maps import Statistic, canonical_cell_id, _cell_sort_key
from .designs import Design
from .errors import ParameterError
from .estimators import Estimator
from .oracle import CoverageProfile, coverage_profile, replicate_coverage
from .population import Population, ate


def standard_normal_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@dataclass(frozen=True)
class BettingStrategy:
    """Bet-for and bet-against events with a stake at the advertised level.

    The events must be disjoint on the support of the original design;
    assignments in neither event place no bet.
    """

    bet_for: Callable[[object], bool]
    bet_against: Callable[[object], bool]
    stake: float
    label: str = ""

    def __post_init__(self) -> None:
        if not 0.0 < self.stake < 1.0:
            raise ParameterError(f"stake must be in (0, 1), got {self.stake}")

    @classmethod
    def empty(cls, stake: float) -> "BettingStrategy":
        return cls(lambda z: False, lambda z: False, stake, label="empty")

    @classmethod
    def always_for(cls, stake: float) -> "BettingStrategy":
        return cls(lambda z: True, lambda z: False, stake, label="always-for")

    @classmethod
    def from_cells(
        cls,
        statistic: Statistic,
        for_values: Sequence,
        against_values: Sequence,
        stake: float,
        label: str = "",
    ) -> "BettingStrategy":
        fv, av = frozenset(for_values), frozenset(against_values)
        if fv & av:
            raise ParameterError("bet-for and bet-against cells overlap")
        return cls(
            bet_for=lambda z: statistic(z) in fv,
            bet_against=lambda z: statistic(z) in av,
            stake=stake,
            label=label or f"cells[{statistic.name}]",
        )


@dataclass(frozen=True)
class ExpectedReturn:
    """Expected return of a strategy, with the conditional coverages behind it."""

    value: float
    stake: float
    prob_for: float
    prob_against: float
    coverage_for: float | None
    coverage_against: float | None
    se: float | None = None


def _profile(
    eta0, design_map, estimator, pop, alpha, estimand, profile
) -> CoverageProfile:
    if profile is not None:
        return profile
    return coverage_profile(
        eta0, design_map, estimator, pop, alpha, estimand=estimand
    )


def expected_return(
    strategy: BettingStrategy,
    eta0: Design,
    design_map,
    estimator: Estimator,
    pop: Population,
    alpha: float,
    mode: str = "exact",
    replicates: int | None = None,
    seed: int = 0,
    use_attained_coverage: bool = False,
    estimand: Callable[[Population], float] = ate,
    profile: CoverageProfile | None = None,
) -> ExpectedReturn:
    """Expected return of the betting strategy against the procedure.

    The payoff line is the stake by default (the nominal level 1 - 2
    alpha); ``use_attained_coverage`` substitutes the procedure's attained
    marginal coverage, isolating relevance from discreteness slack.  Exact
    mode integrates over the original design; Monte Carlo mode averages
    per-replicate returns and attaches a standard error.
    """
    if mode == "mc":
        return _expected_return_mc(
            strategy, eta0, design_map, estimator, pop, alpha,
            replicates=replicates, seed=seed, estimand=estimand,
        )
    if mode != "exact":
        raise ParameterError(f"unknown mode {mode!r}")
    prof = _profile(eta0, design_map, estimator, pop, alpha, estimand, profile)
    beta = strategy.stake
    if use_attained_coverage:
        beta = prof.marginal()
    p_for = cov_for = 0.0
    p_against = cov_against = 0.0
    for z, p, c in zip(prof.assignments, prof.probabilities, prof.covered):
        f, a = strategy.bet_for(z), strategy.bet_against(z)
        if f and a:
            raise ParameterError(
                f"strategy bets both ways at assignment {getattr(z, 'bits', z)}"
            )
        if f:
            p_for += p
            cov_for += p * c
        elif a:
            p_against += p
            cov_against += p * c
    beta_for = cov_for / p_for if p_for > 0 else None
    beta_against = cov_against / p_against if p_against > 0 else None
    value = 0.0
    if beta_for is not None:
        value += (beta_for - beta) * p_for
    if beta_against is not None:
        value += (beta - beta_against) * p_against
    return ExpectedReturn(
        value=value,
        stake=beta,
        prob_for=p_for,
        prob_against=p_against,
        coverage_for=beta_for,
        coverage_against=beta_against,
    )


def _expected_return_mc(
    strategy, eta0, design_map, estimator, pop, alpha, replicates, seed, estimand
) -> ExpectedReturn:
    """Mean per-replicate return: win 1-stake on a correct 'for' bet, lose
    the stake on a wrong one, and symmetrically for 'against' bets."""
    beta = strategy.stake
    returns = []
    n_for = hits_for = 0
    n_against = hits_against = 0
    for z, hit in replicate_coverage(
        eta0, design_map, estimator, pop, alpha,
        replicates=replicates, seed=seed, estimand=estimand,
    ):
        f, a = strategy.bet_for(z), strategy.bet_against(z)
        if f and a:
            raise ParameterError(
                f"strategy bets both ways at assignment {getattr(z, 'bits', z)}"
            )
        if f:
            n_for += 1
            hits_for += hit
            returns.append((1.0 - beta) if hit else -beta)
        elif a:
            n_against += 1
            hits_against += hit
            returns.append(beta if not hit else -(1.0 - beta))
        else:
            returns.append(0.0)
    arr = np.asarray(returns)
    n = len(arr)
    return ExpectedReturn(
        value=float(arr.mean()),
        stake=beta,
        prob_for=n_for / n,
        prob_against=n_against / n,
        coverage_for=hits_for / n_for if n_for else None,
        coverage_against=hits_against / n_against if n_against else None,
        se=float(arr.std(ddof=1) / math.sqrt(n)) if n > 1 else None,
    )


@dataclass(frozen=True)
class RelevanceVerdict:
    """Conditional coverage on an event versus the advertised level."""

    probability: float
    conditional_coverage: float
    stake: float
    gap: float
    tolerance: float

    @property
    def relevant(self) -> bool:
        return abs(self.gap) > self.tolerance


def relevant_set_check(
    event: Callable[[object], bool],
    eta0: Design,
    design_map,
    estimator: Estimator,
    pop: Population,
    alpha: float,
    tolerance: float = 1e-9,
    estimand: Callable[[Population], float] = ate,
    profile: CoverageProfile | None = None,
) -> RelevanceVerdict:
    """Check whether betting on the event has (numerically) nonzero return.

    The event is not relevant exactly when the procedure is valid
    conditionally on it at the advertised level.
    """
    prof = _profile(eta0, design_map, estimator, pop, alpha, estimand, profile)
    p_event = cov_event = 0.0
    for z, p, c in zip(prof.assignments, prof.probabilities, prof.covered):
        if event(z):
            p_event += p
            cov_event += p * c
    if p_event <= 0.0:
        raise ParameterError("event has zero probability under the design")
    conditional = cov_event / p_event
    beta = 1.0 - 2.0 * alpha
    return RelevanceVerdict(
        probability=p_event,
        conditional_coverage=conditional,
        stake=beta,
        gap=conditional - beta,
        tolerance=tolerance,
    )


@dataclass(frozen=True)
class BettingAuditRow:
    cell_id: str
    probability: float
    coverage: float
    direction: int  # +1 bet for, -1 bet against, 0 no bet
    contribution: float


@dataclass(frozen=True)
class BettingAudit:
    """Cellwise adversarial strategy and its exact expected return."""

    strategy: BettingStrategy
    expected_return: float
    rows: tuple[BettingAuditRow, ...]
    stake: float
    attained_marginal: float

    @property
    def atom_slack(self) -> float:
        """Overcoverage forced by discreteness: attained minus nominal."""
        return self.attained_marginal - self.stake

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["cell", "cell_prob", "coverage", "bet_direction", "contribution"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.cell_id, repr(r.probability), repr(r.coverage),
                     r.direction, repr(r.contribution)]
                )
            writer.writerow(
                ["TOTAL", repr(1.0), repr(self.attained_marginal), "",
                 repr(self.expected_return)]
            )


def adversarial_strategy(
    eta0: Design,
    design_map,
    estimator: Estimator,
    pop: Population,
    alpha: float,
    w: Statistic,
    tolerance: float = 1e-12,
    estimand: Callable[[Population], float] = ate,
) -> BettingAudit:
    """Bet for every w-cell that overcovers and against every one that undercovers.

    Cells within ``tolerance`` of the nominal level get no bet; a procedure
    exactly calibrated per cell therefore yields the empty strategy with
    zero expected return.
    """
    prof = coverage_profile(
        eta0, design_map, estimator, pop, alpha, estimand=estimand
    )
    beta = 1.0 - 2.0 * alpha
    groups: dict = {}
    for z, p, c in zip(prof.assignments, prof.probabilities, prof.covered):
        groups.setdefault(w(z), []).append((p, c))
    rows = []
    for_cells, against_cells = [], []
    total = 0.0
    for value in sorted(groups, key=_cell_sort_key):
        cell = groups[value]
        prob = math.fsum(p for p, _ in cell)
        cov = math.fsum(p * c for p, c in cell) / prob
        if cov > beta + tolerance:
            direction = 1
            contribution = (cov - beta) * prob
            for_cells.append(value)
        elif cov < beta - tolerance:
            direction = -1
            contribution = (beta - cov) * prob
            against_cells.append(value)
        else:
            direction = 0
            contribution = 0.0
        total += contribution
        rows.append(
            BettingAuditRow(
                cell_id=canonical_cell_id(value),
                probability=prob,
                coverage=cov,
                direction=direction,
                contribution=contribution,
            )
        )
    strategy = BettingStrategy.from_cells(
        w, for_cells, against_cells, stake=beta,
        label=f"adversarial[{w.name}]",
    )
    return BettingAudit(
        strategy=strategy,
        expected_return=total,
        rows=tuple(rows),
        stake=beta,
        attained_marginal=prof.marginal(),
    )


# -- analytic conditional-coverage curve ------------------------------------------


@dataclass(frozen=True)
class AnalyticBernoulliModel:
    """Truncated Bernoulli experiment with a constant additive effect.

    ``vstar`` is the finite-population sample variance of the potential
    outcomes (identical under both arms when the effect is additive).
    """

    n: int
    pi: float
    vstar: float

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ParameterError("need n >= 2")
        if not 0.0 < self.pi < 1.0:
            raise ParameterError("pi must be in (0, 1)")
        if not self.vstar > 0.0:
            raise ParameterError("vstar must be positive")


def truncated_binomial_pmf(n: int, pi: float) -> np.ndarray:
    """PMF of the treated count k = 1..n-1 under truncated Bernoulli assignment."""
    raw = [math.comb(n, k) * pi**k * (1.0 - pi) ** (n - k) for k in range(1, n)]
    total = math.fsum(raw)
    return np.array([r / total for r in raw])


@dataclass(frozen=True)
class AnalyticCurveRow:
    k: int
    proportion: float
    cell_prob: float
    v_k: float
    beta_k: float
    in_low_variance_set: bool


@dataclass(frozen=True)
class AnalyticCurve:
    """Closed-form conditional coverage of the constant-map oracle by treated count."""

    rows: tuple[AnalyticCurveRow, ...]
    unconditional_variance: float
    z_multiplier: float

    def low_variance_set(self) -> tuple[int, ...]:
        """Treated counts whose conditional variance is below the marginal one."""
        return tuple(r.k for r in self.rows if r.in_low_variance_set)

    def beta(self, k: int) -> float:
        for r in self.rows:
            if r.k == k:
                return r.beta_k
        raise KeyError(k)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "proportion", "v_k", "beta_k", "in_K"])
            for r in self.rows:
                writer.writerow(
                    [r.k, repr(r.proportion), repr(r.v_k), repr(r.beta_k),
                     int(r.in_low_variance_set)]
                )


def analytic_beta_curve(
    model: AnalyticBernoulliModel, z_multiplier: float = 1.96
) -> AnalyticCurve:
    """Normal-approximation conditional coverage per treated count.

    The marginal interval half-width is ``z_multiplier * sqrt(V)`` with
    ``V = vstar * E[1/N1 + 1/(n - N1)]`` over the truncated Binomial
    treated count; conditional on ``k`` treated the error variance is
    ``v(k) = vstar * (1/k + 1/(n-k))``, so conditional coverage is
    ``1 - 2 Phi(-z_multiplier * sqrt(V / v(k)))``.
    """
    n, pi, vstar = model.n, model.pi, model.vstar
    pmf = truncated_binomial_pmf(n, pi)
    inv_terms = [1.0 / k + 1.0 / (n - k) for k in range(1, n)]
    big_v = vstar * math.fsum(p * t for p, t in zip(pmf, inv_terms))
    rows = []
    for k in range(1, n):
        v_k = vstar * inv_terms[k - 1]
        beta_k = 1.0 - 2.0 * standard_normal_cdf(
            -z_multiplier * math.sqrt(big_v / v_k)
        )
        rows.append(
            AnalyticCurveRow(
                k=k,
                proportion=k / n,
                cell_prob=float(pmf[k - 1]),
                v_k=v_k,
                beta_k=beta_k,
                in_low_variance_set=v_k < big_v,
            )
        )
    return AnalyticCurve(
        rows=tuple(rows), unconditional_variance=big_v, z_multiplier=z_multiplier
    )
