"""Command-line interface: seeded experiments and CSV/JSON reporting.

Commands: coverage, figure1, zero-coverage, betting-audit, matching-demo,
fuzzy, selftest.  All outputs are deterministic given the master seed and
independent of the worker count.  Exit codes: 0 success, 2 configuration
error, 3 computation error, 4 self-test threshold violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import design_maps, designs, matching
from .errors import AsifError, ConfigError
from .estimators import Estimator, balance, diff_in_means_rows
from .fuzzy import fuzzy_interval
from .oracle import (
    SamplingDistribution,
    coverage,
    coverage_profile,
    oracle_quantiles,
    variance_decomposition_check,
)
from .parallel import parallel_map
from .population import Assignment, Population, normal_population
from .relevance import (
    AnalyticBernoulliModel,
    adversarial_strategy,
    analytic_beta_curve,
    truncated_binomial_pmf,
)
from .scenario import load_scenario
from .streams import rng_for, stable_tag

log = logging.getLogger("asif")


def _configure_logging() -> None:
    level_name = os.environ.get("ASIF_LOG", "WARNING").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _bits_string(z: Assignment) -> str:
    return "".join(str(b) for b in z.bits)


# ---------------------------------------------------------------- coverage


def run_coverage(args) -> int:
    scenario = load_scenario(args.config, seed_override=args.seed)
    mode = args.mode or scenario.mode
    replicates = args.replicates or scenario.replicates
    report = coverage(
        scenario.design,
        scenario.design_map,
        scenario.estimator,
        scenario.population,
        scenario.alpha,
        cell_statistic=scenario.cell_statistic,
        mode=mode,
        replicates=replicates,
        seed=scenario.seed,
    )
    out = _out_dir(args.out)
    report.to_csv(out / "coverage_cells.csv")
    payload = report.to_json_dict()
    payload["scenario"] = scenario.raw
    payload["seed"] = scenario.seed
    _write_json(out / "coverage.json", payload)
    print(
        f"marginal coverage {report.marginal!r} "
        f"(nominal {report.gamma!r}, mode {report.mode})"
    )
    return 0


# ---------------------------------------------------------------- figure1


def _figure1_cell_task(task: tuple) -> tuple:
    """Conditional coverage of the constant-map oracle given k treated.

    Stratified sampling: draws from the fixed-k design directly, since the
    original design conditioned on the treated count is exactly that
    design.  Chunked; streams derive from (seed, cell tag, chunk index).
    """
    y, n, k, reps, seed, lo_q, up_q = task
    total = y.sum()
    hits = 0
    done = 0
    chunk_index = 0
    while done < reps:
        m = min(100_000, reps - done)
        rng = rng_for(seed, stable_tag(f"figure1-cell-{k}"), chunk_index)
        keys = rng.random((m, n))
        idx = np.argpartition(keys, k - 1, axis=1)[:, :k]
        treated_sum = np.take_along_axis(
            np.broadcast_to(y, (m, n)), idx, axis=1
        ).sum(axis=1)
        err = treated_sum / k - (total - treated_sum) / (n - k)
        hits += int(((err >= lo_q) & (err <= up_q)).sum())
        done += m
        chunk_index += 1
    cov = hits / reps
    se = math.sqrt(max(cov * (1.0 - cov), 1e-300) / reps)
    return k, reps, cov, se


def _figure1_marginal_quantiles(
    y: np.ndarray, n: int, pi: float, alpha: float, reps: int, seed: int
) -> tuple[float, float]:
    """Oracle quantiles of the error under the truncated Bernoulli design, by MC."""
    values = []
    done = 0
    chunk_index = 0
    while done < reps:
        m = min(200_000, reps - done)
        rng = rng_for(seed, stable_tag("figure1-marginal"), chunk_index)
        Z = rng.random((m, n)) < pi
        k = Z.sum(axis=1)
        ok = (k > 0) & (k < n)
        values.append(diff_in_means_rows(Z[ok].astype(float), y))
        done += m
        chunk_index += 1
    sample = np.concatenate(values)
    dist = SamplingDistribution.from_samples(sample, mode="mc", replicates=len(sample))
    return oracle_quantiles(dist, alpha)


def run_figure1(args) -> int:
    n, pi, alpha = args.n, args.pi, args.alpha
    if n < 4:
        raise ConfigError("figure1 needs n >= 4")
    if not 0.0 < pi < 1.0:
        raise ConfigError("pi must be inside (0, 1)")
    pop = normal_population(n, tau=args.tau, seed=args.pop_seed)
    # Constant additive effect: the error equals the control-outcome
    # balance for every assignment, so only y0 enters the simulation.
    y = np.asarray(pop.y0, dtype=float)
    lo_q, up_q = _figure1_marginal_quantiles(
        y, n, pi, alpha, args.marginal_replicates, args.seed
    )
    log.info("figure1 marginal quantiles: (%r, %r)", lo_q, up_q)
    pmf = truncated_binomial_pmf(n, pi)
    vstar = float(np.var(y, ddof=1))
    curve = analytic_beta_curve(
        AnalyticBernoulliModel(n=n, pi=pi, vstar=vstar),
        z_multiplier=args.z_multiplier,
    )
    tasks = []
    for k in range(1, n):
        proportion = k / n
        if 0.45 <= proportion <= 0.55:
            reps = args.band_replicates
        elif pmf[k - 1] > args.retained_floor:
            reps = args.replicates
        else:
            reps = args.tail_replicates
        tasks.append((y, n, k, reps, args.seed, lo_q, up_q))
    results = parallel_map(_figure1_cell_task, tasks, args.workers)
    out = _out_dir(args.out)
    with (out / "figure1_curve.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["k", "proportion", "cell_prob", "replicates", "coverage_mc",
             "se_mc", "beta_analytic", "v_k", "in_K"]
        )
        for row, (k, reps, cov, se) in zip(curve.rows, results):
            writer.writerow(
                [k, repr(k / n), repr(float(pmf[k - 1])), reps, repr(cov),
                 repr(se), repr(row.beta_k), repr(row.v_k),
                 int(row.in_low_variance_set)]
            )
    _write_json(
        out / "figure1_meta.json",
        {
            "population": {
                "generator": "normal",
                "n": n,
                "tau": args.tau,
                "seed": args.pop_seed,
            },
            "pi": pi,
            "alpha": alpha,
            "seed": args.seed,
            "marginal_replicates": args.marginal_replicates,
            "replicates": args.replicates,
            "band_replicates": args.band_replicates,
            "tail_replicates": args.tail_replicates,
            "retained_floor": args.retained_floor,
            "lower_quantile": lo_q,
            "upper_quantile": up_q,
            "vstar": vstar,
            "unconditional_variance": curve.unconditional_variance,
            "z_multiplier": args.z_multiplier,
        },
    )
    print(f"figure1 curve written for k=1..{n - 1}")
    return 0


# ---------------------------------------------------------------- zero-coverage


def run_zero_coverage(args) -> int:
    n, alpha = args.n, args.alpha
    if n < 4 or n % 2:
        raise ConfigError("zero-coverage needs an even n >= 4")
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    x = rng.standard_normal(n)
    pop = Population(y0=x.copy(), y1=x.copy(), x=x[:, None])
    eta0 = designs.completely_randomized(n, n // 2)
    est = Estimator.difference_in_means()
    strict_map = design_maps.balance_ball_map(eta0, x, strict=True)
    inclusive_map = design_maps.balance_ball_map(eta0, x, strict=False)
    strict = coverage_profile(
        eta0, strict_map, est, pop, alpha, on_degenerate="exclude"
    )
    inclusive = coverage_profile(eta0, inclusive_map, est, pop, alpha)

    support = eta0.support()
    abs_delta = {z: abs(balance(z, x)) for z in support}
    groups: dict = {}
    for z in support:
        groups.setdefault(abs_delta[z], []).append(z)
    unique_balance = all(
        len(zs) == 2 and zs[0] == zs[1].complement() for zs in groups.values()
    )
    sizes = sorted(len(zs) for zs in groups.values())
    ball_size = {
        z: sum(len(zs) for d, zs in groups.items() if d <= abs_delta[z])
        for z in support
    }
    strict_cov = {z: c for z, c in zip(strict.assignments, strict.covered)}
    inclusive_cov = {
        z: c for z, c in zip(inclusive.assignments, inclusive.covered)
    }
    # With the quantile rule, the extreme atom of a uniform ball of size s
    # is excluded from the interval exactly when 1/s <= alpha.
    ball_rule_ok = all(
        bool(inclusive_cov[z]) == (1.0 / ball_size[z] > alpha) for z in support
    )
    out = _out_dir(args.out)
    with (out / "zero_coverage_cells.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["assignment", "abs_balance", "ball_size", "strict_covered",
             "inclusive_covered"]
        )
        for z in support:
            strict_field = (
                "excluded" if z in strict.excluded else str(int(strict_cov[z]))
            )
            writer.writerow(
                [_bits_string(z), repr(abs_delta[z]), ball_size[z],
                 strict_field, int(inclusive_cov[z])]
            )
    payload = {
        "n": n,
        "alpha": alpha,
        "seed": args.seed,
        "support_size": len(support),
        "strict_coverage": strict.marginal(),
        "strict_excluded_probability": strict.excluded_probability,
        "strict_excluded_count": len(strict.excluded),
        "inclusive_coverage": inclusive.marginal(),
        "unique_balance": unique_balance,
        "balance_group_sizes": sizes[:3] + (["..."] if len(sizes) > 3 else []),
        "inclusive_ball_rule_holds": ball_rule_ok,
        "never_covered_ball_size": math.ceil(1.0 / alpha),
    }
    _write_json(out / "zero_coverage.json", payload)
    print(
        f"strict-ball coverage {strict.marginal()!r} "
        f"(excluded mass {strict.excluded_probability!r}); "
        f"inclusive-ball coverage {inclusive.marginal()!r}; "
        f"unique balance: {unique_balance}"
    )
    return 0


# ---------------------------------------------------------------- betting audit


def run_betting_audit(args) -> int:
    scenario = load_scenario(args.config, seed_override=args.seed)
    if scenario.cell_statistic is None:
        raise ConfigError("betting-audit needs a [cells] statistic in the scenario")
    audit = adversarial_strategy(
        scenario.design,
        scenario.design_map,
        scenario.estimator,
        scenario.population,
        scenario.alpha,
        scenario.cell_statistic,
    )
    out = _out_dir(args.out)
    audit.to_csv(out / "betting_audit.csv")
    _write_json(
        out / "betting_audit.json",
        {
            "expected_return": audit.expected_return,
            "stake": audit.stake,
            "attained_marginal": audit.attained_marginal,
            "atom_slack": audit.atom_slack,
            "n_cells_for": sum(1 for r in audit.rows if r.direction == 1),
            "n_cells_against": sum(1 for r in audit.rows if r.direction == -1),
            "scenario": scenario.raw,
            "seed": scenario.seed,
        },
    )
    print(
        f"expected return {audit.expected_return!r} "
        f"(atom slack {audit.atom_slack!r})"
    )
    return 0


# ---------------------------------------------------------------- matching demo


def run_matching_demo(args) -> int:
    alpha = args.alpha
    if args.fixture == "unstable":
        x, z = matching.pair_instability_fixture()
        n = len(z)
        rng = np.random.default_rng(np.random.SeedSequence(args.seed))
        y0 = x @ np.array([1.0, -0.5]) + rng.standard_normal(n)
        pop = Population(y0=y0, y1=y0 + args.tau, x=x)
    elif args.fixture == "exact":
        x, z = matching.exact_match_fixture()
        n = len(z)
        rng = np.random.default_rng(np.random.SeedSequence(args.seed))
        y0 = x.sum(axis=1) + rng.standard_normal(n)
        pop = Population(y0=y0, y1=y0 + args.tau, x=x)
    else:
        n = args.n
        pop = normal_population(
            n, tau=args.tau, seed=args.seed, n_covariates=2,
            x_effect=(1.0, -0.5),
        )
        x = pop.x
        z = None
    p = matching.logistic_propensities(x, args.alpha0, args.alpha1)
    eta0 = designs.bernoulli_propensity(p)
    if z is None:
        z = eta0.sample(rng_for(args.seed, stable_tag("matching-demo")))
    est = Estimator.difference_in_means()
    matched = matching.greedy_match(z, x)
    check = matching.pairmap_conditionality_check(z, x)
    corrected_map = matching.matched_set_map(eta0, x)
    conditional = design_maps.is_conditional(corrected_map, eta0)
    corrected = coverage(eta0, corrected_map, est, pop, alpha)
    naive = coverage(eta0, matching.as_if_paired_map(x), est, pop, alpha)
    out = _out_dir(args.out)
    matched.to_csv(out / "matching_pairs.csv")
    payload = {
        "n": n,
        "alpha": alpha,
        "alpha0": args.alpha0,
        "alpha1": args.alpha1,
        "seed": args.seed,
        "fixture": args.fixture,
        "observed": _bits_string(z),
        "pairs": [list(pair) for pair in matched.pairs],
        "unmatched": list(matched.unmatched),
        "consistency": check.to_json_dict(),
        "corrected_map_is_conditional": conditional.is_conditional,
        "corrected_coverage": corrected.marginal,
        "naive_coverage": naive.marginal,
        "support_size": len(eta0.enumerate_support()),
    }
    _write_json(out / "matching_demo.json", payload)
    print(
        f"consistency check: {check.consistent}; corrected coverage "
        f"{corrected.marginal!r}; naive coverage {naive.marginal!r}"
    )
    return 0


# ---------------------------------------------------------------- fuzzy


def run_fuzzy(args) -> int:
    scenario = load_scenario(args.config, seed_override=args.seed)
    if not getattr(scenario.design_map, "stochastic", False):
        raise ConfigError("fuzzy needs a stochastic design map in the scenario")
    z = scenario.observed
    if z is None:
        z = scenario.design.sample(rng_for(scenario.seed, stable_tag("fuzzy-obs")))
    interval = fuzzy_interval(
        z,
        scenario.design_map,
        scenario.estimator,
        scenario.population,
        scenario.alpha,
        mode=args.mode,
        draws=args.draws,
        seed=scenario.seed,
    )
    out = _out_dir(args.out)
    interval.to_csv(out / "fuzzy_membership.csv")
    _write_json(
        out / "fuzzy_meta.json",
        {
            "alpha": scenario.alpha,
            "mode": interval.mode,
            "draws": interval.draws,
            "observed": _bits_string(z),
            "n_intervals": len(interval.intervals),
            "grid_size": int(interval.grid.size),
            "scenario": scenario.raw,
            "seed": scenario.seed,
        },
    )
    print(
        f"fuzzy membership over {interval.grid.size} grid points "
        f"({len(interval.intervals)} realized intervals)"
    )
    return 0


# ---------------------------------------------------------------- selftest


def _selftest_population_task(task: tuple) -> tuple:
    """Exact conditional-map validity for one seeded population."""
    n, seed, alpha = task
    pop = normal_population(n, tau=0.7, seed=seed)
    eta0 = designs.bernoulli_truncated(n, 0.5)
    cmap = design_maps.conditional_map(eta0, design_maps.n_treated_statistic())
    report = coverage(eta0, cmap, Estimator.difference_in_means(), pop, alpha)
    gamma = report.gamma
    ok = report.marginal >= gamma and all(c.coverage >= gamma for c in report.cells)
    law = abs(
        report.marginal
        - math.fsum(c.probability * c.coverage for c in report.cells)
    )
    return ok, law, report.marginal


def run_selftest(args) -> int:
    full = args.level == "full"
    alpha = 0.025
    failures = []

    def check(name: str, ok: bool, detail: str) -> None:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not ok:
            failures.append(name)

    # conditional-map validity across seeded populations
    n = 12 if full else 10
    n_pops = 20 if full else 3
    results = parallel_map(
        _selftest_population_task,
        [(n, args.seed + i, alpha) for i in range(n_pops)],
        args.workers,
    )
    ok = all(r[0] for r in results)
    law = max(r[1] for r in results)
    check(
        "conditional-map-validity",
        ok and law <= 1e-12,
        f"{n_pops} populations at n={n}, worst law-of-total residual {law:.2e}",
    )

    # post-stratification validity
    blocks = tuple("AAAABBBB")
    pop = normal_population(8, tau=0.3, seed=args.seed)
    pop = Population(y0=pop.y0, y1=pop.y1, blocks=blocks)
    eta0 = designs.completely_randomized(
        8, 4, admissible=lambda z: 0 < sum(z.bits[:4]) < 4
    )
    pmap = design_maps.conditional_map(
        eta0, design_maps.block_counts_statistic(blocks)
    )
    report = coverage(
        eta0, pmap, Estimator.post_stratified(blocks), pop, alpha
    )
    check(
        "post-stratification-validity",
        all(c.coverage >= report.gamma for c in report.cells),
        f"min cell coverage "
        f"{min(c.coverage for c in report.cells):.4f}",
    )

    # zero-coverage counterexample
    nz = 12 if full else 8
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    x = rng.standard_normal(nz)
    popz = Population(y0=x.copy(), y1=x.copy(), x=x[:, None])
    crd = designs.completely_randomized(nz, nz // 2)
    strict = coverage_profile(
        crd,
        design_maps.balance_ball_map(crd, x, strict=True),
        Estimator.difference_in_means(),
        popz,
        alpha,
        on_degenerate="exclude",
    )
    check(
        "zero-coverage",
        strict.marginal() == 0.0 and len(strict.excluded) == 2,
        f"strict-ball coverage {strict.marginal()!r}, "
        f"{len(strict.excluded)} excluded",
    )

    # stochastic window validity
    nw = 8 if full else 6
    rngw = np.random.default_rng(np.random.SeedSequence(args.seed + 1))
    xw = rngw.standard_normal(nw)
    popw = normal_population(nw, tau=0.4, seed=args.seed + 1)
    popw = Population(y0=popw.y0, y1=popw.y1, x=xw[:, None])
    crdw = designs.completely_randomized(nw, nw // 2)
    spread = [balance(z, xw) for z, _ in crdw.enumerate_support()]
    c = (max(spread) - min(spread)) / 6
    smap = design_maps.stochastic_window_map(crdw, xw, c)
    windows = {
        seg.key
        for z, _ in crdw.enumerate_support()
        for seg in smap.window_mixture(z)
    }
    reportw = coverage(
        crdw, smap, Estimator.difference_in_means(), popw, alpha
    )
    check(
        "stochastic-window-validity",
        reportw.marginal >= reportw.gamma - 1e-12 and len(windows) >= 3,
        f"coverage {reportw.marginal:.4f} over {len(windows)} windows",
    )

    # variance decomposition
    worst = 0.0
    means_ok = True
    trials = 20 if full else 5
    for i in range(trials):
        popv = normal_population(10, tau=0.6, seed=args.seed + 100 + i)
        etav = designs.bernoulli_truncated(10, 0.5)
        dec = variance_decomposition_check(
            etav,
            Estimator.difference_in_means(),
            popv,
            design_maps.n_treated_statistic(),
        )
        worst = max(worst, dec.relative_residual)
        means_ok = means_ok and dec.conditional_means_equal_estimand
    check(
        "variance-decomposition",
        worst <= 1e-12 and means_ok,
        f"worst relative residual {worst:.2e} over {trials} scenarios",
    )

    # betting audit
    nb = 12 if full else 10
    popb = normal_population(nb, tau=0.5, seed=args.seed + 2)
    etab = designs.bernoulli_truncated(nb, 0.5)
    estb = Estimator.difference_in_means()
    w = design_maps.n_treated_statistic()
    audit_const = adversarial_strategy(
        etab, design_maps.constant_map(etab), estb, popb, alpha, w
    )
    audit_cond = adversarial_strategy(
        etab, design_maps.conditional_map(etab, w), estb, popb, alpha, w
    )
    check(
        "betting-audit",
        audit_const.expected_return > 0
        and abs(audit_cond.expected_return) <= audit_cond.atom_slack + 1e-12,
        f"constant-map return {audit_const.expected_return:.4f}, "
        f"conditional-map return {audit_cond.expected_return:.2e} "
        f"<= slack {audit_cond.atom_slack:.2e}",
    )

    # low-variance set invariance under vstar scaling
    sizes = (10, 50, 100) if full else (10, 50)
    invariant = True
    for nn in sizes:
        base_curve = analytic_beta_curve(AnalyticBernoulliModel(nn, 0.5, 1.0))
        scaled = analytic_beta_curve(AnalyticBernoulliModel(nn, 0.5, 10.0))
        invariant = invariant and (
            base_curve.low_variance_set() == scaled.low_variance_set()
        )
    check(
        "low-variance-set-invariance",
        invariant,
        f"vstar x10 leaves the set unchanged for n in {sizes}",
    )

    # quantile guarantee on random discrete distributions
    trials = 1000 if full else 200
    rngq = np.random.default_rng(np.random.SeedSequence(args.seed + 3))
    worst_gap = math.inf
    ok = True
    for _ in range(trials):
        m = int(rngq.integers(1, 60))
        values = rngq.normal(size=m)
        probs = rngq.dirichlet(np.ones(m))
        dist = SamplingDistribution.from_samples(values, probs)
        for a in (0.01, 0.025, 0.05):
            lo_q, up_q = oracle_quantiles(dist, a)
            mass = math.fsum(
                p
                for v, p in zip(dist.values, dist.probs)
                if lo_q <= v <= up_q
            )
            gap = mass - (1 - 2 * a)
            worst_gap = min(worst_gap, gap)
            ok = ok and gap >= -1e-12
    check(
        "quantile-guarantee",
        ok,
        f"{trials} distributions, worst coverage slack {worst_gap:.2e}",
    )

    # matching: instability fixture and corrected analysis
    xf, zf = matching.pair_instability_fixture()
    chk = matching.pairmap_conditionality_check(zf, xf)
    nm = 10 if full else 8
    popm = normal_population(
        nm, tau=0.5, seed=args.seed + 4, n_covariates=2, x_effect=(1.0, -0.5)
    )
    pm = matching.logistic_propensities(popm.x, 0.0, 0.7)
    etam = designs.bernoulli_propensity(pm)
    mmap = matching.matched_set_map(etam, popm.x)
    condm = design_maps.is_conditional(mmap, etam)
    reportm = coverage(
        etam, mmap, Estimator.difference_in_means(), popm, alpha
    )
    check(
        "matching",
        (not chk.consistent)
        and chk.witness is not None
        and condm.is_conditional
        and reportm.marginal >= reportm.gamma,
        f"fixture witness {None if chk.witness is None else _bits_string(chk.witness)}, "
        f"corrected coverage {reportm.marginal:.4f}",
    )

    if full:
        # figure1 acceptance-scale run into a scratch directory
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            fig_args = argparse.Namespace(
                n=100, pi=0.5, alpha=alpha, tau=0.0, pop_seed=7,
                seed=args.seed, out=tmp, workers=args.workers,
                replicates=100_000, band_replicates=400_000,
                tail_replicates=10_000, marginal_replicates=6_000_000,
                retained_floor=1e-4, z_multiplier=1.96,
            )
            run_figure1(fig_args)
            ok, detail = _evaluate_figure1_curve(Path(tmp) / "figure1_curve.csv")
        check("figure1-shape", ok, detail)

    if args.out:
        out = _out_dir(args.out)
        _write_json(
            out / "selftest.json",
            {"level": args.level, "seed": args.seed, "failures": failures},
        )
    return 4 if failures else 0


def _evaluate_figure1_curve(path: Path) -> tuple[bool, str]:
    """Directional and agreement checks on an emitted figure1 curve."""
    rows = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "k": int(row["k"]),
                    "proportion": float(row["proportion"]),
                    "cell_prob": float(row["cell_prob"]),
                    "replicates": int(row["replicates"]),
                    "coverage": float(row["coverage_mc"]),
                    "se": float(row["se_mc"]),
                    "beta": float(row["beta_analytic"]),
                }
            )
    gamma = 0.95
    problems = []
    pmf_total = math.fsum(r["cell_prob"] for r in rows)
    if abs(pmf_total - 1.0) > 1e-12:
        problems.append(f"pmf sums to {pmf_total!r}")
    for r in rows:
        if r["proportion"] <= 0.3 or r["proportion"] >= 0.7:
            if not r["coverage"] + 4 * r["se"] < gamma:
                problems.append(f"k={r['k']} not significantly below {gamma}")
        if r["cell_prob"] > 1e-4 and abs(r["coverage"] - r["beta"]) > 4 * r["se"]:
            problems.append(f"k={r['k']} disagrees with the analytic curve")
    band = [r for r in rows if 0.45 <= r["proportion"] <= 0.55]
    for r in band:
        if r["coverage"] <= gamma - 4 * r["se"]:
            problems.append(f"k={r['k']} significantly below {gamma} in the band")
    weight = math.fsum(r["cell_prob"] for r in band)
    band_cov = math.fsum(r["cell_prob"] * r["coverage"] for r in band) / weight
    band_se = (
        math.sqrt(
            math.fsum((r["cell_prob"] * r["se"]) ** 2 for r in band)
        )
        / weight
    )
    if not band_cov - 4 * band_se > gamma:
        problems.append(
            f"band coverage {band_cov:.5f} not significantly above {gamma}"
        )
    if problems:
        return False, "; ".join(problems[:4])
    return True, (
        f"band coverage {band_cov:.5f} > {gamma} (+{(band_cov - gamma) / band_se:.1f} se)"
    )


# ---------------------------------------------------------------- entry point


def _add_common(parser: argparse.ArgumentParser, seed_default=0) -> None:
    help_text = "master seed"
    if seed_default is None:
        help_text = "master seed (overrides the scenario seed)"
    parser.add_argument("--seed", type=int, default=seed_default, help=help_text)
    parser.add_argument("--out", default="asif-out", help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="worker pool size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asif",
        description="Randomization-based as-if analysis of experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coverage", help="coverage report for a scenario config")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=["exact", "mc"], default=None)
    p.add_argument("--replicates", type=int, default=None)
    _add_common(p, seed_default=None)
    p.set_defaults(fn=run_coverage)

    p = sub.add_parser(
        "figure1", help="conditional-coverage curve for a Bernoulli experiment"
    )
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--pi", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.025)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--pop-seed", type=int, default=7)
    p.add_argument("--replicates", type=int, default=100_000,
                   help="replicates per retained treated count")
    p.add_argument("--band-replicates", type=int, default=400_000,
                   help="replicates for proportions in [0.45, 0.55]")
    p.add_argument("--tail-replicates", type=int, default=10_000,
                   help="replicates for cells below the retained floor")
    p.add_argument("--marginal-replicates", type=int, default=4_000_000,
                   help="draws for the marginal oracle quantiles")
    p.add_argument("--retained-floor", type=float, default=1e-4)
    p.add_argument("--z-multiplier", type=float, default=1.96)
    _add_common(p)
    p.set_defaults(fn=run_figure1)

    p = sub.add_parser(
        "zero-coverage", help="strict balance-ball counterexample"
    )
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--alpha", type=float, default=0.025)
    _add_common(p)
    p.set_defaults(fn=run_zero_coverage)

    p = sub.add_parser("betting-audit", help="adversarial betting audit")
    p.add_argument("--config", required=True)
    _add_common(p, seed_default=None)
    p.set_defaults(fn=run_betting_audit)

    p = sub.add_parser("matching-demo", help="post-matching analysis demo")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.025)
    p.add_argument("--alpha0", type=float, default=0.0)
    p.add_argument("--alpha1", type=float, default=0.7)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument(
        "--fixture", choices=["none", "unstable", "exact"], default="none"
    )
    _add_common(p)
    p.set_defaults(fn=run_matching_demo)

    p = sub.add_parser("fuzzy", help="fuzzy interval for a stochastic map")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=["exact", "mc"], default="exact")
    p.add_argument("--draws", type=int, default=1000)
    _add_common(p, seed_default=None)
    p.set_defaults(fn=run_fuzzy)

    p = sub.add_parser("selftest", help="run the built-in validity battery")
    p.add_argument("--level", choices=["quick", "full"], default="quick")
    _add_common(p)
    # selftest reports on stdout; it only writes files when asked to
    p.set_defaults(fn=run_selftest, out="")

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AsifError as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
