"""Scenario configuration: TOML files resolved into analysis objects.

A scenario names a population source, a design, a design map, an
estimator, the level, and the evaluation mode.  Every referenced tag must
resolve; anything else is a config error (CLI exit code 2).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from . import design_maps, designs, matching
from .designs import Design
from .errors import AsifError, ConfigError
from .estimators import Estimator
from .population import (
    Assignment,
    Population,
    balance_identity_population,
    load_population_csv,
    normal_population,
)

DESIGN_FAMILIES = (
    "bernoulli_truncated",
    "bernoulli_propensity",
    "completely_randomized",
    "block_randomized",
    "factorial_marginal",
    "factorial_joint",
)

MAP_VARIANTS = (
    "constant",
    "conditional",
    "balance_bins",
    "balance_ball",
    "window",
    "stochastic_window",
    "as_if_paired",
    "matched_set",
)

STATISTIC_TAGS = ("n_treated", "block_counts", "cell_counts", "balance_bins",
                  "matched_pairs")

ESTIMATOR_TAGS = ("diff_in_means", "post_stratified", "factorial_main_effect")


@dataclass
class Scenario:
    """Parsed scenario file plus the resolved analysis objects."""

    alpha: float
    mode: str
    seed: int
    replicates: int | None
    population: Population
    design: Design
    design_map: object
    estimator: Estimator
    cell_statistic: design_maps.Statistic | None
    observed: Assignment | None
    raw: dict = field(default_factory=dict)


def _need(table: dict, key: str, context: str):
    if key not in table:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return table[key]


def _build_population(spec: dict) -> Population:
    source = spec.get("source", "synthetic")
    if source == "csv":
        path = _need(spec, "path", "[population]")
        try:
            return load_population_csv(path)
        except FileNotFoundError as exc:
            raise ConfigError(f"[population]: file not found: {path}") from exc
    if source != "synthetic":
        raise ConfigError(f"[population]: unknown source {source!r}")
    generator = spec.get("generator", "normal")
    n = int(_need(spec, "n", "[population]"))
    seed = int(spec.get("seed", 0))
    try:
        if generator == "normal":
            return normal_population(
                n,
                tau=float(spec.get("tau", 0.0)),
                seed=seed,
                n_covariates=int(spec.get("covariates", 0)),
                x_effect=tuple(spec["x_effect"]) if "x_effect" in spec else None,
                noise_scale=float(spec.get("noise_scale", 1.0)),
            )
        if generator == "balance_identity":
            return balance_identity_population(n, seed=seed)
    except AsifError as exc:
        raise ConfigError(f"[population]: {exc}") from exc
    raise ConfigError(f"[population]: unknown generator {generator!r}")


def _mixed_blocks_predicate(blocks):
    labels = sorted(set(blocks))
    members = {lab: [i for i, b in enumerate(blocks) if b == lab] for lab in labels}

    def predicate(z: Assignment) -> bool:
        for lab in labels:
            k = sum(z.bits[i] for i in members[lab])
            if k == 0 or k == len(members[lab]):
                return False
        return True

    return predicate


def _build_design(spec: dict, pop: Population) -> Design:
    family = _need(spec, "family", "[design]")
    if family not in DESIGN_FAMILIES:
        raise ConfigError(
            f"[design]: unknown family {family!r}; expected one of "
            f"{', '.join(DESIGN_FAMILIES)}"
        )
    try:
        if family == "bernoulli_truncated":
            return designs.bernoulli_truncated(
                int(spec.get("n", pop.n)), float(_need(spec, "pi", "[design]"))
            )
        if family == "bernoulli_propensity":
            if "p" in spec:
                p = np.asarray(spec["p"], dtype=float)
            else:
                if pop.x is None:
                    raise ConfigError(
                        "[design]: a logistic propensity model needs covariates"
                    )
                alpha0 = float(_need(spec, "alpha0", "[design]"))
                alpha1 = float(_need(spec, "alpha1", "[design]"))
                p = matching.logistic_propensities(pop.x, alpha0, alpha1)
            return designs.bernoulli_propensity(p)
        if family == "completely_randomized":
            admissible = None
            if spec.get("require_mixed_blocks", False):
                if pop.blocks is None:
                    raise ConfigError(
                        "[design]: require_mixed_blocks needs population blocks"
                    )
                admissible = _mixed_blocks_predicate(pop.blocks)
            return designs.completely_randomized(
                int(spec.get("n", pop.n)),
                int(_need(spec, "k", "[design]")),
                admissible=admissible,
            )
        if family == "block_randomized":
            if pop.blocks is None:
                raise ConfigError("[design]: block_randomized needs population blocks")
            return designs.block_randomized(
                pop.blocks, [int(v) for v in _need(spec, "kappa", "[design]")]
            )
        if family == "factorial_marginal":
            return designs.factorial_marginal(
                int(spec.get("n", pop.n)), int(_need(spec, "n1", "[design]"))
            )
        if family == "factorial_joint":
            return designs.factorial_joint(
                [int(v) for v in _need(spec, "gamma", "[design]")]
            )
    except ConfigError:
        raise
    except AsifError as exc:
        raise ConfigError(f"[design]: {exc}") from exc
    raise ConfigError(f"[design]: unhandled family {family!r}")


def _build_statistic(
    spec: dict, pop: Population, context: str
) -> design_maps.Statistic:
    tag = _need(spec, "statistic", context)
    if tag not in STATISTIC_TAGS:
        raise ConfigError(
            f"{context}: unknown statistic {tag!r}; expected one of "
            f"{', '.join(STATISTIC_TAGS)}"
        )
    if tag == "n_treated":
        return design_maps.n_treated_statistic()
    if tag == "block_counts":
        if pop.blocks is None:
            raise ConfigError(f"{context}: block_counts needs population blocks")
        return design_maps.block_counts_statistic(pop.blocks)
    if tag == "cell_counts":
        return design_maps.cell_counts_statistic()
    if tag == "balance_bins":
        x = pop.covariate(int(spec.get("covariate", 0)))
        breakpoints = [float(v) for v in _need(spec, "breakpoints", context)]
        return design_maps.balance_bins_statistic(x, breakpoints)
    if tag == "matched_pairs":
        if pop.x is None:
            raise ConfigError(f"{context}: matched_pairs needs covariates")
        return matching.matched_set_statistic(pop.x)
    raise ConfigError(f"{context}: unhandled statistic {tag!r}")


def _build_map(spec: dict, base: Design, pop: Population):
    variant = _need(spec, "variant", "[map]")
    if variant not in MAP_VARIANTS:
        raise ConfigError(
            f"[map]: unknown variant {variant!r}; expected one of "
            f"{', '.join(MAP_VARIANTS)}"
        )
    try:
        if variant == "constant":
            if "design" in spec:
                eta = _build_design(spec["design"], pop)
            else:
                eta = base
            return design_maps.constant_map(eta)
        if variant == "conditional":
            return design_maps.conditional_map(
                base, _build_statistic(spec, pop, "[map]")
            )
        if variant == "balance_bins":
            x = pop.covariate(int(spec.get("covariate", 0)))
            breakpoints = [float(v) for v in _need(spec, "breakpoints", "[map]")]
            return design_maps.balance_partition_map(base, x, breakpoints)
        if variant == "balance_ball":
            x = pop.covariate(int(spec.get("covariate", 0)))
            return design_maps.balance_ball_map(
                base, x, strict=bool(spec.get("strict", False))
            )
        if variant == "window":
            x = pop.covariate(int(spec.get("covariate", 0)))
            return design_maps.window_map(base, x, float(_need(spec, "c", "[map]")))
        if variant == "stochastic_window":
            x = pop.covariate(int(spec.get("covariate", 0)))
            return design_maps.stochastic_window_map(
                base, x, float(_need(spec, "c", "[map]"))
            )
        if variant == "as_if_paired":
            if pop.x is None:
                raise ConfigError("[map]: as_if_paired needs covariates")
            return matching.as_if_paired_map(pop.x)
        if variant == "matched_set":
            if pop.x is None:
                raise ConfigError("[map]: matched_set needs covariates")
            return matching.matched_set_map(base, pop.x)
    except ConfigError:
        raise
    except AsifError as exc:
        raise ConfigError(f"[map]: {exc}") from exc
    raise ConfigError(f"[map]: unhandled variant {variant!r}")


def _build_estimator(spec: dict, pop: Population) -> Estimator:
    name = spec.get("name", "diff_in_means")
    if name not in ESTIMATOR_TAGS:
        raise ConfigError(
            f"[estimator]: unknown name {name!r}; expected one of "
            f"{', '.join(ESTIMATOR_TAGS)}"
        )
    if name == "diff_in_means":
        return Estimator.difference_in_means()
    if name == "post_stratified":
        if pop.blocks is None:
            raise ConfigError("[estimator]: post_stratified needs population blocks")
        return Estimator.post_stratified(pop.blocks)
    if name == "factorial_main_effect":
        return Estimator.factorial_main_effect(int(spec.get("factor", 0)))
    raise ConfigError(f"[estimator]: unhandled name {name!r}")


def load_scenario(path: str | Path, seed_override: int | None = None) -> Scenario:
    """Parse and resolve a scenario TOML file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    alpha = float(raw.get("alpha", 0.025))
    if not 0.0 < alpha < 0.5:
        raise ConfigError(f"alpha must be in (0, 0.5), got {alpha}")
    mode = raw.get("mode", "exact")
    if mode not in ("exact", "mc"):
        raise ConfigError(f"mode must be 'exact' or 'mc', got {mode!r}")
    replicates = raw.get("replicates")
    if replicates is not None:
        replicates = int(replicates)
    if mode == "mc" and (replicates is None or replicates <= 0):
        raise ConfigError("mc mode needs a positive 'replicates' value")
    seed = int(raw.get("seed", 0)) if seed_override is None else seed_override
    pop = _build_population(_need(raw, "population", "scenario"))
    design = _build_design(_need(raw, "design", "scenario"), pop)
    if mode == "exact" and design.mode != "exact":
        raise ConfigError(
            f"[design]: {design.family} with support ~{design.support_size()} "
            "is not enumerable; use mode = \"mc\""
        )
    design_map = _build_map(_need(raw, "map", "scenario"), design, pop)
    estimator = _build_estimator(raw.get("estimator", {}), pop)
    cell_statistic = None
    if "cells" in raw:
        cell_statistic = _build_statistic(raw["cells"], pop, "[cells]")
    observed = None
    if "observed" in raw:
        bits = _need(raw["observed"], "bits", "[observed]")
        try:
            observed = Assignment(tuple(int(b) for b in bits))
        except AsifError as exc:
            raise ConfigError(f"[observed]: {exc}") from exc
        if len(observed) != pop.n:
            raise ConfigError("[observed]: bits length must match population size")
    return Scenario(
        alpha=alpha,
        mode=mode,
        seed=seed,
        replicates=replicates,
        population=pop,
        design=design,
        design_map=design_map,
        estimator=estimator,
        cell_statistic=cell_statistic,
        observed=observed,
        raw=raw,
    )
