"""Finite populations of potential outcomes and treatment assignments.

A population is a fixed table of potential outcomes (one value under
control, one under treatment, per unit), optional covariates, and optional
block labels.  All randomness in this package comes from the assignment
vector; populations are immutable once built.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParameterError


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Assignment:
    """A binary treatment vector, hashable so it can index design supports."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if not all(b in (0, 1) for b in self.bits):
            raise ParameterError(f"assignment entries must be 0 or 1, got {self.bits}")

    @classmethod
    def from_array(cls, z) -> "Assignment":
        return cls(tuple(int(b) for b in z))

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def n1(self) -> int:
        """Number of treated units."""
        return sum(self.bits)

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=int)

    def complement(self) -> "Assignment":
        return Assignment(tuple(1 - b for b in self.bits))


@dataclass(frozen=True)
class FactorialAssignment:
    """A pair of binary vectors, one per factor of a 2x2 factorial layout."""

    factor1: tuple[int, ...]
    factor2: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.factor1) != len(self.factor2):
            raise DimensionError("factor vectors must have equal length")
        for bits in (self.factor1, self.factor2):
            if not all(b in (0, 1) for b in bits):
                raise ParameterError("assignment entries must be 0 or 1")

    def __len__(self) -> int:
        return len(self.factor1)

    def cell_counts(self) -> tuple[int, int, int, int]:
        """Unit counts in the four treatment combinations.

        Order is (both active, factor1 only, factor2 only, both passive).
        """
        n11 = n10 = n01 = n00 = 0
        for a, b in zip(self.factor1, self.factor2):
            if a and b:
                n11 += 1
            elif a:
                n10 += 1
            elif b:
                n01 += 1
            else:
                n00 += 1
        return (n11, n10, n01, n00)

    def factor(self, index: int) -> tuple[int, ...]:
        if index == 0:
            return self.factor1
        if index == 1:
            return self.factor2
        raise ParameterError(f"factor index must be 0 or 1, got {index}")


@dataclass(frozen=True)
class Population:
    """Fixed potential-outcome table with optional covariates and blocks.

    Attributes:
        y0: control potential outcomes, length n.
        y1: treatment potential outcomes, length n.
        x: optional covariate matrix of shape (n, d).
        blocks: optional per-unit block labels; every label must occur at
            least twice.
    """

    y0: np.ndarray
    y1: np.ndarray
    x: np.ndarray | None = None
    blocks: tuple | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "y0", _readonly(self.y0))
        object.__setattr__(self, "y1", _readonly(self.y1))
        n = self.y0.shape[0]
        if self.y0.ndim != 1 or self.y1.ndim != 1:
            raise DimensionError("y0 and y1 must be 1-d vectors")
        if n < 2:
            raise ParameterError(f"population needs at least 2 units, got {n}")
        if self.y1.shape[0] != n:
            raise DimensionError("y0 and y1 must have the same length")
        if not (np.isfinite(self.y0).all() and np.isfinite(self.y1).all()):
            raise ParameterError("potential outcomes must be finite")
        if self.x is not None:
            x = np.array(self.x, dtype=float)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != n:
                raise DimensionError("covariate rows must match unit count")
            if not np.isfinite(x).all():
                raise ParameterError("covariates must be finite")
            x.setflags(write=False)
            object.__setattr__(self, "x", x)
        if self.blocks is not None:
            blocks = tuple(self.blocks)
            if len(blocks) != n:
                raise DimensionError("block labels must match unit count")
            counts: dict = {}
            for b in blocks:
                counts[b] = counts.get(b, 0) + 1
            tiny = [b for b, c in counts.items() if c < 2]
            if tiny:
                raise ParameterError(f"every block needs >= 2 units; too small: {tiny}")
            object.__setattr__(self, "blocks", blocks)

    @property
    def n(self) -> int:
        return self.y0.shape[0]

    def covariate(self, column: int = 0) -> np.ndarray:
        """Single covariate column as a 1-d vector."""
        if self.x is None:
            raise ParameterError("population has no covariates")
        if not 0 <= column < self.x.shape[1]:
            raise ParameterError(f"covariate column {column} out of range")
        return self.x[:, column]


def ate(pop: Population) -> float:
    """Average treatment effect: mean of the unit-level effects y1 - y0."""
    return float(np.mean(pop.y1 - pop.y0))


def observe(pop: Population, z: Assignment) -> np.ndarray:
    """Observed outcome vector: y1 where treated, y0 where control."""
    if not isinstance(z, Assignment):
        # A factorial assignment needs four potential outcomes per unit,
        # which a binary-treatment population does not carry.
        raise ParameterError(
            f"observe needs a binary Assignment, got {type(z).__name__}; "
            "supply observed outcomes directly for factorial analyses"
        )
    if len(z) != pop.n:
        raise DimensionError(f"assignment length {len(z)} != population size {pop.n}")
    zb = z.as_array()
    return np.where(zb == 1, pop.y1, pop.y0)


def load_population_csv(path: str | Path) -> Population:
    """Read a population from a CSV file.

    Expected header: ``y0,y1[,x1..xd][,block]``.  Covariate columns must be
    named ``x1``, ``x2``, ... and are loaded in numeric order.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParameterError(f"{path}: empty CSV")
        fields = [f.strip() for f in reader.fieldnames]
        if "y0" not in fields or "y1" not in fields:
            raise ParameterError(f"{path}: header must contain y0 and y1")
        xcols = sorted(
            (f for f in fields if f.startswith("x") and f[1:].isdigit()),
            key=lambda f: int(f[1:]),
        )
        rows = list(reader)
    if not rows:
        raise ParameterError(f"{path}: no data rows")
    y0 = np.array([float(r["y0"]) for r in rows])
    y1 = np.array([float(r["y1"]) for r in rows])
    x = None
    if xcols:
        x = np.array([[float(r[c]) for c in xcols] for r in rows])
    blocks = None
    if "block" in fields:
        blocks = tuple(r["block"] for r in rows)
    return Population(y0=y0, y1=y1, x=x, blocks=blocks)


def normal_population(
    n: int,
    tau: float = 0.0,
    seed: int = 0,
    n_covariates: int = 0,
    x_effect: tuple[float, ...] | None = None,
    noise_scale: float = 1.0,
) -> Population:
    """Seeded synthetic population with a constant additive effect.

    Control outcomes are ``x @ x_effect + noise`` with standard-normal
    covariates and noise; ``y1 = y0 + tau``.  With no covariates, ``y0`` is
    just the seeded normal noise.
    """
    if n < 2:
        raise ParameterError("need n >= 2")
    if x_effect is not None and not n_covariates:
        raise ParameterError("x_effect given but n_covariates is 0")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = rng.standard_normal((n, n_covariates)) if n_covariates else None
    y0 = noise_scale * rng.standard_normal(n)
    if x is not None and x_effect is not None:
        coef = np.asarray(x_effect, dtype=float)
        if coef.shape != (n_covariates,):
            raise DimensionError("x_effect length must match n_covariates")
        y0 = y0 + x @ coef
    return Population(y0=y0, y1=y0 + tau, x=x)


def balance_identity_population(n: int, seed: int = 0) -> Population:
    """Population whose outcomes equal a single seeded continuous covariate.

    Both potential outcomes are set to the covariate value, so the
    difference-in-means estimator equals the covariate balance statistic
    and the true effect is zero.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = rng.standard_normal(n)
    return Population(y0=x.copy(), y1=x.copy(), x=x[:, None])
