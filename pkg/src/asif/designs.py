"""Randomization designs as discrete distributions over assignments.

A design assigns probabilities to binary assignment vectors (or to pairs
of vectors for the 2x2 factorial families).  Designs are immutable; exact
families can be enumerated up to a size cap and all families can be
sampled directly without enumeration.  Restriction plus renormalization
(``condition``) is the basic operation the conditional analyses build on.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DegenerateDesignError,
    EnumerationTooLargeError,
    ParameterError,
)
from .population import Assignment, FactorialAssignment

# Default cap on exact support size; beyond it only sampling mode is offered.
ENUMERATION_CAP = 2_000_000

AdmissiblePredicate = Callable[[Assignment], bool]


def mixed_arms(z: Assignment) -> bool:
    """True when the assignment has at least one treated and one control unit."""
    return 0 < z.n1 < len(z)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class Design:
    """A probability distribution over assignment vectors.

    Instances are built through the module-level factory functions; the
    constructor is shared plumbing.  A design is either backed by an
    explicit ``(assignment, probability)`` table or by a parametric family
    with a lazy enumerator, an analytic point-mass function, and a direct
    sampler.
    """

    def __init__(
        self,
        family: str,
        params: dict,
        n: int,
        arity: int = 1,
        size_hint: int | None = None,
        enumerator: Callable[[], Iterator] | None = None,
        pmf: Callable | None = None,
        sampler: Callable[[np.random.Generator], object] | None = None,
        assignments: Sequence | None = None,
        probs: Sequence[float] | None = None,
    ):
        self.family = family
        self.params = dict(params)
        self.n = n
        self.arity = arity
        self._size_hint = size_hint
        self._enumerator = enumerator
        self._pmf = pmf
        self._sampler = sampler
        self._assignments: tuple | None = None
        self._probs: np.ndarray | None = None
        self._index: dict | None = None
        if assignments is not None:
            if probs is None:
                raise ParameterError("explicit design needs probabilities")
            self._set_explicit(tuple(assignments), np.asarray(probs, dtype=float))

    # -- construction helpers -------------------------------------------

    def _set_explicit(self, assignments: tuple, probs: np.ndarray) -> None:
        if len(assignments) == 0:
            raise DegenerateDesignError(f"{self.family}: empty support")
        if len(assignments) != len(set(assignments)):
            raise ParameterError(f"{self.family}: duplicate support assignments")
        if probs.shape != (len(assignments),):
            raise ParameterError("probability vector length mismatch")
        if not (probs > 0).all():
            raise ParameterError(f"{self.family}: probabilities must be positive")
        total = math.fsum(probs.tolist())
        if abs(total - 1.0) > 1e-12:
            raise ParameterError(f"{self.family}: probabilities sum to {total!r}")
        probs = probs.copy()
        probs.setflags(write=False)
        self._assignments = assignments
        self._probs = probs
        self._index = {z: i for i, z in enumerate(assignments)}
        self._size_hint = len(assignments)

    def _materialize(self, cap: int | None = None) -> None:
        if self._assignments is not None:
            return
        cap = ENUMERATION_CAP if cap is None else cap
        if self._enumerator is None:
            raise EnumerationTooLargeError(
                f"{self.family}: design is sample-only; use sampling mode"
            )
        if self._size_hint is not None and self._size_hint > cap:
            raise EnumerationTooLargeError(
                f"{self.family}: support size {self._size_hint} exceeds cap {cap}; "
                "use sampling mode"
            )
        assignments = []
        weights = []
        for z, w in self._enumerator():
            assignments.append(z)
            weights.append(w)
            if len(assignments) > cap:
                raise EnumerationTooLargeError(
                    f"{self.family}: support exceeds cap {cap}; use sampling mode"
                )
        if not assignments:
            raise DegenerateDesignError(f"{self.family}: empty support")
        probs = np.asarray(weights, dtype=float)
        probs = probs / math.fsum(weights)
        self._set_explicit(tuple(assignments), probs)

    # -- queries ----------------------------------------------------------

    @property
    def mode(self) -> str:
        """``"exact"`` when the support can be enumerated under the cap."""
        if self._assignments is not None:
            return "exact"
        if self._enumerator is None:
            return "sample"
        if self._size_hint is not None and self._size_hint > ENUMERATION_CAP:
            return "sample"
        return "exact"

    def support_size(self) -> int | None:
        return self._size_hint

    def pmf(self, z) -> float:
        """Point mass at assignment ``z`` (0 off the support)."""
        if self._assignments is not None:
            i = self._index.get(z)
            return float(self._probs[i]) if i is not None else 0.0
        if self._pmf is not None:
            return float(self._pmf(z))
        self._materialize()
        return self.pmf(z)

    def enumerate_support(self, cap: int | None = None) -> list[tuple]:
        """Complete, duplicate-free list of (assignment, probability) pairs."""
        self._materialize(cap)
        return list(zip(self._assignments, self._probs.tolist()))

    def support(self, cap: int | None = None) -> tuple:
        self._materialize(cap)
        return self._assignments

    def probabilities(self, cap: int | None = None) -> np.ndarray:
        self._materialize(cap)
        return self._probs

    def sample(self, rng) -> object:
        """Draw one assignment; deterministic given the generator state."""
        rng = _as_rng(rng)
        if self._sampler is not None:
            return self._sampler(rng)
        self._materialize()
        i = rng.choice(len(self._assignments), p=self._probs)
        return self._assignments[int(i)]

    def descriptor(self) -> dict:
        """Family name plus parameters, for scenario config round-trips."""
        return {"family": self.family, **self.params}

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        size = self._size_hint if self._size_hint is not None else "?"
        return f"Design({self.family}, n={self.n}, support={size})"


def enumerate_support(design: Design, cap: int | None = None) -> list[tuple]:
    """Module-level alias for :meth:`Design.enumerate_support`."""
    return design.enumerate_support(cap)


def sample(design: Design, rng) -> object:
    """Module-level alias for :meth:`Design.sample`."""
    return design.sample(rng)


# -- concrete families ----------------------------------------------------


def _all_bitvectors(n: int) -> Iterator[Assignment]:
    for bits in itertools.product((0, 1), repeat=n):
        yield Assignment(bits)


def bernoulli_truncated(n: int, pi: float) -> Design:
    """Independent Bernoulli(pi) assignment with the two pure assignments removed.

    Mass is proportional to ``pi**k * (1-pi)**(n-k)`` on every assignment
    with at least one treated and one control unit, renormalized.  For
    ``pi = 0.5`` this is uniform over the admissible assignments.
    """
    if n < 2:
        raise ParameterError(f"need n >= 2, got {n}")
    if not 0.0 < pi < 1.0:
        raise ParameterError(f"pi must be in (0, 1), got {pi}")
    norm = 1.0 - pi**n - (1.0 - pi) ** n

    def pmf(z) -> float:
        if not isinstance(z, Assignment) or len(z) != n or not mixed_arms(z):
            return 0.0
        k = z.n1
        return pi**k * (1.0 - pi) ** (n - k) / norm

    def enumerator():
        for z in _all_bitvectors(n):
            if mixed_arms(z):
                yield z, pi**z.n1 * (1.0 - pi) ** (n - z.n1)

    def sampler(rng: np.random.Generator) -> Assignment:
        while True:
            bits = (rng.random(n) < pi).astype(int)
            k = int(bits.sum())
            if 0 < k < n:
                return Assignment(tuple(int(b) for b in bits))

    return Design(
        family="bernoulli_truncated",
        params={"n": n, "pi": pi},
        n=n,
        size_hint=2**n - 2,
        enumerator=enumerator,
        pmf=pmf,
        sampler=sampler,
    )


def bernoulli_propensity(
    p: Sequence[float],
    admissible: AdmissiblePredicate | None = None,
) -> Design:
    """Independent Bernoulli assignment with unit-level propensities.

    The product mass is restricted to assignments passing the admissibility
    predicate (default: at least one treated and one control unit) and
    renormalized.
    """
    probs = np.asarray(p, dtype=float)
    n = probs.shape[0]
    if n < 2:
        raise ParameterError(f"need n >= 2, got {n}")
    if not ((probs > 0.0) & (probs < 1.0)).all():
        raise ParameterError("all propensities must be strictly inside (0, 1)")
    default_predicate = admissible is None
    predicate = mixed_arms if default_predicate else admissible

    def raw_mass(z: Assignment) -> float:
        zb = z.as_array()
        return float(np.prod(np.where(zb == 1, probs, 1.0 - probs)))

    norm = 1.0 - float(np.prod(probs)) - float(np.prod(1.0 - probs))

    def pmf(z) -> float:
        if not isinstance(z, Assignment) or len(z) != n or not predicate(z):
            return 0.0
        return raw_mass(z) / norm

    def enumerator():
        found = False
        for z in _all_bitvectors(n):
            if predicate(z):
                found = True
                yield z, raw_mass(z)
        if not found:
            raise DegenerateDesignError(
                "bernoulli_propensity: no admissible assignments"
            )

    def sampler(rng: np.random.Generator) -> Assignment:
        while True:
            bits = (rng.random(n) < probs).astype(int)
            z = Assignment(tuple(int(b) for b in bits))
            if predicate(z):
                return z

    return Design(
        family="bernoulli_propensity",
        params={"p": probs.tolist()},
        n=n,
        size_hint=2**n if not default_predicate else 2**n - 2,
        enumerator=enumerator,
        # Analytic normalization only matches the default predicate.
        pmf=pmf if default_predicate else None,
        sampler=sampler,
    )


def completely_randomized(
    n: int,
    k: int,
    admissible: AdmissiblePredicate | None = None,
) -> Design:
    """Uniform over all assignments with exactly ``k`` treated units.

    An optional admissibility predicate restricts and renormalizes the
    support (used e.g. to keep every block mixed so a blocked estimator
    stays defined).
    """
    if not 0 < k < n:
        raise ParameterError(f"need 0 < k < n, got k={k}, n={n}")
    count = math.comb(n, k)

    def pmf(z) -> float:
        if not isinstance(z, Assignment) or len(z) != n or z.n1 != k:
            return 0.0
        return 1.0 / count

    def enumerator():
        for treated in itertools.combinations(range(n), k):
            bits = [0] * n
            for i in treated:
                bits[i] = 1
            z = Assignment(tuple(bits))
            if admissible is None or admissible(z):
                yield z, 1.0

    def sampler(rng: np.random.Generator) -> Assignment:
        while True:
            order = rng.permutation(n)
            bits = [0] * n
            for i in order[:k]:
                bits[int(i)] = 1
            z = Assignment(tuple(bits))
            if admissible is None or admissible(z):
                return z

    return Design(
        family="completely_randomized",
        params={"n": n, "k": k},
        n=n,
        size_hint=count,
        enumerator=enumerator,
        pmf=pmf if admissible is None else None,
        sampler=sampler,
    )


def block_labels(blocks: Sequence) -> list:
    """Distinct block labels in sorted order (the kappa alignment order)."""
    return sorted(set(blocks))


def block_randomized(blocks: Sequence, kappa: Sequence[int]) -> Design:
    """Uniform assignment treating exactly ``kappa[j]`` units in block ``j``.

    Blocks are identified by label; ``kappa`` is aligned with the sorted
    distinct labels.  Counts are fixed within each block, independently
    across blocks.
    """
    blocks = list(blocks)
    n = len(blocks)
    labels = block_labels(blocks)
    kappa = [int(v) for v in kappa]
    if len(kappa) != len(labels):
        raise ParameterError(
            f"kappa has {len(kappa)} entries for {len(labels)} blocks"
        )
    members = {lab: [i for i, b in enumerate(blocks) if b == lab] for lab in labels}
    for lab, kj in zip(labels, kappa):
        size = len(members[lab])
        if not 0 < kj < size:
            raise ParameterError(
                f"block {lab!r}: treated count {kj} must be strictly inside (0, {size})"
            )
    count = math.prod(math.comb(len(members[lab]), kj) for lab, kj in zip(labels, kappa))

    def block_counts(z: Assignment) -> tuple[int, ...]:
        return tuple(sum(z.bits[i] for i in members[lab]) for lab in labels)

    def pmf(z) -> float:
        if not isinstance(z, Assignment) or len(z) != n:
            return 0.0
        return 1.0 / count if block_counts(z) == tuple(kappa) else 0.0

    def enumerator():
        per_block = [
            list(itertools.combinations(members[lab], kj))
            for lab, kj in zip(labels, kappa)
        ]
        for chosen in itertools.product(*per_block):
            bits = [0] * n
            for group in chosen:
                for i in group:
                    bits[i] = 1
            yield Assignment(tuple(bits)), 1.0

    def sampler(rng: np.random.Generator) -> Assignment:
        bits = [0] * n
        for lab, kj in zip(labels, kappa):
            idx = np.array(members[lab])
            chosen = rng.permutation(len(idx))[:kj]
            for i in idx[chosen]:
                bits[int(i)] = 1
        return Assignment(tuple(bits))

    return Design(
        family="block_randomized",
        params={"blocks": blocks, "kappa": kappa},
        n=n,
        size_hint=count,
        enumerator=enumerator,
        pmf=pmf,
        sampler=sampler,
    )


def factorial_marginal(n: int, n1: int) -> Design:
    """Separate complete randomization of two factors, each with ``n1`` active.

    Uniform over pairs of assignments with exactly ``n1`` active units per
    factor, excluding pairs that leave any of the four treatment
    combinations empty (where a factorial estimator would be undefined).
    """
    if not 0 < n1 < n:
        raise ParameterError(f"need 0 < n1 < n, got n1={n1}, n={n}")

    def admissible(z: FactorialAssignment) -> bool:
        return all(c > 0 for c in z.cell_counts())

    def enumerator():
        subsets = list(itertools.combinations(range(n), n1))
        found = False
        for a in subsets:
            bits1 = [0] * n
            for i in a:
                bits1[i] = 1
            for b in subsets:
                bits2 = [0] * n
                for i in b:
                    bits2[i] = 1
                z = FactorialAssignment(tuple(bits1), tuple(bits2))
                if admissible(z):
                    found = True
                    yield z, 1.0
        if not found:
            raise DegenerateDesignError(
                f"factorial_marginal(n={n}, n1={n1}): no pair fills all four cells"
            )

    def sampler(rng: np.random.Generator) -> FactorialAssignment:
        attempts = 0
        while True:
            attempts += 1
            pair = []
            for _ in range(2):
                order = rng.permutation(n)
                bits = [0] * n
                for i in order[:n1]:
                    bits[int(i)] = 1
                pair.append(tuple(bits))
            z = FactorialAssignment(pair[0], pair[1])
            if admissible(z):
                return z
            if attempts > 100_000:
                raise DegenerateDesignError(
                    f"factorial_marginal(n={n}, n1={n1}): rejection sampler "
                    "found no admissible pair"
                )

    return Design(
        family="factorial_marginal",
        params={"n": n, "n1": n1},
        n=n,
        arity=2,
        size_hint=math.comb(n, n1) ** 2,
        enumerator=enumerator,
        sampler=sampler,
    )


def factorial_joint(gamma: Sequence[int]) -> Design:
    """Complete randomization over the four joint treatment groups.

    ``gamma`` gives the four cell sizes in the order (both active,
    factor-1 only, factor-2 only, both passive); uniform over all ways of
    partitioning the units into cells of those sizes.
    """
    gamma = tuple(int(g) for g in gamma)
    if len(gamma) != 4:
        raise ParameterError(f"gamma must have length 4, got {len(gamma)}")
    if any(g <= 0 for g in gamma):
        raise ParameterError(f"every cell size must be positive, got {gamma}")
    n = sum(gamma)
    count = math.factorial(n) // math.prod(math.factorial(g) for g in gamma)

    def assemble(cells: tuple[tuple[int, ...], ...]) -> FactorialAssignment:
        bits1 = [0] * n
        bits2 = [0] * n
        for i in cells[0]:
            bits1[i] = 1
            bits2[i] = 1
        for i in cells[1]:
            bits1[i] = 1
        for i in cells[2]:
            bits2[i] = 1
        return FactorialAssignment(tuple(bits1), tuple(bits2))

    def pmf(z) -> float:
        if not isinstance(z, FactorialAssignment) or len(z) != n:
            return 0.0
        return 1.0 / count if z.cell_counts() == gamma else 0.0

    def enumerator():
        units = range(n)
        for c11 in itertools.combinations(units, gamma[0]):
            rest1 = [i for i in units if i not in set(c11)]
            for c10 in itertools.combinations(rest1, gamma[1]):
                rest2 = [i for i in rest1 if i not in set(c10)]
                for c01 in itertools.combinations(rest2, gamma[2]):
                    c00 = tuple(i for i in rest2 if i not in set(c01))
                    yield assemble((c11, c10, c01, c00)), 1.0

    def sampler(rng: np.random.Generator) -> FactorialAssignment:
        order = [int(i) for i in rng.permutation(n)]
        bounds = np.cumsum((0,) + gamma)
        cells = tuple(
            tuple(order[bounds[j] : bounds[j + 1]]) for j in range(4)
        )
        return assemble(cells)

    return Design(
        family="factorial_joint",
        params={"gamma": list(gamma)},
        n=n,
        arity=2,
        size_hint=count,
        enumerator=enumerator,
        pmf=pmf,
        sampler=sampler,
    )


def condition(base: Design, predicate: Callable[[object], bool]) -> Design:
    """Restrict ``base`` to predicate-true assignments and renormalize."""
    pairs = base.enumerate_support()
    kept = [(z, p) for z, p in pairs if predicate(z)]
    if not kept:
        raise DegenerateDesignError(
            f"conditioning {base.family} left an empty support"
        )
    total = math.fsum(p for _, p in kept)
    return Design(
        family=f"conditioned({base.family})",
        params={"base": base.family},
        n=base.n,
        arity=base.arity,
        assignments=[z for z, _ in kept],
        probs=[p / total for _, p in kept],
    )


def explicit_design(
    pairs: Iterable[tuple], n: int, arity: int = 1, family: str = "explicit"
) -> Design:
    """Design from an explicit list of (assignment, probability) pairs."""
    pairs = list(pairs)
    return Design(
        family=family,
        params={},
        n=n,
        arity=arity,
        assignments=[z for z, _ in pairs],
        probs=[p for _, p in pairs],
    )


def same_distribution(a: Design, b: Design, tol: float = 1e-12) -> bool:
    """Exact-mode equality of two designs as distributions."""
    pa = dict(a.enumerate_support())
    pb = dict(b.enumerate_support())
    if set(pa) != set(pb):
        return False
    return all(abs(pa[z] - pb[z]) <= tol for z in pa)
