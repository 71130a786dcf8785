"""Design maps: rules sending an observed assignment to an analysis design.

A design map is fixed before randomization and picks, for each observable
assignment, the design used to build the oracle interval.  Conditional
maps restrict-and-renormalize the original design over the preimage cells
of a statistic and are guaranteed valid; the balance-ball and moving-window
maps look conditional but are not (they do not partition the support);
the stochastic window map repairs the moving window with an auxiliary
uniform draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np

from .designs import Design, condition, explicit_design
from .errors import DegenerateDesignError, ParameterError
from .estimators import balance

# -- statistics ------------------------------------------------------------


@dataclass(frozen=True)
class Statistic:
    """Named deterministic function of an assignment with hashable values."""

    name: str
    fn: Callable[[object], Hashable]

    def __call__(self, z) -> Hashable:
        return self.fn(z)


def n_treated_statistic() -> Statistic:
    return Statistic("n_treated", lambda z: z.n1)


def block_counts_statistic(blocks: Sequence) -> Statistic:
    """Vector of treated counts within each block (sorted label order)."""
    labels = sorted(set(blocks))
    members = {lab: [i for i, b in enumerate(blocks) if b == lab] for lab in labels}

    def fn(z) -> tuple[int, ...]:
        return tuple(sum(z.bits[i] for i in members[lab]) for lab in labels)

    return Statistic("block_counts", fn)


def cell_counts_statistic() -> Statistic:
    """The four factorial treatment-combination counts."""
    return Statistic("cell_counts", lambda z: z.cell_counts())


def balance_bins_statistic(x: np.ndarray, breakpoints: Sequence[float]) -> Statistic:
    """Index of the ordered balance bin containing the assignment's balance.

    Bins are left-closed, right-open, with the first bin unbounded below
    and the last bin closed (unbounded above); ``breakpoints`` must be
    strictly increasing.
    """
    breaks = np.asarray(breakpoints, dtype=float)
    if breaks.size and not (np.diff(breaks) > 0).all():
        raise ParameterError("breakpoints must be strictly increasing")
    x = np.asarray(x, dtype=float)

    def fn(z) -> int:
        return int(np.searchsorted(breaks, balance(z, x), side="right"))

    return Statistic("balance_bins", fn)


def canonical_cell_id(value) -> str:
    """Deterministic string form of a statistic value, for reports and CSV."""
    if isinstance(value, frozenset):
        return "{" + ",".join(sorted(canonical_cell_id(v) for v in value)) + "}"
    if isinstance(value, tuple):
        return "(" + ",".join(canonical_cell_id(v) for v in value) + ")"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cell_sort_key(value):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (0, value, "")
    if isinstance(value, tuple) and all(
        isinstance(v, (int, float)) for v in value
    ):
        return (1, value, "")
    return (2, 0, canonical_cell_id(value))


# -- map types --------------------------------------------------------------


class DesignMap:
    """Deterministic rule from observed assignment to analysis design."""

    stochastic = False

    def __init__(self, name: str):
        self.name = name

    def __call__(self, z) -> Design:
        raise NotImplementedError

    def cache_key(self, z) -> Hashable | None:
        """Key under which H(z) may be reused; equal keys mean equal designs.

        ``None`` disables memoization for this map.
        """
        return None


class ConstantDesignMap(DesignMap):
    """Maps every assignment to one fixed design."""

    def __init__(self, eta: Design):
        super().__init__(f"constant[{eta.family}]")
        self.eta = eta

    def __call__(self, z) -> Design:
        return self.eta

    def cache_key(self, z):
        return ("constant",)


@dataclass(frozen=True)
class PartitionCell:
    """One preimage cell of a statistic over a design's support."""

    value: Hashable
    assignments: tuple
    probability: float
    design: Design

    @property
    def cell_id(self) -> str:
        return canonical_cell_id(self.value)


class ConditionalDesignMap(DesignMap):
    """Restrict-and-renormalize the base design over the observed statistic cell."""

    def __init__(
        self,
        base: Design,
        statistic: Statistic,
        cell_design_factory: Callable[[Hashable], Design] | None = None,
    ):
        super().__init__(f"conditional[{statistic.name}]")
        self.base = base
        self.statistic = statistic
        self._factory = cell_design_factory
        self._cells: dict | None = None

    def cells(self) -> tuple[PartitionCell, ...]:
        self._build()
        return tuple(self._cells.values())

    def _build(self) -> None:
        if self._cells is not None:
            return
        groups: dict = {}
        for z, p in self.base.enumerate_support():
            groups.setdefault(self.statistic(z), []).append((z, p))
        cells = {}
        for value in sorted(groups, key=_cell_sort_key):
            pairs = groups[value]
            prob = sum(p for _, p in pairs)
            design = explicit_design(
                [(z, p / prob) for z, p in pairs],
                n=self.base.n,
                arity=self.base.arity,
                family=f"{self.base.family}|{self.statistic.name}="
                f"{canonical_cell_id(value)}",
            )
            cells[value] = PartitionCell(
                value=value,
                assignments=tuple(z for z, _ in pairs),
                probability=prob,
                design=design,
            )
        self._cells = cells

    def __call__(self, z) -> Design:
        value = self.statistic(z)
        if self._factory is not None and self._cells is None:
            return self._factory(value)
        self._build()
        cell = self._cells.get(value)
        if cell is None:
            raise ParameterError(
                f"statistic value {value!r} does not occur on the base support"
            )
        return cell.design

    def cache_key(self, z):
        return ("cell", self.statistic(z))


def constant_map(eta: Design) -> ConstantDesignMap:
    """Analyze every assignment with the same design ``eta``."""
    return ConstantDesignMap(eta)


def conditional_map(
    base: Design,
    statistic: Statistic,
    cell_design_factory: Callable[[Hashable], Design] | None = None,
) -> ConditionalDesignMap:
    """Condition ``base`` on the observed value of ``statistic``.

    ``cell_design_factory`` optionally supplies each cell's design directly
    (for bases too large to enumerate); it must agree with restriction plus
    renormalization of the base.
    """
    return ConditionalDesignMap(base, statistic, cell_design_factory)


def partition_from_statistic(
    base: Design, statistic: Statistic
) -> tuple[PartitionCell, ...]:
    """The preimage cells of ``statistic`` over the support of ``base``."""
    return ConditionalDesignMap(base, statistic).cells()


def balance_partition_map(
    base: Design, x: np.ndarray, breakpoints: Sequence[float]
) -> ConditionalDesignMap:
    """Condition on which ordered balance bin the observed balance falls in."""
    return conditional_map(base, balance_bins_statistic(x, breakpoints))


class _BalanceCache:
    """Shared per-support balance values for the balance-based maps."""

    def __init__(self, base: Design, x: np.ndarray):
        self.base = base
        self.x = np.asarray(x, dtype=float)
        self._table: dict | None = None

    def table(self) -> dict:
        if self._table is None:
            self._table = {
                z: balance(z, self.x) for z, _ in self.base.enumerate_support()
            }
        return self._table

    def value(self, z) -> float:
        table = self.table()
        got = table.get(z)
        return balance(z, self.x) if got is None else got


class BalanceBallMap(DesignMap):
    """Condition on balance at least as good as (or strictly better than) observed.

    Not a conditional design map: the balls are nested, not a partition.
    The strict variant is the known-invalid construction whose coverage
    collapses; at the best-balanced assignments its ball is empty and
    evaluation raises.
    """

    def __init__(self, base: Design, x: np.ndarray, strict: bool = False):
        super().__init__("balance_ball_strict" if strict else "balance_ball")
        self.base = base
        self.strict = strict
        self._cache = _BalanceCache(base, x)

    def __call__(self, z) -> Design:
        table = self._cache.table()
        cutoff = abs(self._cache.value(z))
        if self.strict:
            kept = {w for w, d in table.items() if abs(d) < cutoff}
        else:
            kept = {w for w, d in table.items() if abs(d) <= cutoff}
        if not kept:
            raise DegenerateDesignError(
                f"strict balance ball is empty at |balance|={cutoff!r}"
            )
        return condition(self.base, kept.__contains__)

    def cache_key(self, z):
        return ("ball", self.strict, abs(self._cache.value(z)))


class BalanceWindowMap(DesignMap):
    """Condition on balance within +/- c of the observed balance.

    Looks conditional but is not: windows centered at different
    assignments overlap without coinciding.  Included as a negative
    example and as the deterministic skeleton of the stochastic repair.
    """

    def __init__(self, base: Design, x: np.ndarray, c: float):
        super().__init__("balance_window")
        if not c > 0:
            raise ParameterError(f"window halfwidth must be positive, got {c}")
        self.base = base
        self.c = float(c)
        self._cache = _BalanceCache(base, x)

    def __call__(self, z) -> Design:
        table = self._cache.table()
        center = self._cache.value(z)
        lo, hi = center - self.c, center + self.c
        kept = {w for w, d in table.items() if lo <= d <= hi}
        return condition(self.base, kept.__contains__)

    def cache_key(self, z):
        return ("window", self._cache.value(z))


def balance_ball_map(base: Design, x: np.ndarray, strict: bool = False) -> BalanceBallMap:
    return BalanceBallMap(base, x, strict)


def window_map(base: Design, x: np.ndarray, c: float) -> BalanceWindowMap:
    return BalanceWindowMap(base, x, c)


# -- stochastic window map ---------------------------------------------------


@dataclass(frozen=True)
class WindowRealization:
    """One realized analysis design of the stochastic window map.

    The auxiliary draw is kept so results can be reproduced and aggregated
    into fuzzy intervals.
    """

    design: Design
    w: float
    u: float
    key: tuple[int, int]


@dataclass(frozen=True)
class WindowSegment:
    """A u-interval over which the realized window keeps the same atom set."""

    design: Design
    probability: float
    u_lo: float
    u_hi: float
    key: tuple[int, int]


class StochasticWindowMap:
    """Window of halfwidth c around a uniformly jittered center.

    Given the observed assignment, the window center is drawn uniformly
    within +/- c of the observed balance and the base design is restricted
    to assignments whose balance lies within +/- c of that center.  The
    observed assignment always lies in the realized window.
    """

    stochastic = True

    def __init__(self, base: Design, x: np.ndarray, c: float):
        if not c > 0:
            raise ParameterError(f"window halfwidth must be positive, got {c}")
        self.name = "stochastic_window"
        self.base = base
        self.c = float(c)
        self._cache = _BalanceCache(base, x)
        self._sorted: tuple | None = None  # (values, assignments, probs) by balance
        self._position: dict = {}  # assignment -> index in balance order

    def _sorted_support(self):
        if self._sorted is None:
            pairs = self.base.enumerate_support()
            deltas = np.array([self._cache.value(z) for z, _ in pairs])
            order = np.argsort(deltas, kind="stable")
            values = deltas[order]
            assignments = tuple(pairs[i][0] for i in order)
            probs = np.array([pairs[i][1] for i in order])
            self._position = {z: i for i, z in enumerate(assignments)}
            self._sorted = (values, assignments, probs)
        return self._sorted

    def _design_for_range(self, lo_idx: int, hi_idx: int) -> Design:
        values, assignments, probs = self._sorted_support()
        mass = probs[lo_idx:hi_idx].sum()
        return explicit_design(
            [
                (assignments[i], probs[i] / mass)
                for i in range(lo_idx, hi_idx)
            ],
            n=self.base.n,
            arity=self.base.arity,
            family=f"{self.base.family}|window",
        )

    def _active_range(self, w: float, z) -> tuple[int, int]:
        values, _, _ = self._sorted_support()
        lo_idx = int(np.searchsorted(values, w - self.c, side="left"))
        hi_idx = int(np.searchsorted(values, w + self.c, side="right"))
        # Float guard: the observed assignment is inside the window by
        # construction; widen the index range if rounding dropped it.
        iz = self._position.get(z)
        if iz is not None:
            lo_idx = min(lo_idx, iz)
            hi_idx = max(hi_idx, iz + 1)
        return lo_idx, hi_idx

    def realize(self, z, u: float) -> WindowRealization:
        """Realized design for auxiliary draw ``u`` in [0, 1)."""
        if not 0.0 <= u < 1.0:
            raise ParameterError(f"auxiliary draw must be in [0, 1), got {u}")
        center = self._cache.value(z)
        w = center - self.c + 2.0 * self.c * u
        lo_idx, hi_idx = self._active_range(w, z)
        return WindowRealization(
            design=self._design_for_range(lo_idx, hi_idx),
            w=w,
            u=u,
            key=(lo_idx, hi_idx),
        )

    def draw(self, z, rng: np.random.Generator) -> WindowRealization:
        return self.realize(z, float(rng.random()))

    def window_mixture(self, z) -> tuple[WindowSegment, ...]:
        """Exact mixture over the auxiliary draw, as finitely many segments.

        The realized atom set changes only when a window edge crosses a
        balance value, so u splits into segments of constant design; each
        segment carries its uniform probability.
        """
        values, _, _ = self._sorted_support()
        center = self._cache.value(z)
        lo_w, hi_w = center - self.c, center + self.c
        cuts = {lo_w, hi_w}
        for b in values:
            for edge in (b - self.c, b + self.c):
                if lo_w < edge < hi_w:
                    cuts.add(float(edge))
        grid = sorted(cuts)
        segments = []
        for w0, w1 in zip(grid[:-1], grid[1:]):
            if w1 <= w0:
                continue
            mid = 0.5 * (w0 + w1)
            lo_idx, hi_idx = self._active_range(mid, z)
            segments.append(
                WindowSegment(
                    design=self._design_for_range(lo_idx, hi_idx),
                    probability=(w1 - w0) / (2.0 * self.c),
                    u_lo=(w0 - lo_w) / (2.0 * self.c),
                    u_hi=(w1 - lo_w) / (2.0 * self.c),
                    key=(lo_idx, hi_idx),
                )
            )
        return tuple(segments)


def stochastic_window_map(base: Design, x: np.ndarray, c: float) -> StochasticWindowMap:
    return StochasticWindowMap(base, x, c)


# -- conditionality check -----------------------------------------------------


@dataclass(frozen=True)
class ConditionalityCheck:
    """Verdict of the partition-and-distribution test for a design map."""

    is_conditional: bool
    witness: tuple | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.is_conditional


def is_conditional(
    design_map: DesignMap, base: Design, tol: float = 1e-12
) -> ConditionalityCheck:
    """Test whether a deterministic map is a conditioning of ``base``.

    True iff the supports of the per-assignment analysis designs partition
    the support of ``base`` and, within each cell, the analysis design is
    the base distribution restricted and renormalized.  On failure the
    witness is a pair ``(z, z')`` with ``z'`` in the support of ``H(z)``
    but mapped to a different analysis design.
    """
    if getattr(design_map, "stochastic", False):
        raise ParameterError("conditionality check applies to deterministic maps")
    pairs = base.enumerate_support()
    base_pmf = dict(pairs)
    support = [z for z, _ in pairs]
    atoms: dict[int, dict] = {}
    supports: dict[int, frozenset] = {}
    design_of: dict = {}
    for z in support:
        d = design_map(z)
        design_of[z] = d
        if id(d) not in atoms:
            table = dict(d.enumerate_support())
            atoms[id(d)] = table
            supports[id(d)] = frozenset(table)
    for z in support:
        own = supports[id(design_of[z])]
        if z not in own:
            return ConditionalityCheck(
                False,
                witness=(z, z),
                reason="analysis design excludes the observed assignment",
            )
        for other in own:
            if other not in base_pmf:
                return ConditionalityCheck(
                    False,
                    witness=(z, other),
                    reason="analysis design reaches outside the base support",
                )
            other_support = supports[id(design_of[other])]
            if other_support is not own and other_support != own:
                return ConditionalityCheck(
                    False,
                    witness=(z, other),
                    reason="analysis supports overlap without coinciding",
                )
    checked: set[int] = set()
    for z in support:
        d = design_of[z]
        if id(d) in checked:
            continue
        checked.add(id(d))
        table = atoms[id(d)]
        cell_prob = sum(base_pmf[w] for w in table)
        for w, p in table.items():
            if abs(p - base_pmf[w] / cell_prob) > tol:
                return ConditionalityCheck(
                    False,
                    witness=(z, w),
                    reason="cell distribution differs from the base conditioned "
                    "on the cell",
                )
    return ConditionalityCheck(True)
