import numpy as np
import pytest

from asif import (
    Assignment,
    Estimator,
    bernoulli_propensity,
    coverage,
    greedy_match,
    is_conditional,
    matched_set_map,
    pairmap_conditionality_check,
    valid_matching_design,
    within_pair_permutations,
)
from asif.errors import EnumerationTooLargeError, ParameterError
from asif.matching import (
    Matching,
    as_if_paired_map,
    exact_match_fixture,
    logistic_propensities,
    matched_set_statistic,
    pair_instability_fixture,
)

DIM = Estimator.difference_in_means()


def reference_greedy(z, x):
    """Independent re-implementation of the documented greedy rule."""
    x = np.asarray(x, dtype=float)
    treated = sorted(i for i in range(len(z)) if z.bits[i])
    controls = sorted(i for i in range(len(z)) if not z.bits[i])
    pairs = []
    for t in treated:
        if not controls:
            break
        scored = sorted(
            controls, key=lambda c: (float(np.linalg.norm(x[t] - x[c])), c)
        )
        pairs.append((t, scored[0]))
        controls.remove(scored[0])
    return tuple(pairs)


class TestGreedyMatch:
    def test_two_units(self):
        m = greedy_match(Assignment((1, 0)), np.array([[0.0], [1.0]]))
        assert m.pairs == ((0, 1),)
        assert m.unmatched == ()

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(50)
        for trial in range(30):
            x = rng.normal(size=(8, 2))
            bits = tuple(int(b) for b in rng.integers(0, 2, size=8))
            if not 0 < sum(bits) < 8:
                continue
            z = Assignment(bits)
            assert greedy_match(z, x).pairs == reference_greedy(z, x)

    def test_tie_break_lowest_control_index(self):
        # controls 1 and 2 are equidistant from the treated unit
        x = np.array([[0.0], [1.0], [-1.0]])
        m = greedy_match(Assignment((1, 0, 0)), x)
        assert m.pairs == ((0, 1),)

    def test_leftovers_unmatched(self):
        x = np.arange(5.0)[:, None]
        m = greedy_match(Assignment((1, 1, 1, 0, 0)), x)
        assert m.n_pairs == 2
        assert len(m.unmatched) == 1

    def test_matching_validation(self):
        with pytest.raises(ParameterError):
            Matching(pairs=((0, 1), (1, 2)), unmatched=())


class TestWithinPairPermutations:
    def test_no_pairs_returns_observed(self):
        z = Assignment((1, 0))
        m = Matching(pairs=(), unmatched=(0, 1))
        assert within_pair_permutations(m, z) == [z]

    def test_two_pairs_give_four_assignments(self):
        z = Assignment((1, 0, 1, 0))
        m = Matching(pairs=((0, 1), (2, 3)), unmatched=())
        perms = within_pair_permutations(m, z)
        assert len(perms) == 4
        for p in perms:
            assert p.bits[0] + p.bits[1] == 1
            assert p.bits[2] + p.bits[3] == 1

    def test_counts_preserved_when_fully_matched(self):
        z = Assignment((1, 0, 1, 0, 1, 0))
        m = greedy_match(z, np.arange(6.0)[:, None])
        for p in within_pair_permutations(m, z):
            assert p.n1 == z.n1

    def test_size_cap(self):
        z = Assignment(tuple([1, 0] * 12))
        m = Matching(
            pairs=tuple((2 * i, 2 * i + 1) for i in range(12)), unmatched=()
        )
        with pytest.raises(EnumerationTooLargeError):
            within_pair_permutations(m, z, cap=1000)


class TestConditionalityCheck:
    def test_unstable_fixture_fails_with_witness(self):
        x, z = pair_instability_fixture()
        check = pairmap_conditionality_check(z, x)
        assert not check.consistent
        assert check.witness is not None
        # the witness really is a within-pair permutation with different matches
        perms = within_pair_permutations(check.matching, z)
        assert check.witness in perms
        assert (
            greedy_match(check.witness, x).pair_sets()
            != check.matching.pair_sets()
        )

    def test_exact_matching_is_stable(self):
        x, z = exact_match_fixture()
        check = pairmap_conditionality_check(z, x)
        assert check.consistent
        assert check.witness is None

    def test_single_pair_always_stable(self):
        x = np.array([[0.0], [3.0]])
        check = pairmap_conditionality_check(Assignment((1, 0)), x)
        assert check.consistent


class TestValidMatchingDesign:
    def setup_method(self):
        rng = np.random.default_rng(60)
        self.n = 8
        self.x = rng.normal(size=(self.n, 2))
        self.p = logistic_propensities(self.x, 0.0, 0.8)
        self.eta0 = bernoulli_propensity(self.p)

    def test_observed_in_own_design(self):
        for z, _ in self.eta0.enumerate_support()[:40]:
            d = valid_matching_design(z, self.eta0, self.x)
            assert d.pmf(z) > 0

    def test_preimages_partition_support(self):
        groups = {}
        for z, _ in self.eta0.enumerate_support():
            groups.setdefault(greedy_match(z, self.x).pair_sets(), []).append(z)
        total = sum(len(v) for v in groups.values())
        assert total == len(self.eta0.enumerate_support())
        z0 = self.eta0.support()[5]
        d = valid_matching_design(z0, self.eta0, self.x)
        members = {w for w, _ in d.enumerate_support()}
        assert members == set(groups[greedy_match(z0, self.x).pair_sets()])

    def test_map_is_conditional_and_valid(self):
        mmap = matched_set_map(self.eta0, self.x)
        assert is_conditional(mmap, self.eta0).is_conditional
        rng = np.random.default_rng(61)
        y0 = self.x @ np.array([1.0, 0.5]) + rng.normal(size=self.n)
        from asif import Population

        pop = Population(y0=y0, y1=y0 + 0.7, x=self.x)
        report = coverage(self.eta0, mmap, DIM, pop, 0.025)
        assert report.marginal >= report.gamma

    def test_naive_map_fails_conditionality_on_unstable_instance(self):
        x, z = pair_instability_fixture()
        eta0 = bernoulli_propensity(logistic_propensities(x, 0.0, 0.5))
        naive = as_if_paired_map(x)
        check = is_conditional(naive, eta0)
        assert not check.is_conditional

    def test_stable_matching_makes_maps_agree_on_supports(self):
        # where the consistency check passes and every unit is matched,
        # the within-pair permutations coincide with the matcher's
        # preimage cell, so the naive and corrected analyses agree
        x, z = exact_match_fixture()
        eta0 = bernoulli_propensity(logistic_propensities(x, 0.0, 0.5))
        stat = matched_set_statistic(x)
        checked = 0
        for w, _ in eta0.enumerate_support():
            if w.n1 != 3:
                continue  # fully matched assignments only
            if not pairmap_conditionality_check(w, x).consistent:
                continue
            checked += 1
            m = greedy_match(w, x)
            perms = set(within_pair_permutations(m, w))
            cell = {
                v
                for v, _ in eta0.enumerate_support()
                if stat(v) == stat(w)
            }
            assert perms == cell
        assert checked >= 8  # the twin-splitting assignments
