import itertools
import math

import numpy as np
import pytest

from asif import (
    Assignment,
    DegenerateDesignError,
    EnumerationTooLargeError,
    FactorialAssignment,
    ParameterError,
    bernoulli_propensity,
    bernoulli_truncated,
    block_randomized,
    completely_randomized,
    condition,
    factorial_joint,
    factorial_marginal,
    same_distribution,
)
from asif.streams import rng_for


def support_dict(design):
    return dict(design.enumerate_support())


class TestBernoulliTruncated:
    def test_two_units(self):
        table = support_dict(bernoulli_truncated(2, 0.5))
        assert table == {
            Assignment((0, 1)): pytest.approx(0.5),
            Assignment((1, 0)): pytest.approx(0.5),
        }

    def test_uniform_over_1022_assignments(self):
        d = bernoulli_truncated(10, 0.5)
        pairs = d.enumerate_support()
        assert len(pairs) == 2**10 - 2
        assert all(p == pytest.approx(1 / 1022) for _, p in pairs)

    def test_masses_match_explicit_renormalization(self):
        # oracle: enumerate all six admissible assignments and normalize
        pi = 0.25
        raw = {}
        for bits in itertools.product((0, 1), repeat=3):
            k = sum(bits)
            if 0 < k < 3:
                raw[Assignment(bits)] = pi**k * (1 - pi) ** (3 - k)
        total = sum(raw.values())
        expected = {z: w / total for z, w in raw.items()}
        table = support_dict(bernoulli_truncated(3, pi))
        assert set(table) == set(expected)
        for z in expected:
            assert table[z] == pytest.approx(expected[z], abs=1e-15)

    def test_invalid_pi(self):
        for pi in (0.0, 1.0, -0.1, 1.7):
            with pytest.raises(ParameterError):
                bernoulli_truncated(4, pi)

    def test_pmf_agrees_with_enumeration(self):
        d = bernoulli_truncated(5, 0.3)
        for z, p in d.enumerate_support():
            assert d.pmf(z) == pytest.approx(p, abs=1e-15)
        assert d.pmf(Assignment((1, 1, 1, 1, 1))) == 0.0


class TestBernoulliPropensity:
    def test_equal_propensities_match_truncated(self):
        d1 = bernoulli_propensity([0.5] * 4)
        d2 = bernoulli_truncated(4, 0.5)
        assert same_distribution(d1, d2)

    def test_masses_match_product_formula(self):
        p = np.array([0.9, 0.1, 0.5])
        raw = {}
        for bits in itertools.product((0, 1), repeat=3):
            if 0 < sum(bits) < 3:
                mass = 1.0
                for i, b in enumerate(bits):
                    mass *= p[i] if b else 1 - p[i]
                raw[Assignment(bits)] = mass
        total = sum(raw.values())
        table = support_dict(bernoulli_propensity(p))
        for z, w in raw.items():
            assert table[z] == pytest.approx(w / total, abs=1e-15)

    def test_degenerate_propensities_rejected(self):
        with pytest.raises(ParameterError):
            bernoulli_propensity([0.5, 0.0])
        with pytest.raises(ParameterError):
            bernoulli_propensity([1.0, 0.5])

    def test_empty_admissible_support(self):
        d = bernoulli_propensity([0.5, 0.5], admissible=lambda z: False)
        with pytest.raises(DegenerateDesignError):
            d.enumerate_support()


class TestCompletelyRandomized:
    def test_two_units(self):
        table = support_dict(completely_randomized(2, 1))
        assert all(p == pytest.approx(0.5) for p in table.values())
        assert len(table) == 2

    def test_counts(self):
        d = completely_randomized(10, 3)
        pairs = d.enumerate_support()
        assert len(pairs) == 120
        assert all(p == pytest.approx(1 / 120) for _, p in pairs)
        assert len(completely_randomized(6, 3).enumerate_support()) == math.comb(6, 3)

    def test_k_out_of_range(self):
        for k in (0, 6, -1):
            with pytest.raises(ParameterError):
                completely_randomized(6, k)


class TestBlockRandomized:
    def test_two_blocks_of_two(self):
        d = block_randomized(("A", "A", "B", "B"), (1, 1))
        table = support_dict(d)
        assert len(table) == 4
        assert all(p == pytest.approx(0.25) for p in table.values())
        assert set(table) == {
            Assignment((1, 0, 1, 0)),
            Assignment((1, 0, 0, 1)),
            Assignment((0, 1, 1, 0)),
            Assignment((0, 1, 0, 1)),
        }

    def test_product_count(self):
        # oracle: C(3,1) * C(3,2) = 9
        d = block_randomized(("a",) * 3 + ("b",) * 3, (1, 2))
        pairs = d.enumerate_support()
        assert len(pairs) == 9
        assert all(p == pytest.approx(1 / 9) for _, p in pairs)

    def test_kappa_bounds(self):
        with pytest.raises(ParameterError):
            block_randomized(("a", "a", "b", "b"), (2, 1))
        with pytest.raises(ParameterError):
            block_randomized(("a", "a", "b", "b"), (0, 1))

    def test_single_block_equals_crd(self):
        d1 = block_randomized(("x",) * 6, (2,))
        d2 = completely_randomized(6, 2)
        assert same_distribution(d1, d2)


class TestFactorial:
    def test_two_units_degenerate(self):
        with pytest.raises(DegenerateDesignError):
            factorial_marginal(2, 1).enumerate_support()

    def test_all_cells_filled_at_n4(self):
        # oracle: exhaustive loop over all 36 pairs of 2-subsets
        subsets = list(itertools.combinations(range(4), 2))
        expected = 0
        for a in subsets:
            for b in subsets:
                cells = {(1, 1): 0, (1, 0): 0, (0, 1): 0, (0, 0): 0}
                for i in range(4):
                    cells[(int(i in a), int(i in b))] += 1
                if all(v > 0 for v in cells.values()):
                    expected += 1
        pairs = factorial_marginal(4, 2).enumerate_support()
        assert len(pairs) == expected == 24
        for z, p in pairs:
            assert all(c >= 1 for c in z.cell_counts())
            assert p == pytest.approx(1 / 24)

    def test_joint_counts(self):
        pairs = factorial_joint((1, 1, 1, 1)).enumerate_support()
        assert len(pairs) == 24
        assert all(p == pytest.approx(1 / 24) for _, p in pairs)
        assert len(factorial_joint((2, 2, 1, 1)).enumerate_support()) == 180

    def test_joint_rejects_zero_cell(self):
        with pytest.raises(ParameterError):
            factorial_joint((2, 2, 0, 2))

    def test_joint_cell_counts_match_gamma(self):
        gamma = (2, 1, 2, 1)
        for z, _ in factorial_joint(gamma).enumerate_support():
            assert z.cell_counts() == gamma


class TestCondition:
    def test_always_true_is_identity(self):
        d = bernoulli_truncated(4, 0.3)
        assert same_distribution(condition(d, lambda z: True), d)

    def test_bernoulli_conditioned_on_count_is_crd(self):
        base = bernoulli_truncated(10, 0.5)
        got = condition(base, lambda z: z.n1 == 3)
        assert same_distribution(got, completely_randomized(10, 3))

    def test_restriction_at_every_count(self):
        base = bernoulli_truncated(12, 0.5)
        for k in range(1, 12):
            got = condition(base, lambda z, k=k: z.n1 == k)
            assert same_distribution(got, completely_randomized(12, k))

    def test_crd_conditioned_on_unit_treated(self):
        got = condition(completely_randomized(6, 3), lambda z: z.bits[0] == 1)
        pairs = got.enumerate_support()
        assert len(pairs) == math.comb(5, 2)
        assert all(p == pytest.approx(0.1) for _, p in pairs)

    def test_empty_condition(self):
        with pytest.raises(DegenerateDesignError):
            condition(completely_randomized(4, 2), lambda z: False)

    def test_composition(self):
        d = bernoulli_truncated(6, 0.4)
        p1 = lambda z: z.n1 >= 2
        p2 = lambda z: z.bits[0] == 1
        once = condition(d, lambda z: p1(z) and p2(z))
        twice = condition(condition(d, p1), p2)
        assert same_distribution(once, twice)


class TestEnumerationAndSampling:
    def test_probabilities_sum_to_one(self):
        for d in (
            bernoulli_truncated(8, 0.37),
            bernoulli_propensity(np.linspace(0.1, 0.9, 6)),
            completely_randomized(8, 3),
            block_randomized(("a", "a", "b", "b", "b"), (1, 2)),
            factorial_marginal(4, 2),
            factorial_joint((2, 2, 2, 2)),
        ):
            probs = [p for _, p in d.enumerate_support()]
            assert abs(math.fsum(probs) - 1.0) <= 1e-12
            assert min(probs) > 0

    def test_enumeration_cap(self):
        d = completely_randomized(8, 4)
        with pytest.raises(EnumerationTooLargeError, match="sampling mode"):
            d.enumerate_support(cap=10)

    def test_propensity_pmf_with_custom_predicate(self):
        # no analytic normalization with a caller predicate: the point
        # mass comes from enumeration
        d = bernoulli_propensity([0.3, 0.6, 0.8], admissible=lambda z: z.n1 == 2)
        table = dict(d.enumerate_support())
        for z, p in table.items():
            assert d.pmf(z) == pytest.approx(p, abs=1e-15)
        assert d.pmf(Assignment((1, 0, 0))) == 0.0

    def test_sample_only_mode_reports(self):
        d = completely_randomized(100, 50)
        assert d.mode == "sample"
        z = d.sample(rng_for(0, 1))
        assert z.n1 == 50

    def test_crd_samples_respect_count(self):
        d = completely_randomized(9, 4)
        for i in range(50):
            assert d.sample(rng_for(3, i)).n1 == 4

    def test_identical_seeds_identical_draws(self):
        d = bernoulli_truncated(12, 0.5)
        assert d.sample(rng_for(11, 0)) == d.sample(rng_for(11, 0))
        d2 = block_randomized(("a",) * 4 + ("b",) * 4, (2, 2))
        assert d2.sample(rng_for(4, 2)) == d2.sample(rng_for(4, 2))

    def test_empirical_frequencies(self):
        # 1e5 draws from the 6-point design; each frequency within 4 MC se
        d = bernoulli_truncated(3, 0.5)
        counts = {}
        rng = rng_for(123, 0)
        n_draws = 100_000
        for _ in range(n_draws):
            z = d.sample(rng)
            counts[z] = counts.get(z, 0) + 1
        se = math.sqrt((1 / 6) * (5 / 6) / n_draws)
        for z, _ in d.enumerate_support():
            assert abs(counts.get(z, 0) / n_draws - 1 / 6) < 4 * se

    def test_factorial_sampler_hits_admissible(self):
        d = factorial_marginal(4, 2)
        z = d.sample(rng_for(9, 0))
        assert isinstance(z, FactorialAssignment)
        assert all(c >= 1 for c in z.cell_counts())

    def test_descriptor_round_trip(self):
        d = bernoulli_truncated(6, 0.25)
        desc = d.descriptor()
        assert desc == {"family": "bernoulli_truncated", "n": 6, "pi": 0.25}

    def test_explicit_design_sampling(self):
        # conditioned designs sample from their stored table; integer
        # seeds are accepted in place of a generator
        base = completely_randomized(6, 3)
        d = condition(base, lambda z: z.bits[0] == 1)
        draws = [d.sample(rng_for(1, i)) for i in range(200)]
        assert all(z.bits[0] == 1 and z.n1 == 3 for z in draws)
        assert len(set(draws)) > 1
        assert d.sample(7) == d.sample(7)

    def test_module_level_aliases(self):
        from asif.designs import enumerate_support, sample

        d = completely_randomized(4, 2)
        assert enumerate_support(d) == d.enumerate_support()
        assert sample(d, rng_for(0, 0)) == d.sample(rng_for(0, 0))

    def test_analytic_pmf_without_enumeration(self):
        # the point-mass query works on designs far beyond the cap
        d = bernoulli_truncated(100, 0.5)
        bits = [1] * 40 + [0] * 60
        z = Assignment(tuple(bits))
        norm = 1.0 - 2.0 * 0.5**100
        assert d.pmf(z) == pytest.approx(0.5**100 / norm)
        assert d.pmf(Assignment((1,) * 100)) == 0.0
        crd = completely_randomized(100, 50)
        assert crd.pmf(Assignment(tuple([1] * 50 + [0] * 50))) == pytest.approx(
            1 / math.comb(100, 50)
        )
        assert crd.pmf(z) == 0.0

    def test_tiny_n_rejected(self):
        with pytest.raises(ParameterError):
            bernoulli_truncated(1, 0.5)
        with pytest.raises(ParameterError):
            bernoulli_propensity([0.5])
