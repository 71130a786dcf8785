import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asif import (
    Assignment,
    Estimator,
    FactorialAssignment,
    Population,
    UndefinedEstimatorError,
    ate,
    balance,
    completely_randomized,
    diff_in_means,
    factorial_main_effect,
    observe,
    post_stratified,
)
from asif.estimators import diff_in_means_rows


class TestDiffInMeans:
    def test_constant_outcomes(self):
        z = Assignment((1, 0, 1, 0))
        assert diff_in_means(z, np.full(4, 7.0)) == 0.0

    def test_arithmetic(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        assert diff_in_means(Assignment((1, 1, 0, 0)), y) == pytest.approx(-2.0)

    def test_empty_arm_raises(self):
        with pytest.raises(UndefinedEstimatorError):
            diff_in_means(Assignment((1, 1, 1)), np.zeros(3))

    def test_unbiased_over_crd_support(self):
        # oracle: exact average over the enumerated support equals the ATE
        rng = np.random.default_rng(17)
        y0 = rng.normal(size=7)
        tau = 1.3
        pop = Population(y0=y0, y1=y0 + tau)
        total = 0.0
        for z, p in completely_randomized(7, 3).enumerate_support():
            total += p * diff_in_means(z, observe(pop, z))
        assert total == pytest.approx(ate(pop), abs=1e-12)

    def test_rows_helper_matches_scalar(self):
        rng = np.random.default_rng(2)
        y = rng.normal(size=8)
        design = completely_randomized(8, 3)
        Z = np.array([z.as_array() for z, _ in design.enumerate_support()])
        vec = diff_in_means_rows(Z, y)
        for row, (z, _) in zip(vec, design.enumerate_support()):
            assert row == pytest.approx(diff_in_means(z, y), abs=1e-12)


class TestPostStratified:
    def test_single_block_equals_diff_in_means(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=6)
        z = Assignment((1, 0, 1, 0, 0, 1))
        assert post_stratified(z, y, ("b",) * 6) == pytest.approx(
            diff_in_means(z, y), abs=1e-12
        )

    def test_equal_proportions_equals_diff_in_means(self):
        # proportional treated counts make the two estimators coincide
        rng = np.random.default_rng(4)
        y = rng.normal(size=8)
        blocks = ("a",) * 4 + ("b",) * 4
        z = Assignment((1, 1, 0, 0, 1, 0, 1, 0))
        assert post_stratified(z, y, blocks) == pytest.approx(
            diff_in_means(z, y), abs=1e-12
        )

    def test_weighted_average_oracle(self):
        # blocks of sizes 2 and 4; recompute the weighted average by hand
        blocks = ("u", "u", "v", "v", "v", "v")
        y = np.array([5.0, 1.0, 3.0, 7.0, 2.0, 6.0])
        z = Assignment((1, 0, 1, 1, 0, 0))
        within_u = 5.0 - 1.0
        within_v = (3.0 + 7.0) / 2 - (2.0 + 6.0) / 2
        expected = (2 / 6) * within_u + (4 / 6) * within_v
        assert post_stratified(z, y, blocks) == pytest.approx(expected, abs=1e-12)

    def test_block_with_empty_arm_raises(self):
        blocks = ("a", "a", "b", "b")
        with pytest.raises(UndefinedEstimatorError):
            post_stratified(Assignment((1, 1, 1, 0)), np.zeros(4), blocks)

    def test_agrees_with_diff_in_means_on_proportional_design(self):
        # same treated share in every block: pointwise agreement across
        # the whole block-randomized support
        from asif import block_randomized

        blocks = ("a",) * 4 + ("b",) * 4
        rng = np.random.default_rng(44)
        y = rng.normal(size=8)
        for z, _ in block_randomized(blocks, (2, 2)).enumerate_support():
            assert post_stratified(z, y, blocks) == pytest.approx(
                diff_in_means(z, y), abs=1e-12
            )


class TestFactorialMainEffect:
    def test_additive_effect_recovered(self):
        z = FactorialAssignment((1, 1, 0, 0), (1, 0, 1, 0))
        delta = 2.5
        y = np.array([delta, delta, 0.0, 0.0])  # driven by factor 1 only
        assert factorial_main_effect(z, y, 0) == pytest.approx(delta)
        assert factorial_main_effect(z, y, 1) == pytest.approx(0.0)

    def test_other_factor_relabeling_invariance(self):
        rng = np.random.default_rng(6)
        y = rng.normal(size=4)
        a = FactorialAssignment((1, 1, 0, 0), (1, 0, 1, 0))
        b = FactorialAssignment((1, 1, 0, 0), (0, 1, 0, 1))
        assert factorial_main_effect(a, y, 0) == pytest.approx(
            factorial_main_effect(b, y, 0), abs=1e-12
        )

    def test_eight_unit_instance_vs_hand_enumeration(self):
        rng = np.random.default_rng(7)
        y = rng.normal(size=8)
        z = FactorialAssignment((1, 0, 1, 0, 1, 0, 1, 0), (1, 1, 0, 0, 1, 1, 0, 0))
        active = [y[i] for i in range(8) if z.factor1[i] == 1]
        passive = [y[i] for i in range(8) if z.factor1[i] == 0]
        expected = sum(active) / len(active) - sum(passive) / len(passive)
        assert factorial_main_effect(z, y, 0) == pytest.approx(expected, abs=1e-12)

    def test_empty_marginal_level(self):
        z = FactorialAssignment((1, 1, 1, 1), (1, 0, 1, 0))
        with pytest.raises(UndefinedEstimatorError):
            factorial_main_effect(z, np.zeros(4), 0)


class TestBalance:
    def test_constant_covariate(self):
        assert balance(Assignment((1, 0, 1)), np.full(3, 2.0)) == 0.0

    def test_arithmetic(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        assert balance(Assignment((1, 0, 1, 0)), x) == pytest.approx(-1.0)

    def test_half_half_antisymmetry(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=6)
        z = Assignment((1, 1, 1, 0, 0, 0))
        assert balance(z.complement(), x) == pytest.approx(-balance(z, x), abs=0.0)


@given(st.integers(0, 2**8 - 1))
def test_diff_in_means_equals_balance_on_outcomes(mask):
    # same formula applied to outcomes and to a covariate column
    bits = tuple((mask >> i) & 1 for i in range(8))
    if not 0 < sum(bits) < 8:
        return
    rng = np.random.default_rng(sum(bits))
    y = rng.normal(size=8)
    z = Assignment(bits)
    assert diff_in_means(z, y) == balance(z, y)


def test_estimator_wrapper_tags():
    est = Estimator.difference_in_means()
    assert est.name == "diff_in_means"
    rng = np.random.default_rng(9)
    y = rng.normal(size=4)
    assert est(Assignment((1, 0, 0, 1)), y) == diff_in_means(Assignment((1, 0, 0, 1)), y)
    blocks = ("a", "a", "b", "b")
    est2 = Estimator.post_stratified(blocks)
    z = Assignment((1, 0, 1, 0))
    assert est2(z, y) == post_stratified(z, y, blocks)


def test_factorial_estimator_wrapper():
    from asif.errors import ParameterError

    est = Estimator.factorial_main_effect(1)
    assert est.name == "factorial_main_effect[1]"
    z = FactorialAssignment((1, 1, 0, 0), (1, 0, 1, 0))
    y = np.array([1.0, 2.0, 3.0, 4.0])
    assert est(z, y) == factorial_main_effect(z, y, 1)
    with pytest.raises(ParameterError):
        Estimator.factorial_main_effect(2)


def test_user_hook_estimator():
    est = Estimator.from_function("treated_mean", lambda z, y: float(
        y[z.as_array() == 1].mean()
    ))
    assert est.name == "treated_mean"
    assert est(Assignment((1, 0, 1, 0)), np.array([2.0, 9.0, 4.0, 9.0])) == 3.0
