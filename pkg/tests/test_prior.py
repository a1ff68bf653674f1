import numpy as np
import pytest

from polyatree.geometry import (
    Region,
    binary_table,
    cycling,
    full_dyadic,
    num_splits,
    root_region,
    split,
)
from polyatree.prior import (
    ConstantHalf,
    PriorSpec,
    QuadraticDepth,
    TauScaled,
    assignment_weights,
    prior_from_dict,
    prior_to_dict,
    selection_probs,
    standard_polya_tree,
    stopping_prob,
)


def walk(rng, spec, depth):
    region = root_region(spec.scheme)
    path = [region]
    for _ in range(depth):
        m = num_splits(spec.scheme, region)
        if m == 0:
            break
        j = int(rng.integers(1, m + 1))
        region = split(spec.scheme, region, j)[int(rng.integers(0, 2))]
        path.append(region)
    return path


class TestStoppingProb:
    def test_constant_half(self):
        spec = PriorSpec(full_dyadic(2), rho=0.5)
        rng = np.random.default_rng(0)
        for region in walk(rng, spec, 6):
            assert stopping_prob(spec, region) == 0.5

    def test_constant_point_two(self):
        spec = PriorSpec(full_dyadic(1), rho=0.2)
        assert stopping_prob(spec, root_region(spec.scheme)) == 0.2

    def test_baseline_never_stops(self):
        spec = standard_polya_tree(full_dyadic(1))
        assert stopping_prob(spec, root_region(spec.scheme)) == 0.0


class TestSelectionProbs:
    def test_full_dyadic_uniform(self):
        spec = PriorSpec(full_dyadic(2))
        assert selection_probs(spec, root_region(spec.scheme)).tolist() == [0.5, 0.5]

    def test_table_with_one_dim_set(self):
        spec = PriorSpec(binary_table(3))
        region = Region("discrete", (0, 1, 0))
        assert selection_probs(spec, region).tolist() == [0.5, 0.5]

    def test_cycling_single_split(self):
        spec = PriorSpec(cycling(3))
        assert selection_probs(spec, root_region(spec.scheme)).tolist() == [1.0]

    def test_rejected_on_single_cell(self):
        spec = PriorSpec(binary_table(2))
        with pytest.raises(ValueError):
            selection_probs(spec, Region("discrete", (1, 2)))

    def test_sums_to_one(self):
        rng = np.random.default_rng(1)
        for p in (1, 2, 3, 5):
            spec = PriorSpec(full_dyadic(p))
            for region in walk(rng, spec, 5):
                assert abs(selection_probs(spec, region).sum() - 1.0) <= 1e-15


class TestAssignmentWeights:
    def test_constant_half(self):
        spec = PriorSpec(full_dyadic(2))
        assert assignment_weights(spec, root_region(spec.scheme), 1) == (0.5, 0.5)

    def test_tau_two_reduces_to_half(self):
        spec = PriorSpec(full_dyadic(3), alpha_rule=TauScaled(2.0))
        rng = np.random.default_rng(2)
        for region in walk(rng, spec, 20):
            for j in range(1, 4):
                assert assignment_weights(spec, region, j) == (0.5, 0.5)

    def test_tau_two_on_tables_reduces_to_half(self):
        spec = PriorSpec(binary_table(4), alpha_rule=TauScaled(2.0))
        rng = np.random.default_rng(3)
        for region in walk(rng, spec, 4):
            m = num_splits(spec.scheme, region)
            for j in range(1, m + 1):
                assert assignment_weights(spec, region, j) == (0.5, 0.5)

    def test_quadratic_depth_child_level(self):
        spec = standard_polya_tree(full_dyadic(1))
        region = root_region(spec.scheme)
        region = split(spec.scheme, region, 1)[0]
        region = split(spec.scheme, region, 1)[0]  # level 2, child level 3
        assert assignment_weights(spec, region, 1) == (9.0, 9.0)

    def test_quadratic_depth_floor_at_root(self):
        spec = standard_polya_tree(full_dyadic(1))
        assert assignment_weights(spec, root_region(spec.scheme), 1) == (1.0, 1.0)

    def test_strictly_positive(self):
        rng = np.random.default_rng(4)
        for rule in (ConstantHalf(), TauScaled(1.5), TauScaled(2.0)):
            spec = PriorSpec(full_dyadic(2), alpha_rule=rule)
            for region in walk(rng, spec, 10):
                a1, a2 = assignment_weights(spec, region, 1)
                assert a1 > 0 and a2 > 0
        base = standard_polya_tree(cycling(2))
        for region in walk(rng, base, 10):
            a1, a2 = assignment_weights(base, region, 1)
            assert a1 > 0 and a2 > 0


class TestValidation:
    def test_rho_bounds(self):
        with pytest.raises(ValueError):
            PriorSpec(full_dyadic(1), rho=0.0)
        with pytest.raises(ValueError):
            PriorSpec(full_dyadic(1), rho=1.5)
        PriorSpec(full_dyadic(1), rho=1.0)  # degenerate immediate stop: allowed

    def test_tau_positive(self):
        with pytest.raises(ValueError):
            TauScaled(0.0)

    def test_baseline_requires_zero_rho(self):
        with pytest.raises(ValueError):
            PriorSpec(full_dyadic(1), rho=0.5, alpha_rule=QuadraticDepth())

    def test_lambda_rule_fixed(self):
        with pytest.raises(ValueError):
            PriorSpec(full_dyadic(1), lambda_rule="weighted")

    def test_effective_jeffreys(self):
        assert PriorSpec(full_dyadic(1)).effective_jeffreys()
        assert PriorSpec(full_dyadic(1), alpha_rule=TauScaled(2.0)).effective_jeffreys()
        assert not PriorSpec(full_dyadic(1), alpha_rule=TauScaled(1.9)).effective_jeffreys()
        assert not standard_polya_tree(full_dyadic(1)).effective_jeffreys()


class TestSerialization:
    @pytest.mark.parametrize(
        "spec",
        [
            PriorSpec(full_dyadic(2), rho=0.4),
            PriorSpec(cycling(3), rho=0.5, alpha_rule=TauScaled(2.5)),
            standard_polya_tree(binary_table(2)),
        ],
    )
    def test_round_trip(self, spec):
        assert prior_from_dict(prior_to_dict(spec)) == spec

    def test_unknown_rule_rejected(self):
        doc = prior_to_dict(PriorSpec(full_dyadic(1)))
        doc["alpha"] = {"rule": "cubic"}
        with pytest.raises(ValueError):
            prior_from_dict(doc)
