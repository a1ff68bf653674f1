import math

import numpy as np
import pytest

from polyatree.geometry import Region, binary_table, full_dyadic, measure
from polyatree.marginal import Posterior
from polyatree.prior import PriorSpec
from polyatree.sampler import _region_rng, sample_measure, unstopped_mass_curve

SPEC = PriorSpec(full_dyadic(1), rho=0.5)


class TestSampleMeasure:
    def test_immediate_stop_at_rho_one(self):
        draw = sample_measure(PriorSpec(full_dyadic(2), rho=1.0), max_depth=6, seed=3)
        assert len(draw.leaves) == 1
        assert draw.leaves[0].mass == 1.0
        assert draw.leaves[0].stopped

    def test_masses_sum_to_one(self):
        for i in range(50):
            draw = sample_measure(SPEC, max_depth=10, seed=1, draw_index=i)
            assert abs(draw.total_mass() - 1.0) <= 1e-12
            assert all(leaf.mass >= 0 for leaf in draw.leaves)

    def test_leaves_partition_space(self):
        draw = sample_measure(SPEC, max_depth=8, seed=5)
        assert math.fsum(measure(l.region) for l in draw.leaves) == pytest.approx(1.0)

    def test_seed_determinism(self):
        a = sample_measure(SPEC, max_depth=9, seed=42, draw_index=7)
        b = sample_measure(SPEC, max_depth=9, seed=42, draw_index=7)
        assert a.to_json_dict() == b.to_json_dict()
        c = sample_measure(SPEC, max_depth=9, seed=43, draw_index=7)
        assert a.to_json_dict() != c.to_json_dict()

    def test_posterior_with_no_data_equals_prior(self):
        post = Posterior(np.empty((0, 1)), SPEC)
        for i in range(25):
            a = sample_measure(SPEC, max_depth=8, seed=9, draw_index=i)
            b = sample_measure(post, max_depth=8, seed=9, draw_index=i)
            assert a.to_json_dict() == b.to_json_dict()

    def test_posterior_sampling_masses(self):
        post = Posterior(np.array([[0.3], [0.31], [0.32]]), SPEC)
        draw = sample_measure(post, max_depth=10, seed=2)
        assert abs(draw.total_mass() - 1.0) <= 1e-12

    def test_forced_stop_flag_at_max_depth(self):
        spec = PriorSpec(full_dyadic(1), rho=0.01)
        hit = False
        for i in range(40):
            draw = sample_measure(spec, max_depth=3, seed=4, draw_index=i)
            for leaf in draw.leaves:
                if leaf.region.level == 3 and not leaf.stopped:
                    hit = True
        assert hit

    def test_table_draws_stop_at_cells(self):
        spec = PriorSpec(binary_table(2), rho=0.2)
        draw = sample_measure(spec, max_depth=6, seed=8)
        assert abs(draw.total_mass() - 1.0) <= 1e-12
        for leaf in draw.leaves:
            assert leaf.stopped  # cells are atoms; depth cap 6 > p never binds

    def test_symmetry_of_left_half_mass(self):
        n_draws = 20_000
        total = 0.0
        sq = 0.0
        left = Region("continuous", ((1, 0),))
        for i in range(n_draws):
            draw = sample_measure(SPEC, max_depth=8, seed=123, draw_index=i)
            m = draw.mass_of(left)
            total += m
            sq += m * m
        mean = total / n_draws
        se = math.sqrt((sq / n_draws - mean ** 2) / n_draws)
        assert abs(mean - 0.5) <= 3 * se

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            sample_measure(SPEC, max_depth=0, seed=1)
        with pytest.raises(ValueError):
            sample_measure(SPEC, max_depth=4, seed=-1)
        with pytest.raises(TypeError):
            sample_measure("prior", max_depth=4, seed=1)
        with pytest.raises(ValueError):
            sample_measure(SPEC, scheme=full_dyadic(2), max_depth=4, seed=1)

    def test_density_at_point(self):
        draw = sample_measure(SPEC, max_depth=6, seed=11)
        val = draw.density_at((0.37,))
        assert val >= 0.0


class TestRegionStreams:
    def test_stream_depends_only_on_key(self):
        region = Region("continuous", ((2, 1),))
        a = _region_rng(5, 9, region).random(4)
        b = _region_rng(5, 9, region).random(4)
        assert a.tolist() == b.tolist()

    def test_streams_differ_across_regions(self):
        r1 = Region("continuous", ((2, 1),))
        r2 = Region("continuous", ((2, 2),))
        assert _region_rng(5, 9, r1).random(4).tolist() != _region_rng(5, 9, r2).random(4).tolist()


class TestUnstoppedMassCurve:
    def test_rho_one_all_zero(self):
        curve = unstopped_mass_curve(
            PriorSpec(full_dyadic(1), rho=1.0), depths=range(1, 5), n_draws=200, seed=0
        )
        assert all(mean == 0.0 for _, mean, _ in curve)

    def test_half_rho_depth_four_bound(self):
        curve = unstopped_mass_curve(SPEC, depths=[4], n_draws=2000, seed=1)
        _, mean, se = curve[0]
        assert mean <= 0.0625 + 3 * se

    def test_geometric_decay_bound(self):
        spec = PriorSpec(full_dyadic(1), rho=0.3)
        curve = unstopped_mass_curve(spec, depths=range(1, 9), n_draws=2000, seed=2)
        for k, mean, se in curve:
            assert mean <= 0.7 ** k + 3 * se

    def test_nonincreasing_within_noise(self):
        curve = unstopped_mass_curve(SPEC, depths=range(1, 9), n_draws=2000, seed=3)
        for (k0, m0, s0), (k1, m1, s1) in zip(curve, curve[1:]):
            assert m1 <= m0 + 3 * (s0 + s1)

    def test_min_draws_enforced(self):
        with pytest.raises(ValueError):
            unstopped_mass_curve(SPEC, depths=[1], n_draws=50, seed=0)
