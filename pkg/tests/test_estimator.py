import math

import numpy as np
import pytest

from conftest import tree_interval_edges
from polyatree.estimator import (
    HutterDensity,
    PieceLeaf,
    PiecewiseDensity,
    conditional_mean_density,
    depth_mass_sums,
    grid_average,
    hmap_tree,
    hutter_point_density,
    mean_density_dichotomous,
)
from polyatree.evalsuite import GeneratorSpec, generate
from polyatree.geometry import (
    Region,
    binary_table,
    cycling,
    full_dyadic,
    measure,
    root_region,
)
from polyatree.marginal import Posterior, RecursionLimits, default_limits
from polyatree.prior import PriorSpec, standard_polya_tree
from polyatree.sampler import sample_measure

SPEC_1D = PriorSpec(full_dyadic(1), rho=0.5)


class TestMeanDensity:
    def test_no_data_gives_uniform(self):
        density = mean_density_dichotomous(np.empty((0, 1)), SPEC_1D, query_depth=3)
        assert density.normalization_error() < 1e-15
        assert all(leaf.density == 1.0 for leaf in density.leaves)

    def test_multi_split_scheme_rejected(self):
        with pytest.raises(ValueError):
            mean_density_dichotomous(np.empty((0, 2)), PriorSpec(full_dyadic(2)))

    def test_cycling_2d_supported(self):
        pts = generate(GeneratorSpec("uniform-semibeta-2d", seed=2), 300)
        density = mean_density_dichotomous(pts, PriorSpec(cycling(2)))
        assert density.normalization_error() < 1e-8

    def test_normalization(self, spiky_500):
        density = mean_density_dichotomous(spiky_500, SPEC_1D)
        assert density.normalization_error() < 1e-8

    def test_depth_sums_equal_one(self, spiky_500):
        sums = depth_mass_sums(spiky_500, SPEC_1D, max_depth=12)
        assert np.abs(sums - 1.0).max() < 1e-10

    def test_depth_sums_single_point(self):
        sums = depth_mass_sums(np.array([[0.3]]), SPEC_1D, max_depth=12)
        assert np.abs(sums - 1.0).max() < 1e-10

    def test_depth_sums_baseline(self, spiky_500):
        sums = depth_mass_sums(spiky_500, standard_polya_tree(full_dyadic(1)), max_depth=10)
        assert np.abs(sums - 1.0).max() < 1e-10

    def test_single_observation_matches_sampled_posterior(self):
        # Monte Carlo oracle: average sampled posterior masses over the
        # depth-3 partition and compare with the inductive mean within 3 SE.
        pts = np.array([[0.3]])
        post = Posterior(pts, SPEC_1D)
        density = mean_density_dichotomous(pts, SPEC_1D, posterior=post, query_depth=3)
        regions = [Region("continuous", ((3, i),)) for i in range(8)]
        analytic = np.array(
            [density.evaluate(np.array([(i + 0.5) / 8]))[0] / 8 for i in range(8)]
        )
        n_draws = 40_000
        acc = np.zeros(8)
        acc2 = np.zeros(8)
        for i in range(n_draws):
            draw = sample_measure(post, max_depth=10, seed=777, draw_index=i)
            masses = np.zeros(8)
            for leaf in draw.leaves:
                depth, index = leaf.region.coords[0]
                if depth >= 3:
                    masses[index >> (depth - 3)] += leaf.mass
                else:
                    span = 1 << (3 - depth)
                    masses[index * span : (index + 1) * span] += leaf.mass / span
            acc += masses
            acc2 += masses ** 2
        mc = acc / n_draws
        se = np.sqrt(np.maximum(acc2 / n_draws - mc ** 2, 0.0) / n_draws)
        assert np.all(np.abs(mc - analytic) <= 3 * se + 1e-12)

    def test_empty_branches_truncate_losslessly(self, spiky_500):
        # The pruned-at-empty partition and a full fixed-depth expansion
        # integrate identically over every depth-6 cell.
        pruned = mean_density_dichotomous(spiky_500, SPEC_1D, query_depth=6)
        centers = (np.arange(64) + 0.5) / 64
        full = depth_mass_sums(spiky_500, SPEC_1D, max_depth=6)  # sanity: sums to 1
        assert abs(full[6] - 1.0) < 1e-10
        masses = pruned.evaluate(centers) / 64
        assert abs(masses.sum() - 1.0) < 1e-10


class TestHmapTree:
    def test_no_data_single_leaf(self):
        tree = hmap_tree(np.empty((0, 1)), SPEC_1D)
        assert tree.root.is_leaf
        assert tree.root.stop_reason == "posterior"
        assert tree.root.post_rho == 0.5

    def test_deterministic_rebuild(self, spiky_2500):
        t1 = hmap_tree(spiky_2500, SPEC_1D)
        t2 = hmap_tree(spiky_2500, SPEC_1D)
        assert t1.to_json_dict() == t2.to_json_dict()

    def test_leaves_partition_space(self, spiky_2500):
        tree = hmap_tree(spiky_2500, SPEC_1D)
        total = math.fsum(measure(leaf.region) for leaf in tree.leaves())
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_partition_isolates_components(self, spiky_2500):
        edges = tree_interval_edges(hmap_tree(spiky_2500, SPEC_1D))
        for target in (0.23, 0.232, 0.233, 0.235):
            assert np.abs(edges - target).min() < 1e-4

    def test_boundaries_sharpen_at_larger_n(self):
        # At n = 12500 every component edge is resolved to the dyadic floor.
        pts = generate(GeneratorSpec("spiky-uniforms", seed=0), 12_500)
        edges = tree_interval_edges(hmap_tree(pts, SPEC_1D))
        for target in (0.23, 0.232, 0.233, 0.235):
            assert np.abs(edges - target).min() <= 2e-6

    def test_2d_root_splits_first_dimension(self):
        pts = generate(GeneratorSpec("uniform-semibeta-2d", seed=0), 10_000)
        spec = PriorSpec(full_dyadic(2))
        post = Posterior(pts, spec)
        lam = post.params().lam
        assert lam[0] > lam[1]
        tree = hmap_tree(pts, spec, posterior=post)
        assert tree.root.split_dim == 0

    def test_table_tree_stops_at_cells(self):
        rng = np.random.default_rng(0)
        pts = rng.integers(1, 3, size=(60, 2)).astype(float)
        spec = PriorSpec(binary_table(2))
        tree = hmap_tree(pts, spec)
        for leaf in tree.leaves():
            assert leaf.stop_reason in ("posterior", "precision")
        density = conditional_mean_density(tree)
        assert density.normalization_error() < 1e-12


class TestConditionalMean:
    def test_single_leaf_uniform(self):
        tree = hmap_tree(np.empty((0, 1)), SPEC_1D)
        density = conditional_mean_density(tree)
        assert [leaf.density for leaf in density.leaves] == [1.0]

    def test_beta_posterior_mean_masses(self):
        # one split, 3 points left / 1 right: masses (3.5/5, 1.5/5)
        pts = np.array([[0.1], [0.2], [0.3], [0.8]])
        post = Posterior(pts, SPEC_1D)
        tree = hmap_tree(pts, SPEC_1D, posterior=post)
        assert not tree.root.is_leaf
        assert tree.root.post_alpha == (3.5, 1.5)
        density = conditional_mean_density(tree, post)
        left_mass = math.fsum(
            leaf.density * measure(leaf.region)
            for leaf in density.leaves
            if leaf.region.bounds()[0][1] <= 0.5
        )
        assert left_mass == pytest.approx(3.5 / 5.0, abs=1e-12)

    def test_symmetric_depth_two_quarters(self):
        pts = np.array([[0.1], [0.35], [0.6], [0.85]] * 8)
        post = Posterior(pts, SPEC_1D)
        density = conditional_mean_density(hmap_tree(pts, SPEC_1D, posterior=post), post)
        quarters = {}
        for leaf in density.leaves:
            lo, hi = leaf.region.bounds()[0]
            quarters.setdefault(int(lo * 4), 0.0)
            quarters[int(lo * 4)] += leaf.density * measure(leaf.region)
        assert all(v == pytest.approx(0.25, abs=1e-12) for v in quarters.values())

    def test_mass_telescoping(self, spiky_2500):
        post = Posterior(spiky_2500, SPEC_1D)
        tree = hmap_tree(spiky_2500, SPEC_1D, posterior=post)
        density = conditional_mean_density(tree, post)

        def check(node, mass):
            if node.is_leaf:
                return
            a1, a2 = node.post_alpha
            m1 = mass * (a1 / (a1 + a2))
            m2 = mass * (a2 / (a1 + a2))
            assert abs((m1 + m2) - mass) <= 1e-12 * max(mass, 1.0)
            check(node.children[0], m1)
            check(node.children[1], m2)

        check(tree.root, 1.0)
        assert density.normalization_error() < 1e-10

    def test_mismatched_posterior_rejected(self, spiky_2500, spiky_500):
        tree = hmap_tree(spiky_2500, SPEC_1D)
        with pytest.raises(ValueError):
            conditional_mean_density(tree, Posterior(spiky_500, SPEC_1D))


class TestHutter:
    def test_no_data_density_is_one(self):
        ev = HutterDensity(np.empty((0, 1)), SPEC_1D)
        for x in (0.0, 0.25, 0.5, 0.999, 1.0):
            assert ev.at([x]) == 1.0

    def test_outside_domain_rejected(self):
        ev = HutterDensity(np.empty((0, 1)), SPEC_1D)
        with pytest.raises(ValueError):
            ev.at([1.5])

    def test_matches_inductive_mean(self):
        pts = generate(GeneratorSpec("beta-mixture", seed=3), 30)
        post = Posterior(pts, SPEC_1D)
        ev = HutterDensity(pts, SPEC_1D, posterior=post)
        density = mean_density_dichotomous(pts, SPEC_1D, posterior=post)
        grid = (np.arange(64) + 0.5) / 64
        hutter = ev.on_grid(grid.reshape(-1, 1))
        inductive = density.evaluate(grid)
        assert np.max(np.abs(hutter / inductive - 1.0)) < 1e-10

    def test_convenience_wrapper(self):
        pts = np.array([[0.3], [0.6]])
        ev = HutterDensity(pts, SPEC_1D)
        direct = hutter_point_density([0.5], pts, SPEC_1D)
        assert direct == ev.at([0.5])

    def test_2d_normalization_coarse(self):
        pts = generate(GeneratorSpec("uniform-semibeta-2d", seed=4), 80)
        spec = PriorSpec(full_dyadic(2))
        ev = HutterDensity(pts, spec, RecursionLimits(1e-2))
        grid = (np.arange(16) + 0.5) / 16
        gx, gy = np.meshgrid(grid, grid)
        vals = ev.on_grid(np.column_stack([gx.ravel(), gy.ravel()]))
        assert vals.mean() == pytest.approx(1.0, abs=1e-2)


class TestPiecewiseDensity:
    def test_negative_density_rejected(self):
        root = root_region(full_dyadic(1))
        with pytest.raises(Exception):
            PiecewiseDensity((PieceLeaf(root, -0.5, "posterior"),))

    def test_evaluate_2d_matches_direct_lookup(self):
        pts = generate(GeneratorSpec("uniform-semibeta-2d", seed=1), 2000)
        spec = PriorSpec(full_dyadic(2))
        density = conditional_mean_density(hmap_tree(pts, spec))
        rng = np.random.default_rng(5)
        queries = rng.random((300, 2))
        fast = density.evaluate(queries)
        for q, v in zip(queries, fast):
            direct = next(
                leaf.density for leaf in density.leaves if leaf.region.contains(tuple(q))
            )
            assert v == direct

    def test_grid_average_preserves_mass(self, spiky_500):
        density = mean_density_dichotomous(spiky_500, SPEC_1D)
        edges, values = grid_average(density, 1000)
        assert values.sum() / 1000 == pytest.approx(1.0, abs=1e-8)
        assert (values >= 0).all()

    def test_grid_average_2d_preserves_mass(self):
        pts = generate(GeneratorSpec("uniform-semibeta-2d", seed=1), 2000)
        density = conditional_mean_density(hmap_tree(pts, PriorSpec(full_dyadic(2))))
        edges, values = grid_average(density, 64)
        assert values.sum() / 64 ** 2 == pytest.approx(1.0, abs=1e-8)
