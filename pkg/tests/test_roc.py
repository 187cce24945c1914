import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchbench import roc
from patchbench.affinity import AffinityMap, affinity_from_patch
from patchbench.tensorio import FeatureMap, PatchMask


def amap(values, seed=(0, 0)):
    arr = np.asarray(values, dtype=np.float64)
    return AffinityMap(h=arr.shape[0], w=arr.shape[1], seed=seed, values=arr)


def pmask(bits):
    return PatchMask(image_id="t", object_id=0,
                     bits=np.asarray(bits, dtype=bool))


def random_trial(rng, h=8, w=8):
    """Random affinity map + mask with both classes present off-seed."""
    while True:
        values = rng.uniform(-1, 1, size=(h, w))
        seed = (int(rng.integers(h)), int(rng.integers(w)))
        values[seed] = 1.0
        bits = rng.random((h, w)) < 0.5
        bits[seed] = True
        a, m = amap(values, seed), pmask(bits)
        try:
            roc.sweep(a, m, roc.default_grid(5))
        except roc.DegenerateMaskError:
            continue
        return a, m


class TestGrids:
    def test_default_grid(self):
        g = roc.default_grid()
        assert len(g) == 201
        assert g.thresholds[0] == 1.0 and g.thresholds[-1] == -1.0
        assert np.allclose(np.diff(g.thresholds), -0.01)

    def test_grid_from_values_dedupes_descending(self):
        g = roc.grid_from_values(np.array([0.2, 0.9, 0.2, -0.5]))
        assert np.array_equal(g.thresholds, [0.9, 0.2, -0.5])

    def test_nonmonotone_rejected(self):
        with pytest.raises(ValueError):
            roc.ThresholdGrid(np.array([0.5, 0.5]))


class TestSweep:
    def test_perfect_separation_points(self):
        values = [[1.0, 1.0], [0.0, 0.0]]
        bits = [[True, True], [False, False]]
        pts = roc.sweep(amap(values), pmask(bits),
                        roc.ThresholdGrid(np.array([1.0, 0.5, 0.0])))
        assert pts == [(0.0, 1.0), (0.0, 1.0), (1.0, 1.0)]

    def test_constant_affinity_below_threshold(self):
        pts = roc.sweep(amap([[1.0, 0.3], [0.3, 0.3]]),
                        pmask([[True, True], [False, False]]),
                        roc.ThresholdGrid(np.array([0.5])))
        assert pts == [(0.0, 0.0)]

    def test_threshold_inclusive(self):
        pts = roc.sweep(amap([[1.0, 0.3], [0.3, 0.3]]),
                        pmask([[True, True], [False, False]]),
                        roc.ThresholdGrid(np.array([0.3])))
        assert pts == [(1.0, 1.0)]

    def test_seed_excluded_from_counts(self):
        # Without exclusion the lone object patch (the seed) would give tpr 1.
        a = amap([[1.0, -0.9], [-0.9, -0.9]])
        m = pmask([[True, True], [False, False]])
        pts = roc.sweep(a, m, roc.ThresholdGrid(np.array([0.0])))
        assert pts == [(0.0, 0.0)]

    def test_degenerate_mask(self):
        with pytest.raises(roc.DegenerateMaskError):
            roc.sweep(amap([[1.0, 0.5]]), pmask([[True, True]]),
                      roc.default_grid(3))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            roc.sweep(amap(np.ones((2, 2))), pmask(np.ones((3, 3), bool)),
                      roc.default_grid(3))

    def test_matches_brute_force_counts(self):
        rng = np.random.default_rng(0)
        a, m = random_trial(rng)
        grid = roc.default_grid(21)
        pts = roc.sweep(a, m, grid)
        keep = np.ones(a.values.size, dtype=bool)
        keep[a.seed[0] * a.w + a.seed[1]] = False
        vals, bits = a.values.ravel()[keep], m.bits.ravel()[keep]
        for theta, (fpr, tpr) in zip(grid.thresholds, pts):
            active = vals >= theta
            assert tpr == pytest.approx((active & bits).sum() / bits.sum())
            assert fpr == pytest.approx((active & ~bits).sum() / (~bits).sum())

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_rates_monotone_in_threshold(self, seed):
        rng = np.random.default_rng(seed)
        a, m = random_trial(rng, 6, 6)
        pts = np.asarray(roc.sweep(a, m, roc.default_grid(41)))
        assert np.all(np.diff(pts[:, 0]) >= 0)
        assert np.all(np.diff(pts[:, 1]) >= 0)


class TestCurvesAndAuc:
    def test_perfect_separation_auc_exactly_one(self):
        values = [[1.0, 0.9, 0.8], [0.7, -0.2, -0.3], [-0.4, -0.5, -0.6]]
        bits = [[True, True, True], [True, False, False],
                [False, False, False]]
        a, m = amap(values), pmask(bits)
        curve = roc.curve_from_points(
            roc.sweep(a, m, roc.grid_from_values(a.values)))
        assert curve.auc == 1.0
        assert roc.auc_rank_oracle(a, m) == 1.0

    def test_mirrored_scores_give_half(self):
        # object scores {0.8, 0.2} == background scores {0.8, 0.2}
        a = amap([[1.0, 0.8, 0.2, 0.8, 0.2]])
        m = pmask([[True, True, True, False, False]])
        assert roc.auc_rank_oracle(a, m) == pytest.approx(0.5)

    def test_ties_counted_half(self):
        # object {0.5} vs background {0.5, 0.3}: U = 0.5 + 1 over 2 pairs
        a = amap([[1.0, 0.5], [0.5, 0.3]])
        m = pmask([[True, True], [False, False]])
        assert roc.auc_rank_oracle(a, m) == pytest.approx(0.75)

    def test_exact_grid_trapezoid_equals_rank_auc(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            a, m = random_trial(rng)
            curve = roc.curve_from_points(
                roc.sweep(a, m, roc.grid_from_values(a.values)))
            assert abs(curve.auc - roc.auc_rank_oracle(a, m)) < 1e-9

    def test_label_swap_complements_auc(self):
        rng = np.random.default_rng(2)
        a, m = random_trial(rng)
        flipped = pmask(~m.bits)
        assert roc.auc_rank_oracle(a, m) + roc.auc_rank_oracle(a, flipped) \
            == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        a, m = random_trial(rng, 6, 6)
        cubed = amap(a.values ** 3, a.seed)
        assert roc.auc_rank_oracle(a, m) == pytest.approx(
            roc.auc_rank_oracle(cubed, m), abs=1e-12)

    def test_average_curves_single_identity(self):
        rng = np.random.default_rng(3)
        a, m = random_trial(rng)
        pts = roc.sweep(a, m, roc.default_grid(51))
        avg = roc.average_curves([pts])
        solo = roc.curve_from_points(pts)
        assert np.array_equal(avg.points, solo.points)

    def test_average_curves_is_pointwise_mean(self):
        rng = np.random.default_rng(4)
        grid = roc.default_grid(201)
        sweeps = [roc.sweep(*random_trial(rng), grid) for _ in range(5)]
        avg = roc.average_curves(sweeps)
        interior = np.mean(np.asarray(sweeps, dtype=np.float64), axis=0)
        assert np.allclose(avg.points[1:-1], interior)
        assert 0.0 <= avg.auc <= 1.0

    def test_mismatched_grids_rejected(self):
        with pytest.raises(ValueError):
            roc.average_curves([[(0.0, 0.0)], [(0.0, 0.0), (1.0, 1.0)]])

    def test_curve_validation_endpoints(self):
        with pytest.raises(ValueError):
            roc.ROCCurve(points=np.array([[0.1, 0.0], [1.0, 1.0]]), auc=0.5)


class TestEndToEnd:
    def test_planted_map_high_auc(self):
        rng = np.random.default_rng(5)
        latent_a, latent_b = rng.normal(size=(2, 8))
        data = np.empty((6, 6, 8))
        bits = np.zeros((6, 6), dtype=bool)
        bits[:, :3] = True
        noise = rng.normal(scale=0.05, size=(6, 6, 8))
        data[:] = np.where(bits[:, :, None], latent_a, latent_b) + noise
        fmap = FeatureMap("t", data.astype(np.float32))
        a = affinity_from_patch(fmap, (2, 1))
        assert roc.auc_rank_oracle(a, pmask(bits)) > 0.95
