import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchbench import affinity as aff
from patchbench.tensorio import FeatureMap


def fmap_from(data):
    return FeatureMap("t", np.asarray(data, dtype=np.float32))


class TestNormalization:
    def test_34_becomes_unit(self):
        fmap = fmap_from([[[3.0, 4.0]]])
        tokens, n_zero = aff.normalized_tokens(fmap)
        assert n_zero == 0
        assert np.allclose(tokens[0], [0.6, 0.8])

    def test_zero_token_stays_zero_and_counts(self):
        fmap = fmap_from([[[0.0, 0.0], [1.0, 0.0]]])
        tokens, n_zero = aff.normalized_tokens(fmap)
        assert n_zero == 1
        assert np.array_equal(tokens[0], [0.0, 0.0])

    def test_all_norms_one(self):
        rng = np.random.default_rng(0)
        fmap = fmap_from(rng.normal(size=(6, 7, 9)))
        tokens, _ = aff.normalized_tokens(fmap)
        assert np.allclose(np.linalg.norm(tokens, axis=1), 1.0, atol=1e-6)

    def test_l2_normalize_returns_feature_map(self):
        rng = np.random.default_rng(1)
        fmap = fmap_from(rng.normal(size=(3, 3, 4)))
        out, n_zero = aff.l2_normalize_tokens(fmap)
        assert isinstance(out, FeatureMap)
        assert n_zero == 0
        assert out.data.shape == fmap.data.shape


class TestAffinityFromPatch:
    def test_identical_tokens_give_all_ones(self):
        data = np.tile(np.array([1.0, 2.0, 2.0]), (4, 4, 1))
        amap = aff.affinity_from_patch(fmap_from(data), (1, 2))
        assert amap.seed == (1, 2)
        assert np.allclose(amap.values, 1.0, atol=1e-6)

    def test_orthogonal_seed(self):
        data = np.zeros((1, 2, 2))
        data[0, 0] = [1.0, 0.0]
        data[0, 1] = [0.0, 1.0]
        amap = aff.affinity_from_patch(fmap_from(data), (0, 0))
        assert amap.values[0, 0] == pytest.approx(1.0)
        assert amap.values[0, 1] == pytest.approx(0.0, abs=1e-7)

    def test_matches_cosine_oracle(self):
        rng = np.random.default_rng(2)
        fmap = fmap_from(rng.normal(size=(4, 4, 8)))
        amap = aff.affinity_from_patch(fmap, (2, 1))
        seed = fmap.data[2, 1].astype(np.float64)
        for r in range(4):
            for c in range(4):
                tok = fmap.data[r, c].astype(np.float64)
                expected = tok @ seed / (np.linalg.norm(tok) * np.linalg.norm(seed))
                assert amap.values[r, c] == pytest.approx(expected, abs=1e-6)

    def test_seed_out_of_bounds(self):
        with pytest.raises(ValueError):
            aff.affinity_from_patch(fmap_from(np.ones((2, 2, 2))), (2, 0))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 100.0))
    def test_scale_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        data = rng.normal(size=(3, 4, 5))
        a = aff.affinity_from_patch(fmap_from(data), (1, 1))
        b = aff.affinity_from_patch(fmap_from(data * scale), (1, 1))
        assert np.allclose(a.values, b.values, atol=1e-5)


class TestPixelToPatch:
    @pytest.mark.parametrize("px,expected", [
        ((0, 0), (0, 0)),
        ((15, 15), (0, 0)),
        ((16, 15), (0, 1)),   # dot (x, y) -> patch (row, col)
        ((15, 16), (1, 0)),
        ((100, 40), (2, 6)),
    ])
    def test_cases(self, px, expected):
        assert aff.pixel_to_patch(px, 16) == expected

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            aff.pixel_to_patch((-1, 0), 16)


class TestGram:
    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(3)
        g = aff.gram(fmap_from(rng.normal(size=(5, 5, 7))))
        assert np.allclose(g.values, g.values.T, atol=1e-7)
        assert np.allclose(np.diag(g.values), 1.0, atol=1e-6)

    def test_rows_match_affinity_maps(self):
        rng = np.random.default_rng(4)
        fmap = fmap_from(rng.normal(size=(4, 5, 6)))
        g = aff.gram(fmap)
        for idx in range(4 * 5):
            r, c = divmod(idx, 5)
            amap = aff.affinity_from_patch(fmap, (r, c))
            assert np.allclose(g.values[idx], amap.values.ravel(), atol=1e-6)

    def test_zero_token_row_is_zero_off_diagonal(self):
        data = np.ones((1, 3, 2))
        data[0, 1] = 0.0
        g = aff.gram(fmap_from(data))
        assert g.values[1, 0] == 0.0 and g.values[1, 2] == 0.0

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_positive_semidefinite(self, seed):
        rng = np.random.default_rng(seed)
        g = aff.gram(fmap_from(rng.normal(size=(4, 4, 6))))
        evals = np.linalg.eigvalsh(g.values)
        assert evals.min() > -1e-8
