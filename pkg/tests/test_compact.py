import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from condreuse.compact import (
    CompressionSpec,
    IntegrationMask,
    PruneSpec,
    PruneWarning,
    compress,
    correct_positions,
    integrate,
    prune,
    reassemble,
)
from condreuse.tokens import PatchEmbedder, SegmentKind, TokenSegment, noisy_positions


def grid_segment(h, w, d=4, seed=0, kind=SegmentKind.IMAGE_COND):
    rng = np.random.default_rng(seed)
    return TokenSegment(kind, rng.normal(size=(h * w, d)), noisy_positions(h, w))


class TestCompress:
    def test_identity(self, rng):
        r = rng.random((6, 6))
        np.testing.assert_array_equal(compress(r, CompressionSpec(1)), r)

    def test_constant(self):
        np.testing.assert_array_equal(compress(np.full((4, 4), 0.5), CompressionSpec(2)), np.full((2, 2), 0.5))

    def test_area_average(self):
        r = np.arange(16, dtype=float).reshape(4, 4)
        np.testing.assert_allclose(compress(r, 2), [[2.5, 4.5], [10.5, 12.5]])

    def test_token_ratio(self):
        emb = PatchEmbedder(2, 8)
        raster = np.random.default_rng(0).random((64, 64))
        assert len(emb.embed(raster)) == 1024
        assert len(emb.embed(compress(raster, CompressionSpec(2)))) == 256

    @pytest.mark.parametrize("h, w, a, p", [(24, 24, 2, 2), (48, 32, 4, 2), (36, 12, 3, 1)])
    def test_token_count_formula(self, h, w, a, p):
        n = len(PatchEmbedder(p, 4).embed(compress(np.zeros((h, w)), a)))
        assert n == (h * w) // (a * p) ** 2

    def test_indivisible_reports_padding(self):
        with pytest.raises(ValueError, match="pad by 1 rows and 2 columns"):
            compress(np.zeros((7, 6)), CompressionSpec(4))

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            CompressionSpec(0)


class TestCorrectPositions:
    def test_identity(self):
        p = noisy_positions(2, 3)
        assert correct_positions(p, 1) == p

    def test_factor_two(self):
        assert correct_positions(noisy_positions(2, 2), 2) == [(0, 0), (0, 2), (2, 0), (2, 2)]

    def test_factor_four(self):
        assert correct_positions([(3, 5)], 4) == [(12, 20)]

    @given(st.integers(1, 5), st.integers(1, 5), st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), max_size=10))
    def test_composition(self, a, b, positions):
        assert correct_positions(correct_positions(positions, a), b) == correct_positions(positions, a * b)


class TestPrune:
    def test_zero_threshold_keeps_everything(self):
        s = grid_segment(4, 4)
        assert prune(s, np.zeros((4, 4)), PruneSpec(0.0), patch=1) is s

    def test_blank_edge_map_prunes_all(self):
        with pytest.warns(PruneWarning):
            out = prune(grid_segment(4, 4), np.zeros((4, 4)), PruneSpec(0.01), patch=1)
        assert len(out) == 0

    def test_known_sparse_fixture(self):
        raster = np.zeros((8, 8))
        hits = [(0, 0), (1, 6), (3, 3), (5, 2), (7, 7)]
        for i, j in hits:
            raster[i, j] = 1.0
        s = grid_segment(8, 8)
        out = prune(s, raster, PruneSpec(0.5), patch=1)
        # oracle: direct scan of the raster
        scanned = [(i, j) for i in range(8) for j in range(8) if raster[i, j] >= 0.5]
        assert out.position_list() == scanned == hits
        keep = [i * 8 + j for i, j in hits]
        np.testing.assert_array_equal(out.tokens, s.tokens[keep])

    def test_patch_relevance_uses_patch_mean(self):
        raster = np.zeros((4, 4))
        raster[0, 0] = 1.0  # patch (0,0) mean 0.25
        raster[2:, 2:] = 0.8  # patch (1,1) mean 0.8
        out = prune(grid_segment(2, 2), raster, PruneSpec(0.3), patch=2)
        assert out.position_list() == [(1, 1)]

    def test_patch_count_must_match(self):
        with pytest.raises(ValueError, match="patches"):
            prune(grid_segment(2, 2), np.zeros((8, 8)), PruneSpec(0.1), patch=2)

    @settings(max_examples=40)
    @given(
        arrays(np.float64, (6, 6), elements=st.floats(0, 1)),
        st.floats(0, 1),
        st.floats(0, 1),
    )
    def test_monotone_in_threshold(self, raster, t1, t2):
        lo, hi = sorted((t1, t2))
        s = grid_segment(6, 6)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PruneWarning)
            kept_lo = set(prune(s, raster, PruneSpec(lo), patch=1).position_list())
            kept_hi = set(prune(s, raster, PruneSpec(hi), patch=1).position_list())
        assert kept_hi <= kept_lo

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            PruneSpec(1.5)


class TestIntegrate:
    def test_all_ones_mask_is_pure_noise(self):
        noise = grid_segment(3, 3, kind=SegmentKind.NOISY, seed=1)
        cond = grid_segment(3, 3, seed=2)
        out = integrate(noise, cond, IntegrationMask(np.ones((3, 3))))
        np.testing.assert_array_equal(out.tokens, noise.tokens)
        assert not out.frozen.any()

    def test_single_generated_cell(self):
        noise = grid_segment(2, 2, kind=SegmentKind.NOISY, seed=1)
        cond = grid_segment(2, 2, seed=2)
        m = np.zeros((2, 2))
        m[1, 0] = 1
        out = integrate(noise, cond, IntegrationMask(m))
        assert len(out) == 4
        assert out.frozen.tolist() == [True, True, False, True]
        np.testing.assert_array_equal(out.tokens[2], noise.tokens[2])
        np.testing.assert_array_equal(out.tokens[[0, 1, 3]], cond.tokens[[0, 1, 3]])
        assert out.kind is SegmentKind.NOISY

    def test_random_mask_counts(self):
        rng = np.random.default_rng(7)
        m = np.zeros(256, dtype=bool)
        m[rng.choice(256, 100, replace=False)] = True
        out = integrate(
            grid_segment(16, 16, kind=SegmentKind.NOISY), grid_segment(16, 16, seed=3), IntegrationMask(m.reshape(16, 16))
        )
        assert len(out) == 256
        assert int(out.frozen.sum()) == 256 - int(m.sum()) == 156

    @settings(max_examples=30)
    @given(arrays(bool, (4, 5)))
    def test_never_doubles(self, m):
        out = integrate(grid_segment(4, 5, kind=SegmentKind.NOISY), grid_segment(4, 5, seed=1), IntegrationMask(m))
        assert len(out) == 20

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            integrate(grid_segment(2, 2), grid_segment(2, 3), IntegrationMask(np.ones((2, 2))))
        with pytest.raises(ValueError, match="mask"):
            integrate(grid_segment(2, 2), grid_segment(2, 2, seed=1), IntegrationMask(np.ones((3, 3))))

    def test_mask_from_pixel_raster(self):
        raster = np.zeros((8, 8))
        raster[0, 5] = 200 / 255
        raster[6, 1] = 100 / 255  # below threshold
        m = IntegrationMask.from_raster(raster, (4, 4))
        expect = np.zeros((4, 4), dtype=bool)
        expect[0, 2] = True
        np.testing.assert_array_equal(m.m, expect)


class TestReassemble:
    def setup_method(self):
        self.noise = grid_segment(3, 3, kind=SegmentKind.NOISY, seed=1)
        self.cond = grid_segment(3, 3, kind=SegmentKind.NOISY, seed=2)
        m = np.zeros((3, 3))
        m[1:, 1:] = 1
        self.mask = IntegrationMask(m)

    def test_context_cells_restored_exactly(self):
        merged = integrate(self.noise, self.cond, self.mask)
        denoised = merged.with_tokens(merged.tokens + 0.1 * (~merged.frozen)[:, None])
        out = reassemble(denoised, self.mask, self.cond)
        keep = ~self.mask.flat()
        assert np.abs(out.tokens[keep] - self.cond.tokens[keep]).max() == 0
        np.testing.assert_array_equal(out.tokens[~keep], denoised.tokens[~keep])

    def test_round_trip_identity_pipeline(self):
        merged = integrate(self.noise, self.cond, self.mask)
        out = reassemble(merged, self.mask, self.cond)
        gen = self.mask.flat()
        np.testing.assert_array_equal(out.tokens[gen], self.noise.tokens[gen])
        np.testing.assert_array_equal(out.tokens[~gen], self.cond.tokens[~gen])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            reassemble(grid_segment(2, 2), self.mask, self.cond)
