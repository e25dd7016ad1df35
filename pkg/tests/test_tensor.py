import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from condreuse.tensor import (
    FlopCounter,
    PositionIndex,
    apply_rope2d,
    cosine_similarity,
    masked_softmax_rows,
    matmul,
    rms_norm,
    rope2d,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for kk in range(k):
                s += a[i, kk] * b[kk, j]
            out[i][j] = s
    return np.array(out)


class TestMatmul:
    def test_identity(self, rng):
        b = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(matmul(np.eye(3), b), b)

    def test_permutation(self):
        out = matmul(np.array([[1, 2], [3, 4]]), np.array([[0, 1], [1, 0]]))
        np.testing.assert_array_equal(out, [[2, 1], [4, 3]])

    def test_against_triple_loop(self, rng):
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        assert np.abs(matmul(a, b) - triple_loop(a, b)).max() <= 1e-12

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (8, 8), elements=finite), arrays(np.float64, (8, 8), elements=finite))
    def test_random_8x8_property(self, a, b):
        assert np.abs(matmul(a, b) - triple_loop(a, b)).max() <= 1e-12

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_counts_two_flops_per_mac(self):
        c = FlopCounter()
        matmul(np.ones((4, 5)), np.ones((5, 6)), c)
        assert c.total() == 2 * 4 * 5 * 6

    def test_bit_identical_across_calls(self, rng):
        a, b = rng.normal(size=(30, 40)), rng.normal(size=(40, 20))
        assert matmul(a, b).tobytes() == matmul(a.copy(), b.copy()).tobytes()


class TestMaskedSoftmax:
    def test_symmetric_row(self):
        np.testing.assert_allclose(masked_softmax_rows(np.zeros((1, 2)), np.zeros((1, 2))), [[0.5, 0.5]])

    @given(finite, finite)
    def test_mask_forces_one_hot(self, a, b):
        out = masked_softmax_rows(np.array([[a, b]]), np.array([[0.0, -np.inf]]))
        assert out[0, 0] == 1.0 and out[0, 1] == 0.0

    def test_against_formula(self, rng):
        s = rng.normal(size=(4, 4))
        mask = np.where(rng.random((4, 4)) < 0.3, -np.inf, 0.0)
        mask[:, 0] = 0.0
        expect = np.zeros((4, 4))
        for i in range(4):
            e = [math.exp(s[i, j]) if mask[i, j] == 0 else 0.0 for j in range(4)]
            expect[i] = np.array(e) / sum(e)
        assert np.abs(masked_softmax_rows(s, mask) - expect).max() <= 1e-12

    @settings(max_examples=50)
    @given(arrays(np.float64, (5, 6), elements=finite), st.lists(st.booleans(), min_size=30, max_size=30))
    def test_rows_sum_to_one(self, scores, bits):
        mask = np.where(np.array(bits).reshape(5, 6), -np.inf, 0.0)
        mask[:, 3] = 0.0
        out = masked_softmax_rows(scores, mask)
        assert np.all(out >= 0)
        assert np.abs(out.sum(axis=1) - 1).max() <= 1e-12
        assert np.all(out[np.isneginf(mask)] == 0.0)

    def test_fully_masked_row_rejected(self):
        with pytest.raises(ValueError, match="fully masked"):
            masked_softmax_rows(np.zeros((2, 2)), np.array([[0.0, 0.0], [-np.inf, -np.inf]]))


class TestRmsNorm:
    def test_zero_vector(self):
        np.testing.assert_array_equal(rms_norm(np.zeros(5), 1e-6), np.zeros(5))

    @pytest.mark.parametrize("c", [2.0, -2.0])
    def test_constant_vector(self, c):
        out = rms_norm(np.full(6, c), 1e-12)
        assert np.abs(out - np.sign(c)).max() <= 1e-6

    def test_against_formula(self, rng):
        v = rng.normal(size=8)
        expect = v / math.sqrt(sum(x * x for x in v) / 8 + 1e-6)
        assert np.abs(rms_norm(v, 1e-6) - expect).max() <= 1e-12


class TestRope2d:
    def test_origin_is_identity(self, rng):
        v = rng.normal(size=16)
        np.testing.assert_array_equal(rope2d(v, (0, 0)), v)

    def test_norm_preserved(self, rng):
        v = rng.normal(size=16)
        assert abs(np.linalg.norm(rope2d(v, (5, 9))) - np.linalg.norm(v)) <= 1e-12

    @settings(max_examples=50)
    @given(st.integers(0, 200), st.integers(0, 200), arrays(np.float64, 8, elements=finite))
    def test_isometry_everywhere(self, i, j, v):
        assert abs(np.linalg.norm(rope2d(v, (i, j))) - np.linalg.norm(v)) <= 1e-12 * max(1.0, np.linalg.norm(v))

    def test_scores_depend_only_on_offset(self, rng):
        q, k = rng.normal(size=16), rng.normal(size=16)
        grid = [(i, j) for i in range(3) for j in range(3)]
        by_offset = {}
        for p1 in grid:
            for p2 in grid:
                off = (p1[0] - p2[0], p1[1] - p2[1])
                score = float(np.dot(rope2d(q, p1), rope2d(k, p2)))
                by_offset.setdefault(off, []).append(score)
        for scores in by_offset.values():
            assert max(scores) - min(scores) <= 1e-10

    def test_halves_follow_their_coordinate(self, rng):
        v = rng.normal(size=8)
        out = rope2d(v, (3, 0))
        np.testing.assert_array_equal(out[4:], v[4:])
        out = rope2d(v, (0, 3))
        np.testing.assert_array_equal(out[:4], v[:4])

    def test_head_dim_must_divide_by_four(self):
        with pytest.raises(ValueError, match="divisible by 4"):
            apply_rope2d(np.zeros((1, 6)), [(0, 0)])

    def test_accepts_position_index(self, rng):
        v = rng.normal(size=8)
        np.testing.assert_array_equal(rope2d(v, PositionIndex(2, 1)), rope2d(v, (2, 1)))


class TestCosine:
    def test_self(self, rng):
        u = rng.normal(size=5)
        assert cosine_similarity(u, u) == pytest.approx(1.0, abs=1e-15)

    def test_opposite(self, rng):
        u = rng.normal(size=5)
        assert cosine_similarity(u, -u) == pytest.approx(-1.0, abs=1e-15)

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity([0, 0], [1, 0])


def test_flop_counter_scopes():
    c = FlopCounter()
    c.add(3)
    with c.scope("attention"):
        c.add(5)
        with c.scope("output"):
            c.add(7)
        c.add(1)
    assert c.snapshot() == {"token": 3, "attention": 6, "output": 7}
    assert c.total() == 16
