import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from condreuse.tokens import (
    PatchEmbedder,
    Placement,
    SegmentKind,
    TokenSegment,
    build_sequence,
    condition_positions,
    noisy_positions,
    text_positions,
    text_tokens,
)


def seg(kind, count, d=4, positions=None, index=0):
    positions = positions if positions is not None else [(0, 0)] * count
    return TokenSegment(kind, np.zeros((count, d)), positions, index=index)


def test_noisy_positions_examples():
    assert noisy_positions(1, 1) == [(0, 0)]
    assert noisy_positions(2, 2) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    p = noisy_positions(3, 5)
    assert len(p) == 15 and p[-1] == (2, 4)


def test_noisy_positions_rejects_empty_grid():
    with pytest.raises(ValueError):
        noisy_positions(0, 3)


def test_text_positions():
    assert text_positions(0) == []
    assert text_positions(3) == [(0, 0)] * 3
    assert text_positions(77) == [(0, 0)] * 77


def test_condition_positions():
    assert condition_positions(2, 2, Placement()) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert condition_positions(1, 1, Placement(0, 0)) == [(0, 0)]
    assert condition_positions(2, 2, Placement(0, 16)) == [(0, 16), (0, 17), (1, 16), (1, 17)]


def test_negative_offset_rejected():
    with pytest.raises(ValueError, match="non-negative"):
        Placement(-1, 0)


@given(st.integers(1, 12), st.integers(1, 12))
def test_aligned_equals_noisy(h, w):
    assert condition_positions(h, w) == noisy_positions(h, w)


@pytest.mark.parametrize(
    "x, t, conds, n",
    [(16, 4, [], 20), (16, 4, [4, 4], 28), (1024, 512, [256] * 4, 2560)],
)
def test_build_sequence_counts(x, t, conds, n):
    s = build_sequence(
        seg(SegmentKind.NOISY, x),
        seg(SegmentKind.TEXT, t),
        [seg(SegmentKind.IMAGE_COND, c, index=k + 1) for k, c in enumerate(conds)],
    )
    assert s.n_tokens == n
    assert s.tokens().shape == (n, 4)
    assert s.positions().shape == (n, 2)


def test_offsets_partition_sequence():
    s = build_sequence(seg(SegmentKind.NOISY, 5), seg(SegmentKind.TEXT, 2), [seg(SegmentKind.IMAGE_COND, 3)])
    assert s.offsets == (0, 5, 7, 10)
    covered = [i for k in range(3) for i in range(s.n_tokens)[s.segment_slice(k)]]
    assert covered == list(range(10))


def test_condition_order_preserved():
    a = TokenSegment(SegmentKind.IMAGE_COND, np.ones((2, 4)), [(0, 0)] * 2, index=1)
    b = TokenSegment(SegmentKind.IMAGE_COND, 2 * np.ones((3, 4)), [(0, 0)] * 3, index=2)
    s1 = build_sequence(seg(SegmentKind.NOISY, 1), seg(SegmentKind.TEXT, 1), [a, b])
    s2 = build_sequence(seg(SegmentKind.NOISY, 1), seg(SegmentKind.TEXT, 1), [b, a])
    assert s1.n_tokens == s2.n_tokens
    assert [c.index for c in s1.conditions] == [1, 2]
    assert [c.index for c in s2.conditions] == [2, 1]


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError, match="dimension"):
        build_sequence(seg(SegmentKind.NOISY, 2), seg(SegmentKind.TEXT, 1, d=8))


def test_duplicate_or_misordered_segments_rejected():
    with pytest.raises(ValueError, match="order"):
        build_sequence(seg(SegmentKind.NOISY, 2), seg(SegmentKind.NOISY, 2))
    with pytest.raises(ValueError, match="order"):
        build_sequence(seg(SegmentKind.NOISY, 2), seg(SegmentKind.TEXT, 1), [seg(SegmentKind.TEXT, 1)])


def test_segment_validation():
    with pytest.raises(ValueError, match="positions"):
        TokenSegment(SegmentKind.NOISY, np.zeros((3, 4)), [(0, 0)] * 2)
    with pytest.raises(ValueError, match="frozen"):
        TokenSegment(SegmentKind.TEXT, np.zeros((1, 4)), [(0, 0)], frozen=[True])


def test_patch_embedder_is_row_major_and_deterministic():
    emb = PatchEmbedder(2, 6, seed=9)
    raster = np.arange(16, dtype=float).reshape(4, 4)
    patches = emb.patches(raster)
    np.testing.assert_array_equal(patches[1], [2, 3, 6, 7])
    np.testing.assert_array_equal(patches[2], [8, 9, 12, 13])
    out = emb.embed(raster)
    assert out.shape == (4, 6)
    np.testing.assert_array_equal(out, PatchEmbedder(2, 6, seed=9).embed(raster))
    with pytest.raises(ValueError, match="divisible"):
        emb.embed(np.zeros((5, 4)))


def test_text_tokens_deterministic():
    a, b = text_tokens(5, 8, seed=1), text_tokens(5, 8, seed=1)
    np.testing.assert_array_equal(a.tokens, b.tokens)
    assert a.position_list() == [(0, 0)] * 5
    assert not np.array_equal(a.tokens, text_tokens(5, 8, seed=2).tokens)
