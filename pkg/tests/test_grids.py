import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from memvos.grids import block_mean, downsample2, label_fractions, resize_bilinear, resize_nearest, upsample2
from memvos.types import grid_shape


def naive_block_mean(arr, stride):
    h, w = arr.shape
    gh, gw = grid_shape(h, w, stride)
    out = np.zeros((gh, gw))
    for i in range(gh):
        for j in range(gw):
            block = arr[i * stride : (i + 1) * stride, j * stride : (j + 1) * stride]
            out[i, j] = block.astype(np.float64).mean()
    return out


def test_block_mean_matches_naive_loops():
    rng = np.random.default_rng(11)
    for _ in range(20):
        h = int(rng.integers(1, 40))
        w = int(rng.integers(1, 40))
        stride = int(rng.integers(1, 17))
        arr = rng.standard_normal((h, w))
        got = block_mean(arr, stride)
        want = naive_block_mean(arr, stride)
        assert got.shape == want.shape == grid_shape(h, w, stride)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_block_mean_leading_axes():
    rng = np.random.default_rng(12)
    arr = rng.standard_normal((3, 21, 13))
    got = block_mean(arr, 8)
    for c in range(3):
        np.testing.assert_allclose(got[c], naive_block_mean(arr[c], 8), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), stride=st.sampled_from([2, 4, 8, 16]))
def test_label_fractions_partition_of_unity(seed, stride):
    rng = np.random.default_rng(seed)
    h = int(rng.integers(5, 50))
    w = int(rng.integers(5, 50))
    ids = rng.integers(0, 4, (h, w)).astype(np.uint8)
    objs = (1, 2, 3)
    frac = label_fractions(ids, objs, stride)
    assert frac.dtype == np.float32
    assert frac.min() >= 0.0 and frac.max() <= 1.0
    bg = block_mean((ids == 0).astype(np.float64), stride)
    total = frac.astype(np.float64).sum(axis=0) + bg
    np.testing.assert_allclose(total, 1.0, atol=1e-6)


def test_upsample2_repeats_and_crops():
    cells = np.array([[1.0, 2.0], [3.0, 4.0]])
    up = upsample2(cells, 3, 4)
    want = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4]], dtype=float)
    np.testing.assert_array_equal(up, want)


def test_downsample2_means_and_pads():
    cells = np.array([[1.0, 3.0, 5.0], [7.0, 9.0, 11.0], [2.0, 4.0, 6.0]])
    down = downsample2(cells)
    # last row/col replicate: blocks [[1,3],[7,9]], [[5,5],[11,11]], [[2,4],[2,4]], [[6,6],[6,6]]
    want = np.array([[5.0, 8.0], [3.0, 6.0]])
    np.testing.assert_array_equal(down, want)


def test_downsample2_preserves_constants():
    for shape in [(4, 4), (5, 7), (1, 3)]:
        cells = np.full(shape, 2.5)
        down = downsample2(cells)
        np.testing.assert_array_equal(down, np.full(grid_shape(shape[0], shape[1], 2), 2.5))


def test_resize_bilinear_identity():
    rng = np.random.default_rng(13)
    arr = rng.standard_normal((6, 9))
    np.testing.assert_array_equal(resize_bilinear(arr, 6, 9), arr)


def test_resize_bilinear_constant():
    arr = np.full((4, 5), 3.25)
    out = resize_bilinear(arr, 13, 7)
    np.testing.assert_array_equal(out, np.full((13, 7), 3.25))


def test_resize_bilinear_hand_case():
    # 1x2 -> 1x4 with half-pixel centers: sources -0.25, 0.25, 0.75, 1.25 clamp to [0,1]
    arr = np.array([[0.0, 1.0]])
    out = resize_bilinear(arr, 1, 4)
    np.testing.assert_allclose(out, [[0.0, 0.25, 0.75, 1.0]], atol=1e-15)


def test_resize_nearest_upscale_mapping():
    arr = np.array([[10, 20], [30, 40]], dtype=np.uint8)
    out = resize_nearest(arr, 4, 4)
    want = np.array(
        [[10, 10, 20, 20], [10, 10, 20, 20], [30, 30, 40, 40], [30, 30, 40, 40]], dtype=np.uint8
    )
    np.testing.assert_array_equal(out, want)
    assert out.dtype == np.uint8


def test_resize_nearest_roundtrip_downscale():
    rng = np.random.default_rng(14)
    arr = rng.integers(0, 5, (16, 16)).astype(np.uint8)
    up = resize_nearest(arr, 32, 32)
    back = resize_nearest(up, 16, 16)
    np.testing.assert_array_equal(back, arr)
