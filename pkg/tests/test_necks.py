import numpy as np

from memvos.features import EmbedderSpec, extract_pyramid
from memvos.necks import ContextWeights, NeckWeights, fpn_topdown, object_context, pan_bottomup
from memvos.types import FeatureMap, FeaturePyramid, ImageFrame, grid_shape


def build_pyramid(frame_h, frame_w, channels, fill=None, rng=None):
    levels = {}
    for stride, c in channels.items():
        gh, gw = grid_shape(frame_h, frame_w, stride)
        if rng is not None:
            data = rng.standard_normal((c, gh, gw)).astype(np.float32)
        else:
            data = np.full((c, gh, gw), fill[stride], dtype=np.float32)
        levels[stride] = FeatureMap(stride, data)
    return FeaturePyramid(frame_h, frame_w, levels)


def eye_weights(channels, fuse=1.0):
    c = {s: channels[s] for s in channels}
    lat = {s: np.eye(c[s]) for s in c}
    down = {8: np.eye(c[8], c[16]), 4: np.eye(c[4], c[8])}
    up = {8: np.eye(c[8], c[4]), 16: np.eye(c[16], c[8])}
    return NeckWeights(lateral=lat, down_adapt=down, up_adapt=up, fuse_gain=fuse)


def test_zero_weights_are_exact_identity():
    rng = np.random.default_rng(51)
    channels = {4: 9, 8: 10, 16: 12}
    pyr = build_pyramid(37, 29, channels, rng=rng)
    weights = NeckWeights.seeded(channels, seed=0, mix=0.0, fuse_gain=0.0)
    after = pan_bottomup(fpn_topdown(pyr, weights), weights)
    for stride in (4, 8, 16):
        np.testing.assert_array_equal(after[stride].data, pyr[stride].data)


def test_fpn_constant_cascade():
    channels = {4: 2, 8: 2, 16: 2}
    pyr = build_pyramid(32, 32, channels, fill={4: 1.0, 8: 10.0, 16: 100.0})
    out = fpn_topdown(pyr, eye_weights(channels))
    np.testing.assert_array_equal(out[16].data, 100.0 * np.ones_like(out[16].data))
    np.testing.assert_array_equal(out[8].data, 110.0 * np.ones_like(out[8].data))
    np.testing.assert_array_equal(out[4].data, 111.0 * np.ones_like(out[4].data))


def test_pan_constant_cascade():
    # a constant stride-4 level adds its pooled mean to stride-8, then onward
    channels = {4: 2, 8: 2, 16: 2}
    pyr = build_pyramid(32, 32, channels, fill={4: 3.0, 8: 5.0, 16: 7.0})
    out = pan_bottomup(pyr, eye_weights(channels))
    np.testing.assert_array_equal(out[4].data, 3.0 * np.ones_like(out[4].data))
    np.testing.assert_array_equal(out[8].data, 8.0 * np.ones_like(out[8].data))
    np.testing.assert_array_equal(out[16].data, 15.0 * np.ones_like(out[16].data))


def test_pan_constant_cascade_odd_grids():
    # 40x24 gives grids 10x6 -> 5x3 -> 3x2; replicate padding keeps constants exact
    channels = {4: 2, 8: 2, 16: 2}
    pyr = build_pyramid(40, 24, channels, fill={4: 3.0, 8: 5.0, 16: 7.0})
    out = pan_bottomup(pyr, eye_weights(channels))
    np.testing.assert_array_equal(out[16].data, 15.0 * np.ones_like(out[16].data))


def test_fusion_never_crosses_coarse_cell_boundaries():
    rng = np.random.default_rng(52)
    channels = {4: 8, 8: 8, 16: 8}
    base = build_pyramid(64, 64, channels, rng=rng)
    poked = {s: FeatureMap(s, base[s].data.copy()) for s in channels}
    poked[4].data[:, 7, 2] += 1.0  # stride-4 cell (7,2) -> parent 16-cell (1,0)
    weights = NeckWeights.seeded(channels, seed=1, mix=0.5, fuse_gain=1.0)
    out_a = pan_bottomup(FeaturePyramid(64, 64, poked), weights)
    out_b = pan_bottomup(base, weights)
    diff16 = np.abs(out_a[16].data - out_b[16].data).sum(axis=0)
    assert diff16[1, 0] > 0.0
    diff16[1, 0] = 0.0
    np.testing.assert_array_equal(diff16, 0.0)


def test_fpn_changes_propagate_only_to_children():
    rng = np.random.default_rng(53)
    channels = {4: 8, 8: 8, 16: 8}
    base = build_pyramid(64, 64, channels, rng=rng)
    poked = {s: FeatureMap(s, base[s].data.copy()) for s in channels}
    poked[16].data[:, 3, 1] += 1.0
    weights = NeckWeights.seeded(channels, seed=1, mix=0.5, fuse_gain=1.0)
    out_a = fpn_topdown(FeaturePyramid(64, 64, poked), weights)
    out_b = fpn_topdown(base, weights)
    diff8 = np.abs(out_a[8].data - out_b[8].data).sum(axis=0)
    changed = np.argwhere(diff8 > 0)
    assert changed.size > 0
    for i, j in changed:
        assert i // 2 == 3 and j // 2 == 1


def test_seeded_necks_deterministic_on_real_features():
    frame = ImageFrame(np.random.default_rng(54).integers(0, 256, (48, 48, 3), dtype=np.uint8))
    spec = EmbedderSpec(channels={4: 16, 8: 24, 16: 32})
    pyr = extract_pyramid(frame, spec)
    weights = NeckWeights.seeded({4: 16, 8: 24, 16: 32}, seed=2, mix=0.3, fuse_gain=1.0)
    once = pan_bottomup(fpn_topdown(pyr, weights), weights)
    again = pan_bottomup(fpn_topdown(pyr, weights), weights)
    for stride in (4, 8, 16):
        np.testing.assert_array_equal(once[stride].data, again[stride].data)
        assert (once[stride].height, once[stride].width) == (pyr[stride].height, pyr[stride].width)
        assert once[stride].channels == pyr[stride].channels
    assert np.abs(once[16].data - pyr[16].data).max() > 1e-4


def context_eye(c, f_scale=1.0):
    return ContextWeights(
        f_matrix=f_scale * np.eye(c),
        g_matrix=np.eye(c),
        h_matrix=np.eye(c),
        out_matrix=np.concatenate([np.eye(c), np.eye(c)], axis=1),
    )


def test_context_single_cell_returns_probe_of_itself():
    x = np.array([[[2.0]], [[-1.0]]], dtype=np.float32)
    out = object_context(FeatureMap(16, x), context_eye(2))
    # one cell: attention is 1 on itself, context = h(x) = x, output = x + x
    np.testing.assert_allclose(out.data, 2.0 * x, atol=1e-6)


def test_context_zero_query_gives_mean_context():
    rng = np.random.default_rng(55)
    x = rng.standard_normal((3, 2, 4)).astype(np.float32)
    out = object_context(FeatureMap(16, x), context_eye(3, f_scale=0.0))
    mean = x.reshape(3, -1).mean(axis=1)
    want = x + mean[:, None, None]
    np.testing.assert_allclose(out.data, want.astype(np.float32), atol=1e-6)


def test_context_zero_mix_is_exact_identity():
    rng = np.random.default_rng(56)
    x = rng.standard_normal((4, 3, 3)).astype(np.float32)
    weights = ContextWeights.seeded(4, seed=3, mix=0.0)
    out = object_context(FeatureMap(16, x), weights)
    np.testing.assert_array_equal(out.data, x)


def test_context_seeded_deterministic():
    rng = np.random.default_rng(57)
    x = rng.standard_normal((4, 3, 3)).astype(np.float32)
    a = object_context(FeatureMap(16, x), ContextWeights.seeded(4, seed=3, mix=0.5))
    b = object_context(FeatureMap(16, x), ContextWeights.seeded(4, seed=3, mix=0.5))
    np.testing.assert_array_equal(a.data, b.data)
    assert np.abs(a.data - x).max() > 1e-6
