import math

import numpy as np
import pytest

from memvos.fusion import (
    EnsembleModel,
    binary_logit,
    ensemble_apply,
    ensemble_grad,
    ensemble_loss,
    ensemble_train,
    logit_stack,
    onehot_targets,
)
from memvos.types import DataError, LabelMask, ObjectSet, ProbMap


def _prob_map(arrays, objects):
    probs = np.stack([np.asarray(a, dtype=np.float32) for a in arrays])
    return ProbMap(objects, probs)


def _random_maps(rng, objects, n_maps, h=4, w=4):
    maps = []
    for _ in range(n_maps):
        raw = rng.uniform(0.05, 0.95, size=(len(objects.ids) + 1, h, w)).astype(np.float32)
        raw /= raw.sum(axis=0, keepdims=True)
        maps.append(ProbMap(objects, raw))
    return maps


def test_binary_logit_matches_formula():
    p = np.array([0.2, 0.5, 0.8])
    expected = [math.log(0.2 / 0.8), 0.0, math.log(0.8 / 0.2)]
    np.testing.assert_allclose(binary_logit(p), expected, rtol=1e-12)


def test_binary_logit_clips_saturated_inputs():
    out = binary_logit(np.array([0.0, 1.0]))
    assert out[0] == -20.0
    assert out[1] == 20.0


def test_single_model_unit_weight_is_identity():
    objects = ObjectSet((1,))
    rng = np.random.default_rng(3)
    fg = rng.uniform(0.05, 0.95, size=(4, 4)).astype(np.float32)
    pm = _prob_map([1.0 - fg, fg], objects)
    fused = ensemble_apply([pm], EnsembleModel(weights=(1.0,), bias=0.0))
    np.testing.assert_allclose(fused.probs, pm.probs, atol=1e-6)


def test_identical_inputs_half_weights_reproduce_input():
    objects = ObjectSet((1, 2))
    rng = np.random.default_rng(9)
    pm = _random_maps(rng, objects, 1)[0]
    fused = ensemble_apply([pm, pm], EnsembleModel(weights=(0.5, 0.5), bias=0.0))
    np.testing.assert_allclose(fused.probs, pm.probs, atol=1e-5)


def test_two_model_hand_example():
    # Class logits ln(4) + ln(1.5) = ln 6 and ln(1/4) + ln(2/3) = ln(1/6);
    # sigmoids 6/7 and 1/7 already sum to one, so the fused foreground is 6/7.
    objects = ObjectSet((1,))
    a = _prob_map([[[0.2]], [[0.8]]], objects)
    b = _prob_map([[[0.4]], [[0.6]]], objects)
    fused = ensemble_apply([a, b], EnsembleModel(weights=(1.0, 1.0), bias=0.0))
    assert fused.probs[1, 0, 0] == pytest.approx(6.0 / 7.0, abs=1e-7)
    assert fused.probs[0, 0, 0] == pytest.approx(1.0 / 7.0, abs=1e-7)


def test_permuting_models_and_weights_is_exact():
    objects = ObjectSet((1, 2))
    rng = np.random.default_rng(17)
    maps = _random_maps(rng, objects, 3)
    weights = (0.7, -0.3, 1.1)
    base = ensemble_apply(maps, EnsembleModel(weights=weights, bias=0.2))
    for perm in [(1, 0, 2), (2, 1, 0), (2, 0, 1)]:
        shuffled = ensemble_apply(
            [maps[i] for i in perm],
            EnsembleModel(weights=tuple(weights[i] for i in perm), bias=0.2),
        )
        np.testing.assert_array_equal(shuffled.probs, base.probs)


def test_one_hot_inputs_stay_finite():
    objects = ObjectSet((1,))
    pm = _prob_map([[[1.0, 0.0]], [[0.0, 1.0]]], objects)
    fused = ensemble_apply([pm, pm], EnsembleModel(weights=(0.5, 0.5), bias=0.0))
    assert np.all(np.isfinite(fused.probs))
    assert fused.probs[1, 0, 1] > 0.99


def test_apply_rejects_weight_count_mismatch():
    objects = ObjectSet((1,))
    pm = _prob_map([[[0.5]], [[0.5]]], objects)
    with pytest.raises(DataError, match="ensemble weights"):
        ensemble_apply([pm], EnsembleModel(weights=(1.0, 1.0), bias=0.0))


def test_apply_rejects_mismatched_objects():
    a = _prob_map([[[0.5]], [[0.5]]], ObjectSet((1,)))
    b = _prob_map([[[0.5]], [[0.5]]], ObjectSet((2,)))
    with pytest.raises(DataError, match="object sets differ"):
        ensemble_apply([a, b], EnsembleModel(weights=(0.5, 0.5), bias=0.0))


def _random_instance(rng, n_models=2, n_classes=3, n_pixels=16):
    raw = rng.uniform(0.02, 0.98, size=(n_models, n_classes, n_pixels))
    raw /= raw.sum(axis=1, keepdims=True)
    stack = np.log(raw / (1.0 - raw))
    labels = rng.integers(0, n_classes, size=n_pixels)
    onehot = np.zeros((n_classes, n_pixels))
    onehot[labels, np.arange(n_pixels)] = 1.0
    weights = rng.normal(0.5, 0.3, size=n_models)
    bias = float(rng.normal(0.0, 0.3))
    return stack, onehot, weights, bias


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(11)
    h = 1e-6
    for _ in range(25):
        stack, onehot, weights, bias = _random_instance(rng)
        grad_w, grad_b = ensemble_grad(stack, onehot, weights, bias)
        for m in range(len(weights)):
            bumped = weights.copy()
            bumped[m] += h
            lo = weights.copy()
            lo[m] -= h
            fd = (ensemble_loss(stack, onehot, bumped, bias) - ensemble_loss(stack, onehot, lo, bias)) / (2 * h)
            assert abs(grad_w[m] - fd) <= 1e-4 * max(abs(fd), 1e-3)
        fd_b = (ensemble_loss(stack, onehot, weights, bias + h) - ensemble_loss(stack, onehot, weights, bias - h)) / (2 * h)
        assert abs(grad_b - fd_b) <= 1e-4 * max(abs(fd_b), 1e-3)


def test_training_prefers_the_accurate_model():
    objects = ObjectSet((1,))
    rng = np.random.default_rng(5)
    gts = []
    good = []
    noisy = []
    for _ in range(4):
        mask = (rng.uniform(size=(8, 8)) < 0.4).astype(np.uint8)
        gts.append(LabelMask(mask))
        fg_good = np.where(mask == 1, 0.9, 0.1).astype(np.float32)
        fg_good += rng.uniform(-0.02, 0.02, size=mask.shape).astype(np.float32)
        good.append(_prob_map([1.0 - fg_good, fg_good], objects))
        fg_noise = rng.uniform(0.2, 0.8, size=mask.shape).astype(np.float32)
        noisy.append(_prob_map([1.0 - fg_noise, fg_noise], objects))
    result = ensemble_train([good, noisy], gts, EnsembleModel.equal(2, lr=0.5, iters=150))
    assert result.model.weights[0] > result.model.weights[1]
    assert result.trace[-1] < result.trace[0]
    assert np.all(np.diff(result.trace) <= 1e-12)
    assert not result.degenerate_gt


def test_loss_at_onehot_weights_beats_uniform_for_perfect_model():
    objects = ObjectSet((1,))
    rng = np.random.default_rng(21)
    mask = (rng.uniform(size=(6, 6)) < 0.5).astype(np.uint8)
    fg = np.where(mask == 1, 0.95, 0.05).astype(np.float32)
    perfect = _prob_map([1.0 - fg, fg], objects)
    other = _random_maps(rng, objects, 1, h=6, w=6)[0]
    stack = logit_stack([perfect, other])
    onehot = onehot_targets([LabelMask(mask)], objects)
    loss_onehot = ensemble_loss(stack, onehot, np.array([1.0, 0.0]), 0.0)
    loss_uniform = ensemble_loss(stack, onehot, np.array([0.5, 0.5]), 0.0)
    assert loss_onehot <= loss_uniform


def test_zero_iterations_returns_initial_model():
    objects = ObjectSet((1,))
    mask = LabelMask(np.array([[1, 0], [0, 1]], dtype=np.uint8))
    pm = _prob_map([[[0.3, 0.7], [0.6, 0.2]], [[0.7, 0.3], [0.4, 0.8]]], objects)
    init = EnsembleModel(weights=(0.4,), bias=0.1, lr=1.0, iters=0)
    result = ensemble_train([[pm]], [mask], init)
    assert result.model.weights == (0.4,)
    assert result.model.bias == 0.1
    assert len(result.trace) == 1


def test_degenerate_single_class_gt_sets_flag():
    objects = ObjectSet((1,))
    mask = LabelMask(np.zeros((3, 3), dtype=np.uint8))
    rng = np.random.default_rng(1)
    pm = _random_maps(rng, objects, 1, h=3, w=3)[0]
    result = ensemble_train([[pm]], [mask], EnsembleModel.equal(1, iters=3))
    assert result.degenerate_gt


def test_trace_has_initial_loss_plus_one_per_iteration():
    objects = ObjectSet((1,))
    mask = LabelMask(np.array([[1, 0], [0, 1]], dtype=np.uint8))
    pm = _prob_map([[[0.3, 0.7], [0.6, 0.2]], [[0.7, 0.3], [0.4, 0.8]]], objects)
    result = ensemble_train([[pm]], [mask], EnsembleModel.equal(1, lr=0.1, iters=7))
    assert len(result.trace) == 8


def test_training_rejects_frame_count_mismatch():
    objects = ObjectSet((1,))
    mask = LabelMask(np.zeros((2, 2), dtype=np.uint8))
    pm = _prob_map([[[1.0, 1.0], [1.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]]], objects)
    with pytest.raises(DataError, match="one probability map per target frame"):
        ensemble_train([[pm], [pm, pm]], [mask], EnsembleModel.equal(2, iters=1))


def test_onehot_targets_send_unknown_ids_to_background():
    objects = ObjectSet((1,))
    mask = LabelMask(np.array([[0, 1], [7, 1]], dtype=np.uint8))
    onehot = onehot_targets([mask], objects)
    np.testing.assert_array_equal(onehot[0], [1.0, 0.0, 1.0, 0.0])
    np.testing.assert_array_equal(onehot[1], [0.0, 1.0, 0.0, 1.0])


def test_model_vector_round_trip():
    model = EnsembleModel(weights=(0.25, -1.5), bias=0.75)
    back = EnsembleModel.from_vector(model.to_vector())
    assert back.weights == pytest.approx(model.weights)
    assert back.bias == pytest.approx(model.bias)


def test_logit_stack_shape():
    objects = ObjectSet((1, 2))
    rng = np.random.default_rng(2)
    raw = rng.uniform(0.1, 0.9, size=(3, 4, 5)).astype(np.float32)
    raw /= raw.sum(axis=0, keepdims=True)
    pm = ProbMap(objects, raw)
    stack = logit_stack([pm, pm])
    assert stack.shape == (2, 3, 20)
