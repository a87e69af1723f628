"""Probability fusion across model variants, with a tiny trainable fuser.

Every per-pixel class probability is turned into a clipped binary logit
ln(p / (1 - p)); one shared weight per model plus a bias combine them, a
sigmoid maps each fused class logit back to a score, and the scores are
normalized into a distribution. With a single model, unit weight and zero
bias the fusion is the identity. The weighted terms are summed in sorted
order, so permuting the model list together with the weights leaves the
output bit-identical.

The trainer is deliberately simple: full-batch gradient descent on the mean
cross-entropy, with the step halved whenever a step would increase the loss.
Accepted steps never increase the loss, so the recorded trace is
non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import DataError, LabelMask, ObjectSet, ProbMap

LOGIT_CLIP = 20.0


@dataclass(frozen=True)
class EnsembleModel:
    """One weight per fused model, a shared bias, and the training budget."""

    weights: tuple[float, ...]
    bias: float = 0.0
    lr: float = 1.0
    iters: int = 200

    def __post_init__(self) -> None:
        if len(self.weights) == 0:
            raise DataError("ensemble model needs at least one weight")
        if not all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise DataError("ensemble parameters must be finite")
        if not self.lr > 0:
            raise DataError("ensemble lr must be > 0")
        if self.iters < 0:
            raise DataError("ensemble iters must be >= 0")

    @classmethod
    def equal(cls, n_models: int, lr: float = 1.0, iters: int = 200) -> "EnsembleModel":
        return cls(weights=(1.0 / n_models,) * n_models, bias=0.0, lr=lr, iters=iters)

    def to_vector(self) -> np.ndarray:
        """Weights followed by the bias, as a flat float32 tensor."""
        return np.array([*self.weights, self.bias], dtype=np.float32)

    @classmethod
    def from_vector(cls, vec: np.ndarray, lr: float = 1.0, iters: int = 200) -> "EnsembleModel":
        if vec.ndim != 1 or vec.size < 2:
            raise DataError(f"ensemble vector must be 1-d with >= 2 entries, got shape {vec.shape}")
        return cls(weights=tuple(float(w) for w in vec[:-1]), bias=float(vec[-1]), lr=lr, iters=iters)


@dataclass(frozen=True)
class TrainResult:
    model: EnsembleModel
    trace: tuple[float, ...]
    degenerate_gt: bool


def binary_logit(p: np.ndarray) -> np.ndarray:
    """ln(p / (1 - p)) clipped to +-LOGIT_CLIP; saturated inputs clip cleanly."""
    p = np.clip(p.astype(np.float64), 1e-300, None)
    q = np.clip(1.0 - p.astype(np.float64), 1e-300, None)
    return np.clip(np.log(p) - np.log(q), -LOGIT_CLIP, LOGIT_CLIP)


def fused_scores(logit_stack: np.ndarray, weights: np.ndarray, bias: float) -> np.ndarray:
    """Sigmoid of the weighted logit sum: (classes, pixels) in (0,1).

    Terms are sorted before summation so the result does not depend on the
    order the models were supplied in.
    """
    terms = weights.reshape(-1, *([1] * (logit_stack.ndim - 1))) * logit_stack
    terms = np.sort(terms, axis=0)
    fused = terms.sum(axis=0) + bias
    return 1.0 / (1.0 + np.exp(-fused))


def _check_alignment(prob_maps: list[ProbMap]) -> None:
    if not prob_maps:
        raise DataError("ensemble needs at least one probability map")
    first = prob_maps[0]
    for pm in prob_maps[1:]:
        if pm.objects != first.objects:
            raise DataError(f"object sets differ: {pm.objects.ids} vs {first.objects.ids}")
        if pm.probs.shape != first.probs.shape:
            raise DataError(f"probability shapes differ: {pm.probs.shape} vs {first.probs.shape}")


def logit_stack(prob_maps: list[ProbMap]) -> np.ndarray:
    """(models, classes, pixels) clipped binary logits from aligned maps."""
    _check_alignment(prob_maps)
    return np.stack([binary_logit(pm.probs.reshape(pm.probs.shape[0], -1)) for pm in prob_maps])


def ensemble_apply(prob_maps: list[ProbMap], model: EnsembleModel) -> ProbMap:
    """Fuse aligned per-model probability maps into one normalized map."""
    stack = logit_stack(prob_maps)
    if stack.shape[0] != len(model.weights):
        raise DataError(f"{stack.shape[0]} maps but {len(model.weights)} ensemble weights")
    scores = fused_scores(stack, np.asarray(model.weights, dtype=np.float64), model.bias)
    probs = scores / scores.sum(axis=0, keepdims=True)
    first = prob_maps[0]
    return ProbMap(first.objects, probs.reshape(first.probs.shape).astype(np.float32))


def onehot_targets(gts: list[LabelMask], objects: ObjectSet) -> np.ndarray:
    """(classes, pixels) one-hot targets; ids outside the object set count as background."""
    columns = []
    for gt in gts:
        pm = ProbMap.from_mask(gt, objects)
        columns.append(pm.probs.reshape(pm.probs.shape[0], -1))
    return np.concatenate(columns, axis=1).astype(np.float64)


def ensemble_loss(stack: np.ndarray, onehot: np.ndarray, weights: np.ndarray, bias: float) -> float:
    """Mean cross-entropy of the fused distribution against one-hot targets."""
    scores = fused_scores(stack, weights, bias)
    q = scores / scores.sum(axis=0, keepdims=True)
    picked = (q * onehot).sum(axis=0)
    return float(-np.log(picked).mean())


def ensemble_grad(
    stack: np.ndarray, onehot: np.ndarray, weights: np.ndarray, bias: float
) -> tuple[np.ndarray, float]:
    """Analytic gradient of ensemble_loss wrt (weights, bias)."""
    scores = fused_scores(stack, weights, bias)
    total = scores.sum(axis=0, keepdims=True)
    # d(-ln q_y)/dL_c = -onehot_c * (1 - z_c) + z_c * (1 - z_c) / total
    g = -onehot * (1.0 - scores) + scores * (1.0 - scores) / total
    n_pixels = stack.shape[2]
    grad_w = np.einsum("mcn,cn->m", stack, g) / n_pixels
    grad_b = float(g.sum() / n_pixels)
    return grad_w, grad_b


def ensemble_train(
    model_probs: list[list[ProbMap]],
    gts: list[LabelMask],
    model: EnsembleModel | None = None,
) -> TrainResult:
    """Fit the fuser on per-model probability maps and ground-truth masks.

    `model_probs[m][t]` is model m's map for frame t; `gts[t]` is the target.
    `model` supplies the initial parameters, step size, and iteration budget
    (equal weights, lr 1.0, 200 iterations when omitted). Targets that contain
    a single class everywhere are fit anyway but flagged as degenerate.
    """
    n_models = len(model_probs)
    if n_models == 0:
        raise DataError("ensemble training needs at least one model")
    frames = len(gts)
    if any(len(seq) != frames for seq in model_probs):
        raise DataError("every model must provide one probability map per target frame")
    if frames == 0:
        raise DataError("ensemble training needs at least one frame")
    if model is None:
        model = EnsembleModel.equal(n_models)
    if len(model.weights) != n_models:
        raise DataError(f"{n_models} models but {len(model.weights)} initial weights")
    per_frame = [[model_probs[m][t] for m in range(n_models)] for t in range(frames)]
    for maps in per_frame:
        _check_alignment(maps)
    objects = model_probs[0][0].objects
    stack = np.concatenate(
        [logit_stack(maps) for maps in per_frame], axis=2
    )  # (models, classes, all pixels)
    onehot = onehot_targets(gts, objects)
    if onehot.shape[1] != stack.shape[2]:
        raise DataError("ground-truth mask sizes do not match the probability maps")
    degenerate = int(np.count_nonzero(onehot.sum(axis=1))) <= 1

    w = np.asarray(model.weights, dtype=np.float64)
    b = float(model.bias)
    step = model.lr
    loss = ensemble_loss(stack, onehot, w, b)
    trace = [loss]
    for _ in range(model.iters):
        grad_w, grad_b = ensemble_grad(stack, onehot, w, b)
        cand_w = w - step * grad_w
        cand_b = b - step * grad_b
        cand_loss = ensemble_loss(stack, onehot, cand_w, cand_b)
        if cand_loss > loss:
            step *= 0.5
        else:
            w, b, loss = cand_w, cand_b, cand_loss
        trace.append(loss)
    fitted = EnsembleModel(
        weights=tuple(float(x) for x in w), bias=b, lr=model.lr, iters=model.iters
    )
    return TrainResult(model=fitted, trace=tuple(trace), degenerate_gt=degenerate)
