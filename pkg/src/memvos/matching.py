"""Global and local pixel matching plus the instance-level channel gate.

Squared feature distances are squashed to [0,1] scores; a query cell's
foreground distance is its minimum over the reference cells whose indicator
is at least 0.5 (background: the complement). Global matching searches the
whole first frame, local matching only a Chebyshev window around the same
cell in the previous frame. An empty candidate set scores 1 (nothing to
match). With a window that covers the grid, local matching is bit-identical
to global matching on the same inputs; both share the same core.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeds import rng_for
from .types import FeatureMap


def distance_transform(sq_dist: np.ndarray | float, bias: float = 0.0) -> np.ndarray | float:
    """Map squared feature distance to a [0,1] score: 1 - 2 / (1 + exp(d2 + b)).

    Computed as tanh((d2 + b) / 2), the same function in overflow-safe form.
    Zero distance with zero bias scores exactly 0; large distances saturate
    to 1. Monotone increasing.
    """
    return np.tanh(0.5 * (sq_dist + bias))


# Entries this close to zero get recomputed by direct differences: the fast
# inner-product expansion cancels catastrophically right where the contract
# demands an exact 0 (identical embeddings), and true distances this small
# otherwise occur only for identical cells. Well above the ~1e-12 cancellation
# noise of O(10)-magnitude features, well below any distinct-cell distance.
_EXACT_REFINE_EPS = 1e-9

# Query rows processed per slab; bounds the (rows, n_ref) distance block
# without changing any per-cell result (rows are independent).
_QUERY_CHUNK = 512


def _pairwise_sq(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """(n_query, n_ref) squared distances, exact zeros for identical vectors.

    Inner-product expansion (one matrix product instead of a c-times-larger
    difference tensor), clamped at zero, then near-zero entries recomputed by
    direct differences so identical vectors give exactly 0.
    """
    q = query.astype(np.float64)
    r = reference.astype(np.float64)
    qq = np.einsum("cp,cp->p", q, q)
    rr = np.einsum("cr,cr->r", r, r)
    sq = np.maximum(qq[:, None] + rr[None, :] - 2.0 * (q.T @ r), 0.0)
    suspect = sq < _EXACT_REFINE_EPS
    if suspect.any():
        qi, ri = np.nonzero(suspect)
        diff = q[:, qi] - r[:, ri]
        sq[qi, ri] = np.einsum("ck,ck->k", diff, diff)
    return sq


def _masked_min_score(sq: np.ndarray, allowed: np.ndarray, bias: float) -> np.ndarray:
    """Per-query min distance over allowed reference cells, then the transform.
    Queries with no allowed cell score exactly 1."""
    masked = np.where(allowed, sq, np.inf)
    best = masked.min(axis=1)
    empty = ~np.isfinite(best)
    score = distance_transform(np.where(empty, 0.0, best), bias)
    return np.where(empty, 1.0, score)


def _window_rows(h: int, w: int, radius: int, start: int, stop: int) -> np.ndarray:
    """Chebyshev-window membership for query cells [start, stop) against all cells."""
    rows = np.repeat(np.arange(h), w)
    cols = np.tile(np.arange(w), h)
    near_row = np.abs(rows[start:stop, None] - rows[None, :]) <= radius
    near_col = np.abs(cols[start:stop, None] - cols[None, :]) <= radius
    return near_row & near_col


def _match_many(
    query: FeatureMap,
    reference: FeatureMap,
    indicators: dict[int, np.ndarray],
    bias: float,
    radius: int | None,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Shared core: the pairwise distances depend only on the two feature maps,
    so all objects' fg/bg maps come from one distance computation."""
    h, w = query.height, query.width
    if (reference.height, reference.width) != (h, w):
        raise ValueError(
            f"query grid {h}x{w} does not match reference grid {reference.height}x{reference.width}"
        )
    q_flat = query.data.reshape(query.channels, -1)
    r_flat = reference.data.reshape(reference.channels, -1)
    n = h * w
    fg_cells = {obj: (ind >= 0.5).reshape(1, -1) for obj, ind in indicators.items()}
    out = {obj: (np.empty(n), np.empty(n)) for obj in indicators}
    for start in range(0, n, _QUERY_CHUNK):
        stop = min(start + _QUERY_CHUNK, n)
        sq = _pairwise_sq(q_flat[:, start:stop], r_flat)
        window = None if radius is None else _window_rows(h, w, radius, start, stop)
        for obj, cells in fg_cells.items():
            fg_allowed = np.broadcast_to(cells, sq.shape)
            bg_allowed = np.broadcast_to(~cells, sq.shape)
            if window is not None:
                fg_allowed = fg_allowed & window
                bg_allowed = bg_allowed & window
            out[obj][0][start:stop] = _masked_min_score(sq, fg_allowed, bias)
            out[obj][1][start:stop] = _masked_min_score(sq, bg_allowed, bias)
    return {
        obj: (fg.reshape(h, w).astype(np.float32), bg.reshape(h, w).astype(np.float32))
        for obj, (fg, bg) in out.items()
    }


def match_global(
    query: FeatureMap, reference: FeatureMap, ref_indicator: np.ndarray, bias: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Distance-to-foreground and distance-to-background maps vs. the whole reference."""
    return _match_many(query, reference, {0: ref_indicator}, bias, radius=None)[0]


def match_global_many(
    query: FeatureMap,
    reference: FeatureMap,
    indicators: dict[int, np.ndarray],
    bias: float = 0.0,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """match_global for several objects at once, one distance pass total."""
    return _match_many(query, reference, indicators, bias, radius=None)


def chebyshev_window(h: int, w: int, radius: int) -> np.ndarray:
    """(h*w, h*w) boolean: cell pairs within the given Chebyshev radius."""
    return _window_rows(h, w, radius, 0, h * w)


def match_local(
    query: FeatureMap,
    previous: FeatureMap,
    prev_indicator: np.ndarray,
    radius: int,
    bias: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Like match_global but each query cell only sees the previous-frame cells
    within a Chebyshev window around its own position."""
    if radius < 1:
        raise ValueError(f"window radius must be >= 1, got {radius}")
    return _match_many(query, previous, {0: prev_indicator}, bias, radius=radius)[0]


def match_local_many(
    query: FeatureMap,
    previous: FeatureMap,
    indicators: dict[int, np.ndarray],
    radius: int,
    bias: float = 0.0,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """match_local for several objects at once, one distance pass total."""
    if radius < 1:
        raise ValueError(f"window radius must be >= 1, got {radius}")
    return _match_many(query, previous, indicators, bias, radius=radius)


@dataclass(frozen=True)
class GateWeights:
    """Channel gate from pooled foreground/background statistics."""

    matrix: np.ndarray  # (channels, 2 * channels)
    bias: np.ndarray  # (channels,)

    @classmethod
    def zero(cls, channels: int) -> "GateWeights":
        return cls(np.zeros((channels, 2 * channels)), np.zeros(channels))

    @classmethod
    def seeded(cls, channels: int, seed: int, mix: float) -> "GateWeights":
        if mix == 0.0:
            return cls.zero(channels)
        rng = rng_for(seed, "gate")
        matrix = mix * rng.standard_normal((channels, 2 * channels)) / np.sqrt(2 * channels)
        return cls(matrix, np.zeros(channels))


def instance_gate(level: FeatureMap, indicator: np.ndarray, weights: GateWeights) -> np.ndarray:
    """Per-channel gains in (0,2): 2 * sigmoid of a linear map of the pooled
    foreground and background feature vectors. Zero weights gate to exactly 1."""
    flat = level.data.reshape(level.channels, -1).astype(np.float64)
    ind = indicator.reshape(-1).astype(np.float64)

    def pooled(mass: np.ndarray) -> np.ndarray:
        total = mass.sum()
        if total == 0.0:
            return np.zeros(level.channels)
        return flat @ mass / total

    stacked = np.concatenate([pooled(ind), pooled(1.0 - ind)])
    logits = weights.matrix @ stacked + weights.bias
    return 2.0 / (1.0 + np.exp(-logits))
