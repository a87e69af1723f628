"""Resampling helpers shared by the feature, neck and decoder stages.

Everything here works on plain numpy arrays. Bilinear resampling uses the
half-pixel-center convention with edge clamping; nearest resampling maps each
output pixel to the source pixel containing its center. Block reductions
average over the pixels actually covered, so partial edge blocks are handled
without padding bias.
"""

from __future__ import annotations

import numpy as np


def _block_starts(size: int, stride: int) -> np.ndarray:
    return np.arange(0, size, stride)


def block_mean(arr: np.ndarray, stride: int) -> np.ndarray:
    """Mean over stride x stride blocks of the trailing two axes.

    Edge blocks may cover fewer pixels; the mean is over covered pixels only.
    Output trailing shape is the cell grid for the source shape.
    """
    h, w = arr.shape[-2], arr.shape[-1]
    rows = _block_starts(h, stride)
    cols = _block_starts(w, stride)
    sums = np.add.reduceat(np.add.reduceat(arr.astype(np.float64), rows, axis=-2), cols, axis=-1)
    row_counts = np.diff(np.append(rows, h)).astype(np.float64)
    col_counts = np.diff(np.append(cols, w)).astype(np.float64)
    counts = row_counts[:, None] * col_counts[None, :]
    return sums / counts


def label_fractions(ids: np.ndarray, object_ids: tuple[int, ...], stride: int) -> np.ndarray:
    """Per-object coverage fraction on the cell grid: (len(object_ids), gh, gw) float32.

    Together with the implicit background fraction these partition each cell,
    i.e. the stacked fractions plus background sum to 1 per cell.
    """
    onehot = np.stack([(ids == obj) for obj in object_ids]).astype(np.float64)
    return block_mean(onehot, stride).astype(np.float32)


def upsample2(cells: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest 2x upsampling of the trailing two axes, cropped to the target grid."""
    up = np.repeat(np.repeat(cells, 2, axis=-2), 2, axis=-1)
    if out_h > up.shape[-2] or out_w > up.shape[-1]:
        raise ValueError(f"cannot upsample {cells.shape} to {out_h}x{out_w}")
    return up[..., :out_h, :out_w]


def downsample2(cells: np.ndarray) -> np.ndarray:
    """2x2 mean pooling of the trailing two axes, replicating the last row/column when odd."""
    h, w = cells.shape[-2], cells.shape[-1]
    if h % 2:
        cells = np.concatenate([cells, cells[..., -1:, :]], axis=-2)
    if w % 2:
        cells = np.concatenate([cells, cells[..., :, -1:]], axis=-1)
    pooled = cells.reshape(*cells.shape[:-2], (h + 1) // 2, 2, (w + 1) // 2, 2)
    return pooled.mean(axis=(-3, -1))


def _linear_coords(out_size: int, in_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    lo = np.floor(src).astype(np.int64)
    lo = np.minimum(lo, in_size - 1)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of the trailing two axes; computes and returns float64."""
    a = arr.astype(np.float64)
    ylo, yhi, fy = _linear_coords(out_h, a.shape[-2])
    xlo, xhi, fx = _linear_coords(out_w, a.shape[-1])
    top = a[..., ylo, :]
    bot = a[..., yhi, :]
    rows = top + (bot - top) * fy[..., :, None]
    left = rows[..., :, xlo]
    right = rows[..., :, xhi]
    return left + (right - left) * fx


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of the trailing two axes, dtype-preserving."""
    ys = np.minimum(((np.arange(out_h) + 0.5) * (arr.shape[-2] / out_h)).astype(np.int64), arr.shape[-2] - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * (arr.shape[-1] / out_w)).astype(np.int64), arr.shape[-1] - 1)
    return arr[..., ys, :][..., :, xs]
