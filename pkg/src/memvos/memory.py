"""Foreground/background space-time memory.

Past frames are stored as per-object key/value maps; the current frame reads
them with dense softmax attention over every stored cell. The value map's
last channel carries the soft object indicator, so the attention readout's
last channel is a [0,1] objectness evidence map.

Two mask-fusion schemes build the stored features:

* scheme "a" splits the embedding into foreground and background branches by
  the indicator; their sum reconstructs the embedding bit-exactly, so query
  keys can be computed without any mask.
* scheme "b" computes a per-cell spatial prior from the embedding plus the
  indicator and modulates the embedding with it; query keys then need an
  indicator stand-in (the engine uses the previous frame's prediction).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeds import rng_for
from .types import FeatureMap


@dataclass(frozen=True)
class ProjectionWeights:
    """Per-cell linear maps from embedding space to key/value space."""

    key_matrix: np.ndarray  # (c_key, c_in)
    key_bias: np.ndarray  # (c_key,)
    value_matrix: np.ndarray  # (c_value - 1, c_in)
    value_bias: np.ndarray  # (c_value - 1,)
    prior_matrix: np.ndarray  # (c_in + 1,), scheme "b" only
    prior_bias: float

    @property
    def c_in(self) -> int:
        return self.key_matrix.shape[1]

    @property
    def c_key(self) -> int:
        return self.key_matrix.shape[0]

    @property
    def c_value(self) -> int:
        return self.value_matrix.shape[0] + 1

    @classmethod
    def seeded(
        cls,
        c_in: int,
        c_key: int,
        c_value: int,
        seed: int,
        key_gain: float = 6.0,
        center: np.ndarray | None = None,
    ) -> "ProjectionWeights":
        """Seeded random projections.

        `center`, when given, is a nominal feature vector subtracted inside
        the key map (bias = -K @ center). Without it, raw dot products are
        dominated by whichever cell has the brightest features; centering
        makes the attention scores rank by actual feature agreement.

        Key rows are orthonormal (scaled by `key_gain`), so key-space dot
        products reproduce centered feature dot products exactly instead of
        up to random-projection noise.
        """
        if c_key > c_in:
            raise ValueError(f"c_key {c_key} cannot exceed c_in {c_in}")
        rng = rng_for(seed, "stm")
        orthogonal, _ = np.linalg.qr(rng.standard_normal((c_in, c_in)))
        key_matrix = key_gain * orthogonal[:c_key]
        value_matrix = rng.standard_normal((c_value - 1, c_in)) / np.sqrt(c_in)
        # the prior leans mostly on the indicator; the feature term adds a
        # small content-dependent modulation
        prior_matrix = np.concatenate([0.1 * rng.standard_normal(c_in) / np.sqrt(c_in), [2.0]])
        key_bias = np.zeros(c_key) if center is None else -key_matrix @ center
        return cls(
            key_matrix=key_matrix,
            key_bias=key_bias,
            value_matrix=value_matrix,
            value_bias=np.zeros(c_value - 1),
            prior_matrix=prior_matrix,
            prior_bias=-1.0,
        )

    @classmethod
    def identity(cls, c_in: int) -> "ProjectionWeights":
        """Key = features, value = features; handy for making tests transparent."""
        return cls(
            key_matrix=np.eye(c_in),
            key_bias=np.zeros(c_in),
            value_matrix=np.eye(c_in),
            value_bias=np.zeros(c_in),
            prior_matrix=np.concatenate([np.zeros(c_in), [2.0]]),
            prior_bias=-1.0,
        )


@dataclass(frozen=True)
class KeyValueMaps:
    """Dense key/value maps on one cell grid; values[-1] is the soft indicator."""

    keys: np.ndarray  # (c_key, h, w) float32
    values: np.ndarray  # (c_value, h, w) float32

    def __post_init__(self) -> None:
        if self.keys.shape[1:] != self.values.shape[1:]:
            raise ValueError(f"key grid {self.keys.shape[1:]} != value grid {self.values.shape[1:]}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.keys.shape[1:]


def fuse_scheme_a(embedding: np.ndarray, indicator: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split features into foreground and background branches by the indicator.

    The branch with the larger share keeps the direct product; the smaller one
    is re-derived as embedding minus the larger. That subtraction is exact
    (Sterbenz: subtracting floats within a factor of two), so fg + bg
    reconstructs the embedding exactly while each branch stays within one
    rounding step of its ideal product.
    """
    if indicator.min() < 0.0 or indicator.max() > 1.0:
        raise ValueError("indicator must lie in [0,1]")
    ind = indicator[None].astype(embedding.dtype)
    fg_direct = embedding * ind
    bg_direct = embedding * (1.0 - ind).astype(embedding.dtype)
    fg_is_big = ind >= 0.5
    fg = np.where(fg_is_big, fg_direct, embedding - bg_direct)
    bg = np.where(fg_is_big, embedding - fg_direct, bg_direct)
    return fg, bg


def fuse_scheme_b(
    embedding: np.ndarray, indicator: np.ndarray, weights: ProjectionWeights
) -> tuple[np.ndarray, np.ndarray]:
    """Spatial prior from (embedding, indicator); returns (prior, modulated features)."""
    c, h, w = embedding.shape
    stacked = np.concatenate([embedding.reshape(c, -1), indicator.reshape(1, -1)], axis=0)
    logit = weights.prior_matrix @ stacked + weights.prior_bias
    prior = 1.0 / (1.0 + np.exp(-logit))
    prior = prior.reshape(h, w)
    return prior, embedding * prior[None]


def project_key_value(
    fg_features: np.ndarray,
    bg_features: np.ndarray,
    indicator: np.ndarray,
    weights: ProjectionWeights,
) -> KeyValueMaps:
    """Project fused branch features to keys and values; the indicator becomes
    the last value channel."""
    feats = fg_features + bg_features
    c, h, w = feats.shape
    flat = feats.reshape(c, -1).astype(np.float64)
    keys = weights.key_matrix @ flat + weights.key_bias[:, None]
    vals = weights.value_matrix @ flat + weights.value_bias[:, None]
    values = np.concatenate([vals, indicator.reshape(1, -1)], axis=0)
    return KeyValueMaps(
        keys=keys.reshape(weights.c_key, h, w).astype(np.float32),
        values=values.reshape(weights.c_value, h, w).astype(np.float32),
    )


def make_memory_kv(
    level: FeatureMap, indicator: np.ndarray, weights: ProjectionWeights, scheme: str
) -> KeyValueMaps:
    emb = level.data
    if scheme == "a":
        fg, bg = fuse_scheme_a(emb, indicator)
        return project_key_value(fg, bg, indicator, weights)
    _, modulated = fuse_scheme_b(emb, indicator, weights)
    return project_key_value(modulated, np.zeros_like(modulated), indicator, weights)


def make_query_kv(
    level: FeatureMap, weights: ProjectionWeights, scheme: str, indicator_proxy: np.ndarray | None = None
) -> KeyValueMaps:
    """Key/value maps for the querying frame.

    Scheme "a" needs no mask (branch sum equals the raw embedding). Scheme "b"
    modulates with a prior built from `indicator_proxy`. Query values are
    never read; the indicator slot is filled with ones.
    """
    emb = level.data
    ones = np.ones(emb.shape[1:], dtype=np.float32)
    if scheme == "a":
        return project_key_value(emb, np.zeros_like(emb), ones, weights)
    if indicator_proxy is None:
        raise ValueError("scheme 'b' queries need an indicator proxy")
    _, modulated = fuse_scheme_b(emb, indicator_proxy, weights)
    return project_key_value(modulated, np.zeros_like(modulated), ones, weights)


@dataclass
class MemoryBank:
    """Per-object store of key/value maps for selected past frames.

    Frame 0 is always kept; a later frame is kept iff its index is a multiple
    of `interval`. Single writer per object: writes must come in increasing
    frame order.
    """

    interval: int
    entries: dict[int, list[tuple[int, KeyValueMaps]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.interval < 1:
            raise ValueError(f"interval must be >= 1, got {self.interval}")

    def stored_indices(self, obj: int) -> list[int]:
        return [idx for idx, _ in self.entries.get(obj, [])]


def memory_write(bank: MemoryBank, frame_idx: int, maps: KeyValueMaps, obj: int) -> MemoryBank:
    """Offer one frame's maps to the bank; stores it only on the keep schedule."""
    if frame_idx < 0:
        raise ValueError(f"frame index must be >= 0, got {frame_idx}")
    entries = bank.entries.setdefault(obj, [])
    if entries and frame_idx <= entries[-1][0]:
        raise ValueError(f"frame {frame_idx} arrived after stored frame {entries[-1][0]}")
    if frame_idx == 0 or frame_idx % bank.interval == 0:
        entries.append((frame_idx, maps))
    return bank


def _gather_memory(bank: MemoryBank, obj: int) -> tuple[np.ndarray, np.ndarray]:
    entries = bank.entries.get(obj, [])
    if not entries:
        raise ValueError(f"empty memory bank for object {obj}")
    keys = np.concatenate([kv.keys.reshape(kv.keys.shape[0], -1) for _, kv in entries], axis=1)
    values = np.concatenate([kv.values.reshape(kv.values.shape[0], -1) for _, kv in entries], axis=1)
    return keys, values


def attention_weights(query_keys: np.ndarray, memory_keys: np.ndarray) -> np.ndarray:
    """Softmax attention rows: (n_query, n_memory) float64, each row sums to 1.

    Scores are scaled dot products (1/sqrt(c_key)); the row max is subtracted
    before exponentiation for stability.
    """
    c_key = query_keys.shape[0]
    sims = query_keys.astype(np.float64).T @ memory_keys.astype(np.float64)
    sims /= np.sqrt(c_key)
    sims -= sims.max(axis=1, keepdims=True)
    np.exp(sims, out=sims)
    sims /= sims.sum(axis=1, keepdims=True)
    return sims


def memory_read(query: KeyValueMaps, bank: MemoryBank, obj: int) -> np.ndarray:
    """Attention readout over everything stored for `obj`: (c_value, h, w) float32.

    The last channel is the objectness evidence, a convex combination of
    stored indicators, clipped to [0,1] against float round-off.
    """
    mem_keys, mem_values = _gather_memory(bank, obj)
    h, w = query.grid
    q = query.keys.reshape(query.keys.shape[0], -1)
    attn = attention_weights(q, mem_keys)
    readout = attn @ mem_values.astype(np.float64).T
    readout = readout.T.reshape(mem_values.shape[0], h, w)
    readout[-1] = np.clip(readout[-1], 0.0, 1.0)
    return readout.astype(np.float32)


def memory_read_bruteforce(query: KeyValueMaps, bank: MemoryBank, obj: int) -> np.ndarray:
    """Reference readout: per-query loop in extended precision, plain softmax.

    Mathematically identical to memory_read; kept deliberately naive (no
    shared code, no max-shift) as an independent numeric oracle. Extended
    precision makes the unshifted exponentials safe at test scales.
    """
    entries = bank.entries.get(obj, [])
    if not entries:
        raise ValueError(f"empty memory bank for object {obj}")
    mem_keys = np.concatenate(
        [kv.keys.reshape(kv.keys.shape[0], -1) for _, kv in entries], axis=1
    ).astype(np.longdouble)
    mem_values = np.concatenate(
        [kv.values.reshape(kv.values.shape[0], -1) for _, kv in entries], axis=1
    ).astype(np.longdouble)
    c_key, (h, w) = query.keys.shape[0], query.grid
    queries = query.keys.reshape(c_key, -1).astype(np.longdouble)
    scale = np.longdouble(1.0) / np.sqrt(np.longdouble(c_key))
    out = np.zeros((mem_values.shape[0], h * w), dtype=np.longdouble)
    for p in range(queries.shape[1]):
        sims = mem_keys.T @ queries[:, p] * scale
        weights = np.exp(sims)
        total = weights.sum()
        out[:, p] = mem_values @ weights / total
    return out.reshape(mem_values.shape[0], h, w).astype(np.float32)
