"""Stream and query encoders.

Stream encoding turns per-object local features, their boxes and per-frame
global features into a position-aware object matrix of shape (B, T*K, D);
row ``t*K + k`` is object ``k`` of frame ``t``. The query encoder produces
word-level features Q (B, N, D) and a sentence vector (B, D).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import LayerNorm, Linear, Module, Tensor, ops
from .layers import GRUCell, MultiHeadAttention, run_gru


class SampleError(ValueError):
    """Input features violate a structural invariant."""


@dataclass
class StreamObjectFeatures:
    stream: str
    local: np.ndarray   # (T, K, D_in)
    boxes: np.ndarray   # (T, K, 4) as x1, y1, x2, y2 in [0, 1]
    global_: np.ndarray  # (T, D_in)

    def validate(self) -> None:
        T, K, _ = self.local.shape
        if self.boxes.shape != (T, K, 4) or self.global_.shape[0] != T:
            raise SampleError(f"{self.stream}: inconsistent shapes {self.local.shape}, "
                              f"{self.boxes.shape}, {self.global_.shape}")
        validate_boxes(self.boxes)


@dataclass
class QueryFeatures:
    embeddings: np.ndarray  # (N, D_w)
    mask: np.ndarray        # (N,) bool, true for real words

    def validate(self, max_words: int | None = None) -> None:
        if not np.any(self.mask):
            raise SampleError("query has no real word")
        if max_words is not None and len(self.mask) > max_words:
            raise SampleError(f"query length {len(self.mask)} exceeds {max_words}")


@dataclass
class EncodedQuery:
    Q: Tensor         # (B, N, D), padded rows zero
    q_global: Tensor  # (B, D)
    mask: np.ndarray  # (B, N)
    self_attention: np.ndarray  # (B, heads, N, N)


def validate_boxes(boxes: np.ndarray) -> None:
    b = np.asarray(boxes)
    if np.any(b < 0) or np.any(b > 1):
        raise SampleError("box coordinates must lie in [0, 1]")
    if np.any(b[..., 0] >= b[..., 2]) or np.any(b[..., 1] >= b[..., 3]):
        raise SampleError("boxes need x1 < x2 and y1 < y2")


def encode_temporal_position(t: int, T: int, d: int) -> np.ndarray:
    """Sinusoidal code of frame ``t``: sin/cos pairs at geometric frequencies."""
    if d % 2:
        raise ValueError(f"temporal encoding width must be even, got {d}")
    if not 0 <= t < T:
        raise ValueError(f"frame index {t} outside [0, {T})")
    return temporal_position_table(T, d)[t]


def temporal_position_table(T: int, d: int) -> np.ndarray:
    if d % 2:
        raise ValueError(f"temporal encoding width must be even, got {d}")
    i = np.arange(d // 2)
    freq = 1.0 / np.power(10000.0, 2.0 * i / d)
    ang = np.arange(T)[:, None] * freq[None, :]
    out = np.empty((T, d))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


class StreamEncoder(Module):
    """Position-aware object encoder for one stream."""

    def __init__(self, d_in: int, dim: int, pos_dim: int, rng: np.random.Generator):
        self.pos_dim = pos_dim
        self.box = Linear(4, pos_dim, rng)
        self.local = Linear(d_in + 2 * pos_dim, dim, rng)
        self.glob = Linear(d_in + pos_dim, dim, rng)
        self.fuse = Linear(2 * dim, dim, rng)

    def encode_spatial_position(self, boxes) -> Tensor:
        return self.box(ops.lift(boxes, self.box.W))

    def __call__(self, local, boxes, glob) -> Tensor:
        local = ops.lift(local, self.box.W)
        glob = ops.lift(glob, self.box.W)
        B, T, K, _ = local.shape
        et = temporal_position_table(T, self.pos_dim).astype(local.dtype)
        eb = self.encode_spatial_position(boxes)
        et_obj = Tensor(np.broadcast_to(et[None, :, None, :], (B, T, K, self.pos_dim)).copy())
        v = self.local(ops.concat([local, eb, et_obj], axis=-1))           # (B,T,K,D)
        et_frame = Tensor(np.broadcast_to(et[None], (B, T, self.pos_dim)).copy())
        g = self.glob(ops.concat([glob, et_frame], axis=-1))                # (B,T,D)
        g = ops.expand(g.reshape(B, T, 1, g.shape[-1]), (B, T, K, g.shape[-1]))
        F = self.fuse(ops.concat([v, g], axis=-1))
        return F.reshape(B, T * K, F.shape[-1])


class QueryEncoder(Module):
    """Projection, masked self-attention (post-norm residual), bidirectional GRU."""

    def __init__(self, d_w: int, dim: int, heads: int, hidden: int, rng: np.random.Generator):
        self.proj = Linear(d_w, dim, rng)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm = LayerNorm(dim)
        self.fwd = GRUCell(dim, hidden, rng)
        self.bwd = GRUCell(dim, hidden, rng)
        self.out = Linear(2 * hidden, dim, rng)
        self.sentence = Linear(2 * hidden, dim, rng)

    def __call__(self, words, mask) -> EncodedQuery:
        words = ops.lift(words, self.proj.W)
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 1:
            mask = mask[None]
        if not np.all(mask.any(axis=1)):
            raise SampleError("query has no real word")
        x = self.proj(words)
        a, att = self.attn(x, x, key_mask=mask)
        x = self.norm(x + a)
        fseq, fh = run_gru(self.fwd, x, mask)
        bseq, bh = run_gru(self.bwd, x, mask, reverse=True)
        keep = mask.astype(x.dtype)[:, :, None]
        Q = self.out(ops.concat([fseq, bseq], axis=-1)) * keep
        q_global = self.sentence(ops.concat([fh, bh], axis=-1))
        return EncodedQuery(Q, q_global, mask, att.data)
