"""Triple-modal transformer association and query-guided stream fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import STREAMS
from .diffcore import LayerNorm, Linear, Module, Tensor, ops
from .layers import MultiHeadAttention


@dataclass
class FusedFrames:
    H: Tensor                          # (B, T, D)
    frame_weights: dict                # stream -> (B, T) softmax over frames
    attention: dict                    # stream -> (B, heads, T, n_keys) or None


class TriTRM(Module):
    """Attend one stream's frames over the concatenated frames of its guides.

    Pre-norm residual blocks: x + MHA(LN(x), LN(sources)), then x + FFN(LN(x))
    with a 2D-wide rectified hidden layer. Sources share one key/value map.
    The last projection of each residual block starts at zero, so a fresh
    block is the identity and learns how much guidance to add.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.norm_q = LayerNorm(dim)
        self.norm_kv = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm_ffn = LayerNorm(dim)
        self.ffn1 = Linear(dim, 2 * dim, rng)
        self.ffn2 = Linear(2 * dim, dim, rng)
        # identity at init; unnormalized residual growth otherwise sharpens
        # the frame softmax of the fusion on random frames
        self.attn.o.W.data[:] = 0
        self.ffn2.W.data[:] = 0

    def __call__(self, target: Tensor, sources: list):
        if not sources:
            return target, None
        ctx = ops.concat(list(sources), axis=1)
        a, att = self.attn(self.norm_q(target), self.norm_kv(ctx))
        x = target + a
        x = x + self.ffn2(ops.relu(self.ffn1(self.norm_ffn(x))))
        return x, att.data


def fuse_streams(enhanced: dict, q_global: Tensor):
    """Sum of streams, each frame scaled by a softmax over that stream's frame scores."""
    B, D = q_global.shape
    q = q_global.reshape(B, D, 1)
    total = None
    weights = {}
    for s, Hs in enhanced.items():
        T = Hs.shape[1]
        w = ops.softmax((Hs @ q).reshape(B, T), axis=-1)
        weights[s] = w.data
        term = Hs * w.reshape(B, T, 1)
        total = term if total is None else total + term
    return total, weights


class Associator(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, guidance=None,
                 enabled=STREAMS, active: bool = True):
        """``guidance`` maps (target, source) to bool; absent pairs count as on."""
        self.blocks = {s: TriTRM(dim, heads, rng) for s in STREAMS}
        self.guidance = dict(guidance or {})
        self.enabled = tuple(enabled)
        self.active = active

    def guides(self, target: str) -> list:
        return [s for s in STREAMS
                if s != target and s in self.enabled and self.guidance.get((target, s), True)]

    def __call__(self, H: dict, q_global: Tensor) -> FusedFrames:
        enhanced, attention = {}, {}
        for s in STREAMS:
            if s not in self.enabled:
                continue
            if self.active:
                enhanced[s], attention[s] = self.blocks[s](H[s], [H[g] for g in self.guides(s)])
            else:
                enhanced[s], attention[s] = H[s], None
        fused, weights = fuse_streams(enhanced, q_global)
        return FusedFrames(fused, weights, attention)
