"""Attention and recurrent building blocks shared by the encoders and associator."""

from __future__ import annotations

import numpy as np

from .diffcore import Linear, Module, Parameter, Tensor, glorot_uniform, ops


class MultiHeadAttention(Module):
    """Scaled dot-product attention with ``heads`` heads of width D // heads.

    Queries come from ``x`` (B, Nq, D), keys and values from ``ctx`` (B, Nk, D).
    ``key_mask`` (B, Nk) marks admissible keys.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        B, N, D = x.shape
        return ops.transpose(x.reshape(B, N, self.heads, D // self.heads), (0, 2, 1, 3))

    def __call__(self, x: Tensor, ctx: Tensor, key_mask=None):
        B, Nq, D = x.shape
        d = D // self.heads
        q = self._split(self.q(x))
        k = self._split(self.k(ctx))
        v = self._split(self.v(ctx))
        logits = ops.scale(q @ ops.swapaxes(k, -1, -2), 1.0 / np.sqrt(d))
        mask = None if key_mask is None else np.asarray(key_mask, bool)[:, None, None, :]
        att = ops.softmax(logits, axis=-1, mask=mask)
        out = ops.transpose(att @ v, (0, 2, 1, 3)).reshape(B, Nq, D)
        return self.o(out), att


class GRUCell(Module):
    """Two-gate recurrent cell: h' = (1 - z) * h + z * tanh(x Wn + (r * h) Un + bn)."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.Wx = Parameter(glorot_uniform(rng, n_in, hidden, (n_in, 3 * hidden)))
        self.Uzr = Parameter(glorot_uniform(rng, hidden, hidden, (hidden, 2 * hidden)))
        self.Un = Parameter(glorot_uniform(rng, hidden, hidden))
        self.b = Parameter(np.zeros(3 * hidden))

    def input_projection(self, x: Tensor) -> Tensor:
        return x @ self.Wx + self.b

    def step(self, xp: Tensor, h: Tensor) -> Tensor:
        """One update from the precomputed input projection ``xp`` (B, 3H)."""
        H = self.hidden
        zr = ops.sigmoid(xp[:, :2 * H] + h @ self.Uzr)
        z, r = zr[:, :H], zr[:, H:]
        n = ops.tanh(xp[:, 2 * H:] + (r * h) @ self.Un)
        return h + z * (n - h)


def run_gru(cell: GRUCell, x: Tensor, mask: np.ndarray, reverse: bool = False):
    """Run ``cell`` over (B, N, C) honoring ``mask``; padded steps keep the state.

    Returns the per-position states (B, N, H) and the final state (B, H).
    """
    B, N, _ = x.shape
    xp = cell.input_projection(x)
    h = Tensor(np.zeros((B, cell.hidden), dtype=x.dtype))
    states = [None] * N
    order = range(N - 1, -1, -1) if reverse else range(N)
    m = np.asarray(mask, dtype=x.dtype)
    for t in order:
        new = cell.step(xp[:, t, :], h)
        keep = m[:, t:t + 1]
        h = h + (new - h) * keep
        states[t] = h
    seq = ops.concat([s.reshape(B, 1, cell.hidden) for s in states], axis=1)
    return seq, h
