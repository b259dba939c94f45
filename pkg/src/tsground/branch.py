"""Cross-modal object reasoning for one stream.

Three stages: a textual gate driven by word attention, a fully connected
spatio-temporal graph layer with residual, and query-guided fusion of the K
objects of each frame into one frame vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Linear, Module, Parameter, Tensor, glorot_uniform, ops

COS_FLOOR = 1e-8


@dataclass
class BranchOutput:
    stream: str
    H: Tensor                   # (B, T, D)
    object_weights: np.ndarray  # (B, T, K), softmax over the objects of each frame
    cosine: np.ndarray          # (B, T, K)
    word_weights: np.ndarray | None = None   # (B, T*K, N)
    adjacency: np.ndarray | None = None      # (B, T*K, T*K), last graph layer


class GraphLayer(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.W4 = Parameter(glorot_uniform(rng, dim, dim))
        self.W5 = Parameter(glorot_uniform(rng, dim, dim))
        self.W6 = Parameter(glorot_uniform(rng, dim, dim))
        self.W7 = Parameter(glorot_uniform(rng, dim, dim))

    def __call__(self, F: Tensor):
        """Return the updated objects and the row-stochastic adjacency."""
        a = F @ self.W4
        b = F @ self.W5
        A = ops.softmax(a @ ops.swapaxes(b, -1, -2), axis=-1)
        return (A @ F @ self.W6) @ self.W7 + F, A


class ReasoningBranch(Module):
    def __init__(self, stream: str, dim: int, rng: np.random.Generator,
                 graph_layers: int = 1, use_graph: bool = True, use_gate: bool = True):
        self.stream = stream
        self.use_graph = use_graph
        self.use_gate = use_gate
        # word attention scores: w^T tanh(W1 f + W2 q + b1)
        self.W1 = Parameter(glorot_uniform(rng, dim, dim))
        self.W2 = Parameter(glorot_uniform(rng, dim, dim))
        self.b1 = Parameter(np.zeros(dim))
        self.w = Parameter(glorot_uniform(rng, dim, 1))
        self.gate = Linear(dim, dim, rng)  # W3, b2
        self.graph = [GraphLayer(dim, rng) for _ in range(graph_layers)]
        self.Wq = Parameter(glorot_uniform(rng, dim, dim))

    def cross_modal_interaction(self, F: Tensor, Q: Tensor, mask):
        """Gate each object by the words it attends to.

        Returns the gated objects (B, TK, D) and word weights (B, TK, N).
        """
        B, TK, D = F.shape
        N = Q.shape[1]
        left = (F @ self.W1).reshape(B, TK, 1, D)
        right = (Q @ self.W2).reshape(B, 1, N, D)
        scores = (ops.tanh(left + right + self.b1) @ self.w).reshape(B, TK, N)
        m = np.asarray(mask, dtype=bool).reshape(B, 1, N)
        att = ops.softmax(scores, axis=-1, mask=m)
        textual = att @ Q
        return ops.sigmoid(self.gate(textual)) * F, att

    def graph_reason(self, F: Tensor):
        A = None
        for layer in self.graph:
            F, A = layer(F)
        return F, A

    def fuse_objects(self, F: Tensor, q_global: Tensor, T: int, K: int):
        """Cosine-weighted pooling of each frame's K objects.

        Returns H (B, T, D), weights (B, T, K) and cosines (B, T, K).
        """
        B, TK, D = F.shape
        g = (q_global @ self.Wq).reshape(B, 1, D)
        num = (F * g).sum(axis=-1)
        den = ops.l2_norm(F, axis=-1, floor=COS_FLOOR) * ops.l2_norm(g, axis=-1, floor=COS_FLOOR)
        c = (num / den).reshape(B, T, K)
        wts = ops.softmax(c, axis=-1)
        H = (wts.reshape(B, T, 1, K) @ F.reshape(B, T, K, D)).reshape(B, T, D)
        return H, wts, c

    def __call__(self, F: Tensor, Q: Tensor, mask, q_global: Tensor, T: int, K: int) -> BranchOutput:
        word_w = adj = None
        if self.use_gate:
            F, att = self.cross_modal_interaction(F, Q, mask)
            word_w = att.data
        if self.use_graph:
            F, A = self.graph_reason(F)
            adj = A.data
        H, wts, c = self.fuse_objects(F, q_global, T, K)
        return BranchOutput(self.stream, H, wts.data, c.data, word_w, adj)
