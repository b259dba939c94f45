"""The full grounding network: encoders, three branches, associator, head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grounder
from .associator import Associator, FusedFrames
from .branch import BranchOutput, ReasoningBranch
from .config import GUIDANCE, STREAMS, ExperimentConfig
from .diffcore import Module, Tensor, ops
from .encoders import EncodedQuery, QueryEncoder, SampleError, StreamEncoder


@dataclass
class Batch:
    """Stacked model inputs; every array has a leading batch axis."""

    local: dict            # stream -> (B, T, K, D_in)
    global_: dict          # stream -> (B, T, D_in)
    boxes: np.ndarray      # (B, T, K, 4)
    words: np.ndarray      # (B, N, D_w)
    mask: np.ndarray       # (B, N) bool
    gt: np.ndarray         # (B, 2)
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.gt)


def collate(samples, dtype=np.float64, max_words: int | None = None) -> Batch:
    """Stack samples (objects with ``streams``, ``query``, ``gt``, ``id``)."""
    if not samples:
        raise SampleError("empty batch")
    N = max_words or max(len(s.query.mask) for s in samples)
    Dw = samples[0].query.embeddings.shape[1]
    words = np.zeros((len(samples), N, Dw), dtype=dtype)
    mask = np.zeros((len(samples), N), dtype=bool)
    for i, s in enumerate(samples):
        n = len(s.query.mask)
        if n > N:
            raise SampleError(f"query length {n} exceeds {N}")
        words[i, :n] = s.query.embeddings
        mask[i, :n] = s.query.mask
    return Batch(
        local={st: np.stack([s.streams[st].local for s in samples]).astype(dtype) for st in STREAMS},
        global_={st: np.stack([s.streams[st].global_ for s in samples]).astype(dtype)
                 for st in STREAMS},
        boxes=np.stack([s.streams["appearance"].boxes for s in samples]).astype(dtype),
        words=words, mask=mask,
        gt=np.asarray([s.gt for s in samples], dtype=np.float64),
        ids=[s.id for s in samples],
    )


@dataclass
class ModelOutput:
    logits: Tensor                 # (B, R)
    scores: Tensor                 # (B, R), sigmoid of logits
    offsets: Tensor                # (B, R, 2)
    query: EncodedQuery
    encoded: dict                  # stream -> (B, T*K, D)
    branches: dict                 # stream -> BranchOutput
    fused: FusedFrames


class GroundingNetwork(Module):
    def __init__(self, config: ExperimentConfig):
        c = config
        self.config = c
        self.proposals = grounder.generate_proposals(c.T, c.widths, c.stride)
        rng = np.random.default_rng(c.seed)
        self.query_encoder = QueryEncoder(c.D_w, c.D, c.heads, c.hidden, rng)
        self.encoders = {s: StreamEncoder(c.D_in, c.D, c.pos_dim, rng) for s in STREAMS}
        self.branches = {s: ReasoningBranch(s, c.D, rng, c.graph_layers, c.use_graph, c.use_gate)
                         for s in STREAMS}
        guidance = {(t, s): getattr(c, f"guide_{t}_{s}") for t, s in GUIDANCE}
        self.associator = Associator(c.D, c.heads, rng, guidance, c.enabled_streams,
                                     c.use_associator)
        self.head = grounder.GroundingHead(c.D, self.proposals, len(c.widths), rng, c.readout)
        self.astype(np.dtype(c.dtype))
        self.assign_names()

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def check_batch(self, batch: Batch) -> None:
        c = self.config
        B = len(batch)
        want = (B, c.T, c.K, c.D_in)
        for s in STREAMS:
            if batch.local[s].shape != want or batch.global_[s].shape != (B, c.T, c.D_in):
                raise SampleError(f"{s}: expected local {want}, got {batch.local[s].shape}")
        if batch.words.shape[2] != c.D_w:
            raise SampleError(f"word width {batch.words.shape[2]} != D_w={c.D_w}")

    def forward(self, batch: Batch) -> ModelOutput:
        self.check_batch(batch)
        c = self.config
        dt = self.dtype
        B = len(batch)
        q = self.query_encoder(batch.words.astype(dt), batch.mask)
        encoded, outs, H = {}, {}, {}
        for s in STREAMS:
            if s not in c.enabled_streams:
                H[s] = Tensor(np.zeros((B, c.T, c.D), dtype=dt))
                continue
            F = self.encoders[s](batch.local[s].astype(dt), batch.boxes.astype(dt),
                                 batch.global_[s].astype(dt))
            encoded[s] = F
            outs[s] = self.branches[s](F, q.Q, batch.mask, q.q_global, c.T, c.K)
            H[s] = outs[s].H
        fused = self.associator(H, q.q_global)
        logits, offsets = self.head(fused.H)
        return ModelOutput(logits, ops.sigmoid(logits), offsets, q, encoded, outs, fused)

    __call__ = forward

    def targets(self, batch: Batch):
        """IoU targets (B, R), positive flags (B, R) and offset targets (B, R, 2)."""
        t, p, d = [], [], []
        for gt in batch.gt:
            ps = grounder.attach_targets(self.proposals, gt, self.config.pos_threshold)
            t.append(ps.targets)
            p.append(ps.positive)
            d.append(ps.delta_gt)
        return np.stack(t), np.stack(p), np.stack(d)

    def loss(self, batch: Batch, out: ModelOutput | None = None) -> Tensor:
        out = out or self.forward(batch)
        targets, positive, delta = self.targets(batch)
        l_iou = grounder.loss_iou(out.scores, targets.astype(self.dtype))
        l_bd = grounder.loss_boundary(out.offsets, delta, positive)
        return grounder.total_loss(l_iou, l_bd, self.config.alpha)

    def predict(self, batch: Batch, top_n: int = 5, out: ModelOutput | None = None):
        """Ranked (start, end, score) lists, one per sample."""
        out = out or self.forward(batch)
        c = self.config
        return [grounder.predict(self.proposals.anchors, out.scores.data[i], out.offsets.data[i],
                                 c.T, top_n, c.nms_threshold) for i in range(len(batch))]
