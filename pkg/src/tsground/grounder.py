"""Anchor proposals, scoring head, losses, ranking and the R@n,IoU=m metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Conv1d, Linear, Module, Tensor, ops


class ProposalError(ValueError):
    pass


@dataclass
class ProposalSet:
    """Anchors (R, 2) as [start, end) frame pairs with their width ids.

    ``scores``/``offsets`` are filled by the head (numpy views of the graph
    tensors, optionally batched); targets by :func:`attach_targets`.
    """

    T: int
    anchors: np.ndarray
    width_ids: np.ndarray
    scores: np.ndarray | None = None
    offsets: np.ndarray | None = None
    targets: np.ndarray | None = None
    positive: np.ndarray | None = None
    delta_gt: np.ndarray | None = None

    def __len__(self):
        return len(self.anchors)


def generate_proposals(T: int, widths, stride: int = 1) -> ProposalSet:
    """Every (start, width) with start on the stride grid and start + width <= T.

    Ordering is start-major, then width in the given order.
    """
    widths = [int(w) for w in widths]
    if not widths or min(widths) < 1 or stride < 1:
        raise ProposalError("widths must be non-empty positive ints and stride >= 1")
    anchors, wid = [], []
    for t in range(0, T, stride):
        for j, w in enumerate(widths):
            if t + w <= T:
                anchors.append((t, t + w))
                wid.append(j)
    if not anchors:
        raise ProposalError(f"no proposal fits in T={T} with widths {widths}")
    return ProposalSet(T, np.asarray(anchors, dtype=np.int64), np.asarray(wid, dtype=np.int64))


def temporal_iou(a, b) -> float:
    a0, a1 = float(a[0]), float(a[1])
    b0, b1 = float(b[0]), float(b[1])
    if not (a0 < a1 and b0 < b1):
        raise ProposalError(f"invalid segment {a} or {b}")
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    return inter / union


def iou_with(segments: np.ndarray, gt) -> np.ndarray:
    """IoU of each row of ``segments`` (R, 2) against one segment."""
    segments = np.asarray(segments, dtype=np.float64)
    g0, g1 = float(gt[0]), float(gt[1])
    if not g0 < g1 or np.any(segments[:, 0] >= segments[:, 1]):
        raise ProposalError("invalid segment")
    inter = np.clip(np.minimum(segments[:, 1], g1) - np.maximum(segments[:, 0], g0), 0.0, None)
    union = (segments[:, 1] - segments[:, 0]) + (g1 - g0) - inter
    return inter / union


def attach_targets(props: ProposalSet, gt, threshold: float) -> ProposalSet:
    """IoU targets, positive flags (IoU > threshold) and boundary offsets."""
    gs, ge = float(gt[0]), float(gt[1])
    if not 0 <= gs < ge <= props.T:
        raise ProposalError(f"ground truth ({gs}, {ge}) outside [0, {props.T}]")
    targets = iou_with(props.anchors, (gs, ge))
    positive = targets > threshold
    delta = np.stack([gs - props.anchors[:, 0], ge - props.anchors[:, 1]], axis=1).astype(float)
    delta[~positive] = 0.0
    return ProposalSet(props.T, props.anchors, props.width_ids, props.scores, props.offsets,
                       targets, positive, delta)


class GroundingHead(Module):
    """Two kernel-3 temporal convolutions, then per-frame linear heads.

    Anchor readout is a fixed linear map from the per-frame head outputs:

    * ``"start"``: the anchor's start frame emits one logit and two offsets
      per width.
    * ``"span"``: the logit sums a start-frame term, an end-frame term and the
      mean of a per-frame term over the anchor; the start offset comes from
      the start frame and the end offset from the last frame.
    """

    def __init__(self, dim: int, props: ProposalSet, n_widths: int, rng: np.random.Generator,
                 readout: str = "span"):
        self.readout = readout
        self.conv1 = Conv1d(dim, dim, 3, rng)
        self.conv2 = Conv1d(dim, dim, 3, rng)
        n_score = n_widths * (3 if readout == "span" else 1)
        self.score = Linear(dim, n_score, rng)
        self.offset = Linear(dim, 2 * n_widths, rng)
        self._score_map, self._offset_map = readout_maps(props, n_widths, readout)

    def __call__(self, H: Tensor):
        """Return anchor logits (B, R) and offsets (B, R, 2)."""
        B, T, _ = H.shape
        # fused frames come out of a softmax over T frames, so rows scale as 1/T
        x = self.conv2(ops.relu(self.conv1(ops.scale(H, T))))
        u = self.score(x).reshape(B, -1)
        v = self.offset(x).reshape(B, -1)
        logits = u @ Tensor(self._score_map.astype(H.dtype))
        offsets = (v @ Tensor(self._offset_map.astype(H.dtype))).reshape(B, -1, 2)
        return logits, offsets


def readout_maps(props: ProposalSet, n_widths: int, readout: str):
    """Selection matrices from flattened per-frame head outputs to anchors."""
    T, R = props.T, len(props)
    if readout == "span":
        cu = 3 * n_widths
        S = np.zeros((T * cu, R))
        for r, ((s, e), w) in enumerate(zip(props.anchors, props.width_ids)):
            S[s * cu + w, r] += 1.0
            S[(e - 1) * cu + n_widths + w, r] += 1.0
            for t in range(s, e):
                S[t * cu + 2 * n_widths + w, r] += 1.0 / (e - s)
        cv = 2 * n_widths
        O = np.zeros((T * cv, 2 * R))
        for r, ((s, e), w) in enumerate(zip(props.anchors, props.width_ids)):
            O[s * cv + w, 2 * r] = 1.0
            O[(e - 1) * cv + n_widths + w, 2 * r + 1] = 1.0
    elif readout == "start":
        S = np.zeros((T * n_widths, R))
        O = np.zeros((T * 2 * n_widths, 2 * R))
        for r, ((s, _), w) in enumerate(zip(props.anchors, props.width_ids)):
            S[s * n_widths + w, r] = 1.0
            O[s * 2 * n_widths + 2 * w, 2 * r] = 1.0
            O[s * 2 * n_widths + 2 * w + 1, 2 * r + 1] = 1.0
    else:
        raise ValueError(f"unknown readout {readout!r}")
    return S, O


# -- losses ----------------------------------------------------------------------

def loss_iou(scores: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of confidences against IoU targets."""
    return ops.binary_cross_entropy(scores, targets).mean()


def loss_boundary(offsets: Tensor, delta_gt, positive) -> Tensor:
    """Smooth-L1 offset error averaged over positives of each sample.

    ``offsets`` is (B, R, 2) or (R, 2); samples without positives add zero.
    Batched results are averaged over samples.
    """
    positive = np.asarray(positive, dtype=bool)
    delta_gt = np.asarray(delta_gt, dtype=offsets.dtype)
    if offsets.ndim == 2:
        offsets = offsets.reshape(1, *offsets.shape)
        positive = positive[None]
        delta_gt = delta_gt[None]
    B = offsets.shape[0]
    n_pos = positive.sum(axis=1)
    weight = np.where(positive, 1.0 / np.maximum(n_pos, 1)[:, None], 0.0).astype(offsets.dtype)
    err = ops.smooth_l1(offsets - Tensor(delta_gt)).sum(axis=-1)
    return (err * weight).sum() * (1.0 / B)


def total_loss(l_iou: Tensor, l_boundary: Tensor, alpha: float) -> Tensor:
    return l_iou + ops.scale(l_boundary, alpha)


# -- inference ---------------------------------------------------------------------

def refine(anchors: np.ndarray, offsets: np.ndarray, T: int) -> np.ndarray:
    seg = np.asarray(anchors, dtype=np.float64) + np.asarray(offsets, dtype=np.float64)
    return np.clip(seg, 0.0, float(T))


def nms(segments: np.ndarray, scores: np.ndarray, threshold: float, top_n: int | None = None):
    """Greedy suppression in descending score order (stable on ties).

    A candidate is dropped if its IoU with any kept segment exceeds ``threshold``.
    Returns kept indices in rank order.
    """
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    kept: list[int] = []
    for i in order:
        if top_n is not None and len(kept) >= top_n:
            break
        if kept and np.any(iou_with(segments[kept], segments[i]) > threshold):
            continue
        kept.append(int(i))
    return kept


def predict(anchors, scores, offsets, T: int, top_n: int = 5, nms_threshold: float = 0.5):
    """Ranked refined segments as a list of (start, end, score).

    Segments are shifted by their offsets and clamped to [0, T]; those that
    collapse to non-positive length are dropped.
    """
    seg = refine(anchors, offsets, T)
    scores = np.asarray(scores, dtype=np.float64)
    valid = seg[:, 1] > seg[:, 0]
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return []
    kept = nms(seg[idx], scores[idx], nms_threshold, top_n)
    return [(float(seg[idx[k], 0]), float(seg[idx[k], 1]), float(scores[idx[k]])) for k in kept]


def recall_at_n(predictions, gts, n: int, m: float) -> float:
    """Percentage of samples whose top-n predictions reach IoU > m with the ground truth."""
    if len(predictions) == 0:
        raise ValueError("recall_at_n needs at least one sample")
    if len(predictions) != len(gts):
        raise ValueError("predictions and ground truths differ in length")
    hits = 0
    for preds, gt in zip(predictions, gts):
        top = [p for p in preds[:n] if p[1] > p[0]]
        if top and np.max(iou_with(np.asarray([p[:2] for p in top]), gt)) > m:
            hits += 1
    return 100.0 * hits / len(predictions)


def format_prediction_record(sample_id: int, ranked) -> dict:
    """Prediction dump record: ranked (start, end, score) as 6-decimal text."""
    return {"id": int(sample_id),
            "top_segments": [[f"{s:.6f}", f"{e:.6f}", f"{c:.6f}"] for s, e, c in ranked]}


def parse_prediction_record(record: dict):
    return int(record["id"]), [tuple(float(x) for x in seg) for seg in record["top_segments"]]
