"""Evaluation runner, reference rankings and the metrics report."""

from __future__ import annotations

import json

import numpy as np

from ..config import STREAMS
from ..encoders import SampleError
from ..grounder import format_prediction_record, generate_proposals, iou_with, predict, recall_at_n
from .io import Checkpoint
from .train import model_from_checkpoint, predict_samples

N_LIST = (1, 5)
M_LIST = (0.5, 0.7)


def metric_key(n: int, m: float) -> str:
    return f"R@{n},IoU={m}"


def metric_grid(predictions, gts, n_list=N_LIST, m_list=M_LIST) -> dict:
    return {metric_key(n, m): recall_at_n(predictions, gts, n, m) for n in n_list for m in m_list}


def check_compatible(config, samples) -> None:
    """Reject samples whose feature extents differ from the model's."""
    c = config
    for s in samples:
        for st in STREAMS:
            f = s.streams[st]
            if f.local.shape != (c.T, c.K, c.D_in) or f.global_.shape != (c.T, c.D_in):
                raise SampleError(f"sample {s.id} {st}: local {f.local.shape} / global "
                                  f"{f.global_.shape} do not match T={c.T}, K={c.K}, D_in={c.D_in}")
        if s.query.embeddings.shape[1] != c.D_w or len(s.query.mask) > c.max_words:
            raise SampleError(f"sample {s.id}: query {s.query.embeddings.shape} incompatible "
                              f"with D_w={c.D_w}, max_words={c.max_words}")


def evaluate(checkpoint: Checkpoint, samples, n_list=N_LIST, m_list=M_LIST) -> dict:
    if not samples:
        raise ValueError("evaluation set is empty")
    check_compatible(checkpoint.config, samples)
    model = model_from_checkpoint(checkpoint)
    return evaluate_model(model, samples, n_list, m_list)


def evaluate_model(model, samples, n_list=N_LIST, m_list=M_LIST) -> dict:
    check_compatible(model.config, samples)
    preds = predict_samples(model, samples, top_n=max(n_list))
    return build_report(model.config, samples, preds, n_list, m_list)


def build_report(config, samples, preds, n_list=N_LIST, m_list=M_LIST) -> dict:
    return {
        "config_hash": config.hash(),
        "sample_count": len(samples),
        "metrics": metric_grid(preds, [s.gt for s in samples], n_list, m_list),
        "per_sample": [format_prediction_record(s.id, p) for s, p in zip(samples, preds)],
    }


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1)


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_json(report))


def _rank_by(config, samples, scorer, top_n: int):
    props = generate_proposals(config.T, config.widths, config.stride)
    zero = np.zeros((len(props), 2))
    return [predict(props.anchors, scorer(i, s, props), zero, config.T, top_n,
                    config.nms_threshold) for i, s in enumerate(samples)]


def random_ranking_report(config, samples, seed: int = 0, n_list=N_LIST, m_list=M_LIST) -> dict:
    """Anchors scored by a seeded uniform RNG, no offsets."""
    rng = np.random.default_rng([seed, 0xBA5E])
    preds = _rank_by(config, samples, lambda i, s, p: rng.uniform(size=len(p)), max(n_list))
    return build_report(config, samples, preds, n_list, m_list)


def oracle_ranking_report(config, samples, n_list=N_LIST, m_list=M_LIST) -> dict:
    """Anchors sorted by their true IoU with the ground truth."""
    preds = _rank_by(config, samples, lambda i, s, p: iou_with(p.anchors, s.gt), max(n_list))
    return build_report(config, samples, preds, n_list, m_list)


def best_anchor_iou(config, samples) -> np.ndarray:
    props = generate_proposals(config.T, config.widths, config.stride)
    return np.asarray([iou_with(props.anchors, s.gt).max() for s in samples])
