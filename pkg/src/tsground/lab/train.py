"""Mini-batch Adam training with clipping, linear decay and early stopping."""

from __future__ import annotations

import logging
import math

import numpy as np

from ..config import ExperimentConfig
from ..diffcore import backward, no_grad
from ..grounder import recall_at_n
from ..model import GroundingNetwork, collate
from .io import Checkpoint

log = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
EVAL_BATCH = 64


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch, self.batch, self.loss = epoch, batch, loss
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


class Adam:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - BETA1 ** self.t
        c2 = 1.0 - BETA2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= BETA1
            m += (1.0 - BETA1) * g
            v *= BETA2
            v += (1.0 - BETA2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.dtype)


def clip_global_norm(params, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params))
    if norm > max_norm:
        s = max_norm / norm
        for p in params:
            p.grad = p.grad * np.asarray(s, dtype=p.dtype)
    return norm


def predict_samples(model: GroundingNetwork, samples, top_n: int = 5, batch_size: int = EVAL_BATCH):
    out = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            batch = collate(samples[i:i + batch_size], model.dtype, model.config.max_words)
            out.extend(model.predict(batch, top_n))
    return out


def r1_at(model, samples, m: float = 0.5) -> float:
    preds = predict_samples(model, samples, top_n=1)
    return recall_at_n(preds, [s.gt for s in samples], 1, m)


def _state(model) -> dict:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def train(config: ExperimentConfig, train_set, eval_set, resume: Checkpoint | None = None,
          stop_after: int | None = None, model: GroundingNetwork | None = None):
    """Train and return (checkpoint, per-epoch log).

    The checkpoint's ``params`` are the weights of the best epoch by eval
    R@1,IoU=0.5. ``stop_after`` halts after that many total epochs while
    keeping the schedule of ``config.epochs`` (used for resumption).
    """
    if not train_set:
        raise ValueError("training set is empty")
    c = config
    model = model or GroundingNetwork(c)
    params = model.parameters()
    names = [p.name for p in params]
    opt = Adam(params, c.lr)
    rng = np.random.default_rng([c.seed, 0x7A17])
    steps_per_epoch = math.ceil(len(train_set) / c.batch_size)
    total_steps = max(1, c.epochs * steps_per_epoch)

    if resume is not None:
        model.load_state_dict(resume.current)
        opt.m = [resume.adam_m[n].copy() for n in names]
        opt.v = [resume.adam_v[n].copy() for n in names]
        opt.t = resume.step
        rng.bit_generator.state = resume.rng_state
        ck = resume
        ck.log = list(resume.log)
    else:
        ck = Checkpoint(c, _state(model))

    history = ck.log
    last = c.epochs if stop_after is None else min(c.epochs, stop_after)
    epoch = ck.epoch
    while epoch < last and not (ck.bad_epochs >= c.patience and epoch > 0):
        order = rng.permutation(len(train_set))
        total = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * c.batch_size:(b + 1) * c.batch_size]
            batch = collate([train_set[i] for i in idx], model.dtype, c.max_words)
            loss = model.loss(batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(epoch, b, value)
            backward(loss, params)
            clip_global_norm(params, c.clip_norm)
            lr = c.lr * max(0.0, 1.0 - opt.t / total_steps)
            opt.step(lr)
            total += value * len(idx)
        epoch += 1
        score = r1_at(model, eval_set) if eval_set else 0.0
        entry = {"epoch": epoch, "loss": total / len(train_set), "eval_r1_05": score}
        history.append(entry)
        log.info("epoch %d loss %.5f eval R@1,IoU=0.5 %.2f", epoch, entry["loss"], score)
        if score > ck.best_score:
            ck.best_score, ck.best_epoch, ck.bad_epochs = score, epoch, 0
            ck.params = _state(model)
        else:
            ck.bad_epochs += 1
        ck.epoch = epoch

    ck.current = _state(model)
    ck.adam_m = {n: m.copy() for n, m in zip(names, opt.m)}
    ck.adam_v = {n: v.copy() for n, v in zip(names, opt.v)}
    ck.step = opt.t
    ck.rng_state = rng.bit_generator.state
    ck.log = history
    return ck, history


def model_from_checkpoint(ck: Checkpoint, which: str = "params") -> GroundingNetwork:
    model = GroundingNetwork(ck.config)
    model.load_state_dict(getattr(ck, which))
    return model
