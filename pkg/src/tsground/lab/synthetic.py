"""Planted-signal grounding task.

Every slot (one of K objects per frame) carries an object identity in the
appearance stream and a motion pattern in the motion stream; the 3D stream
sees half of both, averaged over clips of ``threed_clip`` frames the way
clip-level 3D features are, so it knows the pair but not sharp boundaries. The queried (object, pattern) pair occurs together on one
slot exactly during the ground-truth frames. Elsewhere the video holds an
appearance distractor (queried object, other pattern) and a motion distractor
(other object, queried pattern), so no single stream pins the segment down
through identity alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..config import STREAMS, ConfigError, ExperimentConfig
from ..encoders import QueryFeatures, StreamObjectFeatures

DICT_SALT = 0x5EED


@dataclass
class Distractor:
    kind: str      # "appearance" (same object) or "motion" (same pattern)
    slot: int
    start: int
    end: int
    other_id: int  # the pattern (appearance kind) or object (motion kind) that differs


@dataclass
class SyntheticSample:
    id: int
    streams: dict          # stream -> StreamObjectFeatures
    query: QueryFeatures
    gt: tuple              # (gs, ge) in frames
    object_id: int
    pattern_id: int
    target_slot: int
    distractors: list = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, SyntheticSample):
            return NotImplemented
        same_meta = (self.id, tuple(self.gt), self.object_id, self.pattern_id, self.target_slot,
                     self.distractors) == (other.id, tuple(other.gt), other.object_id,
                                           other.pattern_id, other.target_slot, other.distractors)
        if not same_meta:
            return False
        for s in STREAMS:
            a, b = self.streams[s], other.streams[s]
            if not (np.array_equal(a.local, b.local) and np.array_equal(a.boxes, b.boxes)
                    and np.array_equal(a.global_, b.global_)):
                return False
        return (np.array_equal(self.query.embeddings, other.query.embeddings)
                and np.array_equal(self.query.mask, other.query.mask))


def _orthonormal_rows(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return (q * np.sign(np.diag(r))).T


@lru_cache(maxsize=16)
def _dictionaries(seed: int, d_in: int, d_w: int):
    rng = np.random.default_rng([seed, DICT_SALT])
    return _orthonormal_rows(rng, d_in), _orthonormal_rows(rng, d_w)


def signature_dictionaries(config: ExperimentConfig):
    """Feature signatures and word vectors, fixed by ``config.seed``.

    Returns (object_sigs, pattern_sigs, object_words, pattern_words, filler_words).
    """
    c = config
    if c.object_vocab < 2 or c.pattern_vocab < 2:
        raise ConfigError("object and pattern vocabularies need >= 2 entries for distractors")
    if c.object_vocab + c.pattern_vocab > c.D_in:
        raise ConfigError("object_vocab + pattern_vocab must not exceed D_in")
    if c.object_vocab + c.pattern_vocab + c.filler_vocab > c.D_w:
        raise ConfigError("vocabularies must fit within D_w")
    feat, word = _dictionaries(c.seed, c.D_in, c.D_w)
    vo, vp = c.object_vocab, c.pattern_vocab
    return (feat[:vo], feat[vo:vo + vp], word[:vo], word[vo:vo + vp],
            word[vo + vp:vo + vp + c.filler_vocab])


def _other(rng, n: int, exclude: int) -> int:
    k = int(rng.integers(n - 1))
    return k + (k >= exclude)


def _free_run(rng, T: int, gs: int, ge: int, max_len: int, min_len: int):
    sides = [(0, gs), (ge, T)]
    sides = [(a, b) for a, b in sides if b - a >= 1]
    lens = np.asarray([b - a for a, b in sides], dtype=float)
    a, b = sides[int(rng.choice(len(sides), p=lens / lens.sum()))]
    hi = min(max_len, b - a)
    lo = min(min_len, hi)
    n = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(a, b - n + 1))
    return start, start + n


def _boxes(rng, T: int, K: int) -> np.ndarray:
    w = rng.uniform(0.1, 0.4, size=(K, 2))
    x0 = rng.uniform(0.0, 1.0 - w - 0.05, size=(K, 2))
    drift = rng.uniform(-0.002, 0.002, size=(K, 2))
    t = np.arange(T)[:, None, None]
    lo = np.clip(x0[None] + drift[None] * t, 0.0, 0.55)
    hi = lo + w[None]
    return np.stack([lo[..., 0], lo[..., 1], hi[..., 0], hi[..., 1]], axis=-1)


def clip_average(x: np.ndarray, clip: int) -> np.ndarray:
    """Replace every frame by the mean of its non-overlapping clip of ``clip`` frames."""
    out = np.empty_like(x)
    for t0 in range(0, len(x), clip):
        out[t0:t0 + clip] = x[t0:t0 + clip].mean(axis=0)
    return out


def generate_sample(seed, config: ExperimentConfig, sample_id: int = 0) -> SyntheticSample:
    """Draw one sample; the result is a pure function of (seed, config, sample_id)."""
    c = config
    if c.K < 2:
        raise ConfigError("planting two distractors on distinct slots needs K >= 2")
    if c.max_words < 2:
        raise ConfigError("queries need at least an object word and a pattern word")
    obj_sig, pat_sig, obj_word, pat_word, fill_word = signature_dictionaries(c)
    rng = np.random.default_rng([c.seed, int(sample_id), *np.atleast_1d(seed).tolist()])
    T, K = c.T, c.K

    L = int(rng.integers(max(1, -(-T // 8)), max(1, T // 2) + 1))
    gs = int(rng.integers(0, T - L + 1))
    ge = gs + L
    o = int(rng.integers(c.object_vocab))
    p = int(rng.integers(c.pattern_vocab))
    slot = int(rng.integers(K))

    # per-frame object and pattern ids of every slot; background never uses o or p
    objs = np.empty((T, K), dtype=int)
    pats = np.empty((T, K), dtype=int)
    for k in range(K):
        objs[:, k] = _other(rng, c.object_vocab, o)
        pats[:, k] = _other(rng, c.pattern_vocab, p)
    objs[gs:ge, slot] = o
    pats[gs:ge, slot] = p

    short, long_ = max(1, T // 8), max(1, T // 4)
    slots = rng.permutation(K)
    da_slot, dm_slot = int(slots[0]), int(slots[1])
    a0, a1 = _free_run(rng, T, gs, ge, long_, short)
    m0, m1 = _free_run(rng, T, gs, ge, long_, short)
    p_other = _other(rng, c.pattern_vocab, p)
    o_other = _other(rng, c.object_vocab, o)
    objs[a0:a1, da_slot] = o
    pats[a0:a1, da_slot] = p_other
    objs[m0:m1, dm_slot] = o_other
    pats[m0:m1, dm_slot] = p
    distractors = [Distractor("appearance", da_slot, a0, a1, p_other),
                   Distractor("motion", dm_slot, m0, m1, o_other)]

    app = c.signal * obj_sig[objs]
    mot = c.signal * pat_sig[pats]
    clean = {"appearance": app, "motion": mot,
             "threed": clip_average(0.5 * (app + mot), c.threed_clip)}
    boxes = _boxes(rng, T, K)
    streams = {}
    for s in STREAMS:
        local = clean[s] + c.noise * rng.standard_normal((T, K, c.D_in))
        glob = local.mean(axis=1) + c.noise * rng.standard_normal((T, c.D_in))
        streams[s] = StreamObjectFeatures(s, local.astype(np.float32), boxes.astype(np.float32),
                                          glob.astype(np.float32))

    n_fill = int(rng.integers(0, c.max_words - 1))
    vecs = [obj_word[o], pat_word[p]] + [fill_word[int(i)]
                                         for i in rng.integers(c.filler_vocab, size=n_fill)]
    words = np.stack(vecs)[rng.permutation(len(vecs))]
    words = words + c.noise * rng.standard_normal(words.shape)
    query = QueryFeatures(words.astype(np.float32), np.ones(len(words), dtype=bool))
    return SyntheticSample(int(sample_id), streams, query, (float(gs), float(ge)), o, p, slot,
                           distractors)


def generate_dataset(config: ExperimentConfig, count: int, seed: int, start_id: int = 0) -> list:
    return [generate_sample(seed, config, start_id + i) for i in range(count)]


def train_test_split(config: ExperimentConfig, seed: int | None = None):
    """Disjoint train and test sets drawn from one seed."""
    seed = config.seed if seed is None else seed
    train = generate_dataset(config, config.train_count, seed, 0)
    test = generate_dataset(config, config.test_count, seed, config.train_count)
    return train, test


def recover_signatures(sample: SyntheticSample, config: ExperimentConfig):
    """Best-matching (object, pattern) id per (frame, slot) by dictionary correlation."""
    obj_sig, pat_sig, *_ = signature_dictionaries(config)
    a = sample.streams["appearance"].local.astype(np.float64) @ obj_sig.T
    m = sample.streams["motion"].local.astype(np.float64) @ pat_sig.T
    return a.argmax(axis=-1), m.argmax(axis=-1), a.max(axis=-1), m.max(axis=-1)
