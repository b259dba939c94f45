"""Small numpy references shared by the test modules."""

import numpy as np


def random_boxes(rng, T, K):
    lo = rng.uniform(0, 0.5, (T, K, 2))
    hi = lo + rng.uniform(0.05, 0.5, (T, K, 2))
    return np.concatenate([lo, hi], axis=-1)


def sig(x):
    return 1 / (1 + np.exp(-x))


def softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)
