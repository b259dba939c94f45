"""The differentiation core in a few lines, then a full-model gradient check.

    python demos/02_autograd_and_gradcheck.py
"""

import time

import numpy as np

from tsground.config import tiny_config
from tsground.diffcore import (Parameter, Tensor, backward, finite_difference_check, ops,
                               redraw_zero_matrices)
from tsground.lab import generate_dataset
from tsground.model import GroundingNetwork, collate


def scalar_example():
    # y = sum(softmax(x W) * t), gradient w.r.t. W
    rng = np.random.default_rng(0)
    W = Parameter(rng.normal(size=(3, 2)), name="W")
    x = Tensor(rng.normal(size=(4, 3)))
    target = Tensor(np.array([[1.0, 0.0]] * 4))
    y = (ops.softmax(x @ W, axis=-1) * target).sum()
    backward(y, [W])
    print(f"y = {float(y.data):.6f}")
    print("dy/dW =\n", W.grad)


def model_check():
    c = tiny_config()
    model = GroundingNetwork(c)
    # the associating blocks start as the identity; give their output
    # projections values so the gradient reaches everything behind them
    print("redrawn:", redraw_zero_matrices(model, np.random.default_rng(1)))
    batch = collate(generate_dataset(c, 1, c.seed), np.float64, max_words=5)
    start = time.perf_counter()
    report = finite_difference_check(model, batch, h=1e-4, tol=1e-3)
    print(f"\nfull model, T={c.T} K={c.K} D={c.D}: {time.perf_counter() - start:.0f}s")
    print(report.summary())
    worst = sorted(report.per_parameter().items(), key=lambda kv: -kv[1])[:5]
    for name, err in worst:
        print(f"  worst in {name}: {err:.2e}")


if __name__ == "__main__":
    np.set_printoptions(precision=4, suppress=True)
    scalar_example()
    model_check()
