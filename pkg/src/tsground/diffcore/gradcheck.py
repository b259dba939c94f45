"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nn import glorot_uniform
from .tensor import Parameter, Tensor, backward, no_grad

REL_FLOOR = 1e-6


@dataclass
class EntryCheck:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    h: float
    entries: list[EntryCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def failures(self) -> list[EntryCheck]:
        return [e for e in self.entries if not e.passed]

    def worst(self, n: int = 10) -> list[EntryCheck]:
        return sorted(self.entries, key=lambda e: -e.rel_error)[:n]

    def per_parameter(self) -> dict[str, float]:
        """Worst relative error per parameter name."""
        out: dict[str, float] = {}
        for e in self.entries:
            out[e.name] = max(out.get(e.name, 0.0), e.rel_error)
        return out

    def summary(self) -> str:
        lines = [f"{len(self.entries)} entries, {len(self.failures)} failing (tol={self.tol:g}, h={self.h:g})"]
        for e in self.worst(5):
            lines.append(f"  {e.name}{list(e.index)}: analytic={e.analytic:.6e} "
                         f"numeric={e.numeric:.6e} rel={e.rel_error:.2e}")
        return "\n".join(lines)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(numeric), REL_FLOOR)


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                    h: float = 1e-4, tol: float = 1e-5) -> GradCheckReport:
    """Compare backward() against central differences for every entry.

    ``loss_fn`` must rebuild the graph from the current parameter values and
    be deterministic. Parameter values are restored afterwards.
    """
    report = GradCheckReport(tol=tol, h=h)
    params = list(params)
    if not params:
        return report
    loss = loss_fn()
    backward(loss, params)
    analytic = {id(p): p.grad.copy() for p in params}
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            if not np.shares_memory(flat, p.data):
                raise ValueError(f"{p.name}: parameter storage is not contiguous")
            g = analytic[id(p)].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(loss_fn().data)
                flat[i] = orig - h
                down = float(loss_fn().data)
                flat[i] = orig
                num = (up - down) / (2.0 * h)
                err = relative_error(float(g[i]), num)
                report.entries.append(EntryCheck(
                    p.name, tuple(int(j) for j in np.unravel_index(i, p.shape)), float(g[i]), num, err, err <= tol))
    return report


def finite_difference_check(model, sample, h: float = 1e-4, tol: float = 1e-3) -> GradCheckReport:
    """Gradient check of ``model.loss(sample)`` over all model parameters.

    Failures are reported, never raised.
    """
    params = model.parameters()
    return check_gradients(lambda: model.loss(sample), params, h=h, tol=tol)


def redraw_zero_matrices(module, rng: np.random.Generator) -> list[str]:
    """Give every all-zero weight matrix a fresh variance-preserving draw.

    Zero-initialized projections block the gradient of everything upstream,
    which would make a check at initialization vacuous there. Returns the
    names of the redrawn parameters.
    """
    names = []
    for name, p in module.named_parameters():
        if p.data.ndim >= 2 and not np.any(p.data):
            p.data = glorot_uniform(rng, p.shape[-2], p.shape[-1], p.shape).astype(p.data.dtype)
            names.append(name)
    return names
