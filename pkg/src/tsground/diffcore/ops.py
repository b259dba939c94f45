"""Differentiable primitives.

Every function takes Tensors (or array-likes, promoted to constants) and
returns a Tensor whose backward closure is registered with the engine.
Binary elementwise ops follow numpy broadcasting; the gradient of a
broadcast operand is summed back to its own shape.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_result

BCE_EPS = 1e-7


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_shape(op, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    # common case: one operand is a trailing suffix of the other (bias add)
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return sb
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    a = lift(a, b if isinstance(b, Tensor) else None)
    return a, lift(b, a)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                       "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result(out, (a, b),
                       lambda g: (_unbroadcast(g / bd, ad.shape),
                                  _unbroadcast(-g * out / bd, bd.shape)),
                       "div")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_result(a.data * c, (a,), lambda g: (g * c,), "scale")


# -- linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics; leading axes broadcast."""
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    sa, sb = ad.shape, bd.shape
    if len(sa) < 2 or len(sb) < 2 or sa[-1] != sb[-2]:
        raise ShapeError("matmul", sa, sb)
    if len(sa) > 2 and len(sb) > 2 and sa[:-2] != sb[:-2]:
        try:
            np.broadcast_shapes(sa[:-2], sb[:-2])
        except ValueError:
            raise ShapeError("matmul", sa, sb) from None
    if bd.ndim == 2 and ad.ndim > 2:
        # weight-style product: one GEMM over the flattened leading axes
        lead = ad.shape[:-1]
        a2 = ad.reshape(-1, ad.shape[-1])

        def back2(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

        return make_result((a2 @ bd).reshape(lead + (bd.shape[1],)), (a, b), back2, "matmul")

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_result(ad @ bd, (a, b), back, "matmul")


# -- shape manipulation -----------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    src = a.shape
    return make_result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),),
                       "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return make_result(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),),
                       "swapaxes")


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast ``a`` to ``shape`` (materialized copy)."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError("expand", a.shape, shape) from None
    src = a.shape
    return make_result(out, (a,), lambda g: (_unbroadcast(g, src),), "expand")


def repeat(a: Tensor, repeats: int, axis: int) -> Tensor:
    """Repeat each slice ``repeats`` times along ``axis`` (np.repeat)."""
    axis = axis % a.ndim
    out = np.repeat(a.data, repeats, axis=axis)
    src = a.shape

    def back(g):
        shp = src[:axis] + (src[axis], repeats) + src[axis + 1:]
        return (g.reshape(shp).sum(axis=axis + 1),)

    return make_result(out, (a,), back, "repeat")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError("concat", *(t.shape for t in tensors))
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        res = []
        for i in range(len(tensors)):
            sl = [slice(None)] * nd
            sl[ax] = slice(bounds[i], bounds[i + 1])
            res.append(g[tuple(sl)])
        return tuple(res)

    return make_result(out, tensors, back, "concat")


def index(a: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; gradient scatters back with accumulation."""
    out = a.data[idx]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)
    src_shape, dt = a.shape, a.dtype

    def back(g):
        full = np.zeros(src_shape, dtype=dt)
        np.add.at(full, idx, g)
        return (full,)

    return make_result(out, (a,), back, "index")


def take(a: Tensor, indices, axis: int) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    out = np.take(a.data, indices, axis=axis)
    src_shape, dt = a.shape, a.dtype

    def back(g):
        full = np.zeros(src_shape, dtype=dt)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return make_result(out, (a,), back, "take")


def pad(a: Tensor, widths) -> Tensor:
    """Zero padding; ``widths`` as for np.pad."""
    widths = tuple(tuple(w) for w in widths)
    out = np.pad(a.data, widths)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return make_result(out, (a,), lambda g: (g[sl],), "pad")


# -- reductions -----------------------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    src = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return make_result(np.asarray(out), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis, keepdims), 1.0 / n)


def l2_norm(a: Tensor, axis: int = -1, floor: float = 0.0, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``, floored at ``floor``."""
    raw = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    live = raw > floor
    out = np.where(live, raw, floor).astype(a.dtype)
    ad = a.data

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(live, raw, 1.0)
        return (np.where(live, g * ad / safe, 0.0).astype(ad.dtype),)

    res = out if keepdims else np.squeeze(out, axis=axis)
    return make_result(res, (a,), back, "l2_norm")


# -- nonlinearities ----------------------------------------------------------------

def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise FloatingPointError("log: non-positive input")
    return make_result(np.log(x), (a,), lambda g: (g / x,), "log")


def softmax(a: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``.

    ``mask`` (boolean, broadcastable to ``a``) marks admissible entries;
    excluded entries get exactly zero weight. A slice with no admissible
    entry yields all zeros.
    """
    x = a.data
    if mask is None:
        e = np.exp(x - np.max(x, axis=axis, keepdims=True))
        out = (e / np.sum(e, axis=axis, keepdims=True)).astype(a.dtype, copy=False)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
        m = np.max(x, axis=axis, keepdims=True)
        e = np.where(mask, np.exp(x - np.where(np.isfinite(m), m, 0.0)), 0.0)
        s = np.sum(e, axis=axis, keepdims=True)
        out = (e / np.where(s > 0, s, 1.0)).astype(a.dtype, copy=False)

    def back(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return make_result(out, (a,), back, "softmax")


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by the constant ``value``."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = np.where(mask, np.asarray(value, dtype=a.dtype), a.data)
    return make_result(out, (a,), lambda g: (np.where(mask, 0.0, g).astype(g.dtype),),
                       "masked_fill")


# -- layers as primitives --------------------------------------------------------------

def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine with ``gain`` and ``bias``."""
    x = a.data
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError("layer_norm", a.shape, gain.shape, bias.shape)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data
    def back(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_result(out, (a, gain, bias), back, "layer_norm")


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Length-preserving temporal convolution.

    ``x`` is (..., T, C_in), ``weight`` is (k, C_in, C_out) with odd k; the
    sequence is zero padded by k // 2 on each side.
    """
    k, cin, cout = weight.shape
    if k % 2 == 0 or x.shape[-1] != cin:
        raise ShapeError("conv1d", x.shape, weight.shape)
    T = x.shape[-2]
    r = k // 2
    widths = [(0, 0)] * (x.ndim - 2) + [(r, r), (0, 0)]
    xp = np.pad(x.data, widths)
    cols = np.concatenate([xp[..., j:j + T, :] for j in range(k)], axis=-1)
    wmat = weight.data.reshape(k * cin, cout)
    out = cols @ wmat
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def back(g):
        gcols = g @ wmat.T
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[..., j:j + T, :] += gcols[..., j * cin:(j + 1) * cin]
        gx = gxp[..., r:r + T, :]
        gw = (cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(k, cin, cout)
        res = [gx, gw]
        if bias is not None:
            res.append(g.reshape(-1, cout).sum(axis=0))
        return tuple(res)

    return make_result(out, parents, back, "conv1d")


def smooth_l1(a: Tensor) -> Tensor:
    """0.5 x^2 where |x| < 1, |x| - 0.5 elsewhere."""
    x = a.data
    small = np.abs(x) < 1.0
    out = np.where(small, 0.5 * x * x, np.abs(x) - 0.5).astype(x.dtype)
    return make_result(out, (a,), lambda g: (g * np.where(small, x, np.sign(x)),), "smooth_l1")


def binary_cross_entropy(p: Tensor, target, eps: float = BCE_EPS) -> Tensor:
    """Elementwise -[y log p + (1-y) log(1-p)] with p clamped to [eps, 1-eps]."""
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=p.dtype)
    if y.shape != p.shape:
        raise ShapeError("binary_cross_entropy", p.shape, y.shape)
    raw = p.data
    pc = np.clip(raw, eps, 1.0 - eps)
    inside = (raw >= eps) & (raw <= 1.0 - eps)
    out = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))

    def back(g):
        d = (-y / pc + (1.0 - y) / (1.0 - pc)) * inside
        return (g * d,)

    return make_result(out, (p,), back, "binary_cross_entropy")
