"""Primitive catalog: forward kernels and their vector-Jacobian products.

Each class registers itself under a primitive id.  ``forward`` receives the
raw input arrays and returns ``(out, saved)``; ``vjp`` receives the output
cotangent, the saved values and the original inputs.
"""
from __future__ import annotations

import math

import numpy as np

from .autodiff import ShapeError, register


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand(g: np.ndarray, axes: tuple[int, ...], keepdims: bool) -> np.ndarray:
    if keepdims:
        return g
    return np.expand_dims(g, axes) if axes else g


def _broadcast_check(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shape mismatch in {op!r}: {a.shape} vs {b.shape}") from None


# -- elementwise binary -------------------------------------------------------


@register("add", 2)
class Add:
    def forward(xs):
        _broadcast_check("add", *xs)
        return xs[0] + xs[1], None

    def vjp(g, saved, xs):
        return unbroadcast(g, xs[0].shape), unbroadcast(g, xs[1].shape)


@register("sub", 2)
class Sub:
    def forward(xs):
        _broadcast_check("sub", *xs)
        return xs[0] - xs[1], None

    def vjp(g, saved, xs):
        return unbroadcast(g, xs[0].shape), unbroadcast(-g, xs[1].shape)


@register("mul", 2)
class Mul:
    def forward(xs):
        _broadcast_check("mul", *xs)
        return xs[0] * xs[1], None

    def vjp(g, saved, xs):
        a, b = xs
        return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


@register("div", 2)
class Div:
    def forward(xs):
        _broadcast_check("div", *xs)
        return xs[0] / xs[1], None

    def vjp(g, saved, xs):
        a, b = xs
        gb = g / b
        return unbroadcast(gb, a.shape), unbroadcast(-gb * a / b, b.shape)


@register("matmul", 2)
class Matmul:
    def forward(xs):
        a, b = xs
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"shape mismatch in 'matmul': {a.shape} vs {b.shape} (rank >= 2 required)")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"shape mismatch in 'matmul': {a.shape} vs {b.shape}")
        return a @ b, None

    def vjp(g, saved, xs):
        a, b = xs
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


# -- elementwise unary --------------------------------------------------------


@register("neg", 1)
class Neg:
    def forward(xs):
        return -xs[0], None

    def vjp(g, saved, xs):
        return (-g,)


@register("exp", 1)
class Exp:
    def forward(xs):
        y = np.exp(xs[0])
        return y, y

    def vjp(g, y, xs):
        return (g * y,)


@register("log", 1)
class Log:
    def forward(xs):
        return np.log(xs[0]), None

    def vjp(g, saved, xs):
        return (g / xs[0],)


@register("sqrt", 1)
class Sqrt:
    def forward(xs):
        y = np.sqrt(xs[0])
        return y, y

    def vjp(g, y, xs):
        return (g / (2 * y),)


@register("tanh", 1)
class Tanh:
    def forward(xs):
        y = np.tanh(xs[0])
        return y, y

    def vjp(g, y, xs):
        return (g * (1 - y * y),)


@register("relu", 1)
class Relu:
    def forward(xs):
        return np.maximum(xs[0], 0), None

    def vjp(g, saved, xs):
        return (g * (xs[0] > 0),)


@register("leaky_relu", 1)
class LeakyRelu:
    def forward(xs, slope=0.2):
        x = xs[0]
        return np.where(x > 0, x, x * slope), None

    def vjp(g, saved, xs, slope=0.2):
        return (np.where(xs[0] > 0, g, g * slope),)


@register("abs", 1)
class Abs:
    def forward(xs):
        return np.abs(xs[0]), None

    def vjp(g, saved, xs):
        return (g * np.sign(xs[0]),)


_GELU_C = math.sqrt(2.0 / math.pi)


@register("gelu", 1)
class Gelu:
    """tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""

    def forward(xs):
        x = xs[0]
        t = np.tanh(_GELU_C * (x + 0.044715 * x * x * x))
        return 0.5 * x * (1 + t), t

    def vjp(g, t, xs):
        x = xs[0]
        dt = (1 - t * t) * _GELU_C * (1 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * dt),)


@register("power", 1)
class Power:
    def forward(xs, exponent):
        return xs[0] ** exponent, None

    def vjp(g, saved, xs, exponent):
        x = xs[0]
        return (g * exponent * x ** (exponent - 1),)


@register("softmax", 1)
class Softmax:
    def forward(xs, axis=-1):
        x = xs[0]
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        y = e / e.sum(axis=axis, keepdims=True)
        return y, y

    def vjp(g, y, xs, axis=-1):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


# -- shape ----------------------------------------------------------------------


@register("reshape", 1)
class Reshape:
    def forward(xs, shape):
        return xs[0].reshape(shape), None

    def vjp(g, saved, xs, shape):
        return (g.reshape(xs[0].shape),)


@register("transpose", 1)
class Transpose:
    def forward(xs, axes):
        if sorted(axes) != list(range(xs[0].ndim)):
            raise ShapeError(f"shape mismatch in 'transpose': {xs[0].shape} vs axes {axes}")
        return xs[0].transpose(axes), None

    def vjp(g, saved, xs, axes):
        return (g.transpose(np.argsort(axes)),)


@register("concat")
class Concat:
    def forward(xs, axis=0):
        ref = xs[0]
        ax = axis % ref.ndim
        for x in xs[1:]:
            if x.ndim != ref.ndim or any(
                x.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
            ):
                raise ShapeError(f"shape mismatch in 'concat': {ref.shape} vs {x.shape} on axis {axis}")
        return np.concatenate(xs, axis=axis), None

    def vjp(g, saved, xs, axis=0):
        edges = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return tuple(np.split(g, edges, axis=axis))


@register("slice", 1)
class Slice:
    """Basic (non-fancy) indexing: ints, slices, Ellipsis, None."""

    def forward(xs, index):
        return xs[0][index], None

    def vjp(g, saved, xs, index):
        out = np.zeros_like(xs[0])
        out[index] = g
        return (out,)


@register("pad", 1)
class Pad:
    """Zero padding; ``widths`` is a sequence of (before, after) per axis."""

    def forward(xs, widths):
        x = xs[0]
        if len(widths) != x.ndim:
            raise ShapeError(f"shape mismatch in 'pad': {x.shape} vs widths {widths}")
        return np.pad(x, widths), None

    def vjp(g, saved, xs, widths):
        idx = tuple(slice(b, g.shape[i] - a) for i, (b, a) in enumerate(widths))
        return (g[idx],)


# -- reductions -----------------------------------------------------------------


@register("sum", 1)
class Sum:
    def forward(xs, axis=None, keepdims=False):
        return xs[0].sum(axis=axis, keepdims=keepdims), None

    def vjp(g, saved, xs, axis=None, keepdims=False):
        x = xs[0]
        axes = _norm_axes(axis, x.ndim)
        return (np.broadcast_to(_expand(g, axes, keepdims), x.shape),)


@register("mean", 1)
class Mean:
    def forward(xs, axis=None, keepdims=False):
        return xs[0].mean(axis=axis, keepdims=keepdims), None

    def vjp(g, saved, xs, axis=None, keepdims=False):
        x = xs[0]
        axes = _norm_axes(axis, x.ndim)
        n = math.prod(x.shape[a] for a in axes)
        return (np.broadcast_to(_expand(g, axes, keepdims) / n, x.shape),)


@register("var", 1)
class Var:
    """Population variance (ddof=0)."""

    def forward(xs, axis=None, keepdims=False):
        x = xs[0]
        mu = x.mean(axis=axis, keepdims=True)
        d = x - mu
        return (d * d).mean(axis=axis, keepdims=keepdims), d

    def vjp(g, d, xs, axis=None, keepdims=False):
        x = xs[0]
        axes = _norm_axes(axis, x.ndim)
        n = math.prod(x.shape[a] for a in axes)
        return (_expand(g, axes, keepdims) * d * (2.0 / n),)


class _Extreme:
    fn = staticmethod(np.max)

    @classmethod
    def forward(cls, xs, axis=None, keepdims=False):
        return cls.fn(xs[0], axis=axis, keepdims=keepdims), None

    @classmethod
    def vjp(cls, g, saved, xs, axis=None, keepdims=False):
        # ties share the cotangent equally
        x = xs[0]
        axes = _norm_axes(axis, x.ndim)
        ref = cls.fn(x, axis=axis, keepdims=True)
        mask = (x == ref).astype(x.dtype)
        mask /= mask.sum(axis=axes, keepdims=True)
        return (mask * _expand(g, axes, keepdims),)


@register("max", 1)
class Max(_Extreme):
    fn = staticmethod(np.max)


@register("min", 1)
class Min(_Extreme):
    fn = staticmethod(np.min)


@register("normalize", 1)
class Normalize:
    """(x - mean) / sqrt(var + eps) over ``axes``; fused for layer/instance norm."""

    def forward(xs, axes, eps=1e-5):
        x = xs[0]
        mu = x.mean(axis=axes, keepdims=True)
        d = x - mu
        inv = 1.0 / np.sqrt((d * d).mean(axis=axes, keepdims=True) + eps)
        y = d * inv
        return y, (y, inv)

    def vjp(g, saved, xs, axes, eps=1e-5):
        y, inv = saved
        gm = g.mean(axis=axes, keepdims=True)
        gym = (g * y).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - y * gym),)


@register("rms", 1)
class Rms:
    """sqrt(mean(x^2)) over ``axes``; subgradient 0 where the value is 0."""

    def forward(xs, axis=None, keepdims=False):
        x = xs[0]
        r = np.sqrt((x * x).mean(axis=axis, keepdims=True))
        out = r if keepdims else np.squeeze(r, axis=_norm_axes(axis, x.ndim))
        return out, r

    def vjp(g, r, xs, axis=None, keepdims=False):
        x = xs[0]
        axes = _norm_axes(axis, x.ndim)
        n = math.prod(x.shape[a] for a in axes)
        safe = np.where(r > 0, r, 1)
        scale = np.where(r > 0, 1.0 / (n * safe), 0)
        return (_expand(g, axes, keepdims) * x * scale.astype(x.dtype),)


# -- indexing -----------------------------------------------------------------


@register("gather", 1)
class Gather:
    """``np.take(x, indices, axis)``."""

    def forward(xs, indices, axis=0):
        x = xs[0]
        idx = np.asarray(indices)
        n = x.shape[axis]
        if idx.size and (idx.min() < -n or idx.max() >= n):
            raise ShapeError(f"shape mismatch in 'gather': index out of range for {x.shape} on axis {axis}")
        return np.take(x, idx, axis=axis), None

    def vjp(g, saved, xs, indices, axis=0):
        x = xs[0]
        out = np.zeros_like(x)
        idx = np.asarray(indices)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        gm = gm.reshape((idx.size,) + gm.shape[idx.ndim:])
        np.add.at(np.moveaxis(out, axis, 0), idx.reshape(-1), gm)
        return (out,)


@register("scatter", 1)
class Scatter:
    """Scatter-add rows of ``x`` (along ``axis``) into a zero tensor of extent ``size``."""

    def forward(xs, indices, size, axis=0):
        x = xs[0]
        idx = np.asarray(indices).reshape(-1)
        if idx.size != x.shape[axis]:
            raise ShapeError(f"shape mismatch in 'scatter': {x.shape} vs {idx.size} indices")
        shape = list(x.shape)
        shape[axis] = size
        out = np.zeros(shape, dtype=x.dtype)
        np.add.at(np.moveaxis(out, axis, 0), idx, np.moveaxis(x, axis, 0))
        return out, None

    def vjp(g, saved, xs, indices, size, axis=0):
        return (np.take(g, np.asarray(indices).reshape(-1), axis=axis),)


# -- spatial ------------------------------------------------------------------


@register("conv2d", 2)
class Conv2d:
    """Cross-correlation of (B,C,H,W) with (O,C,k,k) via im2col + matmul.

    Columns are laid out (B, C*k*k, Ho*Wo) so both the product and the
    scatter back to the input (col2im) work on contiguous planes.
    """

    def forward(xs, stride=1, padding=0):
        x, w = xs
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
            raise ShapeError(f"shape mismatch in 'conv2d': {x.shape} vs {w.shape}")
        B, C, H, W = x.shape
        O, _, k, _ = w.shape
        p, s = padding, stride
        Ho = (H + 2 * p - k) // s + 1
        Wo = (W + 2 * p - k) // s + 1
        if Ho < 1 or Wo < 1:
            raise ShapeError(f"shape mismatch in 'conv2d': {x.shape} too small for kernel {w.shape}")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = np.empty((B, C, k, k, Ho, Wo), dtype=np.result_type(x, w))
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = xp[:, :, i : i + s * Ho : s, j : j + s * Wo : s]
        cols = cols.reshape(B, C * k * k, Ho * Wo)
        out = w.reshape(O, C * k * k) @ cols
        return out.reshape(B, O, Ho, Wo), cols

    def vjp(g, cols, xs, stride=1, padding=0):
        x, w = xs
        B, C, H, W = x.shape
        O, _, k, _ = w.shape
        p, s = padding, stride
        Ho, Wo = g.shape[2], g.shape[3]
        gm = g.reshape(B, O, Ho * Wo)
        gw = np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        dcols = (w.reshape(O, C * k * k).T @ gm).reshape(B, C, k, k, Ho, Wo)
        dxp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=dcols.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += dcols[:, :, i, j]
        gx = dxp[:, :, p : p + H, p : p + W] if p else dxp
        return gx.astype(x.dtype, copy=False), gw.astype(w.dtype, copy=False)


@register("upsample_nearest", 1)
class UpsampleNearest:
    def forward(xs, factor=2):
        x = xs[0]
        return x.repeat(factor, axis=-2).repeat(factor, axis=-1), None

    def vjp(g, saved, xs, factor=2):
        *lead, H, W = xs[0].shape
        return (g.reshape(*lead, H, factor, W, factor).sum(axis=(-3, -1)),)


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) interpolation weights, half-pixel centres, edge clamped."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[o, i0] += 1 - t
        m[o, i1] += t
    return m.astype(dtype)


@register("resize_bilinear", 1)
class ResizeBilinear:
    """Resize the last two axes to ``size=(Ho, Wo)``."""

    def forward(xs, size):
        x = xs[0]
        H, W = x.shape[-2:]
        rh = bilinear_matrix(H, size[0], x.dtype)
        rw = bilinear_matrix(W, size[1], x.dtype)
        return rh @ x @ rw.T, (rh, rw)

    def vjp(g, saved, xs, size):
        rh, rw = saved
        return (rh.T @ g @ rw,)
