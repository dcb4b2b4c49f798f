"""Functional front-end over the primitive catalog."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import ShapeError, Tensor, apply_primitive, as_tensor, default_dtype


def tensor(data, requires_grad: bool = False) -> Tensor:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(default_dtype())
    return Tensor(arr, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=default_dtype()), requires_grad)


def add(a, b) -> Tensor:
    return apply_primitive("add", [a, b])


def sub(a, b) -> Tensor:
    return apply_primitive("sub", [a, b])


def mul(a, b) -> Tensor:
    return apply_primitive("mul", [a, b])


def div(a, b) -> Tensor:
    return apply_primitive("div", [a, b])


def matmul(a, b) -> Tensor:
    return apply_primitive("matmul", [a, b])


def transpose(x, axes) -> Tensor:
    return apply_primitive("transpose", [x], axes=tuple(axes))


def reshape(x, shape) -> Tensor:
    return apply_primitive("reshape", [x], shape=tuple(shape))


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    if not xs:
        raise ShapeError("concat of an empty list")
    return apply_primitive("concat", list(xs), axis=axis)


def split(x, sections: int | Sequence[int], axis: int = 0) -> list[Tensor]:
    """Split into equal ``sections`` or at explicit sizes; one slice primitive per part."""
    x = as_tensor(x)
    ax = axis % x.ndim
    n = x.shape[ax]
    if isinstance(sections, int):
        if n % sections:
            raise ShapeError(f"shape mismatch in 'split': extent {n} not divisible by {sections}")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != n:
            raise ShapeError(f"shape mismatch in 'split': sizes {sizes} vs extent {n}")
    parts, start = [], 0
    for size in sizes:
        index = (slice(None),) * ax + (slice(start, start + size),)
        parts.append(apply_primitive("slice", [x], index=index))
        start += size
    return parts


def slice_(x, index) -> Tensor:
    return apply_primitive("slice", [x], index=index)


def sum_(x, axis=None, keepdims=False) -> Tensor:
    return apply_primitive("sum", [x], axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False) -> Tensor:
    return apply_primitive("mean", [x], axis=axis, keepdims=keepdims)


def var(x, axis=None, keepdims=False) -> Tensor:
    return apply_primitive("var", [x], axis=axis, keepdims=keepdims)


def max_(x, axis=None, keepdims=False) -> Tensor:
    return apply_primitive("max", [x], axis=axis, keepdims=keepdims)


def min_(x, axis=None, keepdims=False) -> Tensor:
    return apply_primitive("min", [x], axis=axis, keepdims=keepdims)


def exp(x) -> Tensor:
    return apply_primitive("exp", [x])


def log(x) -> Tensor:
    return apply_primitive("log", [x])


def sqrt(x) -> Tensor:
    return apply_primitive("sqrt", [x])


def tanh(x) -> Tensor:
    return apply_primitive("tanh", [x])


def relu(x) -> Tensor:
    return apply_primitive("relu", [x])


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    return apply_primitive("leaky_relu", [x], slope=slope)


def gelu(x) -> Tensor:
    return apply_primitive("gelu", [x])


def abs_(x) -> Tensor:
    return apply_primitive("abs", [x])


def power(x, exponent: float) -> Tensor:
    return apply_primitive("power", [x], exponent=float(exponent))


def softmax(x, axis: int = -1) -> Tensor:
    return apply_primitive("softmax", [x], axis=axis)


def pad(x, widths) -> Tensor:
    return apply_primitive("pad", [x], widths=tuple(tuple(w) for w in widths))


def normalize(x, axes, eps: float = 1e-5) -> Tensor:
    return apply_primitive("normalize", [x], axes=tuple(axes), eps=eps)


def rms(x, axis=None, keepdims=False) -> Tensor:
    return apply_primitive("rms", [x], axis=axis, keepdims=keepdims)


def gather(x, indices, axis: int = 0) -> Tensor:
    return apply_primitive("gather", [x], indices=np.asarray(indices), axis=axis)


def scatter(x, indices, size: int, axis: int = 0) -> Tensor:
    return apply_primitive("scatter", [x], indices=np.asarray(indices), size=size, axis=axis)


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Batched 2-D cross-correlation; ``x`` is (B,C,H,W), ``w`` is (O,C,k,k)."""
    out = apply_primitive("conv2d", [x, w], stride=stride, padding=padding)
    if bias is not None:
        out = out + reshape(bias, (1, -1, 1, 1))
    return out


def upsample_nearest(x, factor: int = 2) -> Tensor:
    return apply_primitive("upsample_nearest", [x], factor=factor)


def resize_bilinear(x, size: tuple[int, int]) -> Tensor:
    size = (int(size[0]), int(size[1]))
    x = as_tensor(x)
    if x.shape[-2:] == size:
        return x
    return apply_primitive("resize_bilinear", [x], size=size)


def avg_pool2(x) -> Tensor:
    """2x2 average pooling with stride 2 on the last two axes."""
    x = as_tensor(x)
    *lead, H, W = x.shape
    return mean(reshape(x, (*lead, H // 2, 2, W // 2, 2)), axis=(-3, -1))
