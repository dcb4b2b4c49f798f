"""Parameterized layers over numcore: attention, transformer encoders, conv stacks.

Layers are plain functions of ``(ParamStore, input, name)``.  Parameters are
registered up front by the matching ``init_*`` function so that a model can
be constructed (and counted, saved, loaded) without running a forward pass.
Token tensors are ``(B, L, D)``; feature maps are ``(B, C, H, W)``.  Unbatched
inputs are accepted where noted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import numcore as nc
from .numcore import Rng, ShapeError, Tensor


class ParamStore:
    """Ordered registry ``path -> Tensor(requires_grad=True)``.

    Each parameter is initialised from its own child stream of ``seed`` keyed
    by its path, so values do not depend on construction order.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, shape, init: str = "normal", std: float = 0.02, value: float = 0.0) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        shape = tuple(int(s) for s in shape)
        if init == "normal":
            data = Rng(self.seed, ("param", name)).normal(shape, std)
        elif init == "kaiming":
            fan_in = math.prod(shape[1:]) if len(shape) > 1 else shape[0]
            data = Rng(self.seed, ("param", name)).normal(shape, math.sqrt(2.0 / fan_in))
        elif init == "constant":
            data = np.full(shape, value, dtype=nc.default_dtype())
        elif init == "zeros":
            data = np.zeros(shape, dtype=nc.default_dtype())
        elif init == "ones":
            data = np.ones(shape, dtype=nc.default_dtype())
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def get_or_create(self, name: str, shape, **kw) -> Tensor:
        t = self._params.get(name)
        if t is None:
            return self.create(name, shape, **kw)
        if t.shape != tuple(shape):
            raise ShapeError(f"parameter {name!r} has shape {t.shape}, requested {tuple(shape)}")
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"parameter {name!r} not registered") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def items(self, prefix: str = ""):
        return [(n, t) for n, t in self._params.items() if n.startswith(prefix)]

    def tensors(self, prefix: str = "") -> list[Tensor]:
        return [t for n, t in self._params.items() if n.startswith(prefix)]

    def count(self, prefix: str = "") -> int:
        return sum(t.size for n, t in self._params.items() if n.startswith(prefix))

    def astype(self, dtype) -> "ParamStore":
        """Copy with every parameter cast (used for 64-bit gradient checks)."""
        out = ParamStore(self.seed)
        for n, t in self._params.items():
            out._params[n] = Tensor(t.data.astype(dtype), requires_grad=True)
        return out


def _batched(x, rank: int) -> tuple[Tensor, bool]:
    x = nc.as_tensor(x)
    if x.ndim == rank - 1:
        return nc.reshape(x, (1,) + x.shape), True
    if x.ndim != rank:
        raise ShapeError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


def _unbatch(x: Tensor, squeeze: bool) -> Tensor:
    return nc.reshape(x, x.shape[1:]) if squeeze else x


# -- dense ----------------------------------------------------------------------


def init_linear(ps: ParamStore, name: str, din: int, dout: int, std: float = 0.02) -> None:
    ps.create(f"{name}.weight", (din, dout), "normal", std)
    ps.create(f"{name}.bias", (dout,), "zeros")


def linear(ps: ParamStore, x, name: str) -> Tensor:
    w = ps[f"{name}.weight"]
    x = nc.as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"shape mismatch in linear {name!r}: input {x.shape} vs weight {w.shape}")
    return x @ w + ps[f"{name}.bias"]


def init_layer_norm(ps: ParamStore, name: str, dim: int) -> None:
    ps.create(f"{name}.scale", (dim,), "ones")
    ps.create(f"{name}.shift", (dim,), "zeros")


def layer_norm(ps: ParamStore, x, name: str, eps: float = 1e-5) -> Tensor:
    scale = ps[f"{name}.scale"]
    x = nc.as_tensor(x)
    if x.shape[-1] != scale.shape[0]:
        raise ShapeError(f"shape mismatch in layer_norm {name!r}: {x.shape} vs dim {scale.shape[0]}")
    return nc.normalize(x, (-1,), eps) * scale + ps[f"{name}.shift"]


# -- transformer ----------------------------------------------------------------


@dataclass(frozen=True)
class TransformerEncoderConfig:
    depth: int
    dim: int
    heads: int = 4
    mlp_hidden: int | None = None

    def __post_init__(self):
        if self.depth < 1 or self.dim < 1 or self.heads < 1:
            raise ValueError("depth, dim and heads must be positive")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")

    @property
    def hidden(self) -> int:
        return self.mlp_hidden or 4 * self.dim

    def param_count(self) -> int:
        d, m = self.dim, self.hidden
        return self.depth * (4 * d * d + 2 * d * m + 9 * d + m)


def init_attention(ps: ParamStore, cfg: TransformerEncoderConfig, name: str) -> None:
    init_linear(ps, f"{name}.qkv", cfg.dim, 3 * cfg.dim)
    init_linear(ps, f"{name}.out", cfg.dim, cfg.dim)


def multi_head_attention(ps: ParamStore, tokens, cfg: TransformerEncoderConfig, name: str, return_weights: bool = False):
    """Full self-attention over all L tokens; accepts (L,D) or (B,L,D)."""
    x, squeeze = _batched(tokens, 3)
    B, L, D = x.shape
    if D != cfg.dim:
        raise ShapeError(f"shape mismatch in attention {name!r}: token dim {D} vs {cfg.dim}")
    h, dh = cfg.heads, D // cfg.heads
    qkv = linear(ps, x, f"{name}.qkv")
    qkv = nc.transpose(nc.reshape(qkv, (B, L, 3, h, dh)), (2, 0, 3, 1, 4))
    q, k, v = (nc.reshape(p, (B, h, L, dh)) for p in nc.split(qkv, 3, axis=0))
    scores = (q @ nc.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    weights = nc.softmax(scores, axis=-1)
    ctx = nc.reshape(nc.transpose(weights @ v, (0, 2, 1, 3)), (B, L, D))
    out = _unbatch(linear(ps, ctx, f"{name}.out"), squeeze)
    if return_weights:
        return out, (nc.reshape(weights, weights.shape[1:]) if squeeze else weights)
    return out


def init_transformer_encoder(ps: ParamStore, cfg: TransformerEncoderConfig, name: str) -> None:
    for i in range(cfg.depth):
        blk = f"{name}.block{i}"
        init_layer_norm(ps, f"{blk}.norm1", cfg.dim)
        init_attention(ps, cfg, f"{blk}.attn")
        init_layer_norm(ps, f"{blk}.norm2", cfg.dim)
        init_linear(ps, f"{blk}.mlp.fc1", cfg.dim, cfg.hidden)
        init_linear(ps, f"{blk}.mlp.fc2", cfg.hidden, cfg.dim)


def transformer_encoder(ps: ParamStore, tokens, cfg: TransformerEncoderConfig, name: str) -> Tensor:
    """Pre-norm encoder blocks; shape preserved."""
    x, squeeze = _batched(tokens, 3)
    for i in range(cfg.depth):
        blk = f"{name}.block{i}"
        x = x + multi_head_attention(ps, layer_norm(ps, x, f"{blk}.norm1"), cfg, f"{blk}.attn")
        hdn = nc.gelu(linear(ps, layer_norm(ps, x, f"{blk}.norm2"), f"{blk}.mlp.fc1"))
        x = x + linear(ps, hdn, f"{blk}.mlp.fc2")
    return _unbatch(x, squeeze)


def positional_embedding(ps: ParamStore, L: int, D: int, name: str) -> Tensor:
    if L < 1 or D < 1:
        raise ValueError("L and D must be positive")
    return ps.get_or_create(name, (L, D), init="normal", std=0.02)


# -- convolution -----------------------------------------------------------------

CONV_SPECS = {"k3s1": (3, 1, 1), "k4s2": (4, 2, 1), "k1s1": (1, 1, 0)}


def init_conv(
    ps: ParamStore, name: str, cin: int, cout: int, k: int, bias_value: float = 0.0, std: float | None = None
) -> None:
    """He-normal weights unless ``std`` is given."""
    if std is None:
        ps.create(f"{name}.weight", (cout, cin, k, k), "kaiming")
    else:
        ps.create(f"{name}.weight", (cout, cin, k, k), "normal", std)
    ps.create(f"{name}.bias", (cout,), "constant", value=bias_value)


def conv(ps: ParamStore, x, name: str, spec: str = "k3s1") -> Tensor:
    _, stride, pad = CONV_SPECS[spec]
    return nc.conv2d(x, ps[f"{name}.weight"], ps[f"{name}.bias"], stride=stride, padding=pad)


def instance_norm(x, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalisation over spatial positions."""
    return nc.normalize(x, (-2, -1), eps)


def init_conv_block(ps: ParamStore, name: str, cin: int, cout: int, spec: str) -> None:
    init_conv(ps, f"{name}.conv", cin, cout, CONV_SPECS[spec][0])


def conv_block(ps: ParamStore, x, spec: str, name: str) -> Tensor:
    """conv -> instance norm -> leaky_relu(0.2); accepts (C,H,W) or (B,C,H,W)."""
    if spec not in ("k3s1", "k4s2"):
        raise ValueError(f"unknown conv block spec {spec!r}")
    x, squeeze = _batched(x, 4)
    if spec == "k4s2" and (x.shape[2] % 2 or x.shape[3] % 2):
        raise ShapeError(f"k4s2 block {name!r} needs even spatial extents, got {x.shape[2:]}")
    y = nc.leaky_relu(instance_norm(conv(ps, x, f"{name}.conv", spec)), 0.2)
    return _unbatch(y, squeeze)


def init_resblock(ps: ParamStore, name: str, cin: int, cout: int) -> None:
    init_conv_block(ps, f"{name}.block0", cin, cout, "k3s1")
    init_conv(ps, f"{name}.conv1", cout, cout, 3)
    if cin != cout:
        init_conv(ps, f"{name}.skip", cin, cout, 1)


def resblock(ps: ParamStore, x, name: str) -> Tensor:
    """x -> skip(x) + IN(conv(conv_block(x))); 1x1 skip when channels change."""
    x, squeeze = _batched(x, 4)
    h = conv_block(ps, x, "k3s1", f"{name}.block0")
    h = instance_norm(conv(ps, h, f"{name}.conv1", "k3s1"))
    skip = conv(ps, x, f"{name}.skip", "k1s1") if f"{name}.skip.weight" in ps else x
    return _unbatch(skip + h, squeeze)
