"""Cross-domain feature fusion transformer.

Two (C,H,W) feature maps become one sequence of L = H*W tokens of width 2C
(channel concatenation, row-major positions).  A fusion network (encoder at
2C, per-token compression to C, encoder at C) mixes them, then a hierarchical
transformer refines the result on recursively split 2x2 quadrants and merges
back.  ``cascade_forward`` chains stages to fuse more than two domains.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import numcore as nc
from .nnblocks import (
    ParamStore,
    TransformerEncoderConfig,
    init_linear,
    init_transformer_encoder,
    linear,
    positional_embedding,
    transformer_encoder,
)
from .numcore import ShapeError, Tensor


@dataclass(frozen=True)
class CfftConfig:
    C: int = 16
    H: int = 8
    W: int = 8
    ffn_depth: int = 3
    hiformer_depth: int = 2
    levels: int = 3
    heads: int = 4
    hiformer_enabled: bool = True

    def __post_init__(self):
        if self.ffn_depth < 1 or self.hiformer_depth < 1 or self.levels < 1:
            raise ValueError("ffn_depth, hiformer_depth and levels must be >= 1")
        if self.hiformer_enabled:
            step = 2 ** (self.levels - 1)
            if self.H % step or self.W % step:
                raise ValueError(f"H={self.H}, W={self.W} not divisible by 2^(levels-1)={step}")
        if (2 * self.C) % self.heads or self.C % self.heads:
            raise ValueError(f"heads={self.heads} must divide C={self.C} and 2C")

    @property
    def L(self) -> int:
        return self.H * self.W

    @property
    def fuse_cfg(self) -> TransformerEncoderConfig:
        return TransformerEncoderConfig(self.ffn_depth, 2 * self.C, self.heads)

    @property
    def refine_cfg(self) -> TransformerEncoderConfig:
        return TransformerEncoderConfig(self.ffn_depth, self.C, self.heads)

    @property
    def hiformer_cfg(self) -> TransformerEncoderConfig:
        return TransformerEncoderConfig(self.hiformer_depth, self.C, self.heads)


@dataclass
class TokenSequence:
    """``tokens`` is (B,L,D); token i sits at (i // origin_w, i % origin_w)."""

    tokens: Tensor
    origin_h: int
    origin_w: int

    def __post_init__(self):
        if self.tokens.shape[-2] != self.origin_h * self.origin_w:
            raise ShapeError(
                f"token count {self.tokens.shape[-2]} != {self.origin_h}x{self.origin_w}"
            )

    @property
    def L(self) -> int:
        return self.tokens.shape[-2]

    @property
    def D(self) -> int:
        return self.tokens.shape[-1]


def _as_batch(x) -> tuple[Tensor, bool]:
    x = nc.as_tensor(x)
    if x.ndim == 3:
        return nc.reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected (C,H,W) or (B,C,H,W) features, got {x.shape}")
    return x, False


def flatten_tokens(x: Tensor) -> Tensor:
    """(B,C,H,W) -> (B,H*W,C), row-major positions."""
    B, C, H, W = x.shape
    return nc.transpose(nc.reshape(x, (B, C, H * W)), (0, 2, 1))


def untokenize(seq: TokenSequence) -> Tensor:
    """(B,L,D) -> (B,D,H,W) through the same row-major bijection."""
    B, L, D = seq.tokens.shape
    return nc.reshape(nc.transpose(seq.tokens, (0, 2, 1)), (B, D, seq.origin_h, seq.origin_w))


def init_cfft(ps: ParamStore, cfg: CfftConfig, name: str) -> None:
    positional_embedding(ps, cfg.L, 2 * cfg.C, f"{name}.pos")
    init_transformer_encoder(ps, cfg.fuse_cfg, f"{name}.ffn.te1")
    init_linear(ps, f"{name}.ffn.compress", 2 * cfg.C, cfg.C)
    init_transformer_encoder(ps, cfg.refine_cfg, f"{name}.ffn.te2")
    if cfg.hiformer_enabled:
        for lvl in range(cfg.levels):
            init_transformer_encoder(ps, cfg.hiformer_cfg, f"{name}.hiformer.split{lvl}")
        for lvl in range(cfg.levels):
            init_transformer_encoder(ps, cfg.hiformer_cfg, f"{name}.hiformer.merge{lvl}")


def tokenize(ps: ParamStore, x_F, y_F, cfg: CfftConfig, name: str) -> TokenSequence:
    x, _ = _as_batch(x_F)
    y, _ = _as_batch(y_F)
    if x.shape != y.shape:
        raise ShapeError(f"feature shapes differ: {x.shape} vs {y.shape}")
    if x.shape[1:] != (cfg.C, cfg.H, cfg.W):
        raise ShapeError(f"features {x.shape[1:]} do not match config scale {(cfg.C, cfg.H, cfg.W)}")
    tokens = nc.concat([flatten_tokens(x), flatten_tokens(y)], axis=2)
    tokens = tokens + positional_embedding(ps, cfg.L, 2 * cfg.C, f"{name}.pos")
    return TokenSequence(tokens, cfg.H, cfg.W)


def ffn_fuse(ps: ParamStore, seq: TokenSequence, cfg: CfftConfig, name: str) -> TokenSequence:
    if seq.D != 2 * cfg.C:
        raise ShapeError(f"fusion network expects token dim {2 * cfg.C}, got {seq.D}")
    t = transformer_encoder(ps, seq.tokens, cfg.fuse_cfg, f"{name}.te1")
    t = linear(ps, t, f"{name}.compress")
    t = transformer_encoder(ps, t, cfg.refine_cfg, f"{name}.te2")
    return TokenSequence(t, seq.origin_h, seq.origin_w)


@lru_cache(maxsize=None)
def region_partition(H: int, W: int, level: int) -> np.ndarray:
    """Token indices of the 4**level quadrant regions at ``level``.

    Returns (4**level, (H>>level)*(W>>level)); regions are in recursive
    quadrant order (the four children of a parent region are contiguous),
    tokens row-major inside each region.
    """
    n = 2**level
    if H % n or W % n:
        raise ShapeError(f"{H}x{W} grid cannot be split into {n}x{n} regions")
    rh, rw = H // n, W // n
    grid = np.arange(H * W).reshape(H, W)

    def quads(r0: int, c0: int, size_h: int, size_w: int, depth: int):
        if depth == 0:
            yield grid[r0 : r0 + size_h, c0 : c0 + size_w].reshape(-1)
            return
        hh, hw = size_h // 2, size_w // 2
        for dr, dc in ((0, 0), (0, hw), (hh, 0), (hh, hw)):
            yield from quads(r0 + dr, c0 + dc, hh, hw, depth - 1)

    out = np.stack(list(quads(0, 0, H, W, level)))
    assert out.shape == (n * n, rh * rw)
    out.flags.writeable = False
    return out


def _regional_encoder(ps: ParamStore, x: Tensor, H: int, W: int, level: int, cfg, name: str) -> Tensor:
    """One level-specific encoder applied to every region; siblings share weights."""
    if level == 0:
        return transformer_encoder(ps, x, cfg, name)
    B, L, D = x.shape
    part = region_partition(H, W, level)
    perm = part.reshape(-1)
    xr = nc.reshape(nc.gather(x, perm, axis=1), (B * part.shape[0], part.shape[1], D))
    yr = transformer_encoder(ps, xr, cfg, name)
    y = nc.reshape(yr, (B, L, D))
    return nc.gather(y, np.argsort(perm), axis=1)


def hiformer(ps: ParamStore, seq: TokenSequence, cfg: CfftConfig, name: str) -> TokenSequence:
    """Split path over levels 0..n-1, then mirrored merge path n-1..0."""
    if seq.D != cfg.C:
        raise ShapeError(f"hierarchical transformer expects token dim {cfg.C}, got {seq.D}")
    step = 2 ** (cfg.levels - 1)
    if seq.origin_h % step or seq.origin_w % step:
        raise ShapeError(f"{seq.origin_h}x{seq.origin_w} not divisible by {step}")
    x = seq.tokens
    if x.ndim == 2:
        x = nc.reshape(x, (1,) + x.shape)
    H, W, tcfg = seq.origin_h, seq.origin_w, cfg.hiformer_cfg
    for lvl in range(cfg.levels):
        x = _regional_encoder(ps, x, H, W, lvl, tcfg, f"{name}.split{lvl}")
    for lvl in reversed(range(cfg.levels)):
        x = _regional_encoder(ps, x, H, W, lvl, tcfg, f"{name}.merge{lvl}")
    if seq.tokens.ndim == 2:
        x = nc.reshape(x, x.shape[1:])
    return TokenSequence(x, H, W)


def cfft_forward(ps: ParamStore, x_F, y_F, cfg: CfftConfig, name: str) -> Tensor:
    """Fused feature with the inputs' (C,H,W) scale (batched if inputs were)."""
    _, squeeze = _as_batch(x_F)
    seq = tokenize(ps, x_F, y_F, cfg, name)
    seq = ffn_fuse(ps, seq, cfg, f"{name}.ffn")
    if cfg.hiformer_enabled:
        seq = hiformer(ps, seq, cfg, f"{name}.hiformer")
    f = untokenize(seq)
    return nc.reshape(f, f.shape[1:]) if squeeze else f


def cascade_forward(ps: ParamStore, features: Sequence, cfgs: Sequence[CfftConfig], names: Sequence[str]) -> Tensor:
    """Fuse k >= 2 domains with k-1 chained stages: f1 = S1(d1, d2), fi = Si(f(i-1), d(i+1))."""
    if len(features) < 2:
        raise ValueError("cascade needs at least two domain features")
    if len(cfgs) != len(features) - 1 or len(names) != len(features) - 1:
        raise ValueError(f"{len(features)} domains need {len(features) - 1} stages")
    shapes = {tuple(nc.as_tensor(f).shape) for f in features}
    if len(shapes) != 1:
        raise ShapeError(f"domain features disagree in scale: {sorted(shapes)}")
    f = cfft_forward(ps, features[0], features[1], cfgs[0], names[0])
    for feat, cfg, name in zip(features[2:], cfgs[1:], names[1:]):
        f = cfft_forward(ps, f, feat, cfg, name)
    return f
