"""Finite-difference gradient checks for every primitive, layer and objective.

Each case builds a scalar function and its inputs for a given float width.
Inputs are drawn away from the kinks of relu / abs / max so that central
differences are well defined.  ``run_suite`` is shared by the test suite
and the ``gradcheck`` CLI command.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numcore as nc
from .cfft import CfftConfig, cfft_forward, init_cfft
from .losses import LossWeights, PseudoBatch, SurrogateExtractor, total_loss
from .nnblocks import (
    ParamStore,
    TransformerEncoderConfig,
    conv,
    conv_block,
    init_attention,
    init_conv,
    init_conv_block,
    init_layer_norm,
    init_linear,
    init_resblock,
    init_transformer_encoder,
    instance_norm,
    layer_norm,
    linear,
    multi_head_attention,
    positional_embedding,
    resblock,
    transformer_encoder,
)
from .numcore import GradCheckReport, Rng, Tensor, grad_check
from .translation import ArchConfig, TranslationModel, init_spade, spade_modulate

# (rtol, atol, eps) per width of the analytic pass.  Difference quotients are
# always taken in float64, so a small eps is affordable and keeps the
# probability of stepping across a relu/abs kink low.  The float64 atol sits
# above the oracle's own roundoff, |f| * 2**-52 / eps, for losses of order 10.
TOLERANCES = {
    "float32": (1e-3, 1e-5, 1e-6),
    "float64": (1e-6, 1e-8, 1e-6),
}


@dataclass
class GradCase:
    name: str
    build: Callable[[Rng], tuple[Callable[..., Tensor], list[Tensor]]]
    max_coords: int = 10_000


@dataclass
class CaseResult:
    name: str
    dtype: str
    report: GradCheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=nc.default_dtype()), requires_grad=True)


def _away(rng: Rng, shape, lo: float = 0.2, hi: float = 1.5) -> np.ndarray:
    """Values with |x| in [lo, hi] and random sign."""
    g = rng.generator
    return g.choice([-1.0, 1.0], size=shape) * g.uniform(lo, hi, size=shape)


def _probe(rng: Rng, shape) -> Tensor:
    """Fixed random weighting so that sum(out * probe) has a generic gradient."""
    return Tensor(rng.child("probe").normal(shape))


def _weighted(fn):
    def build(rng: Rng):
        f, inputs = fn(rng)
        with nc.no_tape():
            shape = f(*inputs).shape
        probe = _probe(rng, shape)
        return (lambda *xs: nc.sum_(f(*xs) * probe)), inputs

    return build


def _distinct(rng: Rng, shape, spacing: float = 0.05) -> np.ndarray:
    """Values with pairwise gaps >= spacing (no ties for max/min)."""
    n = int(np.prod(shape))
    vals = (np.arange(n) - n / 2) * spacing
    return rng.generator.permutation(vals).reshape(shape)


def _unary(op, positive: bool = False, shape=(3, 4)):
    def fn(rng):
        x = rng.generator.uniform(0.3, 2.0, shape) if positive else _away(rng, shape)
        return op, [_t(x)]

    return _weighted(fn)


def primitive_cases() -> list[GradCase]:
    c: list[GradCase] = []

    def binary(name, op, positive_b=False):
        def fn(rng):
            a = rng.child("a").normal((2, 3, 4))
            b = rng.child("b").generator.uniform(0.5, 2.0, (3, 1)) if positive_b else rng.child("b").normal((3, 1))
            return op, [_t(a), _t(b)]

        c.append(GradCase(name, _weighted(fn)))

    binary("add", nc.add)
    binary("sub", nc.sub)
    binary("mul", nc.mul)
    binary("div", nc.div, positive_b=True)

    def matmul(rng):
        return nc.matmul, [_t(rng.child("a").normal((2, 3, 4))), _t(rng.child("b").normal((4, 5)))]

    c.append(GradCase("matmul", _weighted(matmul)))
    c.append(GradCase("neg", _unary(lambda x: -x)))
    c.append(GradCase("exp", _unary(nc.exp)))
    c.append(GradCase("log", _unary(nc.log, positive=True)))
    c.append(GradCase("sqrt", _unary(nc.sqrt, positive=True)))
    c.append(GradCase("tanh", _unary(nc.tanh)))
    c.append(GradCase("relu", _unary(nc.relu)))
    c.append(GradCase("leaky_relu", _unary(lambda x: nc.leaky_relu(x, 0.2))))
    c.append(GradCase("abs", _unary(nc.abs_)))
    c.append(GradCase("gelu", _unary(nc.gelu)))
    c.append(GradCase("power", _unary(lambda x: nc.power(x, 2.5), positive=True)))
    c.append(GradCase("softmax", _unary(lambda x: nc.softmax(x, axis=1))))
    c.append(GradCase("reshape", _unary(lambda x: nc.reshape(x, (2, 6)))))
    c.append(GradCase("transpose", _unary(lambda x: nc.transpose(x, (1, 0)))))
    c.append(GradCase("slice", _unary(lambda x: x[1:, ::2])))
    c.append(GradCase("pad", _unary(lambda x: nc.pad(x, ((1, 0), (2, 1))))))

    def concat(rng):
        return (lambda a, b: nc.concat([a, b], axis=1)), [_t(rng.child(0).normal((2, 3))), _t(rng.child(1).normal((2, 2)))]

    c.append(GradCase("concat", _weighted(concat)))
    c.append(GradCase("sum", _unary(lambda x: nc.sum_(x, axis=1))))
    c.append(GradCase("mean", _unary(lambda x: nc.mean(x, axis=0, keepdims=True))))
    c.append(GradCase("var", _unary(lambda x: nc.var(x, axis=1))))

    def maxmin(op):
        def fn(rng):
            return (lambda x: op(x, axis=1)), [_t(_distinct(rng, (3, 5)))]

        return _weighted(fn)

    c.append(GradCase("max", maxmin(nc.max_)))
    c.append(GradCase("min", maxmin(nc.min_)))
    c.append(GradCase("normalize", _unary(lambda x: nc.normalize(x, (-1,), 1e-5), shape=(3, 6))))
    c.append(GradCase("rms", _unary(lambda x: nc.rms(x, axis=1), shape=(3, 6))))
    idx = np.array([2, 0, 2, 1])
    c.append(GradCase("gather", _unary(lambda x: nc.gather(x, idx, axis=1))))
    c.append(GradCase("scatter", _unary(lambda x: nc.scatter(x, np.array([4, 0, 2, 5]), 6, axis=1))))

    def conv(stride, pad, k):
        def fn(rng):
            x = rng.child("x").normal((2, 3, 6, 6))
            w = rng.child("w").normal((4, 3, k, k), 0.3)
            b = rng.child("b").normal((4,))
            return (lambda x, w, b: nc.conv2d(x, w, b, stride=stride, padding=pad)), [_t(x), _t(w), _t(b)]

        return _weighted(fn)

    c.append(GradCase("conv2d_k3s1", conv(1, 1, 3)))
    c.append(GradCase("conv2d_k4s2", conv(2, 1, 4)))
    c.append(GradCase("upsample_nearest", _unary(lambda x: nc.upsample_nearest(x, 2), shape=(1, 2, 3, 3))))
    c.append(GradCase("resize_bilinear_up", _unary(lambda x: nc.resize_bilinear(x, (6, 5)), shape=(1, 2, 4, 3))))
    c.append(GradCase("resize_bilinear_down", _unary(lambda x: nc.resize_bilinear(x, (2, 3)), shape=(1, 2, 8, 6))))
    return c


# -- layers ---------------------------------------------------------------------------


def _layer_case(name: str, init: Callable[[ParamStore], None], apply: Callable[[ParamStore, Tensor], Tensor], x_shape):
    def build(rng: Rng):
        ps = ParamStore(seed=rng.seed)
        init(ps)
        # perturb zero-initialised biases/shifts so their gradients are generic
        for n, t in ps.items():
            t.data = (t.data + rng.child("jitter", n).normal(t.shape, 0.1)).astype(nc.default_dtype())
        x = _t(rng.child("x").normal(x_shape))
        with nc.no_tape():
            probe = _probe(rng, apply(ps, x).shape)
        params = ps.tensors()
        return (lambda *_: nc.sum_(apply(ps, x) * probe)), [x, *params]

    return GradCase(name, build)


def layer_cases() -> list[GradCase]:
    te = TransformerEncoderConfig(depth=2, dim=8, heads=2)
    return [
        _layer_case("linear", lambda ps: init_linear(ps, "fc", 5, 3), lambda ps, x: linear(ps, x, "fc"), (2, 4, 5)),
        _layer_case("layer_norm", lambda ps: init_layer_norm(ps, "ln", 6), lambda ps, x: layer_norm(ps, x, "ln"), (3, 6)),
        _layer_case(
            "multi_head_attention",
            lambda ps: init_attention(ps, te, "attn"),
            lambda ps, x: multi_head_attention(ps, x, te, "attn"),
            (2, 5, 8),
        ),
        _layer_case(
            "transformer_encoder",
            lambda ps: init_transformer_encoder(ps, te, "te"),
            lambda ps, x: transformer_encoder(ps, x, te, "te"),
            (2, 5, 8),
        ),
        _layer_case(
            "positional_embedding",
            lambda ps: positional_embedding(ps, 5, 8, "pos"),
            lambda ps, x: x + positional_embedding(ps, 5, 8, "pos"),
            (2, 5, 8),
        ),
        _layer_case("conv", lambda ps: init_conv(ps, "c", 3, 4, 3), lambda ps, x: conv(ps, x, "c"), (2, 3, 5, 5)),
        _layer_case("instance_norm", lambda ps: None, lambda ps, x: instance_norm(x), (2, 3, 4, 4)),
        _layer_case(
            "conv_block_k3s1",
            lambda ps: init_conv_block(ps, "cb", 3, 4, "k3s1"),
            lambda ps, x: conv_block(ps, x, "k3s1", "cb"),
            (2, 3, 6, 6),
        ),
        _layer_case(
            "conv_block_k4s2",
            lambda ps: init_conv_block(ps, "cb", 3, 4, "k4s2"),
            lambda ps, x: conv_block(ps, x, "k4s2", "cb"),
            (2, 3, 6, 6),
        ),
        _layer_case(
            "resblock", lambda ps: init_resblock(ps, "rb", 3, 4), lambda ps, x: resblock(ps, x, "rb"), (2, 3, 5, 5)
        ),
    ]


# -- model pieces ---------------------------------------------------------------------


MICRO_CFFT = CfftConfig(C=4, H=4, W=4, levels=2)


def _cfft_case(rng: Rng):
    ps = ParamStore(seed=rng.seed)
    init_cfft(ps, MICRO_CFFT, "cfft")
    x = _t(rng.child("x").normal((1, 4, 4, 4)))
    y = _t(rng.child("y").normal((1, 4, 4, 4)))
    with nc.no_tape():
        probe = _probe(rng, cfft_forward(ps, x, y, MICRO_CFFT, "cfft").shape)
    return (lambda *_: nc.sum_(cfft_forward(ps, x, y, MICRO_CFFT, "cfft") * probe)), [x, y, *ps.tensors()]


def _spade_case(rng: Rng):
    ps = ParamStore(seed=rng.seed)
    init_spade(ps, "spade", 4, 7, 5)
    F = _t(rng.child("F").normal((2, 4, 4, 4)))
    w = _t(rng.child("w").normal((2, 7, 8, 8)))
    with nc.no_tape():
        probe = _probe(rng, spade_modulate(ps, F, w, "spade").shape)
    return (lambda *_: nc.sum_(spade_modulate(ps, F, w, "spade") * probe)), [F, w, *ps.tensors()]


def _micro_batch(rng: Rng) -> PseudoBatch:
    imgs = [np.tanh(rng.child("img", i).normal((1, 3, 32, 32))) for i in range(3)]
    return PseudoBatch(*imgs)


def _total_case(which: int):
    """which=0: generator total w.r.t. every parameter; which=1: discriminator total.

    The discriminator total sees the fake through a detach, so only the
    discriminator's own parameters are differentiable inputs there.
    """

    def build(rng: Rng):
        model = TranslationModel(ArchConfig.micro(), seed=rng.seed)
        batch = _micro_batch(rng)
        extractor = SurrogateExtractor(seed=1234)
        weights = LossWeights()
        prefix = "" if which == 0 else "disc."
        return (lambda *_: total_loss(batch, model, weights, extractor)[which]), model.params.tensors(prefix)

    return build


def model_cases() -> list[GradCase]:
    return [
        GradCase("cfft_forward", _cfft_case, max_coords=12),
        GradCase("spade_modulate", _spade_case, max_coords=64),
        GradCase("total_loss_generator", _total_case(0), max_coords=6),
        GradCase("total_loss_discriminator", _total_case(1), max_coords=6),
    ]


def all_cases() -> list[GradCase]:
    return primitive_cases() + layer_cases() + model_cases()


def run_case(case: GradCase, dtype: str = "float32", seed: int = 0) -> CaseResult:
    rtol, atol, eps = TOLERANCES[dtype]
    t0 = time.time()
    with nc.precision(np.dtype(dtype)):
        f, inputs = case.build(Rng(seed, ("gradsuite", case.name)))
        report = grad_check(f, inputs, eps=eps, rtol=rtol, atol=atol, max_coords=case.max_coords, seed=seed)
    return CaseResult(case.name, dtype, report, time.time() - t0)


def run_suite(dtypes=("float32", "float64"), seed: int = 0, names=None) -> list[CaseResult]:
    out = []
    for dtype in dtypes:
        for case in all_cases():
            if names is None or case.name in names:
                out.append(run_case(case, dtype, seed))
    return out
