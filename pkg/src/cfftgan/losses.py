"""Training objectives and the frozen surrogate perceptual extractor."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import numcore as nc
from .numcore import Rng, Tensor
from .translation import TranslationModel, discriminate, encode, encode_domains, fuse, generate


class NonFiniteLossError(FloatingPointError):
    pass


# -- surrogate extractor ------------------------------------------------------------


@dataclass
class FeaturePyramid:
    levels: list[tuple[str, Tensor]]
    low_level_ids: tuple[int, ...] = (0, 1)
    high_level_ids: tuple[int, ...] = (2, 3, 4)
    perceptual_id: int = 4

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i][1]

    def __len__(self) -> int:
        return len(self.levels)


class SurrogateExtractor:
    """Fixed random conv pyramid standing in for a pretrained perceptual network.

    Five stages of [3x3 conv -> relu -> 2x2 average pool].  Weights are
    He-normal draws from ``seed`` and never require gradients.
    """

    widths = (8, 16, 32, 32, 32)

    def __init__(self, seed: int = 1234, in_channels: int = 3):
        self.seed = seed
        self.weights: list[Tensor] = []
        cin = in_channels
        rng = Rng(seed, ("surrogate",))
        for i, cout in enumerate(self.widths):
            fan_in = cin * 9
            w = rng.child(i).normal((cout, cin, 3, 3), math.sqrt(2.0 / fan_in))
            self.weights.append(Tensor(w, requires_grad=False))
            cin = cout

    def __call__(self, image) -> FeaturePyramid:
        x = nc.as_tensor(image)
        squeeze = x.ndim == 3
        if squeeze:
            x = nc.reshape(x, (1,) + x.shape)
        levels = []
        for i, w in enumerate(self.weights):
            x = nc.avg_pool2(nc.relu(nc.conv2d(x, w, stride=1, padding=1)))
            levels.append((f"stage{i}", nc.reshape(x, x.shape[1:]) if squeeze else x))
        return FeaturePyramid(levels)


def surrogate_features(image, extractor: SurrogateExtractor) -> FeaturePyramid:
    return extractor(image)


# -- weights ----------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    align: float = 10.0
    match: float = 10.0
    perc: float = 0.001
    cx: float = 10.0
    adv: float = 10.0
    match_layers: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    cx_layers: tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        lams = (self.align, self.match, self.perc, self.cx, self.adv)
        if any(v < 0 for v in lams + self.match_layers + self.cx_layers):
            raise ValueError("loss weights must be non-negative")


# -- individual terms -----------------------------------------------------------------------


def l1_mean(a, b) -> Tensor:
    return nc.mean(nc.abs_(nc.as_tensor(a) - b))


def l_align(x_A, x_B, model: TranslationModel) -> Tensor:
    """Mean absolute difference between the two domain encodings of a paired sample."""
    return l1_mean(encode(model, x_A, "A"), encode(model, x_B, "B"))


def l_match(fake_pyr: FeaturePyramid, real_pyr: FeaturePyramid, layer_weights=(0.2,) * 5) -> Tensor:
    total = None
    for mu, a, b in zip(layer_weights, fake_pyr.levels, real_pyr.levels):
        term = l1_mean(a[1], b[1]) * mu
        total = term if total is None else total + term
    return total


def l_perc(fake_pyr: FeaturePyramid, real_pyr: FeaturePyramid) -> Tensor:
    """Root-mean-square distance of the deepest stage, averaged over the batch."""
    a = fake_pyr[fake_pyr.perceptual_id]
    b = real_pyr[real_pyr.perceptual_id]
    diff = a - b
    if diff.ndim == 3:
        return nc.rms(diff)
    return nc.mean(nc.rms(diff, axis=(1, 2, 3)))


def _unit_rows(x: Tensor, eps: float) -> Tensor:
    return x / nc.sqrt(nc.sum_(x * x, axis=-1, keepdims=True) + eps * eps)


def cx_similarity(X, Y, h: float = 0.5, eps: float = 1e-5) -> Tensor:
    """Contextual similarity of feature sets X (..., N, Df) and Y (..., M, Df).

    Returns one value per leading batch index (a scalar for 2-D inputs).
    """
    X, Y = nc.as_tensor(X), nc.as_tensor(Y)
    mu = nc.mean(Y, axis=-2, keepdims=True)
    xn = _unit_rows(X - mu, eps)
    yn = _unit_rows(Y - mu, eps)
    perm = tuple(range(yn.ndim - 2)) + (yn.ndim - 1, yn.ndim - 2)
    dist = nc.relu(1.0 - xn @ nc.transpose(yn, perm))
    rel = dist / (nc.min_(dist, axis=-1, keepdims=True) + eps)
    affinity = nc.softmax((1.0 - rel) * (1.0 / h), axis=-1)
    return nc.mean(nc.max_(affinity, axis=-2), axis=-1)


def _positions(feat: Tensor) -> Tensor:
    """(B,C,H,W) -> (B,H*W,C)."""
    B, C, H, W = feat.shape
    return nc.transpose(nc.reshape(feat, (B, C, H * W)), (0, 2, 1))


def l_cx(fake_pyr: FeaturePyramid, style_pyr: FeaturePyramid, layer_weights=(0.5, 0.5)) -> Tensor:
    total = None
    for w, lid in zip(layer_weights, fake_pyr.low_level_ids):
        a, b = fake_pyr[lid], style_pyr[lid]
        if a.ndim == 3:
            a, b = nc.reshape(a, (1,) + a.shape), nc.reshape(b, (1,) + b.shape)
        cx = cx_similarity(_positions(a), _positions(b))
        term = nc.mean(-nc.log(cx)) * w
        total = term if total is None else total + term
    return total


def hinge(t) -> Tensor:
    """h(t) = min(0, t - 1)."""
    return -nc.relu(1.0 - nc.as_tensor(t))


def d_hinge_loss(real_scores, fake_scores) -> Tensor:
    return -nc.mean(hinge(real_scores)) - nc.mean(hinge(-nc.as_tensor(fake_scores)))


def g_hinge_loss(fake_scores) -> Tensor:
    return -nc.mean(fake_scores)


def l_adv_d(real, fake, model: TranslationModel) -> Tensor:
    """Discriminator hinge loss; ``fake`` is detached from the generator tape."""
    return d_hinge_loss(discriminate(model, real), discriminate(model, nc.as_tensor(fake).detach()))


def l_adv_g(fake, model: TranslationModel) -> Tensor:
    return g_hinge_loss(discriminate(model, fake))


# -- total ---------------------------------------------------------------------------------


class PseudoBatch(NamedTuple):
    """(x_A, x_tilde_B, x_B) with optional extra-domain images, each (B,3,S,S)."""

    x_A: np.ndarray
    x_tilde_B: np.ndarray
    x_B: np.ndarray
    extra: tuple = ()


@dataclass
class LossTerms:
    values: dict[str, float] = field(default_factory=dict)

    def check(self) -> None:
        bad = [k for k, v in self.values.items() if not math.isfinite(v)]
        if bad:
            detail = ", ".join(f"{k}={self.values[k]}" for k in bad)
            raise NonFiniteLossError(f"non-finite loss term(s): {detail}")


def generator_objective(
    batch: PseudoBatch,
    model: TranslationModel,
    weights: LossWeights,
    extractor: SurrogateExtractor,
    fake: Tensor | None = None,
    feats: list[Tensor] | None = None,
) -> tuple[Tensor, dict[str, Tensor], Tensor]:
    """Weighted generator-side objective; returns (total, unweighted terms, fake).

    The exemplar fed to the model is x_tilde_B; x_B is the reconstruction
    target; the contextual style target is x_tilde_B as well.  ``feats``
    (the domain encodings) and ``fake`` may be passed in when the caller
    already computed them on the same tape.
    """
    x_A = nc.as_tensor(batch.x_A)
    if feats is None:
        feats = encode_domains(model, [x_A, batch.x_tilde_B, *batch.extra])
    if fake is None:
        fake = generate(model, fuse(model, feats), x_A)
    feat_A = feats[0]
    fake_pyr = extractor(fake)
    real_pyr = extractor(batch.x_B)
    style_pyr = real_pyr if batch.x_tilde_B is batch.x_B else extractor(batch.x_tilde_B)
    terms = {
        "align": l1_mean(feat_A, encode(model, batch.x_B, "B")),
        "match": l_match(fake_pyr, real_pyr, weights.match_layers),
        "perc": l_perc(fake_pyr, real_pyr),
        "cx": l_cx(fake_pyr, style_pyr, weights.cx_layers),
        "adv_g": l_adv_g(fake, model),
    }
    total = (
        terms["align"] * weights.align
        + terms["match"] * weights.match
        + terms["perc"] * weights.perc
        + terms["cx"] * weights.cx
        + terms["adv_g"] * weights.adv
    )
    return total, terms, fake


def total_loss(
    batch: PseudoBatch, model: TranslationModel, weights: LossWeights, extractor: SurrogateExtractor
) -> tuple[Tensor, Tensor]:
    """(generator-side total, discriminator-side total); raises on non-finite terms."""
    g_total, terms, fake = generator_objective(batch, model, weights, extractor)
    d_adv = l_adv_d(batch.x_B, fake, model)
    d_total = d_adv * weights.adv
    values = {k: float(v.data) for k, v in terms.items()}
    values["adv_d"] = float(d_adv.data)
    values["g_total"] = float(g_total.data)
    LossTerms(values).check()
    return g_total, d_total
