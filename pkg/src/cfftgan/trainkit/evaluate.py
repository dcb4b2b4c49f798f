"""Held-out evaluation sets and batched inference."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .. import numcore as nc
from ..data import BG_LUMA, FILL_LUMA, MARGIN_PX, SceneDataset, SceneSpec, make_dataset, random_spec, render
from ..losses import SurrogateExtractor
from ..numcore import Rng
from ..translation import TranslationModel, translate
from .metrics import semantic_consistency, style_similarity, swd

HELDOUT_SEED_OFFSET = 1_000_003
EXEMPLAR_JITTER_PX = 4.0
LUMA = np.array([0.299, 0.587, 0.114])
FG_THRESHOLD = (FILL_LUMA + BG_LUMA) / 2


@dataclass
class EvalSet:
    """Content images, exemplars, ground truth and extra-domain inputs, each (N,3,S,S)."""

    x_A: np.ndarray
    y_B: np.ndarray
    x_B: np.ndarray
    extra: tuple = ()


def exemplar_spec(spec: SceneSpec, rng: Rng, S: int, jitter_px: float = EXEMPLAR_JITTER_PX) -> SceneSpec:
    """An exemplar for ``spec``: a fresh style on a perturbed copy of its geometry.

    Same shape kind; centre moved up to ``jitter_px`` per axis, size scaled by
    0.9-1.1, rotation changed by up to 0.5 rad.  Mirrors aligned datasets
    where exemplars share the subject's rough layout but not its pose.
    """
    style = random_spec(rng.child("style"), S)
    size = spec.size * float(rng.uniform(0.9, 1.1))
    lo = size + (MARGIN_PX + 0.5) / S
    cx = float(np.clip(spec.cx + rng.uniform(-jitter_px, jitter_px) / S, lo, 1 - lo))
    cy = float(np.clip(spec.cy + rng.uniform(-jitter_px, jitter_px) / S, lo, 1 - lo))
    return replace(
        spec,
        cx=cx,
        cy=cy,
        size=size,
        rotation=spec.rotation + float(rng.uniform(-0.5, 0.5)),
        fill_hue=style.fill_hue,
        tex_freq=style.tex_freq,
        bg_hue=style.bg_hue,
    )


def exemplars_for(specs: Sequence[SceneSpec], S: int, seed: int) -> np.ndarray:
    """(N,3,S,S) exemplar renderings, one per content spec."""
    root = Rng(seed, ("exemplar",))
    return np.stack([render(exemplar_spec(sp, root.child(i), S), S) for i, sp in enumerate(specs)])


def heldout_set(data_seed: int, count: int = 32, S: int = 32, domains: int = 2) -> EvalSet:
    """Scenes disjoint from the training stream.

    With two domains each exemplar is drawn by ``exemplar_spec``: a new
    style on jittered geometry, so it differs from the content in both.
    With three domains it is the same-style rendering with independent
    geometry.
    """
    seed = data_seed + HELDOUT_SEED_OFFSET
    specs = make_dataset(seed, count, S)
    ds = SceneDataset(specs, S, domains, seed=seed)
    samples = [ds.sample(i) for i in range(count)]
    x_A = np.stack([s[0] for s in samples])
    x_B = np.stack([s[1] for s in samples])
    if domains == 2:
        return EvalSet(x_A, exemplars_for(specs, S, seed), x_B)
    masks = np.stack([s[2] for s in samples])
    y_B = np.stack([s[3] for s in samples])
    return EvalSet(x_A, y_B, x_B, (masks,))


def translate_set(model: TranslationModel, es: EvalSet, batch_size: int = 8) -> np.ndarray:
    outs = []
    with nc.no_tape():
        for lo in range(0, len(es.x_A), batch_size):
            sl = slice(lo, lo + batch_size)
            out = translate(model, es.x_A[sl], es.y_B[sl], [e[sl] for e in es.extra])
            outs.append(out.data)
    return np.concatenate(outs)


@dataclass
class EvalResult:
    swd: float
    semantic: np.ndarray
    style: np.ndarray
    semantic_baseline: np.ndarray
    style_baseline: np.ndarray
    outputs: np.ndarray

    def summary(self) -> dict[str, float]:
        return {
            "swd": self.swd,
            "semantic_consistency": float(np.mean(self.semantic)),
            "style_similarity": float(np.mean(self.style)),
        }


def evaluate(model: TranslationModel, es: EvalSet, extractor: SurrogateExtractor, swd_seed: int = 0) -> EvalResult:
    """Metrics of translate(x_A, y_B) plus per-pair baselines.

    Baselines: style of the untranslated content against the exemplar, and
    semantics of the exemplar against the content.
    """
    out = translate_set(model, es)
    return EvalResult(
        swd=swd(out, es.x_B, rng=Rng(swd_seed, ("swd",))),
        semantic=semantic_consistency(out, es.x_A, extractor),
        style=style_similarity(out, es.y_B, extractor),
        semantic_baseline=semantic_consistency(es.y_B, es.x_A, extractor),
        style_baseline=style_similarity(es.x_A, es.y_B, extractor),
        outputs=out,
    )


def foreground_centroid(image: np.ndarray, threshold: float = FG_THRESHOLD) -> tuple[float, float] | None:
    """(row, col) centroid of pixels brighter than ``threshold`` luma in [0, 1] units.

    Scene fills and backgrounds are rendered at fixed luma, so the midpoint
    separates them whatever the hues.  None when nothing passes.
    """
    img = (np.asarray(image, dtype=np.float64) + 1) / 2
    fg = np.tensordot(LUMA, img, axes=(0, 0)) > threshold
    if not fg.any():
        return None
    ys, xs = np.nonzero(fg)
    return float(ys.mean()), float(xs.mean())


def mask_centroid(mask: np.ndarray) -> tuple[float, float]:
    m = np.asarray(mask)[0] > 0
    ys, xs = np.nonzero(m)
    return float(ys.mean()), float(xs.mean())
