"""Evaluation metrics: sliced Wasserstein distance on patches and feature cosine scores."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import numcore as nc
from ..losses import SurrogateExtractor
from ..numcore import Rng


def _as_images(images) -> np.ndarray:
    if isinstance(images, (list, tuple)):
        arr = np.stack([np.asarray(getattr(x, "data", x)) for x in images])
    else:
        arr = np.asarray(getattr(images, "data", images))
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected a set of (C,H,W) images, got shape {arr.shape}")
    return arr.astype(np.float64)


def extract_patches(images, patch_size: int, per_image: int, rng: Rng) -> np.ndarray:
    """(N*per_image, C*p*p) flattened patches at seeded positions.

    Positions depend only on ``rng``, the image index and the image size,
    so two equally sized sets are sampled at identical locations.
    """
    imgs = _as_images(images)
    N, C, H, W = imgs.shape
    if patch_size > min(H, W):
        raise ValueError(f"patch size {patch_size} exceeds image size {(H, W)}")
    out = np.empty((N, per_image, C * patch_size * patch_size))
    for i in range(N):
        g = rng.child("patches", i).generator
        ys = g.integers(0, H - patch_size + 1, per_image)
        xs = g.integers(0, W - patch_size + 1, per_image)
        for k, (y, x) in enumerate(zip(ys, xs)):
            out[i, k] = imgs[i, :, y : y + patch_size, x : x + patch_size].reshape(-1)
    return out.reshape(N * per_image, -1)


def _quantiles(sorted_vals: np.ndarray, n: int) -> np.ndarray:
    m = sorted_vals.shape[0]
    if m == n:
        return sorted_vals
    src = (np.arange(m) + 0.5) / m
    dst = (np.arange(n) + 0.5) / n
    return np.stack([np.interp(dst, src, col) for col in sorted_vals.T], axis=1)


def sliced_wasserstein(desc_a: np.ndarray, desc_b: np.ndarray, n_projections: int, rng: Rng) -> float:
    """Mean over random unit directions of the 1-D Wasserstein-1 distance.

    Unequal set sizes are resampled to the larger count by quantile
    interpolation.
    """
    a = np.asarray(desc_a, dtype=np.float64)
    b = np.asarray(desc_b, dtype=np.float64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if len(a) == 0 or len(b) == 0:
        raise ValueError("swd needs two non-empty sets")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"descriptor sizes differ: {a.shape[1]} vs {b.shape[1]}")
    dirs = rng.child("directions").generator.standard_normal((a.shape[1], n_projections))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    pa = np.sort(a @ dirs, axis=0)
    pb = np.sort(b @ dirs, axis=0)
    n = max(len(pa), len(pb))
    return float(np.mean(np.abs(_quantiles(pa, n) - _quantiles(pb, n))))


def swd(
    images_a,
    images_b,
    n_projections: int = 64,
    patch_size: int = 7,
    rng: Rng | None = None,
    per_image: int = 64,
) -> float:
    """Sliced Wasserstein distance between the patch distributions of two image sets.

    Patch descriptors are the raw flattened pixel values (images live in a
    fixed [-1, 1] range); no per-set normalisation is applied, so a shift
    in colour statistics registers as distance.
    """
    rng = rng or Rng(0, ("swd",))
    pa = extract_patches(images_a, patch_size, per_image, rng)
    pb = extract_patches(images_b, patch_size, per_image, rng)
    return sliced_wasserstein(pa, pb, n_projections, rng)


def position_cosine(a: np.ndarray, b: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Cosine similarity over the channel axis of (B,C,H,W) maps, averaged over positions -> (B,).

    Two all-zero vectors count as identical (1); one zero vector scores 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.sqrt(np.sum(a * a, axis=1))
    nb = np.sqrt(np.sum(b * b, axis=1))
    dot = np.sum(a * b, axis=1)
    cos = np.where((na > eps) & (nb > eps), dot / np.maximum(na * nb, eps), 0.0)
    cos = np.where((na <= eps) & (nb <= eps), 1.0, cos)
    return np.clip(cos, -1.0, 1.0).reshape(cos.shape[0], -1).mean(axis=1)


def _stage_score(x, ref, extractor: SurrogateExtractor, stages: Sequence[int]):
    xs, rs = _as_images(x), _as_images(ref)
    if xs.shape != rs.shape:
        raise ValueError(f"image sets differ in shape: {xs.shape} vs {rs.shape}")
    with nc.no_tape():
        fx = extractor(xs.astype(np.float32))
        fr = extractor(rs.astype(np.float32))
    per = np.mean([position_cosine(fx[s].data, fr[s].data) for s in stages], axis=0)
    single = np.asarray(getattr(x, "data", x)).ndim == 3
    return float(per[0]) if single else per


def semantic_consistency(x_hat, x_A, extractor: SurrogateExtractor | None = None):
    """Mean cosine of high-level surrogate features; scalar for one image, (B,) for a batch."""
    extractor = extractor or SurrogateExtractor()
    return _stage_score(x_hat, x_A, extractor, (2, 3, 4))


def style_similarity(x_hat, y_B, extractor: SurrogateExtractor | None = None):
    """Mean cosine of low-level surrogate features; scalar for one image, (B,) for a batch."""
    extractor = extractor or SurrogateExtractor()
    return _stage_score(x_hat, y_B, extractor, (0, 1))
