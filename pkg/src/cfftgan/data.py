"""Procedural paired data: textured shape renderings, their edge maps, augmentation, PPM I/O.

Colours are built at fixed luminance (fill 0.65, background 0.2) with hue and
texture carried purely by chroma, so the edge map of a scene depends on its
geometry only.
"""
from __future__ import annotations

import math
import os
from dataclasses import astuple, dataclass, fields, replace
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .losses import PseudoBatch
from .numcore import Rng

SHAPES = ("circle", "rect", "triangle")
MARGIN_PX = 2
SUPERSAMPLE = 4
FILL_LUMA = 0.65
BG_LUMA = 0.2
EDGE_THRESHOLD = 0.2
_LUMA = np.array([0.299, 0.587, 0.114])
_SOBEL_MAX = 4 * math.sqrt(2.0)  # largest Sobel magnitude for luminance in [0, 1]


def _chroma_basis() -> tuple[np.ndarray, np.ndarray]:
    e1 = np.array([0.587, -0.299, 0.0])
    e2 = np.cross(_LUMA, e1)
    return e1 / np.linalg.norm(e1), e2 / np.linalg.norm(e2)


_E1, _E2 = _chroma_basis()


@dataclass(frozen=True)
class SceneSpec:
    """One scene.  Geometry in canvas fractions; ``size`` is the circumradius."""

    kind: str
    cx: float
    cy: float
    size: float
    rotation: float  # radians
    fill_hue: float
    tex_freq: float  # cycles across the canvas
    bg_hue: float
    seed: int = 0

    def validate(self, S: int) -> None:
        if self.kind not in SHAPES:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        for name in ("fill_hue", "bg_hue"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name}={v} outside [0, 1)")
        if not 1.0 <= self.tex_freq <= 8.0:
            raise ValueError(f"tex_freq={self.tex_freq} outside [1, 8]")
        r = self.size * S
        if r <= 0:
            raise ValueError("size must be positive")
        for c in (self.cx * S, self.cy * S):
            if c - r < MARGIN_PX or c + r > S - MARGIN_PX:
                raise ValueError(f"shape extends into the {MARGIN_PX}px margin at S={S}")

    def to_line(self) -> str:
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in astuple(self))

    @classmethod
    def from_line(cls, line: str) -> "SceneSpec":
        parts = line.strip().split(",")
        fs = fields(cls)
        if len(parts) != len(fs):
            raise ValueError(f"manifest line has {len(parts)} fields, expected {len(fs)}: {line!r}")
        kw = {}
        for f, p in zip(fs, parts):
            kw[f.name] = p if f.name == "kind" else (int(p) if f.name == "seed" else float(p))
        return cls(**kw)


def random_spec(rng: Rng, S: int = 32, seed: int = 0) -> SceneSpec:
    kind = SHAPES[int(rng.integers(0, len(SHAPES)))]
    size = float(rng.uniform(0.18, 0.3))
    lo = size + (MARGIN_PX + 0.5) / S
    cx, cy = (float(rng.uniform(lo, 1 - lo)) for _ in range(2))
    return SceneSpec(
        kind=kind,
        cx=cx,
        cy=cy,
        size=size,
        rotation=float(rng.uniform(0, 2 * math.pi)),
        fill_hue=float(rng.uniform(0, 1)),
        tex_freq=float(rng.uniform(1, 8)),
        bg_hue=float(rng.uniform(0, 1)),
        seed=seed,
    )


def make_dataset(seed: int, count: int, S: int = 32) -> list[SceneSpec]:
    """``count`` specs; spec i depends only on (seed, i)."""
    root = Rng(seed, ("dataset",))
    return [random_spec(root.child(i), S, seed=i) for i in range(count)]


def write_manifest(specs: Sequence[SceneSpec], path) -> None:
    with open(path, "w") as fh:
        fh.write("# " + ",".join(f.name for f in fields(SceneSpec)) + "\n")
        for s in specs:
            fh.write(s.to_line() + "\n")


def read_manifest(path) -> list[SceneSpec]:
    with open(path) as fh:
        return [SceneSpec.from_line(ln) for ln in fh if ln.strip() and not ln.startswith("#")]


# -- rendering ---------------------------------------------------------------------------


def _colour(hue: float, luma: float, chroma: float) -> np.ndarray:
    th = 2 * math.pi * hue
    return luma + chroma * (math.cos(th) * _E1 + math.sin(th) * _E2)


def _coverage(spec: SceneSpec, S: int) -> np.ndarray:
    """Anti-aliased (S,S) occupancy by SUPERSAMPLE^2 point sampling."""
    n = SUPERSAMPLE
    offs = (np.arange(S * n) + 0.5) / n
    ys, xs = np.meshgrid(offs, offs, indexing="ij")
    dx, dy = xs - spec.cx * S, ys - spec.cy * S
    r = spec.size * S
    c, s = math.cos(spec.rotation), math.sin(spec.rotation)
    u, v = c * dx + s * dy, -s * dx + c * dy
    if spec.kind == "circle":
        inside = u * u + v * v <= r * r
    elif spec.kind == "rect":
        inside = (np.abs(u) <= 0.8 * r) & (np.abs(v) <= 0.55 * r)
    else:
        inside = np.ones_like(u, dtype=bool)
        for k in range(3):
            # outward edge normals 120 degrees apart; inradius is r/2
            a = 2 * math.pi * k / 3 - math.pi / 2
            inside &= math.cos(a) * u + math.sin(a) * v <= r / 2
    return inside.reshape(S, n, S, n).mean(axis=(1, 3))


def render(spec: SceneSpec, S: int) -> np.ndarray:
    """(3,S,S) textured rendering in [-1, 1]."""
    cov = _coverage(spec, S)
    idx = np.arange(S) + 0.5
    yy, xx = np.meshgrid(idx, idx, indexing="ij")
    tex = 0.5 + 0.5 * np.sin(2 * math.pi * spec.tex_freq * (xx + yy) / (S * math.sqrt(2)))
    th = 2 * math.pi * spec.fill_hue
    chroma = 0.33 * (0.55 + 0.45 * tex)
    fill = FILL_LUMA + chroma[..., None] * (math.cos(th) * _E1 + math.sin(th) * _E2)
    bg = _colour(spec.bg_hue, BG_LUMA, 0.18)
    img = cov[..., None] * fill + (1 - cov[..., None]) * bg
    img = np.clip(img, 0.0, 1.0)
    return (img.transpose(2, 0, 1) * 2 - 1).astype(np.float32)


def render_mask(spec: SceneSpec, S: int) -> np.ndarray:
    """Solid silhouette of the scene's shape: +1 inside, -1 outside, 3 channels."""
    cov = _coverage(spec, S)
    return np.repeat((cov * 2 - 1)[None], 3, axis=0).astype(np.float32)


def edge_extract(image: np.ndarray) -> np.ndarray:
    """Thresholded Sobel magnitude of luminance, as a 3-channel [-1, 1] map."""
    img01 = (np.asarray(image, dtype=np.float64) + 1) / 2
    luma = np.tensordot(_LUMA, img01, axes=(0, 0))
    gx = ndimage.sobel(luma, axis=1, mode="nearest")
    gy = ndimage.sobel(luma, axis=0, mode="nearest")
    mag = np.hypot(gx, gy) / _SOBEL_MAX
    edges = (mag > EDGE_THRESHOLD).astype(np.float32)
    return np.repeat(edges[None] * 2 - 1, 3, axis=0)


def synth_pair(spec: SceneSpec, S: int) -> tuple[np.ndarray, np.ndarray]:
    """(x_A edge map, x_B rendering), both (3,S,S) in [-1, 1]."""
    if S < 16:
        raise ValueError("image size must be at least 16")
    spec.validate(S)
    x_B = render(spec, S)
    return edge_extract(x_B), x_B


def canonical(spec: SceneSpec) -> SceneSpec:
    """Same shape and style moved to the canvas centre."""
    return replace(spec, cx=0.5, cy=0.5)


# -- augmentation -------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentDescriptor:
    flip: bool = False
    shift: tuple[int, int] = (0, 0)  # (dy, dx) pixels
    crop: tuple[float, float, float] | None = None  # (y0, x0, side) pixels
    angle: float = 0.0  # degrees

    @classmethod
    def identity(cls) -> "AugmentDescriptor":
        return cls()

    @classmethod
    def draw(cls, rng: Rng, S: int) -> "AugmentDescriptor":
        flip = rng.random() < 0.5
        m = int(round(S * 0.125))
        shift = (int(rng.integers(-m, m + 1)), int(rng.integers(-m, m + 1)))
        side = S * float(rng.uniform(0.8, 1.0))
        crop = (float(rng.uniform(0, S - side)), float(rng.uniform(0, S - side)), side)
        angle = float(rng.uniform(-10.0, 10.0))
        return cls(flip, shift, crop, angle)


def _hflip(img: np.ndarray) -> np.ndarray:
    return img[..., ::-1].copy()


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    if dy == 0 and dx == 0:
        return img
    S = img.shape[-1]
    p = max(abs(dy), abs(dx))
    padded = np.pad(img, ((0, 0), (p, p), (p, p)), mode="reflect")
    return padded[:, p - dy : p - dy + S, p - dx : p - dx + S].copy()


def _sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    out = np.empty_like(img)
    for c in range(img.shape[0]):
        out[c] = ndimage.map_coordinates(img[c], [ys, xs], order=1, mode="mirror")
    return out


def _crop_resize(img: np.ndarray, y0: float, x0: float, side: float) -> np.ndarray:
    S = img.shape[-1]
    t = (np.arange(S) + 0.5) * side / S - 0.5
    ys, xs = np.meshgrid(y0 + t, x0 + t, indexing="ij")
    return _sample(img, ys, xs)


def _rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0.0:
        return img
    S = img.shape[-1]
    c0 = (S - 1) / 2
    a = math.radians(degrees)
    idx = np.arange(S) - c0
    yy, xx = np.meshgrid(idx, idx, indexing="ij")
    ys = math.cos(a) * yy - math.sin(a) * xx + c0
    xs = math.sin(a) * yy + math.cos(a) * xx + c0
    return _sample(img, ys, xs)


def apply_augment(img: np.ndarray, d: AugmentDescriptor) -> np.ndarray:
    out = img
    if d.flip:
        out = _hflip(out)
    out = _shift(out, *d.shift)
    if d.crop is not None:
        out = _crop_resize(out, *d.crop)
    out = _rotate(out, d.angle)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def augment(x_B: np.ndarray, rng: Rng) -> tuple[np.ndarray, AugmentDescriptor]:
    """Random flip / shift / crop-resize / small rotation; returns (image, descriptor)."""
    d = AugmentDescriptor.draw(rng, x_B.shape[-1])
    return apply_augment(x_B, d), d


# -- datasets and batches -------------------------------------------------------------------


class SceneDataset:
    """Rendered samples for a list of specs, cached per index.

    With ``domains=3`` every sample also carries a position mask; the
    content edge map is then drawn at the canvas centre so that position
    information lives in the mask only, and the exemplar is a same-style
    rendering with independently drawn geometry.
    """

    def __init__(self, specs: Sequence[SceneSpec], S: int = 32, domains: int = 2, seed: int = 0):
        if domains not in (2, 3):
            raise ValueError("domains must be 2 or 3")
        self.specs = list(specs)
        self.S = S
        self.domains = domains
        self.seed = seed
        self._cache: dict[int, tuple[np.ndarray, ...]] = {}

    def __len__(self) -> int:
        return len(self.specs)

    def sample(self, i: int) -> tuple[np.ndarray, ...]:
        """(x_A, x_B) or, with three domains, (x_A, x_B, mask, style_source)."""
        hit = self._cache.get(i)
        if hit is not None:
            return hit
        spec = self.specs[i]
        x_A, x_B = synth_pair(spec, self.S)
        if self.domains == 2:
            out = (x_A, x_B)
        else:
            centred, _ = synth_pair(canonical(spec), self.S)
            other = random_spec(Rng(self.seed, ("style-source", i)), self.S)
            other = replace(other, fill_hue=spec.fill_hue, tex_freq=spec.tex_freq, bg_hue=spec.bg_hue)
            out = (centred, x_B, render_mask(spec, self.S), render(other, self.S))
        self._cache[i] = out
        return out


def pseudo_tuple(ds: SceneDataset, i: int, rng: Rng) -> tuple:
    s = ds.sample(i)
    if ds.domains == 2:
        x_A, x_B = s
        x_t, _ = augment(x_B, rng)
        return x_A, x_t, x_B, ()
    x_A, x_B, mask, style_src = s
    x_t, _ = augment(style_src, rng)
    return x_A, x_t, x_B, (mask,)


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> list[tuple[int, int, int]]:
    """(epoch, position, dataset index) triples for ``step`` of a seeded epoch stream."""
    out = []
    for pos in range(step * batch_size, (step + 1) * batch_size):
        epoch, within = divmod(pos, n)
        perm = _epoch_perm(n, seed, epoch)
        out.append((epoch, within, int(perm[within])))
    return out


_PERM_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def _epoch_perm(n: int, seed: int, epoch: int) -> np.ndarray:
    key = (n, seed, epoch)
    perm = _PERM_CACHE.get(key)
    if perm is None:
        if len(_PERM_CACHE) > 64:
            _PERM_CACHE.clear()
        perm = _PERM_CACHE[key] = Rng(seed, ("epoch", epoch)).permutation(n)
    return perm


def make_batch(ds: SceneDataset, batch_size: int, seed: int, step: int) -> PseudoBatch:
    """The batch for ``step``; a pure function of (dataset, batch size, seed, step)."""
    cols: list[list] = [[], [], [], []]
    for epoch, within, idx in batch_indices(len(ds), batch_size, seed, step):
        x_A, x_t, x_B, extra = pseudo_tuple(ds, idx, Rng(seed, ("augment", epoch, within)))
        cols[0].append(x_A)
        cols[1].append(x_t)
        cols[2].append(x_B)
        cols[3].append(extra)
    extra = tuple(np.stack([e[k] for e in cols[3]]) for k in range(len(cols[3][0])))
    return PseudoBatch(np.stack(cols[0]), np.stack(cols[1]), np.stack(cols[2]), extra)


def batch_iter(ds: SceneDataset, batch_size: int, seed: int, start_step: int = 0) -> Iterator[PseudoBatch]:
    """Endless stream of seeded, shuffled pseudo-tuple batches.

    Epochs are consecutive permutations of the dataset; a batch may straddle
    an epoch boundary.  Augmentation is re-drawn for every visit.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    step = start_step
    while True:
        yield make_batch(ds, batch_size, seed, step)
        step += 1


# -- PPM -------------------------------------------------------------------------------


class PpmError(ValueError):
    pass


def to_bytes(image) -> np.ndarray:
    """[-1, 1] (3,H,W) -> uint8 (H,W,3) with round-half-even quantisation."""
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected a (3,H,W) image, got {arr.shape}")
    q = np.rint(np.clip((arr + 1) / 2, 0, 1) * 255)
    return q.astype(np.uint8).transpose(1, 2, 0)


def save_image(image, path) -> None:
    q = to_bytes(image)
    H, W, _ = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PpmError("malformed PPM header: unexpected end of file")
    return buf[start:pos], pos


def load_image(path) -> np.ndarray:
    """Binary P6 with maxval 255 -> float32 (3,H,W) in [-1, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic != b"P6":
        raise PpmError(f"malformed PPM header: magic {magic!r} in {os.fspath(path)}")
    try:
        w_tok, pos = _read_token(buf, pos)
        h_tok, pos = _read_token(buf, pos)
        m_tok, pos = _read_token(buf, pos)
        W, H, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as exc:
        raise PpmError(f"malformed PPM header in {os.fspath(path)}: {exc}") from None
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval} (only 255)")
    pos += 1  # single whitespace byte after maxval
    need = W * H * 3
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise PpmError(f"truncated PPM payload: {len(payload)} of {need} bytes in {os.fspath(path)}")
    q = np.frombuffer(payload, dtype=np.uint8).reshape(H, W, 3).transpose(2, 0, 1)
    return (q.astype(np.float32) / 255.0 * 2 - 1).astype(np.float32)
