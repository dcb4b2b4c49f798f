"""End-to-end translation model: domain encoders, fusion stage(s), SPADE generator, patch discriminator."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from . import numcore as nc
from .cfft import CfftConfig, cascade_forward, init_cfft
from .nnblocks import (
    ParamStore,
    conv,
    conv_block,
    init_conv,
    init_conv_block,
    init_resblock,
    resblock,
)
from .numcore import ShapeError, Tensor

DOMAIN_NAMES = "abcdefgh"
TANH_SHRINK = 1.0 - 2.0**-24


@dataclass(frozen=True)
class ArchConfig:
    """Layer schedules.  Defaults are the 32x32 desk model.

    ``generator_stages`` lists ``(out_channels, upsample_after)`` per SPADE
    residual block; the generator starts from a learned constant at
    ``image_size / 2**n_upsample``.
    """

    image_size: int = 32
    image_channels: int = 3
    cfft: CfftConfig = field(default_factory=CfftConfig)
    encoder_schedule: tuple[tuple[str, int], ...] = (("k3s1", 16), ("k4s2", 32), ("k4s2", 32))
    encoder_res: tuple[int, ...] = (32, 24, 16)
    generator_start_channels: int = 64
    generator_stages: tuple[tuple[int, bool], ...] = ((64, True), (32, True), (16, False))
    spade_hidden: int = 32
    discriminator_widths: tuple[int, ...] = (32, 64, 128)
    domains: int = 2

    def __post_init__(self):
        if self.domains < 2:
            raise ValueError("at least two domains are required")
        if self.encoder_res[-1] != self.cfft.C:
            raise ValueError(f"encoder must end at C={self.cfft.C} channels, ends at {self.encoder_res[-1]}")
        c, h, w = self.encoder_output_shape()
        if (h, w) != (self.cfft.H, self.cfft.W):
            raise ValueError(f"encoder maps {self.image_size}px to {h}x{w}, config expects {self.cfft.H}x{self.cfft.W}")
        if self.generator_start_size() * 2 ** self.n_upsample != self.image_size:
            raise ValueError("generator schedule does not reach the image size")

    @property
    def n_upsample(self) -> int:
        return sum(1 for _, up in self.generator_stages if up)

    @property
    def cond_channels(self) -> int:
        """Channels of the modulation input w = [f, scaled x_A]."""
        return self.cfft.C + self.image_channels

    def generator_start_size(self) -> int:
        return self.image_size // 2**self.n_upsample

    def encoder_output_shape(self) -> tuple[int, int, int]:
        s = self.image_size
        for spec, _ in self.encoder_schedule:
            if spec == "k4s2":
                s //= 2
        return self.encoder_res[-1], s, s

    def discriminator_output_shape(self) -> tuple[int, int, int]:
        return 1, self.image_size // 2 ** len(self.discriminator_widths), self.image_size // 2 ** len(
            self.discriminator_widths
        )

    @classmethod
    def desk(
        cls,
        image_size: int = 32,
        C: int = 16,
        hiformer_enabled: bool = True,
        domains: int = 2,
        spade_hidden: int = 32,
        levels: int = 3,
    ) -> "ArchConfig":
        """The desk schedule at any size divisible by 4 * 2**(levels-1); features are S/4."""
        hw = image_size // 4
        return cls(
            image_size=image_size,
            cfft=CfftConfig(C=C, H=hw, W=hw, levels=levels, hiformer_enabled=hiformer_enabled),
            encoder_res=(32, 24, C),
            spade_hidden=spade_hidden,
            domains=domains,
        )

    @classmethod
    def micro(cls, levels: int = 2, hiformer_enabled: bool = True, domains: int = 2) -> "ArchConfig":
        """Tiny model with (C,H,W) = (4,4,4), for gradient checks.

        Images stay 32px so that the five-stage surrogate extractor still
        has a 1x1 deepest stage.
        """
        return cls(
            image_size=32,
            cfft=CfftConfig(C=4, H=4, W=4, ffn_depth=1, hiformer_depth=1, levels=levels, heads=2,
                            hiformer_enabled=hiformer_enabled),
            encoder_schedule=(("k4s2", 4), ("k4s2", 4), ("k4s2", 4)),
            encoder_res=(4,),
            generator_start_channels=4,
            generator_stages=((4, True), (4, True), (4, True)),
            spade_hidden=4,
            discriminator_widths=(4, 4),
            domains=domains,
        )

    @classmethod
    def paper(cls) -> "ArchConfig":
        """512px schedule from the published architecture table (not intended to be trained here)."""
        return cls(
            image_size=512,
            cfft=CfftConfig(C=64, H=64, W=64),
            encoder_schedule=(("k3s1", 64), ("k4s2", 128), ("k3s1", 256), ("k4s2", 256), ("k3s1", 512), ("k4s2", 512)),
            encoder_res=(512, 256, 64),
            generator_start_channels=1024,
            generator_stages=((1024, True), (1024, False), (1024, True), (512, True), (256, True), (128, True), (64, False)),
            spade_hidden=128,
            discriminator_widths=(64, 128, 256, 512),
        )

    def with_cfft(self, **changes) -> "ArchConfig":
        return replace(self, cfft=replace(self.cfft, **changes))


class TranslationModel:
    """Parameters of the whole pipeline in one ParamStore.

    Path prefixes: ``enc_a.``, ``enc_b.`` (``enc_c.`` ... for extra domains),
    ``cfft0.`` ... (one per fusion stage), ``gen.`` and ``disc.``.
    """

    def __init__(self, arch: ArchConfig | None = None, seed: int = 0):
        self.arch = arch or ArchConfig()
        self.seed = seed
        self.params = ParamStore(seed)
        ps, a = self.params, self.arch
        for enc in self.encoder_names:
            init_encoder(ps, a, enc)
        for stage in self.stage_names:
            init_cfft(ps, a.cfft, stage)
        init_generator(ps, a, "gen")
        init_discriminator(ps, a, "disc")

    @property
    def encoder_names(self) -> list[str]:
        return [f"enc_{DOMAIN_NAMES[i]}" for i in range(self.arch.domains)]

    @property
    def stage_names(self) -> list[str]:
        return [f"cfft{i}" for i in range(self.arch.domains - 1)]

    def generator_names(self) -> list[str]:
        """Everything trained by the generator-side objective."""
        return [n for n in self.params if not n.startswith("disc.")]

    def discriminator_names(self) -> list[str]:
        return self.params.names("disc.")

    def astype(self, dtype) -> "TranslationModel":
        out = object.__new__(TranslationModel)
        out.arch, out.seed, out.params = self.arch, self.seed, self.params.astype(dtype)
        return out


def _batch(x, ndim: int = 4) -> tuple[Tensor, bool]:
    x = nc.as_tensor(x)
    if x.ndim == ndim - 1:
        return nc.reshape(x, (1,) + x.shape), True
    return x, False


def _out(x: Tensor, squeeze: bool) -> Tensor:
    return nc.reshape(x, x.shape[1:]) if squeeze else x


# -- encoders -----------------------------------------------------------------------


def init_encoder(ps: ParamStore, arch: ArchConfig, name: str) -> None:
    cin = arch.image_channels
    for i, (spec, cout) in enumerate(arch.encoder_schedule):
        init_conv_block(ps, f"{name}.conv{i}", cin, cout, spec)
        cin = cout
    for j, cout in enumerate(arch.encoder_res):
        init_resblock(ps, f"{name}.res{j}", cin, cout)
        cin = cout


def encode(model: TranslationModel, image, which: str) -> Tensor:
    """Domain encoder ``which`` ('A', 'B', ...) maps (3,S,S) images to (C,H,W) features."""
    name = f"enc_{which.lower()}"
    if name not in model.encoder_names:
        raise ValueError(f"no encoder for domain {which!r}")
    x, squeeze = _batch(image)
    S = model.arch.image_size
    if x.shape[1:] != (model.arch.image_channels, S, S):
        raise ShapeError(f"encoder expects {(model.arch.image_channels, S, S)} images, got {x.shape[1:]}")
    ps = model.params
    for i, (spec, _) in enumerate(model.arch.encoder_schedule):
        x = conv_block(ps, x, spec, f"{name}.conv{i}")
    for j in range(len(model.arch.encoder_res)):
        x = resblock(ps, x, f"{name}.res{j}")
    return _out(x, squeeze)


# -- SPADE generator ------------------------------------------------------------------


def init_spade(ps: ParamStore, name: str, channels: int, cond_channels: int, hidden: int) -> None:
    init_conv(ps, f"{name}.shared", cond_channels, hidden, 3)
    # gamma starts near 1 and beta near 0: modulation begins as plain normalisation
    init_conv(ps, f"{name}.gamma", hidden, channels, 3, bias_value=1.0, std=0.02)
    init_conv(ps, f"{name}.beta", hidden, channels, 3, std=0.02)


def spade_modulate(ps: ParamStore, F, w, name: str, return_affine: bool = False):
    """gamma(w) * (F - mu) / sigma + beta(w), statistics per channel over space.

    ``w`` is bilinearly resized to F's resolution before the shared conv.
    """
    F, squeeze = _batch(F)
    w, _ = _batch(w)
    size = F.shape[-2:]
    w = nc.resize_bilinear(w, size)
    actv = nc.relu(conv(ps, w, f"{name}.shared"))
    weight = nc.concat([ps[f"{name}.gamma.weight"], ps[f"{name}.beta.weight"]], axis=0)
    bias = nc.concat([ps[f"{name}.gamma.bias"], ps[f"{name}.beta.bias"]], axis=0)
    gamma, beta = nc.split(nc.conv2d(actv, weight, bias, stride=1, padding=1), 2, axis=1)
    out = _out(gamma * nc.normalize(F, (-2, -1), 1e-5) + beta, squeeze)
    if return_affine:
        return out, _out(gamma, squeeze), _out(beta, squeeze)
    return out


def init_spade_resblock(ps: ParamStore, name: str, cin: int, cout: int, cond: int, hidden: int) -> None:
    mid = min(cin, cout)
    init_spade(ps, f"{name}.norm0", cin, cond, hidden)
    init_conv(ps, f"{name}.conv0", cin, mid, 3)
    init_spade(ps, f"{name}.norm1", mid, cond, hidden)
    init_conv(ps, f"{name}.conv1", mid, cout, 3)
    if cin != cout:
        init_spade(ps, f"{name}.norm_skip", cin, cond, hidden)
        init_conv(ps, f"{name}.skip", cin, cout, 1)


def spade_resblock(ps: ParamStore, x: Tensor, w: Tensor, name: str) -> Tensor:
    dx = conv(ps, nc.relu(spade_modulate(ps, x, w, f"{name}.norm0")), f"{name}.conv0")
    dx = conv(ps, nc.relu(spade_modulate(ps, dx, w, f"{name}.norm1")), f"{name}.conv1")
    if f"{name}.skip.weight" in ps:
        x = conv(ps, spade_modulate(ps, x, w, f"{name}.norm_skip"), f"{name}.skip", "k1s1")
    return x + dx


def init_generator(ps: ParamStore, arch: ArchConfig, name: str) -> None:
    s0 = arch.generator_start_size()
    ps.create(f"{name}.const", (1, arch.generator_start_channels, s0, s0), "normal", 1.0)
    cin = arch.generator_start_channels
    for i, (cout, _) in enumerate(arch.generator_stages):
        init_spade_resblock(ps, f"{name}.block{i}", cin, cout, arch.cond_channels, arch.spade_hidden)
        cin = cout
    init_conv(ps, f"{name}.to_rgb", cin, arch.image_channels, 3)


def generate(model: TranslationModel, f, x_A) -> Tensor:
    """Synthesize an image from the fused feature and the content image.

    w = [f ; x_A resized to f's resolution] conditions every SPADE layer.
    """
    a, ps = model.arch, model.params
    f, squeeze = _batch(f)
    x_A, _ = _batch(x_A)
    if f.shape[1:] != (a.cfft.C, a.cfft.H, a.cfft.W):
        raise ShapeError(f"fused feature {f.shape[1:]} does not match {(a.cfft.C, a.cfft.H, a.cfft.W)}")
    w = nc.concat([f, nc.resize_bilinear(x_A, (a.cfft.H, a.cfft.W))], axis=1)
    B = f.shape[0]
    const = ps["gen.const"]
    x = const + nc.zeros((B,) + const.shape[1:])
    for i, (_, up) in enumerate(a.generator_stages):
        x = spade_resblock(ps, x, w, f"gen.block{i}")
        if up:
            x = nc.upsample_nearest(x, 2)
    # the shrink keeps saturated float32 outputs strictly inside (-1, 1)
    x = nc.tanh(conv(ps, nc.leaky_relu(x, 0.2), "gen.to_rgb")) * TANH_SHRINK
    return _out(x, squeeze)


# -- discriminator ----------------------------------------------------------------------


def init_discriminator(ps: ParamStore, arch: ArchConfig, name: str) -> None:
    cin = arch.image_channels
    for i, cout in enumerate(arch.discriminator_widths):
        init_conv_block(ps, f"{name}.block{i}", cin, cout, "k4s2")
        cin = cout
    init_conv(ps, f"{name}.out", cin, 1, 3)


def discriminate(model: TranslationModel, image) -> Tensor:
    """Raw patch scores (1, S/2^n, S/2^n); no output activation."""
    x, squeeze = _batch(image)
    S = model.arch.image_size
    if x.shape[1:] != (model.arch.image_channels, S, S):
        raise ShapeError(f"discriminator expects {(model.arch.image_channels, S, S)} images, got {x.shape[1:]}")
    ps = model.params
    for i in range(len(model.arch.discriminator_widths)):
        x = conv_block(ps, x, "k4s2", f"disc.block{i}")
    return _out(conv(ps, x, "disc.out"), squeeze)


# -- pipeline -----------------------------------------------------------------------------


def encode_domains(model: TranslationModel, images: Sequence) -> list[Tensor]:
    if len(images) != model.arch.domains:
        raise ValueError(f"model fuses {model.arch.domains} domains, got {len(images)} images")
    return [encode(model, img, DOMAIN_NAMES[i]) for i, img in enumerate(images)]


def fuse(model: TranslationModel, feats: Sequence[Tensor]) -> Tensor:
    """Fuse encoded domain features through the stage cascade."""
    cfgs = [model.arch.cfft] * len(model.stage_names)
    return cascade_forward(model.params, feats, cfgs, model.stage_names)


def translate(model: TranslationModel, x_A, y_B, extra: Sequence = ()) -> Tensor:
    """x_A content + y_B exemplar (+ extra domains) -> translated image."""
    feats = encode_domains(model, [x_A, y_B, *extra])
    return generate(model, fuse(model, feats), x_A)
