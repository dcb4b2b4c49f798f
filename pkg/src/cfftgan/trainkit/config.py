"""Training configuration and its line-based ``key=value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from ..losses import LossWeights
from ..translation import ArchConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run.

    Optimiser defaults follow the two-time-scale rule (lr_D = 4 * lr_G) with
    Adam betas (0, 0.999).  The fusion feature is (C, S/4, S/4).
    """

    lr_G: float = 1e-4
    lr_D: float = 4e-4
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    steps: int = 2000
    seed: int = 0
    image_size: int = 32
    C: int = 16
    levels: int = 3
    hiformer_enabled: bool = True
    domains: int = 2
    spade_hidden: int = 32
    dataset_size: int = 512
    data_seed: int = 0
    extractor_seed: int = 1234
    log_interval: int = 50
    ckpt_interval: int = 0
    out_dir: str = ""
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for name in ("lr_G", "lr_D", "eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.steps < 1 or self.batch_size < 1 or self.dataset_size < 1:
            raise ConfigError("steps, batch_size and dataset_size must be >= 1")
        if self.log_interval < 0 or self.ckpt_interval < 0:
            raise ConfigError("intervals must be >= 0")
        if self.domains not in (2, 3):
            raise ConfigError("domains must be 2 or 3")
        try:
            self.arch()
        except ValueError as exc:
            raise ConfigError(f"inconsistent architecture: {exc}") from None

    def arch(self) -> ArchConfig:
        return ArchConfig.desk(
            self.image_size,
            self.C,
            hiformer_enabled=self.hiformer_enabled,
            domains=self.domains,
            spade_hidden=self.spade_hidden,
            levels=self.levels,
        )

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    # -- text form -------------------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "weights":
                continue
            lines.append(f"{f.name}={_fmt(getattr(self, f.name))}")
        for f in fields(LossWeights):
            lines.append(f"weights.{f.name}={_fmt(getattr(self.weights, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored.

        Unknown keys, duplicate keys and unparsable values raise ConfigError.
        """
        top = {f.name: f for f in fields(cls) if f.name != "weights"}
        sub = {f.name: f for f in fields(LossWeights)}
        kw: dict = {}
        wkw: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            if key.startswith("weights."):
                name, table, dest = key[len("weights."):], sub, wkw
            else:
                name, table, dest = key, top, kw
            if name not in table:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if name in dest:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            default = getattr(LossWeights() if dest is wkw else _DEFAULT, name)
            dest[name] = _parse(value, default, key, lineno)
        try:
            weights = LossWeights(**wkw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(**kw, weights=weights)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _parse(value: str, like, key: str, lineno: int):
    try:
        if isinstance(like, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(f"not a boolean: {value!r}")
            return low in ("true", "1")
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            return tuple(float(x) for x in value.split(",") if x.strip())
        return value
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None


_DEFAULT = TrainConfig.__new__(TrainConfig)
for _f in fields(TrainConfig):
    if _f.name != "weights":
        object.__setattr__(_DEFAULT, _f.name, _f.default)
