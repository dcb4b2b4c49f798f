"""Adversarial training loop: one discriminator step, then one generator step."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import numcore as nc
from ..data import SceneDataset, make_batch, make_dataset
from ..losses import (
    LossTerms,
    NonFiniteLossError,
    PseudoBatch,
    SurrogateExtractor,
    generator_objective,
    l_adv_d,
)
from ..translation import TranslationModel, encode_domains, fuse, generate
from .config import TrainConfig
from .optim import Adam

log = logging.getLogger(__name__)

LOG_KEYS = ("step", "align", "match", "perc", "cx", "adv_g", "g_total", "adv_d", "d_total")


@dataclass
class TrainState:
    cfg: TrainConfig
    model: TranslationModel
    opt_G: Adam
    opt_D: Adam
    extractor: SurrogateExtractor
    step: int = 0
    history: list[dict[str, float]] = field(default_factory=list)

    @classmethod
    def fresh(cls, cfg: TrainConfig) -> "TrainState":
        model = TranslationModel(cfg.arch(), seed=cfg.seed)
        ps = model.params
        opt_G = Adam({n: ps[n] for n in model.generator_names()}, cfg.lr_G, cfg.beta1, cfg.beta2, cfg.eps)
        opt_D = Adam({n: ps[n] for n in model.discriminator_names()}, cfg.lr_D, cfg.beta1, cfg.beta2, cfg.eps)
        return cls(cfg, model, opt_G, opt_D, SurrogateExtractor(cfg.extractor_seed))


def training_dataset(cfg: TrainConfig) -> SceneDataset:
    specs = make_dataset(cfg.data_seed, cfg.dataset_size, cfg.image_size)
    return SceneDataset(specs, cfg.image_size, cfg.domains, seed=cfg.data_seed)


def _grads(gmap: nc.GradMap, params: dict[str, nc.Tensor]) -> dict[str, np.ndarray | None]:
    out = {}
    for n, p in params.items():
        g = gmap.get(p)
        out[n] = None if g is None else g.data
    return out


def train_step(state: TrainState, batch: PseudoBatch) -> dict[str, float]:
    """Advance ``state`` by one iteration on ``batch``; returns the logged terms.

    The fake is produced once on the generator tape.  The discriminator
    step runs on a nested tape against the detached fake and updates D
    before the generator's adversarial term is evaluated.
    """
    cfg, model = state.cfg, state.model
    with nc.Tape():
        x_A = nc.as_tensor(batch.x_A)
        feats = encode_domains(model, [x_A, batch.x_tilde_B, *batch.extra])
        fake = generate(model, fuse(model, feats), x_A)

        with nc.Tape():
            d_adv = l_adv_d(batch.x_B, fake, model)
            d_total = d_adv * cfg.weights.adv
            d_value = float(d_total.data)
            if not math.isfinite(d_value):
                raise NonFiniteLossError(f"step {state.step + 1}: non-finite discriminator loss {d_value}")
            state.opt_D.step(_grads(nc.backward(d_total), state.opt_D.params))

        g_total, terms, _ = generator_objective(batch, model, cfg.weights, state.extractor, fake=fake, feats=feats)
        values = {k: float(v.data) for k, v in terms.items()}
        values["g_total"] = float(g_total.data)
        values["adv_d"] = float(d_adv.data)
        values["d_total"] = d_value
        try:
            LossTerms(values).check()
        except NonFiniteLossError as exc:
            raise NonFiniteLossError(f"step {state.step + 1}: {exc}") from None
        state.opt_G.step(_grads(nc.backward(g_total), state.opt_G.params))

    state.step += 1
    record = {"step": float(state.step), **values}
    state.history.append(record)
    return record


def format_log_line(record: dict[str, float]) -> str:
    """``step=… align=… …`` with full-precision floats (replayable bit-for-bit)."""
    parts = [f"step={int(record['step'])}"]
    parts += [f"{k}={record[k]!r}" for k in LOG_KEYS[1:] if k in record]
    return " ".join(parts)


def train(
    cfg: TrainConfig,
    state: TrainState | None = None,
    until: int | None = None,
    callback: Callable[[TrainState], None] | None = None,
    dataset: SceneDataset | None = None,
) -> TrainState:
    """Run (or resume) training up to step ``until`` (default ``cfg.steps``).

    ``callback`` is invoked after every step.  With ``cfg.out_dir`` set, the
    loss log is appended to ``out_dir/losses.log`` and checkpoints are
    written every ``ckpt_interval`` steps and at the end.
    """
    from .checkpoint import save_checkpoint

    state = state or TrainState.fresh(cfg)
    ds = dataset or training_dataset(cfg)
    until = cfg.steps if until is None else until
    log_fh = None
    if cfg.out_dir:
        try:
            os.makedirs(cfg.out_dir, exist_ok=True)
            log_fh = open(os.path.join(cfg.out_dir, "losses.log"), "a")
        except OSError as exc:
            raise OSError(f"cannot write training output to {cfg.out_dir!r}: {exc}") from exc
    try:
        while state.step < until:
            batch = make_batch(ds, cfg.batch_size, cfg.seed, state.step)
            record = train_step(state, batch)
            if log_fh is not None:
                log_fh.write(format_log_line(record) + "\n")
            if cfg.log_interval and state.step % cfg.log_interval == 0:
                log.info(format_log_line(record))
            if cfg.out_dir and cfg.ckpt_interval and state.step % cfg.ckpt_interval == 0:
                save_checkpoint(state, os.path.join(cfg.out_dir, f"step{state.step:06d}.ckpt"))
            if callback is not None:
                callback(state)
        if cfg.out_dir:
            save_checkpoint(state, os.path.join(cfg.out_dir, "final.ckpt"))
    finally:
        if log_fh is not None:
            log_fh.close()
    return state


def smoothed(values, window: int = 50) -> np.ndarray:
    """Trailing moving average; entry i averages values[max(0, i-window+1) : i+1]."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
