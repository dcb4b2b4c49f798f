"""Binary checkpoints.

Layout (all integers little-endian)::

    b"CFFT"  u32 version
    u32 n  <n bytes of TrainConfig text>
    u32 n  <n bytes of run-state text: step, optimiser step counters>
    u32 record count
    records: u16 name length, name (utf-8), u8 rank, u32 extents[rank],
             float32 payload in C order

Records are the model parameters (``param/<path>``) followed by the Adam
moments of the generator and discriminator optimisers
(``opt_G.m/<path>``, ``opt_G.v/<path>``, ``opt_D.m/...``, ``opt_D.v/...``).
"""
from __future__ import annotations

import io
import os
import struct

import numpy as np

from .config import ConfigError, TrainConfig
from .train import TrainState

MAGIC = b"CFFT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _records(state: TrainState):
    for n, t in state.model.params.items():
        yield f"param/{n}", t.data
    for tag, opt in (("opt_G", state.opt_G), ("opt_D", state.opt_D)):
        for n in opt.params:
            yield f"{tag}.m/{n}", opt.state[n].m
            yield f"{tag}.v/{n}", opt.state[n].v


def _blob(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def checkpoint_bytes(state: TrainState) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", VERSION))
    buf.write(_blob(state.cfg.to_text()))
    buf.write(_blob(f"step={state.step}\nopt_G.t={state.opt_G.t}\nopt_D.t={state.opt_D.t}\n"))
    recs = list(_records(state))
    buf.write(struct.pack("<I", len(recs)))
    for name, arr in recs:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)) + nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(state: TrainState, path) -> None:
    """Write atomically (temp file + rename); I/O errors name the path."""
    data = checkpoint_bytes(state)
    tmp = f"{os.fspath(path)}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {os.fspath(path)!r}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: need {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def _parse_meta(text: str) -> dict[str, int]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k.strip()] = int(v)
    return out


def checkpoint_from_bytes(data: bytes) -> TrainState:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        cfg = TrainConfig.from_text(r.text())
        meta = _parse_meta(r.text())
    except (ConfigError, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after the last record")

    state = TrainState.fresh(cfg)
    expected = dict(_records(state))
    missing = [n for n in expected if n not in arrays]
    extra = [n for n in arrays if n not in expected]
    if missing or extra:
        raise CheckpointError(f"records disagree with config: missing {missing[:3]}, unexpected {extra[:3]}")
    for n, ref in expected.items():
        if arrays[n].shape != ref.shape:
            raise CheckpointError(f"record {n!r} has shape {arrays[n].shape}, config implies {ref.shape}")
    for n, t in state.model.params.items():
        t.data = arrays[f"param/{n}"]
    for tag, opt in (("opt_G", state.opt_G), ("opt_D", state.opt_D)):
        for n in opt.params:
            opt.state[n].m = arrays[f"{tag}.m/{n}"]
            opt.state[n].v = arrays[f"{tag}.v/{n}"]
        opt.t = meta.get(f"{tag}.t", 0)
    state.step = meta.get("step", 0)
    return state


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
