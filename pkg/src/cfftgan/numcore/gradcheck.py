"""Central finite-difference check of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import NonScalarError, Tape, Tensor, backward, no_tape, precision
from .rng import Rng


@dataclass
class GradCheckReport:
    max_rel_error: list[float] = field(default_factory=list)
    max_abs_error: list[float] = field(default_factory=list)
    checked: list[int] = field(default_factory=list)
    passed: bool = True

    def __str__(self) -> str:
        errs = ", ".join(f"{e:.2e}" for e in self.max_rel_error)
        return f"GradCheckReport(passed={self.passed}, max_rel_error=[{errs}], checked={self.checked})"


def _scalar(out) -> float:
    out = out if isinstance(out, Tensor) else Tensor(out)
    if out.size != 1:
        raise NonScalarError(f"grad_check needs a scalar function, got shape {out.shape}")
    return float(out.data.reshape(-1)[0])


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-3,
    rtol: float = 1e-3,
    atol: float = 1e-5,
    max_coords: int = 10_000,
    seed: int = 0,
    numeric_dtype=np.float64,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` with central differences.

    Every input must have ``requires_grad=True``.  Inputs larger than
    ``max_coords`` are checked on a seeded random coordinate subset.  The
    difference quotients are evaluated in ``numeric_dtype`` (float64 by
    default) so the oracle's own rounding stays far below ``rtol``; pass
    ``None`` to evaluate in the inputs' native width.  A coordinate passes
    when ``|analytic - numeric| <= atol + rtol * |numeric|``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with Tape():
        out = f(*inputs)
        if not isinstance(out, Tensor) or out.size != 1:
            raise NonScalarError(f"grad_check needs a scalar function, got {getattr(out, 'shape', out)}")
        grads = backward(out)

    report = GradCheckReport()
    rng = Rng(seed, ("grad_check",))
    for k, t in enumerate(inputs):
        g = grads.get(t)
        analytic = np.zeros(t.shape) if g is None else g.data.astype(np.float64)
        original = t.data
        n = original.size
        coords = np.arange(n) if n <= max_coords else np.sort(rng.child(k).permutation(n)[:max_coords])
        dtype = original.dtype if numeric_dtype is None else np.dtype(numeric_dtype)
        work = original.astype(dtype, copy=True)
        flat = work.reshape(-1)
        numeric = np.empty(len(coords))
        t.data = work
        try:
            with no_tape(), precision(dtype):
                for j, c in enumerate(coords):
                    base = flat[c]
                    flat[c] = base + eps
                    fp = _scalar(f(*inputs))
                    flat[c] = base - eps
                    fm = _scalar(f(*inputs))
                    flat[c] = base
                    numeric[j] = (fp - fm) / (2 * eps)
        finally:
            t.data = original
        a = analytic.reshape(-1)[coords]
        diff = np.abs(a - numeric)
        ok = diff <= atol + rtol * np.abs(numeric)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), np.finfo(np.float64).tiny)
        rel = np.where(diff > atol, diff / denom, 0.0)
        report.max_rel_error.append(float(rel.max()) if rel.size else 0.0)
        report.max_abs_error.append(float(diff.max()) if diff.size else 0.0)
        report.checked.append(len(coords))
        report.passed &= bool(ok.all())
    return report
