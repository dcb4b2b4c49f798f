"""Dense tensors with reverse-mode differentiation, built on numpy."""
from . import primitives  # noqa: F401  (registers the catalog)
from .autodiff import (
    DetachedError,
    GradMap,
    NonScalarError,
    ShapeError,
    Tape,
    Tensor,
    UnknownPrimitiveError,
    active_tape,
    apply_primitive,
    as_tensor,
    backward,
    default_dtype,
    no_tape,
    precision,
    primitive_names,
    set_default_dtype,
)
from .gradcheck import GradCheckReport, grad_check
from .ops import *  # noqa: F401,F403
from .rng import Rng

__all__ = [
    "DetachedError",
    "GradCheckReport",
    "GradMap",
    "NonScalarError",
    "Rng",
    "ShapeError",
    "Tape",
    "Tensor",
    "UnknownPrimitiveError",
    "active_tape",
    "apply_primitive",
    "as_tensor",
    "backward",
    "default_dtype",
    "grad_check",
    "no_tape",
    "precision",
    "primitive_names",
    "set_default_dtype",
]
