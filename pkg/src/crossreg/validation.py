"""Input checks shared by the estimator wrappers and the command line."""

from __future__ import annotations

import numpy as np

from .exceptions import ParameterError, ShapeError
from .volume import LabelMask, Volume
from .warp import DisplacementField

__all__ = ["check_volume", "check_label", "check_field", "check_same_dims"]


def check_volume(obj, name="volume"):
    """Return ``obj`` as a :class:`Volume`; bare 3-D arrays are wrapped."""
    if isinstance(obj, Volume):
        return obj
    if isinstance(obj, np.ndarray):
        return Volume(obj)
    raise ParameterError(f"{name} must be a Volume or a 3-D array, got {type(obj).__name__}")


def check_label(obj, name="label"):
    """Return ``obj`` as a :class:`LabelMask`, failing on non-binary values."""
    if isinstance(obj, LabelMask):
        return obj
    data = obj.data if isinstance(obj, Volume) else np.asarray(obj)
    if not np.all((data == 0) | (data == 1)):
        raise ParameterError(f"{name} is not binary: values other than 0 and 1 present")
    spacing = obj.spacing if isinstance(obj, Volume) else (1.0, 1.0, 1.0)
    origin = obj.origin if isinstance(obj, Volume) else (0.0, 0.0, 0.0)
    return LabelMask(data.astype(np.uint8), spacing, origin)


def check_field(obj, name="field"):
    if isinstance(obj, DisplacementField):
        return obj
    return DisplacementField(np.asarray(obj, dtype=float))


def check_same_dims(*items, what="inputs"):
    dims = {tuple(item.dims) for item in items}
    if len(dims) > 1:
        raise ShapeError(f"{what} have differing dims: {sorted(dims)}")
