"""Voxel-grid data model and intensity preprocessing.

Arrays are indexed ``data[i, j, k]`` with ``i`` along x.  When a grid is
flattened (file I/O, ``Volume.ravel``) the x index varies fastest, i.e.
Fortran order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ParameterError, ShapeError

__all__ = [
    "Volume",
    "LabelMask",
    "window_level",
    "minmax_normalize",
    "resample_to_spacing",
]


def _as_triple(value, name, positive=False):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size != 3:
        raise ParameterError(f"{name} must have 3 components, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} must be finite, got {tuple(arr)}")
    if positive and np.any(arr <= 0):
        raise ParameterError(f"{name} must be strictly positive, got {tuple(arr)}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3-D scalar image on a regular grid.

    Parameters
    ----------
    data : array_like, shape (nx, ny, nz)
        Voxel values.  Must be finite.
    spacing : tuple of float
        Voxel size in millimetres along x, y, z.
    origin : tuple of float
        Physical position of voxel (0, 0, 0) in millimetres.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"volume data must be a non-empty 3-D array, got shape {data.shape}")
        data = self._coerce(data)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    def _coerce(self, data):
        if data.dtype.kind not in "fiub":
            raise ParameterError(f"unsupported volume dtype {data.dtype}")
        if data.dtype.kind == "b":
            data = data.astype(np.float64)
        if data.dtype.kind == "f" and not np.all(np.isfinite(data)):
            raise ParameterError("volume data contains NaN or Inf")
        return data

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)

    @property
    def size(self):
        return int(self.data.size)

    def ravel(self):
        """Voxel values in x-fastest order."""
        return self.data.ravel(order="F")

    @classmethod
    def from_flat(cls, values, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        values = np.asarray(values)
        dims = tuple(int(n) for n in dims)
        if values.ndim != 1 or values.size != int(np.prod(dims)):
            raise ShapeError(f"{values.size} values cannot fill a grid of dims {dims}")
        return cls(values.reshape(dims, order="F"), spacing, origin)

    def with_data(self, data):
        """Copy of this grid's metadata around new voxel values."""
        return Volume(np.asarray(data), self.spacing, self.origin)

    def same_grid(self, other):
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing)
            and np.allclose(self.origin, other.origin)
        )

    def __repr__(self):
        return f"{type(self).__name__}(dims={self.dims}, spacing={self.spacing}, origin={self.origin})"


@dataclass(frozen=True, eq=False, repr=False)
class LabelMask(Volume):
    """Binary mask sharing the grid layout of :class:`Volume`.

    Values are stored as ``uint8`` and must be exactly 0 or 1.
    """

    def _coerce(self, data):
        if data.dtype.kind == "f" and not np.all(np.isfinite(data)):
            raise ParameterError("label data contains NaN or Inf")
        if not np.all((data == 0) | (data == 1)):
            raise ParameterError("label mask values must be exactly 0 or 1")
        return data.astype(np.uint8)

    def with_data(self, data):
        return LabelMask(np.asarray(data), self.spacing, self.origin)

    @property
    def count(self):
        return int(self.data.sum(dtype=np.int64))

    def as_bool(self):
        return self.data.astype(bool)


def window_level(vol, level=50.0, window=350.0):
    """Clamp the intensity band ``level +/- window/2`` and rescale it to [0, 1]."""
    if not np.isfinite(window) or window <= 0:
        raise ParameterError(f"window must be positive, got {window}")
    low = level - window / 2.0
    out = np.clip((vol.data.astype(np.float64) - low) / window, 0.0, 1.0)
    return Volume(out, vol.spacing, vol.origin)


def minmax_normalize(vol):
    """Affinely map the data range onto [0, 1]; constant input maps to zeros."""
    data = vol.data.astype(np.float64)
    lo, hi = data.min(), data.max()
    if hi == lo:
        return Volume(np.zeros_like(data), vol.spacing, vol.origin)
    return Volume((data - lo) / (hi - lo), vol.spacing, vol.origin)


def resample_to_spacing(vol, target_spacing):
    """Resample onto a grid with the requested voxel spacing.

    The new grid shares the origin of the old one and covers the same
    physical extent, ``round(dims * spacing / target_spacing)`` voxels per
    axis.  Values are trilinearly interpolated; points falling outside the
    old grid read as zero.
    """
    from .warp import _interp

    target = _as_triple(target_spacing, "target_spacing", positive=True)
    if target == vol.spacing:
        return Volume(vol.data.copy(), vol.spacing, vol.origin)
    old = np.asarray(vol.spacing)
    ratio = np.asarray(target) / old
    new_dims = np.maximum(1, np.round(np.asarray(vol.dims) * old / np.asarray(target))).astype(int)
    axes = [np.arange(n) * r for n, r in zip(new_dims, ratio)]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    out = _interp(vol.data.astype(np.float64), coords)
    return Volume(out, target, vol.origin)
