"""Displacement fields, warping, composition and Jacobian analysis.

A displacement field stores one vector ``u(p)`` per voxel of the fixed grid,
in voxel units of that grid.  Warping a moving image reads it at ``p + u(p)``.
Images are extended by zeros beyond their faces: trilinear samples fade to
zero over the last voxel outside the grid, nearest-neighbour samples whose
rounded index leaves the grid read zero.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import ParameterError, ShapeError
from .volume import LabelMask, Volume

__all__ = [
    "DisplacementField",
    "sample_trilinear",
    "warp_image",
    "warp_label",
    "jacobian_determinant",
    "compose_fields",
    "restrict_field",
    "prolong_field",
    "identity_grid",
]


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-voxel displacement vectors, shape ``(nx, ny, nz, 3)``."""

    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 4 or vec.shape[-1] != 3 or min(vec.shape[:3]) < 1:
            raise ShapeError(f"field vectors must have shape (nx, ny, nz, 3), got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ParameterError("displacement field contains NaN or Inf")
        object.__setattr__(self, "vectors", vec)

    @classmethod
    def zeros(cls, dims):
        return cls(np.zeros(tuple(int(n) for n in dims) + (3,)))

    @classmethod
    def constant(cls, dims, vector):
        vec = np.broadcast_to(np.asarray(vector, dtype=float), tuple(dims) + (3,))
        return cls(vec.copy())

    @property
    def dims(self):
        return tuple(int(n) for n in self.vectors.shape[:3])

    def magnitude(self):
        return np.linalg.norm(self.vectors, axis=-1)

    def __repr__(self):
        return f"DisplacementField(dims={self.dims}, max|u|={self.magnitude().max():.4g})"


def identity_grid(dims):
    """Voxel coordinates of every grid node, shape ``dims + (3,)`` (read-only)."""
    return _identity_grid(tuple(int(n) for n in dims))


@functools.lru_cache(maxsize=16)
def _identity_grid(dims):
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    grid.flags.writeable = False
    return grid


def _interp(data, coords, grad=False):
    """Trilinear interpolation of ``data`` at voxel coordinates ``coords``.

    ``data`` has shape ``(nx, ny, nz)`` or ``(nx, ny, nz, C)`` and is extended
    by zeros beyond its faces.  Returns values of shape ``coords.shape[:-1]``
    (plus ``C``), and with ``grad=True`` also the spatial derivative of the
    interpolant with a trailing axis of length 3.  On grid planes, where the
    interpolant has a kink, the derivative is the mean of both one-sided slopes.
    """
    channels = data.shape[3:]
    grid = np.ascontiguousarray(data, dtype=np.float64).reshape(data.shape[:3] + (-1,))
    pts = np.ascontiguousarray(coords, dtype=np.float64).reshape(-1, 3)
    nc = grid.shape[3]
    out = np.empty((pts.shape[0], nc))
    if not grad:
        _kernels.interp(grid, pts, out)
        return out.reshape(coords.shape[:-1] + channels)
    g = np.empty((pts.shape[0], nc, 3))
    _kernels.interp_grad(grid, pts, out, g)
    return out.reshape(coords.shape[:-1] + channels), g.reshape(coords.shape[:-1] + channels + (3,))


def _interp_adjoint(weights, coords, dims):
    """Transpose of :func:`_interp` with respect to the grid values.

    Scatters ``weights`` (shape ``coords.shape[:-1]`` plus channels) onto the
    grid nodes with trilinear weights.
    """
    channels = weights.shape[coords.ndim - 1:]
    pts = np.ascontiguousarray(coords, dtype=np.float64).reshape(-1, 3)
    w = np.ascontiguousarray(weights, dtype=np.float64).reshape(pts.shape[0], -1)
    out = np.zeros(tuple(dims) + (w.shape[1],))
    _kernels.scatter(w, pts, out)
    return out.reshape(tuple(dims) + channels)


def sample_trilinear(vol, point):
    """Trilinearly interpolated value of ``vol`` at one voxel-space point."""
    p = np.asarray(point, dtype=float).reshape(-1)
    if p.size != 3 or not np.all(np.isfinite(p)):
        raise ParameterError(f"point must be 3 finite coordinates, got {point!r}")
    return float(_interp(vol.data.astype(np.float64), p[None, :])[0])


def _check_dims(a, b, what):
    if tuple(a) != tuple(b):
        raise ShapeError(f"{what}: dims {tuple(a)} and {tuple(b)} differ")


def warp_image(moving, field):
    """Resample ``moving`` at ``p + u(p)`` for every node ``p`` of the field grid."""
    _check_dims(moving.dims, field.dims, "warp_image")
    coords = identity_grid(field.dims) + field.vectors
    return Volume(_interp(moving.data.astype(np.float64), coords), moving.spacing, moving.origin)


def _nearest(data, coords):
    dims = data.shape
    inside = np.ones(coords.shape[:-1], dtype=bool)
    idx = []
    for a, n in enumerate(dims):
        i = np.floor(coords[..., a] + 0.5)
        inside &= (i >= 0) & (i <= n - 1)
        idx.append(np.clip(i, 0, n - 1).astype(np.intp))
    return np.where(inside, data[tuple(idx)], 0)


def warp_label(mask, field):
    """Nearest-neighbour warp of a binary mask; the result stays binary."""
    _check_dims(mask.dims, field.dims, "warp_label")
    coords = identity_grid(field.dims) + field.vectors
    return LabelMask(_nearest(mask.data, coords).astype(np.uint8), mask.spacing, mask.origin)


def jacobian_determinant(field):
    """Determinant of the Jacobian of ``p -> p + u(p)`` at every voxel.

    Central differences in the interior, one-sided differences on the faces.
    """
    if min(field.dims) < 2:
        raise ShapeError(f"jacobian needs at least 2 voxels per axis, got {field.dims}")
    u = field.vectors
    J = np.empty(field.dims + (3, 3))
    for c in range(3):
        grads = np.gradient(u[..., c], axis=(0, 1, 2))
        for a in range(3):
            J[..., c, a] = grads[a] + (1.0 if a == c else 0.0)
    return Volume(np.linalg.det(J))


def compose_fields(outer, inner):
    """Displacement of ``x -> outer-map(inner-map(x))``.

    ``result(p) = inner(p) + outer(p + inner(p))`` with ``outer`` sampled
    trilinearly per component.
    """
    _check_dims(outer.dims, inner.dims, "compose_fields")
    coords = identity_grid(inner.dims) + inner.vectors
    return DisplacementField(inner.vectors + _interp(outer.vectors, coords))


def _block_mean(arr, factor):
    """Mean over ``factor**3`` blocks; partial edge blocks use available voxels."""
    dims = arr.shape[:3]
    rest = arr.shape[3:]
    coarse = [-(-n // factor) for n in dims]
    shape = (coarse[0], factor, coarse[1], factor, coarse[2], factor) + rest
    if all(n % factor == 0 for n in dims):
        return arr.reshape(shape).mean(axis=(1, 3, 5))
    pad = [(0, c * factor - n) for c, n in zip(coarse, dims)] + [(0, 0)] * len(rest)
    total = np.pad(arr, pad).reshape(shape).sum(axis=(1, 3, 5))
    count = np.pad(np.ones(dims), pad[:3]).reshape(shape[:6]).sum(axis=(1, 3, 5))
    return total / count.reshape(count.shape + (1,) * len(rest))


def _block_mean_adjoint(coarse_grad, factor, dims):
    """Transpose of :func:`_block_mean` mapping a coarse array back to ``dims``."""
    coarse = coarse_grad.shape[:3]
    rest = coarse_grad.shape[3:]
    pad = [(0, c * factor - n) for c, n in zip(coarse, dims)]
    count = np.pad(np.ones(dims), pad).reshape(
        (coarse[0], factor, coarse[1], factor, coarse[2], factor)).sum(axis=(1, 3, 5))
    g = coarse_grad / count.reshape(count.shape + (1,) * len(rest))
    for a in range(3):
        g = np.repeat(g, factor, axis=a)
    return g[: dims[0], : dims[1], : dims[2]]


def restrict_field(field, factor):
    """Block-average the field by ``factor`` and rescale to coarse voxel units."""
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"restriction factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return DisplacementField(field.vectors.copy())
    return DisplacementField(_block_mean(field.vectors, factor) / factor)


def prolong_field(field, target_dims):
    """Trilinearly upsample the field to ``target_dims`` and rescale its vectors.

    Coarse voxel centres are aligned with fine voxel centres
    (``coarse = (fine + 0.5) / ratio - 0.5``); coordinates past the coarse
    grid are clamped to its edge.
    """
    target = tuple(int(n) for n in target_dims)
    if len(target) != 3 or any(t < s for t, s in zip(target, field.dims)):
        raise ParameterError(f"cannot prolong dims {field.dims} to {target_dims}")
    if target == field.dims:
        return DisplacementField(field.vectors.copy())
    ratio = np.asarray(target, dtype=float) / np.asarray(field.dims, dtype=float)
    axes = [
        np.clip((np.arange(t) + 0.5) / r - 0.5, 0, n - 1)
        for t, r, n in zip(target, ratio, field.dims)
    ]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return DisplacementField(_interp(field.vectors, coords) * ratio)
