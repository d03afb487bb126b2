"""Registration objective: windowed correlation similarity plus field smoothness.

The total energy is evaluated in both directions (moving onto fixed with the
forward field, fixed onto moving with the backward field) at full resolution
and on one block-averaged level::

    total = w_sim       * (lcc(F, M o fwd) + lcc(M, F o bwd))
          + w_sim_down  * (same pair on the downsampled images and fields)
          + w_smooth    * (smooth(fwd) + smooth(bwd))
          + w_smooth_down * (smooth(fwd_d) + smooth(bwd_d))

All terms are losses (lower is better) and all weights are non-negative.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import ParameterError, ShapeError
from .warp import (
    DisplacementField,
    _block_mean,
    _block_mean_adjoint,
    _interp,
    identity_grid,
)

__all__ = [
    "EnergyConfig",
    "lcc_similarity_loss",
    "smoothness_loss",
    "total_loss",
    "total_loss_gradient",
]

# per-voxel window variance below this counts as a flat window
_FLAT_VARIANCE = 1e-12


@dataclass(frozen=True)
class EnergyConfig:
    """Weights and scales of the registration energy.

    Defaults reproduce the published magnitudes 1.2 / 0.6 / 0.5 / 0.25 with
    every term expressed as a loss, so all weights are positive.
    """

    w_sim: float = 1.2
    w_sim_down: float = 0.6
    w_smooth: float = 0.5
    w_smooth_down: float = 0.25
    lcc_radius: int = 1
    down_factor: int = 2

    def __post_init__(self):
        if int(self.lcc_radius) != self.lcc_radius or self.lcc_radius < 1:
            raise ParameterError(f"lcc_radius must be an integer >= 1, got {self.lcc_radius}")
        if int(self.down_factor) != self.down_factor or self.down_factor < 1:
            raise ParameterError(f"down_factor must be an integer >= 1, got {self.down_factor}")
        weights = (self.w_sim, self.w_sim_down, self.w_smooth, self.w_smooth_down)
        if not all(np.isfinite(w) for w in weights):
            raise ParameterError("energy weights must be finite")
        if abs(self.w_sim) + abs(self.w_smooth) <= 0:
            raise ParameterError("w_sim and w_smooth cannot both be zero")


def _box_sum(x, radius):
    """Sum over the ``(2r+1)**3`` window around each voxel, clipped at the faces.

    Operates on the first three axes; a trailing axis holds independent
    channels.  The window relation is symmetric, so this operator is its own
    transpose.
    """
    arr = np.ascontiguousarray(x, dtype=np.float64)
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[..., None]
    out = _kernels.box_sum(arr, int(radius))
    return out[..., 0] if squeeze else out


@functools.lru_cache(maxsize=16)
def _window_counts(dims, radius):
    return _box_sum(np.ones(dims), radius)


def _lcc(a, b, radius, grad=False):
    """Negative mean squared local correlation and its derivative w.r.t. ``b``."""
    n = _window_counts(a.shape, radius)
    sums = _box_sum(np.stack([a, b, a * a, b * b, a * b], axis=-1), radius)
    sa, sb, saa, sbb, sab = np.moveaxis(sums, -1, 0)
    cross = sab - sa * sb / n
    va = saa - sa * sa / n
    vb = sbb - sb * sb / n
    valid = (va > _FLAT_VARIANCE * n) & (vb > _FLAT_VARIANCE * n)
    denom = np.where(valid, va * vb, 1.0)
    cc = np.where(valid, cross * cross / denom, 0.0)
    loss = -cc.sum() / a.size
    if not grad:
        return loss
    g_ab = np.where(valid, 2.0 * cross / denom, 0.0)
    g_bb = np.where(valid, -cc / np.where(valid, vb, 1.0), 0.0)
    g_b = -g_ab * sa / n - 2.0 * g_bb * sb / n
    back = _box_sum(np.stack([g_ab, g_bb, g_b], axis=-1), radius)
    d_b = back[..., 0] * a + 2.0 * back[..., 1] * b + back[..., 2]
    return loss, -d_b / a.size


def _check_same(a, b, what):
    if tuple(a.dims) != tuple(b.dims):
        raise ShapeError(f"{what}: dims {a.dims} and {b.dims} differ")


def lcc_similarity_loss(a, b, radius=2):
    """Negative mean squared local correlation coefficient of two volumes.

    Correlations are computed in ``(2*radius+1)**3`` windows clipped to the
    grid.  Windows where either image is flat contribute zero.  The value lies
    in [-1, 0]; -1 means every window is perfectly (anti-)correlated.
    """
    _check_same(a, b, "lcc_similarity_loss")
    if int(radius) != radius or radius < 1:
        raise ParameterError(f"radius must be an integer >= 1, got {radius}")
    return float(_lcc(a.data.astype(np.float64), b.data.astype(np.float64), int(radius)))


def _smooth(u, grad=False):
    value = 0.0
    g = np.zeros_like(u) if grad else None
    for axis in range(3):
        n = u.shape[axis]
        if n < 2:
            continue
        d = np.diff(u, axis=axis)
        scale = 1.0 / d.size
        value += scale * np.sum(d * d)
        if grad:
            lead = [slice(None)] * u.ndim
            lead[axis] = slice(1, None)
            trail = [slice(None)] * u.ndim
            trail[axis] = slice(None, -1)
            g[tuple(lead)] += 2.0 * scale * d
            g[tuple(trail)] -= 2.0 * scale * d
    return (value, g) if grad else value


def smoothness_loss(field):
    """Mean squared forward-difference gradient of the displacement.

    Each directional difference is averaged over its valid positions and over
    the three components; the three directions are summed.
    """
    if min(field.dims) < 2:
        raise ShapeError(f"smoothness needs at least 2 voxels per axis, got {field.dims}")
    return float(_smooth(field.vectors))


def _warp_sim(target, source, u, radius, grad):
    """lcc(target, source warped by u), optionally with d/du."""
    coords = identity_grid(u.shape[:3]) + u
    if not grad:
        return _lcc(target, _interp(source, coords), radius)
    warped, spatial = _interp(source, coords, grad=True)
    loss, d_warped = _lcc(target, warped, radius, grad=True)
    return loss, d_warped[..., None] * spatial


def _energy(fixed, moving, u_fwd, u_bwd, cfg, grad=False):
    r = int(cfg.lcc_radius)
    f = int(cfg.down_factor)
    dims = u_fwd.shape[:3]
    fd, md = _block_mean(fixed, f), _block_mean(moving, f)
    rf, rb = _block_mean(u_fwd, f) / f, _block_mean(u_bwd, f) / f
    if min(fd.shape) < 2:
        raise ShapeError(f"grid {dims} is too small for down_factor {f}")

    parts = {}
    gf = np.zeros_like(u_fwd) if grad else None
    gb = np.zeros_like(u_bwd) if grad else None
    gdf = np.zeros_like(rf) if grad else None
    gdb = np.zeros_like(rb) if grad else None

    def add(name, weight, result, g_out):
        if grad:
            value, g = result
            if weight != 0.0:
                g_out += weight * g
        else:
            value = result
        parts[name] = parts.get(name, 0.0) + float(value)

    add("sim", cfg.w_sim, _warp_sim(fixed, moving, u_fwd, r, grad), gf)
    add("sim", cfg.w_sim, _warp_sim(moving, fixed, u_bwd, r, grad), gb)
    add("sim_down", cfg.w_sim_down, _warp_sim(fd, md, rf, r, grad), gdf)
    add("sim_down", cfg.w_sim_down, _warp_sim(md, fd, rb, r, grad), gdb)
    add("smooth", cfg.w_smooth, _smooth(u_fwd, grad), gf)
    add("smooth", cfg.w_smooth, _smooth(u_bwd, grad), gb)
    add("smooth_down", cfg.w_smooth_down, _smooth(rf, grad), gdf)
    add("smooth_down", cfg.w_smooth_down, _smooth(rb, grad), gdb)

    total = (
        cfg.w_sim * parts["sim"]
        + cfg.w_sim_down * parts["sim_down"]
        + cfg.w_smooth * parts["smooth"]
        + cfg.w_smooth_down * parts["smooth_down"]
    )
    if not grad:
        return total, parts
    gf += _block_mean_adjoint(gdf, f, dims) / f
    gb += _block_mean_adjoint(gdb, f, dims) / f
    return total, parts, gf, gb


def _check_inputs(fixed, moving, phi_fwd, phi_bwd):
    for other, what in ((moving, "moving"), (phi_fwd, "phi_fwd"), (phi_bwd, "phi_bwd")):
        if tuple(other.dims) != tuple(fixed.dims):
            raise ShapeError(f"{what} dims {other.dims} differ from fixed dims {fixed.dims}")
    if min(fixed.dims) < 2:
        raise ShapeError(f"energy needs at least 2 voxels per axis, got {fixed.dims}")


def total_loss(fixed, moving, phi_fwd, phi_bwd, cfg=None):
    """Bidirectional two-scale registration energy.

    Returns
    -------
    total : float
        Weighted sum of all terms.
    terms : dict
        Unweighted ``sim``, ``sim_down``, ``smooth`` and ``smooth_down``
        values, each already summed over both directions.
    """
    cfg = cfg or EnergyConfig()
    _check_inputs(fixed, moving, phi_fwd, phi_bwd)
    return _energy(
        fixed.data.astype(np.float64), moving.data.astype(np.float64),
        phi_fwd.vectors, phi_bwd.vectors, cfg,
    )


def total_loss_gradient(fixed, moving, phi_fwd, phi_bwd, cfg=None):
    """Analytic gradient of :func:`total_loss` w.r.t. both displacement fields."""
    cfg = cfg or EnergyConfig()
    _check_inputs(fixed, moving, phi_fwd, phi_bwd)
    _, _, gf, gb = _energy(
        fixed.data.astype(np.float64), moving.data.astype(np.float64),
        phi_fwd.vectors, phi_bwd.vectors, cfg, grad=True,
    )
    return DisplacementField(gf), DisplacementField(gb)
