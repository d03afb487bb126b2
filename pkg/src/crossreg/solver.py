"""Coarse-to-fine minimisation of the bidirectional registration energy."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .energy import EnergyConfig, _energy
from .exceptions import NumericalFailure, ParameterError, ShapeError
from .warp import (
    DisplacementField,
    _block_mean,
    _interp,
    _interp_adjoint,
    identity_grid,
    jacobian_determinant,
    prolong_field,
)

__all__ = [
    "SolverConfig",
    "RegResult",
    "TraceRecord",
    "register",
    "inverse_consistency_loss",
    "write_trace_csv",
    "TRACE_COLUMNS",
]

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("iteration", "level", "total", "sim", "sim_down", "smooth", "smooth_down", "cycle")

# relative decrease has to stay below tolerance this many accepted steps in a row
_PATIENCE = 5
_MAX_HALVINGS = 20


@dataclass(frozen=True)
class SolverConfig:
    n_levels: int = 3
    iters_per_level: int = 100
    step_size: float = 1.0
    step_shrink: float = 0.5
    converge_tol: float = 1e-5
    cycle_weight: float = 0.1
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    seed: int = 0
    smooth_sigma: float = 8.0

    def __post_init__(self):
        if int(self.n_levels) != self.n_levels or self.n_levels < 1:
            raise ParameterError(f"n_levels must be an integer >= 1, got {self.n_levels}")
        if int(self.iters_per_level) != self.iters_per_level or self.iters_per_level < 1:
            raise ParameterError(f"iters_per_level must be an integer >= 1, got {self.iters_per_level}")
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ParameterError(f"step_size must be positive, got {self.step_size}")
        if not 0 < self.step_shrink < 1:
            raise ParameterError(f"step_shrink must lie in (0, 1), got {self.step_shrink}")
        if not self.converge_tol > 0:
            raise ParameterError(f"converge_tol must be positive, got {self.converge_tol}")
        if not self.cycle_weight >= 0:
            raise ParameterError(f"cycle_weight must be non-negative, got {self.cycle_weight}")
        if not self.smooth_sigma >= 0:
            raise ParameterError(f"smooth_sigma must be non-negative, got {self.smooth_sigma}")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    level: int
    total: float
    sim: float
    sim_down: float
    smooth: float
    smooth_down: float
    cycle: float

    def as_row(self):
        return [getattr(self, name) for name in TRACE_COLUMNS]


@dataclass
class RegResult:
    """Outcome of :func:`register`.

    ``loss_trace`` holds one record per accepted step plus the starting point
    of every pyramid level; ``level`` 0 is full resolution.  Totals are only
    comparable within a level.
    """

    phi_fwd: DisplacementField
    phi_bwd: DisplacementField
    loss_trace: list
    jacobian_positive_fraction: float
    converged: bool


def _cycle(u_fwd, u_bwd, grad=False):
    """Mean squared residual of ``bwd o fwd`` over voxels whose sample stays in the grid."""
    dims = u_fwd.shape[:3]
    coords = identity_grid(dims) + u_fwd
    if grad:
        sampled, jac = _interp(u_bwd, coords, grad=True)
    else:
        sampled = _interp(u_bwd, coords)
    inside = np.ones(dims, dtype=bool)
    for a, n in enumerate(dims):
        inside &= (coords[..., a] >= 0) & (coords[..., a] <= n - 1)
    count = int(inside.sum())
    if count == 0:
        return (0.0, np.zeros_like(u_fwd), np.zeros_like(u_bwd)) if grad else 0.0
    resid = np.where(inside[..., None], u_fwd + sampled, 0.0)
    value = float(np.sum(resid * resid) / count)
    if not grad:
        return value
    r = 2.0 * resid / count
    g_fwd = r + np.einsum("...c,...ca->...a", r, jac)
    g_bwd = _interp_adjoint(r, coords, dims)
    return value, g_fwd, g_bwd


def inverse_consistency_loss(phi_fwd, phi_bwd):
    """Mean squared magnitude of ``compose_fields(phi_bwd, phi_fwd)``.

    Averaged over voxels ``p`` whose composed sample ``p + phi_fwd(p)`` lies
    inside the grid; zero exactly where the round trip returns to ``p``.
    """
    if phi_fwd.dims != phi_bwd.dims:
        raise ShapeError(f"inverse_consistency_loss: dims {phi_fwd.dims} and {phi_bwd.dims} differ")
    return _cycle(phi_fwd.vectors, phi_bwd.vectors)


class _Objective:
    """Energy plus weighted cycle term on one pyramid level."""

    def __init__(self, fixed, moving, cfg):
        self.fixed = fixed
        self.moving = moving
        self.cfg = cfg

    def __call__(self, u_fwd, u_bwd, grad=False):
        ecfg, w = self.cfg.energy, self.cfg.cycle_weight
        if grad:
            total, parts, gf, gb = _energy(self.fixed, self.moving, u_fwd, u_bwd, ecfg, grad=True)
            cyc, cf, cb = _cycle(u_fwd, u_bwd, grad=True)
            gf += w * cf
            gb += w * cb
        else:
            total, parts = _energy(self.fixed, self.moving, u_fwd, u_bwd, ecfg)
            cyc = _cycle(u_fwd, u_bwd)
        parts = dict(parts, cycle=cyc)
        total = total + w * cyc
        if grad:
            return total, parts, gf, gb
        return total, parts


def _precondition(g, sigma):
    """Gaussian-smoothed gradient (a positive definite preconditioner)."""
    if sigma == 0:
        return g
    return ndimage.gaussian_filter(g, sigma=(sigma, sigma, sigma, 0), mode="constant")


def _pyramid(fixed, moving, cfg):
    levels = [(fixed, moving)]
    min_dim = 2 * cfg.energy.down_factor
    while len(levels) < cfg.n_levels:
        f, m = levels[-1]
        if min(-(-n // 2) for n in f.shape) < min_dim:
            logger.warning("grid %s too small for %d levels; using %d", fixed.shape, cfg.n_levels, len(levels))
            break
        levels.append((_block_mean(f, 2), _block_mean(m, 2)))
    return levels


def register(fixed, moving, cfg=None):
    """Estimate forward and backward displacement fields between two volumes.

    The forward field maps fixed-grid points into the moving image
    (``moving(p + fwd(p))`` aligns with ``fixed``); the backward field does
    the reverse.  Each pyramid level runs normalised gradient descent with a
    backtracking line search, so every accepted step lowers the objective.

    Raises
    ------
    ShapeError
        If the volumes do not share dims or are too small for the energy.
    NumericalFailure
        If the objective becomes non-finite; the exception carries the trace
        and the last accepted fields.
    """
    cfg = cfg or SolverConfig()
    if fixed.dims != moving.dims:
        raise ShapeError(f"register: fixed dims {fixed.dims} and moving dims {moving.dims} differ")
    if min(fixed.dims) < 2 * cfg.energy.down_factor:
        raise ShapeError(f"grid {fixed.dims} too small for down_factor {cfg.energy.down_factor}")

    levels = _pyramid(fixed.data.astype(np.float64), moving.data.astype(np.float64), cfg)
    coarse_dims = levels[-1][0].shape
    u_fwd = np.zeros(coarse_dims + (3,))
    u_bwd = np.zeros(coarse_dims + (3,))
    trace = []
    iteration = 0
    converged = False

    def fail(msg):
        raise NumericalFailure(msg, trace, DisplacementField(u_fwd), DisplacementField(u_bwd))

    for level in range(len(levels) - 1, -1, -1):
        f_img, m_img = levels[level]
        if u_fwd.shape[:3] != f_img.shape:
            u_fwd = prolong_field(DisplacementField(u_fwd), f_img.shape).vectors
            u_bwd = prolong_field(DisplacementField(u_bwd), f_img.shape).vectors
        objective = _Objective(f_img, m_img, cfg)
        sigma = cfg.smooth_sigma
        value, parts, g_fwd, g_bwd = objective(u_fwd, u_bwd, grad=True)
        if not np.isfinite(value):
            fail(f"non-finite objective at the start of level {level}")
        trace.append(TraceRecord(iteration, level, value, **parts))

        step = cfg.step_size
        quiet = 0
        converged = False
        for _ in range(cfg.iters_per_level):
            d_fwd, d_bwd = _precondition(g_fwd, sigma), _precondition(g_bwd, sigma)
            norm = max(np.linalg.norm(d_fwd, axis=-1).max(), np.linalg.norm(d_bwd, axis=-1).max())
            if not np.isfinite(norm):
                fail(f"non-finite gradient at iteration {iteration}")
            if norm == 0.0:
                converged = True
                break
            d_fwd, d_bwd = -d_fwd / norm, -d_bwd / norm
            accepted = False
            for _ in range(_MAX_HALVINGS + 1):
                t_fwd = u_fwd + step * d_fwd
                t_bwd = u_bwd + step * d_bwd
                t_value, t_parts = objective(t_fwd, t_bwd)
                if np.isfinite(t_value) and t_value < value:
                    accepted = True
                    break
                step *= cfg.step_shrink
            if not accepted:
                if not np.isfinite(t_value):
                    fail(f"non-finite objective at iteration {iteration}")
                converged = True
                break
            iteration += 1
            rel = (value - t_value) / max(abs(value), np.finfo(float).tiny)
            u_fwd, u_bwd = t_fwd, t_bwd
            value, g_parts, g_fwd, g_bwd = objective(u_fwd, u_bwd, grad=True)
            trace.append(TraceRecord(iteration, level, value, **g_parts))
            quiet = quiet + 1 if rel < cfg.converge_tol else 0
            if quiet >= _PATIENCE:
                converged = True
                break
            # allow the step to grow back after successful iterations
            logger.debug("accepted step %.4g", step)
            step = min(cfg.step_size, step / cfg.step_shrink)
        logger.info("level %d: %d records, objective %.6g", level, len(trace), value)

    phi_fwd = DisplacementField(u_fwd)
    phi_bwd = DisplacementField(u_bwd)
    if min(phi_fwd.dims) >= 2:
        positive = float(np.mean(jacobian_determinant(phi_fwd).data > 0))
    else:
        positive = 1.0
    return RegResult(phi_fwd, phi_bwd, trace, positive, converged)


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in trace:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in rec.as_row()])
