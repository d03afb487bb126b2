"""scikit-learn style wrappers around preprocessing and registration.

The transformers take and return :class:`Volume` objects rather than 2-D
feature matrices, so they follow the estimator conventions (constructor
parameters, ``get_params``, trailing-underscore fitted state) without being
drop-in pipeline steps for tabular data.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .energy import EnergyConfig
from .solver import SolverConfig, register
from .validation import check_label, check_same_dims, check_volume
from .volume import minmax_normalize, resample_to_spacing, window_level
from .warp import warp_image, warp_label

__all__ = ["WindowLevel", "MinMaxNormalizer", "SpacingResampler", "DeformableRegistration"]


class WindowLevel(TransformerMixin, BaseEstimator):
    """Clamp-and-rescale CT windowing; stateless."""

    def __init__(self, level=50.0, window=350.0):
        self.level = level
        self.window = window

    def fit(self, X, y=None):
        check_volume(X, "X")
        self.is_fitted_ = True
        return self

    def transform(self, X):
        return window_level(check_volume(X, "X"), self.level, self.window)


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Per-volume min-max scaling to [0, 1]; stateless."""

    def fit(self, X, y=None):
        check_volume(X, "X")
        self.is_fitted_ = True
        return self

    def transform(self, X):
        return minmax_normalize(check_volume(X, "X"))


class SpacingResampler(TransformerMixin, BaseEstimator):
    """Resample volumes to a common voxel spacing.

    With ``target_spacing=None`` the spacing of the volume passed to
    :meth:`fit` is learned and applied to later inputs.
    """

    def __init__(self, target_spacing=None):
        self.target_spacing = target_spacing

    def fit(self, X, y=None):
        X = check_volume(X, "X")
        spacing = X.spacing if self.target_spacing is None else self.target_spacing
        self.target_spacing_ = tuple(float(s) for s in spacing)
        return self

    def transform(self, X):
        check_is_fitted(self, "target_spacing_")
        return resample_to_spacing(check_volume(X, "X"), self.target_spacing_)


class DeformableRegistration(BaseEstimator):
    """Bidirectional deformable registration of a moving volume onto a fixed one.

    Parameters mirror :class:`SolverConfig` and :class:`EnergyConfig` so that
    ``get_params``/``set_params`` expose every knob.

    Attributes
    ----------
    phi_fwd_, phi_bwd_ : DisplacementField
        Fields on the fixed grid (forward) and moving grid (backward).
    loss_trace_ : list of TraceRecord
    jacobian_positive_fraction_ : float
    converged_ : bool
    """

    def __init__(self, n_levels=3, iters_per_level=100, step_size=1.0, step_shrink=0.5,
                 converge_tol=1e-5, cycle_weight=0.1, smooth_sigma=8.0, w_sim=1.2,
                 w_sim_down=0.6, w_smooth=0.5, w_smooth_down=0.25, lcc_radius=1,
                 down_factor=2, seed=0):
        self.n_levels = n_levels
        self.iters_per_level = iters_per_level
        self.step_size = step_size
        self.step_shrink = step_shrink
        self.converge_tol = converge_tol
        self.cycle_weight = cycle_weight
        self.smooth_sigma = smooth_sigma
        self.w_sim = w_sim
        self.w_sim_down = w_sim_down
        self.w_smooth = w_smooth
        self.w_smooth_down = w_smooth_down
        self.lcc_radius = lcc_radius
        self.down_factor = down_factor
        self.seed = seed

    def solver_config(self):
        energy = EnergyConfig(self.w_sim, self.w_sim_down, self.w_smooth, self.w_smooth_down,
                              self.lcc_radius, self.down_factor)
        return SolverConfig(self.n_levels, self.iters_per_level, self.step_size, self.step_shrink,
                            self.converge_tol, self.cycle_weight, energy, self.seed, self.smooth_sigma)

    def fit(self, fixed, moving):
        fixed = check_volume(fixed, "fixed")
        moving = check_volume(moving, "moving")
        check_same_dims(fixed, moving, what="fixed and moving")
        result = register(fixed, moving, self.solver_config())
        self.phi_fwd_ = result.phi_fwd
        self.phi_bwd_ = result.phi_bwd
        self.loss_trace_ = result.loss_trace
        self.jacobian_positive_fraction_ = result.jacobian_positive_fraction
        self.converged_ = result.converged
        return self

    def transform(self, moving):
        """Warp a moving-frame image onto the fixed grid."""
        check_is_fitted(self, "phi_fwd_")
        return warp_image(check_volume(moving, "moving"), self.phi_fwd_)

    def propagate(self, label):
        """Carry a moving-frame mask onto the fixed grid (pseudo-label)."""
        check_is_fitted(self, "phi_fwd_")
        return warp_label(check_label(label), self.phi_fwd_)

    predict = propagate

    def mean_displacement(self):
        check_is_fitted(self, "phi_fwd_")
        return float(np.mean(self.phi_fwd_.magnitude()))
