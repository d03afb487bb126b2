"""Synthetic paired-modality phantoms with a known deformation.

Modality A is the undeformed anatomy.  Modality B is the same anatomy pulled
through a smooth random displacement field, with its own intensity table.
Setting ``contrast_mod_b = 0`` makes the lesion invisible in B while its
position stays fixed to the anatomy, which is the situation label transfer by
registration is meant to handle.

Anatomy: a textured body, one ellipsoidal organ containing a sparse vessel
network, and one spherical lesion inside the organ.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .exceptions import ParameterError, ShapeError
from .volume import LabelMask, Volume
from .warp import DisplacementField, identity_grid, warp_image, warp_label

__all__ = ["PhantomSpec", "PhantomPair", "generate_pair", "intensity_baseline_segment"]


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, intensities and randomness of one phantom pair.

    Positions and lengths are in voxels.  Intensities are on the normalised
    [0, 1] scale; ``*_a`` applies to modality A and ``*_b`` to modality B.
    """

    dims: tuple = (64, 64, 64)
    organ_center: tuple = (32.0, 32.0, 32.0)
    organ_semi_axes: tuple = (22.0, 18.0, 15.0)
    organ_intensity_a: float = 0.45
    organ_intensity_b: float = 0.55
    lesion_center: tuple = (33.0, 31.0, 32.0)
    lesion_radius: float = 11.0
    contrast_mod_a: float = 0.5
    contrast_mod_b: float = 0.0
    background_a: float = 0.1
    background_b: float = 0.15
    vessel_fraction: float = 0.03
    vessel_contrast_a: float = -0.2
    vessel_contrast_b: float = 0.4
    texture_amplitude: float = 0.05
    texture_scale: float = 1.5
    noise_sigma: float = 0.02
    deform_amplitude: float = 3.0
    deform_smoothness: float = 8.0
    seed: int = 0

    def validate(self):
        """Raise :class:`ParameterError` naming the first violated constraint."""
        dims = np.asarray(self.dims)
        if dims.shape != (3,) or np.any(dims < 4) or np.any(dims != np.round(dims)):
            raise ParameterError(f"dims must be three integers >= 4, got {self.dims}")
        center = np.asarray(self.organ_center, dtype=float)
        axes = np.asarray(self.organ_semi_axes, dtype=float)
        lesion = np.asarray(self.lesion_center, dtype=float)
        if center.shape != (3,) or axes.shape != (3,) or lesion.shape != (3,):
            raise ParameterError("organ_center, organ_semi_axes and lesion_center need 3 values")
        if np.any(axes <= 0) or self.lesion_radius <= 0:
            raise ParameterError("organ semi-axes and lesion radius must be positive")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.deform_amplitude < 0:
            raise ParameterError(f"deform_amplitude must be non-negative, got {self.deform_amplitude}")
        if self.deform_smoothness <= 0:
            raise ParameterError(f"deform_smoothness must be positive, got {self.deform_smoothness}")
        if self.texture_amplitude < 0 or self.texture_scale <= 0:
            raise ParameterError("texture_amplitude must be >= 0 and texture_scale > 0")
        if not 0 <= self.vessel_fraction < 0.5:
            raise ParameterError(f"vessel_fraction must lie in [0, 0.5), got {self.vessel_fraction}")
        # sphere inside ellipsoid: check the sphere surface densely
        if np.any(np.abs(lesion - center) + self.lesion_radius > axes):
            raise ParameterError("lesion containment: lesion sphere must lie inside the organ ellipsoid")
        surface = lesion + self.lesion_radius * _sphere_points(2000)
        if np.any(np.sum(((surface - center) / axes) ** 2, axis=1) > 1.0):
            raise ParameterError("lesion containment: lesion sphere must lie inside the organ ellipsoid")
        lo = center - axes - self.deform_amplitude
        hi = center + axes + self.deform_amplitude
        if np.any(lo < 0) or np.any(hi > dims - 1):
            raise ParameterError(
                "organ bounds: organ ellipsoid plus deform_amplitude must stay inside the grid"
            )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ParameterError(f"unknown phantom fields: {sorted(unknown)}")
        kwargs = {}
        for name, value in values.items():
            default = known[name].default
            if isinstance(default, tuple):
                value = tuple(type(default[0])(v) for v in value)
            elif isinstance(default, bool):
                value = bool(value)
            else:
                value = type(default)(value)
            kwargs[name] = value
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class PhantomPair:
    mod_a: Volume
    mod_b: Volume
    label_a: LabelMask
    label_b_oracle: LabelMask
    organ_b: LabelMask
    phi_true: DisplacementField
    organ_a: LabelMask


def _sphere_points(n):
    # Fibonacci lattice on the unit sphere
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def _smooth_noise(rng, dims, sigma):
    """Unit-variance Gaussian random field with correlation length ``sigma``."""
    field = ndimage.gaussian_filter(rng.standard_normal(dims), sigma, mode="wrap")
    std = field.std()
    return field / std if std > 0 else field


def _random_deformation(rng, dims, amplitude, smoothness):
    vec = np.stack(
        [ndimage.gaussian_filter(rng.standard_normal(dims), smoothness, mode="wrap") for _ in range(3)],
        axis=-1,
    )
    peak = np.linalg.norm(vec, axis=-1).max()
    if amplitude == 0 or peak == 0:
        return np.zeros(dims + (3,))
    return vec * (amplitude / peak)


def generate_pair(spec):
    """Render both modalities, their labels and the true deformation.

    Everything is drawn from ``numpy.random.default_rng(spec.seed)`` in a
    fixed order, so equal specs give bitwise-equal outputs.
    """
    spec.validate()
    dims = tuple(int(n) for n in spec.dims)
    rng = np.random.default_rng(spec.seed)
    grid = identity_grid(dims)

    texture = spec.texture_amplitude * _smooth_noise(rng, dims, spec.texture_scale)
    vessel_noise = _smooth_noise(rng, dims, 1.5)
    phi = _random_deformation(rng, dims, spec.deform_amplitude, spec.deform_smoothness)
    noise_a = rng.standard_normal(dims)
    noise_b = rng.standard_normal(dims)

    center = np.asarray(spec.organ_center, dtype=float)
    axes = np.asarray(spec.organ_semi_axes, dtype=float)
    organ = np.sum(((grid - center) / axes) ** 2, axis=-1) <= 1.0
    lesion = np.sum((grid - np.asarray(spec.lesion_center)) ** 2, axis=-1) <= spec.lesion_radius ** 2
    lesion &= organ
    vessels = np.zeros(dims, dtype=bool)
    if spec.vessel_fraction > 0:
        cut = np.quantile(vessel_noise[organ], 1.0 - spec.vessel_fraction)
        vessels = organ & (vessel_noise > cut)

    organ_a = LabelMask(organ.astype(np.uint8))
    label_a = LabelMask(lesion.astype(np.uint8))
    vessels_a = LabelMask(vessels.astype(np.uint8))
    phi_true = DisplacementField(phi)
    organ_b = warp_label(organ_a, phi_true)
    label_b = warp_label(label_a, phi_true)
    vessels_b = warp_label(vessels_a, phi_true)
    texture_b = warp_image(Volume(texture), phi_true).data

    def render(organ_m, lesion_m, vessel_m, tex, bg, organ_i, vessel_c, lesion_c, noise):
        img = np.full(dims, bg, dtype=np.float64)
        img += organ_m * (organ_i - bg) + vessel_m * vessel_c + lesion_m * lesion_c + tex
        img += spec.noise_sigma * noise
        return np.clip(img, 0.0, 1.0)

    mod_a = render(organ_a.data, label_a.data, vessels_a.data, texture, spec.background_a,
                   spec.organ_intensity_a, spec.vessel_contrast_a, spec.contrast_mod_a, noise_a)
    mod_b = render(organ_b.data, label_b.data, vessels_b.data, texture_b, spec.background_b,
                   spec.organ_intensity_b, spec.vessel_contrast_b, spec.contrast_mod_b, noise_b)
    return PhantomPair(Volume(mod_a), Volume(mod_b), label_a, label_b, organ_b, phi_true, organ_a)


def intensity_baseline_segment(vol, roi):
    """Otsu threshold inside ``roi``, keeping the smaller side of the split.

    Models a segmenter that can only use local intensity.  A constant ROI has
    no minority class and yields an empty mask.
    """
    from skimage.filters import threshold_otsu

    if vol.dims != roi.dims:
        raise ShapeError(f"volume dims {vol.dims} and roi dims {roi.dims} differ")
    inside = roi.as_bool()
    if not inside.any():
        raise ParameterError("roi is empty")
    values = vol.data[inside].astype(np.float64)
    out = np.zeros(vol.dims, dtype=np.uint8)
    if values.min() == values.max():
        return LabelMask(out, vol.spacing, vol.origin)
    thr = threshold_otsu(values)
    above = values > thr
    pick = above if above.sum() <= (~above).sum() else ~above
    out[inside] = pick
    return LabelMask(out, vol.spacing, vol.origin)
