"""Cross-modality deformable registration and pseudo-label propagation."""

from .energy import EnergyConfig, lcc_similarity_loss, smoothness_loss, total_loss, total_loss_gradient
from .estimator import DeformableRegistration, MinMaxNormalizer, SpacingResampler, WindowLevel
from .exceptions import (
    CrossRegError,
    FormatError,
    NumericalFailure,
    ParameterError,
    ShapeError,
)
from .metrics import (
    SoftPrediction,
    TverskyParams,
    dice_coefficient,
    dice_loss,
    focal_tversky_loss,
    jaccard,
    localization_hit,
    median_score,
    mutual_information,
    tversky_index,
)
from .phantom import PhantomPair, PhantomSpec, generate_pair, intensity_baseline_segment
from .solver import RegResult, SolverConfig, inverse_consistency_loss, register
from .volume import LabelMask, Volume, minmax_normalize, resample_to_spacing, window_level
from .warp import (
    DisplacementField,
    compose_fields,
    jacobian_determinant,
    prolong_field,
    restrict_field,
    sample_trilinear,
    warp_image,
    warp_label,
)

__version__ = "0.1.0"
