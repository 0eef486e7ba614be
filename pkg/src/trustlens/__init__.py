"""Trustworthy-perception validation toolkit on a synthetic 3D detector.

Attention-derived saliency with perturbation-based faithfulness testing,
parametric uncertainty losses with post-hoc calibration, and corruption
robustness scoring, all exercised end-to-end on a seeded forward-only
multi-modal detector.
"""

from .backend import active_backend, set_backend
from .calibration import (
    CalibrationDataset,
    CalibrationParams,
    build_dataset,
    d_ece,
    fit_ps,
    fit_reg_temperatures,
    fit_ts,
    mca_theta,
    mca_xyz,
    split_scenes,
)
from .faithfulness import FaithfulnessResult, PerturbationSpec, compare_methods, mask_tokens, run_curve
from .layout import TokenLayout
from .metrics import MatchResult, RobustnessTable, average_precision, dqs, match, mrra, rra
from .rng import Rng
from .saliency import (
    SaliencyMap,
    SensorContribution,
    StreamingFusion,
    fuse_last_layer,
    fuse_max,
    fuse_mean,
    select_queries,
    sensor_contribution,
    split_modalities,
)
from .synthdet import (
    DetectorConfig,
    TokenField,
    default_layout,
    generate_tokens,
    random_scene,
    run_detector,
)
from .types import AttentionStack, Box, Detection, Scene, SelectionConfig, UncertainDetection
from .uncertainty import (
    VonMisesLossParams,
    bessel_i0,
    bessel_ratio_i1_i0,
    gaussian_interval,
    log_bessel_i0,
    loss_theta,
    loss_xyz,
    vonmises_halfwidth,
)

__version__ = "0.1.0"
