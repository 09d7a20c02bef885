"""Cascaded, PCA-shape-constrained vertebral landmark localization."""

from .cascade import (
    CascadeModel,
    StageRegressor,
    TrainConfig,
    TrainingDivergedError,
    init_shape,
    predict,
    predict_stages,
    run_stage,
    stage_mses,
    train_cascade,
    train_cascade_nopca,
)
from .imaging import GrayImage, PatchSpec, clahe, crop_patch, hflip, read_pgm, resize_to_height, write_pgm
from .metrics import CobbAngles, cobb_angles, normalized_mse, smape
from .pipeline import (
    FullModel,
    FullTrainConfig,
    PreprocessConfig,
    RoI,
    extract_rois,
    full_inference,
    init_sensitivity_experiment,
    localize_corners,
    preprocess,
    train_full,
)
from .shapes import (
    NormalizedShape,
    Shape,
    ShapeKind,
    TransitionMatrix,
    build_transition_matrix,
    compute_offsets,
    covariance,
    denormalize_shape,
    eigendecompose,
    fit_transition,
    mean_shape,
    normalize_shape,
    project_offsets,
    reconstruct_offsets,
)
from .synth import SynthConfig, SyntheticSample, synth_generate

__version__ = "0.1.0"
