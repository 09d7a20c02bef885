"""Two-step orchestration: center cascade on the working image, corner cascade per RoI.

Raw images are CLAHE-enhanced and resized to a fixed working height. The center
cascade places 17 vertebra centers; an 80x96 RoI is cut around each center and
the corner cascade localizes 4 corners inside it. Corner coordinates are mapped
back through the RoI origin and the preprocessing scale to the raw frame, so
every input yields exactly 68 points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cascade import (
    CascadeModel,
    Sample,
    TrainConfig,
    init_shape,
    predict,
    predict_stages,
    stage_mses,
    train_cascade,
)
from .imaging import GrayImage, PatchSpec, clahe, crop_window, hflip, resize_to_height
from .metrics import normalized_mse
from .shapes import NormalizedShape, Shape, ShapeKind

ROI_H, ROI_W = 80, 96
CENTER_PATCH = PatchSpec(crop_h=80, crop_w=192, out_h=48, out_w=80)
CORNER_PATCH = PatchSpec(crop_h=48, crop_w=48, out_h=48, out_w=48)


@dataclass(frozen=True)
class PreprocessConfig:
    clahe_clip: float = 2.0
    clahe_tiles: tuple[int, int] = (8, 8)
    resize_height: int = 680


@dataclass(frozen=True)
class RoI:
    """A fixed-size window of the working image around one predicted center."""

    origin: tuple[int, int]  # (x0, y0) in working-frame pixels
    image: GrayImage

    def __post_init__(self):
        if (self.image.height, self.image.width) != (ROI_H, ROI_W):
            raise ValueError(
                f"RoI image must be {ROI_H}x{ROI_W}, got "
                f"{self.image.height}x{self.image.width}"
            )


@dataclass
class FullModel:
    """Both trained cascades plus the preprocessing that feeds them."""

    center_model: CascadeModel
    corner_model: CascadeModel
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    seed: int = 0
    history: dict = field(default_factory=dict)  # diagnostics, not serialized


@dataclass
class FullTrainConfig:
    """Settings for training both steps."""

    train: TrainConfig = field(default_factory=TrainConfig)
    n_stages: int = 3
    q_centers: int = 8
    q_corners: int = 5
    use_pca: bool = True
    flip_augment: bool = True
    roi_jitter: float = 8.0  # uniform +-px jitter of training RoI centers
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)


def preprocess(raw: GrayImage, cfg: PreprocessConfig) -> tuple[GrayImage, tuple[float, float]]:
    """CLAHE then proportional resize; returns scale mapping raw -> working coords."""
    enhanced = clahe(raw, cfg.clahe_clip, cfg.clahe_tiles)
    working = resize_to_height(enhanced, cfg.resize_height)
    return working, (working.width / raw.width, working.height / raw.height)


def extract_rois(working: GrayImage, centers: Shape) -> list[RoI]:
    """One zero-padded 80x96 RoI per predicted center, in vertebra order."""
    if centers.kind is not ShapeKind.CENTERS17:
        raise ValueError("extract_rois requires a 17-center shape")
    rois = []
    for x, y in centers.points:
        window, origin = crop_window(working, (x, y), ROI_H, ROI_W)
        rois.append(RoI(origin=origin, image=GrayImage(window)))
    return rois


def localize_corners(roi: RoI, corner_model: CascadeModel) -> Shape:
    """Run the corner cascade inside a RoI; corners returned in working-frame coords."""
    corners = predict(roi.image, corner_model)
    return Shape(corners.points + np.array(roi.origin, dtype=np.float64), ShapeKind.CORNERS4)


@dataclass
class PipelineResult:
    working: GrayImage
    scale: tuple[float, float]
    center_stages: list[Shape]  # S^0 .. S^N in working frame
    corners_working: Shape  # Full68 in working frame
    corners_raw: Shape  # Full68 in raw frame


def run_pipeline(raw: GrayImage, model: FullModel, center_init: Shape | None = None) -> PipelineResult:
    """Full two-step inference with intermediate results exposed."""
    working, scale = preprocess(raw, model.preprocess)
    center_stages = predict_stages(working, model.center_model, init=center_init)
    rois = extract_rois(working, center_stages[-1])
    corner_pts = np.concatenate(
        [localize_corners(roi, model.corner_model).points for roi in rois]
    )
    corners_working = Shape(corner_pts, ShapeKind.FULL68)
    corners_raw = Shape(corner_pts / np.array(scale), ShapeKind.FULL68)
    return PipelineResult(
        working=working,
        scale=scale,
        center_stages=center_stages,
        corners_working=corners_working,
        corners_raw=corners_raw,
    )


def full_inference(raw: GrayImage, model: FullModel) -> Shape:
    """68 corner points in raw-frame coordinates; cardinality holds by construction."""
    return run_pipeline(raw, model).corners_raw


def centers_from_corners(corners: Shape) -> Shape:
    """Vertebra centers as the mean of each vertebra's four corners."""
    if corners.kind is not ShapeKind.FULL68:
        raise ValueError("expected a 68-point corner shape")
    return Shape(corners.points.reshape(17, 4, 2).mean(axis=1), ShapeKind.CENTERS17)


def _working_samples(
    samples: list[tuple[GrayImage, Shape]], cfg: PreprocessConfig
) -> list[tuple[GrayImage, Shape]]:
    out = []
    for raw, corners in samples:
        working, scale = preprocess(raw, cfg)
        out.append((working, Shape(corners.points * np.array(scale), ShapeKind.FULL68)))
    return out


def _corner_roi_samples(
    working_samples: list[tuple[GrayImage, Shape]],
    jitter: float,
    rng: np.random.Generator | None,
) -> list[Sample]:
    out: list[Sample] = []
    for working, corners in working_samples:
        centers = centers_from_corners(corners)
        grouped = corners.points.reshape(17, 4, 2)
        for v in range(17):
            center = centers.points[v]
            if rng is not None and jitter > 0:
                center = center + rng.uniform(-jitter, jitter, size=2)
            window, origin = crop_window(working, tuple(center), ROI_H, ROI_W)
            local = grouped[v] - np.array(origin, dtype=np.float64)
            out.append((GrayImage(window), Shape(local, ShapeKind.CORNERS4)))
    return out


def train_full(
    train_samples: list[tuple[GrayImage, Shape]],
    val_samples: list[tuple[GrayImage, Shape]],
    cfg: FullTrainConfig,
) -> FullModel:
    """Train both steps separately on raw images with 68-point ground truth.

    Step 1 trains on the preprocessed working images against the corner-derived
    centers; step 2 trains on RoIs cut at the ground-truth centers (with
    optional jitter) against the corners in RoI coordinates. Flip-augmented
    samples participate in mean shape, transition matrices, and optimization
    alike.
    """
    if not train_samples:
        raise ValueError("training requires at least one sample")
    working = _working_samples(train_samples, cfg.preprocess)
    if cfg.flip_augment:
        working = working + [hflip(f, s) for f, s in working]

    center_samples = [(f, centers_from_corners(s)) for f, s in working]
    center_model = train_cascade(
        center_samples,
        n_stages=cfg.n_stages,
        q=cfg.q_centers,
        cfg=cfg.train,
        patch_spec=CENTER_PATCH,
        use_pca=cfg.use_pca,
        geometry={"frame": "working", "resize_height": cfg.preprocess.resize_height},
    )

    rng = np.random.default_rng(cfg.train.seed + 77)
    corner_samples = _corner_roi_samples(working, cfg.roi_jitter, rng)
    corner_model = train_cascade(
        corner_samples,
        n_stages=cfg.n_stages,
        q=cfg.q_corners,
        cfg=cfg.train,
        patch_spec=CORNER_PATCH,
        use_pca=cfg.use_pca,
        geometry={"frame": "roi", "roi_h": ROI_H, "roi_w": ROI_W},
    )

    model = FullModel(
        center_model=center_model,
        corner_model=corner_model,
        preprocess=cfg.preprocess,
        seed=cfg.train.seed,
    )
    if val_samples:
        val_working = _working_samples(val_samples, cfg.preprocess)
        val_centers = [(f, centers_from_corners(s)) for f, s in val_working]
        val_corners = _corner_roi_samples(val_working, jitter=0.0, rng=None)
        model.history = {
            "center_val_stage_mse": stage_mses(center_model, val_centers),
            "corner_val_stage_mse": stage_mses(corner_model, val_corners),
            "center_train": center_model.history,
            "corner_train": corner_model.history,
        }
    return model


def init_sensitivity_experiment(
    model: FullModel,
    samples: list[tuple[GrayImage, Shape]],
    sigmas: list[float],
    draws: int = 10,
    seed: int = 0,
) -> list[dict]:
    """Perturb the normalized step-1 initialization and measure the damage.

    For each sigma, Gaussian noise of that standard deviation is added to the
    normalized initial center coordinates before inference. Reports the mean
    initial center MSE and final corner MSE over all samples and draws.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for sigma in sigmas:
        initial, final = [], []
        n_draws = 1 if sigma == 0 else draws
        for _ in range(n_draws):
            for raw, gt_corners in samples:
                working, scale = preprocess(raw, model.preprocess)
                mean = model.center_model.mean
                noisy = NormalizedShape(
                    mean.points + rng.normal(0.0, sigma, size=mean.points.shape)
                    if sigma > 0
                    else mean.points,
                    mean.kind,
                )
                init = init_shape(noisy, working.width, working.height)
                result = run_pipeline(raw, model, center_init=init)
                gt_centers_working = Shape(
                    centers_from_corners(gt_corners).points * np.array(scale),
                    ShapeKind.CENTERS17,
                )
                initial.append(
                    normalized_mse(init, gt_centers_working, working.width, working.height)
                )
                final.append(
                    normalized_mse(result.corners_raw, gt_corners, raw.width, raw.height)
                )
        rows.append(
            {
                "sigma": float(sigma),
                "initial_mse": float(np.mean(initial)),
                "final_mse": float(np.mean(final)),
            }
        )
    return rows
