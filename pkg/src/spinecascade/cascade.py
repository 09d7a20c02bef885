"""Stage-wise training and inference for one landmark cascade.

A cascade starts every frame at the de-normalized mean shape and refines it
through trained stages. Each stage crops a patch at every current landmark,
encodes the patches, regresses offset coefficients, and adds the reconstructed
coordinate offset to the shape. Training re-fits the offset PCA per stage, then
optimizes that stage's network before updating the training shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .imaging import GrayImage, PatchSpec, crop_patch
from .metrics import normalized_mse
from .network import (
    EncoderConfig,
    StageNet,
    decay_lr,
    full_config,
    make_adam,
    smooth_l1_torch,
)
from .shapes import (
    NormalizedShape,
    Shape,
    TransitionMatrix,
    compute_offsets,
    denormalize_shape,
    fit_transition,
    mean_shape,
    normalize_shape,
)

Sample = tuple[GrayImage, Shape]


class TrainingDivergedError(RuntimeError):
    """The training loss became NaN/Inf."""


@dataclass
class TrainConfig:
    """Optimization schedule shared by both localization steps."""

    epochs: int = 8
    batch_size: int = 2
    lr: float = 5e-4
    lr_decay: float = 0.5
    beta: float = 0.001
    seed: int = 0
    norm: str = "batch"
    encoder: EncoderConfig | None = None  # override for tiny test encoders


@dataclass
class StageRegressor:
    """One stage: patch network plus the transition matrix it regresses into.

    ``transition`` is None for the no-PCA ablation, where the head emits raw
    coordinate offsets directly.
    """

    net: StageNet
    transition: TransitionMatrix | None
    patch_spec: PatchSpec

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        if self.transition is None:
            return coeffs
        return self.transition.rows.T @ coeffs


@dataclass
class CascadeModel:
    """Mean shape plus trained stages for one landmark kind."""

    mean: NormalizedShape
    stages: list[StageRegressor]
    geometry: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)  # diagnostics, not serialized

    @property
    def kind(self):
        return self.mean.kind


def init_shape(mean: NormalizedShape, wid: float, hei: float) -> Shape:
    """Starting shape for a frame: the mean shape scaled to the frame size."""
    return denormalize_shape(mean, wid, hei)


def crop_patches(frame: GrayImage, shape: Shape, spec: PatchSpec) -> np.ndarray:
    """Patches at every landmark of a shape, stacked as (K, 1, out_h, out_w)."""
    out = np.empty((shape.num_points, 1, spec.out_h, spec.out_w), dtype=np.float32)
    for i, (x, y) in enumerate(shape.points):
        out[i, 0] = crop_patch(frame, (x, y), spec).pixels
    return out


def _stage_coeffs(net: StageNet, patches: torch.Tensor) -> np.ndarray:
    net.eval()
    with torch.no_grad():
        return net(patches).numpy().astype(np.float64)


def run_stage(frame: GrayImage, prev: Shape, stage: StageRegressor) -> Shape:
    """One cascade update: prev + W^T R(prev)."""
    expected = stage.net.num_patches
    if prev.num_points != expected:
        raise ValueError(f"stage expects {expected} landmarks, got {prev.num_points}")
    patches = torch.from_numpy(crop_patches(frame, prev, stage.patch_spec))
    coeffs = _stage_coeffs(stage.net, patches.unsqueeze(0))[0]
    return Shape.from_flat(prev.flatten() + stage.reconstruct(coeffs), prev.kind)


def predict_stages(frame: GrayImage, model: CascadeModel, init: Shape | None = None) -> list[Shape]:
    """All intermediate shapes S^0 .. S^N for one frame."""
    if model.mean is None:
        raise RuntimeError("model has no mean shape")
    current = init if init is not None else init_shape(model.mean, frame.width, frame.height)
    shapes = [current]
    for stage in model.stages:
        current = run_stage(frame, current, stage)
        shapes.append(current)
    return shapes


def predict(frame: GrayImage, model: CascadeModel, init: Shape | None = None) -> Shape:
    """Final shape after folding every stage over the initial shape."""
    return predict_stages(frame, model, init)[-1]


def _batched_coeffs(net: StageNet, patches: torch.Tensor, chunk: int = 16) -> np.ndarray:
    parts = [_stage_coeffs(net, patches[i : i + chunk]) for i in range(0, len(patches), chunk)]
    return np.concatenate(parts, axis=0)


def _mean_mse(shapes: list[Shape], gt: list[Shape], frames: list[GrayImage]) -> float:
    return float(
        np.mean(
            [normalized_mse(s, g, f.width, f.height) for s, g, f in zip(shapes, gt, frames)]
        )
    )


def train_cascade(
    samples: list[Sample],
    n_stages: int,
    q: int,
    cfg: TrainConfig,
    patch_spec: PatchSpec,
    use_pca: bool = True,
    geometry: dict | None = None,
) -> CascadeModel:
    """Train a cascade on (frame, ground-truth shape) pairs.

    Per stage: offsets from the current shapes define the regression target
    (projected through a freshly fitted transition matrix when ``use_pca``),
    the stage network is optimized for ``cfg.epochs`` epochs, and every
    training shape is then advanced by the trained stage before the next one
    is fitted.
    """
    if not samples:
        raise ValueError("training requires at least one sample")
    kind = samples[0][1].kind
    k = kind.num_points
    p = 2 * k
    if use_pca and not 1 <= q < p:
        raise ValueError(f"require 1 <= q < {p}, got q={q}")

    frames = [f for f, _ in samples]
    gt = [s for _, s in samples]
    if any(s.kind is not kind for s in gt):
        raise ValueError("all ground-truth shapes must share one kind")

    norm_gt = [normalize_shape(s, f.width, f.height) for f, s in samples]
    mean = mean_shape(norm_gt)
    current = [init_shape(mean, f.width, f.height) for f in frames]

    model = CascadeModel(mean=mean, stages=[], geometry=dict(geometry or {}))
    if n_stages == 0:
        return model

    if cfg.encoder is not None:
        enc_cfg = replace(cfg.encoder, in_h=patch_spec.out_h, in_w=patch_spec.out_w)
    else:
        enc_cfg = full_config(patch_spec.out_h, patch_spec.out_w, norm=cfg.norm)
    rng = np.random.default_rng(cfg.seed)
    h = len(samples)

    for stage_idx in range(n_stages):
        offsets = compute_offsets(gt, current)  # (P, H), pixel frame
        if use_pca:
            transition: TransitionMatrix | None = fit_transition(offsets, q)
            targets = transition.rows @ offsets  # (Q, H)
        else:
            transition = None
            targets = offsets

        torch.manual_seed(cfg.seed * 1009 + stage_idx)
        net = StageNet(enc_cfg, num_patches=k, out_dim=targets.shape[0])

        patch_stack = torch.from_numpy(
            np.stack([crop_patches(f, s, patch_spec) for f, s in zip(frames, current)])
        )
        target_t = torch.from_numpy(targets.T.astype(np.float32))

        optimizer = make_adam(net.parameters(), lr=cfg.lr)
        net.train()
        for _ in range(cfg.epochs):
            order = rng.permutation(h)
            for start in range(0, h, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                loss = smooth_l1_torch(net(patch_stack[idx]), target_t[idx], cfg.beta)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss in stage {stage_idx + 1}"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            decay_lr(optimizer, cfg.lr_decay)

        stage = StageRegressor(net=net, transition=transition, patch_spec=patch_spec)
        coeffs = _batched_coeffs(net, patch_stack)
        current = [
            Shape.from_flat(s.flatten() + stage.reconstruct(c), kind)
            for s, c in zip(current, coeffs)
        ]
        model.stages.append(stage)
        model.history.append(
            {
                "stage": stage_idx + 1,
                "train_mse": _mean_mse(current, gt, frames),
                "mean_offset_norm": float(
                    np.mean(np.linalg.norm(compute_offsets(gt, current), axis=0))
                ),
            }
        )
    return model


def train_cascade_nopca(
    samples: list[Sample],
    n_stages: int,
    cfg: TrainConfig,
    patch_spec: PatchSpec,
    geometry: dict | None = None,
) -> CascadeModel:
    """Ablation variant regressing raw coordinate offsets (no PCA constraint)."""
    return train_cascade(
        samples, n_stages, q=0, cfg=cfg, patch_spec=patch_spec, use_pca=False,
        geometry=geometry,
    )


def stage_mses(model: CascadeModel, samples: list[Sample]) -> list[float]:
    """Mean normalized MSE of S^0 .. S^N over a sample set."""
    frames = [f for f, _ in samples]
    gt = [s for _, s in samples]
    per_stage = [predict_stages(f, model) for f in frames]
    return [
        _mean_mse([stages[i] for stages in per_stage], gt, frames)
        for i in range(len(model.stages) + 1)
    ]
