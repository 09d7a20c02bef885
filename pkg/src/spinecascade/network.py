"""Patch encoder, regression head, loss, and optimizer plumbing.

The encoder is the truncated inverted-residual architecture used by both
localization steps: a strided 1x1 stem, seven inverted-residual stages, a 1x1
projection to 64 channels, and global average pooling. PyTorch supplies the
tensor/autograd/optimizer machinery; the architecture, loss, and schedule are
defined here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

# (expansion t, output channels c, repeats n, first stride s) per stage.
TABLE_BLOCKS: tuple[tuple[int, int, int, int], ...] = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)


@dataclass(frozen=True)
class EncoderConfig:
    """Layer plan for the shared patch encoder."""

    in_h: int
    in_w: int
    stem_channels: int = 32
    stem_kernel: int = 1
    stem_stride: int = 2
    blocks: tuple[tuple[int, int, int, int], ...] = TABLE_BLOCKS
    feature_dim: int = 64
    norm: str = "batch"  # "batch" or "none"

    def __post_init__(self):
        if self.norm not in ("batch", "none"):
            raise ValueError(f"unknown norm mode {self.norm!r}")


def full_config(in_h: int, in_w: int, norm: str = "batch") -> EncoderConfig:
    """The production encoder: 48x80 patches in step 1, 48x48 in step 2."""
    return EncoderConfig(in_h=in_h, in_w=in_w, norm=norm)


def tiny_config(in_h: int = 8, in_w: int = 8, norm: str = "none") -> EncoderConfig:
    """Miniature encoder for gradient checks and fast property tests."""
    return EncoderConfig(
        in_h=in_h,
        in_w=in_w,
        stem_channels=4,
        blocks=((1, 4, 1, 1), (2, 6, 2, 2)),
        feature_dim=8,
        norm=norm,
    )


def _norm_layer(channels: int, mode: str) -> nn.Module:
    return nn.BatchNorm2d(channels, momentum=0.1) if mode == "batch" else nn.Identity()


class ConvBNReLU(nn.Sequential):
    def __init__(self, c_in, c_out, kernel, stride, norm, groups=1):
        super().__init__(
            nn.Conv2d(
                c_in, c_out, kernel, stride,
                padding=(kernel - 1) // 2, groups=groups, bias=(norm == "none"),
            ),
            _norm_layer(c_out, norm),
            nn.ReLU6(),
        )


class InvertedResidual(nn.Module):
    """1x1 expansion -> 3x3 depthwise -> 1x1 linear projection, residual when shapes match."""

    def __init__(self, c_in: int, c_out: int, expand: int, stride: int, norm: str):
        super().__init__()
        hidden = c_in * expand
        layers: list[nn.Module] = []
        if expand != 1:
            layers.append(ConvBNReLU(c_in, hidden, 1, 1, norm))
        layers.append(ConvBNReLU(hidden, hidden, 3, stride, norm, groups=hidden))
        layers.append(nn.Conv2d(hidden, c_out, 1, 1, bias=(norm == "none")))
        layers.append(_norm_layer(c_out, norm))
        self.block = nn.Sequential(*layers)
        self.use_residual = stride == 1 and c_in == c_out

    def forward(self, x):
        out = self.block(x)
        return x + out if self.use_residual else out


class PatchEncoder(nn.Module):
    """Maps a batch of single-channel patches to ``feature_dim`` feature vectors."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        layers: list[nn.Module] = [
            ConvBNReLU(1, config.stem_channels, config.stem_kernel, config.stem_stride, config.norm)
        ]
        channels = config.stem_channels
        for expand, c_out, repeats, stride in config.blocks:
            for i in range(repeats):
                layers.append(
                    InvertedResidual(channels, c_out, expand, stride if i == 0 else 1, config.norm)
                )
                channels = c_out
        layers.append(ConvBNReLU(channels, config.feature_dim, 1, 1, config.norm))
        self.features = nn.Sequential(*layers)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        if patches.ndim != 4 or patches.shape[1] != 1:
            raise ValueError(f"expected (N, 1, H, W) patches, got {tuple(patches.shape)}")
        if patches.shape[2] != self.config.in_h or patches.shape[3] != self.config.in_w:
            raise ValueError(
                f"patch size {tuple(patches.shape[2:])} does not match "
                f"configured {(self.config.in_h, self.config.in_w)}"
            )
        return self.features(patches).mean(dim=(2, 3))


class StageNet(nn.Module):
    """Shared encoder over K landmark patches plus a linear head on their concatenation."""

    def __init__(self, config: EncoderConfig, num_patches: int, out_dim: int):
        super().__init__()
        self.encoder = PatchEncoder(config)
        self.num_patches = num_patches
        self.out_dim = out_dim
        self.head = nn.Linear(config.feature_dim * num_patches, out_dim)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        """(B, K, 1, H, W) patches -> (B, out_dim) regression coefficients."""
        if patches.ndim != 5 or patches.shape[1] != self.num_patches:
            raise ValueError(
                f"expected (B, {self.num_patches}, 1, H, W) patches, got {tuple(patches.shape)}"
            )
        b = patches.shape[0]
        feats = self.encoder(patches.reshape(b * self.num_patches, *patches.shape[2:]))
        return self.head(feats.reshape(b, -1))


def head_forward(features: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine regression on concatenated per-landmark features (K, F) -> (Q,)."""
    features = np.asarray(features, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    flat = features.reshape(-1)
    if weight.shape[1] != flat.shape[0]:
        raise ValueError(
            f"feature count {flat.shape[0]} does not match head input {weight.shape[1]}"
        )
    return weight @ flat + np.asarray(bias, dtype=np.float64)


def smooth_l1(pred: np.ndarray, target: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """Smooth-L1 loss summed over coefficients, with its gradient w.r.t. ``pred``.

    Quadratic 0.5 x^2 / beta below the breakpoint, |x| - 0.5 beta above; the
    gradient magnitude never exceeds 1.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    x = pred - target
    quad = np.abs(x) < beta
    loss = float(np.sum(np.where(quad, 0.5 * x * x / beta, np.abs(x) - 0.5 * beta)))
    grad = np.where(quad, x / beta, np.sign(x))
    return loss, grad


def smooth_l1_torch(pred: torch.Tensor, target: torch.Tensor, beta: float) -> torch.Tensor:
    """Per-sample smooth-L1 summed over coefficients, averaged over the batch."""
    x = pred - target
    ax = x.abs()
    per_coeff = torch.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)
    return per_coeff.sum(dim=-1).mean()


def make_adam(params, lr: float = 5e-4) -> torch.optim.Adam:
    """Adam with the training schedule's defaults (betas 0.9/0.999, eps 1e-8)."""
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)


def decay_lr(optimizer: torch.optim.Optimizer, factor: float = 0.5) -> None:
    """Scale every parameter group's learning rate; applied after each epoch."""
    for group in optimizer.param_groups:
        group["lr"] *= factor
