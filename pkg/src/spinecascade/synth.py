"""Deterministic synthetic spine-image generator with exact landmark annotations.

Each sample renders 17 bright vertebra quadrilaterals along a smooth sinusoidal
centerline over a noisy, shaded background, and records the exact corner
coordinates plus the Cobb angles implied analytically by the quad rotations.
Used as the desk-scale stand-in for a real annotated X-ray dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import GrayImage
from .metrics import CobbAngles, cobb_from_directions
from .shapes import Shape, ShapeKind

NUM_VERTEBRAE = 17


@dataclass(frozen=True)
class SynthConfig:
    """Frozen generator parameters; acceptance thresholds assume the defaults."""

    count: int = 20
    height_range: tuple[int, int] = (620, 680)
    aspect_range: tuple[float, float] = (0.42, 0.52)
    amp_range: tuple[float, float] = (2.0, 10.0)
    freq_range: tuple[float, float] = (3.0, 7.0)
    # Second bending harmonic, relative to the primary amplitude/frequency.
    # It raises the intrinsic dimensionality of the shape family so the
    # top-Q offset eigenbasis is exercised across all of its directions.
    harmonic_amp_range: tuple[float, float] = (0.3, 0.6)
    harmonic_freq_range: tuple[float, float] = (1.6, 2.4)
    noise_sigma: float = 0.03
    blur_sigma: float = 1.1
    margin: float = 0.06
    lateral_jitter: float = 0.01  # +- fraction of width moving the whole centerline
    # Soft elliptical occluders simulating ribs/soft tissue/implants; they
    # corrupt individual landmark patches without erasing global structure.
    occluder_count_range: tuple[int, int] = (4, 8)
    occluder_size_range: tuple[float, float] = (16.0, 64.0)
    occluder_strength: float = 0.35
    occluder_spread: float = 18.0  # px std-dev of occluder centers around the spine
    # Chance that one vertebra is erased back to the background (simulating a
    # washed-out or overlapped vertebra); its landmarks stay in the annotation.
    hide_prob: float = 0.6

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        for name in (
            "height_range",
            "aspect_range",
            "amp_range",
            "freq_range",
            "harmonic_amp_range",
            "harmonic_freq_range",
        ):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"invalid {name}: ({lo}, {hi})")
        if self.noise_sigma < 0 or self.blur_sigma < 0:
            raise ValueError("noise/blur sigmas must be non-negative")
        lo, hi = self.occluder_count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid occluder_count_range: ({lo}, {hi})")
        lo, hi = self.occluder_size_range
        if lo <= 0 or hi < lo:
            raise ValueError(f"invalid occluder_size_range: ({lo}, {hi})")
        if self.occluder_strength < 0:
            raise ValueError("occluder_strength must be non-negative")
        if self.occluder_spread <= 0:
            raise ValueError("occluder_spread must be positive")
        if not 0 <= self.hide_prob <= 1:
            raise ValueError("hide_prob must lie in [0, 1]")
        if not 0 <= self.margin < 0.5:
            raise ValueError("margin must lie in [0, 0.5)")
        if not 0 <= self.lateral_jitter < 0.5:
            raise ValueError("lateral_jitter must lie in [0, 0.5)")


@dataclass(frozen=True)
class SyntheticSample:
    """One rendered spine image with exact ground truth."""

    image: GrayImage
    corners: Shape
    centers: Shape
    true_cobb: CobbAngles


def synth_generate(cfg: SynthConfig, seed: int) -> list[SyntheticSample]:
    """Generate ``cfg.count`` samples, byte-identical for a given (cfg, seed)."""
    children = np.random.SeedSequence(seed).spawn(cfg.count)
    return [_generate_one(cfg, np.random.default_rng(child)) for child in children]


def _uniform(rng: np.random.Generator, lohi: tuple[float, float]) -> float:
    lo, hi = lohi
    return lo if lo == hi else float(rng.uniform(lo, hi))


def _generate_one(cfg: SynthConfig, rng: np.random.Generator) -> SyntheticSample:
    hei = int(round(_uniform(rng, cfg.height_range)))
    wid = max(48, int(round(hei * _uniform(rng, cfg.aspect_range))))

    amp = _uniform(rng, cfg.amp_range)
    freq = _uniform(rng, cfg.freq_range)
    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    amp2 = amp * _uniform(rng, cfg.harmonic_amp_range)
    freq2 = freq * _uniform(rng, cfg.harmonic_freq_range)
    phase2 = float(rng.uniform(0.0, 2.0 * np.pi))
    lateral = wid / 2.0 + float(rng.uniform(-cfg.lateral_jitter, cfg.lateral_jitter)) * wid

    y_top = cfg.margin * hei
    y_bot = (1.0 - cfg.margin) * hei
    y_span = y_bot - y_top
    t = np.arange(NUM_VERTEBRAE) / (NUM_VERTEBRAE - 1)

    centers_x = lateral + amp * np.sin(freq * t + phase) + amp2 * np.sin(freq2 * t + phase2)
    centers_y = y_top + t * y_span
    # Quad rotation follows the centerline tangent, so the Cobb angles are analytic.
    slope = amp * freq * np.cos(freq * t + phase) + amp2 * freq2 * np.cos(freq2 * t + phase2)
    tilt = np.arctan2(slope, y_span)

    spacing = y_span / (NUM_VERTEBRAE - 1)
    v_h = spacing * (0.58 + 0.10 * t)
    width_ratio = float(rng.uniform(1.5, 1.9))
    v_w = v_h * width_ratio

    # Local upright corner offsets in (TL, TR, BL, BR) order, y growing downward.
    corners = np.empty((NUM_VERTEBRAE, 4, 2), dtype=np.float64)
    local_sign = np.array([(-1, -1), (1, -1), (-1, 1), (1, 1)], dtype=np.float64)
    for i in range(NUM_VERTEBRAE):
        local = local_sign * np.array([v_w[i] / 2.0, v_h[i] / 2.0])
        c, s = np.cos(tilt[i]), np.sin(tilt[i])
        rot = np.array([[c, -s], [s, c]])
        corners[i] = local @ rot.T + np.array([centers_x[i], centers_y[i]])

    pixels = _render(cfg, rng, hei, wid, corners, t)

    corner_shape = Shape(corners.reshape(-1, 2), ShapeKind.FULL68)
    center_shape = Shape(corners.mean(axis=1), ShapeKind.CENTERS17)
    directions = np.stack([np.cos(tilt), np.sin(tilt)], axis=1)
    return SyntheticSample(
        image=GrayImage(pixels),
        corners=corner_shape,
        centers=center_shape,
        true_cobb=cobb_from_directions(directions),
    )


def _render(
    cfg: SynthConfig,
    rng: np.random.Generator,
    hei: int,
    wid: int,
    corners: np.ndarray,
    t: np.ndarray,
) -> np.ndarray:
    yy, xx = np.mgrid[0:hei, 0:wid].astype(np.float64)

    # Low-frequency soft-tissue shading over a dark background.
    gx = float(rng.uniform(0.3, 1.2))
    gy = float(rng.uniform(0.3, 1.2))
    psi = float(rng.uniform(0.0, 2.0 * np.pi))
    img = 0.15 + 0.06 * np.sin(2.0 * np.pi * (gx * xx / wid + gy * yy / hei) + psi)
    background = img.copy()

    for i in range(NUM_VERTEBRAE):
        # Convex quad in boundary order TL -> TR -> BR -> BL.
        quad = corners[i][[0, 1, 3, 2]]
        x0 = max(int(np.floor(quad[:, 0].min())), 0)
        x1 = min(int(np.ceil(quad[:, 0].max())) + 1, wid)
        y0 = max(int(np.floor(quad[:, 1].min())), 0)
        y1 = min(int(np.ceil(quad[:, 1].max())) + 1, hei)
        if x0 >= x1 or y0 >= y1:
            continue
        px = xx[y0:y1, x0:x1]
        py = yy[y0:y1, x0:x1]
        inside = np.ones(px.shape, dtype=bool)
        for k in range(4):
            ax, ay = quad[k]
            bx, by = quad[(k + 1) % 4]
            inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0
        brightness = 0.70 + 0.08 * float(t[i])
        region = img[y0:y1, x0:x1]
        region[inside] = brightness

    if float(rng.uniform()) < cfg.hide_prob:
        # Blend one vertebra back into the untouched background so no local
        # evidence of it survives; the annotation keeps its landmarks.
        i = int(rng.integers(0, NUM_VERTEBRAE))
        cen = corners[i].mean(axis=0)
        rx = 0.80 * np.linalg.norm(corners[i][1] - corners[i][0])
        ry = 0.95 * np.linalg.norm(corners[i][2] - corners[i][0])
        u = (xx - cen[0]) / rx
        v = (yy - cen[1]) / ry
        alpha = np.clip(2.0 - (u * u + v * v), 0.0, 1.0)
        img = img * (1.0 - alpha) + background * alpha

    lo_n, hi_n = cfg.occluder_count_range
    n_occ = int(rng.integers(lo_n, hi_n + 1)) if cfg.occluder_strength > 0 else 0
    for _ in range(n_occ):
        # Center each occluder near a random vertebra so it plausibly
        # interferes with landmark patches rather than empty background.
        anchor = corners[int(rng.integers(0, NUM_VERTEBRAE))].mean(axis=0)
        cx = float(anchor[0] + rng.normal(0.0, cfg.occluder_spread))
        cy = float(anchor[1] + rng.normal(0.0, cfg.occluder_spread))
        rx = _uniform(rng, cfg.occluder_size_range) / 2.0
        ry = _uniform(rng, cfg.occluder_size_range) / 2.0
        theta = float(rng.uniform(0.0, np.pi))
        level = float(rng.uniform(-cfg.occluder_strength, cfg.occluder_strength))
        c, s = np.cos(theta), np.sin(theta)
        u = (c * (xx - cx) + s * (yy - cy)) / rx
        v = (-s * (xx - cx) + c * (yy - cy)) / ry
        img += level * np.exp(-1.5 * (u * u + v * v))

    if cfg.blur_sigma > 0:
        img = gaussian_filter(img, cfg.blur_sigma)
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0)
