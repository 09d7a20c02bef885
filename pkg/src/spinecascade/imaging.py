"""Grayscale image handling: CLAHE, proportional resize, patch cropping, flips, PGM I/O.

All images are row-major float arrays with values in [0, 1]. Resampling is
bilinear with edge-inclusive sample placement, which is exact on affine signals;
out-of-bounds crops are zero padded.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .shapes import Shape, ShapeKind

# Within each vertebra, mirroring swaps TL<->TR and BL<->BR.
_FLIP_CORNER_ORDER = np.array([1, 0, 3, 2])


@dataclass(frozen=True)
class GrayImage:
    """Single-channel intensity raster, values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"pixels must be a non-empty 2-D array, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("pixel values must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PatchSpec:
    """Crop window size and the encoder input size it is resampled to."""

    crop_h: int
    crop_w: int
    out_h: int
    out_w: int

    def __post_init__(self):
        if min(self.crop_h, self.crop_w, self.out_h, self.out_w) <= 0:
            raise ValueError("patch dimensions must be positive")


def clahe(
    img: GrayImage,
    clip_limit: float = 2.0,
    tiles: tuple[int, int] = (8, 8),
    nbins: int = 256,
) -> GrayImage:
    """Contrast-limited adaptive histogram equalization.

    Per-tile histograms are clipped at ``clip_limit`` times the uniform bin
    count, the excess is redistributed evenly, and each pixel is mapped through
    a bilinear blend of the CDFs of the four nearest tile centers. A single
    tile reduces to global histogram equalization with clipping.
    """
    if clip_limit < 1:
        raise ValueError("clip_limit must be >= 1")
    t_rows, t_cols = tiles
    if t_rows < 1 or t_cols < 1:
        raise ValueError("tile counts must be >= 1")
    h, w = img.pixels.shape
    t_rows = min(t_rows, h)
    t_cols = min(t_cols, w)

    bins = np.minimum((img.pixels * nbins).astype(np.int64), nbins - 1)

    row_edges = np.linspace(0, h, t_rows + 1).round().astype(int)
    col_edges = np.linspace(0, w, t_cols + 1).round().astype(int)
    maps = np.empty((t_rows, t_cols, nbins), dtype=np.float64)
    for i in range(t_rows):
        for j in range(t_cols):
            tile = bins[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]]
            hist = np.bincount(tile.reshape(-1), minlength=nbins).astype(np.float64)
            n = tile.size
            limit = clip_limit * n / nbins
            if np.isfinite(limit):
                excess = np.maximum(hist - limit, 0.0).sum()
                hist = np.minimum(hist, limit) + excess / nbins
            maps[i, j] = np.cumsum(hist) / n

    # Tile-center coordinates for interpolation between tile mappings.
    cy = (row_edges[:-1] + row_edges[1:]) / 2.0
    cx = (col_edges[:-1] + col_edges[1:]) / 2.0
    ri, rw = _interp_weights(np.arange(h) + 0.5, cy)
    ci, cw = _interp_weights(np.arange(w) + 0.5, cx)

    out = np.zeros((h, w), dtype=np.float64)
    for dr in (0, 1):
        ti = np.minimum(ri + dr, t_rows - 1)
        wr = (1.0 - rw) if dr == 0 else rw
        for dc in (0, 1):
            tj = np.minimum(ci + dc, t_cols - 1)
            wc = (1.0 - cw) if dc == 0 else cw
            vals = maps[ti[:, None], tj[None, :], bins]
            out += (wr[:, None] * wc[None, :]) * vals
    return GrayImage(np.clip(out, 0.0, 1.0))


def _interp_weights(coords: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower center index and fractional weight for 1-D interpolation.

    Positions outside the span of the centers clamp to the nearest center.
    """
    if len(centers) == 1:
        return np.zeros(len(coords), dtype=int), np.zeros(len(coords))
    idx = np.clip(np.searchsorted(centers, coords) - 1, 0, len(centers) - 2)
    span = centers[idx + 1] - centers[idx]
    frac = np.clip((coords - centers[idx]) / span, 0.0, 1.0)
    return idx, frac


def resize_bilinear(img: GrayImage, out_h: int, out_w: int) -> GrayImage:
    """Separable bilinear resize with edge-inclusive sample placement.

    Output sample j along an axis reads input coordinate j*(in-1)/(out-1), so
    affine intensity ramps are reproduced exactly and a same-size resize is the
    identity.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output dimensions must be positive")
    data = _resample_rows(img.pixels, out_h)
    data = _resample_rows(data.T, out_w).T
    return GrayImage(np.clip(data, 0.0, 1.0))


def _resample_rows(data: np.ndarray, out_n: int) -> np.ndarray:
    in_n = data.shape[0]
    if out_n == in_n:
        return data.copy()
    if out_n == 1:
        coords = np.array([(in_n - 1) / 2.0])
    else:
        coords = np.linspace(0.0, in_n - 1, out_n)
    lo = np.clip(np.floor(coords).astype(int), 0, in_n - 1)
    hi = np.minimum(lo + 1, in_n - 1)
    frac = (coords - lo)[:, None]
    return data[lo] * (1.0 - frac) + data[hi] * frac


def resize_to_height(img: GrayImage, target_h: int) -> GrayImage:
    """Proportional resize to a target height, width rounded to keep aspect."""
    if target_h <= 0:
        raise ValueError("target height must be positive")
    target_w = max(1, int(round(img.width * target_h / img.height)))
    return resize_bilinear(img, target_h, target_w)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def crop_window(img: GrayImage, center: tuple[float, float], crop_h: int, crop_w: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Integer crop window centered at the rounded center, zero padded off-image.

    Returns the (crop_h, crop_w) pixel block and its (x0, y0) origin.
    """
    cx, cy = center
    x0 = _round_half_up(cx) - crop_w // 2
    y0 = _round_half_up(cy) - crop_h // 2
    out = np.zeros((crop_h, crop_w), dtype=np.float64)
    ys0, ys1 = max(y0, 0), min(y0 + crop_h, img.height)
    xs0, xs1 = max(x0, 0), min(x0 + crop_w, img.width)
    if ys1 > ys0 and xs1 > xs0:
        out[ys0 - y0 : ys1 - y0, xs0 - x0 : xs1 - x0] = img.pixels[ys0:ys1, xs0:xs1]
    return out, (x0, y0)


def crop_patch(img: GrayImage, center: tuple[float, float], spec: PatchSpec) -> GrayImage:
    """Crop a window around a landmark and resample it to the encoder input size."""
    window, _ = crop_window(img, center, spec.crop_h, spec.crop_w)
    return resize_bilinear(GrayImage(np.clip(window, 0.0, 1.0)), spec.out_h, spec.out_w)


def hflip(img: GrayImage, shape: Shape) -> tuple[GrayImage, Shape]:
    """Mirror an image/shape pair about the vertical axis.

    Every x maps to (width-1)-x. For full 68-point shapes the corner roles are
    re-paired (TL<->TR, BL<->BR) within each vertebra so the semantic order is
    preserved; vertebra order is unchanged.
    """
    if shape.kind is ShapeKind.CORNERS4:
        raise ValueError("flip augmentation operates on full samples, not lone corner sets")
    mirrored = GrayImage(np.ascontiguousarray(img.pixels[:, ::-1]))
    pts = shape.points.copy()
    pts[:, 0] = (img.width - 1) - pts[:, 0]
    if shape.kind is ShapeKind.FULL68:
        idx = (np.arange(17)[:, None] * 4 + _FLIP_CORNER_ORDER[None, :]).reshape(-1)
        pts = pts[idx]
    return mirrored, Shape(pts, shape.kind)


def read_pgm(path) -> GrayImage:
    """Read a binary (P5) portable graymap, 8- or 16-bit, mapped linearly to [0, 1]."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token.isdigit():
            raise ValueError(f"{path}: malformed PGM header")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval <= 0 or maxval > 65535:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    count = width * height
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    if data.size != count:
        raise ValueError(f"{path}: truncated pixel data")
    return GrayImage(data.reshape(height, width).astype(np.float64) / maxval)


def write_pgm(path, img: GrayImage, maxval: int = 255) -> None:
    """Write a binary (P5) portable graymap; maxval 255 or 65535."""
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    quant = np.clip(np.rint(img.pixels * maxval), 0, maxval)
    data = quant.astype(np.uint8 if maxval == 255 else ">u2")
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode()
    Path(path).write_bytes(header + data.tobytes())
