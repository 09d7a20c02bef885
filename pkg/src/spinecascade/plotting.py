"""Raster plot output: stage-wise error curves and landmark overlays.

Plots are drawn directly into grayscale rasters and written as PGM files, so
batch pipelines can consume them without any UI toolkit.
"""

from __future__ import annotations

import numpy as np

from .imaging import GrayImage, write_pgm
from .shapes import Shape, ShapeKind

_SERIES_LEVELS = (0.0, 0.45, 0.7, 0.25)


def _put_pixel(canvas: np.ndarray, x: int, y: int, value: float) -> None:
    if 0 <= y < canvas.shape[0] and 0 <= x < canvas.shape[1]:
        canvas[y, x] = value


def draw_line(canvas: np.ndarray, p0, p1, value: float) -> None:
    """1-px line by dense sampling between two (x, y) points."""
    x0, y0 = p0
    x1, y1 = p1
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    for t in np.linspace(0.0, 1.0, n + 1):
        _put_pixel(canvas, int(round(x0 + t * (x1 - x0))), int(round(y0 + t * (y1 - y0))), value)


def draw_marker(canvas: np.ndarray, point, value: float, size: int = 2) -> None:
    """Cross marker centered on a point."""
    x, y = int(round(point[0])), int(round(point[1]))
    for d in range(-size, size + 1):
        _put_pixel(canvas, x + d, y, value)
        _put_pixel(canvas, x, y + d, value)


def error_curve_image(
    series: dict[str, list[float]], width: int = 640, height: int = 480
) -> GrayImage:
    """Stage-indexed error curves (stage 0 leftmost) on a white canvas.

    Series are drawn in distinct gray levels with square markers; axes are the
    left and bottom canvas edges with a small margin.
    """
    if not series:
        raise ValueError("no series to plot")
    canvas = np.ones((height, width), dtype=np.float64)
    margin = 40
    x0, y0 = margin, height - margin  # plot origin (bottom-left)
    x1, y1 = width - margin, margin
    draw_line(canvas, (x0, y0), (x1, y0), 0.0)
    draw_line(canvas, (x0, y0), (x0, y1), 0.0)

    max_len = max(len(v) for v in series.values())
    all_vals = np.concatenate([np.asarray(v, dtype=np.float64) for v in series.values()])
    vmax = float(all_vals.max())
    if vmax <= 0:
        vmax = 1.0

    for si, (_, values) in enumerate(sorted(series.items())):
        level = _SERIES_LEVELS[si % len(_SERIES_LEVELS)]
        pts = []
        for i, v in enumerate(values):
            px = x0 + (x1 - x0) * (i / max(max_len - 1, 1))
            py = y0 - (y0 - y1) * (v / vmax)
            pts.append((px, py))
        for a, b in zip(pts, pts[1:]):
            draw_line(canvas, a, b, level)
        for p in pts:
            draw_marker(canvas, p, level, size=3)
    return GrayImage(np.clip(canvas, 0.0, 1.0))


def overlay_image(img: GrayImage, shapes: list[tuple[Shape, float]]) -> GrayImage:
    """Landmarks drawn over an image: crosses, plus structure outlines.

    Center shapes get a polyline along the vertebra order; full corner shapes
    get one quad outline per vertebra.
    """
    canvas = img.pixels.copy()
    for shape, level in shapes:
        for point in shape.points:
            draw_marker(canvas, point, level)
        if shape.kind is ShapeKind.CENTERS17:
            for a, b in zip(shape.points, shape.points[1:]):
                draw_line(canvas, a, b, level)
        elif shape.kind is ShapeKind.FULL68:
            quads = shape.points.reshape(17, 4, 2)
            for quad in quads:
                outline = quad[[0, 1, 3, 2, 0]]
                for a, b in zip(outline, outline[1:]):
                    draw_line(canvas, a, b, level)
    return GrayImage(np.clip(canvas, 0.0, 1.0))


def save_plot(img: GrayImage, path) -> None:
    write_pgm(path, img)
