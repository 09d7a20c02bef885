"""Evaluation metrics: size-normalized landmark MSE, Cobb angles, and SMAPE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shapes import Shape, normalize_shape


class DegenerateGeometryError(ValueError):
    """A vertebra's corners coincide, leaving its orientation undefined."""


@dataclass(frozen=True)
class CobbAngles:
    """Proximal-thoracic, main-thoracic, and thoracolumbar angles in degrees."""

    pt: float
    mt: float
    tl: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.pt, self.mt, self.tl)


def normalized_mse(pred: Shape, gt: Shape, wid: float, hei: float) -> float:
    """Mean squared distance between normalized landmark positions.

    Both shapes are normalized by the image size; the squared 2-D distances are
    summed over the landmarks and divided by the landmark count (note: not by
    the coordinate count, which would halve the value).
    """
    if pred.kind is not gt.kind:
        raise ValueError(f"kind mismatch: {pred.kind} vs {gt.kind}")
    p = normalize_shape(pred, wid, hei).points
    g = normalize_shape(gt, wid, hei).points
    return float(np.sum((p - g) ** 2) / pred.num_points)


def vertebra_direction_vectors(landmarks: Shape) -> np.ndarray:
    """Left-to-right midline direction of each vertebra, shape (17, 2).

    The vector runs from the midpoint of the left edge (mean of TL, BL) to the
    midpoint of the right edge (mean of TR, BR).
    """
    pts = landmarks.points.reshape(17, 4, 2)
    left_mid = (pts[:, 0] + pts[:, 2]) / 2.0
    right_mid = (pts[:, 1] + pts[:, 3]) / 2.0
    vecs = right_mid - left_mid
    norms = np.linalg.norm(vecs, axis=1)
    if np.any(norms < 1e-12):
        bad = int(np.argmin(norms))
        raise DegenerateGeometryError(f"vertebra {bad} has coincident corners")
    return vecs


def cobb_from_directions(vecs: np.ndarray) -> CobbAngles:
    """Cobb angles from per-vertebra direction vectors, top of spine first.

    MT is the maximum pairwise angle between any two vertebra directions,
    attained by vertebrae (p, q) with p above q. PT is the maximum angle
    between p and any vertebra at or above it; TL the maximum between q and
    any vertebra at or below it. Angles are between direction vectors, via
    the arccosine of their normalized dot product.
    """
    vecs = np.asarray(vecs, dtype=np.float64)
    unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    ang = np.degrees(np.arccos(cos))
    n = len(vecs)
    iu = np.triu_indices(n, k=1)
    flat_idx = int(np.argmax(ang[iu]))
    p, q = int(iu[0][flat_idx]), int(iu[1][flat_idx])
    mt = float(ang[p, q])
    pt = float(ang[: p + 1, p].max())
    tl = float(ang[q, q:].max())
    return CobbAngles(pt=pt, mt=mt, tl=tl)


def cobb_angles(landmarks: Shape) -> CobbAngles:
    """Cobb angles of a 68-point landmark set in (vertebra, TL, TR, BL, BR) order."""
    return cobb_from_directions(vertebra_direction_vectors(landmarks))


def smape(pred: list[CobbAngles], gt: list[CobbAngles]) -> float:
    """Symmetric mean absolute percentage error over per-image Cobb angle triples.

    An image whose six angles are all zero contributes 0 to the mean.
    """
    if not pred:
        raise ValueError("smape requires at least one image")
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} pred vs {len(gt)} gt")
    total = 0.0
    for a, b in zip(pred, gt):
        av = np.array(a.as_tuple())
        bv = np.array(b.as_tuple())
        denom = float(np.sum(av + bv))
        if denom != 0.0:
            total += float(np.sum(np.abs(av - bv))) / denom
    return 100.0 * total / len(pred)
