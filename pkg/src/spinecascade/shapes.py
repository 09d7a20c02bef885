"""Landmark shapes, coordinate normalization, and the PCA offset-constraint machinery.

A shape is an ordered list of 2-D landmarks in pixel coordinates. Offsets between
a current shape and its ground truth are flattened as (x1, y1, ..., xK, yK) and
constrained to the span of the leading eigenvectors of their covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ShapeKind(Enum):
    """Landmark layout of a shape; the value is the point count."""

    CENTERS17 = 17
    CORNERS4 = 4
    FULL68 = 68

    @property
    def num_points(self) -> int:
        return self.value


def _as_points(points, kind: ShapeKind) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"points must be (K, 2), got {arr.shape}")
    if arr.shape[0] != kind.num_points:
        raise ValueError(
            f"{kind.name} requires {kind.num_points} points, got {arr.shape[0]}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Shape:
    """Ordered 2-D landmarks in pixel coordinates."""

    points: np.ndarray
    kind: ShapeKind

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points, self.kind))

    @property
    def num_points(self) -> int:
        return self.kind.num_points

    def flatten(self) -> np.ndarray:
        """Flattened coordinate vector (x1, y1, ..., xK, yK), length P = 2K."""
        return self.points.reshape(-1).copy()

    @classmethod
    def from_flat(cls, vec, kind: ShapeKind) -> "Shape":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (2 * kind.num_points,):
            raise ValueError(f"expected {2 * kind.num_points} values, got {vec.shape}")
        return cls(vec.reshape(-1, 2), kind)


@dataclass(frozen=True)
class NormalizedShape:
    """Shape divided coordinate-wise by image width/height; unitless."""

    points: np.ndarray
    kind: ShapeKind

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points, self.kind))

    def flatten(self) -> np.ndarray:
        return self.points.reshape(-1).copy()

    @classmethod
    def from_flat(cls, vec, kind: ShapeKind) -> "NormalizedShape":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (2 * kind.num_points,):
            raise ValueError(f"expected {2 * kind.num_points} values, got {vec.shape}")
        return cls(vec.reshape(-1, 2), kind)


def _check_dims(wid: float, hei: float) -> None:
    if wid <= 0 or hei <= 0:
        raise ValueError(f"image dimensions must be positive, got {wid}x{hei}")


def normalize_shape(shape: Shape, wid: float, hei: float) -> NormalizedShape:
    """Divide x coordinates by ``wid`` and y coordinates by ``hei``."""
    _check_dims(wid, hei)
    return NormalizedShape(shape.points / np.array([wid, hei]), shape.kind)


def denormalize_shape(norm: NormalizedShape, wid: float, hei: float) -> Shape:
    """Exact inverse of :func:`normalize_shape` for the same dimensions."""
    _check_dims(wid, hei)
    return Shape(norm.points * np.array([wid, hei]), norm.kind)


def mean_shape(norm_shapes: list[NormalizedShape]) -> NormalizedShape:
    """Coordinate-wise arithmetic mean of normalized shapes of one kind."""
    if not norm_shapes:
        raise ValueError("mean_shape requires at least one shape")
    kind = norm_shapes[0].kind
    if any(s.kind is not kind for s in norm_shapes):
        raise ValueError("all shapes must share the same kind")
    stacked = np.stack([s.points for s in norm_shapes])
    return NormalizedShape(stacked.mean(axis=0), kind)


def compute_offsets(gt: list[Shape], current: list[Shape]) -> np.ndarray:
    """Column-per-sample offset matrix, column h = flatten(gt_h) - flatten(current_h).

    Returns a (P, H) array with P = 2K coordinates.
    """
    if len(gt) != len(current):
        raise ValueError(f"length mismatch: {len(gt)} gt vs {len(current)} current")
    if not gt:
        raise ValueError("compute_offsets requires at least one pair")
    kind = gt[0].kind
    for g, c in zip(gt, current):
        if g.kind is not kind or c.kind is not kind:
            raise ValueError("all shapes must share the same kind")
    cols = [g.flatten() - c.flatten() for g, c in zip(gt, current)]
    return np.stack(cols, axis=1)


def covariance(offsets: np.ndarray) -> np.ndarray:
    """Covariance of an offset matrix, scaled by 1/P.

    The 1/P scaling (rather than 1/H) only rescales eigenvalues uniformly; the
    eigenvectors, and hence every projection, are unchanged by it.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.ndim != 2 or offsets.shape[1] < 1:
        raise ValueError("offsets must be a non-empty (P, H) matrix")
    p = offsets.shape[0]
    return (offsets @ offsets.T) / p


def eigendecompose(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and matching unit eigenvectors of a symmetric matrix.

    Returns ``(values, vectors)`` with ``vectors[:, j]`` the eigenvector of
    ``values[j]``. Sign convention: the largest-magnitude entry of each vector is
    made positive (ties broken by lowest index), so the decomposition is
    reproducible across runs.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"matrix must be square, got {c.shape}")
    tol = 1e-9 * (1.0 + np.abs(c).max(initial=0.0))
    if np.abs(c - c.T).max(initial=0.0) > tol:
        raise ValueError("matrix is not symmetric within tolerance")
    sym = (c + c.T) / 2.0
    values, vectors = np.linalg.eigh(sym)
    order = np.argsort(values)[::-1]
    values = values[order]
    vectors = vectors[:, order]
    for j in range(vectors.shape[1]):
        i = int(np.argmax(np.abs(vectors[:, j])))
        if vectors[i, j] < 0:
            vectors[:, j] = -vectors[:, j]
    return values, vectors


@dataclass(frozen=True)
class TransitionMatrix:
    """Q x P matrix of leading eigenvectors (one per row) with their eigenvalues.

    Maps flattened coordinate offsets to eigenvalue coordinates (``project``) and
    back via the transpose (``reconstruct``).
    """

    rows: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        eig = np.asarray(self.eigenvalues, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-D matrix")
        q, p = rows.shape
        if not 1 <= q < p:
            raise ValueError(f"require 1 <= Q < P, got Q={q}, P={p}")
        if eig.shape != (q,):
            raise ValueError("eigenvalues must match row count")
        if np.any(np.diff(eig) > 0):
            raise ValueError("eigenvalues must be non-increasing")
        gram = rows @ rows.T
        if np.abs(gram - np.eye(q)).max() > 1e-8:
            raise ValueError("rows are not orthonormal")
        rows.setflags(write=False)
        eig.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def q(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]


def build_transition_matrix(values: np.ndarray, vectors: np.ndarray, q: int) -> TransitionMatrix:
    """Stack the first ``q`` eigenvectors as rows of a transition matrix."""
    values = np.asarray(values, dtype=np.float64)
    vectors = np.asarray(vectors, dtype=np.float64)
    p = vectors.shape[0]
    if not 1 <= q < p:
        raise ValueError(f"require 1 <= q < P, got q={q}, P={p}")
    top = values[:q].copy()
    # Covariance eigenvalues are non-negative up to roundoff.
    top[(top < 0) & (top > -1e-10)] = 0.0
    return TransitionMatrix(vectors[:, :q].T.copy(), top)


def project_offsets(w: TransitionMatrix, delta: np.ndarray) -> np.ndarray:
    """Eigenvalue coordinates of a flattened offset: W @ delta."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (w.p,):
        raise ValueError(f"expected offset of length {w.p}, got {delta.shape}")
    return w.rows @ delta


def reconstruct_offsets(w: TransitionMatrix, coeffs: np.ndarray) -> np.ndarray:
    """Flattened coordinate offset from eigenvalue coordinates: W^T @ coeffs."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (w.q,):
        raise ValueError(f"expected {w.q} coefficients, got {coeffs.shape}")
    return w.rows.T @ coeffs


def fit_transition(offsets: np.ndarray, q: int) -> TransitionMatrix:
    """Transition matrix of the top ``q`` principal directions of an offset matrix."""
    values, vectors = eigendecompose(covariance(offsets))
    return build_transition_matrix(values, vectors, q)
