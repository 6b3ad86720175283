"""Affine registration onto the reference model.

A planar affine map with six free parameters is fitted from the four tongue
corner correspondences by closed-form least squares: zeroing the partial
derivatives of the summed squared residual gives one 3x3 normal system per
output coordinate.  Images are then resampled onto the reference frame with
bilinear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BoundingQuad, Dataset, DegeneracyError, ShapeError, validate_image

# 2x2 linear blocks with |det| at or below this are treated as singular.
DET_EPS = 1e-12

# Normal matrices with condition numbers above this are treated as singular
# (collinear reference corners).
COND_LIMIT = 1e12


@dataclass(frozen=True)
class AffineTransform:
    """Planar affine map; the implied third matrix row is [0, 0, 1].

    (x, y) maps to (t11*x + t12*y + t13, t21*x + t22*y + t23).
    """

    t11: float
    t12: float
    t13: float
    t21: float
    t22: float
    t23: float

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform":
        return cls(1.0, 0.0, dx, 0.0, 1.0, dy)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "AffineTransform":
        m = np.asarray(m, dtype=float)
        if m.shape == (3, 3):
            m = m[:2]
        if m.shape != (2, 3):
            raise ShapeError(f"affine matrix must be 2x3 or 3x3, got {m.shape}")
        return cls(*m[0], *m[1])

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.t11, self.t12, self.t13], [self.t21, self.t22, self.t23], [0.0, 0.0, 1.0]]
        )

    @property
    def params(self) -> np.ndarray:
        return np.array([self.t11, self.t12, self.t13, self.t21, self.t22, self.t23])

    def det(self) -> float:
        return self.t11 * self.t22 - self.t12 * self.t21


@dataclass(frozen=True)
class NormalSystem:
    """One 3x3 linear system a @ t = b per output coordinate.

    ``a`` is the Gram matrix of the reference points in homogeneous form, so it
    is symmetric positive semi-definite by construction.
    """

    a: np.ndarray
    b: np.ndarray


def build_normal_system(reference: np.ndarray, targets: np.ndarray) -> NormalSystem:
    """Normal equations for one output coordinate of the affine fit.

    reference: (N, 2) source points (x, y); targets: (N,) observed coordinates.
    """
    h = np.column_stack([reference[:, 0], reference[:, 1], np.ones(len(reference))])
    return NormalSystem(a=h.T @ h, b=h.T @ targets)


def fit_affine(moving: BoundingQuad, reference: BoundingQuad) -> AffineTransform:
    """Least-squares affine map sending the reference corners onto the moving ones.

    Minimizes sum_j ||moving_j - T [reference_j; 1]||^2.  The x row
    (t11, t12, t13) and the y row (t21, t22, t23) decouple into two
    independent 3x3 systems sharing the same Gram matrix.
    """
    ref = reference.corners
    mov = moving.corners
    sys_x = build_normal_system(ref, mov[:, 0])
    sys_y = build_normal_system(ref, mov[:, 1])
    a = sys_x.a
    if not np.isfinite(a).all() or np.linalg.cond(a) > COND_LIMIT:
        raise DegeneracyError("reference corners are collinear; affine fit is underdetermined")
    row_x = np.linalg.solve(a, sys_x.b)
    row_y = np.linalg.solve(a, sys_y.b)
    return AffineTransform(*row_x, *row_y)


def invert(t: AffineTransform) -> AffineTransform:
    """Group inverse; composing with ``t`` gives the identity map."""
    det = t.det()
    if abs(det) <= DET_EPS:
        raise DegeneracyError(f"affine transform is singular (det={det!r})")
    i11 = t.t22 / det
    i12 = -t.t12 / det
    i21 = -t.t21 / det
    i22 = t.t11 / det
    return AffineTransform(
        i11, i12, -(i11 * t.t13 + i12 * t.t23),
        i21, i22, -(i21 * t.t13 + i22 * t.t23),
    )


def apply_point(t: AffineTransform, p) -> tuple[float, float]:
    x, y = float(p[0]), float(p[1])
    return (t.t11 * x + t.t12 * y + t.t13, t.t21 * x + t.t22 * y + t.t23)


def apply_points(t: AffineTransform, pts: np.ndarray) -> np.ndarray:
    """Apply the map to an (N, 2) array of (x, y) points."""
    pts = np.asarray(pts, dtype=float)
    lin = np.array([[t.t11, t.t12], [t.t21, t.t22]])
    return pts @ lin.T + np.array([t.t13, t.t23])


def fit_residual(t: AffineTransform, moving: BoundingQuad, reference: BoundingQuad) -> float:
    """Summed squared correspondence residual of a fitted transform."""
    pred = apply_points(t, reference.corners)
    return float(np.sum((moving.corners - pred) ** 2))


def _bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) at float (x, y) positions; out-of-bounds reads are 0."""
    h, w, c = img.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    out = np.zeros(xs.shape + (c,), dtype=img.dtype)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            if not inside.any():
                continue
            vals = img[yi.clip(0, h - 1), xi.clip(0, w - 1)]
            out += np.where(inside[..., None], vals * weight[..., None], 0.0)
    return out


def warp_to_reference(
    img: np.ndarray, t: AffineTransform, out_dims: tuple[int, int]
) -> np.ndarray:
    """Backward-warp ``img`` through ``t`` onto an out_dims = (h, w) grid.

    Output pixel (u, v) takes the bilinear sample of the source at the mapped
    point t(u, v); samples outside the source produce 0 (black).
    """
    validate_image(img)
    if abs(t.det()) <= DET_EPS:
        raise DegeneracyError(f"affine transform is singular (det={t.det()!r})")
    out_h, out_w = int(out_dims[0]), int(out_dims[1])
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dims must be positive, got {out_dims}")
    us, vs = np.meshgrid(np.arange(out_w, dtype=float), np.arange(out_h, dtype=float))
    src_x = t.t11 * us + t.t12 * vs + t.t13
    src_y = t.t21 * us + t.t22 * vs + t.t23
    warped = _bilinear_sample(img, src_x, src_y)
    # Bilinear weights can overshoot 1 by float rounding; pin the contract.
    return np.clip(warped, 0.0, 1.0)


def register_sample(img: np.ndarray, quad: BoundingQuad, dataset_ref: Dataset) -> np.ndarray:
    """Warp a sample so its tongue quad lands on the dataset's reference quad.

    The fitted map sends reference coordinates to sample coordinates, which is
    exactly the backward-sampling transform for the output grid, so the warp
    consumes it directly.
    """
    t = fit_affine(quad, dataset_ref.reference_quad)
    if abs(t.det()) <= DET_EPS:
        raise DegeneracyError("fitted transform is singular (degenerate tongue quad)")
    return warp_to_reference(img, t, dataset_ref.reference_dims)
