"""Discrete measures, sampled velocity fields, and template discretizers.

Measures are Lagrangian point clouds: a deformation acts by moving the
points and keeping the weights.  Velocity fields are sampled index-aligned
with a companion measure's support, so L2 inner products are plain weighted
sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wassman.errors import (
    BadResolution,
    EmptySupport,
    LengthMismatch,
    NegativeWeight,
)


def as_points(x) -> np.ndarray:
    """Coerce scalars / 1D lists / (n, d) arrays to a float64 (n, d) array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a[:, np.newaxis]
    elif a.ndim != 2:
        raise LengthMismatch(f"points must be at most 2-dimensional, got shape {a.shape}")
    return a


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud in R^d; weights sum to 1."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def diameter_sq(self) -> float:
        """Squared diameter of the support's bounding box (cheap upper
        bound on the squared Euclidean diameter, exact for axis-aligned
        extremes; used only to scale solver schedules)."""
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float((span * span).sum())


@dataclass(frozen=True)
class SampledVelocityField:
    """Vector values at a companion measure's support points."""

    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __add__(self, other: "SampledVelocityField") -> "SampledVelocityField":
        return SampledVelocityField(_freeze(self.values + other.values))

    def __sub__(self, other: "SampledVelocityField") -> "SampledVelocityField":
        return SampledVelocityField(_freeze(self.values - other.values))

    def __rmul__(self, a: float) -> "SampledVelocityField":
        return SampledVelocityField(_freeze(a * self.values))


def make_field(values) -> SampledVelocityField:
    return SampledVelocityField(_freeze(as_points(values)))


def make_measure(points, weights=None) -> DiscreteMeasure:
    """Build a DiscreteMeasure, renormalizing weights to total mass 1.

    Uniform weights when `weights` is None.  Raises EmptySupport,
    NegativeWeight, or LengthMismatch on bad input.
    """
    pts = as_points(points)
    if pts.shape[0] == 0:
        raise EmptySupport("measure needs at least one support point")
    if weights is None:
        w = np.full(pts.shape[0], 1.0 / pts.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.shape[0] != pts.shape[0]:
            raise LengthMismatch(f"{pts.shape[0]} points vs {w.shape[0]} weights")
        if (w < 0).any():
            raise NegativeWeight(f"min weight {w.min()}")
        total = w.sum()
        if total <= 0:
            raise NegativeWeight("weights must have positive sum")
        w = w / total
    return DiscreteMeasure(_freeze(pts), _freeze(w))


def l2_inner(u: SampledVelocityField, v: SampledVelocityField, lam: DiscreteMeasure) -> float:
    """<u, v> in L2(lam): sum_i w_i <u_i, v_i>."""
    if u.n != v.n or u.n != lam.n:
        raise LengthMismatch(f"field lengths {u.n}, {v.n} vs measure {lam.n}")
    return float(np.einsum("i,id,id->", lam.weights, u.values, v.values))


def l2_norm(u: SampledVelocityField, lam: DiscreteMeasure) -> float:
    return float(np.sqrt(max(l2_inner(u, u, lam), 0.0)))


def pushforward(lam: DiscreteMeasure, mapped_points) -> DiscreteMeasure:
    """Move each support point to its image; weights unchanged."""
    pts = as_points(mapped_points)
    if pts.shape[0] != lam.n:
        raise LengthMismatch(f"{pts.shape[0]} mapped points vs {lam.n} atoms")
    return DiscreteMeasure(_freeze(pts), lam.weights)


# -- templates ----------------------------------------------------------------

# Bounding boxes of the three template domains.  All grids use cell centers
# (midpoint rule), which keeps 1D density weights strictly positive and the
# disk restriction unambiguous.
_INTERVAL = (-1.0, 1.0)
_RECT = ((-1.0, 1.0), (-0.5, 0.5))
_SQUARE = ((-1.0, 1.0), (-1.0, 1.0))


@dataclass(frozen=True)
class TemplateSpec:
    """Recipe for one of the three reference measures.

    kind: 'interval_density_1d' (density 0.75*(1-x^2)_+ on [-1,1]),
    'rect_uniform_2d' (uniform on [-1,1]x[-0.5,0.5]), or 'disk_density_2d'
    (floor + anisotropic Gaussian on the unit disk).

    resolution: cells along x.  resolution_y: cells along y for the 2D
    kinds (defaults: rect gets resolution//2, disk gets resolution).
    """

    kind: str
    resolution: int
    resolution_y: int | None = None
    floor: float = 0.1
    cov_diag: tuple[float, float] = (0.02, 0.1)

    def grid_shape(self) -> tuple[int, int]:
        if self.kind == "rect_uniform_2d":
            return self.resolution, self.resolution_y or max(self.resolution // 2, 2)
        return self.resolution, self.resolution_y or self.resolution

    def spacing(self) -> float:
        """Grid spacing h along x (cells are square for the default shapes)."""
        if self.kind == "interval_density_1d":
            return (_INTERVAL[1] - _INTERVAL[0]) / self.resolution
        box = _RECT if self.kind == "rect_uniform_2d" else _SQUARE
        return (box[0][1] - box[0][0]) / self.resolution


def _centers(lo: float, hi: float, n: int) -> np.ndarray:
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5)


def interval_density(x: np.ndarray) -> np.ndarray:
    """Reference 1D density 0.75 * (1 - x^2), clipped at zero."""
    return np.maximum(0.0, 0.75 * (1.0 - x * x))


def disk_density(xy: np.ndarray, floor: float, cov_diag) -> np.ndarray:
    """Unnormalized disk density: floor + exp(-x^T diag(cov)^-1 x / 2)."""
    q = xy[:, 0] ** 2 / cov_diag[0] + xy[:, 1] ** 2 / cov_diag[1]
    return floor + np.exp(-0.5 * q)


def discretize_template(spec: TemplateSpec) -> DiscreteMeasure:
    """Lagrangian grid discretization of a template measure."""
    if spec.resolution < 2 or (spec.resolution_y is not None and spec.resolution_y < 2):
        raise BadResolution(f"resolution must be >= 2, got {spec.resolution}")

    if spec.kind == "interval_density_1d":
        x = _centers(*_INTERVAL, spec.resolution)
        return make_measure(x, interval_density(x))

    if spec.kind == "rect_uniform_2d":
        nx, ny = spec.grid_shape()
        gx = _centers(*_RECT[0], nx)
        gy = _centers(*_RECT[1], ny)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        return make_measure(pts)

    if spec.kind == "disk_density_2d":
        nx, ny = spec.grid_shape()
        gx = _centers(*_SQUARE[0], nx)
        gy = _centers(*_SQUARE[1], ny)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        keep = (pts * pts).sum(axis=1) <= 1.0
        pts = pts[keep]
        return make_measure(pts, disk_density(pts, spec.floor, spec.cov_diag))

    raise ValueError(f"unknown template kind {spec.kind!r}")
