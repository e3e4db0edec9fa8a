"""Weighted L2 projection of grid velocity fields onto gradient fields.

Fields live on a regular 2D grid of cell centers restricted to a mask.
The projection minimizes sum_c w_c |grad_h(phi) - v_c|^2 over potentials
phi, with central differences in the interior and one-sided stencils where
a neighbor leaves the mask; that normal-equation system is the discrete
Neumann problem for the weighted divergence.  Constants are the nullspace,
removed by keeping iterates at zero mean over the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wassman.errors import CgNoConvergence, EmptyMask


@dataclass(frozen=True)
class GridField2D:
    """Vector field sampled at cell centers (i, j) -> (x0 + i*h, y0 + j*h).

    mask flags in-support cells; weights are the cell masses of the carrying
    measure (zero off-mask, summing to 1).  values has shape (nx, ny, 2).
    """

    nx: int
    ny: int
    h: float
    x0: float
    y0: float
    mask: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    def replace_values(self, values: np.ndarray) -> "GridField2D":
        return GridField2D(self.nx, self.ny, self.h, self.x0, self.y0,
                           self.mask, values, self.weights)

    def l2_norm(self) -> float:
        return float(np.sqrt((self.weights[..., np.newaxis] * self.values ** 2).sum()))


def _shift(a: np.ndarray, di: int, dj: int) -> np.ndarray:
    """a sampled at (i+di, j+dj), zero outside the grid."""
    nx, ny = a.shape[0], a.shape[1]
    out = np.zeros_like(a)
    si = slice(max(di, 0), nx + min(di, 0))
    ti = slice(max(-di, 0), nx + min(-di, 0))
    sj = slice(max(dj, 0), ny + min(dj, 0))
    tj = slice(max(-dj, 0), ny + min(-dj, 0))
    out[ti, tj] = a[si, sj]
    return out


class _Stencil:
    """Masked difference operator along one axis and its exact adjoint."""

    def __init__(self, mask: np.ndarray, h: float, axis: int):
        di, dj = (1, 0) if axis == 0 else (0, 1)
        has_p = _shift(mask, di, dj) & mask
        has_m = _shift(mask, -di, -dj) & mask
        both = has_p & has_m
        only_p = has_p & ~has_m
        only_m = has_m & ~has_p
        self.di, self.dj = di, dj
        self.cp = np.where(both, 0.5 / h, np.where(only_p, 1.0 / h, 0.0))
        self.cm = np.where(both, -0.5 / h, np.where(only_m, -1.0 / h, 0.0))
        self.c0 = np.where(only_p, -1.0 / h, np.where(only_m, 1.0 / h, 0.0))

    def apply(self, phi: np.ndarray) -> np.ndarray:
        return (self.cp * _shift(phi, self.di, self.dj)
                + self.c0 * phi
                + self.cm * _shift(phi, -self.di, -self.dj))

    def apply_t(self, z: np.ndarray) -> np.ndarray:
        return (_shift(self.cp * z, -self.di, -self.dj)
                + self.c0 * z
                + _shift(self.cm * z, self.di, self.dj))

    def diag_wtw(self, w: np.ndarray) -> np.ndarray:
        return (_shift(w * self.cp ** 2, -self.di, -self.dj)
                + w * self.c0 ** 2
                + _shift(w * self.cm ** 2, self.di, self.dj))


def grid_gradient(field: GridField2D, phi: np.ndarray) -> np.ndarray:
    """Masked finite-difference gradient of a potential, shape (nx, ny, 2)."""
    sx = _Stencil(field.mask, field.h, 0)
    sy = _Stencil(field.mask, field.h, 1)
    return np.stack([sx.apply(phi), sy.apply(phi)], axis=-1)


def project_to_gradient(v: GridField2D, rel_tol: float = 1e-10,
                        max_iters: int = 20000, precondition: bool = True):
    """Project v onto gradient fields in the weighted L2 sense.

    Returns (phi, grad) where grad is a GridField2D holding the projected
    field.  phi has zero mean over the mask and is zero off-mask.
    """
    mask = v.mask
    if not mask.any():
        raise EmptyMask("projection mask has no active cells")
    w = v.weights
    n_active = int(mask.sum())
    sx = _Stencil(mask, v.h, 0)
    sy = _Stencil(mask, v.h, 1)

    def matvec(phi):
        return sx.apply_t(w * sx.apply(phi)) + sy.apply_t(w * sy.apply(phi))

    def demean(phi):
        phi = phi - phi[mask].sum() / n_active
        phi[~mask] = 0.0
        return phi

    b = demean(sx.apply_t(w * v.values[..., 0]) + sy.apply_t(w * v.values[..., 1]))
    b_norm = float(np.sqrt((b * b).sum()))
    if b_norm == 0.0:
        phi = np.zeros_like(w)
        return phi, v.replace_values(np.zeros_like(v.values))

    if precondition:
        diag = sx.diag_wtw(w) + sy.diag_wtw(w)
        inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    else:
        inv_diag = 1.0

    x = np.zeros_like(b)
    r = b.copy()
    z = demean(inv_diag * r)
    p = z.copy()
    rz = float((r * z).sum())
    for it in range(1, max_iters + 1):
        Ap = matvec(p)
        alpha = rz / float((p * Ap).sum())
        x = demean(x + alpha * p)
        r = r - alpha * Ap
        res = float(np.sqrt((r * r).sum()))
        if res <= rel_tol * b_norm:
            grad = np.stack([sx.apply(x), sy.apply(x)], axis=-1)
            return x, v.replace_values(grad)
        z = demean(inv_diag * r)
        rz_new = float((r * z).sum())
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise CgNoConvergence(max_iters, res / b_norm)


# -- grid construction and sampling -------------------------------------------


def make_grid_field(nx: int, ny: int, h: float, x0: float, y0: float,
                    mask: np.ndarray, values: np.ndarray,
                    weights: np.ndarray) -> GridField2D:
    """Validate-and-freeze constructor; renormalizes weights over the mask."""
    mask = np.asarray(mask, dtype=bool)
    values = np.where(mask[..., np.newaxis], np.asarray(values, dtype=np.float64), 0.0)
    w = np.where(mask, np.asarray(weights, dtype=np.float64), 0.0)
    total = w.sum()
    if total <= 0:
        raise EmptyMask("grid weights vanish on the mask")
    return GridField2D(nx, ny, h, x0, y0, mask, values, w / total)


def cell_index(field: GridField2D, P: np.ndarray):
    """Fractional cell coordinates of spatial points P, shape (k, 2)."""
    u = (P[:, 0] - field.x0) / field.h
    vj = (P[:, 1] - field.y0) / field.h
    return u, vj


def sample_bilinear(field: GridField2D, P: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of field.values at points P, ignoring
    off-mask corners (their weight is redistributed to valid ones).
    Points whose four corners are all off-mask fall back to the nearest
    in-mask cell."""
    u, vj = cell_index(field, P)
    i0 = np.clip(np.floor(u).astype(np.intp), 0, field.nx - 2)
    j0 = np.clip(np.floor(vj).astype(np.intp), 0, field.ny - 2)
    fx = np.clip(u - i0, 0.0, 1.0)
    fy = np.clip(vj - j0, 0.0, 1.0)

    out = np.zeros((P.shape[0], 2))
    tot = np.zeros(P.shape[0])
    for di, dj, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                        (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        ii, jj = i0 + di, j0 + dj
        ok = field.mask[ii, jj]
        wv = np.where(ok, wgt, 0.0)
        out += wv[:, np.newaxis] * field.values[ii, jj]
        tot += wv
    empty = tot <= 0
    if empty.any():
        out[empty] = _nearest_values(field, P[empty])
        tot[empty] = 1.0
    return out / tot[:, np.newaxis]


def sample_nearest(field: GridField2D, P: np.ndarray) -> np.ndarray:
    """Nearest-cell lookup of field.values, redirected to the nearest
    in-mask cell when the rounded cell is masked out."""
    u, vj = cell_index(field, P)
    ii = np.clip(np.rint(u).astype(np.intp), 0, field.nx - 1)
    jj = np.clip(np.rint(vj).astype(np.intp), 0, field.ny - 1)
    out = field.values[ii, jj].copy()
    bad = ~field.mask[ii, jj]
    if bad.any():
        out[bad] = _nearest_values(field, P[bad])
    return out


def _nearest_values(field: GridField2D, P: np.ndarray) -> np.ndarray:
    gi, gj = np.nonzero(field.mask)
    cx = field.x0 + gi * field.h
    cy = field.y0 + gj * field.h
    d2 = (P[:, 0:1] - cx) ** 2 + (P[:, 1:2] - cy) ** 2
    k = d2.argmin(axis=1)
    return field.values[gi[k], gj[k]]
