"""Span operators of velocity-field families and what their spectra reveal.

Everything here reduces to small dense symmetric matrices: the operator
F(V) = (1/N) sum_i v_i <v_i, .> acting on L2(lam) fields has the same
nonzero spectrum as its N x N Gram matrix divided by N, so eigenvalues,
Hilbert-Schmidt distances, and principal angles never touch the ambient
dimension.  The recovery experiment compares the spectrum of F built from
finite-difference transport maps against the one built from the family's
own velocity fields across a grid of step sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, ot
from .errors import CountMismatch, EigFailure, LengthMismatch, NoConvergence, RankDeficient
from .families import ManifoldFamily, embed, velocity
from .flows import aligned_config, finite_difference_map
from .measures import DiscreteMeasure, SampledVelocityField, _freeze

_ZERO_RATIO = 1e-10  # eigenvalues below this multiple of the top count as zero
_GAP_SCAN = 10       # how many leading gap ratios the rank detector inspects


@dataclass(frozen=True)
class GramRep:
    """Inner products of a field family over its base measure.

    matrix[i, j] = <v_i, v_j> in L2(base); divisor is the N in
    F(V) = (1/N) sum_i v_i <v_i, .>, kept separate so cross-family
    comparisons can share it.
    """

    matrix: np.ndarray
    base: DiscreteMeasure
    divisor: int


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of a span operator, sorted decreasing, with coefficient
    columns: eigenfield k is sum_i coeffs[i, k] * v_i, unit L2 norm for
    every nonzero eigenvalue."""

    eigenvalues: np.ndarray
    coeffs: np.ndarray


def _weighted_rows(fields, lam: DiscreteMeasure) -> np.ndarray:
    """Stack fields into rows scaled by sqrt(weights), so that plain row
    dot products are L2(lam) inner products."""
    if not fields:
        raise LengthMismatch("need at least one field")
    rows = []
    for k, v in enumerate(fields):
        if v.values.shape[0] != lam.n:
            raise LengthMismatch(
                f"field {k} has {v.values.shape[0]} samples, measure has {lam.n}")
        rows.append(v.values)
    stack = np.stack(rows)
    stack = stack * np.sqrt(lam.weights)[np.newaxis, :, np.newaxis]
    return stack.reshape(len(fields), -1)


def gram(fields, lam: DiscreteMeasure) -> GramRep:
    """Gram matrix of a field list in L2(lam); divisor = len(fields)."""
    A = _weighted_rows(fields, lam)
    G = A @ A.T
    return GramRep(matrix=_freeze((G + G.T) / 2.0), base=lam, divisor=len(fields))


def span_spectrum(rep: GramRep) -> Spectrum:
    """Spectrum of F(V) through its Gram matrix.

    F(V) and G/N share nonzero eigenvalues; the eigenvector c of G/N turns
    into the eigenfield sum_i c_i v_i, whose L2 norm is sqrt(N * nu), which
    fixes the normalization of the coefficient columns.

    Raises EigFailure if the Jacobi sweeps stall or the residual
    ||(G/N)c - nu c|| exceeds 1e-10 of the Frobenius norm of G/N.
    """
    M = rep.matrix / rep.divisor
    w, V, converged = kernels.jacobi_eigh(M)
    if not converged:
        raise EigFailure(f"jacobi sweeps exhausted on a {M.shape[0]}x{M.shape[0]} matrix")
    scale = float(np.sqrt((M * M).sum()))
    if scale > 0.0:
        resid = float(np.abs(M @ V - V * w[np.newaxis, :]).max())
        if resid > 1e-10 * scale:
            raise EigFailure(f"eigen residual {resid:.3e} above 1e-10 * {scale:.3e}")
    w = np.maximum(w, 0.0)
    C = np.array(V)
    if w.size and w[0] > 0.0:
        for k in range(w.size):
            norm_sq = rep.divisor * w[k]
            if w[k] > _ZERO_RATIO * w[0] and norm_sq > 0.0:
                C[:, k] /= np.sqrt(norm_sq)
    return Spectrum(eigenvalues=_freeze(w), coeffs=_freeze(C))


def nonzero_count(eigenvalues) -> int:
    """Eigenvalues above the 1e-10 * top floor; the numerical rank."""
    w = np.asarray(eigenvalues, dtype=np.float64)
    if w.size == 0 or w[0] <= 0.0:
        return 0
    return int((w > _ZERO_RATIO * w[0]).sum())


def rank_estimate(eigenvalues) -> int:
    """Position of the largest gap ratio nu_i / nu_{i+1} over the first
    min(10, n-1) slots, capped by the numerical rank."""
    w = np.asarray(eigenvalues, dtype=np.float64)
    nz = nonzero_count(w)
    if nz <= 1 or w.size < 2:
        return nz
    stop = min(_GAP_SCAN, w.size - 1)
    ratios = w[:stop] / np.maximum(w[1:stop + 1], 1e-300)
    return min(int(np.argmax(ratios)) + 1, nz)


def hs_distance(v_fields, w_fields, lam: DiscreteMeasure) -> float:
    """Hilbert-Schmidt distance ||F(V) - F(W)||_HS from Gram matrices only:
    ||.||^2 = (1/N^2) [sum Gv^2 - 2 sum Cross^2 + sum Gw^2]."""
    if len(v_fields) != len(w_fields):
        raise CountMismatch(f"{len(v_fields)} fields vs {len(w_fields)}")
    Av = _weighted_rows(v_fields, lam)
    Aw = _weighted_rows(w_fields, lam)
    Gv = Av @ Av.T
    Gw = Aw @ Aw.T
    X = Av @ Aw.T
    val = float((Gv * Gv).sum() - 2.0 * (X * X).sum() + (Gw * Gw).sum())
    return np.sqrt(max(val, 0.0)) / len(v_fields)


def _orthonormal_coeffs(A: np.ndarray) -> np.ndarray:
    """Coefficient columns B with rows(A)^T B an orthonormal basis of the
    row span; directions with Gram eigenvalue < 1e-10 * top are dropped."""
    G = A @ A.T
    w, V, converged = kernels.jacobi_eigh((G + G.T) / 2.0)
    if not converged:
        raise EigFailure("jacobi sweeps exhausted during orthonormalization")
    if w.size == 0 or w[0] <= 0.0:
        return np.empty((A.shape[0], 0))
    keep = w > _ZERO_RATIO * w[0]
    return V[:, keep] / np.sqrt(w[keep])[np.newaxis, :]


def principal_angles(v_fields, w_fields, lam: DiscreteMeasure, k: int) -> np.ndarray:
    """First k principal angles between span(V) and span(W) in L2(lam),
    ascending.  Cosines are singular values of the cross-inner-product
    matrix of L2-orthonormalized bases, via Jacobi on its square.

    Raises RankDeficient when either span has numerical rank below k.
    """
    Av = _weighted_rows(v_fields, lam)
    Aw = _weighted_rows(w_fields, lam)
    Bv = _orthonormal_coeffs(Av)
    Bw = _orthonormal_coeffs(Aw)
    if Bv.shape[1] < k or Bw.shape[1] < k:
        raise RankDeficient(
            f"spans have ranks {Bv.shape[1]} and {Bw.shape[1]}, need {k}")
    M = Bv.T @ (Av @ Aw.T) @ Bw
    # singular values of M = sqrt eigenvalues of M^T M (small square matrix)
    w, _, converged = kernels.jacobi_eigh(M.T @ M)
    if not converged:
        raise EigFailure("jacobi sweeps exhausted on the cosine matrix")
    cosines = np.sqrt(np.clip(w[:k], 0.0, 1.0))
    return np.arccos(np.clip(cosines, 0.0, 1.0))


def subspace_distance(angles) -> float:
    """||sin Theta||_F for a list of principal angles."""
    a = np.asarray(angles, dtype=np.float64)
    return float(np.sqrt((np.sin(a) ** 2).sum()))


@dataclass(frozen=True)
class SpectraTable:
    """Per-step-size spectra of the finite-difference span operator.

    Rows are sorted by t ascending.  eigenvalues has one row per t with the
    leading K values of F(W^t); z_eigenvalues (same shape, optional) holds
    F(Z^t) built from the raw deformation displacements instead of
    transport maps.  v_eigenvalues is the t-independent spectrum of F(V)
    and v_rank its numerical rank (the m used for subspace distances).
    """

    t: np.ndarray
    rank: np.ndarray
    eigenvalues: np.ndarray
    hs_dist: np.ndarray
    subspace_dist: np.ndarray
    v_eigenvalues: np.ndarray
    v_rank: int
    z_eigenvalues: np.ndarray | None = None

    def columns(self):
        """CSV header names matching the row layout of `rows()`."""
        K = self.eigenvalues.shape[1]
        names = ["t", "rank_estimate"] + [f"eig_{k + 1}" for k in range(K)]
        names += ["hs_dist", "subspace_dist"]
        if self.z_eigenvalues is not None:
            names += [f"z_eig_{k + 1}" for k in range(K)]
        return names

    def rows(self):
        for i in range(self.t.size):
            row = [self.t[i], int(self.rank[i]), *self.eigenvalues[i],
                   self.hs_dist[i], self.subspace_dist[i]]
            if self.z_eigenvalues is not None:
                row.extend(self.z_eigenvalues[i])
            yield row


def _chained_plan(fam, lam, nu, base_cfg, duals):
    """Entropic solve reusing duals from the previous step size when given;
    falls back to a fresh eps ladder if the continuation stalls."""
    if duals is not None:
        single = ot.SinkhornConfig(
            eps_start=base_cfg.eps_final, eps_final=base_cfg.eps_final,
            max_iters=base_cfg.max_iters, marginal_tol=base_cfg.marginal_tol)
        try:
            return ot.sinkhorn(lam, nu, single, init=duals)
        except NoConvergence:
            pass
    fresh = aligned_config(fam, lam, nu, max_iters=base_cfg.max_iters,
                           marginal_tol=base_cfg.marginal_tol)
    if base_cfg.eps_final != fresh.eps_final:
        fresh = ot.SinkhornConfig(
            eps_start=max(fresh.eps_start, base_cfg.eps_final),
            eps_final=base_cfg.eps_final,
            max_iters=base_cfg.max_iters, marginal_tol=base_cfg.marginal_tol)
    return ot.sinkhorn(lam, nu, fresh)


def tangent_recovery_experiment(fam: ManifoldFamily, theta, etas, t_list,
                                cfg: ot.SinkhornConfig | None = None,
                                n_eigs: int = 12,
                                include_z: bool = False) -> SpectraTable:
    """Spectra of F(W^t) against F(V) over a grid of step sizes.

    V holds the family's velocity fields for each eta at theta; W^t the
    finite-difference maps (T_t - id)/t toward theta + t*eta.  Each row
    reports the leading eigenvalues, the gap-ratio rank estimate, the
    Hilbert-Schmidt distance to F(V), and the subspace distance between
    the top-m eigenspaces, m being the rank of F(V).

    cfg pins the final blur and the convergence knobs for the entropic
    solves (2D families only); eps_start is retightened per pair because
    the supports are index-aligned.  Within one eta the solves walk the
    step sizes in ascending order and reuse the previous duals, so only
    the smallest t pays for a full eps ladder.  include_z adds the spectra
    of the raw deformation displacements (psi(theta + t*eta) - psi(theta))/t.
    """
    theta = fam._coords(theta)
    lam = embed(fam, theta)
    order = np.argsort(np.asarray(t_list, dtype=np.float64), kind="stable")
    ts = np.asarray(t_list, dtype=np.float64)[order]
    if ts.size == 0:
        raise ValueError("t_list is empty")
    if ts[0] <= 0.0:
        raise ValueError(f"step sizes must be positive, got {ts[0]}")

    v_fields = [velocity(fam, theta, eta) for eta in etas]
    sv = span_spectrum(gram(v_fields, lam))
    m = nonzero_count(sv.eigenvalues)
    K = min(n_eigs, len(etas))

    if cfg is None and lam.dim > 1:
        cfg = ot.SinkhornConfig(eps_start=0.5 * max(lam.diameter_sq(), 1e-300),
                                eps_final=(fam.spacing() / 4.0) ** 2)

    w_per_t = [[None] * len(etas) for _ in ts]
    for j, eta in enumerate(etas):
        duals = None
        for i, t in enumerate(ts):
            if lam.dim == 1:
                w_per_t[i][j] = finite_difference_map(fam, theta, eta, t)
                continue
            nu = embed(fam, theta + t * np.asarray(eta, dtype=np.float64).ravel())
            plan = _chained_plan(fam, lam, nu, cfg, duals)
            duals = (plan.f, plan.g)
            T = ot.barycentric_map(plan)
            w_per_t[i][j] = SampledVelocityField(
                _freeze((T.values - lam.points) / t))

    eig_rows = np.zeros((ts.size, K))
    z_rows = np.zeros((ts.size, K)) if include_z else None
    ranks = np.zeros(ts.size, dtype=np.int64)
    hs = np.zeros(ts.size)
    sub = np.zeros(ts.size)
    base_points = fam.template.points
    for i, t in enumerate(ts):
        w_fields = w_per_t[i]
        sw = span_spectrum(gram(w_fields, lam))
        eig_rows[i] = sw.eigenvalues[:K]
        ranks[i] = rank_estimate(sw.eigenvalues)
        hs[i] = hs_distance(w_fields, v_fields, lam)
        sub[i] = subspace_distance(principal_angles(w_fields, v_fields, lam, m))
        if include_z:
            z_fields = []
            for eta in etas:
                step = fam.deform_points(
                    theta + t * np.asarray(eta, dtype=np.float64).ravel(), base_points)
                z_fields.append(SampledVelocityField(
                    _freeze((step - lam.points) / t)))
            z_rows[i] = span_spectrum(gram(z_fields, lam)).eigenvalues[:K]

    return SpectraTable(t=_freeze(ts), rank=_freeze(ranks),
                        eigenvalues=_freeze(eig_rows), hs_dist=_freeze(hs),
                        subspace_dist=_freeze(sub),
                        v_eigenvalues=_freeze(np.array(sv.eigenvalues)),
                        v_rank=m, z_eigenvalues=None if z_rows is None else _freeze(z_rows))
