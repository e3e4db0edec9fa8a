"""Wasserstein-2 solvers.

1D pairs go through the exact quantile coupling; everything else runs
log-domain Sinkhorn with a geometric eps schedule, warm-started duals, and
squared-Euclidean cost.  Plans are kept in dual form; marginals, transport
cost, and barycentric projections come out of one fused reduction without
materializing the coupling.

No debiasing anywhere: the final eps sits below the discretization scale,
and the residual entropic floor is part of the reported number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wassman import kernels
from wassman.errors import DimensionMismatch, NoConvergence, ZeroRow
from wassman.measures import DiscreteMeasure, SampledVelocityField, _freeze

# Marginal tolerance for the intermediate eps levels; only the final level
# has to meet the configured tolerance, earlier ones just seed the duals.
_COARSE_TOL = 1e-4


def sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Dense squared-Euclidean cost matrix, clipped at zero."""
    C = X @ Y.T
    C *= -2.0
    C += (X * X).sum(axis=1)[:, np.newaxis]
    C += (Y * Y).sum(axis=1)[np.newaxis, :]
    np.maximum(C, 0.0, out=C)
    return C


@dataclass(frozen=True)
class SinkhornConfig:
    """Schedule and stopping rule for the entropic solver.

    eps decays geometrically from eps_start to eps_final (both in squared
    length units); max_iters bounds the iterations spent per eps level;
    marginal_tol bounds the worst row-sum deviation at the final level
    (column sums are exact by construction after the closing update).
    """

    eps_start: float
    eps_final: float
    eps_decay: float = 0.5
    max_iters: int = 2000
    marginal_tol: float = 1e-7

    def __post_init__(self):
        if self.eps_start <= 0 or self.eps_final <= 0:
            raise ValueError("eps values must be positive")
        if self.eps_final > self.eps_start:
            raise ValueError("eps_final must not exceed eps_start")
        if not 0.0 < self.eps_decay < 1.0:
            raise ValueError("eps_decay must lie in (0, 1)")
        if self.max_iters < 1 or self.marginal_tol <= 0:
            raise ValueError("max_iters >= 1 and marginal_tol > 0 required")

    @staticmethod
    def for_measures(mu: DiscreteMeasure, nu: DiscreteMeasure,
                     spacing: float | None = None, **kw) -> "SinkhornConfig":
        """Default schedule for a pair: eps_start = half the squared
        bounding-box diameter, eps_final = (spacing/4)^2 when the grid
        spacing is known, else 1e-4 times the squared diameter."""
        diam2 = max(mu.diameter_sq(), nu.diameter_sq(), 1e-30)
        eps_final = (spacing / 4.0) ** 2 if spacing else 1e-4 * diam2
        eps_start = 0.5 * diam2
        return SinkhornConfig(eps_start=max(eps_start, eps_final),
                              eps_final=eps_final, **kw)

    def schedule(self) -> list[float]:
        levels = []
        e = self.eps_start
        while e > self.eps_final * (1.0 + 1e-12):
            levels.append(e)
            e *= self.eps_decay
        levels.append(self.eps_final)
        return levels


class TransportPlan:
    """Coupling between two discrete measures.

    Either holds an explicit coupling matrix or, after a Sinkhorn solve,
    dual potentials (f, g, eps) plus the cost matrix; in dual form the
    implicit coupling is exp((f_i + g_j - C_ij)/eps).
    """

    def __init__(self, source: DiscreteMeasure, target: DiscreteMeasure, *,
                 coupling: np.ndarray | None = None,
                 f: np.ndarray | None = None, g: np.ndarray | None = None,
                 eps: float | None = None, cost_matrix: np.ndarray | None = None):
        if coupling is None and (f is None or g is None or eps is None or cost_matrix is None):
            raise ValueError("need either a coupling matrix or (f, g, eps, cost_matrix)")
        self.source = source
        self.target = target
        self.f = f
        self.g = g
        self.eps = eps
        self._C = cost_matrix
        self._coupling = coupling
        self._reduced = None

    @property
    def coupling(self) -> np.ndarray:
        if self._coupling is None:
            self._coupling = np.exp(
                (self.f[:, np.newaxis] + self.g[np.newaxis, :] - self._C) / self.eps
            )
        return self._coupling

    def _reduce(self):
        if self._reduced is None:
            Y = self.target.points
            if self._coupling is not None:
                P = self._coupling
                C = self._C if self._C is not None else sq_dists(self.source.points, Y)
                self._reduced = (P.sum(axis=1), P.sum(axis=0),
                                 float((P * C).sum()), P @ Y)
            else:
                self._reduced = kernels.plan_reduce(self._C, self.f, self.g, self.eps, Y)
        return self._reduced

    def row_marginals(self) -> np.ndarray:
        return self._reduce()[0]

    def col_marginals(self) -> np.ndarray:
        return self._reduce()[1]

    def cost(self) -> float:
        """Transport cost sum_ij pi_ij |x_i - y_j|^2."""
        return self._reduce()[2]

    def marginal_error(self) -> float:
        """Worst single-entry deviation of the plan marginals from the
        two weight vectors."""
        row, col, _, _ = self._reduce()
        return max(float(np.abs(row - self.source.weights).max()),
                   float(np.abs(col - self.target.weights).max()))


def w2_1d(mu: DiscreteMeasure, nu: DiscreteMeasure):
    """Exact 1D transport via the quantile coupling.

    Returns (distance, map) where map holds the barycentric target position
    for each source atom, nondecreasing in the source position.  Atoms with
    zero weight are mapped to themselves.
    """
    if mu.dim != 1 or nu.dim != 1:
        raise DimensionMismatch(f"w2_1d needs 1D measures, got dims {mu.dim}, {nu.dim}")
    oa = np.argsort(mu.points[:, 0], kind="stable")
    ob = np.argsort(nu.points[:, 0], kind="stable")
    xa = mu.points[oa, 0]
    xb = nu.points[ob, 0]
    Ca = np.cumsum(mu.weights[oa])
    Cb = np.cumsum(nu.weights[ob])

    # Breakpoints of the merged quantile grid; each interval sits in a
    # single (source atom, target atom) cell of the coupling.
    qs = np.sort(np.concatenate([Ca[:-1], Cb[:-1]]))
    lo = np.concatenate([[0.0], qs])
    mass = np.diff(np.concatenate([[0.0], qs, [1.0]]))
    ia = np.minimum(np.searchsorted(Ca, lo, side="right"), xa.size - 1)
    ib = np.minimum(np.searchsorted(Cb, lo, side="right"), xb.size - 1)

    disp = xa[ia] - xb[ib]
    cost = float((mass * disp * disp).sum())

    num = np.zeros(xa.size)
    eff = np.zeros(xa.size)
    np.add.at(num, ia, mass * xb[ib])
    np.add.at(eff, ia, mass)
    mapped = np.where(eff > 0, num / np.where(eff > 0, eff, 1.0), xa)

    values = np.empty(mu.n)
    values[oa] = mapped
    return float(np.sqrt(max(cost, 0.0))), SampledVelocityField(_freeze(values[:, np.newaxis]))


_MIX_DEPTH = 3


def _finish_level(Ca, CT, logmu, lognu, f, g, eps, max_iters, tol):
    """Anderson-mixed Sinkhorn sweeps at a fixed eps, in place on f and g.

    Plain sweeps contract painfully slowly once eps is small; fitting the
    residual over the last few dual iterates (depth _MIX_DEPTH) restores
    steady progress.  A sweep whose error exceeds 10x the best seen rejects
    the extrapolation that produced it and restarts the history from the
    last plain output.  Extrapolated duals are never the exit state: the
    loop only returns right after a plain column update, so the exit
    invariant (exact column marginals) matches kernels.sinkhorn_block.
    """
    n = f.size
    x = np.concatenate([f, g])
    hx: list[np.ndarray] = []
    hr: list[np.ndarray] = []
    fallback = None
    best = np.inf
    it = 0
    err = np.inf
    while it < max_iters:
        it += 1
        f[:], g[:] = x[:n], x[n:]
        _, err = kernels.sinkhorn_block(Ca, CT, logmu, lognu, f, g, eps, 1, tol)
        if err < tol:
            return it, err
        gx = np.concatenate([f, g])
        if err > 10.0 * best and fallback is not None:
            x = fallback
            fallback = None
            hx.clear()
            hr.clear()
            continue
        best = min(best, err)
        r = gx - x
        hx.append(x)
        hr.append(r)
        if len(hx) > _MIX_DEPTH + 1:
            hx.pop(0)
            hr.pop(0)
        if len(hx) < 2:
            x = gx
            fallback = None
            continue
        dX = np.stack([hx[i + 1] - hx[i] for i in range(len(hx) - 1)], axis=1)
        dR = np.stack([hr[i + 1] - hr[i] for i in range(len(hr) - 1)], axis=1)
        gamma = np.linalg.lstsq(dR, r, rcond=None)[0]
        x = gx - (dX + dR) @ gamma
        fallback = gx
    return it, err


def sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: SinkhornConfig,
             init: tuple[np.ndarray, np.ndarray] | None = None) -> TransportPlan:
    """Entropic solve over the geometric eps schedule, warm-starting duals
    level to level.  The returned plan reproduces the target weights exactly
    and every source weight within cfg.marginal_tol.

    init optionally seeds the duals with (f, g) from a previous solve on the
    same supports; pair it with eps_start == eps_final to continue a chain
    of nearby problems without rebuilding the schedule from scratch.

    Raises NoConvergence when the final level exhausts max_iters above the
    tolerance.
    """
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"source dim {mu.dim} vs target dim {nu.dim}")
    C = sq_dists(mu.points, nu.points)

    ki = mu.weights > 0
    kj = nu.weights > 0
    filtered = not (ki.all() and kj.all())
    Ca = C[np.ix_(ki, kj)] if filtered else C
    Ca = np.ascontiguousarray(Ca)
    CT = np.ascontiguousarray(Ca.T)
    logmu = np.log(mu.weights[ki])
    lognu = np.log(nu.weights[kj])

    if init is None:
        f = np.zeros(logmu.size)
        g = np.zeros(lognu.size)
    else:
        f = np.where(np.isfinite(init[0][ki]), init[0][ki], 0.0)
        g = np.where(np.isfinite(init[1][kj]), init[1][kj], 0.0)
    levels = cfg.schedule()
    coarse = max(_COARSE_TOL, cfg.marginal_tol)
    total = 0
    for eps in levels[:-1]:
        it, _ = kernels.sinkhorn_block(Ca, CT, logmu, lognu, f, g,
                                       eps, cfg.max_iters, coarse)
        total += it
    it, err = _finish_level(Ca, CT, logmu, lognu, f, g,
                            levels[-1], cfg.max_iters, cfg.marginal_tol)
    total += it
    if not err < cfg.marginal_tol:
        raise NoConvergence(total, err)

    if filtered:
        ff = np.full(mu.n, -np.inf)
        gf = np.full(nu.n, -np.inf)
        ff[ki] = f
        gf[kj] = g
        f, g = ff, gf
    return TransportPlan(mu, nu, f=f, g=g, eps=levels[-1], cost_matrix=C)


def barycentric_map(plan: TransportPlan) -> SampledVelocityField:
    """Per-source-atom target position T(x_i) = sum_j pi_ij y_j / sum_j pi_ij."""
    row, _, _, TY = plan._reduce()
    if TY is None:
        TY = plan.coupling @ plan.target.points
    if (row <= 0.0).any():
        raise ZeroRow(f"{int((row <= 0).sum())} source atoms carry no plan mass")
    return SampledVelocityField(_freeze(TY / row[:, np.newaxis]))


def w2(mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: SinkhornConfig | None = None) -> float:
    """Wasserstein-2 distance: exact in 1D, entropic otherwise."""
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"source dim {mu.dim} vs target dim {nu.dim}")
    if mu.dim == 1:
        return w2_1d(mu, nu)[0]
    if cfg is None:
        cfg = SinkhornConfig.for_measures(mu, nu)
    return float(np.sqrt(max(sinkhorn(mu, nu, cfg).cost(), 0.0)))
