"""NumPy reference implementations of the hot kernels.

Call-compatible with the compiled module ``wassman.kernels._core``.  This is
the fallback backend, and it is also the ground truth: the extension must
agree with these routines to float precision (see tests/test_kernels.py).

All routines assume strictly positive weights; callers filter zero-mass
atoms before handing arrays down here.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

# Row block for log-sum-exp sweeps so temporaries stay at ~block*m doubles
# instead of duplicating the full cost matrix.
_BLOCK = 256


def _lse(C: np.ndarray, h: np.ndarray, eps: float) -> np.ndarray:
    """out[i] = log sum_j exp((h[j] - C[i, j]) / eps), computed stably."""
    n = C.shape[0]
    out = np.empty(n)
    for i0 in range(0, n, _BLOCK):
        blk = h[np.newaxis, :] - C[i0 : i0 + _BLOCK]
        m = blk.max(axis=1)
        np.exp((blk - m[:, np.newaxis]) / eps, out=blk)
        out[i0 : i0 + _BLOCK] = np.log(blk.sum(axis=1)) + m / eps
    return out


def sinkhorn_block(C, CT, logmu, lognu, f, g, eps, max_iters, tol):
    """Run log-domain Sinkhorn at a fixed eps, updating f and g in place.

    One iteration = column update, row-marginal check, row update.  The loop
    exits right after the column update once the row marginals match within
    tol, so the returned duals always reproduce the column marginals exactly.
    (Callers that want acceleration drive this with max_iters=1 and mix the
    iterates themselves; see the finishing loop in wassman.ot.)

    Parameters
    ----------
    C, CT : (n, m) and (m, n) float64 arrays
        Cost matrix and its transposed copy (both C-contiguous; the
        compiled backend scans each row-major).
    logmu, lognu : (n,), (m,) float64 arrays
        Log weights of source and target.
    f, g : (n,), (m,) float64 arrays
        Dual potentials, modified in place.
    eps : float
        Entropic regularization strength.
    max_iters : int
        Iteration cap at this eps level.
    tol : float
        Tolerance on the worst single row-sum deviation.

    Returns
    -------
    (iters, err) : int, float
        Iterations consumed and final worst row-sum error.
    """
    mu = np.exp(logmu)
    it = 0
    err = np.inf
    while it < max_iters:
        it += 1
        g[:] = eps * (lognu - _lse(CT, f, eps))
        s = _lse(C, g, eps)
        err = float(np.abs(np.exp(f / eps + s) - mu).max())
        if err < tol:
            return it, err
        f[:] = eps * (logmu - s)
    return it, err


def plan_reduce(C, f, g, eps, Y=None):
    """Reduce the implicit plan pi_ij = exp((f_i + g_j - C_ij)/eps).

    Returns (row_sums, col_sums, cost, TY) in one sweep, without ever
    materializing pi.  TY[i] = sum_j pi_ij Y[j] (unnormalized barycentric
    numerators); None when Y is None.
    """
    n, m = C.shape
    row = np.empty(n)
    col = np.zeros(m)
    cost = 0.0
    TY = None if Y is None else np.zeros((n, Y.shape[1]))
    for i0 in range(0, n, _BLOCK):
        blk = (f[i0 : i0 + _BLOCK, np.newaxis] + g[np.newaxis, :]) - C[i0 : i0 + _BLOCK]
        np.exp(blk / eps, out=blk)
        row[i0 : i0 + _BLOCK] = blk.sum(axis=1)
        col += blk.sum(axis=0)
        cost += float((blk * C[i0 : i0 + _BLOCK]).sum())
        if Y is not None:
            TY[i0 : i0 + _BLOCK] = blk @ Y
    return row, col, cost, TY


def jacobi_eigh(A, rel_tol=1e-14, max_sweeps=60):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps (p, q) pairs in row-major order until the off-diagonal Frobenius
    norm drops below rel_tol times the Frobenius norm of the input.

    Returns
    -------
    (w, V, converged) : (n,) float64 desc-sorted, (n, n) float64, bool
        Eigenvalues, matching eigenvector columns, and whether the
        off-diagonal target was reached within max_sweeps.
    """
    A = np.array(A, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    norm = float(np.linalg.norm(A))
    if norm == 0.0 or n == 1:
        w = np.diag(A).copy()
        order = np.argsort(-w, kind="stable")
        return w[order], V[:, order], True

    def _off():
        # direct off-diagonal sum; norm(A)^2 - norm(diag)^2 cancels badly
        # once the off-diagonal part is near rel_tol * norm
        s = A * A
        np.fill_diagonal(s, 0.0)
        return float(np.sqrt(s.sum()))

    converged = False
    for _ in range(max_sweeps):
        if _off() <= rel_tol * norm:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 if tau >= 0 else -1.0
                t = t / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        converged = _off() <= rel_tol * norm

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order], converged


def dijkstra_all(W):
    """All-pairs shortest paths on a dense nonnegative weight matrix.

    W[i, j] = inf marks an absent edge.  Per-source Dijkstra with a binary
    heap keyed on (distance, node), so distance ties resolve toward the
    smaller node index.
    """
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    D = np.full((n, n), np.inf)
    for src in range(n):
        dist = D[src]
        dist[src] = 0.0
        done = np.zeros(n, dtype=bool)
        heap = [(0.0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for v in range(n):
                w = W[u, v]
                if w == np.inf or done[v]:
                    continue
                nd = d + w
                if nd < dist[v]:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
    return D
