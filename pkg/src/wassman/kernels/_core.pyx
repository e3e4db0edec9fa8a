# cython: language_level=3
"""Compiled hot kernels: log-domain Sinkhorn sweeps, fused plan reductions,
cyclic Jacobi, all-pairs Dijkstra.

Semantics are pinned by the reference backend ``wassman.kernels._ref``; the
two must agree to float precision.  The only liberty taken here is dropping
log-sum-exp terms more than 45*eps below the running maximum: each skipped
term is < 3e-20 of the total, so even 1e5 of them stay 9 orders below the
tightest marginal tolerance in use.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, fabs, log, sqrt

cnp.import_array()

cdef double _CUT = 45.0


cdef inline double _lse_row(const double* row, const double* h,
                            Py_ssize_t m, double eps) noexcept nogil:
    cdef Py_ssize_t j
    cdef double v, best = -INFINITY, acc = 0.0, cut
    for j in range(m):
        v = h[j] - row[j]
        if v > best:
            best = v
    cut = best - _CUT * eps
    for j in range(m):
        v = h[j] - row[j]
        if v >= cut:
            acc += exp((v - best) / eps)
    return best / eps + log(acc)


def sinkhorn_block(const double[:, ::1] C, const double[:, ::1] CT,
                   const double[::1] logmu, const double[::1] lognu,
                   double[::1] f, double[::1] g,
                   double eps, int max_iters, double tol):
    """Fixed-eps Sinkhorn loop; see _ref.sinkhorn_block for the contract."""
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, j
    cdef int it = 0
    cdef double err = INFINITY, si, ri
    cdef double[::1] s = np.empty(n)
    cdef double[::1] mu = np.exp(np.asarray(logmu))

    with nogil:
        while it < max_iters:
            it += 1
            for j in range(m):
                g[j] = eps * (lognu[j] - _lse_row(&CT[j, 0], &f[0], n, eps))
            err = 0.0
            for i in range(n):
                si = _lse_row(&C[i, 0], &g[0], m, eps)
                s[i] = si
                ri = fabs(exp(f[i] / eps + si) - mu[i])
                if ri > err:
                    err = ri
            if err < tol:
                break
            for i in range(n):
                f[i] = eps * (logmu[i] - s[i])
    return it, err


def plan_reduce(const double[:, ::1] C, const double[::1] f, const double[::1] g,
                double eps, Y=None):
    """Row/col marginals, transport cost, and optional barycentric
    numerators of the implicit plan, in one sweep over C."""
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, j, k, d = 0
    cdef double a, amax, p, cij, cost = 0.0, rs
    cdef double[::1] row = np.empty(n)
    cdef double[::1] col = np.zeros(m)
    cdef const double[:, ::1] Yv
    cdef double[:, ::1] TY
    cdef bint with_y = Y is not None

    ty_arr = None
    if with_y:
        Yv = np.ascontiguousarray(Y, dtype=np.float64)
        d = Yv.shape[1]
        ty_arr = np.zeros((n, d))
        TY = ty_arr

    with nogil:
        for i in range(n):
            amax = -INFINITY
            for j in range(m):
                a = f[i] + g[j] - C[i, j]
                if a > amax:
                    amax = a
            amax -= _CUT * eps
            rs = 0.0
            for j in range(m):
                cij = C[i, j]
                a = f[i] + g[j] - cij
                if a >= amax:
                    p = exp(a / eps)
                    rs += p
                    col[j] += p
                    cost += p * cij
                    if with_y:
                        for k in range(d):
                            TY[i, k] += p * Yv[j, k]
            row[i] = rs
    return np.asarray(row), np.asarray(col), cost, ty_arr


def jacobi_eigh(A, double rel_tol=1e-14, int max_sweeps=60):
    """Cyclic Jacobi on a symmetric matrix; see _ref.jacobi_eigh."""
    cdef cnp.ndarray[double, ndim=2] Aa = np.array(A, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t n = Aa.shape[0], p, q, k, sweep
    cdef cnp.ndarray[double, ndim=2] Va = np.eye(n)
    cdef double[:, ::1] Am = Aa
    cdef double[:, ::1] Vm = Va
    cdef double norm = 0.0, off, apq, tau, t, c, s, akp, akq
    cdef bint converged = False

    for p in range(n):
        for q in range(n):
            norm += Am[p, q] * Am[p, q]
    norm = sqrt(norm)
    if norm == 0.0 or n == 1:
        w = np.diag(Aa).copy()
        order = np.argsort(-w, kind="stable")
        return w[order], Va[:, order], True

    with nogil:
        for sweep in range(max_sweeps):
            off = 0.0
            for p in range(n):
                for q in range(n):
                    if p != q:
                        off += Am[p, q] * Am[p, q]
            if sqrt(off) <= rel_tol * norm:
                converged = True
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = Am[p, q]
                    if apq == 0.0:
                        continue
                    tau = (Am[q, q] - Am[p, p]) / (2.0 * apq)
                    if tau >= 0.0:
                        t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                    else:
                        t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = t * c
                    for k in range(n):
                        akp = Am[p, k]
                        akq = Am[q, k]
                        Am[p, k] = c * akp - s * akq
                        Am[q, k] = s * akp + c * akq
                    for k in range(n):
                        akp = Am[k, p]
                        akq = Am[k, q]
                        Am[k, p] = c * akp - s * akq
                        Am[k, q] = s * akp + c * akq
                    Am[p, q] = 0.0
                    Am[q, p] = 0.0
                    for k in range(n):
                        akp = Vm[k, p]
                        akq = Vm[k, q]
                        Vm[k, p] = c * akp - s * akq
                        Vm[k, q] = s * akp + c * akq
        else:
            off = 0.0
            for p in range(n):
                for q in range(n):
                    if p != q:
                        off += Am[p, q] * Am[p, q]
            converged = sqrt(off) <= rel_tol * norm

    w = np.diag(Aa).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], Va[:, order], bool(converged)


def dijkstra_all(W):
    """All-pairs shortest paths; binary heap keyed (dist, node) so ties
    resolve toward the smaller node index.  See _ref.dijkstra_all."""
    cdef cnp.ndarray[double, ndim=2] Wa = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t n = Wa.shape[0], src, u, v, hsize, cap, child, parent, pos
    cdef cnp.ndarray[double, ndim=2] Da = np.full((n, n), np.inf)
    cdef const double[:, ::1] Wm = Wa
    cdef double[:, ::1] Dm = Da
    cdef double d, w, nd, cd
    cdef long cu

    cap = n * n + n + 1
    cdef double[::1] hd = np.empty(cap)
    cdef long[::1] hn = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] done_a = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] done = done_a

    with nogil:
        for src in range(n):
            for v in range(n):
                done[v] = 0
            Dm[src, src] = 0.0
            hd[0] = 0.0
            hn[0] = src
            hsize = 1
            while hsize > 0:
                d = hd[0]
                u = hn[0]
                # pop root: move last to root, sift down
                hsize -= 1
                cd = hd[hsize]
                cu = hn[hsize]
                pos = 0
                while True:
                    child = 2 * pos + 1
                    if child >= hsize:
                        break
                    if child + 1 < hsize and (hd[child + 1] < hd[child] or
                            (hd[child + 1] == hd[child] and hn[child + 1] < hn[child])):
                        child += 1
                    if hd[child] < cd or (hd[child] == cd and hn[child] < cu):
                        hd[pos] = hd[child]
                        hn[pos] = hn[child]
                        pos = child
                    else:
                        break
                if hsize > 0:
                    hd[pos] = cd
                    hn[pos] = cu
                if done[u]:
                    continue
                done[u] = 1
                for v in range(n):
                    w = Wm[u, v]
                    if w == INFINITY or done[v]:
                        continue
                    nd = d + w
                    if nd < Dm[src, v]:
                        Dm[src, v] = nd
                        # push (nd, v): sift up
                        pos = hsize
                        hsize += 1
                        while pos > 0:
                            parent = (pos - 1) // 2
                            if nd < hd[parent] or (nd == hd[parent] and v < hn[parent]):
                                hd[pos] = hd[parent]
                                hn[pos] = hn[parent]
                                pos = parent
                            else:
                                break
                        hd[pos] = nd
                        hn[pos] = <long>v
    return Da
