"""Neighborhood graphs over sampled measures and their path metric.

Sampling, pairwise distances, the eps cutoff, and Dijkstra are split into
separate steps so the expensive part (all-pairs entropic solves) can be
cached to disk and reused across cutoffs and reruns.  The convergence
experiment follows the constructive route: match fresh continuum probe
pairs to their nearest samples and compare the graph metric against the
continuum path length.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import kernels, ot
from .errors import NotACorrespondence
from .families import ManifoldFamily, ParameterPoint, embed
from .flows import Quadrature, w_lambda_curve
from .measures import DiscreteMeasure, _freeze

__all__ = [
    "MetricGraph", "SampleSet", "GwTable", "sample_parameters",
    "distance_matrix", "build_graph", "shortest_paths", "distortion",
    "make_eps_rule", "calibrate_eps_rule", "gw_convergence_experiment",
    "family_hash",
]

_PROBE_STREAM = 911  # seed-sequence tag separating probe draws from sample draws


@dataclass(frozen=True)
class MetricGraph:
    """Edge lengths of the eps-neighborhood graph: symmetric, zero diagonal,
    +inf where the distance exceeded the cutoff."""

    n: int
    edge_lengths: np.ndarray
    eps: float


@dataclass(frozen=True)
class SampleSet:
    """Parameter draws with their embedded measures; seed kept for cache keys."""

    thetas: tuple[ParameterPoint, ...]
    measures: tuple[DiscreteMeasure, ...]
    seed: int

    @property
    def n(self) -> int:
        return len(self.thetas)

    def theta_array(self) -> np.ndarray:
        return np.stack([t.coords for t in self.thetas])


def family_hash(fam: ManifoldFamily) -> str:
    """Stable 12-hex digest of the family descriptor, for cache file names."""
    blob = json.dumps(fam.descriptor(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def sample_parameters(fam: ManifoldFamily, N: int, seed: int,
                      law: str = "uniform") -> SampleSet:
    """Draw N parameters iid uniform on the box and embed each.

    Philox keeps the draws counter-based: a fixed seed gives bit-identical
    thetas on any machine, and the first k draws of a larger N agree with
    the draws for N = k.
    """
    if law != "uniform":
        raise ValueError(f"unknown sampling law {law!r}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    lo, hi = fam.box[:, 0], fam.box[:, 1]
    draws = lo + (hi - lo) * rng.random((N, fam.m))
    thetas = tuple(fam.point(t) for t in draws)
    measures = tuple(embed(fam, t.coords) for t in thetas)
    return SampleSet(thetas=thetas, measures=measures, seed=seed)


def _pair_config(mu: DiscreteMeasure, nu: DiscreteMeasure,
                 cfg: ot.SinkhornConfig) -> ot.SinkhornConfig:
    """Tighten eps_start for one pair: index-aligned supports bound the
    needed transport by the max per-atom displacement."""
    if mu.n != nu.n:
        return cfg
    disp = float(np.abs(nu.points - mu.points).max())
    start = min(max(4.0 * disp * disp, cfg.eps_final), cfg.eps_start)
    return ot.SinkhornConfig(eps_start=start, eps_final=cfg.eps_final,
                             eps_decay=cfg.eps_decay, max_iters=cfg.max_iters,
                             marginal_tol=cfg.marginal_tol)


def _cache_path(cache_dir: str, fam_hash: str, n: int, seed: int) -> str:
    return os.path.join(cache_dir, f"dists_{fam_hash}_N{n}_seed{seed}.csv")


def _load_cached(path: str, fam_hash: str, n: int, seed: int,
                 eps_final: float) -> np.ndarray | None:
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        header = fh.readline().strip()
        want = f"# family={fam_hash} N={n} seed={seed} eps_final={eps_final!r}"
        if header != want:
            return None
        D = np.loadtxt(fh, delimiter=",", ndmin=2)
    if D.shape != (n, n):
        return None
    return D


def _store_cached(path: str, D: np.ndarray, fam_hash: str, n: int, seed: int,
                  eps_final: float) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(f"# family={fam_hash} N={n} seed={seed} eps_final={eps_final!r}\n")
        for row in D:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    os.replace(tmp, path)


def distance_matrix(fam: ManifoldFamily, samples: SampleSet,
                    cfg: ot.SinkhornConfig,
                    cache_dir: str | None = None) -> np.ndarray:
    """All N(N-1)/2 pairwise w2 values as a symmetric matrix.

    With cache_dir set (see WASSMAN_CACHE), the matrix is read from or
    written to a CSV keyed by (family hash, N, seed); a header mismatch on
    eps_final counts as a miss and the file is recomputed.
    """
    fh = family_hash(fam)
    path = None
    if cache_dir:
        path = _cache_path(cache_dir, fh, samples.n, samples.seed)
        cached = _load_cached(path, fh, samples.n, samples.seed, cfg.eps_final)
        if cached is not None:
            return cached
    n = samples.n
    D = np.zeros((n, n))
    for i in range(n):
        mi = samples.measures[i]
        for j in range(i + 1, n):
            mj = samples.measures[j]
            D[i, j] = D[j, i] = ot.w2(mi, mj, _pair_config(mi, mj, cfg))
    if path is not None:
        _store_cached(path, D, fh, samples.n, samples.seed, cfg.eps_final)
    return D


def build_graph(fam: ManifoldFamily, samples: SampleSet, eps: float,
                cfg: ot.SinkhornConfig,
                cache_dir: str | None = None) -> MetricGraph:
    """Pairwise distances with entries above eps replaced by +inf."""
    D = distance_matrix(fam, samples, cfg, cache_dir)
    L = np.where(D <= eps, D, np.inf)
    np.fill_diagonal(L, 0.0)
    return MetricGraph(n=samples.n, edge_lengths=_freeze(L), eps=float(eps))


def shortest_paths(g: MetricGraph) -> np.ndarray:
    """All-pairs path metric of the graph; +inf across components."""
    return kernels.dijkstra_all(np.asarray(g.edge_lengths))


def distortion(dA: np.ndarray, dB: np.ndarray, pairs) -> float:
    """sup |dA(i, i') - dB(j, j')| over all pairs of correspondence pairs.

    pairs must cover every index of both spaces (a correspondence, not a
    partial matching); otherwise NotACorrespondence.  Pairs where both
    metrics are infinite contribute zero.
    """
    P = np.asarray(pairs, dtype=np.int64)
    if P.ndim != 2 or P.shape[1] != 2:
        raise NotACorrespondence(f"pairs must be (k, 2) index array, got {P.shape}")
    dA = np.asarray(dA)
    dB = np.asarray(dB)
    if set(P[:, 0].tolist()) != set(range(dA.shape[0])):
        raise NotACorrespondence("first components do not cover the first space")
    if set(P[:, 1].tolist()) != set(range(dB.shape[0])):
        raise NotACorrespondence("second components do not cover the second space")
    ia, ib = P[:, 0], P[:, 1]
    with np.errstate(invalid="ignore"):  # inf - inf pairs count as agreement
        diff = np.abs(dA[np.ix_(ia, ia)] - dB[np.ix_(ib, ib)])
    diff = np.nan_to_num(diff, nan=0.0, posinf=np.inf)
    return float(diff.max()) if diff.size else 0.0


def _mst_max_edge(D: np.ndarray) -> float:
    """Longest edge of the minimum spanning tree (Prim), i.e. the smallest
    cutoff at which the graph stays connected."""
    n = D.shape[0]
    if n <= 1:
        return 0.0
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    in_tree[0] = True
    best = D[0].copy()
    best[0] = np.inf
    longest = 0.0
    for _ in range(n - 1):
        j = int(np.argmin(np.where(in_tree, np.inf, best)))
        longest = max(longest, float(best[j]))
        in_tree[j] = True
        best = np.minimum(best, D[j])
    return longest


def make_eps_rule(m: int, c: float):
    """The cutoff schedule eps(N) = c * (log N / N)^(1/(m+2)): it shrinks
    with N while the expected number of neighbors still diverges."""
    expo = 1.0 / (m + 2)

    def rule(N: int) -> float:
        return c * (np.log(N) / N) ** expo

    return rule


def calibrate_eps_rule(fam: ManifoldFamily, D_min: np.ndarray, n_min: int,
                       slack: float = 1.05):
    """Fix the constant so the smallest-N graph is connected: c is set from
    the longest MST edge of its distance matrix, times a little slack."""
    shape = (np.log(n_min) / n_min) ** (1.0 / (fam.m + 2))
    c = slack * _mst_max_edge(D_min) / shape
    return make_eps_rule(fam.m, c)


@dataclass(frozen=True)
class GwTable:
    """Per-N record of the graph-vs-continuum comparison."""

    N: np.ndarray
    eps: np.ndarray
    sup_distortion: np.ndarray
    disconnected: np.ndarray

    def columns(self):
        return ["N", "eps", "sup_distortion", "disconnected"]

    def rows(self):
        for i in range(self.N.size):
            yield [int(self.N[i]), self.eps[i], self.sup_distortion[i],
                   int(self.disconnected[i])]


def gw_convergence_experiment(fam: ManifoldFamily, N_list, eps_rule=None,
                              M_probe: int = 30, seed: int = 0,
                              cfg: ot.SinkhornConfig | None = None,
                              cache_dir: str | None = None,
                              quad: Quadrature | None = None) -> GwTable:
    """Distortion of the graph metric against the continuum metric over N.

    For each N: sample, build the graph at eps_rule(N), run Dijkstra; then
    draw M_probe fresh parameter pairs (their own deterministic stream),
    match each endpoint to its nearest sample in parameter space, and take
    the sup over probes of |w_lambda_curve(probe) - graph distance(match)|.
    Probes whose matched pair is unreachable set the disconnected flag for
    that N and are left out of the sup.  When eps_rule is None the default
    rule is calibrated on the smallest N so that graph is connected.
    """
    if cfg is None:
        # Graph edges live at the eps_N ~ 1e-1 scale; 1e-6 marginals are
        # already far below the entropic bias of the distances themselves.
        cfg = ot.SinkhornConfig(
            eps_start=0.5 * max(fam.template.diameter_sq(), 1e-300),
            eps_final=(fam.spacing() / 4.0) ** 2,
            max_iters=5000, marginal_tol=1e-6)
    if quad is None:
        quad = Quadrature(64)
    Ns = sorted(int(N) for N in N_list)

    sets = {}
    mats = {}
    for N in Ns:
        sets[N] = sample_parameters(fam, N, seed)
        mats[N] = distance_matrix(fam, sets[N], cfg, cache_dir)
    if eps_rule is None:
        eps_rule = calibrate_eps_rule(fam, mats[Ns[0]], Ns[0])

    prng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence([seed, _PROBE_STREAM])))
    lo, hi = fam.box[:, 0], fam.box[:, 1]
    probes = lo + (hi - lo) * prng.random((2 * M_probe, fam.m))
    wlam = np.array([
        w_lambda_curve(fam, probes[2 * k], probes[2 * k + 1], quad)
        for k in range(M_probe)])

    eps_col = np.zeros(len(Ns))
    dist_col = np.zeros(len(Ns))
    flag_col = np.zeros(len(Ns), dtype=np.int64)
    for row, N in enumerate(Ns):
        eps_N = float(eps_rule(N))
        L = np.where(mats[N] <= eps_N, mats[N], np.inf)
        np.fill_diagonal(L, 0.0)
        paths = kernels.dijkstra_all(L)
        T = sets[N].theta_array()
        sup = 0.0
        for k in range(M_probe):
            ia = int(np.argmin(((T - probes[2 * k]) ** 2).sum(axis=1)))
            ib = int(np.argmin(((T - probes[2 * k + 1]) ** 2).sum(axis=1)))
            d_graph = paths[ia, ib]
            if not np.isfinite(d_graph):
                flag_col[row] = 1
                continue
            sup = max(sup, abs(wlam[k] - d_graph))
        eps_col[row] = eps_N
        dist_col[row] = sup
    return GwTable(N=_freeze(np.array(Ns, dtype=np.int64)), eps=_freeze(eps_col),
                   sup_distortion=_freeze(dist_col), disconnected=_freeze(flag_col))
