import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from wassman import ot
from wassman.errors import DimensionMismatch, NoConvergence, ZeroRow
from wassman.measures import make_measure


def lp_cost(mu, nu):
    """Brute-force OT cost via the LP in the n*m transport variables."""
    C = ot.sq_dists(mu.points, nu.points)
    n, m = C.shape
    A_eq = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1.0
        A_eq.append(row.ravel())
    for j in range(m):
        col = np.zeros((n, m))
        col[:, j] = 1.0
        A_eq.append(col.ravel())
    b_eq = np.concatenate([mu.weights, nu.weights])
    res = linprog(C.ravel(), A_eq=np.array(A_eq), b_eq=b_eq,
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return float(res.fun)


def random_pair(rng, n, m, dim):
    mu = make_measure(rng.normal(size=(n, dim)), rng.random(n) + 0.05)
    nu = make_measure(rng.normal(size=(m, dim)), rng.random(m) + 0.05)
    return mu, nu


def test_config_validation():
    with pytest.raises(ValueError):
        ot.SinkhornConfig(eps_start=-1.0, eps_final=0.1)
    with pytest.raises(ValueError):
        ot.SinkhornConfig(eps_start=0.1, eps_final=0.2)
    with pytest.raises(ValueError):
        ot.SinkhornConfig(eps_start=1.0, eps_final=0.1, eps_decay=1.5)
    sched = ot.SinkhornConfig(eps_start=1.0, eps_final=0.3).schedule()
    assert sched == [1.0, 0.5, 0.3]
    assert ot.SinkhornConfig(eps_start=1.0, eps_final=1.0).schedule() == [1.0]


def test_sq_dists_small():
    X = np.array([[0.0, 0.0], [1.0, 0.0]])
    Y = np.array([[0.0, 1.0]])
    D = ot.sq_dists(X, Y)
    assert D.shape == (2, 1)
    assert np.allclose(D[:, 0], [1.0, 2.0])


def test_sinkhorn_marginals_within_tol():
    rng = np.random.default_rng(0)
    mu, nu = random_pair(rng, 15, 11, 2)
    cfg = ot.SinkhornConfig.for_measures(mu, nu, marginal_tol=1e-8)
    plan = ot.sinkhorn(mu, nu, cfg)
    assert plan.marginal_error() < 1e-8
    # the closing update makes column marginals exact
    assert np.abs(plan.col_marginals() - nu.weights).max() < 1e-13


def test_sinkhorn_identity_pair_costs_nothing():
    mu = make_measure([[0.0, 0.0], [1.0, 1.0]], [0.4, 0.6])
    cfg = ot.SinkhornConfig(eps_start=1.0, eps_final=1e-4)
    plan = ot.sinkhorn(mu, mu, cfg)
    assert plan.cost() < 1e-3
    assert ot.w2(mu, mu, cfg) < 0.05


def test_sinkhorn_two_atoms_translation():
    mu = make_measure([[0.0], [1.0]], [0.5, 0.5])
    nu = make_measure([[2.0], [3.0]], [0.5, 0.5])
    # monotone matching is optimal in 1D: cost = 4
    cfg = ot.SinkhornConfig(eps_start=4.0, eps_final=1e-4)
    plan = ot.sinkhorn(mu, nu, cfg)
    assert plan.cost() == pytest.approx(4.0, rel=1e-3)
    d, _ = ot.w2_1d(mu, nu)
    assert d == pytest.approx(2.0, rel=1e-12)


def test_sinkhorn_matches_lp_on_random_instances():
    rng = np.random.default_rng(7)
    for k in range(12):
        n, m = rng.integers(2, 8, size=2)
        mu, nu = random_pair(rng, int(n), int(m), int(rng.integers(1, 4)))
        diam2 = max(mu.diameter_sq(), nu.diameter_sq())
        # small eps slows the linear rate; budget iterations accordingly
        cfg = ot.SinkhornConfig(eps_start=0.5 * diam2, eps_final=1e-4 * diam2,
                                max_iters=30000, marginal_tol=1e-6)
        cost = ot.sinkhorn(mu, nu, cfg).cost()
        ref = lp_cost(mu, nu)
        assert cost == pytest.approx(ref, rel=1e-2, abs=1e-9 * diam2)


def test_w2_1d_matches_lp():
    rng = np.random.default_rng(11)
    for k in range(20):
        n, m = rng.integers(2, 8, size=2)
        mu, nu = random_pair(rng, int(n), int(m), 1)
        d, _ = ot.w2_1d(mu, nu)
        assert d * d == pytest.approx(lp_cost(mu, nu), rel=1e-9, abs=1e-12)


def test_w2_1d_map_is_monotone():
    rng = np.random.default_rng(13)
    mu, nu = random_pair(rng, 9, 6, 1)
    _, T = ot.w2_1d(mu, nu)
    order = np.argsort(mu.points[:, 0])
    assert np.all(np.diff(T.values[order, 0]) >= -1e-12)


def test_w2_1d_rejects_2d():
    mu = make_measure([[0.0, 0.0]])
    with pytest.raises(DimensionMismatch):
        ot.w2_1d(mu, mu)


def test_w2_dispatches_exact_in_1d():
    mu = make_measure([[0.0], [2.0]])
    nu = make_measure([[1.0], [3.0]])
    assert ot.w2(mu, nu) == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_w2_1d_symmetric_and_zero_on_self(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_pair(rng, int(rng.integers(1, 10)), int(rng.integers(1, 10)), 1)
    dab, _ = ot.w2_1d(mu, nu)
    dba, _ = ot.w2_1d(nu, mu)
    assert dab == pytest.approx(dba, rel=1e-12, abs=1e-12)
    dself, _ = ot.w2_1d(mu, mu)
    assert dself == pytest.approx(0.0, abs=1e-12)


@given(st.floats(-5, 5), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_w2_1d_translation_invariant_shift(shift, seed):
    rng = np.random.default_rng(seed)
    mu, _ = random_pair(rng, 6, 6, 1)
    nu = make_measure(mu.points + shift, mu.weights)
    d, T = ot.w2_1d(mu, nu)
    # renormalizing nu perturbs cumulative weights at the 1e-16 level, which
    # couples mass slivers across atom gaps; self-distance floats near 1e-8
    assert d == pytest.approx(abs(shift), rel=1e-9, abs=5e-8)
    assert np.abs(T.values[:, 0] - (mu.points[:, 0] + shift)).max() < 1e-9


def test_barycentric_map_pulls_targets():
    rng = np.random.default_rng(17)
    mu, nu = random_pair(rng, 10, 7, 2)
    cfg = ot.SinkhornConfig.for_measures(mu, nu)
    plan = ot.sinkhorn(mu, nu, cfg)
    T = ot.barycentric_map(plan)
    assert T.values.shape == (10, 2)
    # images live in the convex hull of the target support
    lo, hi = nu.points.min(axis=0), nu.points.max(axis=0)
    assert np.all(T.values >= lo - 1e-9) and np.all(T.values <= hi + 1e-9)


def test_barycentric_map_identity_at_small_eps():
    mu = make_measure([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    cfg = ot.SinkhornConfig(eps_start=0.5, eps_final=1e-5)
    T = ot.barycentric_map(ot.sinkhorn(mu, mu, cfg))
    assert np.abs(T.values - mu.points).max() < 1e-4


def test_no_convergence_raises_with_counts():
    rng = np.random.default_rng(23)
    mu, nu = random_pair(rng, 25, 25, 2)
    cfg = ot.SinkhornConfig(eps_start=1e-4, eps_final=1e-5, max_iters=2,
                            marginal_tol=1e-14)
    with pytest.raises(NoConvergence) as exc:
        ot.sinkhorn(mu, nu, cfg)
    assert exc.value.iterations >= 2
    assert exc.value.err > 0


def test_zero_weight_atoms_are_dropped():
    mu = make_measure([[0.0], [50.0]], [1.0, 0.0])
    nu = make_measure([[1.0]], [1.0])
    cfg = ot.SinkhornConfig(eps_start=2.0, eps_final=0.01)
    plan = ot.sinkhorn(mu, nu, cfg)
    assert plan.cost() == pytest.approx(1.0, rel=1e-6)


def test_warm_start_reuses_duals():
    rng = np.random.default_rng(29)
    mu, nu = random_pair(rng, 20, 20, 2)
    cfg = ot.SinkhornConfig.for_measures(mu, nu)
    plan = ot.sinkhorn(mu, nu, cfg)
    single = ot.SinkhornConfig(eps_start=cfg.eps_final, eps_final=cfg.eps_final,
                               marginal_tol=cfg.marginal_tol)
    warm = ot.sinkhorn(mu, nu, single, init=(plan.f, plan.g))
    assert warm.marginal_error() < cfg.marginal_tol
    assert warm.cost() == pytest.approx(plan.cost(), rel=1e-6)
