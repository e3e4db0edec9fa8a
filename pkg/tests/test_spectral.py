import numpy as np
import pytest

from wassman import families, measures, spectral
from wassman.errors import CountMismatch, LengthMismatch, RankDeficient
from wassman.measures import SampledVelocityField, TemplateSpec


def random_measure(rng, n, d):
    pts = rng.uniform(-1.0, 1.0, size=(n, d))
    w = rng.uniform(0.2, 1.0, size=n)
    return measures.make_measure(pts, w / w.sum())


def random_fields(rng, count, n, d, scale=1.0):
    return [SampledVelocityField(scale * rng.standard_normal((n, d)))
            for _ in range(count)]


def l2_norm(field, lam):
    return float(np.sqrt((lam.weights[:, np.newaxis] * field.values ** 2).sum()))


def assembled_operator(fields, lam):
    """F(V) as an explicit (n*d) x (n*d) matrix in the sqrt(w)-weighted
    embedding, where the L2(lam) geometry becomes Euclidean."""
    rows = np.stack([f.values for f in fields])
    rows = rows * np.sqrt(lam.weights)[np.newaxis, :, np.newaxis]
    U = rows.reshape(len(fields), -1)
    return U.T @ U / len(fields)


def test_single_field_eigenvalue_is_squared_norm():
    rng = np.random.default_rng(3)
    lam = random_measure(rng, 6, 2)
    v = random_fields(rng, 1, 6, 2)[0]
    spec = spectral.span_spectrum(spectral.gram([v], lam))
    assert spec.eigenvalues[0] == pytest.approx(l2_norm(v, lam) ** 2, rel=1e-12)


def test_orthonormal_triple_gives_uniform_spectrum():
    # disjoint single-atom supports scaled to unit L2 norm are orthonormal,
    # so F(V) must act as (1/3) * identity on the span
    rng = np.random.default_rng(4)
    lam = random_measure(rng, 6, 1)
    fields = []
    for k in range(3):
        vals = np.zeros((6, 1))
        vals[2 * k, 0] = 1.0 / np.sqrt(lam.weights[2 * k])
        fields.append(SampledVelocityField(vals))
    spec = spectral.span_spectrum(spectral.gram(fields, lam))
    np.testing.assert_allclose(spec.eigenvalues, [1 / 3] * 3, rtol=1e-12)
    for k in range(3):
        eig_field = SampledVelocityField(
            sum(spec.coeffs[i, k] * fields[i].values for i in range(3)))
        assert l2_norm(eig_field, lam) == pytest.approx(1.0, rel=1e-10)


def test_gram_trick_matches_assembled_operator():
    rng = np.random.default_rng(5)
    for _ in range(30):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(1, 4))
        count = int(rng.integers(1, 7))
        lam = random_measure(rng, n, d)
        fields = random_fields(rng, count, n, d)
        spec = spectral.span_spectrum(spectral.gram(fields, lam))
        brute = np.linalg.eigvalsh(assembled_operator(fields, lam))[::-1]
        top = min(count, n * d)
        np.testing.assert_allclose(spec.eigenvalues[:top], brute[:top],
                                   rtol=0, atol=1e-10)


def test_eigenfields_have_unit_norm():
    rng = np.random.default_rng(6)
    lam = random_measure(rng, 7, 2)
    fields = random_fields(rng, 5, 7, 2, scale=3.0)
    spec = spectral.span_spectrum(spectral.gram(fields, lam))
    for k in range(spectral.nonzero_count(spec.eigenvalues)):
        eig_field = SampledVelocityField(
            sum(spec.coeffs[i, k] * fields[i].values for i in range(5)))
        assert l2_norm(eig_field, lam) == pytest.approx(1.0, abs=1e-10)


def test_weyl_eigenvalue_stability():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(3, 8))
        d = int(rng.integers(1, 3))
        count = int(rng.integers(2, 6))
        lam = random_measure(rng, n, d)
        v = random_fields(rng, count, n, d)
        w = [SampledVelocityField(f.values + 0.3 * rng.standard_normal(f.values.shape))
             for f in v]
        mu = spectral.span_spectrum(spectral.gram(v, lam)).eigenvalues
        nu = spectral.span_spectrum(spectral.gram(w, lam)).eigenvalues
        hs = spectral.hs_distance(v, w, lam)
        assert np.all(np.abs(mu - nu) <= hs + 1e-9)


def test_davis_kahan_eigenspace_stability():
    rng = np.random.default_rng(8)
    checked = 0
    while checked < 60:
        lam = random_measure(rng, 6, 2)
        v = random_fields(rng, 4, 6, 2)
        w = [SampledVelocityField(f.values + 0.05 * rng.standard_normal(f.values.shape))
             for f in v]
        sv = spectral.span_spectrum(spectral.gram(v, lam))
        sw = spectral.span_spectrum(spectral.gram(w, lam))
        for k in (1, 2):
            gap = sv.eigenvalues[k - 1] - sv.eigenvalues[k]
            if gap <= 1e-6:
                continue
            ev = [SampledVelocityField(
                sum(sv.coeffs[i, j] * v[i].values for i in range(4)))
                for j in range(k)]
            ew = [SampledVelocityField(
                sum(sw.coeffs[i, j] * w[i].values for i in range(4)))
                for j in range(k)]
            dist = spectral.subspace_distance(
                spectral.principal_angles(ev, ew, lam, k))
            hs = spectral.hs_distance(v, w, lam)
            assert dist <= 2.0 * hs / gap + 1e-9
            checked += 1


def test_span_perturbation_bound():
    rng = np.random.default_rng(9)
    for _ in range(100):
        n = int(rng.integers(3, 8))
        lam = random_measure(rng, n, 2)
        v = random_fields(rng, 3, n, 2)
        w = [SampledVelocityField(f.values + 0.2 * rng.standard_normal(f.values.shape))
             for f in v]
        delta = max(l2_norm(SampledVelocityField(a.values - b.values), lam)
                    for a, b in zip(v, w))
        vmax = max(l2_norm(f, lam) for f in v)
        hs = spectral.hs_distance(v, w, lam)
        assert hs <= delta ** 2 + 2.0 * delta * vmax + 1e-9


def test_hs_distance_of_family_with_itself_is_zero():
    rng = np.random.default_rng(10)
    lam = random_measure(rng, 5, 2)
    v = random_fields(rng, 3, 5, 2)
    assert spectral.hs_distance(v, v, lam) == 0.0


def test_hs_distance_doubling_identity():
    # F(2V) = 4 F(V), so the distance to the doubled family is 3 ||F(V)||
    rng = np.random.default_rng(11)
    lam = random_measure(rng, 5, 2)
    v = random_fields(rng, 3, 5, 2)
    doubled = [2.0 * f for f in v]
    zeros = [SampledVelocityField(np.zeros((5, 2))) for _ in v]
    norm_fv = spectral.hs_distance(v, zeros, lam)
    assert spectral.hs_distance(v, doubled, lam) == pytest.approx(
        3.0 * norm_fv, rel=1e-10)


def test_hs_distance_matches_assembled_frobenius():
    rng = np.random.default_rng(12)
    for _ in range(20):
        n = int(rng.integers(2, 8))
        d = int(rng.integers(1, 3))
        lam = random_measure(rng, n, d)
        v = random_fields(rng, 4, n, d)
        w = random_fields(rng, 4, n, d)
        brute = np.linalg.norm(
            assembled_operator(v, lam) - assembled_operator(w, lam), "fro")
        assert spectral.hs_distance(v, w, lam) == pytest.approx(
            brute, rel=0, abs=1e-10)


def test_principal_angles_identical_spans_vanish():
    rng = np.random.default_rng(13)
    lam = random_measure(rng, 6, 2)
    v = random_fields(rng, 3, 6, 2)
    angles = spectral.principal_angles(v, v, lam, 3)
    assert np.all(angles < 1e-6)
    assert spectral.subspace_distance(angles) < 1e-6


def test_principal_angles_orthogonal_spans():
    rng = np.random.default_rng(14)
    lam = random_measure(rng, 4, 1)
    a = np.zeros((4, 1))
    b = np.zeros((4, 1))
    a[0, 0] = 1.0
    b[2, 0] = 1.0
    angles = spectral.principal_angles(
        [SampledVelocityField(a)], [SampledVelocityField(b)], lam, 1)
    assert angles[0] == pytest.approx(np.pi / 2, abs=1e-12)


def test_principal_angles_match_grid_search():
    rng = np.random.default_rng(15)
    lam = random_measure(rng, 4, 1)
    v = random_fields(rng, 2, 4, 1)
    w = random_fields(rng, 2, 4, 1)
    angles = spectral.principal_angles(v, w, lam, 2)

    def embed(fields):
        U = np.stack([(np.sqrt(lam.weights)[:, np.newaxis] * f.values).ravel()
                      for f in fields], axis=1)
        q, _ = np.linalg.qr(U)
        return q

    A, B = embed(v), embed(w)
    phis = np.linspace(0.0, np.pi, 1201)
    circle = np.stack([np.cos(phis), np.sin(phis)])
    cos_table = np.abs((A @ circle).T @ (B @ circle))
    i, j = np.unravel_index(np.argmax(cos_table), cos_table.shape)
    theta1 = np.arccos(min(cos_table[i, j], 1.0))
    a_perp = A @ np.array([-np.sin(phis[i]), np.cos(phis[i])])
    b_perp = B @ np.array([-np.sin(phis[j]), np.cos(phis[j])])
    theta2 = np.arccos(min(abs(float(a_perp @ b_perp)), 1.0))
    assert angles[0] == pytest.approx(theta1, abs=1e-3)
    assert angles[1] == pytest.approx(theta2, abs=1e-3)


def test_principal_angles_rank_deficient():
    rng = np.random.default_rng(16)
    lam = random_measure(rng, 5, 2)
    v = random_fields(rng, 2, 5, 2)
    degenerate = [v[0], 2.0 * v[0]]
    with pytest.raises(RankDeficient):
        spectral.principal_angles(v, v, lam, 3)
    with pytest.raises(RankDeficient):
        spectral.principal_angles(degenerate, v, lam, 2)


def test_subspace_distance_arithmetic():
    assert spectral.subspace_distance([0.0, 0.0]) == 0.0
    assert spectral.subspace_distance([np.pi / 2]) == pytest.approx(1.0, rel=1e-15)
    assert spectral.subspace_distance([np.pi / 6, np.pi / 4]) == pytest.approx(
        np.sqrt(0.25 + 0.5), rel=1e-12)


def test_nonzero_count_threshold():
    assert spectral.nonzero_count(np.array([4.0, 2.0, 4e-11])) == 2
    assert spectral.nonzero_count(np.array([0.0, 0.0])) == 0
    assert spectral.nonzero_count(np.array([])) == 0


def test_rank_estimate_picks_largest_gap():
    assert spectral.rank_estimate(np.array([1.0, 0.5, 1e-4, 1e-5])) == 2
    assert spectral.rank_estimate(np.array([1.0, 0.9, 0.8, 1e-6])) == 3
    # the cap: gaps below the numerical-rank floor do not count
    assert spectral.rank_estimate(np.array([1.0, 1e-11, 1e-12])) == 1
    assert spectral.rank_estimate(np.array([])) == 0


def test_recovery_dilation_exact_in_1d():
    """Quantile maps between dilates of one template are exact, so the
    finite-difference spectra coincide with F(V) at machine precision."""
    fam = families.make_family("dilation",
                               template_spec=TemplateSpec(kind="interval_density_1d",
                                                          resolution=256))
    table = spectral.tangent_recovery_experiment(
        fam, [1.0], [[1.0]], [0.1, 0.25], include_z=True)
    lam = families.embed(fam, [1.0])
    m2 = float((lam.weights * lam.points[:, 0] ** 2).sum())
    assert table.v_rank == 1
    for i in range(2):
        assert table.rank[i] == 1
        assert table.eigenvalues[i, 0] == pytest.approx(m2, rel=1e-10)
        assert table.z_eigenvalues[i, 0] == pytest.approx(m2, rel=1e-10)
        # the Gram-difference formula cancels ~half the digits when the
        # true HS distance is zero, so the floor is sqrt(machine eps)-ish
        assert table.hs_dist[i] < 1e-7
        assert table.subspace_dist[i] < 1e-6


def test_recovery_translation_2d():
    fam = families.make_family("translation",
                               template_spec=TemplateSpec(kind="rect_uniform_2d",
                                                          resolution=8, resolution_y=4),
                               box=((0.0, 1.0), (0.0, 1.0)))
    theta = [0.4, 0.4]
    # three etas spanning two directions: the zero third eigenvalue gives
    # the gap detector something to find (two equal eigenvalues alone don't)
    etas = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    table = spectral.tangent_recovery_experiment(fam, theta, etas, [0.25, 0.5])
    # constant fields e1, e2, e1+e2 give Gram eigenvalues (3, 1, 0)/3
    assert table.v_rank == 2
    np.testing.assert_allclose(table.v_eigenvalues[:2], [1.0, 1 / 3], rtol=1e-12)
    for i in range(2):
        assert table.rank[i] == 2
        np.testing.assert_allclose(table.eigenvalues[i, :2], [1.0, 1 / 3], rtol=0.02)
        assert table.subspace_dist[i] < 0.02


def test_recovery_ode_family_has_rank_one():
    fam = families.make_family("ode_1param",
                               template_spec=TemplateSpec(kind="rect_uniform_2d",
                                                          resolution=12, resolution_y=6))
    # small steps: at larger t the flow's curvature contributes a real
    # second direction of size O(t^2) and the rank estimate sees it
    etas = [[0.3], [0.6], [1.0], [-0.8], [1.2], [-0.5]]
    table = spectral.tangent_recovery_experiment(fam, [0.0], etas, [0.05, 0.1])
    assert table.v_rank == 1
    assert np.all(table.rank == 1)


def test_spectra_table_layout():
    fam = families.make_family("dilation",
                               template_spec=TemplateSpec(kind="interval_density_1d",
                                                          resolution=64))
    table = spectral.tangent_recovery_experiment(
        fam, [1.0], [[1.0]], [0.5, 0.2], include_z=True)
    assert np.all(np.diff(table.t) > 0), "rows come out sorted by t"
    names = table.columns()
    rows = list(table.rows())
    assert len(rows) == 2
    assert all(len(r) == len(names) for r in rows)
    assert names[0] == "t" and names[1] == "rank_estimate"
    assert "z_eig_1" in names


def test_recovery_rejects_bad_step_sizes():
    fam = families.make_family("dilation",
                               template_spec=TemplateSpec(kind="interval_density_1d",
                                                          resolution=64))
    with pytest.raises(ValueError):
        spectral.tangent_recovery_experiment(fam, [1.0], [[1.0]], [])
    with pytest.raises(ValueError):
        spectral.tangent_recovery_experiment(fam, [1.0], [[1.0]], [0.0, 0.5])


def test_gram_input_validation():
    rng = np.random.default_rng(17)
    lam = random_measure(rng, 5, 2)
    with pytest.raises(LengthMismatch):
        spectral.gram([], lam)
    short = SampledVelocityField(np.zeros((3, 2)))
    with pytest.raises(LengthMismatch):
        spectral.gram([short], lam)
    v = random_fields(rng, 2, 5, 2)
    with pytest.raises(CountMismatch):
        spectral.hs_distance(v, v[:1], lam)
