import numpy as np
import pytest

from wassman import gradproj as gp
from wassman.errors import CgNoConvergence, EmptyMask


def disk_field(res, density, values_fn, radius=1.0):
    h = 2.0 / res
    g = -1.0 + (np.arange(res) + 0.5) * h
    X, Y = np.meshgrid(g, g, indexing="ij")
    mask = X ** 2 + Y ** 2 <= radius ** 2
    w = np.where(mask, density(X, Y), 0.0)
    vals = np.zeros((res, res, 2))
    vals[..., 0], vals[..., 1] = values_fn(X, Y)
    return gp.make_grid_field(res, res, h, g[0], g[0], mask, vals, w)


def uniform(X, Y):
    return np.ones_like(X)


def radial_bump(X, Y):
    return 0.1 + np.exp(-(X ** 2 + Y ** 2) / 0.1)


def weighted_inner(field, a, b):
    return float((field.weights[..., np.newaxis] * a * b).sum())


def test_grid_gradient_exact_on_affine_potential():
    f = disk_field(40, uniform, lambda X, Y: (0 * X, 0 * Y))
    phi = 3.0 * (f.x0 + f.h * np.arange(f.nx))[:, None] - 1.5 * (f.y0 + f.h * np.arange(f.ny))[None, :]
    phi = np.where(f.mask, phi, 0.0)
    g = gp.grid_gradient(f, phi)
    # one-sided and central stencils are both exact on affine functions,
    # but only where the stencil never reaches outside the mask
    sx = g[..., 0][f.mask]
    sy = g[..., 1][f.mask]
    assert np.abs(sx - 3.0).max() < 1e-12
    assert np.abs(sy + 1.5).max() < 1e-12


def test_projection_fixes_discrete_gradients():
    rng = np.random.default_rng(2)
    f = disk_field(40, radial_bump, lambda X, Y: (0 * X, 0 * Y))
    phi = np.where(f.mask, rng.normal(size=(f.nx, f.ny)), 0.0)
    # smooth it so the potential is grid-resolvable
    for _ in range(8):
        phi = 0.25 * (gp._shift(phi, 1, 0) + gp._shift(phi, -1, 0)
                      + gp._shift(phi, 0, 1) + gp._shift(phi, 0, -1))
        phi[~f.mask] = 0.0
    v = f.replace_values(gp.grid_gradient(f, phi))
    _, proj = gp.project_to_gradient(v)
    assert np.abs(proj.values - v.values).max() < 1e-8 * max(1.0, np.abs(v.values).max())


def test_projection_kills_rotation_on_symmetric_density():
    f = disk_field(102, radial_bump, lambda X, Y: (-Y, X))
    _, proj = gp.project_to_gradient(f)
    assert proj.l2_norm() < 1e-3 * f.l2_norm()


def test_projection_partial_on_anisotropic_density():
    def aniso(X, Y):
        return 0.1 + np.exp(-(X ** 2 / 0.02 + Y ** 2 / 0.1) / 2.0)

    f = disk_field(64, aniso, lambda X, Y: (-Y, X))
    _, proj = gp.project_to_gradient(f)
    ratio = proj.l2_norm() / f.l2_norm()
    assert 0.05 < ratio < 0.95


def test_projection_idempotent():
    rng = np.random.default_rng(4)
    f = disk_field(32, radial_bump,
                   lambda X, Y: (np.sin(3 * X) + 0.2 * Y, np.cos(2 * Y) * X))
    f = f.replace_values(f.values + 0.05 * rng.normal(size=f.values.shape))
    _, once = gp.project_to_gradient(f)
    _, twice = gp.project_to_gradient(once)
    scale = max(once.l2_norm(), 1e-30)
    assert np.abs(twice.values - once.values).max() < 1e-8 * scale


def test_projection_residual_orthogonal_to_gradients():
    rng = np.random.default_rng(5)
    f = disk_field(32, radial_bump,
                   lambda X, Y: (X * Y - 0.3, np.sin(4 * Y) + X ** 2))
    _, proj = gp.project_to_gradient(f)
    resid = f.values - proj.values
    vnorm = f.l2_norm()
    for _ in range(20):
        psi = np.where(f.mask, rng.normal(size=(f.nx, f.ny)), 0.0)
        g = gp.grid_gradient(f, psi)
        gnorm = np.sqrt(weighted_inner(f, g, g))
        assert abs(weighted_inner(f, resid, g)) < 1e-8 * vnorm * gnorm


def test_projection_contracts_norm():
    f = disk_field(48, radial_bump,
                   lambda X, Y: (np.exp(X) * Y, X - Y ** 3))
    _, proj = gp.project_to_gradient(f)
    assert proj.l2_norm() <= f.l2_norm() + 1e-10


def test_projection_linear_in_input():
    f1 = disk_field(24, radial_bump, lambda X, Y: (-Y, X))
    f2 = disk_field(24, radial_bump, lambda X, Y: (X ** 2, np.sin(Y)))
    combo = f1.replace_values(1.7 * f1.values - 0.6 * f2.values)
    _, pc = gp.project_to_gradient(combo, rel_tol=1e-13)
    _, p1 = gp.project_to_gradient(f1, rel_tol=1e-13)
    _, p2 = gp.project_to_gradient(f2, rel_tol=1e-13)
    lhs = pc.values
    rhs = 1.7 * p1.values - 0.6 * p2.values
    assert np.abs(lhs - rhs).max() < 1e-10 * max(1.0, np.abs(rhs).max())


def test_zero_field_projects_to_zero_exactly():
    f = disk_field(16, uniform, lambda X, Y: (0 * X, 0 * Y))
    phi, proj = gp.project_to_gradient(f)
    assert not phi.any()
    assert not proj.values.any()


def test_empty_mask_rejected():
    f = disk_field(16, uniform, lambda X, Y: (X, Y))
    empty = gp.GridField2D(f.nx, f.ny, f.h, f.x0, f.y0,
                           np.zeros_like(f.mask), f.values, f.weights)
    with pytest.raises(EmptyMask):
        gp.project_to_gradient(empty)
    with pytest.raises(EmptyMask):
        gp.make_grid_field(f.nx, f.ny, f.h, f.x0, f.y0, f.mask,
                           f.values, np.zeros_like(f.weights))


def test_cg_iteration_budget_enforced():
    f = disk_field(32, radial_bump, lambda X, Y: (X + Y, X - Y))
    with pytest.raises(CgNoConvergence):
        gp.project_to_gradient(f, max_iters=1)


def test_sample_bilinear_exact_on_affine_fields():
    f = disk_field(50, uniform, lambda X, Y: (2.0 * X - Y + 0.3, 0.5 * Y + X))
    rng = np.random.default_rng(6)
    pts = rng.uniform(-0.5, 0.5, size=(40, 2))  # all four corners in-mask
    got = gp.sample_bilinear(f, pts)
    want = np.column_stack([2.0 * pts[:, 0] - pts[:, 1] + 0.3,
                            0.5 * pts[:, 1] + pts[:, 0]])
    assert np.abs(got - want).max() < 1e-12


def test_sampling_falls_back_to_nearest_off_mask():
    f = disk_field(20, uniform, lambda X, Y: (np.ones_like(X), 0 * Y))
    outside = np.array([[0.99, 0.99], [-1.4, 0.0]])
    assert np.allclose(gp.sample_bilinear(f, outside), [[1.0, 0.0], [1.0, 0.0]])
    assert np.allclose(gp.sample_nearest(f, outside), [[1.0, 0.0], [1.0, 0.0]])


def test_make_grid_field_normalizes_and_masks():
    res = 10
    h = 2.0 / res
    mask = np.zeros((res, res), dtype=bool)
    mask[3:7, 3:7] = True
    vals = np.ones((res, res, 2))
    w = np.full((res, res), 2.0)
    f = gp.make_grid_field(res, res, h, -1.0, -1.0, mask, vals, w)
    assert f.weights.sum() == pytest.approx(1.0, rel=1e-14)
    assert not f.values[~mask].any()
    assert not f.weights[~mask].any()


def test_cell_index_roundtrip():
    f = disk_field(20, uniform, lambda X, Y: (0 * X, 0 * Y))
    P = np.array([[f.x0 + 3 * f.h, f.y0 + 5 * f.h]])
    u, v = gp.cell_index(f, P)
    assert u[0] == pytest.approx(3.0, abs=1e-12)
    assert v[0] == pytest.approx(5.0, abs=1e-12)
