"""Parametrized deformation families.

Each family supplies a template measure, a parameter box S, the deformation
psi(theta, .), and the induced velocity map eta -> B_theta(eta) sampled on
the deformed support.  Velocities are exact closed forms except for the
disk family, whose raw Eulerian field is projected onto gradient fields
(it contains a rotation component that is not a gradient with respect to
the transported density).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wassman import gradproj as gp
from wassman.errors import (
    NonMonotone,
    OdeStepFailure,
    OutOfParameterBox,
    OutsideRange,
)
from wassman.measures import (
    DiscreteMeasure,
    SampledVelocityField,
    TemplateSpec,
    _freeze,
    as_points,
    discretize_template,
    pushforward,
)

_BOX_SLACK = 1e-12


@dataclass(frozen=True)
class ParameterPoint:
    coords: np.ndarray
    family: "ManifoldFamily"


@dataclass(frozen=True)
class TangentVector:
    base: ParameterPoint
    dir: np.ndarray


class ManifoldFamily:
    """Base: template handling, box checks, and the generic velocity path
    (contract the theta-Jacobian of the deformation against eta)."""

    kind = "abstract"

    def __init__(self, template_spec: TemplateSpec, box):
        self.template_spec = template_spec
        self.template = discretize_template(template_spec)
        self.box = np.asarray(box, dtype=np.float64).reshape(-1, 2)

    @property
    def m(self) -> int:
        return self.box.shape[0]

    def spacing(self) -> float:
        return self.template_spec.spacing()

    def _coords(self, theta) -> np.ndarray:
        c = theta.coords if isinstance(theta, ParameterPoint) else np.asarray(theta, dtype=np.float64).ravel()
        if c.shape[0] != self.m:
            raise OutOfParameterBox(f"expected {self.m} coordinates, got {c.shape[0]}")
        lo, hi = self.box[:, 0], self.box[:, 1]
        if (c < lo - _BOX_SLACK).any() or (c > hi + _BOX_SLACK).any():
            raise OutOfParameterBox(f"{c} outside box {self.box.tolist()}")
        return c

    def point(self, coords) -> ParameterPoint:
        return ParameterPoint(_freeze(self._coords(coords)), self)

    def tangent(self, theta, eta) -> TangentVector:
        base = self.point(theta)
        d = np.asarray(eta, dtype=np.float64).ravel()
        self._coords(base.coords + d)  # tip must stay inside S
        return TangentVector(base, _freeze(d))

    def descriptor(self) -> dict:
        spec = self.template_spec
        return {
            "kind": self.kind,
            "template": [spec.kind, spec.resolution, spec.resolution_y,
                         spec.floor, list(spec.cov_diag)],
            "box": self.box.tolist(),
        }

    # kind hooks ------------------------------------------------------------

    def deform_points(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def theta_jacobian(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        """d psi/d theta at template coordinates X, shape (n, d, m)."""
        raise NotImplementedError

    def velocity_values(self, theta: np.ndarray, eta: np.ndarray) -> np.ndarray:
        return self.theta_jacobian(theta, self.template.points) @ eta

    def eulerian_velocity(self, theta: np.ndarray, eta: np.ndarray, P: np.ndarray) -> np.ndarray:
        """Velocity field evaluated at arbitrary spatial points P."""
        raise NotImplementedError


class TranslationFamily(ManifoldFamily):
    """psi(theta, x) = x + theta on a box S; the flat reference case."""

    kind = "translation"

    def __init__(self, template_spec: TemplateSpec, box):
        super().__init__(template_spec, box)
        if self.m != self.template.dim:
            raise OutOfParameterBox(
                f"translation needs dim(theta) == dim(x); got {self.m} vs {self.template.dim}")

    def deform_points(self, theta, X):
        return X + theta

    def theta_jacobian(self, theta, X):
        return np.broadcast_to(np.eye(self.m), (X.shape[0], self.m, self.m))

    def eulerian_velocity(self, theta, eta, P):
        return np.broadcast_to(eta, P.shape)


class DilationFamily(ManifoldFamily):
    """psi(theta, x) = theta * x for scalar theta > 0."""

    kind = "dilation"

    def deform_points(self, theta, X):
        return theta[0] * X

    def theta_jacobian(self, theta, X):
        return X[:, :, np.newaxis]

    def eulerian_velocity(self, theta, eta, P):
        return (eta[0] / theta[0]) * P


class TanhFamily(ManifoldFamily):
    """1D sum-of-tanh diffeomorphisms.

    psi(theta, x) = x + tanh((x - theta2)/theta3) + tanh((x + theta2)/theta3)
                      + theta1 * tanh(x / 0.3)

    Strictly increasing on all of S = [0,1] x [0,1] x [0.2,1]: every tanh
    term has positive slope there, so psi' >= 1.
    """

    kind = "tanh_1d"

    BOX = ((0.0, 1.0), (0.0, 1.0), (0.2, 1.0))
    FIXED_WIDTH = 0.3

    def __init__(self, template_spec: TemplateSpec):
        super().__init__(template_spec, self.BOX)

    def deform_points(self, theta, X):
        t1, t2, t3 = theta
        x = X[:, 0]
        y = x + np.tanh((x - t2) / t3) + np.tanh((x + t2) / t3) + t1 * np.tanh(x / self.FIXED_WIDTH)
        return y[:, np.newaxis]

    def theta_jacobian(self, theta, X):
        t1, t2, t3 = theta
        x = X[:, 0]
        sm = 1.0 / np.cosh((x - t2) / t3) ** 2
        sp = 1.0 / np.cosh((x + t2) / t3) ** 2
        d1 = np.tanh(x / self.FIXED_WIDTH)
        d2 = (-sm + sp) / t3
        d3 = -(sm * (x - t2) + sp * (x + t2)) / t3 ** 2
        return np.stack([d1, d2, d3], axis=-1)[:, np.newaxis, :]

    def eulerian_velocity(self, theta, eta, P):
        # Clamp queries into the deformed hull: RK stages probe positions a
        # fraction of a step beyond where the flow actually puts particles.
        mapped = self.deform_points(theta, self.template.points)[:, 0]
        q = np.clip(P[:, 0], mapped[0], mapped[-1])
        x = pl_inverse(self.template.points[:, 0], mapped, q)
        return self.theta_jacobian(theta, x[:, np.newaxis]) @ eta


class OdeFamily(ManifoldFamily):
    """Deformation defined by flowing along a rotating two-bump gradient
    field: d psi/d theta = v(theta, psi), psi(0, .) = id, with

        v(theta, y) = sum_i exp(-|y - z_i|^2 / 4) (y - z_i) / 2,

    z_1 = 2 (cos(theta - 0.6), sin(theta - 0.6)), z_2 = -z_1.
    """

    kind = "ode_1param"

    def __init__(self, template_spec: TemplateSpec, box=((-1.0, 1.0),),
                 delta: float = 0.6, n_steps: int = 128):
        super().__init__(template_spec, box)
        self.delta = delta
        self.n_steps = int(n_steps)

    def field(self, s: float, Y: np.ndarray) -> np.ndarray:
        z1 = 2.0 * np.array([np.cos(s - self.delta), np.sin(s - self.delta)])
        out = np.zeros_like(Y)
        for z in (z1, -z1):
            D = Y - z
            out += np.exp(-0.25 * (D * D).sum(axis=1))[:, np.newaxis] * D * 0.5
        return out

    def _flow(self, Y: np.ndarray, a: float, b: float) -> np.ndarray:
        if a == b:
            return Y.copy()
        hstep = (b - a) / self.n_steps
        s = a
        for _ in range(self.n_steps):
            k1 = self.field(s, Y)
            k2 = self.field(s + 0.5 * hstep, Y + 0.5 * hstep * k1)
            k3 = self.field(s + 0.5 * hstep, Y + 0.5 * hstep * k2)
            k4 = self.field(s + hstep, Y + hstep * k3)
            Y = Y + (hstep / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            s += hstep
        if not np.isfinite(Y).all():
            raise OdeStepFailure(f"non-finite state while flowing {a} -> {b}")
        return Y

    def deform_points(self, theta, X):
        return self._flow(X, 0.0, theta[0])

    def inverse_points(self, theta, Y):
        """psi^{-1}(theta, .) by flowing the trajectories backwards."""
        return self._flow(Y, theta[0], 0.0)

    def theta_jacobian(self, theta, X):
        # d psi/d theta equals the driving field at the deformed position.
        return self.field(theta[0], self.deform_points(theta, X))[:, :, np.newaxis]

    def eulerian_velocity(self, theta, eta, P):
        return eta[0] * self.field(theta[0], P)


def _rot(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


class GradprojFamily(ManifoldFamily):
    """Disk family: an anisotropic bump displacement plus a rotation.

    psi(theta, x) = R(theta1 * pi/10) [x + a * theta2 * b(x)],  a = 0.075,
    with b the spatial gradient of a compactly supported bump composed with
    an elliptic radius.  b vanishes where that radius reaches 1, so the
    unit disk maps into itself.  The velocity map projects the raw Eulerian
    field onto gradients with respect to the transported density.
    """

    kind = "gradproj_2d"

    AMPLITUDE = 0.075
    ROT_SCALE = np.pi / 10.0
    _GEN = np.array([[0.0, -1.0], [1.0, 0.0]])

    def __init__(self, template_spec: TemplateSpec, box=((-1.0, 1.0), (-1.0, 1.0)),
                 cg_tol: float = 1e-10):
        super().__init__(template_spec, box)
        r45 = _rot(np.pi / 4.0)
        self._A = r45 @ np.diag([1.8, 1.0]) @ r45.T
        self.cg_tol = cg_tol
        self._grid = None

    # bump geometry ----------------------------------------------------------

    def bump_gradient(self, X: np.ndarray) -> np.ndarray:
        """b(x) = grad(g o r)(x); zero where the elliptic radius r >= 1."""
        AX = X @ self._A
        r2 = (X * AX).sum(axis=1)
        # g(r) = exp(-r^2/0.5^2) * exp(-1/(1-r^2)); the second factor
        # underflows long before 1/(1-r^2)^2 overflows, so gate early.
        inner = 1.0 - r2 > 1e-8
        safe = np.where(inner, 1.0 - r2, 1.0)
        g = np.where(inner, np.exp(-4.0 * r2) * np.exp(-1.0 / safe), 0.0)
        gp_over_r = g * (-8.0 - 2.0 / safe ** 2)
        return gp_over_r[:, np.newaxis] * AX

    def _bump_jac_det(self, X: np.ndarray, t2: float, step: float = 1e-6) -> np.ndarray:
        """det(I + a*t2*Db(x)) with Db by central differences."""
        e1 = np.array([step, 0.0])
        e2 = np.array([0.0, step])
        d1 = (self.bump_gradient(X + e1) - self.bump_gradient(X - e1)) / (2 * step)
        d2 = (self.bump_gradient(X + e2) - self.bump_gradient(X - e2)) / (2 * step)
        a = self.AMPLITUDE * t2
        j11 = 1.0 + a * d1[:, 0]
        j21 = a * d1[:, 1]
        j12 = a * d2[:, 0]
        j22 = 1.0 + a * d2[:, 1]
        return j11 * j22 - j12 * j21

    # deformation ------------------------------------------------------------

    def deform_points(self, theta, X):
        return (X + self.AMPLITUDE * theta[1] * self.bump_gradient(X)) @ _rot(theta[0] * self.ROT_SCALE).T

    def inverse_points(self, theta, Y, tol: float = 1e-13, max_iters: int = 100):
        """psi^{-1} by unrotating, then a fixed-point solve of the bump part
        (a * |Db| < 1, so the iteration contracts)."""
        Xt = Y @ _rot(theta[0] * self.ROT_SCALE)
        a = self.AMPLITUDE * theta[1]
        X = Xt.copy()
        for _ in range(max_iters):
            Xn = Xt - a * self.bump_gradient(X)
            delta = np.abs(Xn - X).max()
            X = Xn
            if delta < tol:
                return X
        raise OutsideRange(f"bump inversion stalled at residual {delta:.2e}")

    def theta_jacobian(self, theta, X):
        psi = self.deform_points(theta, X)
        d1 = self.ROT_SCALE * psi @ self._GEN.T
        d2 = self.AMPLITUDE * self.bump_gradient(X) @ _rot(theta[0] * self.ROT_SCALE).T
        return np.stack([d1, d2], axis=-1)

    # grid transfer and projection -------------------------------------------

    def _grid_geometry(self):
        if self._grid is None:
            nx, ny = self.template_spec.grid_shape()
            h = self.template_spec.spacing()
            x0 = -1.0 + 0.5 * h
            y0 = -1.0 + 0.5 * h
            gx = x0 + h * np.arange(nx)
            gy = y0 + h * np.arange(ny)
            Xg, Yg = np.meshgrid(gx, gy, indexing="ij")
            cells = np.column_stack([Xg.ravel(), Yg.ravel()])
            mask = ((cells * cells).sum(axis=1) <= 1.0).reshape(nx, ny)
            self._grid = (nx, ny, h, x0, y0, mask, cells)
        return self._grid

    def eulerian_grid_field(self, theta, eta) -> gp.GridField2D:
        """Raw (unprojected) velocity and transported density on the disk
        grid.  At theta = 0 the grid cells are the support itself; otherwise
        cells pull back through psi^{-1} for both the field and the density."""
        nx, ny, h, x0, y0, mask, cells = self._grid_geometry()
        flat = mask.ravel()
        pts = cells[flat]
        if np.abs(theta).max() < 1e-14:
            src = pts
            dens = self.template.weights
        else:
            src = self.inverse_points(theta, pts)
            from wassman.measures import disk_density

            spec = self.template_spec
            dens = disk_density(src, spec.floor, spec.cov_diag)
            dens = dens / self._bump_jac_det(src, theta[1])
        vals = self.theta_jacobian(theta, src) @ eta

        values = np.zeros((nx, ny, 2))
        weights = np.zeros((nx, ny))
        values.reshape(-1, 2)[flat] = vals
        weights.ravel()[flat] = dens
        return gp.make_grid_field(nx, ny, h, x0, y0, mask, values, weights)

    def velocity_values(self, theta, eta):
        field = self.eulerian_grid_field(theta, eta)
        _, grad = gp.project_to_gradient(field, rel_tol=self.cg_tol)
        if np.abs(theta).max() < 1e-14:
            return grad.values.reshape(-1, 2)[field.mask.ravel()]
        return gp.sample_bilinear(grad, self.deform_points(theta, self.template.points))

    def eulerian_velocity(self, theta, eta, P):
        field = self.eulerian_grid_field(theta, eta)
        _, grad = gp.project_to_gradient(field, rel_tol=self.cg_tol)
        return gp.sample_nearest(grad, P)


# -- module-level operations ---------------------------------------------------


def deform(fam: ManifoldFamily, theta) -> np.ndarray:
    """psi(theta, x_i) at the template's support points."""
    t = fam._coords(theta)
    out = fam.deform_points(t, fam.template.points)
    if not np.isfinite(out).all():
        raise OdeStepFailure("deformation produced non-finite positions")
    return out


def embed(fam: ManifoldFamily, theta) -> DiscreteMeasure:
    """The measure E(theta): template pushed through the deformation."""
    return pushforward(fam.template, deform(fam, theta))


def velocity(fam: ManifoldFamily, theta, eta) -> SampledVelocityField:
    """B_theta(eta) sampled on the support of embed(fam, theta).

    Linear in eta; eta itself is not box-checked (tangent vectors form a
    linear space), only theta is.
    """
    t = fam._coords(theta)
    e = np.asarray(eta, dtype=np.float64).ravel()
    if e.shape[0] != fam.m:
        raise OutOfParameterBox(f"tangent dim {e.shape[0]} vs parameter dim {fam.m}")
    return SampledVelocityField(_freeze(fam.velocity_values(t, e)))


def pl_inverse(grid: np.ndarray, mapped: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Invert a strictly increasing sampled map by piecewise-linear
    interpolation.  NonMonotone if the samples are not increasing,
    OutsideRange for queries beyond the sampled hull."""
    if not (np.diff(mapped) > 0).all():
        raise NonMonotone("mapped grid values are not strictly increasing")
    q = np.asarray(queries, dtype=np.float64)
    slack = 1e-9 * (mapped[-1] - mapped[0])
    if (q < mapped[0] - slack).any() or (q > mapped[-1] + slack).any():
        raise OutsideRange("query outside the range of the sampled map")
    return np.interp(q, mapped, grid)


def inverse_on_grid(fam: ManifoldFamily, theta, queries) -> np.ndarray:
    """psi^{-1}(theta, q) for 1D-monotone kinds via the template grid."""
    t = fam._coords(theta)
    grid = fam.template.points[:, 0]
    mapped = fam.deform_points(t, fam.template.points)[:, 0]
    return pl_inverse(grid, mapped, np.asarray(queries, dtype=np.float64).ravel())


def velocity_inverse_map(fam: ManifoldFamily, theta, x_values) -> np.ndarray:
    """psi^{-1}(theta, x) for the invertible kinds: piecewise-linear
    inversion for tanh_1d, reverse-time flow for ode_1param."""
    t = fam._coords(theta)
    if fam.kind == "tanh_1d":
        return inverse_on_grid(fam, t, x_values)
    if fam.kind == "ode_1param":
        return fam.inverse_points(t, as_points(x_values))
    raise OutsideRange(f"no inverse map operation for kind {fam.kind!r}")


_DEFAULT_SPECS = {
    "translation": lambda: TemplateSpec("rect_uniform_2d", 8, 4),
    "dilation": lambda: TemplateSpec("interval_density_1d", 512),
    "tanh_1d": lambda: TemplateSpec("interval_density_1d", 2000),
    "ode_1param": lambda: TemplateSpec("rect_uniform_2d", 102, 52),
    "gradproj_2d": lambda: TemplateSpec("disk_density_2d", 102),
}


def make_family(kind: str, template_spec: TemplateSpec | None = None,
                box=None, **params) -> ManifoldFamily:
    """Construct a family by name with sensible desk-scale defaults."""
    if kind not in _DEFAULT_SPECS:
        raise ValueError(f"unknown family kind {kind!r}")
    spec = template_spec or _DEFAULT_SPECS[kind]()
    if kind == "translation":
        d = 1 if spec.kind == "interval_density_1d" else 2
        return TranslationFamily(spec, box if box is not None else [(0.0, 1.0)] * d)
    if kind == "dilation":
        return DilationFamily(spec, box if box is not None else [(0.5, 2.0)])
    if kind == "tanh_1d":
        return TanhFamily(spec)
    if kind == "ode_1param":
        return OdeFamily(spec, box if box is not None else ((-1.0, 1.0),), **params)
    return GradprojFamily(spec, box if box is not None else ((-1.0, 1.0), (-1.0, 1.0)), **params)
