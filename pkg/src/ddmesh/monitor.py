"""Mesh density (monitor) fields on the physical domain.

A monitor field is a strictly positive scalar field rho(x) on the physical
box Omega, normalized so that its integral over Omega is one.  The solver
evaluates a *frozen* field at moving points (the current mesh), so the field
object is immutable; normalization produces a new instance.

Density sources:

* the arc-length function sqrt(1 + |grad u|^2) of an analytic test function,
* the same built from a scalar field sampled on a uniform lattice
  (multilinear interpolation of central-difference gradients),
* an explicit density callback (used by test fixtures).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import quadrature
from .errors import ConfigurationError, DomainError, InvalidMonitorError
from .grid import CompGrid

Extents = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class MonitorField:
    """Positive density on a physical box; ``normalizer`` divides ``raw``.

    ``max_value`` (largest normalized density seen on the normalization
    probe grid) bounds the smallest legitimate equidistributed cell volume;
    the relaxation operator uses it to scale its determinant guard.

    ``u_fn``, when present, is the underlying physical scalar: the solver
    then rebuilds the nodal density each window from u sampled on the
    current mesh (see :func:`mesh_density`) instead of evaluating the
    analytic density at moving points.
    """

    raw: Callable[[np.ndarray], np.ndarray]
    domain: Extents
    normalizer: float = 1.0
    max_value: float | None = None
    u_fn: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def dim(self) -> int:
        return len(self.domain)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at ``points`` shaped (..., dim); raises outside Omega."""
        points = np.asarray(points, dtype=float)
        for k, (a, b) in enumerate(self.domain):
            pk = points[..., k]
            slack = 1e-12 * (b - a)
            if (pk < a - slack).any() or (pk > b + slack).any():
                raise DomainError(
                    f"monitor evaluated outside axis-{k} extent [{a}, {b}]")
        return self.raw(points) / self.normalizer

    def eval_clamped(self, points: np.ndarray) -> np.ndarray:
        """Evaluate with points clamped componentwise into Omega."""
        return self.raw(self.clamp(points)) / self.normalizer

    def clamp(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        lo = np.array([a for a, _ in self.domain])
        hi = np.array([b for _, b in self.domain])
        return np.clip(points, lo, hi)


@dataclass(frozen=True)
class TestFunction:
    """Closed-form physical solution u with its analytic gradient."""

    name: str
    domain: Extents
    u: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)


def arc_length_monitor(source: "TestFunction | SampledField") -> MonitorField:
    """Unnormalized arc-length density sqrt(1 + |grad u|^2) of ``source``."""
    grad = source.gradient
    domain = source.domain

    def raw(points: np.ndarray) -> np.ndarray:
        g = grad(points)
        return np.sqrt(1.0 + np.sum(g * g, axis=-1))

    return MonitorField(raw=raw, domain=domain, u_fn=source.u)


def density_monitor(fn: Callable[[np.ndarray], np.ndarray],
                    domain: Extents) -> MonitorField:
    """Unnormalized monitor from an explicit density callback."""
    return MonitorField(raw=fn, domain=tuple((float(a), float(b))
                                             for a, b in domain))


def probe_axes(domain: Extents, counts: tuple[int, ...]) -> tuple[np.ndarray, ...]:
    return tuple(a + np.arange(n) * ((b - a) / (n - 1))
                 for (a, b), n in zip(domain, counts))


def _trapezoid_mass(fld: MonitorField, counts: tuple[int, ...]) -> tuple[float, float]:
    axes = probe_axes(fld.domain, counts)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    values = fld.raw(mesh)
    if not np.isfinite(values).all() or (values <= 0.0).any():
        raise InvalidMonitorError("density is nonpositive or non-finite on Omega")
    spacing = tuple((b - a) / (n - 1) for (a, b), n in zip(fld.domain, counts))
    return quadrature.integrate(values, spacing), float(values.max())


def normalize(fld: MonitorField, grid: CompGrid,
              z_rtol: float = 1e-5) -> MonitorField:
    """Normalize by composite trapezoid quadrature on uniform probe grids.

    The probe starts at the run resolution and is refined (nodes doubled per
    axis) until the quadrature total settles to ``z_rtol`` relative change.
    A sharp, under-resolved density integrated only at the run resolution
    can misestimate its mass severalfold, which shifts the equidistribution
    target away from 1 everywhere; converging Z keeps the normalized field
    resolution-independent.
    """
    if len(grid.counts) != fld.dim:
        raise ConfigurationError("grid dimension does not match monitor domain")
    cap = 4097 if fld.dim == 2 else 257
    counts = grid.counts
    z, peak = _trapezoid_mass(fld, counts)
    while max(counts) < cap:
        counts = tuple(min(cap, 2 * n - 1) for n in counts)
        z_new, peak = _trapezoid_mass(fld, counts)
        done = abs(z_new - z) <= z_rtol * abs(z_new)
        z = z_new
        if done:
            break
    if not np.isfinite(z) or z <= 0.0:
        raise InvalidMonitorError(f"quadrature of the density is {z}")
    return MonitorField(raw=fld.raw, domain=fld.domain, normalizer=z,
                        max_value=peak / z)


def mesh_density(mon: MonitorField, coords: np.ndarray,
                 spacing: tuple[float, ...],
                 smooth_passes: int = 0) -> np.ndarray:
    """Unnormalized nodal density on a (curvilinear) mesh.

    For a density-only monitor this samples the density at the mesh nodes.
    For a monitor backed by a physical scalar u, the density is rebuilt
    from u *sampled at the mesh nodes*: logical-axis central differences of
    u and of the mesh coordinates give the physical gradient through the
    map Jacobian.  A gradient steeper than the local mesh can represent
    never enters, so under-resolved fronts are equidistributed at the
    strength the mesh actually sees, exactly as when the physical solution
    is only known discretely.  ``smooth_passes`` applies the per-axis
    [1,2,1]/4 averaging to the nodal density.
    """
    pts = mon.clamp(coords)
    if mon.u_fn is None:
        rho = mon.raw(pts)
    else:
        dim = coords.shape[-1]
        u = mon.u_fn(pts)
        grad_xi = [np.gradient(u, spacing[l], axis=l, edge_order=2)
                   for l in range(dim)]
        jac = [[np.gradient(coords[..., k], spacing[l], axis=l, edge_order=2)
                for l in range(dim)] for k in range(dim)]
        g2 = _pullback_gradient_sq(grad_xi, jac)
        rho = np.sqrt(1.0 + g2)
    if smooth_passes:
        rho = _smooth(rho, smooth_passes)
    return rho


def _pullback_gradient_sq(grad_xi: list[np.ndarray],
                          jac: list[list[np.ndarray]]) -> np.ndarray:
    """|grad_x u|^2 from logical derivatives: solve A^T g = grad_xi with
    A = dx/dxi, by explicit adjugate; nodes with a degenerate map get 0."""
    dim = len(grad_xi)
    if dim == 2:
        a, b = jac[0][0], jac[0][1]
        c, d = jac[1][0], jac[1][1]
        det = a * d - b * c
        # A^T g = t  =>  g = adj(A^T) t / det
        gx = d * grad_xi[0] - c * grad_xi[1]
        gy = -b * grad_xi[0] + a * grad_xi[1]
        comps = [gx, gy]
    else:
        m = jac
        det = (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
               - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
               + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
        # adjugate of A^T is the cofactor matrix of A
        cof = [[None] * 3 for _ in range(3)]
        for i in range(3):
            for j in range(3):
                i1, i2 = [r for r in range(3) if r != i]
                j1, j2 = [s for s in range(3) if s != j]
                minor = m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]
                cof[i][j] = minor if (i + j) % 2 == 0 else -minor
        comps = [sum(cof[i][j] * grad_xi[j] for j in range(3))
                 for i in range(3)]
    g2 = sum(c * c for c in comps)
    safe = np.abs(det) > 1e-12
    return np.where(safe, g2 / np.where(safe, det * det, 1.0), 0.0)


# ---------------------------------------------------------------------------
# analytic test functions
# ---------------------------------------------------------------------------

_UNIT_SQUARE: Extents = ((0.0, 1.0), (0.0, 1.0))


def _burgers2d(eps: float) -> TestFunction:
    # u = 1 / (1 + exp((x + y - 1) / (2 eps))); du/da = -u(1-u) for a the
    # exponent argument, which avoids overflow of exp at sharp fronts.
    def u(p):
        a = (p[..., 0] + p[..., 1] - 1.0) / (2.0 * eps)
        return 0.5 * (1.0 - np.tanh(0.5 * a))

    def gradient(p):
        a = (p[..., 0] + p[..., 1] - 1.0) / (2.0 * eps)
        uu = 0.5 * (1.0 - np.tanh(0.5 * a))
        d = -uu * (1.0 - uu) / (2.0 * eps)
        return np.stack([d, d], axis=-1)

    return TestFunction("burgers2d", _UNIT_SQUARE, u, gradient, {"eps": eps})


def _spiral2d() -> TestFunction:
    # u = 1 + 9 / (1 + 100 r^2 cos^2(theta - 20 r^2)) around (0.7, 0.5);
    # the gradient tends to 0 at the spiral center, where theta is undefined.
    def _parts(p):
        dx = p[..., 0] - 0.7
        dy = p[..., 1] - 0.5
        r2 = dx * dx + dy * dy
        g = np.arctan2(dy, dx) - 20.0 * r2
        return dx, dy, r2, g

    def u(p):
        _, _, r2, g = _parts(p)
        return 1.0 + 9.0 / (1.0 + 100.0 * r2 * np.cos(g) ** 2)

    def gradient(p):
        dx, dy, r2, g = _parts(p)
        c2 = np.cos(g) ** 2
        s2g = np.sin(2.0 * g)
        den = 1.0 + 100.0 * r2 * c2
        dDx = 100.0 * (2.0 * dx * c2 + dy * s2g + 40.0 * dx * r2 * s2g)
        dDy = 100.0 * (2.0 * dy * c2 - dx * s2g + 40.0 * dy * r2 * s2g)
        scale = -9.0 / (den * den)
        gx = np.where(r2 > 0.0, scale * dDx, 0.0)
        gy = np.where(r2 > 0.0, scale * dDy, 0.0)
        return np.stack([gx, gy], axis=-1)

    return TestFunction("spiral2d", _UNIT_SQUARE, u, gradient)


def _sphere3d() -> TestFunction:
    # u = tanh(100 (|x|^2 - 0.125)); steep on the sphere of radius sqrt(.125)
    def u(p):
        r2 = np.sum(p * p, axis=-1)
        return np.tanh(100.0 * (r2 - 0.125))

    def gradient(p):
        r2 = np.sum(p * p, axis=-1)
        t = np.tanh(100.0 * (r2 - 0.125))
        return (200.0 * (1.0 - t * t))[..., None] * p

    return TestFunction("sphere3d", (((-1.0, 1.0),) * 3), u, gradient)


_NINE_CENTERS = np.array([
    [0.0, 0.0, 0.0],
    [0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5],
    [-0.5, 0.5, 0.5],
    [-0.5, -0.5, 0.5],
    [0.5, 0.5, -0.5],
    [0.5, -0.5, -0.5],
    [-0.5, 0.5, -0.5],
    [-0.5, -0.5, -0.5],
])


def _nine_spheres3d() -> TestFunction:
    # sum of nine tanh(50 (|x - c_k|^2 - 0.1875)) shells of radius sqrt(.1875)
    def u(p):
        out = np.zeros(p.shape[:-1])
        for c in _NINE_CENTERS:
            d = p - c
            out += np.tanh(50.0 * (np.sum(d * d, axis=-1) - 0.1875))
        return out

    def gradient(p):
        out = np.zeros_like(p)
        for c in _NINE_CENTERS:
            d = p - c
            t = np.tanh(50.0 * (np.sum(d * d, axis=-1) - 0.1875))
            out += (100.0 * (1.0 - t * t))[..., None] * d
        return out

    return TestFunction("nine_spheres3d", (((-2.0, 2.0),) * 3), u, gradient)


def _quasi1d_linear() -> TestFunction:
    # u depends on x only, with u' = sqrt(x^2 + 2x) so that the arc-length
    # density is exactly 1 + x; closed form via the arccosh antiderivative.
    def u(p):
        x = p[..., 0]
        w = x + 1.0
        s = np.sqrt(np.maximum(w * w - 1.0, 0.0))
        return 0.5 * (w * s - np.arccosh(np.maximum(w, 1.0)))

    def gradient(p):
        x = p[..., 0]
        gx = np.sqrt(np.maximum(x * x + 2.0 * x, 0.0))
        return np.stack([gx, np.zeros_like(gx)], axis=-1)

    return TestFunction("quasi1d_linear", _UNIT_SQUARE, u, gradient)


_REGISTRY: dict[str, Callable[..., TestFunction]] = {
    "burgers2d": _burgers2d,
    "spiral2d": _spiral2d,
    "sphere3d": _sphere3d,
    "nine_spheres3d": _nine_spheres3d,
    "quasi1d_linear": _quasi1d_linear,
}


def test_function_registry(name: str, **params) -> TestFunction:
    """Named analytic test functions with their gradients and domains."""
    if name not in _REGISTRY:
        raise ConfigurationError(
            f"unknown test function {name!r}; known: {sorted(_REGISTRY)}")
    if name == "burgers2d":
        eps = float(params.pop("eps", 0.01))
        if eps <= 0.0:
            raise ConfigurationError(f"burgers2d needs eps > 0, got {eps}")
        if params:
            raise ConfigurationError(f"unknown parameters {sorted(params)}")
        return _REGISTRY[name](eps)
    if params:
        raise ConfigurationError(f"{name} takes no parameters, got {sorted(params)}")
    return _REGISTRY[name]()


# ---------------------------------------------------------------------------
# sampled scalar fields
# ---------------------------------------------------------------------------

class SampledField:
    """Scalar u sampled on a uniform lattice over a physical box.

    Gradients use central differences (second-order one-sided at the
    boundary); values between nodes come from multilinear interpolation of
    the gradient component arrays.
    """

    def __init__(self, axes: tuple[np.ndarray, ...], values: np.ndarray,
                 smooth_passes: int = 0):
        self.axes = tuple(np.asarray(ax, dtype=float) for ax in axes)
        values = np.asarray(values, dtype=float)
        if values.shape != tuple(len(ax) for ax in self.axes):
            raise ConfigurationError("sample array shape does not match axes")
        if smooth_passes:
            values = _smooth(values, smooth_passes)
        self.values = values
        self.domain: Extents = tuple((float(ax[0]), float(ax[-1]))
                                     for ax in self.axes)
        spacing = [float(ax[1] - ax[0]) for ax in self.axes]
        grads = [np.gradient(values, h, axis=k, edge_order=2)
                 for k, h in enumerate(spacing)]
        self._interp_u = RegularGridInterpolator(self.axes, values, method="linear")
        self._interp_g = [RegularGridInterpolator(self.axes, g, method="linear")
                          for g in grads]

    def u(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return self._interp_u(points.reshape(-1, len(self.axes))).reshape(points.shape[:-1])

    def gradient(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, len(self.axes))
        comps = [g(flat) for g in self._interp_g]
        return np.stack(comps, axis=-1).reshape(points.shape)


def _smooth(values: np.ndarray, passes: int) -> np.ndarray:
    # per-axis [1, 2, 1]/4 averaging with reflected edges
    out = values
    for _ in range(passes):
        for axis in range(out.ndim):
            lo = np.take(out, [1], axis=axis)
            hi = np.take(out, [-2], axis=axis)
            padded = np.concatenate([lo, out, hi], axis=axis)
            n = out.shape[axis]
            left = np.take(padded, range(0, n), axis=axis)
            mid = np.take(padded, range(1, n + 1), axis=axis)
            right = np.take(padded, range(2, n + 2), axis=axis)
            out = 0.25 * left + 0.5 * mid + 0.25 * right
    return out


def sampled_field_from_csv(path: str, smooth_passes: int = 0) -> SampledField:
    """Read ``x,y[,z],u`` rows covering a full uniform lattice."""
    rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if rows.shape[1] not in (3, 4):
        raise ConfigurationError(
            f"{path}: expected 3 or 4 columns (x,y[,z],u), got {rows.shape[1]}")
    dim = rows.shape[1] - 1
    coords = rows[:, :dim]
    u = rows[:, dim]
    axes = []
    for k in range(dim):
        ax = np.unique(coords[:, k])
        if len(ax) < 3:
            raise ConfigurationError(f"{path}: axis {k} has fewer than 3 levels")
        steps = np.diff(ax)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ConfigurationError(f"{path}: axis {k} is not uniformly spaced")
        axes.append(ax)
    shape = tuple(len(ax) for ax in axes)
    if rows.shape[0] != int(np.prod(shape)):
        raise ConfigurationError(
            f"{path}: {rows.shape[0]} rows do not fill a {shape} lattice")
    order = np.lexsort([coords[:, k] for k in reversed(range(dim))])
    values = u[order].reshape(shape)
    return SampledField(tuple(axes), values, smooth_passes=smooth_passes)


def sampled_field_from_vtk(path: str, smooth_passes: int = 0) -> SampledField:
    """Read a scalar field from the package's structured-grid VTK format."""
    from . import fileio
    axes, values = fileio.read_scalar_field_vtk(path)
    return SampledField(axes, values, smooth_passes=smooth_passes)
