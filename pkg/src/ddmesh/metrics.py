"""Mesh quality, relative-error, and convergence-slope diagnostics.

The pointwise quality measure is the equidistribution defect
``|Omega_c| rho(grad psi) det H(psi)``: exactly one on a perfect mesh, so
norms near one indicate a well-equidistributed mesh.  The quasi-1D oracle
inverts a closed-form density antiderivative with bisection plus Newton and
gives an independent exact map to test the solver against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import monitor as monitor_mod
from . import pma, quadrature
from .errors import ConfigurationError, InvalidMonitorError
from .grid import BoxGeometry, CompGrid, grid_geometry
from .monitor import MonitorField


@dataclass(frozen=True)
class QualityReport:
    """Equidistribution defect field and its norms."""

    e_adp: np.ndarray
    e2: float          # measure-normalized discrete L2 (constant 1 -> 1)
    emax: float
    node_mean: float
    tangled: bool      # any nonpositive Jacobian determinant

    def __str__(self) -> str:
        flag = " TANGLED" if self.tangled else ""
        return (f"E2 = {self.e2:.4f}  Emax = {self.emax:.4f}  "
                f"mean = {self.node_mean:.4f}{flag}")


@dataclass(frozen=True)
class ErrorReport:
    """Relative L1/L2/Linf differences between two potentials."""

    e1: float
    e2: float
    einf: float
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual: float    # RMS residual of the least-squares fit in log space


def quality_measure(psi: np.ndarray, mon: MonitorField,
                    grid: CompGrid | BoxGeometry,
                    sample_on_mesh: bool = False,
                    smooth_passes: int = 0) -> QualityReport:
    """Per-node |Omega_c| rho(grad psi) J for a steady potential.

    The density must be the one the solve equidistributed: with
    ``sample_on_mesh`` the nodal density is rebuilt from the physical
    scalar sampled on the final mesh and transport-normalized, matching
    the solver's window densities (pass the solve's smoothing setting);
    otherwise the analytic field (with its quadrature normalizer) is
    evaluated at the mesh points.
    """
    geom = grid_geometry(grid) if isinstance(grid, CompGrid) else grid
    coords = np.stack(pma.gradient_fd(psi, geom), axis=-1)
    jac = pma.hessian_det_fd(psi, geom)
    w = quadrature.weights(jac.shape, geom.spacing)
    if sample_on_mesh:
        raw = monitor_mod.mesh_density(mon, coords, geom.spacing,
                                       smooth_passes=smooth_passes)
        rho = raw / float(np.sum(w * raw * jac))
    else:
        rho = mon.eval_clamped(coords)
    e_adp = geom.domain_measure * rho * jac
    e2 = float(np.sqrt(np.sum(w * e_adp * e_adp) / np.sum(w)))
    return QualityReport(e_adp=e_adp, e2=e2,
                         emax=float(np.abs(e_adp).max()),
                         node_mean=float(e_adp.mean()),
                         tangled=bool((jac <= 0.0).any()))


def restrict_to_grid(fine: np.ndarray, coarse_counts: tuple[int, ...]) -> np.ndarray:
    """Restrict nodal values on a fine grid to a nested coarse grid."""
    slices = []
    for nf, nc in zip(fine.shape, coarse_counts):
        stride, rem = divmod(nf - 1, nc - 1)
        if rem != 0:
            raise ConfigurationError(
                f"grids are not nested: {nf} nodes cannot restrict to {nc}")
        slices.append(slice(None, None, stride))
    return fine[tuple(slices)]


def relative_errors(psi_dd: np.ndarray, psi_sd: np.ndarray,
                    grid: CompGrid | BoxGeometry,
                    meta: dict | None = None) -> ErrorReport:
    """L1/L2 relative errors by trapezoid quadrature, Linf as a max ratio.

    Both fields must live on the comparison grid; restrict a finer
    reference with :func:`restrict_to_grid` first.
    """
    geom = grid_geometry(grid) if isinstance(grid, CompGrid) else grid
    if psi_dd.shape != psi_sd.shape:
        raise ConfigurationError(
            f"fields not on a common grid: {psi_dd.shape} vs {psi_sd.shape}")
    diff = np.abs(psi_sd - psi_dd)
    ref = np.abs(psi_sd)
    w = quadrature.weights(diff.shape, geom.spacing)
    e1 = float(np.sum(w * diff) / np.sum(w * ref))
    e2 = float(np.sqrt(np.sum(w * diff * diff) / np.sum(w * ref * ref)))
    einf = float(diff.max() / ref.max())
    return ErrorReport(e1=e1, e2=e2, einf=einf, meta=meta or {})


def convergence_slope(points: list[tuple[float, float]]) -> SlopeFit:
    """Least-squares slope of log(error) against log(scale)."""
    if len(points) < 3:
        raise ConfigurationError(
            f"need at least 3 (scale, error) points, got {len(points)}")
    scales = np.array([p[0] for p in points], dtype=float)
    errors = np.array([p[1] for p in points], dtype=float)
    if (scales <= 0).any() or (errors <= 0).any():
        raise ConfigurationError("scales and errors must be positive")
    x = np.log(scales)
    y = np.log(errors)
    coeffs, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = float(np.sqrt(res[0] / len(points))) if len(res) else 0.0
    return SlopeFit(slope=float(coeffs[0]), intercept=float(coeffs[1]),
                    residual=rms)


def quasi1d_oracle(rho: Callable[[np.ndarray], np.ndarray],
                   antiderivative: Callable[[np.ndarray], np.ndarray],
                   n: int) -> np.ndarray:
    """Exact 1D equidistributed map x(xi_i) on n uniform nodes of [0, 1].

    Solves R(x) = xi to 1e-12 (R the normalized antiderivative of the
    density) by bisection bracketing followed by Newton polish.
    """
    probe = np.linspace(0.0, 1.0, 4097)
    r_probe = antiderivative(probe)
    if (np.diff(r_probe) <= 0.0).any():
        raise InvalidMonitorError("density antiderivative is not increasing")
    if abs(float(antiderivative(np.array(0.0)))) > 1e-9 \
            or abs(float(antiderivative(np.array(1.0))) - 1.0) > 1e-9:
        raise InvalidMonitorError("antiderivative is not normalized on [0, 1]")

    xi = np.arange(n) / (n - 1)
    lo = np.zeros(n)
    hi = np.ones(n)
    for _ in range(40):  # bisection to ~1e-12 brackets
        mid = 0.5 * (lo + hi)
        below = antiderivative(mid) < xi
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    for _ in range(4):   # Newton polish; rho = R' > 0
        x = np.clip(x - (antiderivative(x) - xi) / rho(x), 0.0, 1.0)
    x[0], x[-1] = 0.0, 1.0
    return x
