"""Spatially discretized parabolic Monge-Ampere operator.

The potential evolves by d(psi)/dtau = log(|Omega_c| rho(grad psi) det H(psi))
with a sliding (Neumann) condition on physical faces: the normal derivative
equals the node's own coordinate component, which pins mesh points to the
boundary while letting them slide along it.

Stencils are second order throughout: centered differences inside, ghost-node
reflection consistent with the Neumann condition at physical faces, and
one-sided differences at subdomain interface faces (whose nodes carry
Dirichlet data and do not evolve).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid import PHYSICAL, BoxGeometry

DET_FLOOR = 1e-12


@dataclass
class PotentialField:
    """Nodal values of the mesh potential on one index box."""

    values: np.ndarray
    geom: BoxGeometry
    tau: float = 0.0


@dataclass(frozen=True)
class PhysicalMesh:
    """Mesh map x = grad(psi) and its Jacobian determinant per node."""

    coords: np.ndarray  # (*counts, dim)
    jac: np.ndarray     # (*counts,)

    @property
    def dim(self) -> int:
        return self.coords.shape[-1]

    def min_jac(self) -> float:
        return float(self.jac.min())


class RhsEval(NamedTuple):
    values: np.ndarray
    det_clamped: bool


def _sl(ndim: int, axis: int, index) -> tuple:
    s: list = [slice(None)] * ndim
    s[axis] = index
    return tuple(s)


def initial_potential(geom: BoxGeometry) -> np.ndarray:
    """psi0 = |xi|^2 / 2, whose gradient is the identity map."""
    squares = np.meshgrid(*[ax * ax for ax in geom.axes], indexing="ij")
    return 0.5 * np.sum(squares, axis=0)


def gradient_fd(psi: np.ndarray, geom: BoxGeometry) -> list[np.ndarray]:
    """Per-axis discrete gradient of psi (the mesh coordinates).

    Interior and interface-face nodes use centered / one-sided second-order
    differences; on a physical face the normal component is the face
    coordinate itself, exactly.
    """
    nd = psi.ndim
    out = []
    for k in range(nd):
        g = np.gradient(psi, geom.spacing[k], axis=k, edge_order=2)
        lo_kind, hi_kind = geom.faces[k]
        if lo_kind == PHYSICAL:
            g[_sl(nd, k, 0)] = geom.axes[k][0]
        if hi_kind == PHYSICAL:
            g[_sl(nd, k, -1)] = geom.axes[k][-1]
        out.append(g)
    return out


def _second_diff(psi: np.ndarray, k: int, geom: BoxGeometry) -> np.ndarray:
    """d2 psi / d xi_k^2 with Neumann ghost reflection at physical faces."""
    nd = psi.ndim
    h = geom.spacing[k]
    n = psi.shape[k]
    out = np.empty_like(psi)
    mid = _sl(nd, k, slice(1, -1))
    out[mid] = (psi[_sl(nd, k, slice(2, None))]
                - 2.0 * psi[mid]
                + psi[_sl(nd, k, slice(None, -2))]) / (h * h)
    lo_kind, hi_kind = geom.faces[k]
    f0, f1 = psi[_sl(nd, k, 0)], psi[_sl(nd, k, 1)]
    fm1, fm2 = psi[_sl(nd, k, -1)], psi[_sl(nd, k, -2)]
    if lo_kind == PHYSICAL:
        # ghost = psi[1] - 2 h a  (slope at the face is the face coordinate a)
        out[_sl(nd, k, 0)] = 2.0 * (f1 - f0 - h * geom.axes[k][0]) / (h * h)
    elif n >= 4:
        f2, f3 = psi[_sl(nd, k, 2)], psi[_sl(nd, k, 3)]
        out[_sl(nd, k, 0)] = (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h)
    else:
        out[_sl(nd, k, 0)] = out[_sl(nd, k, 1)]
    if hi_kind == PHYSICAL:
        out[_sl(nd, k, -1)] = 2.0 * (fm2 - fm1 + h * geom.axes[k][-1]) / (h * h)
    elif n >= 4:
        f2, f3 = psi[_sl(nd, k, -3)], psi[_sl(nd, k, -4)]
        out[_sl(nd, k, -1)] = (2.0 * fm1 - 5.0 * fm2 + 4.0 * f2 - f3) / (h * h)
    else:
        out[_sl(nd, k, -1)] = out[_sl(nd, k, -2)]
    return out


def _cross_diff(psi: np.ndarray, k: int, l: int, geom: BoxGeometry) -> np.ndarray:
    """Mixed second derivative; exactly zero along physical faces of either
    axis, where the Neumann condition makes the normal slope constant."""
    nd = psi.ndim
    g = np.gradient(psi, geom.spacing[l], axis=l, edge_order=2)
    g = np.gradient(g, geom.spacing[k], axis=k, edge_order=2)
    for axis in (k, l):
        lo_kind, hi_kind = geom.faces[axis]
        if lo_kind == PHYSICAL:
            g[_sl(nd, axis, 0)] = 0.0
        if hi_kind == PHYSICAL:
            g[_sl(nd, axis, -1)] = 0.0
    return g


def hessian_det_fd(psi: np.ndarray, geom: BoxGeometry) -> np.ndarray:
    """Determinant of the discrete Hessian of psi at every node."""
    nd = psi.ndim
    if nd == 2:
        h00 = _second_diff(psi, 0, geom)
        h11 = _second_diff(psi, 1, geom)
        h01 = _cross_diff(psi, 0, 1, geom)
        return h00 * h11 - h01 * h01
    h00 = _second_diff(psi, 0, geom)
    h11 = _second_diff(psi, 1, geom)
    h22 = _second_diff(psi, 2, geom)
    h01 = _cross_diff(psi, 0, 1, geom)
    h02 = _cross_diff(psi, 0, 2, geom)
    h12 = _cross_diff(psi, 1, 2, geom)
    return (h00 * (h11 * h22 - h12 * h12)
            - h01 * (h01 * h22 - h12 * h02)
            + h02 * (h01 * h12 - h11 * h02))


def pma_rhs(psi: np.ndarray, monitor, geom: BoxGeometry,
            det_floor: float = DET_FLOOR,
            dirichlet_mask: np.ndarray | None = None) -> RhsEval:
    """d(psi)/dtau = log(|Omega_c| rho(grad psi) det H(psi)) per node.

    Gradient points are clamped into Omega before evaluating the monitor.
    A determinant at or below ``det_floor`` raises the positivity flag (the
    adaptive integrator treats the flag as a failed step).  The log argument
    itself is guarded more gently: below a tenth of the smallest
    equidistributed cell volume 1/(|Omega_c| max rho), the determinant is
    continued by a C1 rational saturation.  A hard clamp at ``det_floor``
    turns the log into a ~ -25 step function against neighboring nodes,
    which demonstrably locks coarse-grid subdomain transients into a
    tangle/heal limit cycle; the saturation keeps the restoring drive
    bounded and monotone while leaving healthy nodes bit-identical.
    Dirichlet (interface) nodes get rhs = 0: the traces hold their values.
    """
    grads = gradient_fd(psi, geom)
    points = np.stack(grads, axis=-1)
    rho = monitor.eval_clamped(points)
    det = hessian_det_fd(psi, geom)
    if dirichlet_mask is None:
        dirichlet_mask = geom.dirichlet_mask()
    bad = det <= det_floor
    if dirichlet_mask.any():
        bad &= ~dirichlet_mask
    clamped = bool(bad.any())
    max_rho = getattr(monitor, "max_value", None)
    rhs = _log_equidistribution(rho, det, geom.domain_measure, det_floor, max_rho)
    if dirichlet_mask.any():
        rhs[dirichlet_mask] = 0.0
    return RhsEval(rhs, clamped)


def _log_equidistribution(rho: np.ndarray, det: np.ndarray, measure: float,
                          det_floor: float, max_rho: float | None) -> np.ndarray:
    guard = det_floor
    if max_rho:
        guard = max(det_floor, 0.1 / (measure * max_rho))
    det_eff = np.where(det >= guard, det, guard / (2.0 - det / guard))
    return np.log(measure * rho * np.maximum(det_eff, det_floor))


def pma_rhs_frozen(psi: np.ndarray, rho_values: np.ndarray, geom: BoxGeometry,
                   det_floor: float = DET_FLOOR,
                   dirichlet_mask: np.ndarray | None = None,
                   max_rho: float | None = None) -> RhsEval:
    """Window right-hand side with the density frozen at its window-start
    nodal values (the density array computed once on the entering mesh).

    Freezing the nodal values removes the monitor-gradient feedback from
    the window ODE, which is what makes explicit windows tractable when the
    density varies orders of magnitude across a cell; the evaluation points
    catch up between windows.  Fixed points agree with the moving-point
    form: at steady state the mesh stops, so frozen and moving evaluations
    coincide.
    """
    det = hessian_det_fd(psi, geom)
    if dirichlet_mask is None:
        dirichlet_mask = geom.dirichlet_mask()
    bad = det <= det_floor
    if dirichlet_mask.any():
        bad &= ~dirichlet_mask
    rhs = _log_equidistribution(rho_values, det, geom.domain_measure,
                                det_floor, max_rho)
    if dirichlet_mask.any():
        rhs[dirichlet_mask] = 0.0
    return RhsEval(rhs, bool(bad.any()))


def physical_mesh(psi: np.ndarray, geom: BoxGeometry) -> PhysicalMesh:
    """Mesh coordinates and Jacobian determinant for a potential."""
    coords = np.stack(gradient_fd(psi, geom), axis=-1)
    return PhysicalMesh(coords=coords, jac=hessian_det_fd(psi, geom))
