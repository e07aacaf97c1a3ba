"""Non-iterative overlapping Schwarz orchestration of the mesh potential flow.

Each subdomain integrates its own potential over one pseudo-time window with
Dirichlet interface values held fixed; traces are exchanged exactly once per
window.  In *alternating* mode subdomains are processed in ascending id
order, so a subdomain reads already-updated (level n+1) values from
lower-numbered neighbors and level-n values from the rest.  In *parallel*
mode every subdomain reads the immutable level-n snapshot, which makes the
result independent of worker scheduling; a barrier ends each window.

Iteration stops when the chosen reduction (min or max) of the per-subdomain
residuals ||psi^{n+1} - psi^n||_2 drops below the tolerance.  The global
potential and mesh are assembled from the owned sub-boxes (overlap midline
ownership); the residual overlap disagreement is reported as a diagnostic.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import monitor as monitor_mod
from . import pma, quadrature
from .errors import ConfigurationError, InvalidMonitorError, StiffnessError
from .grid import (BoxGeometry, CompGrid, Decomposition, grid_geometry,
                   subdomain_geometry)
from .integrate import IntegrationWindow, make_integrator
from .monitor import MonitorField
from .pma import PhysicalMesh


@dataclass(frozen=True)
class SolverConfig:
    """Pseudo-time window, stopping rule, transmission mode, integrator."""

    dtau: float = 1e-3
    tol: float = 1e-6
    transmission: str = "alternating"   # "alternating" | "parallel"
    stop_rule: str = "min"              # "min" | "max"
    max_windows: int = 5000
    workers: int | None = None          # parallel mode; None = one per subdomain
    scheme: str = "adaptive"            # integrator: "adaptive" | "euler"
    substeps: int = 1
    rtol: float = 1e-3
    atol: float = 1e-6
    max_stages: int = 512
    det_floor: float = pma.DET_FLOOR
    monitor_smooth_passes: int = 0
    monitor_relax: float = 0.0   # blend weight of the previous window's density

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ConfigurationError(f"tol must be > 0, got {self.tol}")
        if self.max_windows < 1:
            raise ConfigurationError("max_windows must be >= 1")
        if self.transmission not in ("alternating", "parallel"):
            raise ConfigurationError(f"unknown transmission {self.transmission!r}")
        if self.stop_rule not in ("min", "max"):
            raise ConfigurationError(f"unknown stop rule {self.stop_rule!r}")

    def window(self) -> IntegrationWindow:
        return IntegrationWindow(dtau=self.dtau, scheme=self.scheme,
                                 substeps=self.substeps, rtol=self.rtol,
                                 atol=self.atol, max_stages=self.max_stages)


@dataclass
class SubdomainState:
    """Mutable per-subdomain solver state for one pseudo-time level."""

    sub: "object"
    geom: BoxGeometry
    psi: np.ndarray
    mesh: PhysicalMesh
    mask: np.ndarray
    integrator: "object"
    res: float = np.inf
    rho_raw: np.ndarray | None = None   # previous window's raw nodal density


@dataclass(frozen=True)
class WindowRecord:
    residuals: tuple[float, ...]
    stop_residual: float
    jac_min: float
    jac_max: float
    seconds: float


@dataclass
class SolveResult:
    """Assembled steady potential/mesh plus per-window history."""

    psi: np.ndarray
    mesh: PhysicalMesh
    sub_psi: list[np.ndarray]
    history: list[WindowRecord] = field(default_factory=list)
    converged: bool = False
    windows: int = 0
    final_residual: float = np.inf
    overlap_gap: float = 0.0

    @property
    def min_jac(self) -> float:
        return float(self.mesh.jac.min())


def residual(psi_new: np.ndarray, psi_old: np.ndarray, geom: BoxGeometry) -> float:
    """Trapezoid-weighted discrete L2 norm of the window update."""
    if psi_new.shape != psi_old.shape:
        raise ValueError(f"field shapes differ: {psi_new.shape} vs {psi_old.shape}")
    return quadrature.l2_norm(psi_new - psi_old, geom.spacing)


def init_states(grid: CompGrid, dec: Decomposition, config: SolverConfig,
                initial: np.ndarray | None = None) -> list[SubdomainState]:
    if initial is None:
        initial = pma.initial_potential(grid_geometry(grid))
    elif initial.shape != grid.counts:
        raise ConfigurationError(
            f"warm-start field shape {initial.shape} != grid {grid.counts}")
    states = []
    for sub in dec.subdomains:
        geom = subdomain_geometry(grid, sub)
        psi = initial[sub.slices()].copy()
        states.append(SubdomainState(
            sub=sub, geom=geom, psi=psi,
            mesh=pma.physical_mesh(psi, geom),
            mask=geom.dirichlet_mask(),
            integrator=make_integrator(config.window())))
    return states


def _apply_traces(state: SubdomainState, sources: list[np.ndarray],
                  dec: Decomposition) -> None:
    """Write neighbor Dirichlet traces onto this subdomain's interface faces.

    Faces are applied in descending donor-id order so that at shared corner
    nodes the earliest (lowest-id) donor's value is the one that sticks.
    """
    sub = state.sub
    dim = len(sub.box)
    for (axis, side), donor_id in sorted(sub.neighbors.items(),
                                         key=lambda kv: -kv[1]):
        donor = dec.subdomains[donor_id]
        line = sub.box[axis][side]
        face: list = [slice(None)] * dim
        face[axis] = -side  # 0 -> low edge, 1 -> high edge (-1)
        donor_ix: list = []
        for a in range(dim):
            if a == axis:
                donor_ix.append(line - donor.box[a][0])
            else:
                donor_ix.append(slice(sub.box[a][0] - donor.box[a][0],
                                      sub.box[a][1] - donor.box[a][0] + 1))
        state.psi[tuple(face)] = sources[donor_id][tuple(donor_ix)]


def _window_densities(states: list[SubdomainState], mon: MonitorField,
                      weights: np.ndarray, smooth_passes: int = 0,
                      relax: float = 0.0) -> tuple[list[np.ndarray], float]:
    """Nodal densities on the level-n meshes, transport-normalized.

    The normalizer is the discrete transport integral sum(w rho J) over the
    owned nodes of all subdomains, i.e. the mesh's own estimate of the
    density mass; with it the equidistribution target is exactly
    satisfiable on this mesh, so the potential's free constant does not
    drift.  Returns the per-subdomain normalized arrays and their max.
    """
    raws = [monitor_mod.mesh_density(mon, st.mesh.coords, st.geom.spacing,
                                     smooth_passes=smooth_passes)
            for st in states]
    if relax > 0.0:
        raws = [raw if st.rho_raw is None
                else (1.0 - relax) * raw + relax * st.rho_raw
                for st, raw in zip(states, raws)]
    for st, raw in zip(states, raws):
        st.rho_raw = raw
    z = 0.0
    for st, raw in zip(states, raws):
        gsl = st.sub.owned_global_slices()
        lsl = st.sub.owned_local_slices()
        z += float(np.sum(weights[gsl] * raw[lsl] * st.mesh.jac[lsl]))
    if not np.isfinite(z) or z <= 0.0:
        raise InvalidMonitorError(
            f"transport quadrature of the mesh density is {z}")
    rho = [raw / z for raw in raws]
    rho_max = max(float(r.max()) for r in rho)
    return rho, rho_max


def _advance_state(state: SubdomainState, rho_values: np.ndarray,
                   rho_max: float, config: SolverConfig,
                   psi_level_n: np.ndarray) -> None:
    """Integrate one window with frozen nodal density; the residual compares
    against the level-n field as it was *before* the fresh traces were
    written."""
    def rhs_fn(y: np.ndarray):
        return pma.pma_rhs_frozen(y, rho_values, state.geom,
                                  det_floor=config.det_floor,
                                  dirichlet_mask=state.mask,
                                  max_rho=rho_max)

    try:
        state.psi = state.integrator.advance(state.psi, rhs_fn)
    except StiffnessError as err:
        err.subdomain = state.sub.id
        raise
    state.mesh = pma.physical_mesh(state.psi, state.geom)
    state.res = residual(state.psi, psi_level_n, state.geom)


def alternating_sweep(states: list[SubdomainState], mon: MonitorField,
                      config: SolverConfig, dec: Decomposition,
                      weights: np.ndarray | None = None) -> None:
    """One serial sweep: each subdomain reads the freshest neighbor values.

    Densities are computed on the level-n meshes for every subdomain before
    any of them advances."""
    if weights is None:
        weights = quadrature.weights(dec.grid.counts, dec.grid.spacing)
    rho, rho_max = _window_densities(states, mon, weights,
                                     config.monitor_smooth_passes,
                                     config.monitor_relax)
    sources = [s.psi for s in states]
    for state in states:
        psi_level_n = state.psi.copy()
        _apply_traces(state, sources, dec)
        _advance_state(state, rho[state.sub.id], rho_max, config, psi_level_n)
        sources[state.sub.id] = state.psi


def parallel_sweep(states: list[SubdomainState], mon: MonitorField,
                   config: SolverConfig, dec: Decomposition,
                   pool: ThreadPoolExecutor | None = None,
                   weights: np.ndarray | None = None) -> None:
    """One parallel sweep: all subdomains read the level-n snapshot.

    Worker scheduling cannot affect the result: reads come from the
    snapshot, each task writes only its own state, and failures are
    reported for the lowest subdomain id.
    """
    if weights is None:
        weights = quadrature.weights(dec.grid.counts, dec.grid.spacing)
    rho, rho_max = _window_densities(states, mon, weights,
                                     config.monitor_smooth_passes,
                                     config.monitor_relax)
    snapshot = [s.psi.copy() for s in states]
    for state in states:
        _apply_traces(state, snapshot, dec)
    if pool is None:
        for state in states:
            _advance_state(state, rho[state.sub.id], rho_max, config,
                           snapshot[state.sub.id])
        return
    futures = [pool.submit(_advance_state, state, rho[state.sub.id], rho_max,
                           config, snapshot[state.sub.id])
               for state in states]
    first_error: BaseException | None = None
    for fut in futures:  # id order; barrier for the window
        err = fut.exception()
        if err is not None and first_error is None:
            first_error = err
    if first_error is not None:
        raise first_error


def _assemble(grid: CompGrid, states: list[SubdomainState]
              ) -> tuple[np.ndarray, PhysicalMesh]:
    psi = np.empty(grid.counts)
    coords = np.empty(grid.counts + (grid.dim,))
    jac = np.empty(grid.counts)
    for st in states:
        gsl = st.sub.owned_global_slices()
        lsl = st.sub.owned_local_slices()
        psi[gsl] = st.psi[lsl]
        coords[gsl] = st.mesh.coords[lsl]
        jac[gsl] = st.mesh.jac[lsl]
    return psi, PhysicalMesh(coords=coords, jac=jac)


def _overlap_gap(states: list[SubdomainState]) -> float:
    """Max |psi_i - psi_j| over all pairwise box intersections."""
    gap = 0.0
    for i, si in enumerate(states):
        for sj in states[i + 1:]:
            common = []
            for (alo, ahi), (blo, bhi) in zip(si.sub.box, sj.sub.box):
                lo, hi = max(alo, blo), min(ahi, bhi)
                if lo > hi:
                    common = None
                    break
                common.append((lo, hi))
            if common is None:
                continue
            sl_i = tuple(slice(lo - b[0], hi - b[0] + 1)
                         for (lo, hi), b in zip(common, si.sub.box))
            sl_j = tuple(slice(lo - b[0], hi - b[0] + 1)
                         for (lo, hi), b in zip(common, sj.sub.box))
            gap = max(gap, float(np.abs(si.psi[sl_i] - sj.psi[sl_j]).max()))
    return gap


def solve(grid: CompGrid, dec: Decomposition, mon: MonitorField,
          config: SolverConfig, initial: np.ndarray | None = None) -> SolveResult:
    """Run windows until the stop rule over subdomain residuals meets tol.

    The monitor field is frozen across each window and evaluated at the
    moving mesh points inside the right-hand side.  ``initial`` warm-starts
    from a previous steady potential (e.g. the prior physical time level).
    Non-convergence within ``max_windows`` is reported on the result, not
    raised; callers decide.
    """
    states = init_states(grid, dec, config, initial)
    reduce_res = min if config.stop_rule == "min" else max
    weights = quadrature.weights(grid.counts, grid.spacing)
    pool: ThreadPoolExecutor | None = None
    if config.transmission == "parallel" and len(states) > 1:
        pool = ThreadPoolExecutor(max_workers=config.workers or len(states))
    history: list[WindowRecord] = []
    converged = False
    stop_res = np.inf
    try:
        for _ in range(config.max_windows):
            t0 = time.perf_counter()
            if config.transmission == "alternating":
                alternating_sweep(states, mon, config, dec, weights)
            else:
                parallel_sweep(states, mon, config, dec, pool, weights)
            stop_res = reduce_res(st.res for st in states)
            history.append(WindowRecord(
                residuals=tuple(st.res for st in states),
                stop_residual=stop_res,
                jac_min=min(float(st.mesh.jac.min()) for st in states),
                jac_max=max(float(st.mesh.jac.max()) for st in states),
                seconds=time.perf_counter() - t0))
            if stop_res <= config.tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    psi, mesh = _assemble(grid, states)
    return SolveResult(psi=psi, mesh=mesh, sub_psi=[st.psi for st in states],
                       history=history, converged=converged,
                       windows=len(history), final_residual=stop_res,
                       overlap_gap=_overlap_gap(states))


def solve_single_domain(grid: CompGrid, mon: MonitorField, config: SolverConfig,
                        initial: np.ndarray | None = None) -> SolveResult:
    """Plain whole-domain relaxation (no decomposition machinery)."""
    geom = grid_geometry(grid)
    psi = pma.initial_potential(geom) if initial is None else initial.copy()
    if psi.shape != grid.counts:
        raise ConfigurationError(
            f"warm-start field shape {psi.shape} != grid {grid.counts}")
    mask = geom.dirichlet_mask()
    integrator = make_integrator(config.window())
    weights = quadrature.weights(grid.counts, grid.spacing)

    history: list[WindowRecord] = []
    converged = False
    res = np.inf
    rho_prev = None
    mesh = pma.physical_mesh(psi, geom)
    for _ in range(config.max_windows):
        t0 = time.perf_counter()
        raw = monitor_mod.mesh_density(mon, mesh.coords, geom.spacing,
                                       smooth_passes=config.monitor_smooth_passes)
        if config.monitor_relax > 0.0 and rho_prev is not None:
            raw = (1.0 - config.monitor_relax) * raw + config.monitor_relax * rho_prev
        rho_prev = raw
        z = float(np.sum(weights[tuple(slice(0, n) for n in grid.counts)]
                         * raw[tuple(slice(0, n) for n in grid.counts)]
                         * mesh.jac[tuple(slice(0, n) for n in grid.counts)]))
        if not np.isfinite(z) or z <= 0.0:
            raise InvalidMonitorError(
                f"transport quadrature of the mesh density is {z}")
        rho_values = raw / z
        rho_max = float(rho_values.max())

        def rhs_fn(y: np.ndarray, rho=rho_values, mx=rho_max):
            return pma.pma_rhs_frozen(y, rho, geom,
                                      det_floor=config.det_floor,
                                      dirichlet_mask=mask,
                                      max_rho=mx)

        psi_old = psi
        psi = integrator.advance(psi, rhs_fn)
        mesh = pma.physical_mesh(psi, geom)
        res = residual(psi, psi_old, geom)
        history.append(WindowRecord(
            residuals=(res,), stop_residual=res,
            jac_min=float(mesh.jac.min()), jac_max=float(mesh.jac.max()),
            seconds=time.perf_counter() - t0))
        if res <= config.tol:
            converged = True
            break
    return SolveResult(psi=psi, mesh=mesh, sub_psi=[psi],
                       history=history, converged=converged,
                       windows=len(history), final_residual=res,
                       overlap_gap=0.0)
