"""Batch experiment drivers: mesh runs, convergence studies, timing.

Every driver takes a :class:`~ddmesh.fileio.RunConfig`, returns an
:class:`ExperimentResult` with one row per sweep point, and never renders
plots: the CSV columns are documented here so any plotting tool can
reproduce the figures.  Desk-scale defaults keep runs CI-sized; the CLI's
``--paper-scale`` flag restores the original protocol sizes.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import fileio, metrics, monitor as monitor_mod, schwarz
from .errors import ConfigurationError
from .fileio import RunConfig
from .grid import CompGrid, Decomposition, build_decomposition, build_grid
from .metrics import SlopeFit
from .monitor import MonitorField
from .schwarz import SolveResult, SolverConfig

_MONITOR_DIMS = {"burgers2d": 2, "spiral2d": 2, "quasi1d_linear": 2,
                 "sphere3d": 3, "nine_spheres3d": 3}


@dataclass
class ExperimentResult:
    """Sweep rows plus derived slopes and explicit failure records."""

    name: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    slopes: dict[str, SlopeFit] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_csv(self, path: str) -> None:
        fileio.write_field_csv(path, self.columns, self.rows)

    def summary(self) -> str:
        lines = [f"experiment: {self.name}"]
        lines.append("  " + " | ".join(self.columns))
        for row in self.rows:
            lines.append("  " + " | ".join(
                f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
        for label, fit in self.slopes.items():
            lines.append(f"  slope[{label}] = {fit.slope:.3f} "
                         f"(lsq residual {fit.residual:.2e})")
        for note in self.notes:
            lines.append(f"  note: {note}")
        for fail in self.failures:
            lines.append(f"  FAILURE: {fail}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# construction from a RunConfig
# ---------------------------------------------------------------------------

def build_run_monitor(cfg: RunConfig) -> MonitorField:
    """Unnormalized monitor for the configured source."""
    name = cfg.monitor_name
    if name == "sampled":
        if cfg.monitor_csv:
            src = monitor_mod.sampled_field_from_csv(
                cfg.monitor_csv, smooth_passes=cfg.smooth_passes)
        elif cfg.monitor_vtk:
            src = monitor_mod.sampled_field_from_vtk(
                cfg.monitor_vtk, smooth_passes=cfg.smooth_passes)
        else:
            raise ConfigurationError(
                "monitor.name = sampled needs monitor.csv or monitor.vtk")
        return monitor_mod.arc_length_monitor(src)
    if name == "uniform":
        extents = cfg.extents or ((0.0, 1.0), (0.0, 1.0))
        return monitor_mod.density_monitor(
            lambda p: np.ones(p.shape[:-1]), extents)
    if cfg.smooth_passes:
        raise ConfigurationError("smoothing applies to sampled monitors only")
    params = {"eps": cfg.monitor_eps} if name == "burgers2d" else {}
    return monitor_mod.arc_length_monitor(
        monitor_mod.test_function_registry(name, **params))


def run_dimension(cfg: RunConfig) -> int:
    if cfg.extents is not None:
        return len(cfg.extents)
    if cfg.monitor_name in _MONITOR_DIMS:
        return _MONITOR_DIMS[cfg.monitor_name]
    return 2


def build_run_grid(cfg: RunConfig, raw_monitor: MonitorField,
                   nx: int | None = None) -> CompGrid:
    """The computational box must coincide with the physical box: the
    sliding boundary condition pins mesh faces to the computational faces."""
    dim = run_dimension(cfg)
    extents = cfg.extents or raw_monitor.domain
    if tuple(extents) != tuple(raw_monitor.domain):
        raise ConfigurationError(
            f"grid extents {extents} must equal the monitor domain "
            f"{raw_monitor.domain}")
    n0 = nx or cfg.nx
    counts = [n0, cfg.ny or n0, cfg.nz or n0][:dim]
    return build_grid(dim, extents, tuple(counts))


def padded_layout(layout: tuple[int, ...], dim: int) -> tuple[int, ...]:
    if len(layout) > dim:
        raise ConfigurationError(f"layout {layout} has more axes than dim {dim}")
    return layout + (1,) * (dim - len(layout))


def build_run_decomposition(cfg: RunConfig, grid: CompGrid,
                            overlap: int | None = None) -> Decomposition:
    return build_decomposition(grid, padded_layout(cfg.layout, grid.dim),
                               overlap or cfg.overlap)


def solver_config(cfg: RunConfig, **overrides) -> SolverConfig:
    values = dict(dtau=cfg.dtau, tol=cfg.tol, transmission=cfg.mode,
                  stop_rule=cfg.stop_rule, max_windows=cfg.max_windows,
                  workers=cfg.workers or None, scheme=cfg.scheme,
                  substeps=cfg.substeps, rtol=cfg.rtol, atol=cfg.atol,
                  max_stages=cfg.max_stages)
    values.update(overrides)
    return SolverConfig(**values)


def prepared_run(cfg: RunConfig, nx: int | None = None,
                 overlap: int | None = None):
    raw = build_run_monitor(cfg)
    grid = build_run_grid(cfg, raw, nx=nx)
    mon = monitor_mod.normalize(raw, grid)
    dec = build_run_decomposition(cfg, grid, overlap=overlap)
    return grid, dec, mon


# ---------------------------------------------------------------------------
# mesh generation runs
# ---------------------------------------------------------------------------

def run_mesh(cfg: RunConfig, out_dir: str | None = None) -> ExperimentResult:
    """Solve one configuration; write the mesh (VTK) and a quality row.

    Columns: monitor, n, layout, overlap, mode, windows, converged,
    final_residual, min_jac, e2, emax, e_mean.
    """
    grid, dec, mon = prepared_run(cfg)
    result = schwarz.solve(grid, dec, mon, solver_config(cfg))
    quality = metrics.quality_measure(result.psi, mon, grid)
    out = ExperimentResult(
        name="mesh",
        columns=["monitor", "n", "layout", "overlap", "mode", "windows",
                 "converged", "final_residual", "min_jac", "e2", "emax",
                 "e_mean"])
    layout_txt = "x".join(str(m) for m in padded_layout(cfg.layout, grid.dim))
    out.rows.append([cfg.monitor_name, grid.counts[0], layout_txt, cfg.overlap,
                     cfg.mode, result.windows, result.converged,
                     result.final_residual, result.min_jac, quality.e2,
                     quality.emax, quality.node_mean])
    if not result.converged:
        out.failures.append(
            f"no steady state within {cfg.max_windows} windows "
            f"(residual {result.final_residual:.3e})")
    if quality.tangled:
        out.failures.append("mesh is tangled (nonpositive Jacobian)")
    out.notes.append(f"overlap max disagreement {result.overlap_gap:.3e}")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        stem = f"mesh_{cfg.monitor_name}_{grid.counts[0]}_{layout_txt}"
        fileio.write_mesh_vtk(result.mesh, os.path.join(out_dir, stem + ".vtk"),
                              e_adp=quality.e_adp)
        out.to_csv(os.path.join(out_dir, stem + ".csv"))
    return out


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

def _relative_error_row(result_psi: np.ndarray, ref_psi: np.ndarray,
                        grid: CompGrid, meta: dict) -> metrics.ErrorReport:
    ref_on_grid = metrics.restrict_to_grid(ref_psi, grid.counts)
    return metrics.relative_errors(result_psi, ref_on_grid, grid, meta=meta)


def run_spatial_convergence(cfg: RunConfig, out_dir: str | None = None,
                            synthetic: list[tuple[float, float, float, float]]
                            | None = None) -> ExperimentResult:
    """Grid-refinement study against a fine single-domain surrogate.

    The reference is a whole-domain run on ``space.ref_n`` nodes per axis
    with a 10x stricter tolerance; each study grid runs the decomposed
    solver for exactly ``space.windows`` windows (window-budget protocol).
    Columns: n, h, e1, e2, einf.  Slopes of log(error) vs log(h) follow.

    ``synthetic`` rows ((h, e1, e2, einf)) skip the solves and exercise only
    the aggregation; used by tests.
    """
    out = ExperimentResult(name="conv-space",
                           columns=["n", "h", "e1", "e2", "einf"])
    if synthetic is None:
        for n in cfg.space_grids:
            if (cfg.space_ref_n - 1) % (n - 1) != 0:
                raise ConfigurationError(
                    f"study grid {n} is not nested in reference {cfg.space_ref_n}")
        raw = build_run_monitor(cfg)
        ref_grid = build_run_grid(cfg, raw, nx=cfg.space_ref_n)
        ref_mon = monitor_mod.normalize(raw, ref_grid)
        ref = schwarz.solve_single_domain(
            ref_grid, ref_mon,
            solver_config(cfg, dtau=cfg.space_ref_dtau, tol=0.1 * cfg.tol,
                          scheme="adaptive"))
        if not ref.converged:
            out.failures.append("reference run hit the window cap")
        for n in cfg.space_grids:
            grid, dec, mon = prepared_run(cfg, nx=n)
            res = schwarz.solve(grid, dec, mon,
                                solver_config(cfg, tol=1e-15,
                                              max_windows=cfg.space_windows))
            h = grid.spacing[0]
            rep = _relative_error_row(res.psi, ref.psi, grid, {"n": n})
            out.rows.append([n, h, rep.e1, rep.e2, rep.einf])
    else:
        for h, e1, e2, einf in synthetic:
            out.rows.append([0, h, e1, e2, einf])
    out.slopes["e1"] = metrics.convergence_slope(
        [(row[1], row[2]) for row in out.rows])
    out.slopes["e2"] = metrics.convergence_slope(
        [(row[1], row[3]) for row in out.rows])
    out.slopes["einf"] = metrics.convergence_slope(
        [(row[1], row[4]) for row in out.rows])
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        out.to_csv(os.path.join(out_dir, "conv_space.csv"))
    return out


def run_temporal_convergence(cfg: RunConfig, out_dir: str | None = None
                             ) -> ExperimentResult:
    """Window-size study in forward-Euler mode at a fixed grid.

    All runs integrate to the same pseudo-time horizon T = ``time.horizon``
    in units of the cell area; the reference is a whole-domain Euler run
    with the (much smaller) ``time.ref_factor`` window.  First-order
    convergence in the window length is the expected outcome.
    Columns: factor, dtau, windows, e1, e2, einf.
    """
    out = ExperimentResult(name="conv-time",
                           columns=["factor", "dtau", "windows",
                                    "e1", "e2", "einf"])
    grid, dec, mon = prepared_run(cfg)
    cell = float(np.prod(grid.spacing))
    horizon = cfg.time_horizon

    def window_count(factor: float) -> int:
        steps = horizon / factor
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigurationError(
                f"time.horizon {horizon} is not a whole number of windows "
                f"for factor {factor}")
        return round(steps)

    ref_steps = window_count(cfg.time_ref_factor)
    ref = schwarz.solve_single_domain(
        grid, mon, solver_config(cfg, scheme="euler", substeps=1,
                                 dtau=cfg.time_ref_factor * cell,
                                 tol=1e-300, max_windows=ref_steps))
    for factor in cfg.time_factors:
        steps = window_count(factor)
        res = schwarz.solve(grid, dec, mon,
                            solver_config(cfg, scheme="euler", substeps=1,
                                          dtau=factor * cell, tol=1e-300,
                                          max_windows=steps))
        rep = metrics.relative_errors(res.psi, ref.psi, grid,
                                      meta={"factor": factor})
        out.rows.append([factor, factor * cell, steps, rep.e1, rep.e2,
                         rep.einf])
    for label, col in (("e1", 3), ("e2", 4), ("einf", 5)):
        out.slopes[label] = metrics.convergence_slope(
            [(row[1], row[col]) for row in out.rows])
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        out.to_csv(os.path.join(out_dir, "conv_time.csv"))
    return out


def run_overlap_study(cfg: RunConfig, out_dir: str | None = None
                      ) -> ExperimentResult:
    """Steady-state agreement with the whole-domain solution versus overlap.

    The reference converges 100x tighter than the study runs, so what the
    sweep measures is the leftover transient at the common stopping rule;
    wider overlaps couple the subdomains more strongly and stop closer to
    the single-domain steady state.  Columns: overlap, windows, e1, e2, einf.
    """
    out = ExperimentResult(name="overlap",
                           columns=["overlap", "windows", "e1", "e2", "einf"])
    raw = build_run_monitor(cfg)
    grid = build_run_grid(cfg, raw)
    mon = monitor_mod.normalize(raw, grid)
    ref = schwarz.solve_single_domain(
        grid, mon, solver_config(cfg, tol=0.01 * cfg.tol))
    if not ref.converged:
        out.failures.append("reference run hit the window cap")
    for ov in cfg.overlap_values:
        dec = build_run_decomposition(cfg, grid, overlap=ov)
        res = schwarz.solve(grid, dec, mon, solver_config(cfg))
        rep = metrics.relative_errors(res.psi, ref.psi, grid,
                                      meta={"overlap": ov})
        out.rows.append([ov, res.windows, rep.e1, rep.e2, rep.einf])
        if not res.converged:
            out.failures.append(f"overlap {ov}: no steady state within cap")
    einf = [row[4] for row in out.rows]
    monotone = all(b <= a * 1.05 for a, b in zip(einf, einf[1:]))
    out.notes.append(f"einf non-increasing with overlap: {monotone}")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        out.to_csv(os.path.join(out_dir, "overlap.csv"))
    return out


def run_dtau_steady_study(cfg: RunConfig, out_dir: str | None = None
                          ) -> ExperimentResult:
    """Steady-state agreement versus window length at a fixed tolerance.

    Both the decomposed and the whole-domain run stop at the same residual
    tolerance with the same window; their difference isolates the one-
    exchange-per-window transmission lag, which shrinks with the window.
    Columns: dtau, windows_dd, windows_sd, e1, e2, einf.
    """
    out = ExperimentResult(name="dtau-steady",
                           columns=["dtau", "windows_dd", "windows_sd",
                                    "e1", "e2", "einf"])
    grid, dec, mon = prepared_run(cfg)
    values = cfg.dtau_values or (1e-5, 2e-5, 4e-5, 8e-5)
    for dtau in sorted(values, reverse=True):
        sd = schwarz.solve_single_domain(grid, mon,
                                         solver_config(cfg, dtau=dtau))
        dd = schwarz.solve(grid, dec, mon, solver_config(cfg, dtau=dtau))
        rep = metrics.relative_errors(dd.psi, sd.psi, grid,
                                      meta={"dtau": dtau})
        out.rows.append([dtau, dd.windows, sd.windows, rep.e1, rep.e2,
                         rep.einf])
        for run, label in ((sd, "single"), (dd, "dd")):
            if not run.converged:
                out.failures.append(f"dtau {dtau}: {label} run hit the cap")
    einf = [row[5] for row in out.rows]   # rows ordered dtau descending
    out.notes.append(
        "einf decreasing with dtau: "
        f"{all(b <= a for a, b in zip(einf, einf[1:]))}")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        out.to_csv(os.path.join(out_dir, "dtau_steady.csv"))
    return out


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------

def _timed_solve(fn, *args) -> tuple[SolveResult, float]:
    t0 = time.perf_counter()
    result = fn(*args)
    return result, time.perf_counter() - t0


def run_timing(cfg: RunConfig, out_dir: str | None = None) -> ExperimentResult:
    """Wall-clock comparison: whole domain vs serial vs parallel sweeps.

    2D uses a 2x2 block split of the spiral case, 3D a 2x2x2 split of the
    sphere case.  Ratios are reported, never asserted: absolute seconds are
    hardware-dependent.  Columns: case, n, mode, subdomains, windows,
    seconds.
    """
    out = ExperimentResult(name="timing",
                           columns=["case", "n", "mode", "subdomains",
                                    "windows", "seconds"])
    cases = [("2d", cfg.timing_n2d, "spiral2d", (2, 2)),
             ("3d", cfg.timing_n3d, "sphere3d", (2, 2, 2))]
    for label, n, mon_name, layout in cases:
        case_cfg = cfg.replace(monitor_name=mon_name, layout=layout, nx=n,
                               ny=0, nz=0, extents=None)
        raw = build_run_monitor(case_cfg)
        grid = build_run_grid(case_cfg, raw)
        mon = monitor_mod.normalize(raw, grid)
        dec = build_run_decomposition(case_cfg, grid)
        single, t_single = _timed_solve(
            schwarz.solve_single_domain, grid, mon, solver_config(case_cfg))
        serial, t_serial = _timed_solve(
            schwarz.solve, grid, dec, mon,
            solver_config(case_cfg, transmission="alternating"))
        parallel, t_parallel = _timed_solve(
            schwarz.solve, grid, dec, mon,
            solver_config(case_cfg, transmission="parallel"))
        for mode, res, secs in (("single", single, t_single),
                                ("serial-dd", serial, t_serial),
                                ("parallel-dd", parallel, t_parallel)):
            out.rows.append([label, n, mode, dec.nsub if mode != "single" else 1,
                             res.windows, secs])
            if not res.converged:
                out.failures.append(f"{label} {mode}: no steady state within cap")
        out.notes.append(
            f"{label}: serial/single = {t_serial / t_single:.2f}, "
            f"parallel/serial = {t_parallel / t_serial:.2f}")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        out.to_csv(os.path.join(out_dir, "timing.csv"))
    return out
