"""Serialization: legacy-VTK structured meshes, CSV reports, run configs.

All formats are ASCII and versioned by a header comment line; floats are
written with 17 significant digits so write/read round-trips are exact.
The run configuration is a flat ``key = value`` file; unknown keys are
errors, never silently ignored.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields as dc_fields
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigurationError, MeshFileError
from .pma import PhysicalMesh

VTK_TITLE = "ddmesh structured-grid v1"
CSV_HEADER_COMMENT = "# ddmesh report v1"
CONFIG_HEADER = "# ddmesh config v1"

_FLT = "%.17g"


# ---------------------------------------------------------------------------
# legacy VTK structured grid
# ---------------------------------------------------------------------------

def _mesh_to_columns(coords: np.ndarray) -> tuple[tuple[int, int, int], np.ndarray]:
    """Flatten node coordinates to (n, 3) with x varying fastest."""
    dim = coords.shape[-1]
    counts = coords.shape[:-1]
    dims = (counts[0], counts[1], counts[2] if dim == 3 else 1)
    cols = []
    for k in range(3):
        if k < dim:
            cols.append(coords[..., k].ravel(order="F"))
        else:
            cols.append(np.zeros(int(np.prod(counts))))
    return dims, np.column_stack(cols)


def write_mesh_vtk(mesh: PhysicalMesh, path: str,
                   e_adp: np.ndarray | None = None) -> None:
    """Write a structured mesh with its Jacobian (and optional quality
    field) as point data."""
    dims, points = _mesh_to_columns(mesh.coords)
    n = points.shape[0]
    scalars = {"jacobian": mesh.jac}
    if e_adp is not None:
        scalars["e_adp"] = e_adp
    with open(path, "w", newline="\n") as fp:
        fp.write("# vtk DataFile Version 3.0\n")
        fp.write(VTK_TITLE + "\n")
        fp.write("ASCII\n")
        fp.write("DATASET STRUCTURED_GRID\n")
        fp.write(f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}\n")
        fp.write(f"POINTS {n} double\n")
        for row in points:
            fp.write(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g}\n")
        fp.write(f"POINT_DATA {n}\n")
        for name, values in scalars.items():
            fp.write(f"SCALARS {name} double\n")
            fp.write("LOOKUP_TABLE default\n")
            for v in values.ravel(order="F"):
                fp.write(f"{v:.17g}\n")


def write_scalar_field_vtk(axes: tuple[np.ndarray, ...], values: np.ndarray,
                           path: str, name: str = "u") -> None:
    """Write a scalar sampled on a uniform lattice (monitor ingestion format)."""
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    write_mesh_vtk(PhysicalMesh(coords=mesh, jac=values), path)
    # the scalar rides in the "jacobian" slot; rename it on disk
    with open(path) as fp:
        text = fp.read()
    with open(path, "w", newline="\n") as fp:
        fp.write(text.replace("SCALARS jacobian double", f"SCALARS {name} double", 1))


class _Tokens:
    """Whitespace token stream that remembers line numbers."""

    def __init__(self, path: str):
        self.path = path
        with open(path) as fp:
            self.lines = fp.read().splitlines()
        self._queue: list[tuple[str, int]] = []
        self._lineno = 0

    def _fill(self) -> None:
        while not self._queue:
            if self._lineno >= len(self.lines):
                raise MeshFileError("unexpected end of file", self._lineno)
            line = self.lines[self._lineno]
            self._lineno += 1
            self._queue = [(tok, self._lineno) for tok in line.split()]

    def next(self) -> tuple[str, int]:
        self._fill()
        return self._queue.pop(0)

    def expect(self, *words: str) -> int:
        line = 0
        for w in words:
            tok, line = self.next()
            if tok != w:
                raise MeshFileError(f"expected {w!r}, found {tok!r}", line)
        return line

    def next_float(self) -> float:
        tok, line = self.next()
        try:
            return float(tok)
        except ValueError:
            raise MeshFileError(f"expected a number, found {tok!r}", line) from None

    def next_int(self) -> int:
        tok, line = self.next()
        try:
            return int(tok)
        except ValueError:
            raise MeshFileError(f"expected an integer, found {tok!r}", line) from None

    def at_eof(self) -> bool:
        try:
            self._fill()
        except MeshFileError:
            return True
        return False


def read_structured_vtk(path: str) -> tuple[tuple[int, int, int], np.ndarray,
                                            dict[str, np.ndarray]]:
    """Low-level reader: dimensions, (n, 3) points, named point scalars."""
    toks = _Tokens(path)
    toks.expect("#", "vtk", "DataFile", "Version")
    toks.next()                      # format version number
    title, line = toks.next()
    if title != "ddmesh":
        raise MeshFileError(f"not a ddmesh VTK file (title {title!r})", line)
    toks.next()                      # "structured-grid"
    toks.next()                      # format revision tag
    toks.expect("ASCII", "DATASET")
    tok, line = toks.next()
    if tok != "STRUCTURED_GRID":
        raise MeshFileError(f"unsupported dataset {tok!r}", line)
    toks.expect("DIMENSIONS")
    dims = (toks.next_int(), toks.next_int(), toks.next_int())
    toks.expect("POINTS")
    n = toks.next_int()
    if n != dims[0] * dims[1] * dims[2]:
        raise MeshFileError(f"POINTS count {n} != product of DIMENSIONS {dims}")
    toks.next()                      # dtype
    points = np.empty((n, 3))
    for i in range(n):
        points[i, 0] = toks.next_float()
        points[i, 1] = toks.next_float()
        points[i, 2] = toks.next_float()
    data: dict[str, np.ndarray] = {}
    if not toks.at_eof():
        toks.expect("POINT_DATA")
        m = toks.next_int()
        if m != n:
            raise MeshFileError(f"POINT_DATA count {m} != POINTS count {n}")
        while not toks.at_eof():
            toks.expect("SCALARS")
            name, _ = toks.next()
            toks.next()              # dtype
            toks.expect("LOOKUP_TABLE")
            toks.next()              # table name
            data[name] = np.array([toks.next_float() for _ in range(n)])
    return dims, points, data


def _columns_to_grid(dims: tuple[int, int, int], flat: np.ndarray) -> np.ndarray:
    """Reshape an x-fastest flat array back to (nx, ny[, nz])."""
    nx, ny, nz = dims
    arr = flat.reshape((nz, ny, nx)).transpose(2, 1, 0)
    return arr[:, :, 0] if nz == 1 else arr


def read_mesh_vtk(path: str) -> PhysicalMesh:
    """Inverse of :func:`write_mesh_vtk` (coordinates and Jacobian)."""
    dims, points, data = read_structured_vtk(path)
    dim = 2 if dims[2] == 1 else 3
    coords = np.stack([_columns_to_grid(dims, points[:, k])
                       for k in range(dim)], axis=-1)
    shape = coords.shape[:-1]
    jac = (_columns_to_grid(dims, data["jacobian"])
           if "jacobian" in data else np.full(shape, np.nan))
    return PhysicalMesh(coords=coords, jac=jac)


def read_scalar_field_vtk(path: str) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Read a scalar lattice field written by :func:`write_scalar_field_vtk`."""
    dims, points, data = read_structured_vtk(path)
    dim = 2 if dims[2] == 1 else 3
    if len(data) != 1:
        raise MeshFileError(f"expected exactly one scalar field, found {sorted(data)}")
    values = _columns_to_grid(dims, next(iter(data.values())))
    axes = []
    coords = [_columns_to_grid(dims, points[:, k]) for k in range(dim)]
    for k in range(dim):
        take = [0] * dim
        take[k] = slice(None)
        ax = coords[k][tuple(take)]
        axes.append(np.asarray(ax))
    return tuple(axes), values


# ---------------------------------------------------------------------------
# CSV reports
# ---------------------------------------------------------------------------

def _csv_cell(v) -> str:
    if isinstance(v, float):
        return _FLT % v
    return str(v)

def write_field_csv(path: str, header: list[str],
                    rows: Iterable[Iterable]) -> None:
    """One report row per sweep point; floats keep 17 significant digits."""
    with open(path, "w", newline="\n") as fp:
        fp.write(CSV_HEADER_COMMENT + "\n")
        fp.write(",".join(header) + "\n")
        for row in rows:
            fp.write(",".join(_csv_cell(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

def _parse_choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {options}, got {text!r}")
        return text
    return parse


def _parse_layout(text: str) -> tuple[int, ...]:
    try:
        parts = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"layout must look like 4x1 or 2x2, got {text!r}") from None
    if not parts or any(p < 1 for p in parts):
        raise ValueError(f"layout parts must be positive, got {text!r}")
    return parts


def _parse_extents(text: str) -> tuple[tuple[float, float], ...] | None:
    if not text:
        return None
    out = []
    for part in text.split(","):
        try:
            a, b = part.split(":")
            out.append((float(a), float(b)))
        except ValueError:
            raise ValueError(
                f"extents must look like 0:1,0:1 — bad part {part!r}") from None
    return tuple(out)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _parse_existing_path(text: str) -> str:
    if text and not os.path.exists(text):
        raise ValueError(f"referenced path does not exist: {text}")
    return text


@dataclass(frozen=True)
class _Key:
    field: str
    parse: Callable[[str], object]
    default: object
    help: str


KEYS: dict[str, _Key] = {
    "grid.nx": _Key("nx", int, None, "nodes along the first axis (required)"),
    "grid.ny": _Key("ny", int, 0, "nodes along the second axis (0 = nx)"),
    "grid.nz": _Key("nz", int, 0, "nodes along the third axis (0 = nx; 3D only)"),
    "grid.extents": _Key("extents", _parse_extents, None,
                         "per-axis a:b, comma separated (default: monitor domain)"),
    "dd.layout": _Key("layout", _parse_layout, (1,),
                      "per-axis subdomain counts, e.g. 4x1 or 2x2"),
    "dd.overlap": _Key("overlap", int, 3, "shared grid lines per interface"),
    "solver.dtau": _Key("dtau", float, 1e-3, "pseudo-time window length"),
    "solver.tol": _Key("tol", float, 1e-6, "steady-state residual tolerance"),
    "solver.mode": _Key("mode", _parse_choice("alternating", "parallel"),
                        "alternating", "transmission mode"),
    "solver.stop_rule": _Key("stop_rule", _parse_choice("min", "max"), "min",
                             "reduction over subdomain residuals"),
    "solver.max_windows": _Key("max_windows", int, 5000,
                               "cap on pseudo-time windows"),
    "solver.workers": _Key("workers", int, 0,
                           "parallel-mode threads (0 = one per subdomain)"),
    "integrator.scheme": _Key("scheme", _parse_choice("adaptive", "euler"),
                              "adaptive", "window integrator"),
    "integrator.substeps": _Key("substeps", int, 1, "euler substeps per window"),
    "integrator.rtol": _Key("rtol", float, 1e-3, "adaptive relative tolerance"),
    "integrator.atol": _Key("atol", float, 1e-6, "adaptive absolute tolerance"),
    "integrator.max_stages": _Key("max_stages", int, 512,
                                  "stage cap of the stabilized scheme"),
    "monitor.name": _Key("monitor_name", str, None,
                         "test-function name or 'sampled' (required)"),
    "monitor.eps": _Key("monitor_eps", float, 0.01, "front width of burgers2d"),
    "monitor.csv": _Key("monitor_csv", _parse_existing_path, "",
                        "sampled-field CSV (x,y[,z],u rows)"),
    "monitor.vtk": _Key("monitor_vtk", _parse_existing_path, "",
                        "sampled-field VTK scalar file"),
    "monitor.smooth_passes": _Key("smooth_passes", int, 0,
                                  "sampled-field smoothing passes"),
    "output.dir": _Key("out_dir", str, "runs", "output directory"),
    "space.grids": _Key("space_grids", _parse_ints, (33, 65, 129),
                        "grid sizes of the spatial study"),
    "space.ref_n": _Key("space_ref_n", int, 513, "reference grid size"),
    "space.ref_dtau": _Key("space_ref_dtau", float, 0.02,
                           "reference window length"),
    "space.windows": _Key("space_windows", int, 1000,
                           "pseudo-time windows per spatial-study run"),
    "time.factors": _Key("time_factors", _parse_floats,
                         (0.015, 0.03, 0.06, 0.12),
                         "dtau sweep in units of dxi*deta"),
    "time.ref_factor": _Key("time_ref_factor", float, 0.005,
                            "reference dtau in units of dxi*deta"),
    "time.horizon": _Key("time_horizon", float, 24.0,
                         "comparison pseudo-time in units of dxi*deta"),
    "overlap.values": _Key("overlap_values", _parse_ints, (5, 9, 11, 15),
                           "overlap sweep of the overlap study"),
    "dtau.values": _Key("dtau_values", _parse_floats, (),
                        "window sweep of the steady-state dtau study"),
    "timing.n2d": _Key("timing_n2d", int, 65, "2D timing grid size"),
    "timing.n3d": _Key("timing_n3d", int, 33, "3D timing grid size"),
}

REQUIRED_KEYS = ("grid.nx", "monitor.name")

ENV_PREFIX = "DDMESH_"


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "_")


@dataclass
class RunConfig:
    """Parsed flat configuration; see ``KEYS`` for the key table."""

    nx: int
    monitor_name: str
    ny: int = 0
    nz: int = 0
    extents: tuple[tuple[float, float], ...] | None = None
    layout: tuple[int, ...] = (1,)
    overlap: int = 3
    dtau: float = 1e-3
    tol: float = 1e-6
    mode: str = "alternating"
    stop_rule: str = "min"
    max_windows: int = 5000
    workers: int = 0
    scheme: str = "adaptive"
    substeps: int = 1
    rtol: float = 1e-3
    atol: float = 1e-6
    max_stages: int = 512
    monitor_eps: float = 0.01
    monitor_csv: str = ""
    monitor_vtk: str = ""
    smooth_passes: int = 0
    out_dir: str = "runs"
    space_grids: tuple[int, ...] = (33, 65, 129)
    space_ref_n: int = 513
    space_ref_dtau: float = 0.02
    space_windows: int = 1000
    time_factors: tuple[float, ...] = (0.015, 0.03, 0.06, 0.12)
    time_ref_factor: float = 0.005
    time_horizon: float = 24.0
    overlap_values: tuple[int, ...] = (5, 9, 11, 15)
    dtau_values: tuple[float, ...] = ()
    timing_n2d: int = 65
    timing_n3d: int = 33

    def replace(self, **kwargs) -> "RunConfig":
        values = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        values.update(kwargs)
        return RunConfig(**values)


def config_from_mapping(mapping: dict[str, str],
                        where: dict[str, int] | None = None) -> RunConfig:
    """Build a RunConfig from dotted-key -> raw-string pairs."""
    where = where or {}
    missing = [k for k in REQUIRED_KEYS if k not in mapping]
    if missing:
        raise MeshFileError(
            "missing required keys: " + ", ".join(missing)
            + " (required: " + ", ".join(REQUIRED_KEYS) + ")")
    values: dict[str, object] = {}
    for key, raw in mapping.items():
        if key not in KEYS:
            raise MeshFileError(f"unknown key {key!r}", where.get(key))
        spec = KEYS[key]
        try:
            values[spec.field] = spec.parse(raw)
        except ValueError as err:
            raise MeshFileError(f"bad value for {key}: {err}",
                                where.get(key)) from None
    return RunConfig(**values)


def parse_config(path: str, env: dict[str, str] | None = None) -> RunConfig:
    """Parse a ``key = value`` config file, then apply DDMESH_* overrides.

    Environment variables (``solver.tol`` -> ``DDMESH_SOLVER_TOL``) override
    file values; they are parsed with the same per-key parsers.
    """
    mapping: dict[str, str] = {}
    where: dict[str, int] = {}
    with open(path) as fp:
        for lineno, line in enumerate(fp, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise MeshFileError(f"expected 'key = value', got {stripped!r}",
                                    lineno)
            key, _, raw = stripped.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key in mapping:
                raise MeshFileError(f"duplicate key {key!r}", lineno)
            mapping[key] = raw
            where[key] = lineno
    env = os.environ if env is None else env
    for key in KEYS:
        name = env_name(key)
        if name in env:
            mapping[key] = env[name]
            where.pop(key, None)
    return config_from_mapping(mapping, where)
