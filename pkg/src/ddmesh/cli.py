"""Command-line experiment runner.

Subcommands: ``mesh``, ``conv-space``, ``conv-time``, ``overlap``,
``dtau-steady``, ``timing``.  Every configuration key (see
``ddmesh.fileio.KEYS``) is exposed three ways, later wins:

1. a config file (``--config run.cfg``, flat ``key = value`` lines),
2. environment variables with the ``DDMESH_`` prefix
   (``solver.tol`` -> ``DDMESH_SOLVER_TOL``),
3. a long flag per key (``--solver.tol 1e-8``).

``--paper-scale`` restores the original protocol sizes of the convergence
and timing studies; the defaults are desk-scale.  Results land in
``--out`` (default ``runs/<command>``) as CSV plus, for ``mesh``, a legacy
VTK structured-grid file; a human-readable summary goes to stdout.  The
exit status is nonzero iff any sweep point failed.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import experiments
from .errors import DdmeshError
from .fileio import KEYS, MeshFileError, config_from_mapping, env_name


def _read_config_file(path: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    with open(path) as fp:
        for lineno, line in enumerate(fp, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise MeshFileError(f"expected 'key = value', got {stripped!r}",
                                    lineno)
            key, _, raw = stripped.partition("=")
            mapping[key.strip()] = raw.strip()
    return mapping


_COMMANDS = {
    "mesh": (experiments.run_mesh,
             {"monitor.name": "spiral2d", "grid.nx": "65",
              "dd.layout": "4x1"},
             "generate one adaptive mesh and its quality report"),
    "conv-space": (experiments.run_spatial_convergence,
                   {"monitor.name": "spiral2d", "grid.nx": "65",
                    "dd.layout": "4x1"},
                   "spatial convergence against a fine whole-domain surrogate"),
    "conv-time": (experiments.run_temporal_convergence,
                  {"monitor.name": "spiral2d", "grid.nx": "65",
                   "dd.layout": "4x1"},
                  "forward-Euler window-size convergence at a fixed grid"),
    "overlap": (experiments.run_overlap_study,
                {"monitor.name": "spiral2d", "grid.nx": "65",
                 "dd.layout": "4x1"},
                "steady-state agreement versus overlap width"),
    "dtau-steady": (experiments.run_dtau_steady_study,
                    {"monitor.name": "spiral2d", "grid.nx": "33",
                     "dd.layout": "4x1"},
                    "steady-state agreement versus window length"),
    "timing": (experiments.run_timing,
               {"monitor.name": "spiral2d", "grid.nx": "65"},
               "wall-clock: whole domain vs serial vs parallel sweeps"),
}

_PAPER_SCALE = {
    "conv-space": {"space.ref_n": "1025", "space.grids": "33,65,129,257",
                   "space.ref_dtau": "1e-3"},
    "conv-time": {},
    "overlap": {},
    "dtau-steady": {"grid.nx": "65", "dtau.values": "1e-6,2e-6,4e-6,8e-6"},
    "timing": {"timing.n2d": "257", "timing.n3d": "65"},
    "mesh": {},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddmesh",
        description="adaptive moving-mesh generation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_text) in _COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="flat key = value configuration file")
        sp.add_argument("--out", help="output directory (default runs/<command>)")
        sp.add_argument("--paper-scale", action="store_true",
                        help="restore the original protocol sizes")
        for key, spec in KEYS.items():
            sp.add_argument(f"--{key}", dest=key.replace(".", "__"),
                            metavar="V", help=spec.help)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    runner, defaults, _ = _COMMANDS[command]
    mapping = dict(defaults)
    try:
        if args.config:
            mapping.update(_read_config_file(args.config))
        for key in KEYS:
            name = env_name(key)
            if name in os.environ:
                mapping[key] = os.environ[name]
        if args.paper_scale:
            mapping.update(_PAPER_SCALE[command])
        for key in KEYS:
            value = getattr(args, key.replace(".", "__"))
            if value is not None:
                mapping[key] = value
        cfg = config_from_mapping(mapping)
        out_dir = args.out or os.path.join(cfg.out_dir, command)
        result = runner(cfg, out_dir=out_dir)
    except DdmeshError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(result.summary())
    print(f"wrote {out_dir}/")
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
