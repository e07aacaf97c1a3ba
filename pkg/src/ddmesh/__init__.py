"""Adaptive moving meshes from optimal-transport potentials.

A mesh on a box is the gradient of a convex potential whose log-determinant
flow is relaxed to steady state, either on the whole domain or on
overlapping subdomains that exchange Dirichlet traces once per pseudo-time
window (serially alternating or in parallel).
"""

from .errors import (ConfigurationError, DdmeshError, DomainError,
                     InvalidMonitorError, MeshFileError, StiffnessError)
from .grid import (CompGrid, Decomposition, Subdomain, build_decomposition,
                   build_grid, grid_geometry, subdomain_geometry)
from .integrate import IntegrationWindow, advance_window, make_integrator
from .metrics import (ErrorReport, QualityReport, SlopeFit, convergence_slope,
                      quality_measure, quasi1d_oracle, relative_errors,
                      restrict_to_grid)
from .monitor import (MonitorField, SampledField, TestFunction,
                      arc_length_monitor, density_monitor, normalize,
                      sampled_field_from_csv, sampled_field_from_vtk,
                      test_function_registry)
from .pma import (PhysicalMesh, PotentialField, gradient_fd, hessian_det_fd,
                  initial_potential, physical_mesh, pma_rhs)
from .schwarz import (SolveResult, SolverConfig, alternating_sweep,
                      parallel_sweep, residual, solve, solve_single_domain)

__version__ = "0.1.0"

__all__ = [
    "CompGrid", "Decomposition", "Subdomain", "build_grid",
    "build_decomposition", "grid_geometry", "subdomain_geometry",
    "MonitorField", "SampledField", "TestFunction", "arc_length_monitor",
    "density_monitor", "normalize", "test_function_registry",
    "sampled_field_from_csv", "sampled_field_from_vtk",
    "PhysicalMesh", "PotentialField", "initial_potential", "gradient_fd",
    "hessian_det_fd", "pma_rhs", "physical_mesh",
    "IntegrationWindow", "advance_window", "make_integrator",
    "SolverConfig", "SolveResult", "solve", "solve_single_domain",
    "alternating_sweep", "parallel_sweep", "residual",
    "QualityReport", "ErrorReport", "SlopeFit", "quality_measure",
    "relative_errors", "convergence_slope", "quasi1d_oracle",
    "restrict_to_grid",
    "DdmeshError", "ConfigurationError", "DomainError",
    "InvalidMonitorError", "MeshFileError", "StiffnessError",
]
