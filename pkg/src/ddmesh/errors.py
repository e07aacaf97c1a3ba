"""Exception types shared across the package."""

from __future__ import annotations

import numpy as np


class DdmeshError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DdmeshError, ValueError):
    """Invalid grid, decomposition, solver, or experiment configuration."""


class DomainError(DdmeshError, ValueError):
    """A field was evaluated at points outside its physical domain."""


class InvalidMonitorError(DdmeshError, ValueError):
    """A mesh density field is nonpositive or cannot be normalized."""


class MeshFileError(DdmeshError, ValueError):
    """Malformed mesh/field/config file.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StiffnessError(DdmeshError, RuntimeError):
    """The adaptive integrator underflowed its internal step size.

    ``nodes`` holds the (multi-)indices of the nodes that dominated the
    rejected error estimate; ``subdomain`` is filled in by the solver when
    the failure happened inside a subdomain sweep.
    """

    def __init__(self, message: str, nodes: np.ndarray | None = None,
                 subdomain: int | None = None):
        super().__init__(message)
        self.nodes = nodes
        self.subdomain = subdomain
