"""Exception types shared across the library."""

from __future__ import annotations


class FddpError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(FddpError, ValueError):
    """An input array has the wrong shape for the operation."""


class NumericalFailure(FddpError, RuntimeError):
    """A computation produced non-finite values.

    Carries the node index when raised from a per-node evaluation.
    """

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class FactorizationError(FddpError, RuntimeError):
    """A matrix required to be positive definite failed its Cholesky."""


class RankDeficientConstraint(FactorizationError):
    """The constraint block lost row rank (singular operational-space inertia)."""


class NotPositiveDefinite(FddpError, RuntimeError):
    """Regularized control Hessian not positive definite at some node."""

    def __init__(self, node: int):
        super().__init__(f"control Hessian not positive definite at node {node}")
        self.node = node


class QuasiStaticFailure(FddpError, RuntimeError):
    """Quasi-static control iteration did not reach the residual tolerance."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"quasi-static residual {residual:.3e} above 1e-6 after {iterations} iterations"
        )
        self.residual = residual
        self.iterations = iterations


class KKTSingular(FddpError, RuntimeError):
    """The dense KKT system of the whole problem is singular."""


class ScenarioError(FddpError, ValueError):
    """A scenario file failed parsing or validation.

    The message names the offending field or invariant; `location` optionally
    carries a 'line N' or dotted field path for CLI reporting.
    """

    def __init__(self, message: str, location: str | None = None):
        super().__init__(message if location is None else f"{location}: {message}")
        self.location = location


class SolverFailure(FddpError, RuntimeError):
    """The solve loop gave up (regularization cap reached or non-finite data)."""
