"""Weighted least-squares cost terms with Gauss-Newton derivatives.

Every term evaluates 0.5 * weight * ||r||^2 for some residual r and returns
Gauss-Newton blocks (residual-curvature terms dropped), so values are always
nonnegative and l_xx / l_uu are symmetric positive semidefinite.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .manifolds import Manifold

COST_KINDS = (
    "state_regularization",
    "control_regularization",
    "frame_translation_tracking",
    "com_tracking",
)


class CostTerm:
    """Base: subclasses fill residual(x, u) and its Jacobians."""

    def __init__(self, weight: float, ndx: int, nu: int):
        if weight < 0.0:
            raise DimensionMismatch(f"cost weight must be >= 0, got {weight}")
        self.weight = float(weight)
        self.ndx = ndx
        self.nu = nu

    def value(self, x, u) -> float:
        r = self._residual(x, u)
        return 0.5 * self.weight * float(r @ r)

    def derivatives(self, x, u):
        """Returns (l_x, l_u, l_xx, l_xu, l_uu) Gauss-Newton contributions."""
        r = self._residual(x, u)
        rx, ru = self._residual_jacobians(x, u)
        w = self.weight
        l_x = w * rx.T @ r
        l_u = w * ru.T @ r
        l_xx = w * rx.T @ rx
        l_xu = w * rx.T @ ru
        l_uu = w * ru.T @ ru
        return l_x, l_u, l_xx, l_xu, l_uu

    def _residual(self, x, u) -> np.ndarray:
        raise NotImplementedError

    def _residual_jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class StateRegularization(CostTerm):
    """Penalizes the manifold difference from a reference state.

    Optional per-coordinate scales stretch the residual (diagonal weighting).
    """

    kind = "state_regularization"

    def __init__(self, manifold: Manifold, reference, weight: float, nu: int, scales=None):
        super().__init__(weight, manifold.ndx, nu)
        self.manifold = manifold
        self.reference = manifold.check_point(np.asarray(reference, float))
        if scales is None:
            self.scales = None
        else:
            self.scales = np.asarray(scales, float)
            if self.scales.shape != (manifold.ndx,):
                raise DimensionMismatch(
                    f"state cost scales must have shape ({manifold.ndx},)"
                )
            if (self.scales < 0.0).any():
                raise DimensionMismatch("state cost scales must be >= 0")

    def _residual(self, x, u):
        r = self.manifold.difference(self.reference, x)
        return r if self.scales is None else self.scales * r

    def _residual_jacobians(self, x, u):
        _, j1 = self.manifold.jdifference(self.reference, x)
        if self.scales is not None:
            j1 = self.scales[:, None] * j1
        return j1, np.zeros((self.ndx, self.nu))


class ControlRegularization(CostTerm):
    kind = "control_regularization"

    def __init__(self, nu: int, weight: float, ndx: int, reference=None):
        super().__init__(weight, ndx, nu)
        self.reference = None if reference is None else np.asarray(reference, float)
        if self.reference is not None and self.reference.shape != (nu,):
            raise DimensionMismatch(f"control reference must have shape ({nu},)")

    def _residual(self, x, u):
        return u if self.reference is None else u - self.reference

    def _residual_jacobians(self, x, u):
        return np.zeros((self.nu, self.ndx)), np.eye(self.nu)


class FrameTranslationTracking(CostTerm):
    """Tracks a body-frame point position (planar translation target)."""

    kind = "frame_translation_tracking"

    def __init__(self, system, frame: str, target, weight: float, ndx: int, nu: int):
        super().__init__(weight, ndx, nu)
        self.system = system
        self.frame = frame
        self.target = np.atleast_1d(np.asarray(target, float))
        probe = system.frame_placement(system.nominal_state()[: system.nq], frame)
        if probe.shape != self.target.shape:
            raise DimensionMismatch(
                f"frame {frame!r} placement has shape {probe.shape}, target {self.target.shape}"
            )

    def _residual(self, x, u):
        q = x[: self.system.nq]
        return self.system.frame_placement(q, self.frame) - self.target

    def _residual_jacobians(self, x, u):
        q = x[: self.system.nq]
        jq = self.system.frame_jacobian(q, self.frame)
        rx = np.zeros((jq.shape[0], self.ndx))
        rx[:, : self.system.nv] = jq
        return rx, np.zeros((jq.shape[0], self.nu))


class ComTracking(CostTerm):
    kind = "com_tracking"

    def __init__(self, system, target, weight: float, ndx: int, nu: int):
        super().__init__(weight, ndx, nu)
        self.system = system
        self.target = np.atleast_1d(np.asarray(target, float))

    def _residual(self, x, u):
        return self.system.com(x[: self.system.nq]) - self.target

    def _residual_jacobians(self, x, u):
        q = x[: self.system.nq]
        jq = self.system.com_jacobian(q)
        rx = np.zeros((jq.shape[0], self.ndx))
        rx[:, : self.system.nv] = jq
        return rx, np.zeros((jq.shape[0], self.nu))


def make_cost_term(
    kind: str,
    weight: float,
    *,
    state: Manifold,
    nu: int,
    system=None,
    reference=None,
    frame: str | None = None,
    scales=None,
) -> CostTerm:
    """Build a cost term from its config-level description."""
    if kind == "state_regularization":
        if reference is None:
            raise DimensionMismatch("state_regularization needs a reference state")
        return StateRegularization(state, reference, weight, nu, scales=scales)
    if kind == "control_regularization":
        return ControlRegularization(nu, weight, state.ndx, reference=reference)
    if kind == "frame_translation_tracking":
        if system is None or frame is None or reference is None:
            raise DimensionMismatch(
                "frame_translation_tracking needs a system, a frame, and a target"
            )
        return FrameTranslationTracking(system, frame, reference, weight, state.ndx, nu)
    if kind == "com_tracking":
        if system is None or reference is None:
            raise DimensionMismatch("com_tracking needs a system and a target")
        return ComTracking(system, reference, weight, state.ndx, nu)
    raise DimensionMismatch(f"unknown cost kind {kind!r}; known: {', '.join(COST_KINDS)}")
