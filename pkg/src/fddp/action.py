"""Discrete-time action models built from continuous dynamics and cost terms.

Three dynamics families are wrapped here: free mechanical systems (acceleration
from the mass matrix and bias forces), mechanical systems with rigid frame
constraints (acceleration from a KKT solve, see the contact utilities), and
explicitly linear first-order flows used as solver oracles. Mechanical models
are discretized with a semi-implicit (symplectic) Euler step, linear flows with
an explicit Euler step so their discrete Jacobians are exact.

Models are immutable after construction; each evaluation writes into a separate
data container so distinct nodes can be processed concurrently.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import numdiff
from .contact import (
    ContactSet,
    baumgarte_a0,
    contact_dynamics_derivatives,
    contact_forward_dynamics,
    impulse_dynamics,
    impulse_dynamics_derivatives,
)
from .costs import CostTerm
from .errors import DimensionMismatch, NumericalFailure, QuasiStaticFailure
from .manifolds import Manifold
from .systems import LinearDynamics, MechanicalSystem

QUASI_STATIC_MAX_ITERS = 100
QUASI_STATIC_TOL = 1e-6
_QUASI_STATIC_DAMPING = 1e-10


class ActionData:
    """Mutable evaluation buffers for one action model at one node.

    Holds the discrete step output, the cost value and all cost/dynamics
    derivatives, plus whatever intermediate the dynamics wants to carry from
    calc to calc_diff (`dyn`).
    """

    def __init__(self, model: "ActionModelBase"):
        ndx, nu = model.ndx, model.nu
        self.xnext = np.zeros(model.state.nx)
        self.cost = 0.0
        self.f_x = np.zeros((ndx, ndx))
        self.f_u = np.zeros((ndx, nu))
        self.l_x = np.zeros(ndx)
        self.l_u = np.zeros(nu)
        self.l_xx = np.zeros((ndx, ndx))
        self.l_xu = np.zeros((ndx, nu))
        self.l_uu = np.zeros((nu, nu))
        self.dyn = None
        self._x = None
        self._u = None


# ---------------------------------------------------------------------------
# Continuous-time dynamics
# ---------------------------------------------------------------------------


class DifferentialDynamics:
    """Base for second-order dynamics: acceleration(x, u) plus its partials."""

    system: MechanicalSystem

    def __init__(self, system: MechanicalSystem):
        self.system = system
        self.state = system.state
        self.nu = system.nu

    def acceleration(self, x, u, data: ActionData) -> np.ndarray:
        raise NotImplementedError

    def partials(self, x, u, data: ActionData):
        """(a_q, a_v, a_u) tangent-space partials; acceleration ran first."""
        raise NotImplementedError


class FreeMechanicalDynamics(DifferentialDynamics):
    """Unconstrained acceleration: M(q) vdot = S u - bias(q, v)."""

    def acceleration(self, x, u, data):
        sys = self.system
        q, v = sys.split_state(x)
        M = sys.mass_matrix(q)
        tau = sys.actuation() @ u - sys.bias(q, v)
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(tau))):
            raise NumericalFailure("non-finite dynamics terms")
        try:
            factor = cho_factor(M, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("inertia factorization failed") from exc
        vdot = cho_solve(factor, tau)
        data.dyn = {"q": q, "v": v, "factor": factor, "vdot": vdot}
        return vdot

    def partials(self, x, u, data):
        sys = self.system
        q, v, factor, vdot = (data.dyn[k] for k in ("q", "v", "factor", "vdot"))
        if sys.has_analytic_partials:
            bq, bv = sys.bias_partials(q, v)
            mc = sys.inertia_contraction_partial(q, vdot)
            a_q = cho_solve(factor, -(bq + mc))
            a_v = cho_solve(factor, -bv)
            a_u = cho_solve(factor, sys.actuation())
            return a_q, a_v, a_u

        def accel(qq, vv, uu):
            tau = sys.actuation() @ uu - sys.bias(qq, vv)
            return np.linalg.solve(sys.mass_matrix(qq), tau)

        a_q = numdiff.jacobian(
            lambda qq: accel(qq, v, u), q, input_manifold=sys.config
        )
        a_v = numdiff.jacobian(lambda vv: accel(q, vv, u), v)
        a_u = numdiff.jacobian(lambda uu: accel(q, v, uu), u)
        return a_q, a_v, a_u


class ConstrainedMechanicalDynamics(DifferentialDynamics):
    """Acceleration under rigid frame constraints, via the primal-dual solve.

    Each active contact pins one system frame with Baumgarte-stabilized
    acceleration targets; the constraint-space reaction is eliminated through
    the factored saddle-point system.
    """

    def __init__(self, system: MechanicalSystem, contacts: ContactSet):
        super().__init__(system)
        self.contacts = contacts
        for contact in contacts.contacts:
            if contact.frame not in system.frames:
                raise DimensionMismatch(
                    f"system has no frame {contact.frame!r} for contact"
                )

    def _assemble(self, q, v):
        """Stack the constraint Jacobian and stabilized acceleration target."""
        sys = self.system
        rows_j, rows_a0 = [], []
        for contact in self.contacts.contacts:
            J = sys.frame_jacobian(q, contact.frame)
            drift = sys.frame_drift(q, v, contact.frame)
            placement = sys.frame_placement(q, contact.frame)
            rows_j.append(J)
            rows_a0.append(baumgarte_a0(contact, placement, J @ v, drift))
        return np.vstack(rows_j), np.concatenate(rows_a0)

    def acceleration(self, x, u, data):
        sys = self.system
        q, v = sys.split_state(x)
        M = sys.mass_matrix(q)
        tau_b = sys.actuation() @ u - sys.bias(q, v)
        Jc, a0 = self._assemble(q, v)
        ws = contact_forward_dynamics(M, Jc, tau_b, a0)
        data.dyn = {"q": q, "v": v, "ws": ws}
        return ws.vdot

    def partials(self, x, u, data):
        sys = self.system
        q, v, ws = (data.dyn[k] for k in ("q", "v", "ws"))
        nv, nu = sys.nv, sys.nu
        S = sys.actuation()

        if sys.has_analytic_partials and sys.constant_frames:
            # Constant frame Jacobians: the constraint rows depend on q only
            # through the tracked placement, and tau_b only through the bias
            # and the inertia contraction against the solved acceleration.
            bq, bv = sys.bias_partials(q, v)
            mc = sys.inertia_contraction_partial(q, ws.vdot)
            dtau_dx = np.hstack([-(bq + mc), -bv])
            da0_rows_q, da0_rows_v = [], []
            row = 0
            for contact in self.contacts.contacts:
                J = ws.Jc[row : row + contact.nf]
                da0_rows_q.append(contact.alpha * J)
                da0_rows_v.append(-contact.beta * J)
                row += contact.nf
            da0_dx = np.hstack([np.vstack(da0_rows_q), np.vstack(da0_rows_v)])
        else:
            # Finite differences of the two saddle-point rows at the frozen
            # solution; the factored inverse then turns them into Jacobians
            # of the solution itself.
            vdot_s, force_s = ws.vdot, ws.force

            def row_tau(qq, vv):
                tau_b = S @ u - sys.bias(qq, vv)
                return tau_b - sys.mass_matrix(qq) @ vdot_s + self._jc(qq).T @ force_s

            def row_a0(qq, vv):
                Jc, a0 = self._assemble(qq, vv)
                return a0 + Jc @ vdot_s

            dtau_dx = np.hstack(
                [
                    numdiff.jacobian(
                        lambda qq: row_tau(qq, v), q, input_manifold=sys.config
                    ),
                    numdiff.jacobian(lambda vv: row_tau(q, vv), v),
                ]
            )
            da0_dx = np.hstack(
                [
                    numdiff.jacobian(
                        lambda qq: row_a0(qq, v), q, input_manifold=sys.config
                    ),
                    numdiff.jacobian(lambda vv: row_a0(q, vv), v),
                ]
            )

        dtau_du = S
        da0_du = np.zeros((ws.nf, nu))
        y_x, y_u, g_x, g_u = contact_dynamics_derivatives(
            ws, dtau_dx, dtau_du, da0_dx, da0_du
        )
        data.dyn["force_x"] = g_x
        data.dyn["force_u"] = g_u
        return y_x[:, :nv], y_x[:, nv:], y_u

    def _jc(self, q):
        return np.vstack(
            [self.system.frame_jacobian(q, c.frame) for c in self.contacts.contacts]
        )


class LinearFlow:
    """First-order flow xdot = A x + B u + c on a vector-space state."""

    def __init__(self, linear: LinearDynamics):
        self.linear = linear
        self.state = linear.state
        self.nu = linear.nu

    def flow(self, x, u):
        return self.linear.flow(x, u)

    def partials(self):
        return self.linear.A, self.linear.B


# ---------------------------------------------------------------------------
# Action models
# ---------------------------------------------------------------------------


class ActionModelBase:
    """Shared shape bookkeeping and the cost aggregation helpers."""

    state: Manifold
    nu: int
    costs: tuple[CostTerm, ...]
    label: str

    def __init__(self, state: Manifold, nu: int, costs, label: str):
        self.state = state
        self.nu = int(nu)
        self.ndx = state.ndx
        self.costs = tuple(costs)
        self.label = label
        for term in self.costs:
            if term.ndx != self.ndx or term.nu != self.nu:
                raise DimensionMismatch(
                    f"cost term shaped ({term.ndx}, {term.nu}) attached to a "
                    f"({self.ndx}, {self.nu}) model"
                )

    def create_data(self) -> ActionData:
        return ActionData(self)

    def _check_inputs(self, x, u):
        x = self.state.check_point(x)
        u = np.asarray(u, dtype=float)
        if u.shape != (self.nu,):
            raise DimensionMismatch(f"control must have shape ({self.nu},), got {u.shape}")
        return x, u

    def _cost_value(self, x, u, scale: float) -> float:
        return scale * float(sum(term.value(x, u) for term in self.costs))

    def _cost_derivatives(self, data: ActionData, x, u, scale: float):
        data.l_x[:] = 0.0
        data.l_u[:] = 0.0
        data.l_xx[:] = 0.0
        data.l_xu[:] = 0.0
        data.l_uu[:] = 0.0
        for term in self.costs:
            l_x, l_u, l_xx, l_xu, l_uu = term.derivatives(x, u)
            data.l_x += scale * l_x
            data.l_u += scale * l_u
            data.l_xx += scale * l_xx
            data.l_xu += scale * l_xu
            data.l_uu += scale * l_uu
        data.l_xx[:] = 0.5 * (data.l_xx + data.l_xx.T)
        data.l_uu[:] = 0.5 * (data.l_uu + data.l_uu.T)

    def calc(self, data: ActionData, x, u) -> ActionData:
        raise NotImplementedError

    def calc_diff(self, data: ActionData, x, u) -> ActionData:
        raise NotImplementedError

    def _ensure_calc(self, data: ActionData, x, u):
        if (
            data._x is None
            or data._x.shape != x.shape
            or not np.array_equal(data._x, x)
            or not np.array_equal(data._u, u)
        ):
            self.calc(data, x, u)


class IntegratedActionModel(ActionModelBase):
    """One shooting node: continuous dynamics discretized over a step dt.

    Mechanical dynamics use a semi-implicit Euler step (velocity first, then
    configuration along the updated velocity); linear flows use an explicit
    Euler step. Costs are integrated as l(x, u) * dt.
    """

    def __init__(self, dynamics, costs=(), dt: float = 1e-3, label: str = "node"):
        if not dt > 0.0:
            raise DimensionMismatch(f"integration step must be positive, got {dt}")
        super().__init__(dynamics.state, dynamics.nu, costs, label)
        self.dynamics = dynamics
        self.dt = float(dt)
        self.first_order = isinstance(dynamics, LinearFlow)

    def calc(self, data, x, u):
        x, u = self._check_inputs(x, u)
        if self.first_order:
            xdot = self.dynamics.flow(x, u)
            if not np.all(np.isfinite(xdot)):
                raise NumericalFailure("non-finite flow in forward integration")
            data.xnext = x + self.dt * xdot
        else:
            sys = self.dynamics.system
            q, v = sys.split_state(x)
            vdot = self.dynamics.acceleration(x, u, data)
            if not np.all(np.isfinite(vdot)):
                raise NumericalFailure("non-finite acceleration in forward integration")
            v_next = v + self.dt * vdot
            q_next = sys.config.integrate(q, self.dt * v_next)
            data.xnext = np.concatenate([q_next, v_next])
            data.dyn["v_next"] = v_next
        data.cost = self._cost_value(x, u, self.dt)
        data._x, data._u = x.copy(), u.copy()
        return data

    def calc_diff(self, data, x, u):
        x, u = self._check_inputs(x, u)
        self._ensure_calc(data, x, u)
        dt = self.dt
        if self.first_order:
            A, B = self.dynamics.partials()
            data.f_x = np.eye(self.ndx) + dt * A
            data.f_u = dt * B
        else:
            sys = self.dynamics.system
            nv = sys.nv
            a_q, a_v, a_u = self.dynamics.partials(x, u, data)
            v_next = data.dyn["v_next"]
            q = data.dyn["q"]
            Jq, Jdx = sys.config.jintegrate(q, dt * v_next)
            eye = np.eye(nv)
            data.f_x = np.block(
                [
                    [Jq + Jdx @ (dt * dt * a_q), Jdx @ (dt * eye + dt * dt * a_v)],
                    [dt * a_q, eye + dt * a_v],
                ]
            )
            data.f_u = np.vstack([Jdx @ (dt * dt * a_u), dt * a_u])
        self._cost_derivatives(data, x, u, dt)
        return data


class TerminalActionModel(ActionModelBase):
    """Cost-only endpoint node: no controls, no state advance."""

    def __init__(self, state: Manifold, costs=(), label: str = "terminal"):
        super().__init__(state, 0, costs, label)

    def calc(self, data, x, u=None):
        x, u = self._check_inputs(x, np.zeros(0) if u is None else u)
        data.xnext = x.copy()
        data.cost = self._cost_value(x, u, 1.0)
        data._x, data._u = x.copy(), u.copy()
        return data

    def calc_diff(self, data, x, u=None):
        x, u = self._check_inputs(x, np.zeros(0) if u is None else u)
        self._ensure_calc(data, x, u)
        data.f_x = np.eye(self.ndx)
        data.f_u = np.zeros((self.ndx, 0))
        self._cost_derivatives(data, x, u, 1.0)
        return data


class ImpulseActionModel(ActionModelBase):
    """Instantaneous contact-gain switch: velocity jump, configuration frozen.

    The post-impact velocity comes from the impulse saddle-point solve with
    restitution e (e = 0 absorbs all normal velocity at the new contacts).
    The node consumes no control and no time, matching an event between two
    integration steps.
    """

    def __init__(
        self,
        system: MechanicalSystem,
        contacts: ContactSet,
        restitution: float = 0.0,
        costs=(),
        label: str = "impulse",
    ):
        super().__init__(system.state, 0, costs, label)
        self.system = system
        self.contacts = contacts
        self.restitution = float(restitution)
        for contact in contacts.contacts:
            if contact.frame not in system.frames:
                raise DimensionMismatch(
                    f"system has no frame {contact.frame!r} for impulse"
                )

    def _jc(self, q):
        return np.vstack(
            [self.system.frame_jacobian(q, c.frame) for c in self.contacts.contacts]
        )

    def calc(self, data, x, u=None):
        x, u = self._check_inputs(x, np.zeros(0) if u is None else u)
        sys = self.system
        q, v = sys.split_state(x)
        ws = impulse_dynamics(sys.mass_matrix(q), self._jc(q), v, self.restitution)
        if not np.all(np.isfinite(ws.v_plus)):
            raise NumericalFailure("non-finite post-impact velocity")
        data.xnext = np.concatenate([q, ws.v_plus])
        data.cost = self._cost_value(x, u, 1.0)
        data.dyn = {"q": q, "v": v, "ws": ws}
        data._x, data._u = x.copy(), u.copy()
        return data

    def calc_diff(self, data, x, u=None):
        x, u = self._check_inputs(x, np.zeros(0) if u is None else u)
        self._ensure_calc(data, x, u)
        sys = self.system
        nv = sys.nv
        q, v, ws = (data.dyn[k] for k in ("q", "v", "ws"))

        if not (sys.constant_frames and sys.has_analytic_partials):
            # Configuration partials of the two saddle-point rows at the
            # frozen solution, by manifold-aware finite differences.
            v_plus, imp, e = ws.v_plus, ws.impulse, ws.e

            def row_momentum(qq):
                return sys.mass_matrix(qq) @ (v_plus - v) - self._jc(qq).T @ imp

            def row_closure(qq):
                return self._jc(qq) @ (v_plus + e * v)

            ws.dr1_dq = numdiff.jacobian(row_momentum, q, input_manifold=sys.config)
            ws.dr2_dq = numdiff.jacobian(row_closure, q, input_manifold=sys.config)

        dvp_dq, dvp_dv, dimp_dq, dimp_dv = impulse_dynamics_derivatives(ws)
        data.f_x = np.block(
            [
                [np.eye(nv), np.zeros((nv, nv))],
                [dvp_dq, dvp_dv],
            ]
        )
        data.f_u = np.zeros((self.ndx, 0))
        data.dyn["impulse_x"] = np.hstack([dimp_dq, dimp_dv])
        self._cost_derivatives(data, x, u, 1.0)
        return data


# ---------------------------------------------------------------------------
# Quasi-static inverse dynamics
# ---------------------------------------------------------------------------


def quasi_static_control(model, x) -> np.ndarray:
    """Control holding the state still: acceleration ~ 0 at zero velocity.

    Runs damped Newton steps on the acceleration residual (the flow residual
    for first-order models), starting from zero control. Raises a
    non-convergence error carrying the best residual norm when the tolerance
    is not met within the iteration budget.
    """
    if model.nu == 0:
        return np.zeros(0)
    data = model.create_data()

    if getattr(model, "first_order", False):
        x0 = model.state.check_point(x)

        def residual(u):
            return model.dynamics.flow(x0, u)

        def control_jacobian(u):
            return model.dynamics.partials()[1]

    else:
        sys = model.dynamics.system
        q, _ = sys.split_state(x)
        x0 = np.concatenate([q, np.zeros(sys.nv)])

        def residual(u):
            return model.dynamics.acceleration(x0, u, data)

        def control_jacobian(u):
            # Only the control block is needed; differencing over the nu
            # control columns avoids the state partials entirely.
            return numdiff.jacobian(residual, u)

    u = np.zeros(model.nu)
    best_u, best_norm = u.copy(), np.inf
    for iteration in range(QUASI_STATIC_MAX_ITERS):
        r = residual(u)
        norm = float(np.linalg.norm(r))
        if norm < best_norm:
            best_norm, best_u = norm, u.copy()
        if norm <= QUASI_STATIC_TOL:
            return best_u
        J = control_jacobian(u)
        step = np.linalg.solve(
            J.T @ J + _QUASI_STATIC_DAMPING * np.eye(model.nu), -J.T @ r
        )
        if np.linalg.norm(J @ step) <= 0.01 * QUASI_STATIC_TOL:
            # The step cannot move the residual by a meaningful fraction of
            # the tolerance: its floor for this state is above the tolerance.
            raise QuasiStaticFailure(residual=best_norm, iterations=iteration + 1)
        u = u + step
    raise QuasiStaticFailure(residual=best_norm, iterations=QUASI_STATIC_MAX_ITERS)
