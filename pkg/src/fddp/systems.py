"""Built-in dynamics catalogue.

Second-order mechanical systems follow the convention

    M(q) vdot + bias(q, v) = S u + Jc(q)^T force

with bias = Coriolis/centrifugal terms plus gravity. Everything here is
hand-derived: mass matrices and bias forces come from per-body velocity
Jacobians (planar kinematics), never from a generic tree algorithm.

Systems with `has_analytic_partials` expose closed-form residual partials;
the others (the monoped) are differentiated by central differences at the
action-model layer.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .manifolds import (
    CompositeManifold,
    Manifold,
    Rotation2D,
    VectorSpace,
)

GRAVITY = 9.81


def _unit_down(phi: float) -> np.ndarray:
    # Leg direction: points straight down at phi = 0.
    return np.array([np.sin(phi), -np.cos(phi)])


def _unit_side(phi: float) -> np.ndarray:
    # Derivative of _unit_down w.r.t. phi.
    return np.array([np.cos(phi), np.sin(phi)])


class MechanicalSystem:
    """Base for (q, v) systems. Subclasses fill the kinematic/dynamic terms."""

    nq: int
    nv: int
    nu: int
    config: Manifold
    frames: tuple[str, ...] = ()
    has_analytic_partials = False
    # True when every frame Jacobian is configuration-independent (and drifts
    # vanish), which makes the analytic contact-partial assembly valid.
    constant_frames = False

    def __init__(self):
        if self.config.nx != self.nq or self.config.ndx != self.nv:
            raise DimensionMismatch("configuration manifold does not match nq/nv")
        self.state = CompositeManifold([self.config, VectorSpace(self.nv)])

    # -- mandatory dynamics terms ------------------------------------------

    def mass_matrix(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bias(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def actuation(self) -> np.ndarray:
        raise NotImplementedError

    # -- optional analytic partials ----------------------------------------

    def bias_partials(self, q, v) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def inertia_contraction_partial(self, q, w) -> np.ndarray:
        """d/dq [M(q) w] for a fixed vector w, in configuration tangent coords."""
        raise NotImplementedError

    # -- frames (point frames: placement in R^2 or R^1) ---------------------

    def frame_placement(self, q, frame: str) -> np.ndarray:
        raise DimensionMismatch(f"system has no frame {frame!r}")

    def frame_jacobian(self, q, frame: str) -> np.ndarray:
        raise DimensionMismatch(f"system has no frame {frame!r}")

    def frame_drift(self, q, v, frame: str) -> np.ndarray:
        """Frame acceleration at zero joint acceleration (Jdot v)."""
        raise DimensionMismatch(f"system has no frame {frame!r}")

    def com(self, q) -> np.ndarray:
        raise NotImplementedError

    def com_jacobian(self, q) -> np.ndarray:
        raise NotImplementedError

    # -- helpers -------------------------------------------------------------

    def split_state(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = self.state.check_point(x)
        return x[: self.nq], x[self.nq :]

    def nominal_state(self) -> np.ndarray:
        return np.concatenate([self.config.neutral(), np.zeros(self.nv)])


class LinearDynamics:
    """First-order linear flow xdot = A x + B u + c (the LQR oracle model)."""

    def __init__(self, A, B, c=None):
        self.A = np.atleast_2d(np.asarray(A, float))
        self.B = np.atleast_2d(np.asarray(B, float))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n:
            raise DimensionMismatch("A must be square and B row-compatible")
        self.c = np.zeros(n) if c is None else np.asarray(c, float)
        if self.c.shape != (n,):
            raise DimensionMismatch("c must match the state dimension")
        self.nx = n
        self.nu = self.B.shape[1]
        self.state = VectorSpace(n)

    def flow(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u + self.c


class DoubleIntegrator(MechanicalSystem):
    """n independent unit masses, direct force control, no gravity."""

    has_analytic_partials = True
    constant_frames = True

    def __init__(self, dim: int = 2):
        self.nq = self.nv = self.nu = int(dim)
        self.config = VectorSpace(dim)
        super().__init__()

    def mass_matrix(self, q):
        return np.eye(self.nv)

    def bias(self, q, v):
        return np.zeros(self.nv)

    def actuation(self):
        return np.eye(self.nv)

    def bias_partials(self, q, v):
        z = np.zeros((self.nv, self.nv))
        return z, z.copy()

    def inertia_contraction_partial(self, q, w):
        return np.zeros((self.nv, self.nv))


class PointMass(MechanicalSystem):
    """Point mass with direct force control; gravity pulls the last coordinate.

    Frames: "point" (full position) and, for dim >= 2, "height" (last
    coordinate only, the vertical pin used by the hopper's stance phase).
    """

    has_analytic_partials = True
    constant_frames = True

    def __init__(self, dim: int = 2, mass: float = 1.0, gravity: float = GRAVITY):
        self.nq = self.nv = self.nu = int(dim)
        self.mass = float(mass)
        self.gravity = float(gravity)
        self.config = VectorSpace(dim)
        self.frames = ("point", "height") if dim >= 2 else ("point",)
        super().__init__()

    def mass_matrix(self, q):
        return self.mass * np.eye(self.nv)

    def bias(self, q, v):
        h = np.zeros(self.nv)
        h[-1] = self.mass * self.gravity
        return h

    def actuation(self):
        return np.eye(self.nv)

    def bias_partials(self, q, v):
        z = np.zeros((self.nv, self.nv))
        return z, z.copy()

    def inertia_contraction_partial(self, q, w):
        return np.zeros((self.nv, self.nv))

    def frame_placement(self, q, frame):
        if frame == "point":
            return np.array(q, float)
        if frame == "height" and self.nv >= 2:
            return np.array([q[-1]])
        return super().frame_placement(q, frame)

    def frame_jacobian(self, q, frame):
        if frame == "point":
            return np.eye(self.nv)
        if frame == "height" and self.nv >= 2:
            j = np.zeros((1, self.nv))
            j[0, -1] = 1.0
            return j
        return super().frame_jacobian(q, frame)

    def frame_drift(self, q, v, frame):
        if frame == "point":
            return np.zeros(self.nv)
        if frame == "height" and self.nv >= 2:
            return np.zeros(1)
        return super().frame_drift(q, v, frame)

    def com(self, q):
        return np.array(q, float)

    def com_jacobian(self, q):
        return np.eye(self.nv)


class Pendulum(MechanicalSystem):
    """Single planar link, angle measured from the hanging-down position."""

    has_analytic_partials = True
    frames = ("tip",)

    def __init__(self, mass=1.0, length=1.0, damping=0.0, gravity=GRAVITY):
        self.nq = self.nv = self.nu = 1
        self.mass = float(mass)
        self.length = float(length)
        self.damping = float(damping)
        self.gravity = float(gravity)
        self.config = VectorSpace(1)
        super().__init__()
        self._inertia = self.mass * self.length**2

    def mass_matrix(self, q):
        return np.array([[self._inertia]])

    def bias(self, q, v):
        return np.array(
            [
                self.mass * self.gravity * self.length * np.sin(q[0])
                + self.damping * v[0]
            ]
        )

    def actuation(self):
        return np.eye(1)

    def bias_partials(self, q, v):
        dq = np.array([[self.mass * self.gravity * self.length * np.cos(q[0])]])
        dv = np.array([[self.damping]])
        return dq, dv

    def inertia_contraction_partial(self, q, w):
        return np.zeros((1, 1))

    def frame_placement(self, q, frame):
        if frame != "tip":
            return super().frame_placement(q, frame)
        return self.length * _unit_down(q[0])

    def frame_jacobian(self, q, frame):
        if frame != "tip":
            return super().frame_jacobian(q, frame)
        return (self.length * _unit_side(q[0])).reshape(2, 1)

    def frame_drift(self, q, v, frame):
        if frame != "tip":
            return super().frame_drift(q, v, frame)
        return -self.length * _unit_down(q[0]) * v[0] ** 2

    def com(self, q):
        return self.length * _unit_down(q[0])

    def com_jacobian(self, q):
        return (self.length * _unit_side(q[0])).reshape(2, 1)


class DoublePendulum(MechanicalSystem):
    """Two planar links with both joints actuated, angles from hanging down."""

    has_analytic_partials = True
    frames = ("tip",)

    def __init__(
        self,
        m1=1.0,
        m2=1.0,
        l1=1.0,
        l2=1.0,
        lc1=0.5,
        lc2=0.5,
        gravity=GRAVITY,
    ):
        self.nq = self.nv = self.nu = 2
        self.m1, self.m2 = float(m1), float(m2)
        self.l1, self.l2 = float(l1), float(l2)
        self.lc1, self.lc2 = float(lc1), float(lc2)
        self.I1 = self.m1 * self.l1**2 / 12.0
        self.I2 = self.m2 * self.l2**2 / 12.0
        self.gravity = float(gravity)
        self.config = VectorSpace(2)
        super().__init__()
        self._coupling = self.m2 * self.l1 * self.lc2

    def mass_matrix(self, q):
        c2 = np.cos(q[1])
        b = self._coupling
        a11 = (
            self.I1
            + self.I2
            + self.m1 * self.lc1**2
            + self.m2 * (self.l1**2 + self.lc2**2 + 2.0 * self.l1 * self.lc2 * c2)
        )
        a12 = self.I2 + self.m2 * self.lc2**2 + b * c2
        a22 = self.I2 + self.m2 * self.lc2**2
        return np.array([[a11, a12], [a12, a22]])

    def _gravity_torque(self, q):
        g = self.gravity
        s1 = np.sin(q[0])
        s12 = np.sin(q[0] + q[1])
        k1 = self.m1 * self.lc1 + self.m2 * self.l1
        k2 = self.m2 * self.lc2
        return np.array([k1 * g * s1 + k2 * g * s12, k2 * g * s12])

    def bias(self, q, v):
        b = self._coupling
        s2 = np.sin(q[1])
        coriolis = np.array(
            [-b * s2 * (2.0 * v[0] * v[1] + v[1] ** 2), b * s2 * v[0] ** 2]
        )
        return coriolis + self._gravity_torque(q)

    def actuation(self):
        return np.eye(2)

    def bias_partials(self, q, v):
        b = self._coupling
        g = self.gravity
        s2, c2 = np.sin(q[1]), np.cos(q[1])
        c1 = np.cos(q[0])
        c12 = np.cos(q[0] + q[1])
        k1 = self.m1 * self.lc1 + self.m2 * self.l1
        k2 = self.m2 * self.lc2
        dq = np.array(
            [
                [
                    k1 * g * c1 + k2 * g * c12,
                    -b * c2 * (2.0 * v[0] * v[1] + v[1] ** 2) + k2 * g * c12,
                ],
                [k2 * g * c12, b * c2 * v[0] ** 2 + k2 * g * c12],
            ]
        )
        dv = np.array(
            [
                [-2.0 * b * s2 * v[1], -2.0 * b * s2 * (v[0] + v[1])],
                [2.0 * b * s2 * v[0], 0.0],
            ]
        )
        return dq, dv

    def inertia_contraction_partial(self, q, w):
        s2 = np.sin(q[1])
        b = self._coupling
        dcol2 = np.array(
            [-2.0 * b * s2 * w[0] - b * s2 * w[1], -b * s2 * w[0]]
        )
        out = np.zeros((2, 2))
        out[:, 1] = dcol2
        return out

    def frame_placement(self, q, frame):
        if frame != "tip":
            return super().frame_placement(q, frame)
        return self.l1 * _unit_down(q[0]) + self.l2 * _unit_down(q[0] + q[1])

    def frame_jacobian(self, q, frame):
        if frame != "tip":
            return super().frame_jacobian(q, frame)
        e1 = _unit_side(q[0])
        e12 = _unit_side(q[0] + q[1])
        j = np.zeros((2, 2))
        j[:, 0] = self.l1 * e1 + self.l2 * e12
        j[:, 1] = self.l2 * e12
        return j

    def frame_drift(self, q, v, frame):
        if frame != "tip":
            return super().frame_drift(q, v, frame)
        w1 = v[0]
        w12 = v[0] + v[1]
        return -self.l1 * _unit_down(q[0]) * w1**2 - self.l2 * _unit_down(
            q[0] + q[1]
        ) * w12**2

    def com(self, q):
        p1 = self.lc1 * _unit_down(q[0])
        p2 = self.l1 * _unit_down(q[0]) + self.lc2 * _unit_down(q[0] + q[1])
        return (self.m1 * p1 + self.m2 * p2) / (self.m1 + self.m2)

    def com_jacobian(self, q):
        e1 = _unit_side(q[0])
        e12 = _unit_side(q[0] + q[1])
        j = np.zeros((2, 2))
        j[:, 0] = (self.m1 * self.lc1 + self.m2 * self.l1) * e1 + self.m2 * self.lc2 * e12
        j[:, 1] = self.m2 * self.lc2 * e12
        return j / (self.m1 + self.m2)


class PlanarMonoped(MechanicalSystem):
    """Floating planar base with a two-link leg; only the leg joints actuated.

    Configuration (x, z, theta, hip, knee): base translation in R^2, wrapped
    base heading, then the two relative joint angles. All dynamics terms come
    from the three per-body velocity Jacobians; derivative partials are left
    to the finite-difference fallback.
    """

    frames = ("foot", "hip")

    def __init__(
        self,
        base_mass=1.0,
        base_inertia=0.05,
        thigh_mass=0.25,
        shank_mass=0.15,
        thigh_length=0.35,
        shank_length=0.35,
        gravity=GRAVITY,
    ):
        self.nq = self.nv = 5
        self.nu = 2
        self.mB = float(base_mass)
        self.IB = float(base_inertia)
        self.m1 = float(thigh_mass)
        self.m2 = float(shank_mass)
        self.l1 = float(thigh_length)
        self.l2 = float(shank_length)
        self.lc1 = 0.5 * self.l1
        self.lc2 = 0.5 * self.l2
        self.I1 = self.m1 * self.l1**2 / 12.0
        self.I2 = self.m2 * self.l2**2 / 12.0
        self.gravity = float(gravity)
        self.config = CompositeManifold([VectorSpace(2), Rotation2D(), VectorSpace(2)])
        super().__init__()
        self.total_mass = self.mB + self.m1 + self.m2

    # Per-body linear velocity Jacobians (2x5) and angular rows (5,).

    def _body_jacobians(self, q):
        phi1 = q[2] + q[3]
        phi2 = phi1 + q[4]
        e1 = _unit_side(phi1)
        e2 = _unit_side(phi2)
        jB = np.zeros((2, 5))
        jB[:, :2] = np.eye(2)
        j1 = jB.copy()
        j1[:, 2] = self.lc1 * e1
        j1[:, 3] = self.lc1 * e1
        j2 = jB.copy()
        j2[:, 2] = self.l1 * e1 + self.lc2 * e2
        j2[:, 3] = self.l1 * e1 + self.lc2 * e2
        j2[:, 4] = self.lc2 * e2
        wB = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
        w1 = np.array([0.0, 0.0, 1.0, 1.0, 0.0])
        w2 = np.array([0.0, 0.0, 1.0, 1.0, 1.0])
        return (jB, j1, j2), (wB, w1, w2)

    def _body_jacobian_rates(self, q, v):
        phi1 = q[2] + q[3]
        phi2 = phi1 + q[4]
        w1 = v[2] + v[3]
        w2 = w1 + v[4]
        de1 = -_unit_down(phi1) * w1
        de2 = -_unit_down(phi2) * w2
        djB = np.zeros((2, 5))
        dj1 = djB.copy()
        dj1[:, 2] = self.lc1 * de1
        dj1[:, 3] = self.lc1 * de1
        dj2 = djB.copy()
        dj2[:, 2] = self.l1 * de1 + self.lc2 * de2
        dj2[:, 3] = self.l1 * de1 + self.lc2 * de2
        dj2[:, 4] = self.lc2 * de2
        return djB, dj1, dj2

    def mass_matrix(self, q):
        (jB, j1, j2), (wB, w1, w2) = self._body_jacobians(q)
        m = self.mB * jB.T @ jB + self.m1 * j1.T @ j1 + self.m2 * j2.T @ j2
        m += self.IB * np.outer(wB, wB) + self.I1 * np.outer(w1, w1)
        m += self.I2 * np.outer(w2, w2)
        return m

    def bias(self, q, v):
        (jB, j1, j2), _ = self._body_jacobians(q)
        djB, dj1, dj2 = self._body_jacobian_rates(q, v)
        g_vec = np.array([0.0, -self.gravity])
        h = self.mB * jB.T @ (djB @ v - g_vec)
        h += self.m1 * j1.T @ (dj1 @ v - g_vec)
        h += self.m2 * j2.T @ (dj2 @ v - g_vec)
        return h

    def actuation(self):
        s = np.zeros((5, 2))
        s[3, 0] = 1.0
        s[4, 1] = 1.0
        return s

    def frame_placement(self, q, frame):
        if frame == "hip":
            return np.array(q[:2], float)
        if frame != "foot":
            return super().frame_placement(q, frame)
        phi1 = q[2] + q[3]
        phi2 = phi1 + q[4]
        return q[:2] + self.l1 * _unit_down(phi1) + self.l2 * _unit_down(phi2)

    def frame_jacobian(self, q, frame):
        if frame == "hip":
            j = np.zeros((2, 5))
            j[:, :2] = np.eye(2)
            return j
        if frame != "foot":
            return super().frame_jacobian(q, frame)
        phi1 = q[2] + q[3]
        phi2 = phi1 + q[4]
        e1 = _unit_side(phi1)
        e2 = _unit_side(phi2)
        j = np.zeros((2, 5))
        j[:, :2] = np.eye(2)
        j[:, 2] = self.l1 * e1 + self.l2 * e2
        j[:, 3] = self.l1 * e1 + self.l2 * e2
        j[:, 4] = self.l2 * e2
        return j

    def frame_drift(self, q, v, frame):
        if frame == "hip":
            return np.zeros(2)
        if frame != "foot":
            return super().frame_drift(q, v, frame)
        phi1 = q[2] + q[3]
        phi2 = phi1 + q[4]
        w1 = v[2] + v[3]
        w2 = w1 + v[4]
        return -self.l1 * _unit_down(phi1) * w1**2 - self.l2 * _unit_down(phi2) * w2**2

    def com(self, q):
        phi1 = q[2] + q[3]
        phi2 = phi1 + q[4]
        pB = np.array(q[:2], float)
        p1 = pB + self.lc1 * _unit_down(phi1)
        p2 = pB + self.l1 * _unit_down(phi1) + self.lc2 * _unit_down(phi2)
        return (self.mB * pB + self.m1 * p1 + self.m2 * p2) / self.total_mass

    def com_jacobian(self, q):
        (jB, j1, j2), _ = self._body_jacobians(q)
        return (self.mB * jB + self.m1 * j1 + self.m2 * j2) / self.total_mass


def lqr_chain_dynamics(masses: int = 3, stiffness: float = 4.0, damping: float = 0.4):
    """Spring-mass chain as a first-order linear flow; every mass actuated."""
    if masses < 1:
        raise DimensionMismatch("chain needs at least one mass")
    n = int(masses)
    K = np.zeros((n, n))
    for i in range(n):
        K[i, i] = -2.0 * stiffness
        if i > 0:
            K[i, i - 1] = stiffness
        if i < n - 1:
            K[i, i + 1] = stiffness
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = K
    A[n:, n:] = -damping * np.eye(n)
    B = np.zeros((2 * n, n))
    B[n:, :] = np.eye(n)
    return LinearDynamics(A, B)


SYSTEM_BUILDERS = {
    "double_integrator": DoubleIntegrator,
    "point_mass": PointMass,
    "pendulum": Pendulum,
    "double_pendulum": DoublePendulum,
    "planar_monoped": PlanarMonoped,
}


def build_system(model_id: str, params: dict | None = None):
    """Instantiate a catalogue system (or the LQR chain) by identifier."""
    params = dict(params or {})
    if model_id == "lqr_chain":
        return lqr_chain_dynamics(**params)
    try:
        builder = SYSTEM_BUILDERS[model_id]
    except KeyError:
        known = ", ".join(sorted([*SYSTEM_BUILDERS, "lqr_chain"]))
        raise DimensionMismatch(f"unknown model id {model_id!r}; known: {known}") from None
    return builder(**params)
