"""Tests for the built-in dynamics catalogue.

Every system is checked against oracles that do not reuse the implementation
code paths: body velocities obtained by finite differences of re-derived
body positions (kinetic energy), the gradient of potential energy (gravity
bias), the mass-matrix rate (Coriolis power identity), and finite
differences of placements (frame and center-of-mass Jacobians).
"""

import numpy as np
import pytest

from fddp import numdiff
from fddp.errors import DimensionMismatch
from fddp.systems import (
    DoubleIntegrator,
    DoublePendulum,
    LinearDynamics,
    Pendulum,
    PlanarMonoped,
    PointMass,
    build_system,
    lqr_chain_dynamics,
)

MECHANICAL_SYSTEMS = [
    DoubleIntegrator(dim=2),
    PointMass(dim=2, mass=1.3),
    Pendulum(mass=1.1, length=0.8, damping=0.2),
    DoublePendulum(m1=1.2, m2=0.7, l1=0.9, l2=0.6),
    PlanarMonoped(),
]
MECHANICAL_IDS = [
    "double_integrator",
    "point_mass",
    "pendulum",
    "double_pendulum",
    "planar_monoped",
]


def random_configuration(system, rng):
    q = rng.uniform(-1.2, 1.2, size=system.nq)
    return system.config.normalize(q)


def down(phi):
    return np.array([np.sin(phi), -np.cos(phi)])


# ---------------------------------------------------------------------------
# mass matrix
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("system", MECHANICAL_SYSTEMS, ids=MECHANICAL_IDS)
def test_mass_matrix_is_symmetric_positive_definite(system):
    rng = np.random.default_rng(1)
    for _ in range(20):
        q = random_configuration(system, rng)
        m = system.mass_matrix(q)
        np.testing.assert_allclose(m, m.T, atol=1e-12)
        assert np.linalg.eigvalsh(m).min() > 0.0


def monoped_body_states(sys, q):
    """Body centers and absolute angles re-derived from the constructor
    geometry: base at the translation, thigh and shank hanging below it."""
    phi1 = q[2] + q[3]
    phi2 = phi1 + q[4]
    base = np.array(q[:2])
    thigh = base + sys.lc1 * down(phi1)
    shank = base + sys.l1 * down(phi1) + sys.lc2 * down(phi2)
    return [
        (sys.mB, sys.IB, base, q[2]),
        (sys.m1, sys.I1, thigh, phi1),
        (sys.m2, sys.I2, shank, phi2),
    ]


def double_pendulum_body_states(sys, q):
    phi1 = q[0]
    phi2 = q[0] + q[1]
    c1 = sys.lc1 * down(phi1)
    c2 = sys.l1 * down(phi1) + sys.lc2 * down(phi2)
    return [(sys.m1, sys.I1, c1, phi1), (sys.m2, sys.I2, c2, phi2)]


@pytest.mark.parametrize(
    "system, body_states",
    [
        (DoublePendulum(m1=1.2, m2=0.7, l1=0.9, l2=0.6), double_pendulum_body_states),
        (PlanarMonoped(), monoped_body_states),
    ],
    ids=["double_pendulum", "planar_monoped"],
)
def test_kinetic_energy_matches_per_body_sum(system, body_states):
    # 0.5 v' M v must equal the sum over bodies of translational plus
    # rotational kinetic energy, with body velocities taken by central
    # differences of the re-derived body positions along q + t v.
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(20):
        q = rng.uniform(-1.2, 1.2, size=system.nq)
        v = rng.uniform(-1.5, 1.5, size=system.nv)
        ke = 0.5 * v @ system.mass_matrix(q) @ v
        oracle = 0.0
        plus = body_states(system, q + h * v)
        minus = body_states(system, q - h * v)
        for (m, inertia, p_plus, a_plus), (_, _, p_minus, a_minus) in zip(plus, minus):
            pdot = (p_plus - p_minus) / (2.0 * h)
            adot = (a_plus - a_minus) / (2.0 * h)
            oracle += 0.5 * m * pdot @ pdot + 0.5 * inertia * adot**2
        np.testing.assert_allclose(ke, oracle, rtol=1e-7, atol=1e-8)


# ---------------------------------------------------------------------------
# bias: gravity gradient and Coriolis power
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "system, total_mass",
    [
        (PointMass(dim=2, mass=1.3), 1.3),
        (Pendulum(mass=1.1, length=0.8, damping=0.2), 1.1),
        (DoublePendulum(m1=1.2, m2=0.7, l1=0.9, l2=0.6), 1.9),
        (PlanarMonoped(), PlanarMonoped().total_mass),
    ],
    ids=["point_mass", "pendulum", "double_pendulum", "planar_monoped"],
)
def test_zero_velocity_bias_is_potential_energy_gradient(system, total_mass):
    rng = np.random.default_rng(3)
    g = system.gravity

    def potential(q):
        return np.array([total_mass * g * system.com(q)[-1]])

    for _ in range(10):
        q = random_configuration(system, rng)
        grad = numdiff.jacobian(potential, q, input_manifold=system.config)[0]
        np.testing.assert_allclose(system.bias(q, np.zeros(system.nv)), grad, atol=1e-6)


def test_double_integrator_has_no_bias():
    system = DoubleIntegrator(dim=3)
    rng = np.random.default_rng(4)
    q, v = rng.standard_normal(3), rng.standard_normal(3)
    np.testing.assert_array_equal(system.bias(q, v), np.zeros(3))


@pytest.mark.parametrize(
    "system",
    [Pendulum(damping=0.0), DoublePendulum(m1=1.2, m2=0.7, l1=0.9, l2=0.6), PlanarMonoped()],
    ids=["pendulum", "double_pendulum", "planar_monoped"],
)
def test_velocity_bias_satisfies_power_identity(system):
    # For undamped mechanical systems the velocity-dependent bias terms must
    # satisfy v' (bias(q, v) - bias(q, 0)) = 0.5 v' Mdot v, with Mdot taken
    # by central differences of the mass matrix along q + t v.
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(20):
        q = rng.uniform(-1.2, 1.2, size=system.nq)
        v = rng.uniform(-1.5, 1.5, size=system.nv)
        mdot = (system.mass_matrix(q + h * v) - system.mass_matrix(q - h * v)) / (2.0 * h)
        lhs = v @ (system.bias(q, v) - system.bias(q, np.zeros(system.nv)))
        np.testing.assert_allclose(lhs, 0.5 * v @ mdot @ v, rtol=1e-7, atol=1e-8)


@pytest.mark.parametrize(
    "system",
    [
        DoubleIntegrator(dim=2),
        PointMass(dim=2, mass=1.3),
        Pendulum(mass=1.1, length=0.8, damping=0.2),
        DoublePendulum(m1=1.2, m2=0.7, l1=0.9, l2=0.6),
    ],
    ids=["double_integrator", "point_mass", "pendulum", "double_pendulum"],
)
def test_analytic_bias_partials_match_finite_differences(system):
    assert system.has_analytic_partials
    rng = np.random.default_rng(6)
    for _ in range(10):
        q = random_configuration(system, rng)
        v = rng.uniform(-1.5, 1.5, size=system.nv)
        dq, dv = system.bias_partials(q, v)
        fd_dq = numdiff.jacobian(
            lambda qv: system.bias(qv, v), q, input_manifold=system.config
        )
        fd_dv = numdiff.jacobian(lambda vv: system.bias(q, vv), v)
        np.testing.assert_allclose(dq, fd_dq, atol=1e-5)
        np.testing.assert_allclose(dv, fd_dv, atol=1e-5)


@pytest.mark.parametrize(
    "system",
    [
        DoubleIntegrator(dim=2),
        PointMass(dim=2, mass=1.3),
        Pendulum(mass=1.1, length=0.8, damping=0.2),
        DoublePendulum(m1=1.2, m2=0.7, l1=0.9, l2=0.6),
    ],
    ids=["double_integrator", "point_mass", "pendulum", "double_pendulum"],
)
def test_inertia_contraction_partial_matches_finite_differences(system):
    rng = np.random.default_rng(7)
    for _ in range(10):
        q = random_configuration(system, rng)
        w = rng.uniform(-1.5, 1.5, size=system.nv)
        analytic = system.inertia_contraction_partial(q, w)
        fd = numdiff.jacobian(
            lambda qv: system.mass_matrix(qv) @ w, q, input_manifold=system.config
        )
        np.testing.assert_allclose(analytic, fd, atol=1e-5)


# ---------------------------------------------------------------------------
# frames and center of mass
# ---------------------------------------------------------------------------


def frame_cases():
    return [
        (PointMass(dim=2, mass=1.3), "point"),
        (PointMass(dim=2, mass=1.3), "height"),
        (Pendulum(mass=1.1, length=0.8), "tip"),
        (DoublePendulum(m1=1.2, m2=0.7, l1=0.9, l2=0.6), "tip"),
        (PlanarMonoped(), "foot"),
        (PlanarMonoped(), "hip"),
    ]


@pytest.mark.parametrize(
    "system, frame",
    frame_cases(),
    ids=["point", "height", "pend_tip", "dpend_tip", "foot", "hip"],
)
def test_frame_jacobian_matches_finite_differences(system, frame):
    rng = np.random.default_rng(8)
    for _ in range(10):
        q = random_configuration(system, rng)
        fd = numdiff.jacobian(
            lambda qv: system.frame_placement(qv, frame),
            q,
            input_manifold=system.config,
        )
        np.testing.assert_allclose(system.frame_jacobian(q, frame), fd, atol=1e-5)


@pytest.mark.parametrize(
    "system, frame",
    frame_cases(),
    ids=["point", "height", "pend_tip", "dpend_tip", "foot", "hip"],
)
def test_frame_drift_is_jacobian_rate_times_velocity(system, frame):
    rng = np.random.default_rng(9)
    h = 1e-6
    for _ in range(10):
        q = rng.uniform(-1.2, 1.2, size=system.nq)
        v = rng.uniform(-1.5, 1.5, size=system.nv)
        jdot = (
            system.frame_jacobian(q + h * v, frame)
            - system.frame_jacobian(q - h * v, frame)
        ) / (2.0 * h)
        np.testing.assert_allclose(
            system.frame_drift(q, v, frame), jdot @ v, rtol=1e-6, atol=1e-7
        )


def test_unknown_frame_is_rejected():
    with pytest.raises(DimensionMismatch):
        Pendulum().frame_placement(np.zeros(1), "elbow")
    with pytest.raises(DimensionMismatch):
        PlanarMonoped().frame_jacobian(np.zeros(5), "head")


@pytest.mark.parametrize(
    "system",
    [
        PointMass(dim=2, mass=1.3),
        Pendulum(mass=1.1, length=0.8),
        DoublePendulum(m1=1.2, m2=0.7, l1=0.9, l2=0.6),
        PlanarMonoped(),
    ],
    ids=["point_mass", "pendulum", "double_pendulum", "planar_monoped"],
)
def test_com_jacobian_matches_finite_differences(system):
    rng = np.random.default_rng(10)
    for _ in range(10):
        q = random_configuration(system, rng)
        fd = numdiff.jacobian(system.com, q, input_manifold=system.config)
        np.testing.assert_allclose(system.com_jacobian(q), fd, atol=1e-5)


def test_monoped_reference_geometry():
    sys = PlanarMonoped()
    q0 = np.zeros(5)
    np.testing.assert_allclose(sys.frame_placement(q0, "foot"), [0.0, -0.7], atol=1e-12)
    np.testing.assert_allclose(sys.frame_placement(q0, "hip"), [0.0, 0.0], atol=1e-12)
    # Crouched start used by the hopping setups: the foot sits on the origin.
    q_hop = np.array(
        [-0.027613664924638515, 0.6120291867818464, 0.0, 0.55, -1.0098247237571105]
    )
    np.testing.assert_allclose(sys.frame_placement(q_hop, "foot"), [0.0, 0.0], atol=1e-9)


def test_monoped_actuation_drives_only_leg_joints():
    s = PlanarMonoped().actuation()
    expected = np.zeros((5, 2))
    expected[3, 0] = 1.0
    expected[4, 1] = 1.0
    np.testing.assert_array_equal(s, expected)


def test_state_helpers():
    sys = PlanarMonoped()
    assert sys.state.nx == 10 and sys.state.ndx == 10
    np.testing.assert_array_equal(sys.nominal_state(), np.zeros(10))
    q, v = sys.split_state(np.arange(10.0))
    np.testing.assert_array_equal(q, np.arange(5.0))
    np.testing.assert_array_equal(v, np.arange(5.0, 10.0))


# ---------------------------------------------------------------------------
# linear flows
# ---------------------------------------------------------------------------


def test_lqr_chain_default_structure():
    dyn = lqr_chain_dynamics()
    assert (dyn.nx, dyn.nu) == (6, 3)
    k_expected = np.array([[-8.0, 4.0, 0.0], [4.0, -8.0, 4.0], [0.0, 4.0, -8.0]])
    np.testing.assert_array_equal(dyn.A[:3, :3], np.zeros((3, 3)))
    np.testing.assert_array_equal(dyn.A[:3, 3:], np.eye(3))
    np.testing.assert_array_equal(dyn.A[3:, :3], k_expected)
    np.testing.assert_array_equal(dyn.A[3:, 3:], -0.4 * np.eye(3))
    np.testing.assert_array_equal(dyn.B[:3, :], np.zeros((3, 3)))
    np.testing.assert_array_equal(dyn.B[3:, :], np.eye(3))
    np.testing.assert_array_equal(dyn.c, np.zeros(6))


def test_lqr_chain_rejects_empty_chain():
    with pytest.raises(DimensionMismatch):
        lqr_chain_dynamics(masses=0)


def test_linear_dynamics_validates_shapes():
    with pytest.raises(DimensionMismatch):
        LinearDynamics(np.zeros((2, 3)), np.zeros((2, 1)))
    with pytest.raises(DimensionMismatch):
        LinearDynamics(np.eye(2), np.zeros((3, 1)))
    with pytest.raises(DimensionMismatch):
        LinearDynamics(np.eye(2), np.zeros((2, 1)), c=[1.0, 2.0, 3.0])


def test_linear_dynamics_flow():
    dyn = LinearDynamics([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], c=[0.0, -1.0])
    np.testing.assert_allclose(dyn.flow([1.0, 2.0], [3.0]), [2.0, 2.0])


# ---------------------------------------------------------------------------
# catalogue lookup
# ---------------------------------------------------------------------------


def test_build_system_by_identifier():
    sys = build_system("pendulum", {"mass": 2.0, "length": 0.5})
    assert isinstance(sys, Pendulum)
    assert sys.mass == 2.0 and sys.length == 0.5
    chain = build_system("lqr_chain", {"masses": 2})
    assert chain.nx == 4


def test_build_system_rejects_unknown_identifier():
    with pytest.raises(DimensionMismatch, match="unknown model id"):
        build_system("hexapod")
