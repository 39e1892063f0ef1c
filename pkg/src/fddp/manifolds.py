"""Differential-geometry primitives for state spaces.

Points live in coordinate arrays of size ``nx``; perturbations live in tangent
arrays of size ``ndx``. Every manifold implements the four operators

    integrate(x, dx)      retract a tangent step onto the manifold
    difference(x0, x1)    tangent vector at x0 pointing to x1
    jintegrate(x, dx)     Jacobians of integrate w.r.t. (x, dx)
    jdifference(x0, x1)   Jacobians of difference w.r.t. (x0, x1)

with the right-handed convention: on a rotation group,
integrate(x, dx) = x * exp(dx) and difference(x0, x1) = log(x0^-1 * x1).
Rotations are stored as unit quaternions (w, x, y, z) in points and as
axis-angle vectors in tangents; every integrate renormalizes its result.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from .errors import DimensionMismatch

_TWO_PI = 2.0 * np.pi


def _as_vector(value, size: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (size,):
        raise DimensionMismatch(f"{what} must have shape ({size},), got {arr.shape}")
    return arr


class Manifold(ABC):
    """Base class; concrete manifolds define nx, ndx and the four operators."""

    nx: int
    ndx: int

    # -- validation -------------------------------------------------------

    def check_point(self, x) -> np.ndarray:
        return _as_vector(x, self.nx, "point")

    def check_tangent(self, dx) -> np.ndarray:
        return _as_vector(dx, self.ndx, "tangent")

    # -- operators --------------------------------------------------------

    @abstractmethod
    def neutral(self) -> np.ndarray:
        """Canonical origin point."""

    @abstractmethod
    def integrate(self, x, dx) -> np.ndarray: ...

    @abstractmethod
    def difference(self, x0, x1) -> np.ndarray: ...

    @abstractmethod
    def jintegrate(self, x, dx) -> tuple[np.ndarray, np.ndarray]: ...

    @abstractmethod
    def jdifference(self, x0, x1) -> tuple[np.ndarray, np.ndarray]: ...

    def normalize(self, x) -> np.ndarray:
        """Map coordinates to their normal form (unit quaternions, wrapped angles)."""
        return self.check_point(x)

    # -- sampling (deterministic given the rng state) ----------------------

    @abstractmethod
    def random_point(self, rng: np.random.Generator) -> np.ndarray: ...

    def random_tangent(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        return scale * rng.standard_normal(self.ndx)

    def zero_tangent(self) -> np.ndarray:
        return np.zeros(self.ndx)


class VectorSpace(Manifold):
    """Flat R^n; integrate/difference are plain addition/subtraction."""

    def __init__(self, dim: int):
        if dim < 0:
            raise DimensionMismatch(f"vector space dimension must be >= 0, got {dim}")
        self.nx = int(dim)
        self.ndx = int(dim)

    def neutral(self) -> np.ndarray:
        return np.zeros(self.nx)

    def integrate(self, x, dx) -> np.ndarray:
        return self.check_point(x) + self.check_tangent(dx)

    def difference(self, x0, x1) -> np.ndarray:
        return self.check_point(x1) - self.check_point(x0)

    def jintegrate(self, x, dx):
        self.check_point(x), self.check_tangent(dx)
        return np.eye(self.ndx), np.eye(self.ndx)

    def jdifference(self, x0, x1):
        self.check_point(x0), self.check_point(x1)
        return -np.eye(self.ndx), np.eye(self.ndx)

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.nx)

    def __eq__(self, other):
        return isinstance(other, VectorSpace) and other.nx == self.nx

    def __repr__(self):
        return f"VectorSpace({self.nx})"


def _wrap_angle(theta: float) -> float:
    # Normal form (-pi, pi]; theta = -pi maps to +pi.
    return np.pi - np.remainder(np.pi - theta, _TWO_PI)


class Rotation2D(Manifold):
    """Planar rotations stored as a single wrapped angle in (-pi, pi]."""

    nx = 1
    ndx = 1

    def neutral(self) -> np.ndarray:
        return np.zeros(1)

    def normalize(self, x) -> np.ndarray:
        x = self.check_point(x)
        return np.array([_wrap_angle(x[0])])

    def integrate(self, x, dx) -> np.ndarray:
        x = self.check_point(x)
        dx = self.check_tangent(dx)
        return np.array([_wrap_angle(x[0] + dx[0])])

    def difference(self, x0, x1) -> np.ndarray:
        x0 = self.check_point(x0)
        x1 = self.check_point(x1)
        return np.array([_wrap_angle(x1[0] - x0[0])])

    def jintegrate(self, x, dx):
        self.check_point(x), self.check_tangent(dx)
        return np.eye(1), np.eye(1)

    def jdifference(self, x0, x1):
        self.check_point(x0), self.check_point(x1)
        return -np.eye(1), np.eye(1)

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(-np.pi, np.pi)])

    def __eq__(self, other):
        return isinstance(other, Rotation2D)

    def __repr__(self):
        return "Rotation2D()"


# -- quaternion helpers (w, x, y, z layout) --------------------------------


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def _quat_exp(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    if theta < 1e-8:
        # sin(t/2)/t and cos(t/2) to second order
        s = 0.5 - theta * theta / 48.0
        c = 1.0 - theta * theta / 8.0
    else:
        s = np.sin(0.5 * theta) / theta
        c = np.cos(0.5 * theta)
    q = np.empty(4)
    q[0] = c
    q[1:] = s * w
    return q / np.linalg.norm(q)


def _lexicographic_flip(axis: np.ndarray) -> np.ndarray:
    # Of {axis, -axis} return the lexicographically larger one.
    for component in axis:
        if component > 0.0:
            return axis
        if component < 0.0:
            return -axis
    return axis


def _quat_log(q: np.ndarray) -> np.ndarray:
    q = q / np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    vec = q[1:]
    vn = np.linalg.norm(vec)
    if q[0] < 1e-12:
        # Half-turn: both signs of the axis encode the same rotation, pick one.
        axis = _lexicographic_flip(vec / vn)
        return np.pi * axis
    if vn < 1e-9:
        return vec * (2.0 / q[0]) * (1.0 - (vn / q[0]) ** 2 / 3.0)
    return vec * (2.0 * np.arctan2(vn, q[0]) / vn)


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def _rotation_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _right_jacobian(w: np.ndarray) -> np.ndarray:
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    S = _skew(w)
    if theta < 1e-5:
        c1 = 0.5 - theta2 / 24.0
        c2 = 1.0 / 6.0 - theta2 / 120.0
    else:
        c1 = (1.0 - np.cos(theta)) / theta2
        c2 = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) - c1 * S + c2 * (S @ S)


def _right_jacobian_inv(w: np.ndarray) -> np.ndarray:
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    S = _skew(w)
    if theta < 1e-5:
        c = 1.0 / 12.0 + theta2 / 720.0
    else:
        c = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * S + c * (S @ S)


class Rotation3D(Manifold):
    """Spatial rotations: unit quaternion points, axis-angle tangents.

    difference() returns the principal-branch logarithm (angle in [0, pi]);
    at exactly a half turn the axis sign is chosen lexicographically so
    antipodal inputs map to a deterministic result.
    """

    nx = 4
    ndx = 3

    def neutral(self) -> np.ndarray:
        return np.array([1.0, 0.0, 0.0, 0.0])

    def normalize(self, x) -> np.ndarray:
        x = self.check_point(x)
        n = np.linalg.norm(x)
        if n == 0.0:
            raise DimensionMismatch("zero quaternion cannot be normalized")
        return x / n

    def integrate(self, x, dx) -> np.ndarray:
        x = self.check_point(x)
        dx = self.check_tangent(dx)
        q = _quat_mul(x, _quat_exp(dx))
        return q / np.linalg.norm(q)

    def difference(self, x0, x1) -> np.ndarray:
        x0 = self.check_point(x0)
        x1 = self.check_point(x1)
        return _quat_log(_quat_mul(_quat_conj(x0), x1))

    def jintegrate(self, x, dx):
        self.check_point(x)
        dx = self.check_tangent(dx)
        return _rotation_matrix(_quat_exp(dx)).T, _right_jacobian(dx)

    def jdifference(self, x0, x1):
        d = self.difference(x0, x1)
        j_inv = _right_jacobian_inv(d)
        return -j_inv.T, j_inv

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        q = rng.standard_normal(4)
        return q / np.linalg.norm(q)

    def random_tangent(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        w = scale * rng.standard_normal(3)
        n = np.linalg.norm(w)
        if n >= 0.99 * np.pi:
            w *= 0.9 * np.pi / n
        return w

    def __eq__(self, other):
        return isinstance(other, Rotation3D)

    def __repr__(self):
        return "Rotation3D()"


class CompositeManifold(Manifold):
    """Cartesian product of manifolds; coordinates and tangents concatenate."""

    def __init__(self, parts: list[Manifold], label: str | None = None):
        if not parts:
            raise DimensionMismatch("composite manifold needs at least one part")
        self.parts = list(parts)
        self.label = label
        self.nx = sum(p.nx for p in parts)
        self.ndx = sum(p.ndx for p in parts)
        self._x_slices: list[slice] = []
        self._dx_slices: list[slice] = []
        ix = idx = 0
        for p in parts:
            self._x_slices.append(slice(ix, ix + p.nx))
            self._dx_slices.append(slice(idx, idx + p.ndx))
            ix += p.nx
            idx += p.ndx

    def neutral(self) -> np.ndarray:
        return np.concatenate([p.neutral() for p in self.parts])

    def normalize(self, x) -> np.ndarray:
        x = self.check_point(x)
        return np.concatenate(
            [p.normalize(x[s]) for p, s in zip(self.parts, self._x_slices)]
        )

    def integrate(self, x, dx) -> np.ndarray:
        x = self.check_point(x)
        dx = self.check_tangent(dx)
        return np.concatenate(
            [
                p.integrate(x[sx], dx[sd])
                for p, sx, sd in zip(self.parts, self._x_slices, self._dx_slices)
            ]
        )

    def difference(self, x0, x1) -> np.ndarray:
        x0 = self.check_point(x0)
        x1 = self.check_point(x1)
        return np.concatenate(
            [p.difference(x0[s], x1[s]) for p, s in zip(self.parts, self._x_slices)]
        )

    def jintegrate(self, x, dx):
        x = self.check_point(x)
        dx = self.check_tangent(dx)
        jx = np.zeros((self.ndx, self.ndx))
        jd = np.zeros((self.ndx, self.ndx))
        for p, sx, sd in zip(self.parts, self._x_slices, self._dx_slices):
            a, b = p.jintegrate(x[sx], dx[sd])
            jx[sd, sd] = a
            jd[sd, sd] = b
        return jx, jd

    def jdifference(self, x0, x1):
        x0 = self.check_point(x0)
        x1 = self.check_point(x1)
        j0 = np.zeros((self.ndx, self.ndx))
        j1 = np.zeros((self.ndx, self.ndx))
        for p, sx, sd in zip(self.parts, self._x_slices, self._dx_slices):
            a, b = p.jdifference(x0[sx], x1[sx])
            j0[sd, sd] = a
            j1[sd, sd] = b
        return j0, j1

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([p.random_point(rng) for p in self.parts])

    def random_tangent(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        return np.concatenate([p.random_tangent(rng, scale) for p in self.parts])

    def __eq__(self, other):
        return (
            isinstance(other, CompositeManifold)
            and len(other.parts) == len(self.parts)
            and all(a == b for a, b in zip(self.parts, other.parts))
        )

    def __repr__(self):
        inner = ", ".join(repr(p) for p in self.parts)
        return f"CompositeManifold([{inner}])"


def planar_free_flyer() -> CompositeManifold:
    """Planar floating-base placement: R^2 translation x wrapped heading angle."""
    return CompositeManifold([VectorSpace(2), Rotation2D()], label="free_flyer_planar")


# -- config (de)serialization ----------------------------------------------


def manifold_from_config(spec) -> Manifold:
    """Build a manifold from its JSON-compatible description.

    Accepted kinds: {"kind": "vector", "dim": n}, {"kind": "rotation2d"},
    {"kind": "rotation3d"}, {"kind": "free_flyer_planar"},
    {"kind": "composite", "parts": [...]}.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise DimensionMismatch(f"manifold config must be a dict with 'kind', got {spec!r}")
    kind = spec["kind"]
    if kind == "vector":
        dim = spec.get("dim")
        if not isinstance(dim, int) or dim < 0:
            raise DimensionMismatch(f"vector manifold needs integer 'dim' >= 0, got {dim!r}")
        return VectorSpace(dim)
    if kind == "rotation2d":
        return Rotation2D()
    if kind == "rotation3d":
        return Rotation3D()
    if kind == "free_flyer_planar":
        return planar_free_flyer()
    if kind == "composite":
        parts = spec.get("parts")
        if not isinstance(parts, list) or not parts:
            raise DimensionMismatch("composite manifold needs a non-empty 'parts' list")
        return CompositeManifold([manifold_from_config(p) for p in parts])
    raise DimensionMismatch(f"unknown manifold kind {kind!r}")


def manifold_to_config(m: Manifold) -> dict:
    if isinstance(m, VectorSpace):
        return {"kind": "vector", "dim": m.nx}
    if isinstance(m, Rotation2D):
        return {"kind": "rotation2d"}
    if isinstance(m, Rotation3D):
        return {"kind": "rotation3d"}
    if isinstance(m, CompositeManifold):
        if m.label == "free_flyer_planar":
            return {"kind": "free_flyer_planar"}
        return {"kind": "composite", "parts": [manifold_to_config(p) for p in m.parts]}
    raise DimensionMismatch(f"cannot serialize manifold {m!r}")
