"""Central finite differences, aware of manifold-valued inputs and outputs."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .manifolds import Manifold

DEFAULT_STEP = 1e-6


def jacobian(
    f: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    *,
    input_manifold: Manifold | None = None,
    output_manifold: Manifold | None = None,
    step: float = DEFAULT_STEP,
) -> np.ndarray:
    """Tangent-space Jacobian of f at x by central differences.

    When `input_manifold` is given, perturbations are applied with integrate();
    when `output_manifold` is given, results are compared with difference()
    against the unperturbed value, so both sides stay second-order accurate.
    """
    x = np.asarray(x, dtype=float)
    n_in = input_manifold.ndx if input_manifold is not None else x.size
    base = np.atleast_1d(np.asarray(f(x), dtype=float)) if output_manifold is not None else None

    def perturb(i: int, sign: float) -> np.ndarray:
        e = np.zeros(n_in)
        e[i] = sign * step
        if input_manifold is not None:
            return input_manifold.integrate(x, e)
        return x + e

    columns = []
    for i in range(n_in):
        fp = np.atleast_1d(np.asarray(f(perturb(i, +1.0)), dtype=float))
        fm = np.atleast_1d(np.asarray(f(perturb(i, -1.0)), dtype=float))
        if output_manifold is not None:
            dp = output_manifold.difference(base, fp)
            dm = output_manifold.difference(base, fm)
            columns.append((dp - dm) / (2.0 * step))
        else:
            columns.append((fp - fm) / (2.0 * step))
    return np.stack(columns, axis=-1)


def gradient(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    *,
    input_manifold: Manifold | None = None,
    step: float = DEFAULT_STEP,
) -> np.ndarray:
    """Central-difference gradient of a scalar function, returned as a vector."""
    g = jacobian(lambda v: np.array([f(v)]), x, input_manifold=input_manifold, step=step)
    return g[0]
