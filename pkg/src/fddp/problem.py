"""Multiple-shooting problem container: node models, rollouts, and gaps.

A problem is the measured initial state, N running action models, and one
terminal model, all sharing a state manifold. Evaluating a state/control guess
produces the total cost and the per-node dynamics gaps: the tangent-space
mismatch between where each node's dynamics lands and where the guess says the
next state is (plus the mismatch between the guess and the measured initial
state at node 0).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .action import ActionData, ActionModelBase
from .errors import DimensionMismatch, NumericalFailure


class ShootingProblem:
    """Initial constraint, N running models, and a terminal cost model."""

    def __init__(self, x0_measured, running_models, terminal_model: ActionModelBase):
        running_models = list(running_models)
        if len(running_models) < 1:
            raise DimensionMismatch("a shooting problem needs at least one running model")
        state = terminal_model.state
        for k, model in enumerate(running_models):
            if model.state != state:
                raise DimensionMismatch(f"running model {k} lives on a different manifold")
        self.state = state
        self.running_models = running_models
        self.terminal_model = terminal_model
        self.x0_measured = state.check_point(x0_measured)
        self.N = len(running_models)
        self.ndx = state.ndx
        self.datas, self.terminal_data = self.create_datas()

    # -- data containers -----------------------------------------------------

    def create_datas(self) -> tuple[list[ActionData], ActionData]:
        return (
            [m.create_data() for m in self.running_models],
            self.terminal_model.create_data(),
        )

    # -- validation ------------------------------------------------------------

    def check_trajectories(self, X, U):
        if len(X) != self.N + 1:
            raise DimensionMismatch(f"X must hold {self.N + 1} states, got {len(X)}")
        if len(U) != self.N:
            raise DimensionMismatch(f"U must hold {self.N} controls, got {len(U)}")

    # -- evaluation ------------------------------------------------------------

    def rollout(self, U, datas=None):
        """Integrate the controls from the measured initial state (feasible X)."""
        if len(U) != self.N:
            raise DimensionMismatch(f"U must hold {self.N} controls, got {len(U)}")
        running, terminal = (datas or (self.datas, self.terminal_data))[:2]
        X = [self.x0_measured.copy()]
        for k, model in enumerate(self.running_models):
            try:
                model.calc(running[k], X[k], U[k])
            except NumericalFailure as exc:
                raise NumericalFailure(str(exc), node=k) from exc
            X.append(running[k].xnext.copy())
        return X

    def calc(self, X, U, datas=None) -> tuple[float, list[np.ndarray]]:
        """Total cost and dynamics gaps of a (possibly infeasible) guess.

        gaps[0] is the measured initial state minus the guessed one; gaps[k+1]
        is where node k's dynamics lands minus the guessed X[k+1], both as
        tangent vectors at the guessed states.
        """
        self.check_trajectories(X, U)
        running, terminal = (datas or (self.datas, self.terminal_data))[:2]
        gaps = [self.state.difference(X[0], self.x0_measured)]
        cost = 0.0
        for k, model in enumerate(self.running_models):
            try:
                model.calc(running[k], X[k], U[k])
            except NumericalFailure as exc:
                raise NumericalFailure(str(exc), node=k) from exc
            cost += running[k].cost
            gaps.append(self.state.difference(X[k + 1], running[k].xnext))
        self.terminal_model.calc(terminal, X[self.N])
        cost += terminal.cost
        if not np.isfinite(cost):
            raise NumericalFailure("non-finite total cost", node=self.N)
        return cost, gaps

    def calc_diff(self, X, U, datas=None, threads: int = 1):
        """Evaluate all node derivatives at the guess.

        Nodes are independent, so with threads > 1 the per-node work is spread
        over a thread pool; every worker writes only its own node's data
        container, keeping results identical to the sequential order.
        """
        self.check_trajectories(X, U)
        running, terminal = (datas or (self.datas, self.terminal_data))[:2]

        def node(k: int):
            try:
                self.running_models[k].calc_diff(running[k], X[k], U[k])
            except NumericalFailure as exc:
                raise NumericalFailure(str(exc), node=k) from exc

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for future in [pool.submit(node, k) for k in range(self.N)]:
                    future.result()
        else:
            for k in range(self.N):
                node(k)
        self.terminal_model.calc_diff(terminal, X[self.N])
        return running, terminal

    # -- convenience -----------------------------------------------------------

    def zero_controls(self) -> list[np.ndarray]:
        return [np.zeros(m.nu) for m in self.running_models]

    def constant_state_guess(self) -> list[np.ndarray]:
        return [self.x0_measured.copy() for _ in range(self.N + 1)]


def gap_l2_norm(gaps) -> float:
    """L2 norm over the stacked tangent coordinates of every gap."""
    return float(np.sqrt(sum(float(g @ g) for g in gaps)))
