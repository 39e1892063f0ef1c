"""Gap-aware trajectory optimization over multiple-shooting problems.

Two solver flavors share one machinery. The classical one (``ddp``) keeps every
iterate feasible: it first replaces the state guess by an integration of the
warm-start controls and its rollouts always chain node outputs directly. The
gap-tolerant one (``fddp``) keeps the state guess as given, measures the
dynamics gaps between consecutive shooting nodes, deflects the Value gradient
across those gaps in the backward pass, and contracts every gap by (1 - alpha)
during the forward rollout, closing them fully only when a unit step is
accepted.

The backward pass is a Riccati recursion over tangent-space derivatives with a
scalar Levenberg-Marquardt regularizer on the control Hessian. Step acceptance
uses the two-sided Goldstein test on a quadratic expected-improvement model
that accounts for open gaps. A dense KKT solve over the full multiple-shooting
system is included as an oracle for the search direction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import (
    DimensionMismatch,
    FactorizationError,
    KKTSingular,
    NotPositiveDefinite,
    NumericalFailure,
)
from .problem import ShootingProblem, gap_l2_norm

REG_MIN = 1e-9
REG_MAX = 1e9
GOLDSTEIN_LOW = 0.1
GOLDSTEIN_HIGH = 2.0
STEP_LENGTHS = tuple(0.5**i for i in range(11))
DENSE_KKT_SIZE_LIMIT = 2000


@dataclass
class TraceRow:
    """One solver iteration as it lands in the trace file."""

    iteration: int
    cost: float
    gap_l2: float
    step_length: float
    regularization: float
    expected_dj: float
    accepted: int


@dataclass
class SolveReport:
    """Per-iteration history plus the termination state of one solve."""

    solver: str
    rows: list[TraceRow] = field(default_factory=list)
    termination: str = "max_iters"
    timings: dict = field(default_factory=dict)
    gap_history: list = field(default_factory=list)
    iter_times: list = field(default_factory=list)
    deriv_times: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.rows[-1].iteration if self.rows else 0

    @property
    def final_cost(self) -> float:
        return self.rows[-1].cost if self.rows else float("nan")

    @property
    def converged(self) -> bool:
        return self.termination == "converged"


class SolverWorkspace:
    """Per-node quantities produced by the backward pass.

    Holds the local quadratic model (Q terms), the affine policy (feed-forward
    k_ff and feedback K_fb), the Value derivatives, and the current gaps. The
    control-sized arrays follow each node's own control dimension, so nodes
    without controls (switches, terminal) simply carry empty blocks.
    """

    def __init__(self, problem: ShootingProblem):
        N, ndx = problem.N, problem.ndx
        nus = [m.nu for m in problem.running_models]
        self.Q_x = [np.zeros(ndx) for _ in range(N)]
        self.Q_u = [np.zeros(nu) for nu in nus]
        self.Q_xx = [np.zeros((ndx, ndx)) for _ in range(N)]
        self.Q_xu = [np.zeros((ndx, nu)) for nu in nus]
        self.Q_uu = [np.zeros((nu, nu)) for nu in nus]
        self.k_ff = [np.zeros(nu) for nu in nus]
        self.K_fb = [np.zeros((nu, ndx)) for nu in nus]
        self.V_x = [np.zeros(ndx) for _ in range(N + 1)]
        self.V_xx = [np.zeros((ndx, ndx)) for _ in range(N + 1)]
        self.gaps = [np.zeros(ndx) for _ in range(N + 1)]
        self.d1 = 0.0
        self.d2 = 0.0
        self.mu = 0.0
        self.alpha = 0.0


def backward_pass(problem: ShootingProblem, ws: SolverWorkspace, mu: float, datas=None):
    """Riccati recursion from the terminal node, deflecting across open gaps.

    Reads the node derivatives from the data containers (calc_diff must have
    run at the current iterate) and ws.gaps. Raises a not-positive-definite
    error naming the node when the regularized control Hessian fails its
    Cholesky; the caller is expected to raise mu and retry.
    """
    running, terminal = datas or (problem.datas, problem.terminal_data)
    N = problem.N
    ws.V_x[N] = terminal.l_x.copy()
    ws.V_xx[N] = 0.5 * (terminal.l_xx + terminal.l_xx.T)
    for k in range(N - 1, -1, -1):
        d = running[k]
        vxx_next = ws.V_xx[k + 1]
        vx_next = ws.V_x[k + 1] + vxx_next @ ws.gaps[k + 1]
        fx_v = d.f_x.T @ vxx_next
        q_x = d.l_x + d.f_x.T @ vx_next
        q_xx = d.l_xx + fx_v @ d.f_x
        nu = d.f_u.shape[1]
        if nu == 0:
            ws.Q_x[k] = q_x
            ws.Q_xx[k] = q_xx
            ws.V_x[k] = q_x
            ws.V_xx[k] = 0.5 * (q_xx + q_xx.T)
            continue
        q_u = d.l_u + d.f_u.T @ vx_next
        q_xu = d.l_xu + fx_v @ d.f_u
        q_uu = d.l_uu + d.f_u.T @ vxx_next @ d.f_u
        q_uu = 0.5 * (q_uu + q_uu.T)
        try:
            factor = cho_factor(q_uu + mu * np.eye(nu), lower=True)
        except LinAlgError as exc:
            raise NotPositiveDefinite(k) from exc
        k_ff = -cho_solve(factor, q_u)
        K_fb = -cho_solve(factor, q_xu.T)
        ws.Q_x[k], ws.Q_u[k] = q_x, q_u
        ws.Q_xx[k], ws.Q_xu[k], ws.Q_uu[k] = q_xx, q_xu, q_uu
        ws.k_ff[k], ws.K_fb[k] = k_ff, K_fb
        ws.V_x[k] = q_x + q_xu @ k_ff
        v_xx = q_xx + q_xu @ K_fb
        ws.V_xx[k] = 0.5 * (v_xx + v_xx.T)
    ws.mu = mu
    return ws


def _policy_control(ws, state, k, U, X, x_hat, alpha):
    if U[k].shape[0] == 0:
        return U[k]
    dx = state.difference(X[k], x_hat)
    return U[k] + alpha * ws.k_ff[k] + ws.K_fb[k] @ dx


def forward_pass_ddp(problem, X, U, ws, alpha, datas=None):
    """Feasible rollout under the backward-pass policy: gaps stay closed."""
    running, terminal = datas or (problem.datas, problem.terminal_data)
    state = problem.state
    X_new, U_new = [problem.x0_measured.copy()], []
    cost = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k, model in enumerate(problem.running_models):
            u = _policy_control(ws, state, k, U, X, X_new[k], alpha)
            try:
                model.calc(running[k], X_new[k], u)
            except FactorizationError as exc:
                raise NumericalFailure(str(exc), node=k) from exc
            U_new.append(u)
            X_new.append(running[k].xnext.copy())
            cost += running[k].cost
        problem.terminal_model.calc(terminal, X_new[-1])
        cost += terminal.cost
    if not np.isfinite(cost):
        raise NumericalFailure("non-finite cost in rollout")
    return X_new, U_new, cost


def forward_pass_fddp(problem, X, U, ws, alpha, datas=None):
    """Gap-contracting rollout: each dynamics gap shrinks by (1 - alpha).

    The initial state and every node output are pulled back along the stored
    gap by the factor (1 - alpha) before becoming the next shooting state, so
    a unit step reproduces the feasible rollout exactly. Returned gaps are
    recomputed from the produced trajectory, not assumed.
    """
    running, terminal = datas or (problem.datas, problem.terminal_data)
    state = problem.state
    shrink = 1.0 - alpha
    x0 = state.integrate(problem.x0_measured, -shrink * ws.gaps[0])
    X_new, U_new = [x0], []
    gaps = [state.difference(x0, problem.x0_measured)]
    cost = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k, model in enumerate(problem.running_models):
            u = _policy_control(ws, state, k, U, X, X_new[k], alpha)
            try:
                model.calc(running[k], X_new[k], u)
            except FactorizationError as exc:
                raise NumericalFailure(str(exc), node=k) from exc
            U_new.append(u)
            x_next = state.integrate(running[k].xnext, -shrink * ws.gaps[k + 1])
            X_new.append(x_next)
            gaps.append(state.difference(x_next, running[k].xnext))
            cost += running[k].cost
        problem.terminal_model.calc(terminal, X_new[-1])
        cost += terminal.cost
    if not np.isfinite(cost):
        raise NumericalFailure("non-finite cost in rollout")
    return X_new, U_new, cost, gaps


def expected_improvement(problem, ws, X, X_trial):
    """Linear and quadratic coefficients of the expected cost change.

    The model covers both the policy step (feed-forward against the local
    quadratic) and the cost of closing the open gaps, measured around the
    trial trajectory's tangent deviation dx from the shooting nodes. The gap
    terms use the deflected value gradient (the gradient seen after sliding
    along the open gap), which is what makes the prediction come out positive
    when closing gaps must raise the cost; the acceptance test has a branch
    for exactly that case. The predicted change for a step of length alpha is
    d1*alpha + 0.5*d2*alpha^2.
    """
    state = problem.state
    d1 = 0.0
    d2 = 0.0
    for k in range(problem.N + 1):
        f = ws.gaps[k]
        dx = state.difference(X[k], X_trial[k])
        vxx_dx = ws.V_xx[k] @ dx
        vxx_f = ws.V_xx[k] @ f
        d1 += float(f @ (ws.V_x[k] + vxx_f - vxx_dx))
        d2 += float(f @ (2.0 * vxx_dx - vxx_f))
    for k in range(problem.N):
        if ws.k_ff[k].shape[0]:
            d1 += float(ws.k_ff[k] @ ws.Q_u[k])
            d2 += float(ws.k_ff[k] @ ws.Q_uu[k] @ ws.k_ff[k])
    ws.d1, ws.d2 = d1, d2
    return d1, d2


def goldstein_accept(
    cost_new: float,
    cost_old: float,
    dj: float,
    b1: float = GOLDSTEIN_LOW,
    b2: float = GOLDSTEIN_HIGH,
) -> bool:
    """Two-sided sufficient-change test.

    Descent predictions must realize at least the fraction b1 of the model;
    predicted ascent (possible while gaps are open) is tolerated up to the
    factor b2.
    """
    change = cost_new - cost_old
    if dj <= 0.0:
        return change <= b1 * dj
    return change <= b2 * dj


def solve(
    problem: ShootingProblem,
    X_guess=None,
    U_guess=None,
    *,
    solver: str = "fddp",
    max_iters: int = 100,
    tolerance: float = 1e-9,
    threads: int = 1,
    regularization_init: float = REG_MIN,
):
    """Run the iteration loop and return (X, U, report).

    Every pass through the loop performs one backward pass (with as many
    regularization bumps as Cholesky failures require) and one backtracking
    line search over step lengths 1, 1/2, ..., 2^-10, and appends exactly one
    trace row, accepted or not. Rejected line searches raise the regularizer
    tenfold and retry from the same iterate. Convergence is declared when the
    zero-step expected-improvement gradient plus the total gap norm falls
    under the tolerance. Failure states (regularization cap, non-finite
    evaluations) are recorded in the report, never raised.
    """
    if solver not in ("ddp", "fddp"):
        raise DimensionMismatch(f"unknown solver {solver!r}, expected 'ddp' or 'fddp'")
    if max_iters < 0:
        raise DimensionMismatch(f"max_iters must be >= 0, got {max_iters}")

    U = [np.asarray(u, float).copy() for u in U_guess] if U_guess is not None else problem.zero_controls()
    if X_guess is not None:
        X = [problem.state.check_point(x).copy() for x in X_guess]
    else:
        X = problem.constant_state_guess()

    report = SolveReport(solver=solver)
    timings = {"calc_diff": 0.0, "backward": 0.0, "forward": 0.0, "total": 0.0}
    t_start = time.perf_counter()
    current = (problem.datas, problem.terminal_data)
    trial = problem.create_datas()
    mu = float(regularization_init)

    def finish(termination):
        timings["total"] = time.perf_counter() - t_start
        report.termination = termination
        report.timings = timings
        return X, U, report

    try:
        if solver == "ddp":
            X = problem.rollout(U, datas=current)
        cost, gaps = problem.calc(X, U, datas=current)
    except (NumericalFailure, FactorizationError) as exc:
        report.rows.append(TraceRow(0, float("nan"), float("nan"), 0.0, mu, 0.0, 0))
        report.gap_history.append(None)
        return finish(f"failure: {exc}")

    ws = SolverWorkspace(problem)
    ws.gaps = gaps
    report.rows.append(TraceRow(0, cost, gap_l2_norm(gaps), 0.0, mu, 0.0, 1))
    report.gap_history.append([g.copy() for g in gaps])

    need_derivatives = True
    for it in range(1, max_iters + 1):
        t_iter = time.perf_counter()
        t_deriv = 0.0
        if need_derivatives:
            t0 = time.perf_counter()
            try:
                problem.calc_diff(X, U, datas=current, threads=threads)
            except (NumericalFailure, FactorizationError) as exc:
                return finish(f"failure: {exc}")
            t_deriv = time.perf_counter() - t0
            timings["calc_diff"] += t_deriv

        t0 = time.perf_counter()
        backward_ok = False
        while not backward_ok:
            try:
                backward_pass(problem, ws, mu, datas=current)
                backward_ok = True
            except NotPositiveDefinite:
                mu *= 10.0
                if mu > REG_MAX:
                    timings["backward"] += time.perf_counter() - t0
                    return finish("failure: regularization limit reached")
        timings["backward"] += time.perf_counter() - t0

        d1_stop, _ = expected_improvement(problem, ws, X, X)
        if abs(d1_stop) + gap_l2_norm(ws.gaps) < tolerance:
            return finish("converged")

        t0 = time.perf_counter()
        accepted = False
        alpha = STEP_LENGTHS[0]
        dj = 0.0
        for alpha in STEP_LENGTHS:
            try:
                if solver == "ddp":
                    X_try, U_try, cost_try = forward_pass_ddp(
                        problem, X, U, ws, alpha, datas=trial
                    )
                    gaps_try = [np.zeros(problem.ndx) for _ in range(problem.N + 1)]
                else:
                    X_try, U_try, cost_try, gaps_try = forward_pass_fddp(
                        problem, X, U, ws, alpha, datas=trial
                    )
            except NumericalFailure:
                continue
            d1, d2 = expected_improvement(problem, ws, X, X_try)
            dj = d1 * alpha + 0.5 * d2 * alpha * alpha
            if goldstein_accept(cost_try, cost, dj):
                X, U, cost = X_try, U_try, cost_try
                ws.gaps = gaps_try
                ws.alpha = alpha
                current, trial = trial, current
                accepted = True
                break
        timings["forward"] += time.perf_counter() - t0

        mu_used = ws.mu
        if accepted:
            mu = max(mu / 10.0, REG_MIN)
            need_derivatives = True
        else:
            mu *= 10.0
            need_derivatives = False
        report.rows.append(
            TraceRow(
                it,
                cost,
                gap_l2_norm(ws.gaps),
                alpha if accepted else STEP_LENGTHS[-1],
                mu_used,
                dj,
                int(accepted),
            )
        )
        report.gap_history.append([g.copy() for g in ws.gaps])
        report.iter_times.append(time.perf_counter() - t_iter)
        report.deriv_times.append(t_deriv)
        if not accepted and mu > REG_MAX:
            return finish("failure: regularization limit reached")

    return finish("max_iters")


def kkt_search_direction(problem: ShootingProblem, X, U, datas=None):
    """Newton direction from the dense KKT system of the whole problem.

    Assembles the block-sparse first-order optimality system of the
    multiple-shooting transcription (Gauss-Newton Hessian blocks on the
    diagonal, dynamics Jacobians in the constraints, gaps as the constraint
    right-hand side) and solves it as one dense symmetric system. Intended as
    a cross-check oracle on small problems.
    """
    N, ndx = problem.N, problem.ndx
    nus = [m.nu for m in problem.running_models]
    if N * (ndx + max(nus)) > DENSE_KKT_SIZE_LIMIT:
        raise DimensionMismatch(
            f"problem too large for the dense KKT oracle: {N * (ndx + max(nus))} > {DENSE_KKT_SIZE_LIMIT}"
        )
    running, terminal = datas or (problem.datas, problem.terminal_data)
    _, gaps = problem.calc(X, U, datas=(running, terminal))
    problem.calc_diff(X, U, datas=(running, terminal))

    x_off = []
    u_off = []
    offset = 0
    for k in range(N):
        x_off.append(offset)
        offset += ndx
        u_off.append(offset)
        offset += nus[k]
    x_off.append(offset)
    nvar = offset + ndx
    ncon = ndx * (N + 1)

    H = np.zeros((nvar, nvar))
    g = np.zeros(nvar)
    C = np.zeros((ncon, nvar))
    r = np.zeros(ncon)

    for k in range(N):
        d = running[k]
        xs, us = x_off[k], u_off[k]
        H[xs : xs + ndx, xs : xs + ndx] = d.l_xx
        H[xs : xs + ndx, us : us + nus[k]] = d.l_xu
        H[us : us + nus[k], xs : xs + ndx] = d.l_xu.T
        H[us : us + nus[k], us : us + nus[k]] = d.l_uu
        g[xs : xs + ndx] = d.l_x
        g[us : us + nus[k]] = d.l_u
    xs = x_off[N]
    H[xs : xs + ndx, xs : xs + ndx] = terminal.l_xx
    g[xs : xs + ndx] = terminal.l_x

    C[0:ndx, 0:ndx] = np.eye(ndx)
    r[0:ndx] = gaps[0]
    for k in range(N):
        d = running[k]
        row = ndx * (k + 1)
        C[row : row + ndx, x_off[k + 1] : x_off[k + 1] + ndx] = np.eye(ndx)
        C[row : row + ndx, x_off[k] : x_off[k] + ndx] = -d.f_x
        C[row : row + ndx, u_off[k] : u_off[k] + nus[k]] = -d.f_u
        r[row : row + ndx] = gaps[k + 1]

    kkt = np.zeros((nvar + ncon, nvar + ncon))
    kkt[:nvar, :nvar] = H
    kkt[:nvar, nvar:] = C.T
    kkt[nvar:, :nvar] = C
    rhs = np.concatenate([-g, r])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise KKTSingular("dense KKT system is singular") from exc
    if not np.all(np.isfinite(sol)):
        raise KKTSingular("dense KKT solve produced non-finite values")

    dX = [sol[x_off[k] : x_off[k] + ndx].copy() for k in range(N + 1)]
    dU = [sol[u_off[k] : u_off[k] + nus[k]].copy() for k in range(N)]
    mults = [
        sol[nvar + ndx * k : nvar + ndx * (k + 1)].copy() for k in range(N + 1)
    ]
    return dX, dU, mults
