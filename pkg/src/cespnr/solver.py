"""Smooth concave maximisation over a box with convex inequality constraints.

The feasible set is ``lower <= z <= upper``, ``A z <= b`` and optionally
``c(z) <= 0`` for convex ``c``. Constraints are moved into an augmented
Lagrangian; each box-constrained subproblem is solved by projected
quasi-Newton ascent (L-BFGS-B) whose line search keeps the merit monotone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog, minimize, nnls

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]
Constraint = Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray]"]


class NonFiniteError(FloatingPointError):
    def __init__(self, what: str, index: int):
        super().__init__(f"non-finite {what} at coordinate {index}")
        self.index = index


@dataclass
class ConvexProgram:
    objective: Objective
    lower: np.ndarray
    upper: np.ndarray
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    nonlinear: Optional[Constraint] = None
    tol: float = 1e-6
    max_inner_iterations: int = 5000

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError("box has lower > upper")
        if self.A is not None:
            self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
            self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
            if self.A.shape != (self.b.size, self.dimension):
                raise ValueError(f"A has shape {self.A.shape}, expected ({self.b.size}, {self.dimension})")

    @classmethod
    def with_constraints(cls, objective, lower, upper,
                         linear_constraints: Sequence[tuple[np.ndarray, float]] = (), **kw):
        """Build from a list of ``(a, b)`` pairs meaning ``a @ z <= b``."""
        if linear_constraints:
            A = np.array([np.asarray(a, dtype=float) for a, _ in linear_constraints])
            b = np.array([float(bb) for _, bb in linear_constraints])
        else:
            A = b = None
        return cls(objective, lower, upper, A, b, **kw)

    @property
    def dimension(self) -> int:
        return self.lower.size

    def constraint_values(self, z):
        """All constraint values ``g(z)`` (feasible iff <= 0) and their Jacobian rows."""
        vals, rows = [], []
        if self.A is not None:
            vals.append(self.A @ z - self.b)
            rows.append(self.A)
        if self.nonlinear is not None:
            c, J = self.nonlinear(z)
            vals.append(np.atleast_1d(c))
            rows.append(np.atleast_2d(J))
        if not vals:
            return np.zeros(0), np.zeros((0, self.dimension))
        return np.concatenate(vals), np.vstack(rows)

    def violation(self, z) -> float:
        g, _ = self.constraint_values(z)
        box = max(np.max(self.lower - z, initial=0.0), np.max(z - self.upper, initial=0.0))
        return float(max(np.max(g, initial=0.0), box))


@dataclass
class SolveReport:
    point: np.ndarray
    objective_value: float
    kkt_residual: float
    feasibility_violation: float
    iterations: int
    status: str  # "optimal" | "max_iter" | "infeasible"
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: list = field(default_factory=list)  # with track=True: merit values per sub-problem


def _checked(fun, z):
    val, grad = fun(z)
    grad = np.asarray(grad, dtype=float)
    if not np.isfinite(val):
        raise NonFiniteError("objective", int(np.argmax(~np.isfinite(z))) if not np.all(np.isfinite(z)) else -1)
    bad = ~np.isfinite(grad)
    if bad.any():
        raise NonFiniteError("gradient", int(np.flatnonzero(bad)[0]))
    return float(val), grad


def _normalised(program: ConvexProgram):
    """Copy of the program with unit-norm linear rows and trivial rows removed."""
    if program.A is None:
        return program, None
    norms = np.linalg.norm(program.A, axis=1)
    zero = norms == 0
    if np.any(zero & (program.b < 0)):
        return program, "infeasible"
    keep = ~zero
    A = program.A[keep] / norms[keep, None]
    b = program.b[keep] / norms[keep]
    scaled = ConvexProgram(program.objective, program.lower, program.upper,
                           A if A.size else None, b if A.size else None,
                           program.nonlinear, program.tol, program.max_inner_iterations)
    return scaled, None


def linear_phase_one(program: ConvexProgram) -> float:
    """Smallest achievable max violation of the linear rows over the box (0 if feasible)."""
    if program.A is None:
        return 0.0
    A, b = program.A, program.b
    n = program.dimension
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0] = 1.0
    A_ub = np.hstack([A / norms[:, None], -np.ones((A.shape[0], 1))])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    bounds = list(zip(program.lower, program.upper)) + [(0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b / norms, bounds=bounds, method="highs")
    return float(res.x[-1]) if res.status == 0 else float("inf")


def _proj(z, lo, hi):
    return np.minimum(np.maximum(z, lo), hi)


def maximize(program: ConvexProgram, start, *, precheck: bool = True, rho0: float = 10.0,
             rho_max: float = 1e10, inner_tol: Optional[float] = None,
             track: bool = False) -> SolveReport:
    """Maximise a concave program from ``start`` (projected into the box first)."""
    tol = program.tol
    prog, flag = _normalised(program)
    lo, hi = prog.lower, prog.upper
    z = _proj(np.asarray(start, dtype=float).copy(), lo, hi)
    if flag == "infeasible" or (precheck and prog.A is not None and linear_phase_one(prog) > tol):
        cert = linear_phase_one(program) if flag is None else float("inf")
        val, _ = _checked(prog.objective, z)
        return SolveReport(z, val, float("inf"), cert, 0, "infeasible")

    n_con = prog.constraint_values(z)[0].size
    mu = np.zeros(n_con)
    rho = rho0
    eps_in = inner_tol if inner_tol is not None else max(tol, 1e-3)
    iters = 0
    history = []
    prev_viol = np.inf

    def merit(zz):
        f, gf = _checked(prog.objective, zz)
        if n_con == 0:
            return f, gf
        g, J = prog.constraint_values(zz)
        shifted = np.maximum(0.0, mu + rho * g)
        phi = f - (shifted @ shifted - mu @ mu) / (2 * rho)
        return phi, gf - J.T @ shifted

    def neg_merit(zz):
        phi, grad = merit(zz)
        return -phi, -grad

    bounds = list(zip(lo, hi))
    status = "max_iter"
    while True:
        # inner: box-constrained quasi-Newton ascent on the merit function
        budget = prog.max_inner_iterations - iters
        if budget <= 0:
            break
        outer = len(history)
        callback = (lambda zk: history[outer].append(merit(zk)[0])) if track else None
        if track:
            history.append([merit(z)[0]])
        res = minimize(neg_merit, z, jac=True, method="L-BFGS-B", bounds=bounds, callback=callback,
                       options={"maxfun": budget, "maxiter": budget, "gtol": eps_in,
                                "ftol": 1e-15, "maxcor": 20})
        iters += max(int(res.nfev), 1)
        z_new = _proj(res.x, lo, hi)
        phi, grad = merit(z)
        phi_new, grad_new = merit(z_new)
        if phi_new >= phi:  # the line search is monotone; guard against a projected overshoot
            z, phi, grad = z_new, phi_new, grad_new
        if n_con == 0:
            if np.max(np.abs(_proj(z + grad, lo, hi) - z), initial=0.0) <= tol:
                status = "optimal"
                break
            if iters >= prog.max_inner_iterations:
                break
            if eps_in <= tol:
                break
            eps_in = max(eps_in * 0.01, tol)
            continue
        g, J = prog.constraint_values(z)
        viol = float(np.max(g, initial=0.0))
        mu = np.maximum(0.0, mu + rho * g)
        f, gf = _checked(prog.objective, z)
        lag_grad = gf - J.T @ mu
        stat = np.max(np.abs(_proj(z + lag_grad, lo, hi) - z), initial=0.0)
        comp = float(np.max(np.abs(mu * g), initial=0.0))
        if viol <= tol and stat <= tol and comp <= tol:
            status = "optimal"
            break
        if iters >= prog.max_inner_iterations:
            break
        if viol > 0.25 * prev_viol:
            rho *= 10.0
            if rho > rho_max:
                status = "infeasible" if viol > tol else "max_iter"
                break
        prev_viol = viol
        eps_in = max(min(eps_in, stat) * 0.1, tol * 0.1)

    f, _ = _checked(program.objective, z)
    viol = program.violation(z)
    res = check_kkt(program, z)
    if status == "optimal" and not (res <= tol and viol <= tol):
        status = "max_iter"
    if status != "optimal" and viol > tol and program.A is not None and program.nonlinear is None:
        if linear_phase_one(program) > tol:
            status = "infeasible"
    return SolveReport(z, f, res, viol, iters, status, mu, history)


def check_kkt(program: ConvexProgram, point, act_tol: Optional[float] = None) -> float:
    """Stationarity/complementarity/feasibility residual of a candidate maximiser.

    Multipliers of the constraints active within ``act_tol`` are fitted by
    non-negative least squares; the residual is the larger of the fitted
    stationarity error (2-norm), the complementarity error and the primal
    violation. At a point with no active constraint it is ``||grad f||``.
    """
    z = np.asarray(point, dtype=float)
    act_tol = act_tol if act_tol is not None else max(10 * program.tol, 1e-9)
    _, grad = _checked(program.objective, z)
    cols, slacks = [], []
    n = program.dimension
    eye = np.eye(n)
    span = np.maximum(program.upper - program.lower, 1.0)
    up = program.upper - z <= act_tol * span
    down = z - program.lower <= act_tol * span
    for i in np.flatnonzero(up):
        cols.append(eye[i])
        slacks.append(0.0)
    for i in np.flatnonzero(down & ~up):
        cols.append(-eye[i])
        slacks.append(0.0)
    g, J = program.constraint_values(z)
    if g.size:
        norms = np.maximum(np.linalg.norm(J, axis=1), 1e-300)
        gn = g / norms
        for j in np.flatnonzero(gn >= -act_tol):
            cols.append(J[j] / norms[j])
            slacks.append(gn[j])
    viol = program.violation(z)
    if not cols:
        return float(max(np.linalg.norm(grad), viol))
    C = np.array(cols).T
    mult, stat = nnls(C, grad, maxiter=50 * C.shape[1] + 100)
    comp = float(np.max(np.abs(mult * np.array(slacks)), initial=0.0))
    return float(max(stat, comp, viol))
