"""Alternating D.C. power allocation / subcarrier assignment (CESP).

Both sub-problems write the sum rate as ``T - G`` with ``T = sum log2 psi1``
and ``G = sum log2 psi2``. ``psi1`` and ``psi2`` are affine in the powers for
a fixed assignment and affine in the assignment for fixed powers, so ``T``
and ``G`` are concave in either block. Replacing ``G`` by its tangent plane
gives a concave lower bound of the sum rate that is tight at the expansion
point. The assignment block additionally carries the binarising penalty
``-lam * sum(x - x^2)``, whose concave part ``lam * sum x^2`` is linearised
together with ``G``.

Gradients are obtained by reverse-mode differentiation of ``psi1``/``psi2``
(``LinkModel.backprop``) rather than from hand-expanded index sums.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .association import EligibilityMask
from .channel import ChannelTensor
from .phy import LN2, LinkModel, user_latencies
from .scenario import ScenarioConfig
from .solver import ConvexProgram, maximize

log = logging.getLogger(__name__)

RATE_TOL = 1e-6
LAT_TOL = 1e-9

DEFAULT_OPTIONS = {
    "inner_sca": 1,  # surrogate re-linearisations per PA step
    "lambda_schedule": "continuation",  # "continuation" | "fixed" | "escalate"
    "lambda_steps": 4,  # continuation: 0, lam/10^(steps-1), ..., lam
    "binary_tol": 0.01,
    "extra_binarise": 3,  # extra lam-max solves if x-hat is not yet near-binary
    "tie_break": 0.02,  # expansion-point shift used by those extra solves
    "solver_tol": 1e-6,
    "solver_iterations": 400,
    "feasibility_rounds": 5,
    "sa_inner": 1,  # surrogate re-linearisations per penalty value in CESP-SA
}


@dataclass
class Instance:
    """A channel draw plus all constraint data, in linear units."""

    model: LinkModel
    mask: EligibilityMask
    p_max: float
    bs_budget: np.ndarray  # (K,)
    rate_req: np.ndarray  # (M,)
    latency_req: np.ndarray  # (M,)
    penalty: float
    threshold: float
    max_iterations: int
    options: dict = field(default_factory=lambda: dict(DEFAULT_OPTIONS))

    @classmethod
    def build(cls, cfg: ScenarioConfig, channels: ChannelTensor, mask: EligibilityMask):
        opts = dict(DEFAULT_OPTIONS)
        opts.update({f"solver_{k}": v for k, v in cfg.solver.items() if f"solver_{k}" in DEFAULT_OPTIONS})
        opts.update({k: v for k, v in cfg.cesp.items() if k in DEFAULT_OPTIONS})
        model = LinkModel(channels.gain_sq, cfg.noise_power_w, cfg.grid)
        return cls(model, mask, cfg.subcarrier_power_cap_w, cfg.bs_power_cap_w,
                   np.asarray(cfg.qos_rate, dtype=float), np.asarray(cfg.latency_req_ms, dtype=float),
                   cfg.penalty, cfg.convergence_threshold, cfg.max_iterations, opts)

    @property
    def shape(self):
        return self.model.shape

    @property
    def allowed(self) -> np.ndarray:
        """Entries that may ever carry x = 1: existing subcarrier and eligible BS."""
        return self.mask.eligible & self.model.valid

    @property
    def latencies(self) -> np.ndarray:
        return self.model.grid.latencies

    @property
    def latency_feasible(self) -> np.ndarray:
        """Users whose latency target is reachable by some numerology."""
        return self.latencies.min() <= self.latency_req + LAT_TOL

    def sum_rate(self, P, X) -> float:
        return float(self.model.sum_rate(P, X))


@dataclass
class Status:
    rates: np.ndarray
    latencies: np.ndarray
    qos_ok: np.ndarray
    latency_ok: np.ndarray
    sum_rate: float

    @property
    def satisfied(self) -> np.ndarray:
        return self.qos_ok & self.latency_ok

    def max_violation(self, inst: Instance) -> float:
        short = np.maximum(inst.rate_req - self.rates, 0.0)
        lat = np.where(np.isnan(self.latencies), np.inf, self.latencies - inst.latency_req)
        return float(max(short.max(initial=0.0), np.maximum(lat, 0.0).max(initial=0.0)))


def status(inst: Instance, P, X) -> Status:
    rates = inst.model.user_rates(P, X)
    lat = user_latencies(X, inst.model.grid)
    qos = rates >= inst.rate_req - RATE_TOL
    with np.errstate(invalid="ignore"):
        lat_ok = lat <= inst.latency_req + LAT_TOL
    return Status(rates, lat, qos, lat_ok, float(rates.sum()))


# ----------------------------------------------------------------------------
# initial point and power helpers

def greedy_assignment(inst: Instance) -> np.ndarray:
    """Latency-aware greedy start respecting C2, the eligibility mask and CoMP gating.

    Every user, fewest fast options first, receives its best subcarrier from
    its strongest BS among the numerologies that meet its latency alone; the remaining resources go to the
    strongest-gain home user whose latency budget still allows it; leftover
    resources are offered to CoMP users already served by their strongest BS.
    """
    K, M, I, N = inst.shape
    gain = inst.model.gain
    allowed = inst.allowed
    strongest = inst.mask.strongest
    lat = inst.latencies
    X = np.zeros(inst.shape)
    slack = np.zeros(M)
    lat_ok = inst.latency_feasible
    free = inst.model.valid[None].repeat(K, axis=0).copy()  # (K, I, N)

    def fits(m, i):
        return (not lat_ok[m]) or slack[m] + lat[i] - inst.latency_req[m] <= LAT_TOL

    def take(k, m, i, n):
        X[k, m, i, n] = 1.0
        free[k, i, n] = False
        slack[m] += lat[i] - inst.latency_req[m]

    lead = allowed & (np.arange(K)[:, None, None, None] == strongest[None])
    best_scale = inst.model.gain.mean(axis=(2, 3)).max(axis=0)
    scarcity = lead[:, :, int(np.argmin(lat))].sum(axis=(0, 2))
    for m in np.lexsort((-best_scale, scarcity)):  # fewest fast options first
        cand = [(gain[k, m, i, n], k, i, n) for i in range(I) if fits(m, i)
                for k in range(K) for n in range(N) if free[k, i, n] and lead[k, m, i, n]]
        if cand:
            _, k, i, n = max(cand)
            take(k, m, i, n)
    for i in np.argsort(lat, kind="stable"):
        for n in range(N):
            for k in range(K):
                if not free[k, i, n]:
                    continue
                home = [m for m in range(M) if allowed[k, m, i, n] and strongest[m, i, n] == k and fits(m, i)]
                if home:
                    take(k, max(home, key=lambda m: gain[k, m, i, n]), i, n)
    for i in np.argsort(lat, kind="stable"):
        for n in range(N):
            for k in range(K):
                if not free[k, i, n]:
                    continue
                joint = [m for m in range(M) if allowed[k, m, i, n] and strongest[m, i, n] != k
                         and X[strongest[m, i, n], m, i, n] == 1 and fits(m, i)]
                if joint:
                    take(k, max(joint, key=lambda m: gain[k, m, i, n]), i, n)
    return X


def equal_power(inst: Instance, X) -> np.ndarray:
    """Each BS budget split evenly over its assigned entries, capped per entry."""
    used = (X > 0.5) & inst.model.valid
    count = used.sum(axis=(1, 2, 3))
    share = np.where(count > 0, inst.bs_budget / np.maximum(count, 1), 0.0)
    share = np.minimum(share, inst.p_max)
    return np.where(used, share[:, None, None, None], 0.0)


def prune(P, X) -> np.ndarray:
    return np.where(X > 0.5, P, 0.0)


def enforce_budget(inst: Instance, P, X) -> np.ndarray:
    """Scale a BS's powers down if its assigned total exceeds the budget (C4)."""
    P = np.clip(P, 0.0, inst.p_max)
    spent = (P * X).sum(axis=(1, 2, 3))
    scale = np.where(spent > inst.bs_budget, inst.bs_budget / np.maximum(spent, 1e-300), 1.0)
    return P * scale[:, None, None, None]


def lift(inst: Instance, P, X) -> np.ndarray:
    """Candidate power for re-assignment: every user inherits the resource's power.

    Resources without power receive an equal share of the BS's unspent budget.
    """
    valid = inst.model.valid
    res = (P * X).sum(axis=1)  # (K, I, N)
    dead = valid[None] & (res <= 0)
    spare = np.maximum(inst.bs_budget - res.sum(axis=(1, 2)), 0.0)
    n_dead = dead.sum(axis=(1, 2))
    fill = np.minimum(np.where(n_dead > 0, spare / np.maximum(n_dead, 1), 0.0), inst.p_max)
    res = np.where(dead, fill[:, None, None], res)
    return np.where(inst.allowed, res[:, None], 0.0)


# ----------------------------------------------------------------------------
# surrogates

@dataclass
class SurrogateState:
    """Tangent data of ``G`` (and per-user ``G2``) at the expansion point."""

    kind: str  # "pa" (variable P, X fixed) or "sa" (variable X, P fixed)
    point: np.ndarray
    fixed: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    G: float
    grad_G: np.ndarray
    G2: np.ndarray  # (M,)
    grad_G2: np.ndarray  # (M, K, M, I, N)
    penalty: float = 0.0


def _user_selector(shape):
    K, M, I, N = shape
    sel = np.zeros((M, K, M, I, N))
    sel[np.arange(M), :, np.arange(M)] = 1.0
    return sel


def make_state(inst: Instance, kind: str, point, fixed, penalty: float = 0.0) -> SurrogateState:
    P, X = (point, fixed) if kind == "pa" else (fixed, point)
    model = inst.model
    f = model.forward(P, X)
    _, l2 = model.log_terms(f)
    w2 = model.valid / (f.psi2 * LN2)
    sel = _user_selector(inst.shape)
    dP, dX = model.backprop(P, X, f, 0.0, w2)
    dP2, dX2 = model.backprop(P, X, f, 0.0, sel * w2)
    grad_G, grad_G2 = (dP, dP2) if kind == "pa" else (dX, dX2)
    return SurrogateState(kind, np.array(point, dtype=float), np.array(fixed, dtype=float),
                          f.psi1, f.psi2, float(l2.sum()), grad_G, l2.sum(axis=(0, 2, 3)),
                          grad_G2, penalty)


def g_value_and_grad(inst: Instance, P, X, wrt: str):
    """``G = sum log2 psi2`` and its gradient w.r.t. ``'p'`` or ``'x'``."""
    f = inst.model.forward(P, X)
    _, l2 = inst.model.log_terms(f)
    dP, dX = inst.model.backprop(P, X, f, 0.0, inst.model.valid / (f.psi2 * LN2))
    return float(l2.sum()), (dP if wrt == "p" else dX)


def g2_value_and_grad(inst: Instance, P, X, wrt: str):
    """Per-user ``G2_m = sum_{k,i,n} log2 psi2[k, m]`` (M,) and gradients (M, K, M, I, N)."""
    f = inst.model.forward(P, X)
    _, l2 = inst.model.log_terms(f)
    sel = _user_selector(inst.shape)
    dP, dX = inst.model.backprop(P, X, f, 0.0, sel * inst.model.valid / (f.psi2 * LN2))
    return l2.sum(axis=(0, 2, 3)), (dP if wrt == "p" else dX)


def e2_value_and_grad(inst: Instance, P, X, penalty: float):
    """``E2 = G - lam * sum x^2`` and its gradient w.r.t. the assignment."""
    G, dX = g_value_and_grad(inst, P, X, "x")
    sq = np.where(inst.model.valid, X, 0.0)
    return G - penalty * float((sq**2).sum()), dX - 2 * penalty * sq


def _t_terms(inst: Instance, P, X):
    model = inst.model
    f = model.forward(P, X)
    l1, _ = model.log_terms(f)
    return f, l1


def pa_objective_and_grad(P, state: SurrogateState, X, inst: Instance):
    """``T(P) - G_hat(P)`` and its gradient (full ``[k, m, i, n]`` tensors)."""
    f, l1 = _t_terms(inst, P, X)
    lin = state.G + float((state.grad_G * (P - state.point)).sum())
    dP, _ = inst.model.backprop(P, X, f, inst.model.valid / (f.psi1 * LN2), 0.0)
    return float(l1.sum()) - lin, dP - state.grad_G


def sa_objective_and_grad(X, state: SurrogateState, P, inst: Instance, penalty: Optional[float] = None):
    """``E1(X) - E2_hat(X)`` with ``E1 = T - lam sum x`` and ``E2 = G - lam sum x^2``."""
    lam = state.penalty if penalty is None else penalty
    f, l1 = _t_terms(inst, P, X)
    valid = inst.model.valid
    X0 = np.where(valid, state.point, 0.0)
    Xv = np.where(valid, X, 0.0)
    e2_0 = state.G - lam * float((X0**2).sum())
    grad_e2 = state.grad_G - 2 * lam * X0
    lin = e2_0 + float((grad_e2 * (X - state.point)).sum())
    _, dX = inst.model.backprop(P, X, f, valid / (f.psi1 * LN2), 0.0)
    value = float(l1.sum()) - lam * float(Xv.sum()) - lin
    return value, dX - lam * valid - grad_e2


def qos_surrogate(P, X, state: SurrogateState, inst: Instance):
    """Per-user surrogate rates ``sum log2 psi1 - G2_hat`` (M,) and their gradients."""
    f, l1 = _t_terms(inst, P, X)
    var = P if state.kind == "pa" else X
    lin = state.G2 + np.einsum("ukmin,kmin->u", state.grad_G2, var - state.point)
    sel = _user_selector(inst.shape)
    dP, dX = inst.model.backprop(P, X, f, sel * inst.model.valid / (f.psi1 * LN2), 0.0)
    d = dP if state.kind == "pa" else dX
    return l1.sum(axis=(0, 2, 3)) - lin, d - state.grad_G2


def true_penalised(inst: Instance, P, X, penalty: float) -> float:
    Xv = np.where(inst.model.valid, X, 0.0)
    return float(inst.model.sum_rate(P, X)) - penalty * float((Xv - Xv**2).sum())


# ----------------------------------------------------------------------------
# power allocation

def _solver_kw(inst: Instance):
    return dict(tol=inst.options["solver_tol"], max_inner_iterations=inst.options["solver_iterations"])


def solve_pa(inst: Instance, X, P_prev, enforce: Optional[np.ndarray] = None):
    """One CESP-PA step: maximise the power surrogate for fixed binary ``X``.

    Variables are the powers of assigned entries (scaled by ``p_max``);
    constraints are the per-entry cap, the per-BS budget and the surrogate
    rate requirement of the users in ``enforce``. Unassigned entries get zero
    power. Returns ``(P, reports)``; ``P`` never has a lower sum rate than the
    pruned ``P_prev``.
    """
    X = (X > 0.5).astype(float)
    idx = np.flatnonzero(X * inst.model.valid)
    P0 = enforce_budget(inst, prune(P_prev, X), X)
    if idx.size == 0:
        return P0, []
    if enforce is None:
        enforce = np.zeros(inst.shape[1], dtype=bool)
    users = np.flatnonzero(enforce)
    scale = inst.p_max
    k_of = np.unravel_index(idx, inst.shape)[0]
    A = np.zeros((inst.shape[0], idx.size))
    A[k_of, np.arange(idx.size)] = scale
    b = inst.bs_budget.astype(float)
    reports = []
    P = P0
    base = inst.sum_rate(P0, X)
    for _ in range(int(inst.options["inner_sca"])):
        state = make_state(inst, "pa", P, X)

        def full(z):
            Q = np.zeros(inst.shape)
            Q.flat[idx] = z * scale
            return Q

        def objective(z):
            val, grad = pa_objective_and_grad(full(z), state, X, inst)
            return val, grad.flat[idx] * scale

        nonlinear = None
        if users.size:
            def nonlinear(z):
                q, dq = qos_surrogate(full(z), X, state, inst)
                J = dq.reshape(dq.shape[0], -1)[users][:, idx] * scale
                return inst.rate_req[users] - q[users], -J

        prog = ConvexProgram(objective, np.zeros(idx.size), np.ones(idx.size), A, b,
                             nonlinear, **_solver_kw(inst))
        rep = maximize(prog, P.flat[idx] / scale, precheck=False)
        reports.append(rep)
        cand = enforce_budget(inst, full(np.clip(rep.point, 0, 1)), X)
        if inst.sum_rate(cand, X) + 1e-12 < inst.sum_rate(P, X):
            break
        if users.size and not np.all(status(inst, cand, X).qos_ok[users]):
            break
        P = cand
    if inst.sum_rate(P, X) < base:
        P = P0
    return P, reports


def restore_qos(inst: Instance, P, X):
    """Feasibility phase on the powers: maximise the worst rate shortfall.

    Users whose rate target is out of reach even interference-free at full
    power are dropped first; the remaining violators are dropped one at a
    time (largest shortfall first) until the rest can be served. Returns the
    new powers and the boolean array of users given up as rate outage.
    """
    M = inst.shape[1]
    st = status(inst, P, X)
    outage = np.zeros(M, dtype=bool)
    bad = ~st.qos_ok
    if not bad.any():
        return P, outage
    K = inst.shape[0]
    Xb = (X > 0.5).astype(float)
    # interference-free, full-power bound on the resources the user holds
    cap = np.minimum(inst.p_max, inst.bs_budget)[:, None, None, None]
    snr = (cap * inst.model.gain * Xb).sum(axis=0) / inst.model.noise  # (M, I, N)
    bound = K * np.log2(1.0 + snr).sum(axis=(1, 2))
    hopeless = bad & (bound < inst.rate_req - RATE_TOL)
    outage |= hopeless
    bad &= ~hopeless
    idx = np.flatnonzero(Xb * inst.model.valid)
    if idx.size == 0 or not bad.any():
        return P, outage | bad
    scale = inst.p_max
    k_of = np.unravel_index(idx, inst.shape)[0]
    n = idx.size
    A = np.zeros((K, n + 1))
    A[k_of, np.arange(n)] = scale
    b = inst.bs_budget.astype(float)
    s_lo = -float(inst.rate_req.max()) - 1.0

    def full(z):
        Q = np.zeros(inst.shape)
        Q.flat[idx] = z[:n] * scale
        return Q

    while bad.any():
        good = ~bad & ~outage & st.qos_ok
        for _ in range(int(inst.options["feasibility_rounds"])):
            state = make_state(inst, "pa", P, Xb)
            rows = np.flatnonzero(bad | good)

            def objective(z):
                g = np.zeros(n + 1)
                g[-1] = 1.0
                return float(z[-1]), g

            def nonlinear(z, state=state, rows=rows):
                q, dq = qos_surrogate(full(z), Xb, state, inst)
                J = np.zeros((rows.size, n + 1))
                J[:, :n] = -dq.reshape(M, -1)[rows][:, idx] * scale
                J[:, -1] = bad[rows].astype(float)
                c = inst.rate_req[rows] - q[rows] + np.where(bad[rows], z[-1], 0.0)
                return c, J

            cur = status(inst, P, Xb)
            s0 = float(np.min(cur.rates[bad] - inst.rate_req[bad]))
            z0 = np.append(P.flat[idx] / scale, max(s0, s_lo))
            prog = ConvexProgram(objective, np.append(np.zeros(n), s_lo), np.append(np.ones(n), 0.0),
                                 A, b, nonlinear, **_solver_kw(inst))
            rep = maximize(prog, z0, precheck=False)
            P = enforce_budget(inst, full(np.clip(rep.point, 0, None)), Xb)
            if rep.point[-1] >= -RATE_TOL:
                break
        st = status(inst, P, Xb)
        still = bad & ~st.qos_ok
        if not still.any():
            break
        short = np.where(still, inst.rate_req - st.rates, -np.inf)
        worst = int(np.argmax(short))
        outage[worst] = True
        bad[worst] = False
        bad &= ~st.qos_ok
    return P, outage


# ----------------------------------------------------------------------------
# subcarrier assignment

def near_binariness(xhat: np.ndarray) -> float:
    """Largest distance of any relaxed entry from {0, 1}."""
    if xhat.size == 0:
        return 0.0
    return float(np.max(np.minimum(xhat, 1.0 - xhat)))


def round_assignment(inst: Instance, xhat, latency_users=None) -> np.ndarray:
    """Give each (k, i, n) to its largest x-hat user if that value is >= 1/2; then re-gate CoMP.

    Ties at the maximum are settled in favour of ``latency_users`` whose
    latency the plain argmax would break (see ``_repair_latency``).
    """
    xhat = np.where(inst.allowed, xhat, 0.0)
    best = np.argmax(xhat, axis=1)  # (K, I, N)
    top = np.take_along_axis(xhat, best[:, None], axis=1)[:, 0]
    X = np.zeros(inst.shape)
    k, i, n = np.nonzero(top >= 0.5)
    X[k, best[k, i, n], i, n] = 1.0
    X = gate(inst, X)
    if latency_users is not None and np.any(latency_users):
        X = _repair_latency(inst, X, xhat, top, np.asarray(latency_users, bool))
    return X


def _latency_ok(inst: Instance, X) -> np.ndarray:
    lat = user_latencies(X, inst.model.grid)
    with np.errstate(invalid="ignore"):
        return lat <= inst.latency_req + LAT_TOL


def _repair_latency(inst: Instance, X, xhat, top, users) -> np.ndarray:
    """Hand tied entries back to users whose latency only the tie-break broke."""
    tie = 1e-6
    lat = inst.latencies
    for u in np.flatnonzero(users & ~_latency_ok(inst, X)):
        lost = (xhat[:, u] >= top - tie) & (xhat[:, u] >= 0.5 - tie) & (X[:, u] == 0)
        for k, i, n in sorted(zip(*np.nonzero(lost)), key=lambda e: lat[e[1]]):
            trial = X.copy()
            trial[k, :, i, n] = 0.0
            trial[k, u, i, n] = 1.0
            trial = gate(inst, trial)
            ok = _latency_ok(inst, trial)
            if np.all(ok[users & _latency_ok(inst, X)]) and (ok[u] or trial[:, u].sum() > X[:, u].sum()):
                X = trial
            if ok[u]:
                break
    return X


def gate(inst: Instance, X) -> np.ndarray:
    """Drop joint-transmission entries whose strongest BS does not serve the same (m, i, n)."""
    X = np.asarray(X, dtype=float)
    strongest = inst.mask.strongest
    index = np.broadcast_to(strongest[None], (*X.shape[:-4], 1, *strongest.shape))
    lead = np.take_along_axis(X, index, axis=-4)  # (..., 1, M, I, N)
    is_lead = np.arange(inst.shape[0])[:, None, None, None] == strongest[None]
    return np.where(is_lead | (lead > 0.5), X, 0.0) * inst.allowed


def _sa_program_parts(inst: Instance, P, idx, lat_users):
    """Linear constraint rows over the relaxed entries ``idx``."""
    K, M, I, N = inst.shape
    kk, mm, ii, nn = np.unravel_index(idx, inst.shape)
    n = idx.size
    rows, rhs = [], []
    res_id = np.ravel_multi_index((kk, ii, nn), (K, I, N))
    for r in np.unique(res_id):
        cols = np.flatnonzero(res_id == r)
        if cols.size > 1:
            row = np.zeros(n)
            row[cols] = 1.0
            rows.append(row)
            rhs.append(1.0)
    pw = P.flat[idx]
    for k in range(K):
        row = np.where(kk == k, pw, 0.0)
        if row.sum() > inst.bs_budget[k]:
            rows.append(row)
            rhs.append(inst.bs_budget[k])
    lat = inst.latencies
    for m in np.flatnonzero(lat_users):
        sel = mm == m
        if not sel.any():
            continue
        rows.append(np.where(sel, lat[ii] - inst.latency_req[m], 0.0))
        rhs.append(0.0)
        rows.append(-sel.astype(float))
        rhs.append(-1.0)
    pos = {int(j): c for c, j in enumerate(idx)}
    strongest = inst.mask.strongest
    for c in range(n):
        lead = strongest[mm[c], ii[c], nn[c]]
        if lead != kk[c]:
            lead_flat = int(np.ravel_multi_index((lead, mm[c], ii[c], nn[c]), inst.shape))
            row = np.zeros(n)
            row[c] = 1.0
            row[pos[lead_flat]] = -1.0
            rows.append(row)
            rhs.append(0.0)
    if not rows:
        return None, None
    return np.array(rows), np.array(rhs)


def _tie_break_score(inst: Instance, P, idx) -> np.ndarray:
    """Rank of ``p |h|^2`` among the candidate entries, scaled to [0, 1]."""
    strength = (P * inst.model.gain).flat[idx]
    rank = np.argsort(np.argsort(strength, kind="stable"), kind="stable")
    return rank / max(idx.size - 1, 1)


def lambda_schedule(inst: Instance) -> list[float]:
    lam = inst.penalty
    mode = inst.options["lambda_schedule"]
    if mode == "fixed" or lam == 0:
        return [lam]
    if mode == "escalate":
        return [lam]
    steps = max(int(inst.options["lambda_steps"]), 1)
    return [0.0] + [lam / 10.0 ** (steps - 1 - j) for j in range(steps)]


@dataclass
class SAResult:
    X: np.ndarray  # rounded, gated binary assignment
    xhat: np.ndarray  # relaxed assignment before rounding
    near_binary: float
    lambdas: list
    reports: list


def solve_sa(inst: Instance, P, X_prev, qos_users=None, latency_users=None,
             schedule: Optional[list] = None, taylor: Optional[np.ndarray] = None) -> SAResult:
    """One CESP-SA step for fixed powers ``P`` (already lifted to all candidates).

    Solves the relaxed, penalised surrogate over ``0 <= x <= 1`` with the
    per-resource sum, budget, latency, CoMP gating and surrogate rate
    constraints, re-linearising up to ``sa_inner`` times per penalty value of
    ``schedule`` (fewer once x-hat stops moving), then rounds.
    """
    M = inst.shape[1]
    qos_users = np.zeros(M, bool) if qos_users is None else np.asarray(qos_users, bool)
    latency_users = np.zeros(M, bool) if latency_users is None else np.asarray(latency_users, bool)
    schedule = lambda_schedule(inst) if schedule is None else list(schedule)
    start = (X_prev > 0.5).astype(float) if taylor is None else np.asarray(taylor, float)
    # zero-power entries stay candidates: they carry no rate but may be
    # needed for the latency and minimum-assignment rows
    idx = np.flatnonzero(inst.allowed)
    if idx.size == 0:
        return SAResult(np.zeros(inst.shape), np.zeros(inst.shape), 0.0, schedule, [])
    A, b = _sa_program_parts(inst, P, idx, latency_users)
    users = np.flatnonzero(qos_users)
    xhat = np.zeros(inst.shape)
    xhat.flat[idx] = start.flat[idx]
    reports = []
    tol = inst.options["binary_tol"]
    inner = max(int(inst.options["sa_inner"]), 1)
    lams = [lam for lam in schedule for _ in range(inner)]
    extra = int(inst.options["extra_binarise"])
    mode = inst.options["lambda_schedule"]
    j = 0
    n_planned = len(lams)
    score = _tie_break_score(inst, P, idx)
    while j < len(lams):
        lam = lams[j]
        point = xhat
        if j >= n_planned:
            # symmetric fractional faces give identical penalty slopes; shift
            # the expansion point by a fixed gain-ranked amount to split them
            point = xhat.copy()
            point.flat[idx] = np.clip(xhat.flat[idx] + inst.options["tie_break"] * (score - 0.5), 0.0, 1.0)
        state = make_state(inst, "sa", point, P, penalty=lam)

        def full(z):
            Xf = np.zeros(inst.shape)
            Xf.flat[idx] = z
            return Xf

        def objective(z, state=state):
            val, grad = sa_objective_and_grad(full(z), state, P, inst)
            return val, grad.flat[idx]

        nonlinear = None
        if users.size:
            def nonlinear(z, state=state):
                q, dq = qos_surrogate(P, full(z), state, inst)
                return inst.rate_req[users] - q[users], -dq.reshape(M, -1)[users][:, idx]

        prog = ConvexProgram(objective, np.zeros(idx.size), np.ones(idx.size), A, b,
                             nonlinear, **_solver_kw(inst))
        rep = maximize(prog, xhat.flat[idx], precheck=False)
        reports.append(rep)
        moved = np.max(np.abs(rep.point - xhat.flat[idx]), initial=0.0)
        xhat = full(np.clip(rep.point, 0.0, 1.0))
        j += 1
        if moved <= inst.options["solver_tol"]:
            while j < n_planned and lams[j] == lam:  # this penalty value has settled
                j += 1
        if j == len(lams) and lam > 0 and near_binariness(xhat.flat[idx]) > tol:
            if mode == "escalate" and len(lams) < 20:
                lams.append(2 * lam)
            elif extra > 0:
                lams.append(lam)
                extra -= 1
    if any(rep.status == "infeasible" for rep in reports):
        log.warning("assignment sub-problem infeasible; keeping the previous assignment")
        return SAResult((X_prev > 0.5).astype(float), xhat, near_binariness(xhat.flat[idx]), lams, reports)
    X = round_assignment(inst, xhat, latency_users)
    return SAResult(X, xhat, near_binariness(xhat.flat[idx]), lams, reports)


# ----------------------------------------------------------------------------
# outer loop

@dataclass
class CespSolution:
    P: np.ndarray
    X: np.ndarray
    history: list  # sum rate after each outer iteration
    status: str  # "converged" | "max_iter"
    trace: list  # per-iteration dict rows
    rate_outage_users: np.ndarray  # users whose rate target was given up
    near_binary: float = float("nan")

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


PowerStep = Callable[[Instance, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def cesp_power_step(inst, X, P, enforce):
    return solve_pa(inst, X, P, enforce)[0]


def cesp_assign_step(inst, P, X, st: Status):
    """CESP-SA on lifted powers; returns the candidate (P, X) and the SA result."""
    P_lift = lift(inst, P, X)
    res = solve_sa(inst, P_lift, X, qos_users=st.qos_ok & (inst.rate_req > 0),
                   latency_users=st.latency_ok & inst.latency_feasible)
    return enforce_budget(inst, prune(P_lift, res.X), res.X), res.X, res


def alternate(inst: Instance, power_step, assign_step, X0=None, P0=None,
              feasibility: bool = True) -> CespSolution:
    """Alternate power and assignment steps until the sum rate settles.

    A step is kept only if it does not lower the sum rate and does not break
    the rate or latency target of a user who met it before; otherwise the
    previous iterate is retained. With ``feasibility`` the start powers first
    go through ``restore_qos``. Stops when ``|U_t - U_{t-1}| <= threshold``
    (with ``U_0 = 0``) or after ``max_iterations``.
    """
    X = greedy_assignment(inst) if X0 is None else np.asarray(X0, float)
    P = equal_power(inst, X) if P0 is None else np.asarray(P0, float)
    if feasibility:
        P, outage = restore_qos(inst, P, X)
    else:
        outage = np.zeros(inst.shape[1], dtype=bool)
    history, trace = [], []
    prev = 0.0
    result = "max_iter"
    near = float("nan")
    for t in range(1, inst.max_iterations + 1):
        st = status(inst, P, X)
        enforce = st.qos_ok & (inst.rate_req > 0)
        P_new = power_step(inst, X, P, enforce)
        st_new = status(inst, P_new, X)
        if st_new.sum_rate + 1e-9 < st.sum_rate or np.any(st.qos_ok & ~st_new.qos_ok):
            P_new, st_new = P, st
        P = P_new
        P_c, X_c, info = assign_step(inst, P, X, st_new)
        st_c = status(inst, P_c, X_c)
        accepted = (st_c.sum_rate + 1e-9 >= st_new.sum_rate
                    and not np.any(st_new.qos_ok & ~st_c.qos_ok)
                    and not np.any(st_new.latency_ok & ~st_c.latency_ok))
        if accepted:
            P, X, st_new = P_c, X_c, st_c
        near = getattr(info, "near_binary", float("nan"))
        value = st_new.sum_rate
        history.append(value)
        trace.append({
            "t": t,
            "sum_rate": value,
            "max_violation": st_new.max_violation(inst),
            "near_binary": near,
            "sa_accepted": bool(accepted),
        })
        log.debug("iteration %d: sum rate %.6f (sa accepted=%s)", t, value, accepted)
        if abs(value - prev) <= inst.threshold:
            result = "converged"
            break
        prev = value
    return CespSolution(P, X, history, result, trace, outage, near)


def run_cesp(inst: Instance) -> CespSolution:
    """Full CESP: CESP-PA and CESP-SA alternated from the greedy/equal-power start."""
    return alternate(inst, cesp_power_step, cesp_assign_step)


def solve_instance(cfg: ScenarioConfig, channels: ChannelTensor, mask: EligibilityMask) -> CespSolution:
    return run_cesp(Instance.build(cfg, channels, mask))
