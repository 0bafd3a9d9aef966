import numpy as np
import pytest
from dataclasses import replace

from cespnr import cesp
from cespnr.cesp import (enforce_budget, equal_power, gate, greedy_assignment, lift, make_state,
                         near_binariness, pa_objective_and_grad, qos_surrogate, round_assignment,
                         sa_objective_and_grad, solve_pa, solve_sa, status, true_penalised)
from conftest import random_feasible, synthetic_instance

H = 1e-6


def fd_check(fun, grad, Z, mask, rng, n=12, rtol=1e-4, atol=1e-6):
    """Central differences along random coordinates inside ``mask``."""
    coords = np.flatnonzero(mask)
    for c in rng.choice(coords, size=min(n, coords.size), replace=False):
        E = np.zeros_like(Z)
        E.flat[c] = H
        num = (fun(Z + E) - fun(Z - E)) / (2 * H)
        assert grad.flat[c] == pytest.approx(num, rel=rtol, abs=atol), c


def interior(inst, rng):
    P, X = random_feasible(inst, rng)
    X = np.where(inst.allowed, np.clip(X, 0.05, 0.95), 0.0)
    return np.clip(P, 0.05, None) * inst.model.valid, X


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pa_surrogate_gradient(seed):
    rng = np.random.default_rng(seed)
    inst = synthetic_instance(rng)
    P, X = interior(inst, rng)
    st = make_state(inst, "pa", P * 0.8, X)
    _, g = pa_objective_and_grad(P, st, X, inst)
    fd_check(lambda Q: pa_objective_and_grad(Q, st, X, inst)[0], g, P, inst.allowed, rng)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("lam", [0.0, 3.0])
def test_sa_surrogate_gradient(seed, lam):
    rng = np.random.default_rng(seed)
    inst = synthetic_instance(rng)
    P, X = interior(inst, rng)
    st = make_state(inst, "sa", np.clip(X + 0.1, 0, 1) * inst.allowed, P, penalty=lam)
    _, g = sa_objective_and_grad(X, st, P, inst)
    fd_check(lambda Z: sa_objective_and_grad(Z, st, P, inst)[0], g, X, inst.allowed, rng)


@pytest.mark.parametrize("kind", ["pa", "sa"])
def test_qos_surrogate_gradient(kind):
    rng = np.random.default_rng(7)
    inst = synthetic_instance(rng)
    P, X = interior(inst, rng)
    M = inst.shape[1]
    if kind == "pa":
        st = make_state(inst, "pa", P * 0.9, X)
        _, d = qos_surrogate(P, X, st, inst)
        for u in range(M):
            fd_check(lambda Q: qos_surrogate(Q, X, st, inst)[0][u], d[u], P, inst.allowed, rng, n=6)
    else:
        st = make_state(inst, "sa", X * 0.9, P)
        _, d = qos_surrogate(P, X, st, inst)
        for u in range(M):
            fd_check(lambda Z: qos_surrogate(P, Z, st, inst)[0][u], d[u], X, inst.allowed, rng, n=6)


@pytest.mark.parametrize("wrt", ["p", "x"])
def test_g2_gradient(wrt):
    rng = np.random.default_rng(11)
    inst = synthetic_instance(rng)
    P, X = interior(inst, rng)
    _, d = cesp.g2_value_and_grad(inst, P, X, wrt)
    for u in range(inst.shape[1]):
        if wrt == "p":
            fd_check(lambda Q: cesp.g2_value_and_grad(inst, Q, X, "p")[0][u], d[u], P, inst.allowed, rng, n=6)
        else:
            fd_check(lambda Z: cesp.g2_value_and_grad(inst, P, Z, "x")[0][u], d[u], X, inst.allowed, rng, n=6)


def test_e2_gradient():
    rng = np.random.default_rng(5)
    inst = synthetic_instance(rng)
    P, X = interior(inst, rng)
    _, d = cesp.e2_value_and_grad(inst, P, X, 2.5)
    fd_check(lambda Z: cesp.e2_value_and_grad(inst, P, Z, 2.5)[0], d, X, inst.allowed, rng)


@pytest.mark.parametrize("seed", range(4))
def test_pa_surrogate_tangent_and_minorant(seed):
    rng = np.random.default_rng(seed)
    inst = synthetic_instance(rng)
    P0, X = interior(inst, rng)
    st = make_state(inst, "pa", P0, X)
    assert pa_objective_and_grad(P0, st, X, inst)[0] == pytest.approx(inst.sum_rate(P0, X), rel=1e-12)
    for _ in range(20):
        P = rng.uniform(0, 1, inst.shape) * inst.model.valid
        assert pa_objective_and_grad(P, st, X, inst)[0] <= inst.sum_rate(P, X) + 1e-9


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("lam", [0.0, 1.0, 10.0])
def test_sa_surrogate_tangent_and_minorant(seed, lam):
    rng = np.random.default_rng(seed)
    inst = synthetic_instance(rng)
    P, X0 = interior(inst, rng)
    st = make_state(inst, "sa", X0, P, penalty=lam)
    assert sa_objective_and_grad(X0, st, P, inst)[0] == pytest.approx(true_penalised(inst, P, X0, lam), rel=1e-12)
    for _ in range(20):
        X = rng.uniform(0, 1, inst.shape) * inst.allowed
        assert sa_objective_and_grad(X, st, P, inst)[0] <= true_penalised(inst, P, X, lam) + 1e-9


def test_qos_surrogate_tangent_and_minorant():
    rng = np.random.default_rng(9)
    inst = synthetic_instance(rng)
    P0, X = interior(inst, rng)
    st = make_state(inst, "pa", P0, X)
    np.testing.assert_allclose(qos_surrogate(P0, X, st, inst)[0], inst.model.user_rates(P0, X), rtol=1e-12)
    for _ in range(20):
        P = rng.uniform(0, 1, inst.shape) * inst.model.valid
        assert np.all(qos_surrogate(P, X, st, inst)[0] <= inst.model.user_rates(P, X) + 1e-9)


def test_penalty_vanishes_on_binary_and_peaks_at_half():
    rng = np.random.default_rng(1)
    inst = synthetic_instance(rng)
    P, Xb = random_feasible(inst, rng, binary=True)
    assert true_penalised(inst, P, Xb, 100.0) == pytest.approx(inst.sum_rate(P, Xb), rel=1e-12)
    half = 0.5 * inst.allowed
    count = np.count_nonzero(inst.allowed)
    assert true_penalised(inst, P, half, 4.0) == pytest.approx(inst.sum_rate(P, half) - count, rel=1e-12)


def test_lambda_zero_objective_is_rate():
    rng = np.random.default_rng(2)
    inst = synthetic_instance(rng)
    P, X = interior(inst, rng)
    st = make_state(inst, "sa", X, P, penalty=0.0)
    assert sa_objective_and_grad(X, st, P, inst)[0] == pytest.approx(inst.sum_rate(P, X), rel=1e-12)


# start point and power helpers -----------------------------------------------------

def assert_assignment_valid(inst, X):
    assert set(np.unique(X)) <= {0.0, 1.0}
    assert np.all(X.sum(axis=1) <= 1)
    assert np.all(X[~inst.allowed] == 0)
    np.testing.assert_array_equal(gate(inst, X), X)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("sigma", [1.0, 10.0])
def test_greedy_assignment_valid(seed, sigma):
    rng = np.random.default_rng(seed)
    inst = synthetic_instance(rng, sigma=sigma)
    X = greedy_assignment(inst)
    assert_assignment_valid(inst, X)
    lat = status(inst, equal_power(inst, X), X).latencies
    served = ~np.isnan(lat)
    assert np.all(lat[served] <= inst.latency_req[served] + 1e-12)
    # a user left empty has no free lead resource that would meet its latency on its own
    free = X.sum(axis=1) == 0
    for m in np.flatnonzero(X.sum(axis=(0, 2, 3)) == 0):
        for k, i, n in zip(*np.nonzero(inst.allowed[:, m] & free)):
            assert inst.mask.strongest[m, i, n] != k or inst.latencies[i] > inst.latency_req[m]
    assert served.mean() >= 2 / 3


def test_gate_drops_unled_joint_transmission():
    rng = np.random.default_rng(4)
    inst = synthetic_instance(rng, sigma=1e9)
    X = inst.allowed.astype(float)
    G = gate(inst, X)
    lead = inst.mask.strongest
    for k, m, i, n in zip(*np.nonzero(G)):
        assert G[lead[m, i, n], m, i, n] == 1
    X[lead[0, 0, 0], 0, 0, 0] = 0
    assert gate(inst, X)[:, 0, 0, 0].sum() == 0
    batch = gate(inst, np.stack([X, inst.allowed.astype(float)]))
    np.testing.assert_array_equal(batch[0], gate(inst, X))


def test_equal_power_budget_and_cap():
    rng = np.random.default_rng(3)
    inst = synthetic_instance(rng)
    X = greedy_assignment(inst)
    P = equal_power(inst, X)
    assert np.all(P <= inst.p_max)
    assert np.all((P * X).sum(axis=(1, 2, 3)) <= inst.bs_budget + 1e-12)
    assert np.all(P[X == 0] == 0)
    for k in range(inst.shape[0]):
        vals = P[k][X[k] > 0]
        assert np.ptp(vals) == 0 if vals.size else True


def test_enforce_budget_scales_only_overspent():
    rng = np.random.default_rng(3)
    inst = synthetic_instance(rng)
    X = inst.allowed.astype(float)
    P = np.ones(inst.shape) * inst.model.valid
    Q = enforce_budget(inst, P, X)
    spent = (Q * X).sum(axis=(1, 2, 3))
    assert np.all(spent <= inst.bs_budget * (1 + 1e-12))
    small = P * 1e-3
    np.testing.assert_array_equal(enforce_budget(inst, small, X), small)


def test_lift_inherits_and_fills():
    rng = np.random.default_rng(8)
    inst = synthetic_instance(rng)
    X = greedy_assignment(inst)
    P = equal_power(inst, X) * 0.5
    L = lift(inst, P, X)
    owned = (P * X).sum(axis=1)
    for k, m, i, n in zip(*np.nonzero(inst.allowed)):
        if owned[k, i, n] > 0:
            assert L[k, m, i, n] == owned[k, i, n]
    per_resource = L.max(axis=1)
    assert np.all(per_resource.sum(axis=(1, 2)) <= inst.bs_budget + 1e-9)
    assert np.all(L <= inst.p_max)


def test_near_binariness_and_rounding():
    assert near_binariness(np.array([0.0, 1.0, 0.99])) == pytest.approx(0.01)
    assert near_binariness(np.array([])) == 0.0
    rng = np.random.default_rng(0)
    inst = synthetic_instance(rng, sigma=1.0)
    xhat = rng.uniform(0, 1, inst.shape) * inst.allowed
    X = round_assignment(inst, xhat)
    assert_assignment_valid(inst, X)
    assert np.all(xhat[X == 1] >= 0.5)


# sub-problems ------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_solve_pa_feasible_and_not_worse(seed):
    rng = np.random.default_rng(seed)
    inst = synthetic_instance(rng)
    X = greedy_assignment(inst)
    P0 = equal_power(inst, X)
    P, reports = solve_pa(inst, X, P0)
    assert np.all(P >= 0) and np.all(P <= inst.p_max + 1e-9)
    assert np.all((P * X).sum(axis=(1, 2, 3)) <= inst.bs_budget + 1e-6)
    assert np.all(P[X == 0] == 0)
    assert inst.sum_rate(P, X) >= inst.sum_rate(P0, X) - 1e-9
    assert reports


def test_solve_pa_keeps_enforced_rates():
    rng = np.random.default_rng(21)
    inst = synthetic_instance(rng, rate_req=1.0)
    X = greedy_assignment(inst)
    P0 = equal_power(inst, X)
    ok = status(inst, P0, X).qos_ok
    P, _ = solve_pa(inst, X, P0, enforce=ok)
    assert np.all(status(inst, P, X).qos_ok[ok])


@pytest.mark.parametrize("seed", range(4))
def test_solve_sa_valid_assignment(seed):
    rng = np.random.default_rng(seed)
    inst = synthetic_instance(rng)
    X0 = greedy_assignment(inst)
    P = lift(inst, equal_power(inst, X0), X0)
    res = solve_sa(inst, P, X0, latency_users=np.ones(inst.shape[1], bool))
    assert_assignment_valid(inst, res.X)
    assert res.lambdas[0] == 0.0
    assert np.all(res.xhat >= 0) and np.all(res.xhat <= 1)
    assert np.all(res.xhat.sum(axis=1) <= 1 + 1e-6)


def test_lambda_schedules():
    rng = np.random.default_rng(0)
    inst = synthetic_instance(rng)
    assert cesp.lambda_schedule(inst) == [0.0, 1.0, 10.0, 100.0, 1000.0]
    fixed = replace(inst, options={**inst.options, "lambda_schedule": "fixed"})
    assert cesp.lambda_schedule(fixed) == [1e3]
    assert cesp.lambda_schedule(replace(inst, penalty=0.0)) == [0.0]


# outer loop --------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_run_cesp_monotone_and_valid(seed):
    rng = np.random.default_rng(seed)
    inst = synthetic_instance(rng, rate_req=0.5)
    sol = cesp.run_cesp(inst)
    assert np.all(np.diff(sol.history) >= -1e-9)
    assert_assignment_valid(inst, sol.X)
    assert np.all((sol.P * sol.X).sum(axis=(1, 2, 3)) <= inst.bs_budget + 1e-6)
    assert sol.history[-1] == pytest.approx(inst.sum_rate(sol.P, sol.X), rel=1e-12)
    assert [row["t"] for row in sol.trace] == list(range(1, sol.iterations + 1))
    assert sol.converged


def test_infinite_threshold_stops_after_one_iteration():
    rng = np.random.default_rng(0)
    inst = replace(synthetic_instance(rng), threshold=np.inf)
    sol = cesp.run_cesp(inst)
    assert sol.iterations == 1 and sol.converged


def test_max_iterations_reported():
    rng = np.random.default_rng(0)
    inst = replace(synthetic_instance(rng), threshold=-1.0, max_iterations=2)
    sol = cesp.run_cesp(inst)
    assert sol.iterations == 2 and sol.status == "max_iter"


@pytest.mark.parametrize("seed", range(3))
def test_joint_transmission_used_when_it_pays(seed):
    # one user, two BSs: without CoMP the second BS has nobody to serve
    comp = cesp.run_cesp(synthetic_instance(np.random.default_rng(seed), K=2, M=1, sigma=1e9, snr=10.0))
    single = cesp.run_cesp(synthetic_instance(np.random.default_rng(seed), K=2, M=1, sigma=1.0, snr=10.0))
    assert (comp.X.sum(axis=0) > 1).any()
    assert comp.history[-1] > 1.1 * single.history[-1]
