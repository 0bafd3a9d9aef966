import numpy as np
import pytest

from cespnr.association import comp_associate
from cespnr.cesp import DEFAULT_OPTIONS, Instance
from cespnr.phy import LinkModel
from cespnr.scenario import load_config, make_grid


def small_grid(n1=4, n2=2):
    return make_grid([{"mu": 0, "subcarriers": n1, "latency_ms": 1.0},
                      {"mu": 1, "subcarriers": n2, "latency_ms": 0.5}])


def synthetic_instance(rng, K=2, M=3, n1=4, n2=2, snr=30.0, sigma=10.0, rate_req=0.0,
                       latency_req=0.75, single=False):
    """Well-scaled random instance (mean SNR ``snr`` at unit power) for derivative checks."""
    grid = small_grid(n1, n2) if not single else make_grid([{"mu": 0, "subcarriers": n1 + n2, "latency_ms": 1.0}])
    large = rng.uniform(0.2, 1.0, size=(K, M))
    gain = large[:, :, None, None] * rng.exponential(1.0, size=(K, M, grid.num, grid.n_max))
    gain = np.where(grid.valid, gain, 0.0) * snr
    mask = comp_associate(gain, np.full(M, sigma))
    model = LinkModel(gain, 1.0, grid)
    return Instance(model, mask, p_max=1.0, bs_budget=np.full(K, 3.0),
                    rate_req=np.full(M, float(rate_req)), latency_req=np.full(M, float(latency_req)),
                    penalty=1e3, threshold=0.1, max_iterations=20, options=dict(DEFAULT_OPTIONS))


def random_feasible(inst, rng, binary=False):
    """Random (P, X) meeting C2, C3, C4 and the eligibility mask."""
    K, M, I, N = inst.shape
    scores = rng.random(inst.shape) * inst.allowed
    X = np.zeros(inst.shape)
    if binary:
        best = scores.argmax(axis=1)
        k, i, n = np.nonzero(scores.max(axis=1) > 0.3)
        X[k, best[k, i, n], i, n] = 1.0
    else:
        X = scores / np.maximum(scores.sum(axis=1, keepdims=True), 1.0)
        X = X * rng.uniform(0.2, 1.0, size=(K, 1, I, N))
    X = np.where(inst.allowed, X, 0.0)
    P = rng.uniform(0.05, 1.0, size=inst.shape) * inst.p_max * inst.model.valid
    spent = (P * (X > 0)).sum(axis=(1, 2, 3))
    P *= np.minimum(1.0, inst.bs_budget / np.maximum(spent, 1e-12))[:, None, None, None]
    return P, X


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def reference():
    return load_config(None)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: list[str] = []


def verdict(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
