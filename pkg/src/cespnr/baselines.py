"""Comparison schemes and network modes.

Every scheme runs through ``cesp.alternate`` with its own power and
assignment steps, so they share the start point, stop rule and acceptance
rule with CESP:

* ``full_cesp``   CESP-PA + CESP-SA
* ``relax_round`` equal power + assignment relaxed without the binarising penalty, then rounded
* ``epa+cesp_sa`` equal power + CESP-SA
* ``cesp_pa+gsa`` CESP-PA + genetic subcarrier assignment
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import cesp
from .cesp import Instance, Status, enforce_budget, equal_power, gate, lift, prune, solve_sa
from .scenario import ConfigError, NumerologyGrid, NumerologySpec, ScenarioConfig

SCHEMES = ("full_cesp", "relax_round", "epa+cesp_sa", "cesp_pa+gsa")
FITNESS_WEIGHT = 10.0  # quadratic penalty weight on rate/latency shortfalls in the GA


@dataclass(frozen=True)
class GAParams:
    population: int = 40
    generations: int = 200
    mutation: float = 0.05
    crossover: float = 0.8
    tournament: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.population < 1 or self.generations < 0 or self.tournament < 1:
            raise ConfigError(f"GA sizes must be positive (got {self})")
        if not (0 <= self.mutation <= 1 and 0 <= self.crossover <= 1):
            raise ConfigError(f"GA rates must lie in [0,1] (got {self})")

    @classmethod
    def from_mapping(cls, values) -> "GAParams":
        known = {k: values[k] for k in cls.__dataclass_fields__ if k in values}
        return cls(**known)


@dataclass(frozen=True)
class BaselineSpec:
    scheme: str = "full_cesp"
    comp: bool = True
    sn: bool = False
    ga: GAParams = field(default_factory=GAParams)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")

    @property
    def mode(self) -> str:
        return ("comp" if self.comp else "non_comp") + ("+sn" if self.sn else "+mn")


def apply_mode(cfg: ScenarioConfig, comp: bool = True, sn: bool = False) -> ScenarioConfig:
    """Non-CoMP sets every CoMP threshold to 1; SN merges the grid into one 15 kHz numerology.

    The SN grid keeps the total subcarrier count and takes the latency of the
    base numerology (mu = 0) if the grid has one, else 1 ms.
    """
    kw = {}
    if not comp:
        kw["comp_threshold"] = 1.0
    if sn and cfg.grid.num > 1:
        base = [s.latency_ms for s in cfg.grid.numerologies if s.mu == 0]
        latency = base[0] if base else 1.0
        kw["grid"] = NumerologyGrid((NumerologySpec(0, 0, cfg.grid.total_subcarriers, latency),))
    return cfg.with_overrides(**kw) if kw else cfg


def epa(X, inst: Instance) -> np.ndarray:
    """Equal power allocation over each BS's assigned entries, capped per entry."""
    return equal_power(inst, X)


def relax_round(P, inst: Instance, X_prev, qos_users=None, latency_users=None):
    """Assignment relaxation solved once without the penalty (lam = 0), then rounded."""
    return solve_sa(inst, P, X_prev, qos_users, latency_users, schedule=[0.0])


# ----------------------------------------------------------------------------
# genetic subcarrier assignment

@dataclass
class _Genome:
    """Encoding: one gene per existing (k, i, n); value = user index or -1 (idle)."""

    k: np.ndarray
    i: np.ndarray
    n: np.ndarray
    options: np.ndarray  # (G, max_opts) padded with -1
    counts: np.ndarray  # (G,)

    @classmethod
    def build(cls, inst: Instance) -> "_Genome":
        K, M, I, N = inst.shape
        ks, is_, ns, opts = [], [], [], []
        for k in range(K):
            for i in range(I):
                for n in range(N):
                    if inst.model.valid[i, n]:
                        ks.append(k)
                        is_.append(i)
                        ns.append(n)
                        opts.append([-1] + list(np.flatnonzero(inst.allowed[k, :, i, n])))
        width = max(len(o) for o in opts)
        table = np.full((len(opts), width), -1)
        for g, o in enumerate(opts):
            table[g, :len(o)] = o
        return cls(np.array(ks), np.array(is_), np.array(ns), table, np.array([len(o) for o in opts]))

    def encode(self, X) -> np.ndarray:
        sub = X[self.k, :, self.i, self.n] > 0.5  # (G, M)
        return np.where(sub.any(axis=1), sub.argmax(axis=1), -1)

    def decode(self, genes, shape) -> np.ndarray:
        B = genes.shape[0]
        X = np.zeros((B, *shape))
        b, g = np.nonzero(genes >= 0)
        X[b, self.k[g], genes[b, g], self.i[g], self.n[g]] = 1.0
        return X

    def random_genes(self, rng, size) -> np.ndarray:
        pick = (rng.random(size) * self.counts).astype(int)
        return self.options[np.arange(self.counts.size), pick]


def ga_fitness(inst: Instance, P, X) -> np.ndarray:
    """Sum rate minus quadratic penalties on budget, rate and latency violations (batched over X)."""
    rates = inst.model.user_rates(P, X)
    spent = (P * X).sum(axis=(-3, -2, -1))  # (..., K)
    budget = np.maximum(spent - inst.bs_budget, 0.0)
    short = np.maximum(inst.rate_req - rates, 0.0)
    lat = cesp.user_latencies(X, inst.model.grid)
    over = np.where(np.isnan(lat), 1.0, np.maximum(lat - inst.latency_req, 0.0))
    over = np.where(inst.latency_feasible, over, 0.0)
    return rates.sum(axis=-1) - FITNESS_WEIGHT * ((short**2).sum(axis=-1) + (over**2).sum(axis=-1)
                                                  + (budget**2).sum(axis=-1))


def gsa(P, inst: Instance, rng: np.random.Generator, params: GAParams = GAParams(), seed_X=None):
    """Genetic search over assignments for fixed powers ``P``.

    The population starts from ``seed_X`` (greedy start if None) plus
    partly randomised copies; tournament selection, single-point crossover, per-gene
    mutation and one elite per generation. Every individual is decoded with
    C2 by construction and CoMP gating repaired. Returns the best-scoring
    assignment.
    """
    genome = _Genome.build(inst)
    X0 = cesp.greedy_assignment(inst) if seed_X is None else np.asarray(seed_X, float)
    seed_genes = genome.encode(X0)
    G = seed_genes.size
    pop = np.repeat(seed_genes[None], params.population, axis=0)
    if params.population > 1:
        fresh = genome.random_genes(rng, (params.population - 1, G))
        mix = rng.random((params.population - 1, G)) < 0.3
        pop[1:] = np.where(mix, fresh, pop[1:])

    def score(genes):
        X = gate(inst, genome.decode(genes, inst.shape))
        return ga_fitness(inst, P * (X > 0), X), X

    fit, _ = score(pop)
    for _ in range(params.generations):
        elite = pop[np.argmax(fit)].copy()
        elite_fit = fit.max()
        contenders = rng.integers(0, params.population, size=(params.population, 2, params.tournament))
        winners = np.take_along_axis(contenders, np.argmax(fit[contenders], axis=-1)[..., None], -1)[..., 0]
        mum, dad = pop[winners[:, 0]], pop[winners[:, 1]]
        cut = rng.integers(1, max(G, 2), size=params.population)
        cross = rng.random(params.population) < params.crossover
        take_dad = (np.arange(G)[None] >= cut[:, None]) & cross[:, None]
        child = np.where(take_dad, dad, mum)
        mutate = rng.random(child.shape) < params.mutation
        child = np.where(mutate, genome.random_genes(rng, child.shape), child)
        child[0] = elite
        pop = child
        fit, _ = score(pop)
        fit[0] = elite_fit
    best = pop[np.argmax(fit)][None]
    return gate(inst, genome.decode(best, inst.shape))[0]


# ----------------------------------------------------------------------------
# scheme steps

def _epa_step(inst, X, P, enforce):
    return equal_power(inst, X)


def _relax_round_step(inst, P, X, st: Status):
    res = relax_round(lift(inst, P, X), inst, X, st.qos_ok & (inst.rate_req > 0),
                      st.latency_ok & inst.latency_feasible)
    return equal_power(inst, res.X), res.X, res


def _cesp_sa_epa_step(inst, P, X, st: Status):
    res = solve_sa(inst, lift(inst, P, X), X, st.qos_ok & (inst.rate_req > 0),
                   st.latency_ok & inst.latency_feasible)
    return equal_power(inst, res.X), res.X, res


def _gsa_step(params: GAParams, rng):
    def step(inst, P, X, st):
        P_lift = lift(inst, P, X)
        X_new = gsa(P_lift, inst, rng, params)
        return enforce_budget(inst, prune(P_lift, X_new), X_new), X_new, None
    return step


def run_scheme(spec: BaselineSpec, inst: Instance, rng: np.random.Generator | None = None):
    """Run one scheme on a prepared instance; returns a ``CespSolution``."""
    if spec.scheme == "full_cesp":
        return cesp.run_cesp(inst)
    X0 = cesp.greedy_assignment(inst)
    if spec.scheme == "relax_round":
        return cesp.alternate(inst, _epa_step, _relax_round_step, X0, equal_power(inst, X0), feasibility=False)
    if spec.scheme == "epa+cesp_sa":
        return cesp.alternate(inst, _epa_step, _cesp_sa_epa_step, X0, equal_power(inst, X0), feasibility=False)
    rng = rng if rng is not None else np.random.default_rng(spec.ga.seed)
    return cesp.alternate(inst, cesp.cesp_power_step, _gsa_step(spec.ga, rng), X0)


def with_ga(spec: BaselineSpec, **kw) -> BaselineSpec:
    return replace(spec, ga=replace(spec.ga, **kw))
