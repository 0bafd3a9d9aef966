"""Run configuration, numerology grid and user placement.

A configuration is a YAML document. Every key is listed in ``README.md``;
``REFERENCE`` below is the reference setting used throughout the tests.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from os import PathLike
from typing import Any, Mapping

import numpy as np
import yaml

BASE_SPACING_KHZ = 15.0


class ConfigError(ValueError):
    """Raised when a configuration document is malformed or violates an invariant."""


@dataclass(frozen=True)
class NumerologySpec:
    index: int
    mu: int
    num_subcarriers: int
    latency_ms: float

    @property
    def spacing_khz(self) -> float:
        return BASE_SPACING_KHZ * 2**self.mu


@dataclass(frozen=True)
class NumerologyGrid:
    """Frame structure: numerologies sorted by increasing subcarrier spacing."""

    numerologies: tuple[NumerologySpec, ...]

    @property
    def num(self) -> int:
        return len(self.numerologies)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(s.num_subcarriers for s in self.numerologies)

    @property
    def n_max(self) -> int:
        return max(self.counts)

    @property
    def total_subcarriers(self) -> int:
        return sum(self.counts)

    @property
    def latencies(self) -> np.ndarray:
        return np.array([s.latency_ms for s in self.numerologies])

    @property
    def spacings_khz(self) -> np.ndarray:
        return np.array([s.spacing_khz for s in self.numerologies])

    @property
    def ratio(self) -> int:
        """Q = spacing of the wide numerology over the narrow one (1 for a single numerology)."""
        if self.num == 1:
            return 1
        return 2 ** (self.numerologies[-1].mu - self.numerologies[0].mu)

    @property
    def valid(self) -> np.ndarray:
        """Boolean (I, n_max) mask of existing subcarriers; grids may be ragged."""
        mask = np.zeros((self.num, self.n_max), dtype=bool)
        for i, n in enumerate(self.counts):
            mask[i, :n] = True
        return mask


@dataclass(frozen=True)
class ScenarioConfig:
    num_bs: int
    num_users: int
    grid: NumerologyGrid
    cell_radius: float = 100.0
    inner_radius: float = 80.0
    inter_bs_distance: float = 200.0
    noise_power_dbm: float = -90.0
    subcarrier_power_cap_dbm: float = 23.0
    bs_power_cap_dbm: tuple[float, ...] = (23.0, 23.0)
    qos_rate: tuple[float, ...] = (1.0,) * 8
    latency_req_ms: tuple[float, ...] = (0.75,) * 8
    comp_threshold: tuple[float, ...] = (10.0,) * 8
    edge_ratio: float = 0.5
    penalty: float = 1e3
    convergence_threshold: float = 0.1
    max_iterations: int = 100
    rng_seed: int = 0
    solver: Mapping[str, Any] = field(default_factory=dict)
    cesp: Mapping[str, Any] = field(default_factory=dict)
    ga: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        validate(self)

    # linear-unit views used by the numerical code
    @property
    def noise_power_w(self) -> float:
        return dbm_to_watt(self.noise_power_dbm)

    @property
    def subcarrier_power_cap_w(self) -> float:
        return dbm_to_watt(self.subcarrier_power_cap_dbm)

    @property
    def bs_power_cap_w(self) -> np.ndarray:
        return dbm_to_watt(np.asarray(self.bs_power_cap_dbm, dtype=float))

    @property
    def num_edge_users(self) -> int:
        return int(math.floor(self.edge_ratio * self.num_users + 0.5))

    def with_overrides(self, **kw) -> "ScenarioConfig":
        """Copy with fields replaced; scalar per-user/per-BS values are broadcast."""
        K = kw.get("num_bs", self.num_bs)
        M = kw.get("num_users", self.num_users)
        for key, size in (("bs_power_cap_dbm", K), ("qos_rate", M),
                          ("latency_req_ms", M), ("comp_threshold", M)):
            if key in kw:
                kw[key] = _broadcast(kw[key], size, key)
        for key, size in (("bs_power_cap_dbm", K), ("qos_rate", M),
                          ("latency_req_ms", M), ("comp_threshold", M)):
            if key not in kw and len(getattr(self, key)) != size:
                kw[key] = _broadcast(getattr(self, key)[0], size, key)
        if "bs_power_cap_dbm" in kw and "subcarrier_power_cap_dbm" not in kw \
                and self._tied_caps:
            kw["subcarrier_power_cap_dbm"] = max(kw["bs_power_cap_dbm"])
        return replace(self, **kw)

    @property
    def _tied_caps(self) -> bool:
        return bool(self.cesp.get("tie_subcarrier_cap", True))


def dbm_to_watt(x):
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0) if np.ndim(x) \
        else 10.0 ** ((float(x) - 30.0) / 10.0)


def watt_to_dbm(w):
    return 10.0 * np.log10(w) + 30.0


def _broadcast(value, size, name) -> tuple[float, ...]:
    if np.isscalar(value):
        return (float(value),) * size
    value = tuple(float(v) for v in value)
    if len(value) != size:
        raise ConfigError(f"{name}: expected {size} entries, got {len(value)}")
    return value


def validate(cfg: ScenarioConfig) -> None:
    def bad(name, value, why):
        raise ConfigError(f"{name} {why} (got {value!r})")

    if cfg.num_bs < 1:
        bad("num_bs", cfg.num_bs, "must be >= 1")
    if cfg.num_users < 1:
        bad("num_users", cfg.num_users, "must be >= 1")
    if not 0.0 <= cfg.edge_ratio <= 1.0:
        bad("edge_ratio", cfg.edge_ratio, "out of [0,1]")
    if not cfg.penalty >= 0:
        bad("penalty", cfg.penalty, "must be >= 0")
    if not cfg.convergence_threshold > 0:
        bad("convergence_threshold", cfg.convergence_threshold, "must be > 0")
    if cfg.max_iterations < 1:
        bad("max_iterations", cfg.max_iterations, "must be >= 1")
    if not 0 <= cfg.rng_seed < 2**64:
        bad("rng_seed", cfg.rng_seed, "must be an unsigned 64-bit integer")
    if not 0 < cfg.inner_radius < cfg.cell_radius:
        bad("inner_radius", cfg.inner_radius, "must lie in (0, cell_radius)")
    if cfg.num_bs > 1 and cfg.inter_bs_distance <= 0:
        bad("inter_bs_distance", cfg.inter_bs_distance, "must be > 0")
    for name, size in (("bs_power_cap_dbm", cfg.num_bs), ("qos_rate", cfg.num_users),
                       ("latency_req_ms", cfg.num_users), ("comp_threshold", cfg.num_users)):
        vals = getattr(cfg, name)
        if len(vals) != size:
            bad(name, vals, f"must have {size} entries")
    if not all(math.isfinite(v) for v in (*cfg.bs_power_cap_dbm, cfg.subcarrier_power_cap_dbm,
                                          cfg.noise_power_dbm)):
        bad("power caps", (cfg.bs_power_cap_dbm, cfg.subcarrier_power_cap_dbm), "must be finite")
    if any(s < 1 for s in cfg.comp_threshold):
        bad("comp_threshold", cfg.comp_threshold, "must be >= 1 for every user")
    if any(r < 0 for r in cfg.qos_rate):
        bad("qos_rate", cfg.qos_rate, "must be >= 0")
    if any(l <= 0 for l in cfg.latency_req_ms):
        bad("latency_req_ms", cfg.latency_req_ms, "must be > 0")
    specs = cfg.grid.numerologies
    if not specs:
        bad("numerologies", specs, "must not be empty")
    for s in specs:
        if s.mu not in range(6):
            bad("mu", s.mu, "must be in 0..5")
        if s.num_subcarriers < 1:
            bad("subcarriers", s.num_subcarriers, "must be >= 1")
        if s.latency_ms <= 0:
            bad("latency_ms", s.latency_ms, "must be > 0")
    mus = [s.mu for s in specs]
    if mus != sorted(mus) or len(set(mus)) != len(mus):
        bad("numerologies", mus, "must have strictly increasing mu")


def make_grid(entries) -> NumerologyGrid:
    specs = []
    for idx, e in enumerate(entries):
        try:
            specs.append(NumerologySpec(idx, int(e["mu"]), int(e["subcarriers"]),
                                        float(e["latency_ms"])))
        except KeyError as exc:
            raise ConfigError(f"numerology entry {idx} is missing key {exc}") from None
    return NumerologyGrid(tuple(specs))


REFERENCE: dict[str, Any] = {
    "network": {
        "num_bs": 2,
        "num_users": 8,
        "cell_radius_m": 100.0,
        "inner_radius_m": 80.0,
        "inter_bs_distance_m": 200.0,
        "edge_ratio": 0.5,
    },
    "numerologies": [
        {"mu": 0, "subcarriers": 8, "latency_ms": 1.0},
        {"mu": 1, "subcarriers": 8, "latency_ms": 0.5},
    ],
    "power": {
        "noise_dbm": -90.0,
        "bs_cap_dbm": 23.0,
        "subcarrier_cap_dbm": None,
    },
    "qos": {
        "rate_req": 1.0,
        "latency_req_ms": 0.75,
        "comp_threshold": 10.0,
    },
    "algorithm": {
        "penalty": 1e3,
        "convergence_threshold": 0.1,
        "max_iterations": 100,
    },
    "rng_seed": 0,
}


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(source: str | PathLike | Mapping | None = None) -> ScenarioConfig:
    """Build a validated config from a YAML path, YAML text or a mapping.

    Missing keys fall back to ``REFERENCE``. ``None`` returns the reference setting.
    """
    if source is None:
        doc = {}
    elif isinstance(source, Mapping):
        doc = dict(source)
    else:
        text = str(source)
        if isinstance(source, PathLike) or (("\n" not in text) and text.endswith((".yaml", ".yml"))):
            try:
                with open(source, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {source}: {exc}") from None
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config does not parse: {exc}") from None
        if not isinstance(doc, Mapping):
            raise ConfigError("config document must be a mapping at top level")
    doc = _merge(REFERENCE, doc)
    return from_document(doc)


def from_document(doc: Mapping) -> ScenarioConfig:
    try:
        net, pw, qos, alg = doc["network"], doc["power"], doc["qos"], doc["algorithm"]
        K, M = int(net["num_bs"]), int(net["num_users"])
        bs_cap = _broadcast(pw["bs_cap_dbm"], K, "bs_cap_dbm")
        sc_cap = pw.get("subcarrier_cap_dbm")
        cesp = dict(doc.get("cesp") or {})
        if sc_cap is None:
            sc_cap = max(bs_cap)
        else:
            cesp.setdefault("tie_subcarrier_cap", False)
        return ScenarioConfig(
            num_bs=K,
            num_users=M,
            grid=make_grid(doc["numerologies"]),
            cell_radius=float(net["cell_radius_m"]),
            inner_radius=float(net["inner_radius_m"]),
            inter_bs_distance=float(net["inter_bs_distance_m"]),
            noise_power_dbm=float(pw["noise_dbm"]),
            subcarrier_power_cap_dbm=float(sc_cap),
            bs_power_cap_dbm=bs_cap,
            qos_rate=_broadcast(qos["rate_req"], M, "rate_req"),
            latency_req_ms=_broadcast(qos["latency_req_ms"], M, "latency_req_ms"),
            comp_threshold=_broadcast(qos["comp_threshold"], M, "comp_threshold"),
            edge_ratio=float(net["edge_ratio"]),
            penalty=float(alg["penalty"]),
            convergence_threshold=float(alg["convergence_threshold"]),
            max_iterations=int(alg["max_iterations"]),
            rng_seed=int(doc.get("rng_seed", 0)),
            solver=dict(doc.get("solver") or {}),
            cesp=cesp,
            ga=dict(doc.get("ga") or {}),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"missing or malformed key: {exc}") from None


def to_document(cfg: ScenarioConfig) -> dict:
    """Inverse of ``from_document`` (used for the JSON config echo)."""
    return {
        "network": {
            "num_bs": cfg.num_bs,
            "num_users": cfg.num_users,
            "cell_radius_m": cfg.cell_radius,
            "inner_radius_m": cfg.inner_radius,
            "inter_bs_distance_m": cfg.inter_bs_distance,
            "edge_ratio": cfg.edge_ratio,
        },
        "numerologies": [
            {"mu": s.mu, "subcarriers": s.num_subcarriers, "latency_ms": s.latency_ms}
            for s in cfg.grid.numerologies
        ],
        "power": {
            "noise_dbm": cfg.noise_power_dbm,
            "bs_cap_dbm": list(cfg.bs_power_cap_dbm),
            # None marks a cap tied to the BS budget
            "subcarrier_cap_dbm": None if cfg._tied_caps else cfg.subcarrier_power_cap_dbm,
        },
        "qos": {
            "rate_req": list(cfg.qos_rate),
            "latency_req_ms": list(cfg.latency_req_ms),
            "comp_threshold": list(cfg.comp_threshold),
        },
        "algorithm": {
            "penalty": cfg.penalty,
            "convergence_threshold": cfg.convergence_threshold,
            "max_iterations": cfg.max_iterations,
        },
        "rng_seed": cfg.rng_seed,
        "solver": dict(cfg.solver),
        "cesp": dict(cfg.cesp),
        "ga": dict(cfg.ga),
    }


@dataclass(frozen=True)
class Topology:
    bs_positions: np.ndarray  # (K, 2) metres
    user_positions: np.ndarray  # (M, 2) metres
    user_class: tuple[str, ...]  # "uniform" | "edge"
    home_bs: np.ndarray  # (M,) BS each user was dropped around

    def distances(self) -> np.ndarray:
        """(K, M) BS-user distances in metres."""
        diff = self.bs_positions[:, None, :] - self.user_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    @property
    def edge_users(self) -> np.ndarray:
        return np.array([c == "edge" for c in self.user_class])


def build_topology(cfg: ScenarioConfig, rng: np.random.Generator) -> Topology:
    """Collinear BSs, users dropped uniformly in area around a random home BS.

    Edge users land in the annulus (inner_radius, cell_radius], the rest in the
    disc (0, inner_radius].
    """
    K, M = cfg.num_bs, cfg.num_users
    bs = np.column_stack([np.arange(K) * cfg.inter_bs_distance, np.zeros(K)])
    is_edge = np.zeros(M, dtype=bool)
    is_edge[: cfg.num_edge_users] = True
    is_edge = rng.permutation(is_edge)
    home = rng.integers(0, K, size=M)
    u = 1.0 - rng.random(M)  # (0, 1]
    r_in, r_out = cfg.inner_radius, cfg.cell_radius
    radius = np.where(is_edge, np.sqrt(r_in**2 + u * (r_out**2 - r_in**2)), r_in * np.sqrt(u))
    # the annulus lower edge is open: u in (0,1] keeps radius > r_in for edge users
    theta = rng.uniform(0.0, 2 * np.pi, size=M)
    users = bs[home] + radius[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    labels = tuple("edge" if e else "uniform" for e in is_edge)
    return Topology(bs, users, labels, home)
