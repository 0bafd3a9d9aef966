"""Monte-Carlo driver, outage/satisfaction metrics, sweep presets and CSV/JSON output."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .association import comp_associate
from .baselines import BaselineSpec, apply_mode, run_scheme
from .cesp import Instance, status
from .channel import draw_channels
from .scenario import ConfigError, ScenarioConfig, build_topology, to_document

DEFAULT_SEEDS = 20
DEFAULT_ALPHA = 0.5


# ----------------------------------------------------------------------------
# metrics

def rate_outage(rates, rate_req) -> float:
    """Fraction of users below their rate requirement."""
    rates = np.asarray(rates, dtype=float)
    req = np.broadcast_to(np.asarray(rate_req, dtype=float), rates.shape)
    if rates.size == 0:
        raise ValueError("need at least one user")
    return 1.0 - float(np.count_nonzero(rates >= req)) / rates.size


def latency_outage(latencies, latency_req) -> float:
    """Fraction of users above their latency requirement; unserved (NaN) users count as violating."""
    lat = np.asarray(latencies, dtype=float)
    req = np.broadcast_to(np.asarray(latency_req, dtype=float), lat.shape)
    if lat.size == 0:
        raise ValueError("need at least one user")
    with np.errstate(invalid="ignore"):
        ok = np.count_nonzero(lat <= req)
    return 1.0 - float(ok) / lat.size


def satisfaction(r_out: float, l_out: float, alpha: float) -> float:
    """``(1 - alpha) * r_out + alpha * l_out``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0,1] (got {alpha})")
    return (1.0 - alpha) * r_out + alpha * l_out


# ----------------------------------------------------------------------------
# results

@dataclass
class RunResult:
    preset: str
    point: str  # sweep-point label, e.g. "p_max_dbm=26"
    scheme: str
    mode: str
    seed: int
    status: str
    iterations: int
    sum_rate: float
    edge_sum_rate: float
    rate_outage: float
    latency_outage: float
    alpha: float
    satisfaction: float
    near_binary: float
    rates: list = field(default_factory=list)
    latencies: list = field(default_factory=list)
    history: list = field(default_factory=list)
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


COLUMNS = [f.name for f in fields(RunResult)]
_LISTS = {"rates", "latencies", "history"}
_INTS = {"seed", "iterations"}
_STRS = {"preset", "point", "scheme", "mode", "status", "error"}


def _fmt(v) -> str:
    return repr(float(v))


def _row(res: RunResult) -> list[str]:
    out = []
    for name in COLUMNS:
        v = getattr(res, name)
        if name in _LISTS:
            out.append(";".join(_fmt(x) for x in v))
        elif name in _STRS:
            out.append(v)
        elif name in _INTS:
            out.append(str(int(v)))
        else:
            out.append(_fmt(v))
    return out


def _parse(row: dict) -> RunResult:
    kw = {}
    for name in COLUMNS:
        v = row[name]
        if name in _LISTS:
            kw[name] = [float(x) for x in v.split(";")] if v else []
        elif name in _STRS:
            kw[name] = v
        elif name in _INTS:
            kw[name] = int(v)
        else:
            kw[name] = float(v)
    return RunResult(**kw)


def to_csv(table: Sequence[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for res in table:
        w.writerow(_row(res))
    return buf.getvalue()


def read_csv(path) -> list[RunResult]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [_parse(r) for r in csv.DictReader(fh)]


# ----------------------------------------------------------------------------
# one run

def seed_rng(cfg: ScenarioConfig, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, int(seed)]))


def prepare(cfg: ScenarioConfig, seed: int, spec: BaselineSpec = BaselineSpec()):
    """Topology, channels and mask for one seed, after applying the spec's mode."""
    cfg = apply_mode(cfg, spec.comp, spec.sn)
    rng = seed_rng(cfg, seed)
    topo = build_topology(cfg, rng)
    ch = draw_channels(topo, cfg, rng)
    mask = comp_associate(ch, cfg.comp_threshold, shape=ch.shape)
    return cfg, topo, ch, mask


def run_single(cfg: ScenarioConfig, spec: BaselineSpec, seed: int, preset: str = "",
               point: str = "", alpha: float = DEFAULT_ALPHA) -> RunResult:
    """topology -> channels -> mask -> scheme -> metrics; failures become an error row."""
    try:
        cfg_m, topo, ch, mask = prepare(cfg, seed, spec)
        inst = Instance.build(cfg_m, ch, mask)
        ga_rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, int(seed), spec.ga.seed]))
        sol = run_scheme(spec, inst, ga_rng)
        st = status(inst, sol.P, sol.X)
        r_out = rate_outage(st.rates, inst.rate_req)
        l_out = latency_outage(st.latencies, inst.latency_req)
        return RunResult(preset, point, spec.scheme, spec.mode, int(seed), sol.status, sol.iterations,
                         float(st.rates.sum()), float(st.rates[topo.edge_users].sum()), r_out, l_out,
                         alpha, satisfaction(r_out, l_out, alpha), float(sol.near_binary),
                         [float(x) for x in st.rates], [float(x) for x in st.latencies],
                         [float(x) for x in sol.history])
    except Exception as exc:  # recorded per seed; the sweep goes on
        nan = math.nan
        return RunResult(preset, point, spec.scheme, spec.mode, int(seed), "error", 0, nan, nan, nan,
                         nan, alpha, nan, nan, error=f"{type(exc).__name__}: {exc}")


def _run_job(job):
    return run_single(*job)


def run_experiment(cfg: ScenarioConfig, spec: BaselineSpec, seeds: Iterable[int], preset: str = "",
                   point: str = "", alpha: float = DEFAULT_ALPHA, workers: int = 1) -> list[RunResult]:
    """One row per seed, in seed-list order, whatever the worker count."""
    jobs = [(cfg, spec, s, preset, point, alpha) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


# ----------------------------------------------------------------------------
# aggregation

METRICS = ("sum_rate", "edge_sum_rate", "rate_outage", "latency_outage", "satisfaction",
           "iterations", "near_binary")


def _mean_std(values: list[float]) -> tuple[float, float]:
    # fsum is exact, so the result does not depend on the order of the seeds
    if not values:
        return math.nan, math.nan
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def aggregate(table: Sequence[RunResult]) -> dict:
    """Mean and (population) standard deviation of each metric per (point, scheme, mode)."""
    groups: dict[tuple, list[RunResult]] = {}
    for res in table:
        groups.setdefault((res.point, res.scheme, res.mode), []).append(res)
    out = {}
    for key in sorted(groups):
        rows = [r for r in groups[key] if r.ok]
        entry = {"runs": len(groups[key]), "failed": len(groups[key]) - len(rows)}
        for m in METRICS:
            entry[m] = dict(zip(("mean", "std"), _mean_std([float(getattr(r, m)) for r in rows])))
        entry["converged"] = sum(r.status == "converged" for r in rows)
        out["|".join(key)] = entry
    return out


# ----------------------------------------------------------------------------
# presets

@dataclass(frozen=True)
class SweepPoint:
    label: str
    overrides: dict = field(default_factory=dict)  # ScenarioConfig.with_overrides keywords
    comp: Optional[bool] = None  # None keeps the base spec's mode
    sn: Optional[bool] = None
    scheme: Optional[str] = None
    alpha: float = DEFAULT_ALPHA


def _points(name: str) -> list[SweepPoint]:
    if name == "convergence":
        return [SweepPoint(f"p_max_dbm={p}", {"bs_power_cap_dbm": p}) for p in (23, 26, 30)]
    if name == "rate-vs-power":
        return [SweepPoint(f"p_max_dbm={p}", {"bs_power_cap_dbm": p}) for p in (23, 26, 30, 36)]
    if name == "outage-vs-qos":
        return [SweepPoint(f"r_req={r};p_max_dbm={p}", {"qos_rate": r, "bs_power_cap_dbm": p})
                for r in (1, 3, 5, 7) for p in (23, 26, 30, 36)]
    if name == "comp-vs-noncomp":
        return [SweepPoint(f"r_req={r};{'comp' if c else 'non_comp'}", {"qos_rate": r}, comp=c)
                for r in (0, 1, 3, 5, 7) for c in (True, False)]
    if name == "mn-vs-sn":
        return [SweepPoint(f"r_req={r};{'sn' if s else 'mn'}", {"qos_rate": r}, sn=s)
                for r in (1, 3, 5, 7) for s in (False, True)]
    if name == "sf-vs-alpha":
        return [SweepPoint(f"eta={e};{'sn' if s else 'mn'};alpha={a}", {"edge_ratio": e}, sn=s, alpha=a)
                for e in (0.5, 1.0) for s in (False, True) for a in np.round(np.linspace(0, 1, 11), 1).tolist()]
    if name == "latency-vs-edge":
        return [SweepPoint(f"eta={e};{'sn' if s else 'mn'}", {"edge_ratio": e}, sn=s)
                for e in (0.0, 0.25, 0.5, 0.75, 1.0) for s in (False, True)]
    if name == "benchmark-compare":
        return [SweepPoint(f"p_max_dbm={p};{s}", {"bs_power_cap_dbm": p}, scheme=s)
                for p in (23, 26) for s in ("full_cesp", "relax_round", "epa+cesp_sa", "cesp_pa+gsa")]
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("convergence", "rate-vs-power", "outage-vs-qos", "comp-vs-noncomp", "mn-vs-sn",
           "sf-vs-alpha", "latency-vs-edge", "benchmark-compare")


def preset_points(name: str) -> list[SweepPoint]:
    return _points(name)


def run_preset(cfg: ScenarioConfig, name: str, spec: BaselineSpec = BaselineSpec(),
               seeds: Sequence[int] = range(DEFAULT_SEEDS), workers: int = 1) -> list[RunResult]:
    """Every sweep point of a preset over the seed list; runs differing only in alpha are shared."""
    table: list[RunResult] = []
    cache: dict = {}
    for pt in _points(name):
        cfg_p = cfg.with_overrides(**pt.overrides) if pt.overrides else cfg
        spec_p = replace(spec, comp=spec.comp if pt.comp is None else pt.comp,
                         sn=spec.sn if pt.sn is None else pt.sn,
                         scheme=pt.scheme or spec.scheme)
        key = (repr(cfg_p), spec_p)
        if key not in cache:
            cache[key] = run_experiment(cfg_p, spec_p, seeds, workers=workers)
        for res in cache[key]:
            sf = satisfaction(res.rate_outage, res.latency_outage, pt.alpha) if res.ok else math.nan
            table.append(replace(res, preset=name, point=pt.label, alpha=pt.alpha, satisfaction=sf))
    return table


# ----------------------------------------------------------------------------
# output

def emit_results(table: Sequence[RunResult], path, fmt: str = "csv", cfg: ScenarioConfig | None = None,
                 extra: dict | None = None) -> str:
    """Write ``table`` as CSV (one row per seed per point) or as a JSON summary."""
    path = os.fspath(path)
    if fmt == "csv":
        text = to_csv(table)
    elif fmt == "json":
        doc = {"version": __version__, "aggregate": aggregate(table),
               "config": to_document(cfg) if cfg is not None else None}
        doc.update(extra or {})
        text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def write_outputs(table, out_dir, preset: str, cfg: ScenarioConfig, spec: BaselineSpec) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = emit_results(table, os.path.join(out_dir, f"{preset}.csv"))
    extra = {"preset": preset, "scheme": spec.scheme, "mode": spec.mode,
             "seeds": sorted({r.seed for r in table})}
    json_path = emit_results(table, os.path.join(out_dir, f"{preset}.summary.json"), "json", cfg, extra)
    return csv_path, json_path
