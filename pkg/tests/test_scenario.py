import math

import numpy as np
import pytest
import yaml

from cespnr.scenario import (ConfigError, build_topology, dbm_to_watt, from_document, load_config,
                             make_grid, to_document, watt_to_dbm)


def test_reference_defaults(reference):
    assert (reference.num_bs, reference.num_users) == (2, 8)
    assert reference.grid.counts == (8, 8)
    assert list(reference.grid.spacings_khz) == [15.0, 30.0]
    assert list(reference.grid.latencies) == [1.0, 0.5]
    assert reference.noise_power_dbm == -90.0
    assert reference.bs_power_cap_dbm == (23.0, 23.0)
    assert reference.latency_req_ms == (0.75,) * 8
    assert reference.penalty == 1e3
    assert reference.convergence_threshold == 0.1
    assert reference.max_iterations == 100
    assert reference.grid.ratio == 2


@pytest.mark.parametrize("dbm,watt", [(30.0, 1.0), (0.0, 1e-3), (-90.0, 1e-12), (23.0, 0.19952623149688797)])
def test_dbm_conversion(dbm, watt):
    assert dbm_to_watt(dbm) == pytest.approx(watt, rel=1e-12)
    assert watt_to_dbm(watt) == pytest.approx(dbm, abs=1e-9)


def test_yaml_text_and_mapping_agree(tmp_path):
    text = "qos:\n  rate_req: 3.0\npower:\n  bs_cap_dbm: 30\n"
    path = tmp_path / "cfg.yaml"
    path.write_text(text)
    a = load_config(path)
    b = load_config(yaml.safe_load(text))
    assert a == b
    assert a.qos_rate == (3.0,) * 8
    assert a.subcarrier_power_cap_dbm == 30.0  # tied to the BS cap when unset


def test_document_round_trip(reference):
    again = from_document(to_document(reference))
    assert again == reference


@pytest.mark.parametrize("override,needle", [
    ({"network": {"edge_ratio": 1.5}}, "edge_ratio"),
    ({"qos": {"comp_threshold": 0.5}}, "comp_threshold"),
    ({"qos": {"latency_req_ms": 0}}, "latency_req_ms"),
    ({"numerologies": [{"mu": 1, "subcarriers": 4, "latency_ms": 1}, {"mu": 0, "subcarriers": 4, "latency_ms": 1}]},
     "increasing"),
    ({"numerologies": [{"mu": 0, "subcarriers": 4}]}, "missing"),
    ({"algorithm": {"max_iterations": 0}}, "max_iterations"),
])
def test_invalid_configs_name_the_field(override, needle):
    with pytest.raises(ConfigError, match=needle):
        load_config(override)


def test_unreadable_config_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_overrides_broadcast_and_tie_caps(reference):
    cfg = reference.with_overrides(bs_power_cap_dbm=36, qos_rate=7)
    assert cfg.bs_power_cap_dbm == (36.0, 36.0)
    assert cfg.subcarrier_power_cap_dbm == 36.0
    assert cfg.qos_rate == (7.0,) * 8
    loose = load_config({"power": {"subcarrier_cap_dbm": 10}}).with_overrides(bs_power_cap_dbm=30)
    assert loose.subcarrier_power_cap_dbm == 10.0


def test_ragged_grid_mask():
    grid = make_grid([{"mu": 0, "subcarriers": 4, "latency_ms": 1}, {"mu": 2, "subcarriers": 2, "latency_ms": 0.25}])
    assert grid.ratio == 4
    assert grid.valid.tolist() == [[True] * 4, [True, True, False, False]]
    assert grid.total_subcarriers == 6


@pytest.mark.parametrize("eta", [0.0, 0.25, 0.5, 1.0])
def test_topology_radii_and_edge_count(reference, eta):
    cfg = reference.with_overrides(edge_ratio=eta)
    for seed in range(5):
        topo = build_topology(cfg, np.random.default_rng(seed))
        d_home = np.linalg.norm(topo.user_positions - topo.bs_positions[topo.home_bs], axis=1)
        edge = topo.edge_users
        assert edge.sum() == math.floor(eta * 8 + 0.5)
        assert np.all((d_home[edge] > 80.0) & (d_home[edge] <= 100.0 + 1e-9))
        assert np.all((d_home[~edge] > 0.0) & (d_home[~edge] <= 80.0 + 1e-9))
        assert np.all(topo.distances() > 0)


def test_topology_is_seed_deterministic(reference):
    a = build_topology(reference, np.random.default_rng(7))
    b = build_topology(reference, np.random.default_rng(7))
    np.testing.assert_array_equal(a.user_positions, b.user_positions)
    assert a.user_class == b.user_class


def test_shipped_config_matches_defaults():
    from dataclasses import fields
    from pathlib import Path

    from cespnr.baselines import GAParams
    from cespnr.cesp import DEFAULT_OPTIONS, Instance
    from cespnr.harness import prepare

    path = Path(__file__).resolve().parents[1] / "configs" / "reference.yaml"
    shipped, default = load_config(path), load_config(None)
    for f in fields(shipped):
        if f.name not in ("solver", "cesp", "ga"):
            assert getattr(shipped, f.name) == getattr(default, f.name), f.name
    assert GAParams.from_mapping(shipped.ga) == GAParams()
    cfg, _, ch, mask = prepare(shipped, 0)
    assert Instance.build(cfg, ch, mask).options == DEFAULT_OPTIONS
    cfg = shipped.with_overrides(solver={"tol": 1e-4, "iterations": 50})
    opts = Instance.build(cfg, ch, mask).options
    assert opts["solver_tol"] == 1e-4 and opts["solver_iterations"] == 50
