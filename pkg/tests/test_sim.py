import json

import numpy as np
import pytest

from conftest import crandn
from twotier import manifold as mf
from twotier import precoder as pc
from twotier import sim
from twotier.config import SimConfig, dump_config, load_config, parse_config
from twotier.errors import ConfigError

SMALL = SimConfig(g=3, k=2, n_t=8, m=2, superframe_len=5, n_superframes=3, power_dbs=[0.0, 10.0],
                  speeds_kmh=[30.0], n_seeds=2, quad_points=256, seed=7)


# -- rates ---------------------------------------------------------------------

def scalar_bundle(v):
    return pc.PrecoderBundle([np.array([[v]])], [np.ones((1, 1))], np.array([1]), np.array([0]), 1.0)


def test_scalar_rate():
    h = np.array([[[[1.5 - 0.5j]]]])
    rate = sim.compute_rates(h, scalar_bundle(0.8j))
    assert rate[0] == pytest.approx(np.log2(1 + abs((1.5 - 0.5j) * 0.8j) ** 2))


def test_zero_power_zero_rate():
    h = np.array([[[[2.0 + 0j]]]])
    assert sim.compute_rates(h, scalar_bundle(0.0))[0] == 0


def test_orthogonal_users_after_zf(rng):
    h = crandn(rng, 2, 1, 1, 4)
    serving = np.array([0, 0])
    b = pc.two_tier_bundle(h, [np.eye(4, dtype=complex)], serving, 3.0, 0.0, 1)
    rates = sim.user_rates(h, b)
    single = [np.log2(1 + abs(h[u, 0, 0] @ b.precoders[0][:, u]) ** 2) for u in range(2)]
    assert np.allclose(rates, single, atol=1e-9)


def test_nonpositive_noise_jitters(rng, caplog):
    h = crandn(rng, 1, 1, 1, 2)
    b = pc.two_tier_bundle(h, [np.eye(2, dtype=complex)], np.array([0]), 1.0, 0.0, 1)
    r = sim.user_rates(h, b, noise_power=0.0)
    assert np.isfinite(r).all() and "jitter" in caplog.text


def test_receiver_rotation_keeps_rates(rng):
    h = crandn(rng, 4, 2, 2, 8)
    serving = np.repeat([0, 1], 2)
    b = pc.two_tier_bundle(h, [mf.random_point(8, 4, rng) for _ in range(2)], serving, 5.0, 0.2, 2)
    before = sim.compute_rates(h, b)
    b.receivers = [u @ np.linalg.qr(crandn(rng, 2, 2))[0] for u in b.receivers]
    assert np.allclose(sim.compute_rates(h, b), before, atol=1e-10)


# -- config -------------------------------------------------------------------

def test_config_roundtrip(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text(dump_config(SMALL))
    assert load_config(path) == SMALL


def test_config_parse_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("bogus = 1")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("# c\nn_t = many")
    with pytest.raises(ConfigError):
        parse_config("m = 40")
    with pytest.raises(ConfigError, match="config not found"):
        load_config(tmp_path / "missing.cfg")
    assert parse_config("power_dbs = 0, 5  # dB\nschemes=oracle").power_dbs == [0.0, 5.0]


@pytest.mark.parametrize("bad", [dict(n_t=0), dict(w=-1.0), dict(schemes=["x"]), dict(cg_method="lsqr"),
                                 dict(gamma_policy="fast"), dict(m=1, k=2), dict(latency_subframes=[-1])])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SimConfig(**bad)


# -- simulation ---------------------------------------------------------------------

def test_empty_report():
    rep = sim.run_simulation(SMALL.replace(n_superframes=0))
    doc = json.loads(rep.to_json())
    assert doc["results"] == [] and doc["schema_version"] == sim.SCHEMA_VERSION
    assert set(doc["feedback"]) == set(SMALL.schemes)


def test_report_deterministic():
    a = sim.run_simulation(SMALL).to_json()
    b = sim.run_simulation(SMALL).to_json()
    assert a == b
    assert sim.run_simulation(SMALL.replace(seed=8)).to_json() != a


def test_report_contents():
    rep = sim.run_simulation(SMALL)
    labels = sim.scheme_labels(SMALL)
    assert labels == ["proposed", "gradient", "oracle", "one_tier_lat0", "one_tier_lat5"]
    assert len(rep.results) == len(labels) * 2
    assert all(r["mean_per_cell_rate_bps_hz"] >= 0 and r["n_seeds"] == 2 for r in rep.results)
    rows = rep.diagnostics["proposed@30kmh"]
    assert [r["superframe"] for r in rows] == [1, 1, 1, 2, 2, 2]
    assert {t["scheme"] for t in rep.tracking_error} == {"proposed", "gradient"}
    assert rep.lookup("oracle", 10.0, 30.0)["power_db"] == 10.0
    with pytest.raises(KeyError):
        rep.lookup("oracle", 99.0)


def test_sampled_mode_runs():
    rep = sim.run_simulation(SMALL.replace(covariance_mode="sampled", n_seeds=1, schemes=["proposed"]))
    assert rep.results and rep.results[0]["mean_per_cell_rate_bps_hz"] > 0


def test_throughput_increases_with_power():
    cfg = SimConfig(g=3, n_t=16, k=2, n_r=1, m=2, speeds_kmh=[10.0], power_dbs=[0.0, 10.0, 20.0],
                    n_superframes=2, superframe_len=10, schemes=["proposed"], quad_points=512)
    rates = [sim.run_simulation(cfg).lookup("proposed", p)["mean_per_cell_rate_bps_hz"] for p in cfg.power_dbs]
    assert rates[0] < rates[1] < rates[2]


def test_sweep_shapes():
    table, _ = sim.sweep(SMALL.replace(schemes=["oracle", "one_tier"], n_seeds=1), "speed", [10.0, 50.0])
    assert set(table) == {"oracle", "one_tier_lat0", "one_tier_lat5"}
    assert [row[0] for row in table["oracle"]] == [10.0, 50.0]
    with pytest.raises(ValueError):
        sim.sweep(SMALL, "bandwidth", [1.0])
