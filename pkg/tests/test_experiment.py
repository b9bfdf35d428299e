import dataclasses
import json

import numpy as np
import pytest

from dmcc.experiment import (DIVERGED_MSD, AlgorithmSpec, ConfigError, ExperimentConfig, ModelSpec, NoiseSpec,
                             RunSpec, TopologySpec, UnknownParameterError, config_from_dict, default_config,
                             load_config, network_msd, parameter_sweep, run_monte_carlo, simulate,
                             steady_state_msd, to_db, true_weights, write_curves_csv, write_manifest,
                             write_steady_csv, write_sweep_csv)
from dmcc.diffusion import AlgorithmConfig

DB_002 = -16.9897000433601880   # 10 log10(0.02)
DB_0012 = -19.2081875395237516  # 10 log10(0.012)


def small_config(**run):
    algos = (AlgorithmSpec("ATC-DMCC", "mcc", "atc", eta=0.06),
             AlgorithmSpec("CTA-DLMS", "lms", "cta", eta=0.03),
             AlgorithmSpec("NonCoop-LMS", "lms", "noncoop", eta=0.03))
    spec = dict(iterations=40, monte_carlo_runs=3, seed=0, steady_window=10)
    spec.update(run)
    return ExperimentConfig(TopologySpec(n=5, radius=0.8), ModelSpec(m=3), NoiseSpec(), algos, RunSpec(**spec))


def test_network_msd_examples():
    lin, db = network_msd(np.array([[0.1, 0.1], [0.0, 0.0]]), np.zeros(2))
    assert lin == pytest.approx(0.01) and db == pytest.approx(-20.0, abs=1e-12)
    lin, db = network_msd(np.array([[0.1, 0.1], [0.1, 0.1]]), np.zeros(2))
    assert db == pytest.approx(DB_002, rel=1e-14)
    lin, db = network_msd(np.array([[0.1, 0.0], [0.1, 0.1], [0.1, 0.1], [0.0, 0.1], [0.1, 0.1]]), np.zeros(2))
    assert lin == pytest.approx(0.016)
    assert network_msd(np.array([[0.1, 0.1], [0.02, 0.02]]), np.zeros(2))[1] != DB_0012
    assert to_db(0.012) == pytest.approx(DB_0012, rel=1e-14)
    assert to_db(0.0) == pytest.approx(-300.0)


def test_steady_state_msd_averages_linear_values():
    traj = np.array([1.0, 1.0, 0.01, 0.03])
    assert steady_state_msd(traj, 2) == pytest.approx(DB_002, rel=1e-14)
    per_node = steady_state_msd(np.array([[1.0, 1.0], [0.02, 0.012]]), 1)
    np.testing.assert_allclose(per_node, [DB_002, DB_0012], rtol=1e-14)
    with pytest.raises(ValueError):
        steady_state_msd(traj, 5)


def test_simulate_records_divergence_sentinel():
    cfg = AlgorithmConfig("lms", "noncoop", eta=50.0)
    rng = np.random.default_rng(0)
    u = rng.standard_normal((200, 2, 3))
    d = u @ np.ones(3)
    dev, at = simulate(cfg, u, d, np.ones(3))
    assert at is not None
    assert np.all(dev[at:] == DIVERGED_MSD)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="colour"):
        config_from_dict({"noise": {"colour": "pink"}})
    with pytest.raises(ConfigError):
        config_from_dict({"algorithms": [{"name": "x", "criterion": "nope"}]})
    with pytest.raises(UnknownParameterError):
        config_from_dict({"sweep": {"beta": [0.1]}})
    with pytest.raises(ConfigError):
        config_from_dict({"run": {"iterations": 10, "steady_window": 20}})


def test_config_round_trip(tmp_path):
    cfg = default_config()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(path) == cfg
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_shipped_configs_load():
    from pathlib import Path
    for path in sorted((Path(__file__).parents[1] / "configs").glob("*.json")):
        load_config(path)


def test_select_and_seed():
    cfg = default_config()
    assert [a.name for a in cfg.select(["CTA-DMCC", "ATC-DMCC"]).algorithms] == ["ATC-DMCC", "CTA-DMCC"]
    with pytest.raises(ConfigError):
        cfg.select(["nope"])
    assert cfg.with_seed(7).run.seed == 7


def test_true_weights_fixed_or_per_run():
    spec = ModelSpec(m=4, seed=3)
    np.testing.assert_array_equal(true_weights(spec, 0), true_weights(spec, 5))
    per = dataclasses.replace(spec, regenerate_per_run=True)
    assert not np.array_equal(true_weights(per, 0), true_weights(per, 1))


@pytest.mark.invariant
def test_monte_carlo_is_deterministic():
    a = run_monte_carlo(small_config())
    b = run_monte_carlo(small_config())
    for name in a.names:
        assert a.msd[name].tobytes() == b.msd[name].tobytes()


@pytest.mark.invariant
def test_results_do_not_depend_on_algorithm_order():
    cfg = small_config()
    rev = dataclasses.replace(cfg, algorithms=cfg.algorithms[::-1])
    a, b = run_monte_carlo(cfg), run_monte_carlo(rev)
    for name in a.names:
        assert a.msd[name].tobytes() == b.msd[name].tobytes()
    only = run_monte_carlo(cfg.select(["ATC-DMCC"]))
    assert only.msd["ATC-DMCC"].tobytes() == a.msd["ATC-DMCC"].tobytes()


@pytest.mark.invariant
def test_ensemble_is_mean_of_independent_runs():
    from dmcc.experiment import build_topology
    from dmcc.signal import MeasurementModel, generate_stream

    cfg = small_config(monte_carlo_runs=3)
    res = run_monte_carlo(cfg)
    topo = build_topology(cfg.topology)
    algo = cfg.algorithms[0].build(topo)
    w_o = true_weights(cfg.model)
    total = np.zeros(cfg.run.iterations)
    for r in range(3):
        s = generate_stream(MeasurementModel(w_o), cfg.noise.build(), topo.n, cfg.run.iterations, 0, r)
        total += simulate(algo, s.regressors, s.measurements, w_o)[0].mean(axis=1)
    np.testing.assert_allclose(res.msd["ATC-DMCC"], total / 3, rtol=1e-12)


def test_seed_changes_results():
    a = run_monte_carlo(small_config(seed=0))
    b = run_monte_carlo(small_config(seed=1))
    assert not np.array_equal(a.msd["ATC-DMCC"], b.msd["ATC-DMCC"])


def test_sweep_row_count_and_unknown_parameter():
    cfg = small_config(monte_carlo_runs=1, iterations=20)
    sweep = parameter_sweep(cfg, {"c": [0.1, 0.4], "sigma": [1.0, 2.0]})
    assert len(sweep.rows) == 2 * 2 * 3
    assert len(sweep.column("ATC-DMCC")) == 4
    # sigma does not touch LMS
    lms = sweep.column("CTA-DLMS")
    assert lms[0] == lms[1]
    with pytest.raises(UnknownParameterError):
        parameter_sweep(cfg, {"gamma": [1]})


def test_writers(tmp_path):
    cfg = small_config(monte_carlo_runs=1)
    res = run_monte_carlo(cfg)
    write_curves_csv(res, tmp_path / "curves.csv")
    write_steady_csv(res, tmp_path / "steady.csv")
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "iteration,ATC-DMCC_msd_db,CTA-DLMS_msd_db,NonCoop-LMS_msd_db"
    assert len(lines) == 41
    assert len((tmp_path / "steady.csv").read_text().splitlines()) == 6
    sweep = parameter_sweep(dataclasses.replace(cfg, algorithms=cfg.algorithms[:1]), {"c": [0.1]})
    write_sweep_csv(sweep, tmp_path / "sweep.csv")
    assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == "c,algo,msd_db"
    write_manifest(cfg, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["seeds"]["master"] == 0 and doc["config"]["run"]["iterations"] == 40
