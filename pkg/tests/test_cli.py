import csv
import json
from pathlib import Path

import numpy as np
import pytest

from fisher_sgd.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main, replication_seeds
from fisher_sgd.experiment import initial_theta
from fisher_sgd.models import Sbm

TOY_SCHEDULE = {"k_total": 3000, "c_heating": 0.01}


def write_config(directory: Path, name: str = "config.json", **config) -> Path:
    path = directory / name
    path.write_text(json.dumps(config))
    return path


def read_bytes(directory: Path) -> dict:
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


# -- simulate ---------------------------------------------------------------------


def test_simulate_logistic_design(tmp_path):
    cfg = write_config(tmp_path, model="logistic", seed=1)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == EXIT_OK
    with open(tmp_path / "sim" / "data.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["id", "time", "y"]
    assert len(rows) - 1 == 1000 * 20
    truth = json.loads((tmp_path / "sim" / "truth.json").read_text())
    assert truth["parameters"]["beta1"] == 200.0 and truth["parameters"]["sigma2"] == 100.0
    assert len(truth["latent"]) == 1000


def test_simulate_sbm_adjacency(tmp_path):
    cfg = write_config(tmp_path, model="sbm", seed=2)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == EXIT_OK
    adj = np.loadtxt(tmp_path / "sim" / "adjacency.csv", delimiter=",")
    assert adj.shape == (100, 100)
    assert np.all(np.diag(adj) == 0)
    assert set(np.unique(adj)) <= {0.0, 1.0}


def test_simulate_is_reproducible(tmp_path):
    cfg = write_config(tmp_path, model="toy", seed=3)
    for out in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / out)]) == EXIT_OK
    assert read_bytes(tmp_path / "a") == read_bytes(tmp_path / "b")
    assert main(["simulate", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "c")]) == EXIT_OK
    assert read_bytes(tmp_path / "a") != read_bytes(tmp_path / "c")


# -- fit --------------------------------------------------------------------------------


@pytest.fixture
def toy_run(tmp_path):
    sim = write_config(tmp_path, "sim.json", model="toy", seed=5)
    assert main(["simulate", "--config", str(sim), "--out", str(tmp_path / "data")]) == EXIT_OK
    cfg = write_config(tmp_path, model="toy", seed=6, data="data/data.csv", truth="data/truth.json", schedule=TOY_SCHEDULE)
    return tmp_path, cfg


def test_fit_toy_outputs(toy_run):
    tmp_path, cfg = toy_run
    out = tmp_path / "fit"
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    result = json.loads((out / "result.json").read_text())
    for key in ("theta_hat_chart", "theta_hat_original", "fim_whole", "ci", "phases", "diagnostics"):
        assert key in result
    assert result["parameter_names"] == ["mu", "omega2"]
    assert result["oracle"]["max_abs_gap_chart"] < 1e-2
    assert result["phases"]["k_end_preheating"] == 1000
    assert len(result["ci"]["intervals"]) == 2
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "gamma", "phase", "theta_1", "theta_2", "mu", "omega2", "grad_norm", "mean_acceptance"]
    assert len(rows) - 1 == 3000
    assert rows[1][2] == "pre-heating" and rows[-1][2] == "decreasing"


def test_fit_is_byte_identical(toy_run):
    tmp_path, cfg = toy_run
    for out in ("a", "b"):
        assert main(["fit", "--config", str(cfg), "--iters", "1500", "--out", str(tmp_path / out)]) == EXIT_OK
    assert read_bytes(tmp_path / "a") == read_bytes(tmp_path / "b")


def test_fit_missing_data_file(tmp_path):
    cfg = write_config(tmp_path, model="toy", seed=1, data="nope.csv")
    out = tmp_path / "fit"
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()


def test_fit_numerical_failure_keeps_diagnostics(tmp_path):
    # three nodes can never populate four classes, so every start is discarded
    (tmp_path / "adj.csv").write_text("0,1,0\n0,0,1\n1,0,0\n")
    cfg = write_config(tmp_path, model="sbm", seed=1, k=4, data="adj.csv", max_restarts=2, schedule={"k_total": 10})
    out = tmp_path / "fit"
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == EXIT_NUMERICAL
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "RestartLimitExceeded"
    assert not (out / "result.json").exists()


def test_fit_sbm_edgelist(tmp_path):
    sim = write_config(tmp_path, "sim.json", model="sbm", seed=7, sbm_format="edgelist", simulate={"n": 30})
    assert main(["simulate", "--config", str(sim), "--out", str(tmp_path / "data")]) == EXIT_OK
    cfg = write_config(
        tmp_path,
        model="sbm",
        seed=8,
        data={"path": "data/adjacency.csv", "format": "edgelist", "n_nodes": 30},
        truth="data/truth.json",
        schedule={"k_total": 300, "k_pre": 100, "k_heat_min": 50, "c_heating": 0.01},
    )
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "fit")]) == EXIT_OK
    result = json.loads((tmp_path / "fit" / "result.json").read_text())
    assert sorted(result["label_permutation"]) == [0, 1, 2, 3]
    assert len(result["covered"]) == 20


def test_fit_logistic_typical_coverage(tmp_path):
    sim = write_config(tmp_path, "sim.json", model="logistic", seed=11)
    assert main(["simulate", "--config", str(sim), "--out", str(tmp_path / "data")]) == EXIT_OK
    cfg = write_config(
        tmp_path,
        model="logistic",
        seed=12,
        data="data/data.csv",
        truth="data/truth.json",
        schedule={"k_total": 5000, "c_heating": 0.01},
        sampler={"proposal_scale": 5.0},
    )
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "fit")]) == EXIT_OK
    result = json.loads((tmp_path / "fit" / "result.json").read_text())
    assert sum(result["covered"]) >= 6


def test_centre_init_is_chart_origin():
    model, _ = Sbm.simulate(12, [0.5, 0.5], [[0.7, 0.3], [0.3, 0.7]], np.random.default_rng(0))
    theta = initial_theta({"init": "centre"}, model, np.random.default_rng(1))
    np.testing.assert_array_equal(theta, np.zeros(model.theta_dim))
    alpha, p = model.params(theta)
    np.testing.assert_allclose(alpha, [0.5, 0.5], rtol=1e-15)
    np.testing.assert_allclose(p, 0.5, rtol=1e-15)


def test_centre_init_restarts_from_origin(tmp_path, monkeypatch):
    import fisher_sgd.experiment as experiment

    calls = []
    real = experiment.centre_init

    def spy(dim, rng):
        calls.append(dim)
        return real(dim, rng)

    monkeypatch.setattr(experiment, "centre_init", spy)
    (tmp_path / "adj.csv").write_text("0,1,0\n0,0,1\n1,0,0\n")
    cfg = write_config(tmp_path, model="sbm", seed=1, k=4, data="adj.csv", init="centre", max_restarts=2, schedule={"k_total": 10})
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "fit")]) == EXIT_NUMERICAL
    # the first start plus two restarts
    assert calls == [19, 19, 19]


# -- usage errors -----------------------------------------------------------------


def test_usage_errors(tmp_path):
    assert main(["fit", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE
    assert main(["bogus", "--config", "x"]) == EXIT_USAGE
    no_seed = write_config(tmp_path, "a.json", model="toy")
    assert main(["simulate", "--config", str(no_seed)]) == EXIT_USAGE
    bad_model = write_config(tmp_path, "b.json", model="hmm", seed=1)
    assert main(["simulate", "--config", str(bad_model)]) == EXIT_USAGE
    bad_schedule = write_config(tmp_path, "c.json", model="toy", seed=1, replications=1, schedule={"K": 3})
    assert main(["replicate", "--config", str(bad_schedule), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    no_reps = write_config(tmp_path, "d.json", model="toy", seed=1)
    assert main(["replicate", "--config", str(no_reps), "--out", str(tmp_path / "o")]) == EXIT_USAGE


# -- replicate ----------------------------------------------------------------------


def test_replication_seeds_are_distinct_and_stable():
    a = replication_seeds(9, 0)[0].random(3)
    b = replication_seeds(9, 0)[0].random(3)
    c = replication_seeds(9, 1)[0].random(3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_replicate_toy_coverage_and_worker_invariance(tmp_path):
    cfg = write_config(tmp_path, model="toy", seed=13, replications=20, schedule=TOY_SCHEDULE)
    assert main(["replicate", "--config", str(cfg), "--out", str(tmp_path / "w1")]) == EXIT_OK
    assert main(["replicate", "--config", str(cfg), "--workers", "2", "--out", str(tmp_path / "w2")]) == EXIT_OK
    assert read_bytes(tmp_path / "w1") == read_bytes(tmp_path / "w2")
    with open(tmp_path / "w1" / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["parameter"] for r in rows] == ["theta", "mu", "omega2"]
    for r in rows:
        assert 0.75 <= float(r["coverage"]) <= 1.0
        assert int(r["failures"]) == 0
    # summary RMSE is recomputable from the per-replication files
    reps = [json.loads(p.read_text()) for p in sorted((tmp_path / "w1" / "replications").glob("rep_*.json"))]
    assert len(reps) == 20
    err = np.array([r["estimate_aligned"] for r in reps]) - np.array(reps[0]["truth_original"])
    assert float(rows[1]["rmse"]) == pytest.approx(np.sqrt(np.mean(err[:, 0] ** 2)), rel=1e-15)
