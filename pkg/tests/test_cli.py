import csv
import io
import json

import numpy as np
import pytest

from misal import cli
from misal.analysis import rate_constants
from misal.benchmarks import estimate_kappa_x, generate_benchmark, lagrangian_minimizer
from misal.cli import ExperimentConfig, acceptance_config, emit_plotdata, main, run_experiment
from misal.errors import ConfigurationError


def small_config(**over):
    cfg = acceptance_config()
    cfg["K"] = 40
    cfg.update(over)
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


# -- benchmark generation ---------------------------------------------------------


def test_same_seed_gives_identical_problem_json():
    a, ta = generate_benchmark("random-qp", 3)
    b, tb = generate_benchmark("random-qp", 3)
    assert a.to_json() == b.to_json()
    assert np.array_equal(ta, tb)
    c, _ = generate_benchmark("random-qp", 4)
    assert c.to_json() != a.to_json()


@pytest.mark.parametrize("seed", range(5))
def test_generated_instance_is_psd_and_strictly_feasible(seed):
    p, theta_star = generate_benchmark("random-qp", seed)
    rng = np.random.default_rng(seed)
    for th in p.theta_box.sample(rng, 10):
        assert np.linalg.eigvalsh(p.Q(th)).min() >= -1e-10
    x_feas = np.array(p.meta["strictly_feasible_point"])
    assert np.all(p.constraints(x_feas, theta_star) < 0)
    assert p.feasible_set.contains(x_feas)
    assert p.theta_box.contains(theta_star)


def test_portfolio_family_shape():
    p, theta_star = generate_benchmark("portfolio", 1, n=5)
    assert p.feasible_set.kind == "simplex" and p.feasible_set.radius == 1.0
    assert p.m == 2 and p.n == 5
    # Each sector row selects a disjoint block of assets.
    assert np.array_equal(p.A0.sum(axis=0), np.ones(5))
    w = np.ones(5) / 5
    assert np.all(p.constraints(w, theta_star) < 0)


def test_size_guard():
    with pytest.raises(ConfigurationError):
        generate_benchmark("random-qp", 0, n=10, m=5)
    with pytest.raises(ConfigurationError):
        generate_benchmark("lasso", 0)


def test_kappa_estimate_dominates_sampled_ratios():
    p, _ = generate_benchmark("random-qp", 2)
    rng = np.random.default_rng(123)
    for _ in range(10):
        lam = rng.uniform(0, 2, p.m)
        t1, t2 = p.theta_box.sample(rng, 2)
        ratio = np.linalg.norm(lagrangian_minimizer(p, lam, t1) - lagrangian_minimizer(p, lam, t2)) / np.linalg.norm(t1 - t2)
        assert ratio <= p.certificates.kappa_X
    assert estimate_kappa_x(p, 2.0, 2, samples=4) > 0


# -- config ------------------------------------------------------------------------


def test_config_validation_catches_bad_schedule_early(tmp_path, monkeypatch):
    called = []
    monkeypatch.setattr(cli, "run", lambda *a, **k: called.append(1))
    cfg = small_config(schedule={"kind": "power", "c": 1.0, "p": 1.5})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(cfg)
    code = main(["run", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == 2 and not called
    assert not (tmp_path / "o").exists()


def test_missing_problem_file_no_outputs(tmp_path, capsys):
    cfg = small_config(problem={"file": "absent.json", "theta_star": [0.0, 0.0]})
    code = main(["run", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code != 0
    assert "[config]" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unknown_config_keys_rejected():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({**acceptance_config(), "colour": "blue"})
    bad = acceptance_config()
    bad["seed"] = -1
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(bad)


# -- pipeline ----------------------------------------------------------------------


def test_run_writes_outputs_and_passes(tmp_path):
    code = run_experiment(ExperimentConfig.from_dict(small_config()), tmp_path)
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["pass"]
    assert set(report["theorems"]) == {"multiplier_bound", "dual_suboptimality",
                                       "primal_infeasibility", "primal_suboptimality"}
    rows = list(csv.reader(io.StringIO((tmp_path / "trace.csv").read_text())))
    assert len(rows) == 41
    assert not list(tmp_path.glob(".*"))  # no leftover temporaries


def test_failed_check_gives_exit_one(tmp_path, monkeypatch):
    real = cli.check_all

    def strict(trace, p, cfg, gt, consts):
        tiny = rate_constants(**{**consts.inputs, "norm_lambda_star": 0.0, "initial_gap": 0.0,
                                 "sum_sqrt_alpha": 1e-9})
        return real(trace, p, cfg, gt, tiny)

    monkeypatch.setattr(cli, "check_all", strict)
    assert run_experiment(ExperimentConfig.from_dict(small_config()), tmp_path) == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert not report["pass"]
    assert not report["theorems"]["multiplier_bound"]["pass"]


def test_stage_error_is_tagged(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("inner trouble")

    monkeypatch.setattr(cli, "run", boom)
    code = main(["run", "--config", write_config(tmp_path, small_config()), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "[run]" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_generate_then_run_from_files(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "gen")]) == 0
    fixture = json.loads((tmp_path / "gen" / "fixture.json").read_text())
    assert "theta_star" in fixture
    cfg = small_config(problem={"file": "gen/problem.json", "fixture": "gen/fixture.json"})
    path = write_config(tmp_path, cfg)
    assert main(["run", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--k", "40", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert main(["check", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["plotdata", "--config", path, "--out", str(tmp_path / "a")]) == 0


def test_check_without_trace_is_an_error(tmp_path, capsys):
    code = main(["check", "--k", "40", "--out", str(tmp_path)])
    assert code == 2 and "[load]" in capsys.readouterr().err


def test_seed_override_changes_instance(tmp_path):
    main(["generate", "--seed", "1", "--out", str(tmp_path / "s1")])
    main(["generate", "--seed", "2", "--out", str(tmp_path / "s2")])
    assert (tmp_path / "s1" / "problem.json").read_bytes() != (tmp_path / "s2" / "problem.json").read_bytes()


def test_parallel_workers(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    a = write_config(tmp_path, small_config(seed=1), "a.json")
    b = write_config(tmp_path, small_config(seed=2), "b.json")
    assert main(["run", "--config", a, "--config", b, "--out", str(tmp_path / "par")]) == 0
    assert (tmp_path / "par" / "00-a" / "report.json").exists()
    assert (tmp_path / "par" / "01-b" / "report.json").exists()


def test_perfect_information_config():
    cfg = small_config()
    cfg["learning"] = {"kind": "geometric-oracle", "q": 0.9, "perfect_information": True}
    result = cli.run_pipeline(ExperimentConfig.from_dict(cfg))
    assert result.passed
    assert result.constants.inputs["initial_gap"] == 0.0


def test_iterative_learner_config():
    cfg = small_config()
    p, theta_star = generate_benchmark("random-qp", 0)
    cfg["learning"] = {"kind": "iterative-learner", "step": 0.5,
                       "loss": {"hessian": np.eye(2).tolist(), "linear": theta_star.tolist()}}
    result = cli.run_pipeline(ExperimentConfig.from_dict(cfg))
    assert result.passed
    np.testing.assert_allclose(result.ground_truth.theta_star, theta_star)


# -- plot data ---------------------------------------------------------------------


def test_plotdata_columns(acceptance_run):
    text = emit_plotdata(acceptance_run.trace, acceptance_run.constants)
    rows = list(csv.DictReader(io.StringIO(text)))
    c = acceptance_run.constants
    assert list(rows[0]) == list(cli.PLOT_COLUMNS)
    assert len(rows) == len(acceptance_run.trace)
    bg = [float(r["Bg_over_k"]) for r in rows]
    assert all(a > b for a, b in zip(bg, bg[1:]))
    for r in rows[:50] + rows[-5:]:
        k = int(r["k"])
        assert float(r["V_k"]) == pytest.approx(c.C_1 / np.sqrt(k + 1) + c.C_2 / (k + 1), rel=1e-14)
        assert float(r["U_over_k"]) == pytest.approx(c.U / k, rel=1e-14)
    assert rows[-1]["infeasibility"] == ""
