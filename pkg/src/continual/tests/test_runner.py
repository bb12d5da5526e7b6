"""Config validation, sweep execution, crash isolation and run comparison."""

import json
import shutil

import pandas as pd
import pytest

import run_experiment as cli
from continual.exceptions import ComparabilityError, ConfigValidationError, InputError, NumericError
from continual.schemas import StrategyTag
from continual.services import runner
from continual.services.runner import compare_runs, plan_cells, run_experiment, validate_config
from continual.services.strategy import ContinualLearner

TINY = """
name: tiny
dataset:
  kind: synthetic
  n_classes: 4
  samples_per_class: 30
  input_dim: 5
  seed: 1
stream:
  protocol: nc
  classes_per_experience: 2
network:
  hidden: [8, 8]
train:
  epochs: 1
  mb_size: 16
  lam: 1.0
  alpha: 1
  below_alpha_lr: 0.0
sweep:
  strategies: [naive, arr]
  rm_sizes: [20]
  seeds: [0, 1]
"""


@pytest.fixture
def tiny_config(tmp_path):
    config = validate_config(TINY)
    return config.model_copy(update={"output_dir": tmp_path / "runs"})


# --- validation ---
def test_omitted_arr_parameters_default_to_zero():
    config = validate_config("name: defaults\n")
    assert (config.train.rm_size, config.train.lam, config.train.alpha) == (0, 0.0, 0)


def test_non_positive_minibatch_is_rejected():
    with pytest.raises(ConfigValidationError) as info:
        validate_config("train:\n  mb_size: 0\n")
    assert any(error.startswith("train.mb_size") for error in info.value.errors)


def test_alpha_beyond_last_hidden_layer_is_rejected():
    with pytest.raises(ConfigValidationError) as info:
        validate_config("network:\n  hidden: [16, 16]\ntrain:\n  alpha: 2\n")
    assert any(error.startswith("train.alpha") for error in info.value.errors)


def test_every_violation_is_reported():
    text = "train:\n  mb_size: 0\n  lr: -1\nsweep:\n  alphas: [0, 7]\n"
    with pytest.raises(ConfigValidationError) as info:
        validate_config(text)
    errors = info.value.errors
    assert len(errors) >= 3
    assert any(error.startswith("sweep.alphas.1") for error in errors)


def test_strategy_overrides_are_validated():
    with pytest.raises(ConfigValidationError) as info:
        validate_config("strategy_overrides:\n  ewc:\n    lam: -1.0\n")
    assert any(error.startswith("strategy_overrides.ewc.lam") for error in info.value.errors)


def test_unknown_field_is_rejected():
    with pytest.raises(ConfigValidationError):
        validate_config("train:\n  learning_rate: 0.1\n")


def test_broken_yaml_is_a_validation_error():
    with pytest.raises(ConfigValidationError):
        validate_config("train: [unclosed\n")


def test_overrides_reach_cell_config():
    config = validate_config("strategy_overrides:\n  ewc:\n    lam: 50.0\n")
    assert config.cell_config(StrategyTag.EWC, 0, 0, 0).lam == 50.0
    assert config.cell_config(StrategyTag.NAIVE, 0, 0, 0).lam == 0.0


# --- planning and running ---
def test_cells_are_the_axis_product(tiny_config):
    cells = plan_cells(tiny_config)
    assert len(cells) == 4 == tiny_config.sweep.size(tiny_config.train)
    assert {cell.name for cell in cells} == {
        "naive_a1_rm20_s0",
        "naive_a1_rm20_s1",
        "arr_a1_rm20_s0",
        "arr_a1_rm20_s1",
    }


def test_upper_bound_adds_one_cell_per_seed(tiny_config):
    config = tiny_config.model_copy(update={"evaluate_upper_bound": True})
    names = [cell.name for cell in plan_cells(config)]
    assert names.count("cumulative_s0") == 1 and names.count("cumulative_s1") == 1


def test_run_writes_every_cell(tiny_config):
    results = run_experiment(tiny_config, workers=1)
    root = tiny_config.output_dir / "tiny"
    assert [r.status for r in results] == ["done"] * 4
    for result in results:
        cell_dir = root / result.cell.name
        assert (cell_dir / "DONE").exists()
        metrics = pd.read_csv(cell_dir / "metrics.csv")
        assert sorted(metrics["experience"].unique()) == [1, 2]
        summary = json.loads((cell_dir / "summary.json").read_text())
        assert summary["seed"] == result.cell.seed
        assert summary["train"]["strategy"] == result.cell.strategy
        assert json.loads((cell_dir / "stream.json").read_text())["n_experiences"] == 2
    assert (root / "comparison.csv").exists()
    assert (root / "comparison.txt").exists()


def test_rerun_is_identical_apart_from_wall_time(tiny_config, tmp_path):
    run_experiment(tiny_config, output_dir=tmp_path / "a", workers=1)
    run_experiment(tiny_config, output_dir=tmp_path / "b", workers=1)
    for name in ("naive_a1_rm20_s0", "arr_a1_rm20_s1"):
        a = pd.read_csv(tmp_path / "a" / "tiny" / name / "metrics.csv")
        b = pd.read_csv(tmp_path / "b" / "tiny" / name / "metrics.csv")
        pd.testing.assert_frame_equal(a[a["metric"] != "wall_time"], b[b["metric"] != "wall_time"])


def test_seed_override_runs_one_seed(tiny_config):
    results = run_experiment(tiny_config, workers=1, seed_override=5)
    assert {r.cell.seed for r in results} == {5}
    assert len(results) == 2


def test_cumulative_cell_reports_one_record(tiny_config):
    config = tiny_config.model_copy(update={"evaluate_upper_bound": True})
    run_experiment(config, workers=1, seed_override=0)
    summary = json.loads((config.output_dir / "tiny" / "cumulative_s0" / "summary.json").read_text())
    assert summary["experiences"] == 1
    assert summary["final_accuracy_fixed"] == summary["final_accuracy_seen"]


class FlakyLearner(ContinualLearner):
    """Blows up on the second experience of naive cells."""

    def learn(self, x_train, y_train, classes=None):
        if self.config.strategy == StrategyTag.NAIVE and self.experiences_seen == 1:
            raise NumericError("Non-finite gradient at layer 0 weight(0, 0)")
        return super().learn(x_train, y_train, classes)


def test_failed_cell_keeps_partial_results(tiny_config, monkeypatch):
    monkeypatch.setattr(runner, "ContinualLearner", FlakyLearner)
    results = run_experiment(tiny_config, workers=1)
    status = {r.cell.name: r.status for r in results}
    assert status["naive_a1_rm20_s0"] == "failed"
    assert status["arr_a1_rm20_s0"] == "done"

    failed_dir = tiny_config.output_dir / "tiny" / "naive_a1_rm20_s0"
    assert "NumericError" in (failed_dir / "FAILED").read_text()
    assert not (failed_dir / "DONE").exists()
    partial = pd.read_csv(failed_dir / "metrics.csv")
    assert partial["experience"].unique().tolist() == [1]

    table = pd.read_csv(tiny_config.output_dir / "tiny" / "comparison.csv")
    assert table["strategy"].tolist() == ["arr"]


# --- comparison ---
def fake_cell(root, name, strategy, seed, fixed, seen, key=None):
    cell_dir = root / name
    cell_dir.mkdir(parents=True)
    summary = {
        "cell": name,
        "strategy": strategy,
        "alpha": 0,
        "rm_size": 0,
        "seed": seed,
        "final_accuracy_fixed": fixed,
        "final_accuracy_seen": seen,
        "comparability_key": key or {"dataset": {"seed": 0}, "stream": {"protocol": "nc"}, "network": {}},
    }
    (cell_dir / "summary.json").write_text(json.dumps(summary))
    (cell_dir / "DONE").touch()
    return cell_dir


def test_duplicated_cells_have_zero_spread(tmp_path):
    original = fake_cell(tmp_path, "arr_a0_rm0_s0", "arr", 0, 0.7, 0.8)
    shutil.copytree(original, tmp_path / "arr_a0_rm0_s0_copy")
    table = compare_runs(tmp_path)
    assert len(table) == 1
    assert table.loc[0, "accuracy_fixed_mean"] == pytest.approx(0.7)
    assert table.loc[0, "accuracy_fixed_std"] == 0.0
    assert table.loc[0, "n_seeds"] == 2


def test_ranking_is_descending_with_both_protocols(tmp_path):
    fake_cell(tmp_path, "naive_s0", "naive", 0, 0.2, 0.5)
    fake_cell(tmp_path, "naive_s1", "naive", 1, 0.3, 0.6)
    fake_cell(tmp_path, "arr_s0", "arr", 0, 0.6, 0.7)
    fake_cell(tmp_path, "arr_s1", "arr", 1, 0.8, 0.9)
    table = compare_runs(tmp_path)
    assert table["strategy"].tolist() == ["arr", "naive"]
    assert table.loc[0, "accuracy_fixed_std"] == pytest.approx(0.1)
    assert table["rank_fixed"].tolist() == table["rank_seen"].tolist() == [1, 2]
    assert "accuracy_seen_mean" in (tmp_path / "comparison.txt").read_text()


def test_mismatched_streams_cannot_be_compared(tmp_path):
    fake_cell(tmp_path, "a", "arr", 0, 0.5, 0.5)
    fake_cell(tmp_path, "b", "arr", 1, 0.5, 0.5, key={"dataset": {"seed": 0}, "stream": {"protocol": "repetition"}, "network": {}})
    with pytest.raises(ComparabilityError):
        compare_runs(tmp_path)


def test_comparison_needs_two_cells(tmp_path):
    fake_cell(tmp_path, "a", "arr", 0, 0.5, 0.5)
    with pytest.raises(InputError):
        compare_runs(tmp_path)


# --- CLI ---
def test_cli_validate_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.yaml"
    good.write_text(TINY)
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  mb_size: 0\n  alpha: 9\n")
    assert cli.main(["validate", "--config", str(good)]) == 0
    assert cli.main(["validate", "--config", str(bad)]) == 1
    assert "train.mb_size" in capsys.readouterr().out


def test_cli_runtime_failure_exit_code(tmp_path):
    assert cli.main(["compare", "--output-dir", str(tmp_path)]) == 2
    assert cli.main(["validate", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_cli_run_and_compare(tmp_path):
    config = tmp_path / "tiny.yaml"
    config.write_text(TINY)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(config), "--output-dir", str(out), "--seed", "0"]) == 0
    assert cli.main(["compare", "--output-dir", str(out / "tiny")]) == 0
