import json
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from fscil_tricks.cli import main
from fscil_tricks.errors import EXIT_CONFIG


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "toy.yaml"
    path.write_text(
        yaml.safe_dump(
            {
                "dataset": {"noise": 0.18, "train_per_class": 24, "test_per_class": 8},
                "pretrain": {"epochs": 1, "lr": 0.05, "batch_size": 64},
                "base": {"epochs": 2, "lr": 0.05, "batch_size": 64},
                "incremental": {"epochs_per_session": 1},
                "subnet": {"steps": 4, "retain_fraction": 0.8, "lr": 0.1, "method": "score"},
            }
        )
    )
    return path


@pytest.fixture(scope="module")
def completed_run(config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "main"
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--config", str(config_file), "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


class TestRun:
    def test_writes_record_and_prints_sessions(self, completed_run):
        assert (completed_run / "record.json").is_file()
        record = json.loads((completed_run / "record.json").read_text())
        assert len(record["sessions"]) == 3

    def test_identical_seed_runs_write_byte_identical_records(self, config_file, completed_run, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main, ["run", "--config", str(config_file), "--out", str(tmp_path / "again")]
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "again" / "record.json").read_text() == (
            completed_run / "record.json"
        ).read_text()

    def test_unknown_toggle_exits_with_config_code_and_no_run_dir(self, config_file, tmp_path):
        runner = CliRunner()
        out = tmp_path / "never"
        result = runner.invoke(
            main,
            ["run", "--config", str(config_file), "--out", str(out),
             "--override", "toggles.bogus=true"],
        )
        assert result.exit_code == EXIT_CONFIG
        assert not out.exists()

    def test_seed_flag_overrides(self, config_file, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main,
            ["run", "--config", str(config_file), "--seed", "3", "--out", str(tmp_path / "s3")],
        )
        assert result.exit_code == 0, result.output
        record = json.loads((tmp_path / "s3" / "record.json").read_text())
        assert record["seed"] == 3


class TestReport:
    def test_single_run_report(self, completed_run, tmp_path):
        runner = CliRunner()
        out = tmp_path / "report"
        result = runner.invoke(main, ["report", str(completed_run), "--out", str(out)])
        assert result.exit_code == 0, result.output
        for name in (
            "accuracy_table.csv",
            "session_accuracy.png",
            "session_accuracy.csv",
            "cdf_inter.png",
            "cdf_intra.png",
            "separation.png",
        ):
            assert (out / name).is_file()
        assert "session_0" in result.output

    def test_two_run_report_has_delta(self, config_file, completed_run, tmp_path):
        runner = CliRunner()
        second = tmp_path / "second"
        assert (
            runner.invoke(
                main,
                ["run", "--config", str(config_file), "--seed", "1", "--out", str(second)],
            ).exit_code
            == 0
        )
        out = tmp_path / "report2"
        result = runner.invoke(
            main, ["report", str(completed_run), str(second), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        table = (out / "accuracy_table.csv").read_text().splitlines()
        assert "delta_vs_first" in table[0]
        first = json.loads((completed_run / "record.json").read_text())["final_accuracy"]
        other = json.loads((second / "record.json").read_text())["final_accuracy"]
        assert f"{other - first:+.4f}" in table[2]

    def test_empty_run_list_is_usage_error(self):
        result = CliRunner().invoke(main, ["report"])
        assert result.exit_code == 2

    def test_report_is_idempotent(self, completed_run, tmp_path):
        runner = CliRunner()
        out = tmp_path / "rep"
        runner.invoke(main, ["report", str(completed_run), "--out", str(out)])
        first = (out / "accuracy_table.csv").read_text()
        runner.invoke(main, ["report", str(completed_run), "--out", str(out)])
        assert (out / "accuracy_table.csv").read_text() == first


class TestSweep:
    def test_single_cell_grid_equals_plain_run(self, config_file, completed_run, tmp_path):
        runner = CliRunner()
        out = tmp_path / "sweep"
        result = runner.invoke(
            main,
            ["sweep", "--config", str(config_file), "--grid", "base.lr=0.05", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "sweep_summary.json").read_text())
        main_record = json.loads((completed_run / "record.json").read_text())
        assert summary[0]["final_accuracy"] == main_record["final_accuracy"]

    def test_unknown_grid_field_errors(self, config_file, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main,
            ["sweep", "--config", str(config_file), "--grid", "base.bogus=1,2",
             "--out", str(tmp_path / "x")],
        )
        assert result.exit_code == EXIT_CONFIG


class TestEval:
    def test_eval_reprints_final_session(self, completed_run):
        result = CliRunner().invoke(main, ["eval", str(completed_run)])
        assert result.exit_code == 0, result.output
        record = json.loads((completed_run / "record.json").read_text())
        assert f"{record['final_accuracy']:.4f}" in result.output
