from pathlib import Path
from typing import Any

import pytest
from click.testing import CliRunner
from pytest_mock import MockerFixture

from fbkws.autodiff import GradCheckEntry, GradCheckReport
from fbkws.cli import cli
from fbkws.config import CONFIG_ENV_VAR
from fbkws.experiments import (
    ChannelRange,
    ExperimentReport,
    ExperimentSpec,
    RemovalReport,
    RemovalRow,
)


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def corpus(tmp_path: Path) -> Path:
    root = tmp_path / "corpus"
    root.mkdir()
    return root


@pytest.fixture
def prepare(mocker: MockerFixture) -> Any:
    return mocker.patch("fbkws.cli.prepare_data", return_value=mocker.sentinel.data)


def _report(name: str, accuracies: Any) -> ExperimentReport:
    mean = sum(accuracies) / len(accuracies)
    return ExperimentReport(name, "single", "small", [0, 1], accuracies, mean, 0.01)


def test_run_builds_specs_from_options(
    runner: CliRunner, corpus: Path, prepare: Any, mocker: MockerFixture, tmp_path: Path
) -> None:
    # Setup
    run_experiment = mocker.patch(
        "fbkws.cli.run_experiment",
        side_effect=[_report("FfBt_26", [0.90, 0.91]), _report("FtBt_26", [0.80, 0.81])],
    )
    out = tmp_path / "results"

    # Execute
    result = runner.invoke(
        cli,
        ["run", "FfBt_26", "FtBt_26", "--data", str(corpus), "--reps", "2", "--preset", "small",
         "--seed", "7", "--out", str(out)],
    )

    # Assert
    assert result.exit_code == 0, result.output
    specs = [call.args[0] for call in run_experiment.call_args_list]
    assert [s.name for s in specs] == ["FfBt_26", "FtBt_26"]
    assert all(isinstance(s, ExperimentSpec) for s in specs)
    assert specs[0].seeds == [7, 8]
    assert specs[0].preset == "small"
    assert run_experiment.call_args_list[1].args[2] == out / "FtBt_26"
    assert prepare.call_args.args[2] is None
    assert "FfBt_26" in result.output
    assert "disjoint" in result.output


def test_run_uses_config_defaults(
    runner: CliRunner, corpus: Path, prepare: Any, mocker: MockerFixture
) -> None:
    run_experiment = mocker.patch(
        "fbkws.cli.run_experiment", return_value=_report("FfBt_26", [0.9, 0.9])
    )

    result = runner.invoke(cli, ["run", "FfBt_26", "--data", str(corpus), "--subset", "3kw"])

    assert result.exit_code == 0, result.output
    spec = run_experiment.call_args.args[0]
    assert (spec.preset, spec.repetitions) == ("large", 10)
    assert prepare.call_args.args[2].n_keywords == 3


def test_bad_name_exits_before_loading(
    runner: CliRunner, corpus: Path, prepare: Any, mocker: MockerFixture
) -> None:
    run_experiment = mocker.patch("fbkws.cli.run_experiment")

    result = runner.invoke(cli, ["run", "FfBx_26", "--data", str(corpus)])

    assert result.exit_code == 1
    assert "Error" in result.output
    prepare.assert_not_called()
    run_experiment.assert_not_called()


def test_fuse_passes_mode(
    runner: CliRunner, corpus: Path, prepare: Any, mocker: MockerFixture
) -> None:
    run_fusion = mocker.patch(
        "fbkws.cli.run_fusion", return_value=_report("Fusion(FfBt_1 | FtBt_1)", [0.9, 0.9])
    )

    result = runner.invoke(
        cli, ["fuse", "FfBt_1", "FtBt_1", "--mode", "concat", "--data", str(corpus)]
    )

    assert result.exit_code == 0, result.output
    assert run_fusion.call_args.args[5] == "concat"
    assert [s.name for s in run_fusion.call_args.args[:2]] == ["FfBt_1", "FtBt_1"]


def test_removal_table(
    runner: CliRunner, corpus: Path, prepare: Any, mocker: MockerFixture
) -> None:
    # Setup
    rows = [
        RemovalRow(ChannelRange(), None, None, _report("FfBt_1", [0.9, 0.9])),
        RemovalRow(ChannelRange(20, 26), 1626.0, 2564.0, _report("FfBt_1", [0.7, 0.7])),
    ]
    run_filter_removal = mocker.patch(
        "fbkws.cli.run_filter_removal", return_value=RemovalReport("FfBt_1", rows)
    )

    # Execute
    result = runner.invoke(
        cli, ["removal", "FfBt_1", "--ranges", "none,20:26", "--data", str(corpus)]
    )

    # Assert
    assert result.exit_code == 0, result.output
    assert run_filter_removal.call_args.args[1] == [ChannelRange(), ChannelRange(20, 26)]
    assert "20:26" in result.output
    assert "1626" in result.output


def test_removal_rejects_bad_range(runner: CliRunner, corpus: Path, prepare: Any) -> None:
    result = runner.invoke(
        cli, ["removal", "FfBt_1", "--ranges", "26:20", "--data", str(corpus)]
    )
    assert result.exit_code == 1
    prepare.assert_not_called()


def test_plot_lists_written_files(
    runner: CliRunner, mocker: MockerFixture, tmp_path: Path
) -> None:
    emit = mocker.patch("fbkws.cli.emit_plots", return_value=[tmp_path / "accuracy_plot.csv"])

    result = runner.invoke(cli, ["plot", str(tmp_path)])

    assert result.exit_code == 0, result.output
    emit.assert_called_once_with(tmp_path, None)
    assert "accuracy_plot.csv" in result.output


def test_gradcheck_failure_exits_nonzero(runner: CliRunner, mocker: MockerFixture) -> None:
    entry = GradCheckEntry("W", (20, 5), 1.0, 2.0, 0.5, "fail")
    mocker.patch(
        "fbkws.cli.gradient_fidelity",
        return_value=GradCheckReport((entry,), tolerance=1e-4, step=1e-4),
    )

    result = runner.invoke(cli, ["gradcheck", "--frontend", "fbmatrix"])

    assert result.exit_code == 1
    assert "Gradient check failed" in result.output


def test_gradcheck_both_front_ends(runner: CliRunner, mocker: MockerFixture) -> None:
    fidelity = mocker.patch(
        "fbkws.cli.gradient_fidelity",
        return_value=GradCheckReport((), tolerance=1e-4, step=1e-4),
    )

    result = runner.invoke(cli, ["gradcheck"])

    assert result.exit_code == 0, result.output
    assert [call.args[0] for call in fidelity.call_args_list] == ["fbmatrix", "gammachirp"]


def test_config_show_and_validate(runner: CliRunner, tmp_path: Path) -> None:
    shown = runner.invoke(cli, ["config", "show"])
    assert shown.exit_code == 0
    assert "built-in defaults" in shown.output

    assert runner.invoke(cli, ["config", "validate"]).exit_code == 0

    bad = tmp_path / "bad.yaml"
    bad.write_text("filterbank:\n  mel_scale: bark\n")
    result = runner.invoke(cli, ["--config", str(bad), "config", "validate"])
    assert result.exit_code == 1
    assert "filterbank.mel_scale" in result.output


def test_missing_config_file(runner: CliRunner, tmp_path: Path) -> None:
    result = runner.invoke(cli, ["--config", str(tmp_path / "absent.yaml"), "config", "show"])
    assert result.exit_code == 1
    assert "not found" in result.output
