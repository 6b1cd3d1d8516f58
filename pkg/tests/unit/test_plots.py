from pathlib import Path

import numpy as np
import pytest
from pytest_mock import MockerFixture

from fbkws.experiments import ExperimentReport
from fbkws.plots import emit_plots, plot_filterbank, plot_gammachirp_parameters, plot_removal
from fbkws.utils import read_csv, read_matrix_csv, write_csv, write_matrix_csv


@pytest.fixture
def report_dir(tmp_path: Path, rng: np.random.Generator) -> Path:
    out = tmp_path / "GC_t_Ic-Mel"
    ExperimentReport(
        "GC[t]_Ic-Mel", "single", "small", [0, 1], [0.8, 0.9], 0.85, 0.6353
    ).save(out)
    reference = np.abs(rng.standard_normal((241, 40)))
    write_matrix_csv(out / "reference_filterbank.csv", reference)
    write_matrix_csv(out / "learned_filterbank.csv", reference * 1.1)
    header = ["channel", "a", "f_hz", "erb_hz"]
    rows = [[k + 1, 1.0, 100.0 * (k + 1), 24.7 + 10.8 * (k + 1)] for k in range(40)]
    write_csv(out / "learned_gammachirp.csv", header, rows)
    for seed in (0, 1):
        write_csv(out / f"seed_{seed:04d}" / "gammachirp.csv", header, rows)
    write_csv(
        out / "removal.csv",
        ["range", "first", "last", "f_low", "f_high", "mean", "ci95", "repetitions"],
        [["none", 0, 0, "", "", 0.9, 0.01, 2], ["20:26", 20, 26, 1626.0, 2564.0, 0.7, "", 1]],
    )
    return out


def test_filterbank_csv_holds_plotted_matrix(
    mocker: MockerFixture, tmp_path: Path, rng: np.random.Generator
) -> None:
    mocker.patch("fbkws.plots._pyplot", return_value=None)
    learned = rng.uniform(0.0, 1.0, (241, 40))

    written = plot_filterbank(learned, tmp_path)

    assert [p.name for p in written] == ["filterbank_plot.csv"]
    np.testing.assert_allclose(read_matrix_csv(written[0]), learned, rtol=1e-9)


def test_gammachirp_parameter_csv_has_one_row_per_channel(
    mocker: MockerFixture, report_dir: Path, tmp_path: Path
) -> None:
    mocker.patch("fbkws.plots._pyplot", return_value=None)

    written = plot_gammachirp_parameters(report_dir / "learned_gammachirp.csv", tmp_path)

    rows = read_csv(written[0])
    assert len(rows) == 40
    assert list(rows[0]) == ["channel", "a", "f_hz", "erb_hz"]
    assert float(rows[9]["f_hz"]) == pytest.approx(1000.0)


def test_removal_csv_keeps_undefined_intervals(
    mocker: MockerFixture, report_dir: Path, tmp_path: Path
) -> None:
    mocker.patch("fbkws.plots._pyplot", return_value=None)

    rows = read_csv(plot_removal(report_dir / "removal.csv", tmp_path)[0])

    assert [r["range"] for r in rows] == ["none", "20:26"]
    assert rows[1]["ci95"] == ""


def test_emit_plots_reruns_are_byte_identical(
    mocker: MockerFixture, report_dir: Path, tmp_path: Path
) -> None:
    # Setup
    mocker.patch("fbkws.plots._pyplot", return_value=None)

    # Execute
    first = emit_plots(report_dir / "report.yaml", tmp_path / "a")
    second = emit_plots(report_dir, tmp_path / "b")

    # Assert
    assert sorted(p.name for p in first) == [
        "accuracy_plot.csv",
        "filterbank_plot.csv",
        "gammachirp_parameters_plot.csv",
        "reference_filterbank_plot.csv",
        "removal_plot.csv",
    ]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()


def test_emit_plots_defaults_to_plots_subdir(mocker: MockerFixture, report_dir: Path) -> None:
    mocker.patch("fbkws.plots._pyplot", return_value=None)
    written = emit_plots(report_dir)
    assert all(p.parent == report_dir / "plots" for p in written)


def test_emit_plots_on_empty_directory(tmp_path: Path) -> None:
    assert emit_plots(tmp_path) == []


def test_png_figures_are_written(report_dir: Path, tmp_path: Path) -> None:
    pytest.importorskip("matplotlib")

    written = emit_plots(report_dir, tmp_path)

    names = {p.name for p in written}
    assert {"accuracy.png", "filterbank.png", "gammachirp_parameters.png", "removal.png"} <= names
    assert all(p.stat().st_size > 0 for p in written)
