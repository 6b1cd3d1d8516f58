"""
Command Line Interface for fbkws.

Runs named training regimes, fusion and filter-removal studies, emits
plots, checks gradients and shows the merged configuration.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Callable, List, NoReturn, Optional, Sequence

import click
import yaml
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from .config import FbkwsConfig
from .data import SubsetSpec
from .exceptions import FbkwsError
from .experiments import (
    ExperimentReport,
    ExperimentSpec,
    PreparedData,
    RemovalReport,
    compare_reports,
    experiment_dir,
    gradient_fidelity,
    parse_ranges,
    prepare_data,
    run_experiment,
    run_filter_removal,
    run_fusion,
)
from .plots import emit_plots
from .utils import setup_logging

logger = logging.getLogger(__name__)
console = Console()


def _fail(e: Exception) -> NoReturn:
    logger.debug("Command failed", exc_info=True)
    console.print(f"[red]Error:[/red] {str(e)}")
    sys.exit(1)


def _percent(value: Optional[float]) -> str:
    return "undefined" if value is None else f"{100.0 * value:.2f}"


def display_reports(
    reports: Sequence[ExperimentReport], title: str = "Test accuracy (%)"
) -> None:
    table = Table(title=title)
    table.add_column("Experiment", style="cyan")
    table.add_column("Reps", justify="right")
    table.add_column("Mean", justify="right", style="green")
    table.add_column("± CI95", justify="right")
    table.add_column("Per seed")
    for report in reports:
        table.add_row(
            report.name,
            str(report.repetitions),
            _percent(report.mean),
            _percent(report.ci95),
            ", ".join(f"{100.0 * a:.1f}" for a in report.accuracies),
        )
    console.print(table)


def display_verdicts(reports: Sequence[ExperimentReport]) -> None:
    if len(reports) < 2:
        return
    table = Table(title=f"CI overlap against {reports[0].name}")
    table.add_column("Experiment", style="cyan")
    table.add_column("Interval (%)")
    table.add_column("Verdict")
    for other in reports[1:]:
        verdict = compare_reports(reports[0], other)
        lo, hi = verdict.other_interval
        table.add_row(
            other.name,
            f"[{100.0 * lo:.2f}, {100.0 * hi:.2f}]",
            ("[yellow]" if verdict.overlap else "[magenta]") + verdict.verdict,
        )
    console.print(table)


def display_removal(removal: RemovalReport) -> None:
    table = Table(title=f"Filter removal: {removal.name}")
    table.add_column("Removed", style="cyan")
    table.add_column("Center frequencies (Hz)")
    table.add_column("Mean (%)", justify="right", style="green")
    table.add_column("± CI95", justify="right")
    for row in removal.rows:
        band = "-" if row.f_low is None else f"{row.f_low:.0f} – {row.f_high:.0f}"
        table.add_row(
            row.channels.label, band, _percent(row.report.mean), _percent(row.report.ci95)
        )
    console.print(table)


def data_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """Options shared by every command that trains."""
    options = [
        click.option(
            "--data",
            "data_root",
            required=True,
            type=click.Path(exists=True, file_okay=False, path_type=Path),
            help="Corpus root",
        ),
        click.option("--preset", default=None, help="Back-end preset (small, large)"),
        click.option("--reps", type=int, default=None, help="Repetitions per experiment"),
        click.option("--seed", type=int, default=None, help="Base seed"),
        click.option(
            "--subset", default=None, help='Desk-scale subset, e.g. "3kw+filler,cap=200/class"'
        ),
        click.option(
            "--out",
            "out_root",
            default="results",
            type=click.Path(file_okay=False, path_type=Path),
            help="Output root",
        ),
        click.option("--workers", type=int, default=None, help="Parallel trials"),
        click.option(
            "--split-manifest",
            type=click.Path(exists=True, dir_okay=False, path_type=Path),
            default=None,
            help="Reuse a split",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _prepare(
    config: FbkwsConfig,
    data_root: Path,
    subset: Optional[str],
    out_root: Path,
    split_manifest: Optional[Path],
) -> PreparedData:
    spec = SubsetSpec.parse(subset) if subset else None
    return prepare_data(data_root, config, spec, out_root, split_manifest)


def _spec(
    config: FbkwsConfig,
    name: str,
    preset: Optional[str],
    reps: Optional[int],
    seed: Optional[int],
) -> ExperimentSpec:
    return ExperimentSpec.from_name(
        name,
        preset=preset or config.get("experiments.preset"),
        repetitions=reps if reps is not None else int(config.get("experiments.repetitions")),
        base_seed=seed if seed is not None else int(config.get("experiments.base_seed")),
    )


@click.group()
@click.option("--config", "config_path", default=None, help="YAML configuration file")
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
@click.option("--json-logs", is_flag=True, help="One JSON object per log record")
@click.pass_context
def cli(
    ctx: click.Context, config_path: Optional[str], log_level: Optional[str], json_logs: bool
) -> None:
    """Learnable filterbank front-ends for keyword spotting."""
    try:
        config = FbkwsConfig(config_path=config_path)
    except (FbkwsError, OSError) as e:
        _fail(e)
    setup_logging(
        log_level or config.get("logging.level"), json_logs or bool(config.get("logging.json"))
    )
    ctx.obj = config


@cli.command()
@click.argument("names", nargs=-1, required=True)
@data_options
@click.pass_obj
def run(
    config: FbkwsConfig,
    names: Sequence[str],
    data_root: Path,
    preset: Optional[str],
    reps: Optional[int],
    seed: Optional[int],
    subset: Optional[str],
    out_root: Path,
    workers: Optional[int],
    split_manifest: Optional[Path],
) -> None:
    """Run one or more named regimes, e.g. "FfBt_26" "FtBt_26"."""
    try:
        specs = [_spec(config, name, preset, reps, seed) for name in names]
        data = _prepare(config, data_root, subset, out_root, split_manifest)
        reports: List[ExperimentReport] = []
        for spec in specs:
            reports.append(
                run_experiment(spec, data, experiment_dir(out_root, spec.name), config, workers)
            )
        display_reports(reports)
        display_verdicts(reports)
    except (FbkwsError, ValueError, OSError) as e:
        _fail(e)


@cli.command()
@click.argument("name_a")
@click.argument("name_b")
@click.option("--mode", type=click.Choice(["stack", "concat"]), default=None, help="Fusion layout")
@data_options
@click.pass_obj
def fuse(
    config: FbkwsConfig,
    name_a: str,
    name_b: str,
    mode: Optional[str],
    data_root: Path,
    preset: Optional[str],
    reps: Optional[int],
    seed: Optional[int],
    subset: Optional[str],
    out_root: Path,
    workers: Optional[int],
    split_manifest: Optional[Path],
) -> None:
    """Train one back-end on two fused front-ends."""
    try:
        spec_a = _spec(config, name_a, preset, reps, seed)
        spec_b = _spec(config, name_b, preset, reps, seed)
        data = _prepare(config, data_root, subset, out_root, split_manifest)
        out_dir = experiment_dir(out_root, f"fusion_{spec_a.name}__{spec_b.name}")
        report = run_fusion(spec_a, spec_b, data, out_dir, config, mode, workers)
        display_reports([report])
    except (FbkwsError, ValueError, OSError) as e:
        _fail(e)


@cli.command()
@click.argument("name")
@click.option("--ranges", required=True, help='Channel ranges, e.g. "none,20:26,1:40"')
@data_options
@click.pass_obj
def removal(
    config: FbkwsConfig,
    name: str,
    ranges: str,
    data_root: Path,
    preset: Optional[str],
    reps: Optional[int],
    seed: Optional[int],
    subset: Optional[str],
    out_root: Path,
    workers: Optional[int],
    split_manifest: Optional[Path],
) -> None:
    """Sweep removed filterbank channel ranges for a fixed front-end."""
    try:
        spec = _spec(config, name, preset, reps, seed)
        channel_ranges = parse_ranges(ranges)
        data = _prepare(config, data_root, subset, out_root, split_manifest)
        out_dir = experiment_dir(out_root, f"removal_{spec.name}")
        display_removal(run_filter_removal(spec, channel_ranges, data, out_dir, config, workers))
    except (FbkwsError, ValueError, OSError) as e:
        _fail(e)


@cli.command()
@click.argument("report", type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False, path_type=Path))
def plot(report: Path, out_dir: Optional[Path]) -> None:
    """Write plots and their CSVs for an experiment directory."""
    try:
        written = emit_plots(report, out_dir)
    except (FbkwsError, ValueError, OSError) as e:
        _fail(e)
    for path in written:
        console.print(f"[green]wrote[/green] {path}")


@cli.command()
@click.option(
    "--frontend", "kinds", type=click.Choice(["fbmatrix", "gammachirp", "both"]), default="both"
)
@click.option("--seed", type=int, default=0)
@click.option("--batch-size", type=int, default=4)
@click.option("--step", type=float, default=1e-4)
@click.option("--tolerance", type=float, default=1e-4)
@click.pass_obj
def gradcheck(
    config: FbkwsConfig, kinds: str, seed: int, batch_size: int, step: float, tolerance: float
) -> None:
    """Compare analytic and finite-difference gradients of the full loss."""
    selected = ["fbmatrix", "gammachirp"] if kinds == "both" else [kinds]
    ok = True
    for kind in selected:
        report = gradient_fidelity(
            kind,  # type: ignore[arg-type]
            config,
            seed=seed,
            batch_size=batch_size,
            step=step,
            tolerance=tolerance,
        )
        table = Table(title=f"Gradient check: {kind}")
        table.add_column("Parameter", style="cyan")
        table.add_column("Index")
        table.add_column("Analytic", justify="right")
        table.add_column("Numeric", justify="right")
        table.add_column("Rel. error", justify="right")
        table.add_column("Status")
        for entry in report.entries:
            colour = {"pass": "green", "fail": "red", "unreliable": "yellow"}[entry.status]
            table.add_row(
                entry.parameter,
                str(entry.index),
                f"{entry.analytic:.6e}",
                f"{entry.numeric:.6e}",
                f"{entry.relative_error:.2e}",
                f"[{colour}]{entry.status}[/{colour}]",
            )
        console.print(table)
        ok = ok and report.passed
    if not ok:
        console.print("[red]Gradient check failed[/red]")
        sys.exit(1)
    console.print("[green]All gradients within tolerance[/green]")


@cli.command(name="config")
@click.argument("action", type=click.Choice(["show", "validate"]))
@click.pass_obj
def config_command(config: FbkwsConfig, action: str) -> None:
    """Show or validate the merged configuration."""
    if action == "show":
        source = config.config_path or "built-in defaults"
        console.print(
            Panel(
                yaml.safe_dump(config.as_dict(), sort_keys=False),
                title=f"Configuration ({source})",
                border_style="blue",
            )
        )
        return
    problems = config.validate()
    if problems:
        for problem in problems:
            console.print(f"[red]✗[/red] {problem}")
        sys.exit(1)
    console.print("[green]Configuration is valid[/green]")


def main() -> None:
    cli(prog_name="fbkws")


if __name__ == "__main__":
    main()
