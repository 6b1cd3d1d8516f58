"""
Plot emission for experiment outputs.

Every figure has a CSV twin with exactly the plotted numbers. The CSVs are
always written; PNGs only when matplotlib is importable.
"""

import logging
from pathlib import Path
from typing import Any, List, Optional

import numpy as np

from .utils import read_csv, read_matrix_csv, write_csv, write_matrix_csv

logger = logging.getLogger(__name__)

PARAMETER_COLUMNS = ("a", "f_hz", "erb_hz")


def _pyplot() -> Optional[Any]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.info("matplotlib not installed; writing CSV files only")
        return None
    return plt


def _save(plt: Any, fig: Any, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)
    return path


def _resolve_dir(source: Path) -> Path:
    source = Path(source)
    return source.parent if source.is_file() else source


def plot_filterbank(
    learned: np.ndarray,
    out_dir: Path,
    stem: str = "filterbank",
    reference: Optional[np.ndarray] = None,
) -> List[Path]:
    """Heat map and per-channel response lines of an F×K filterbank."""
    out_dir = Path(out_dir)
    written = [write_matrix_csv(out_dir / f"{stem}_plot.csv", learned)]
    plt = _pyplot()
    if plt is None:
        return written

    n_panels = 2 if reference is not None else 1
    fig, axes = plt.subplots(2, n_panels, figsize=(6 * n_panels, 8), squeeze=False)
    panels = [("learned", learned)] + ([("reference", reference)] if reference is not None else [])
    for col, (title, weights) in enumerate(panels):
        heat = axes[0][col].imshow(weights, aspect="auto", origin="lower", cmap="viridis")
        axes[0][col].set_title(f"{title} filterbank")
        axes[0][col].set_xlabel("channel k")
        axes[0][col].set_ylabel("frequency bin")
        fig.colorbar(heat, ax=axes[0][col])
        axes[1][col].plot(weights)
        axes[1][col].set_xlabel("frequency bin")
        axes[1][col].set_ylabel("weight")
    written.append(_save(plt, fig, out_dir / f"{stem}.png"))
    return written


def plot_gammachirp_parameters(
    means_csv: Path,
    out_dir: Path,
    stem: str = "gammachirp",
    trial_csvs: Optional[List[Path]] = None,
) -> List[Path]:
    """Gains, center frequencies and ERBs against channel index."""
    rows = read_csv(means_csv)
    channels = [int(r["channel"]) for r in rows]
    table = {c: [float(r[c]) for r in rows] for c in PARAMETER_COLUMNS if rows and c in rows[0]}
    out_dir = Path(out_dir)
    written = [
        write_csv(
            out_dir / f"{stem}_parameters_plot.csv",
            ["channel"] + list(table),
            [[k] + [table[c][i] for c in table] for i, k in enumerate(channels)],
        )
    ]
    plt = _pyplot()
    if plt is None or not table:
        return written

    fig, axes = plt.subplots(1, len(table), figsize=(5 * len(table), 4), squeeze=False)
    for ax, column in zip(axes[0], table):
        for trial in trial_csvs or []:
            trial_rows = read_csv(trial)
            ax.scatter(
                [int(r["channel"]) for r in trial_rows],
                [float(r[column]) for r in trial_rows],
                s=6,
                alpha=0.3,
                color="gray",
            )
        ax.plot(channels, table[column], color="C0")
        ax.set_xlabel("channel k")
        ax.set_ylabel(column)
        ax.grid(True)
    written.append(_save(plt, fig, out_dir / f"{stem}_parameters.png"))
    return written


def plot_removal(removal_csv: Path, out_dir: Path) -> List[Path]:
    """Mean accuracy with CI bars per removed channel range."""
    rows = read_csv(removal_csv)
    out_dir = Path(out_dir)
    written = [
        write_csv(
            out_dir / "removal_plot.csv",
            ["range", "f_low", "f_high", "mean", "ci95"],
            [[r["range"], r["f_low"], r["f_high"], float(r["mean"]), r["ci95"]] for r in rows],
        )
    ]
    plt = _pyplot()
    if plt is None or not rows:
        return written

    means = [100.0 * float(r["mean"]) for r in rows]
    errors = [100.0 * float(r["ci95"]) if r["ci95"] else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, len(rows) * 0.8), 4))
    ax.errorbar(range(len(rows)), means, yerr=errors, fmt="o-", capsize=3)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([r["range"] for r in rows], rotation=45)
    ax.set_xlabel("removed channels")
    ax.set_ylabel("test accuracy (%)")
    ax.grid(True)
    written.append(_save(plt, fig, out_dir / "removal.png"))
    return written


def plot_accuracies(trials_csv: Path, out_dir: Path, title: str = "") -> List[Path]:
    """Per-seed test accuracies."""
    rows = read_csv(trials_csv)
    out_dir = Path(out_dir)
    written = [
        write_csv(
            out_dir / "accuracy_plot.csv",
            ["seed", "test_accuracy"],
            [[int(r["seed"]), float(r["test_accuracy"])] for r in rows],
        )
    ]
    plt = _pyplot()
    if plt is None or not rows:
        return written

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([r["seed"] for r in rows], [100.0 * float(r["test_accuracy"]) for r in rows])
    ax.set_xlabel("seed")
    ax.set_ylabel("test accuracy (%)")
    if title:
        ax.set_title(title)
    written.append(_save(plt, fig, out_dir / "accuracy.png"))
    return written


def emit_plots(source: Path, out_dir: Optional[Path] = None) -> List[Path]:
    """
    Emit every plot the files in an experiment directory support.

    Args:
        source (Path): Experiment directory or its report.yaml
        out_dir (Path, optional): Destination, source/plots when omitted

    Returns:
        List[Path]: Files written
    """
    report_dir = _resolve_dir(source)
    out_dir = Path(out_dir) if out_dir is not None else report_dir / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []

    if (report_dir / "trials.csv").exists():
        written += plot_accuracies(report_dir / "trials.csv", out_dir, report_dir.name)

    reference_path = report_dir / "reference_filterbank.csv"
    reference = read_matrix_csv(reference_path) if reference_path.exists() else None
    if reference is not None:
        written.append(write_matrix_csv(out_dir / "reference_filterbank_plot.csv", reference))
    for learned in sorted(report_dir.glob("learned_*filterbank.csv")):
        stem = learned.stem.replace("learned_", "", 1)
        written += plot_filterbank(read_matrix_csv(learned), out_dir, stem, reference)

    for means in sorted(report_dir.glob("learned_*gammachirp.csv")):
        stem = means.stem.replace("learned_", "", 1)
        trial_name = f"{stem}.csv"
        trials = sorted(report_dir.glob(f"seed_*/{trial_name}"))
        written += plot_gammachirp_parameters(means, out_dir, stem, trials)

    if (report_dir / "removal.csv").exists():
        written += plot_removal(report_dir / "removal.csv", out_dir)

    if not written:
        logger.warning(f"No plottable files found in {report_dir}")
    else:
        logger.info(f"Wrote {len(written)} plot files to {out_dir}")
    return written
