"""
Utility functions for fbkws.
"""

import csv
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from pythonjsonlogger import jsonlogger
from rich.logging import RichHandler

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.10g"


def get_utc_now() -> datetime:
    """Get current UTC time with timezone information."""
    return datetime.now(timezone.utc)


def format_timestamp() -> str:
    """Format current UTC time as ISO 8601 string."""
    return get_utc_now().isoformat()


def setup_logging(level: Optional[str] = None, json_format: bool = False) -> None:
    """
    Configure the root logger once per process.

    Args:
        level (str, optional): Log level name. The LOG_LEVEL environment
                               variable wins when set.
        json_format (bool): Emit one JSON object per record instead of
                            rich console output.
    """
    resolved = os.environ.get("LOG_LEVEL", level or "INFO").upper()
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)

    handler: logging.Handler
    if json_format:
        handler = logging.StreamHandler()
        handler.setFormatter(
            jsonlogger.JsonFormatter("%(asctime)s %(name)s %(levelname)s %(message)s")
        )
    else:
        handler = RichHandler(rich_tracebacks=True, show_path=False)
        handler.setFormatter(logging.Formatter("%(message)s"))

    root.addHandler(handler)
    root.setLevel(resolved)


def spawn_rngs(seed: int, count: int) -> List[np.random.Generator]:
    """
    Derive independent generators from one seed.

    Args:
        seed (int): Root seed of the hierarchy
        count (int): Number of child generators

    Returns:
        List[np.random.Generator]: Child generators, stable for a fixed seed
    """
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(child) for child in children]


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write rows to CSV with a fixed float format so reruns are byte-identical.

    Args:
        path (Path): Output file
        header (Sequence[str]): Column names
        rows (Iterable[Sequence[Any]]): Row values

    Returns:
        Path: The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(value) for value in row])
    return path


def read_csv(path: Path) -> List[Dict[str, str]]:
    """Read a CSV written by write_csv into a list of dicts."""
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_matrix_csv(path: Path, matrix: np.ndarray, prefix: str = "ch") -> Path:
    """Write a 2-D array with one column per channel."""
    matrix = np.asarray(matrix)
    header = [f"{prefix}{k + 1}" for k in range(matrix.shape[1])]
    return write_csv(path, header, matrix.tolist())


def read_matrix_csv(path: Path) -> np.ndarray:
    """Read a matrix written by write_matrix_csv."""
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _format_cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return CSV_FLOAT_FORMAT % float(value)
    return str(value)
