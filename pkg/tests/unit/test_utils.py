import json
import logging
from datetime import timezone
from pathlib import Path
from typing import Iterator

import numpy as np
import pytest
from rich.logging import RichHandler

from fbkws.utils import (
    format_timestamp,
    get_utc_now,
    read_csv,
    read_matrix_csv,
    setup_logging,
    spawn_rngs,
    write_csv,
    write_matrix_csv,
)


@pytest.fixture
def restore_root_logger() -> Iterator[logging.Logger]:
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield root
    root.handlers[:] = handlers
    root.setLevel(level)


def test_utc_timestamps() -> None:
    assert get_utc_now().tzinfo == timezone.utc
    assert format_timestamp().endswith("+00:00")


def test_spawned_generators_are_stable_and_independent() -> None:
    first = [g.random() for g in spawn_rngs(3, 2)]
    again = [g.random() for g in spawn_rngs(3, 2)]
    assert first == again
    assert first[0] != first[1]
    assert [g.random() for g in spawn_rngs(4, 2)] != first


def test_csv_float_format_is_fixed(tmp_path: Path) -> None:
    rows = [[1, 0.1 + 0.2], [2, np.float32(2.5)]]
    path = write_csv(tmp_path / "out" / "t.csv", ["k", "value"], rows)
    assert path.read_text() == "k,value\n1,0.3\n2,2.5\n"
    assert read_csv(path) == [{"k": "1", "value": "0.3"}, {"k": "2", "value": "2.5"}]


def test_matrix_csv(tmp_path: Path) -> None:
    matrix = np.arange(6, dtype=np.float64).reshape(3, 2) / 7.0
    path = write_matrix_csv(tmp_path / "m.csv", matrix, prefix="pred")
    assert path.read_text().splitlines()[0] == "pred1,pred2"
    np.testing.assert_allclose(read_matrix_csv(path), matrix, rtol=1e-9)


def test_setup_logging_handlers(
    restore_root_logger: logging.Logger,
    monkeypatch: pytest.MonkeyPatch,
    capsys: pytest.CaptureFixture[str],
) -> None:
    monkeypatch.delenv("LOG_LEVEL", raising=False)
    setup_logging("warning")
    assert restore_root_logger.level == logging.WARNING
    assert isinstance(restore_root_logger.handlers[0], RichHandler)

    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    setup_logging("INFO", json_format=True)
    assert restore_root_logger.level == logging.DEBUG
    assert len(restore_root_logger.handlers) == 1
    logging.getLogger("fbkws.test").info("trial done", extra={"seed": 3})
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["message"] == "trial done"
    assert record["seed"] == 3
