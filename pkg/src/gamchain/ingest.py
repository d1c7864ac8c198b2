"""CSV ingestion of price/volume bars and of plain return series.

Two layouts are understood:

* bars: header ``timestamp,close,volume`` (epoch milliseconds, price, volume)
* returns: header ``timestamp,return``, as written by the simulator

Zero-volume bars are dropped before differencing, so a return that spans a
removed bar is computed between the surviving neighbours.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .model import ReturnSeries

BAR_HEADER = ("timestamp", "close", "volume")
RETURN_HEADER = ("timestamp", "return")
MIN_BARS = 3


@dataclass(frozen=True)
class BarRecord:
    timestamp: int
    close: float
    volume: float

    def __post_init__(self):
        if not (math.isfinite(self.close) and self.close > 0.0):
            raise InputError(f"close must be positive, got {self.close!r}")
        if not (math.isfinite(self.volume) and self.volume >= 0.0):
            raise InputError(f"volume must be non-negative, got {self.volume!r}")


def _read_rows(path: str | Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not valid UTF-8 ({exc})") from None
    # newline="" lets csv handle both LF and CRLF
    rows = [(i, r) for i, r in enumerate(csv.reader(io.StringIO(text, newline="")), start=1)
            if any(cell.strip() for cell in r)]
    if not rows:
        raise InputError(f"{path}: file is empty")
    header = [c.strip().lower() for c in rows[0][1]]
    return header, rows[1:]


def _parse_timestamp(cell: str, path, row: int) -> int:
    try:
        value = float(cell)
    except ValueError:
        raise InputError(f"{path}: row {row}: cannot parse timestamp {cell!r}") from None
    if not math.isfinite(value) or value != int(value):
        raise InputError(f"{path}: row {row}: timestamp must be an integer, got {cell!r}")
    return int(value)


def _parse_float(cell: str, name: str, path, row: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise InputError(f"{path}: row {row}: cannot parse {name} {cell!r}") from None
    if not math.isfinite(value):
        raise InputError(f"{path}: row {row}: {name} must be finite, got {cell!r}")
    return value


def _check_increasing(stamps: list[int], rows: list[int], path) -> None:
    for k in range(1, len(stamps)):
        if stamps[k] == stamps[k - 1]:
            raise InputError(f"{path}: row {rows[k]}: duplicate timestamp {stamps[k]}")
        if stamps[k] < stamps[k - 1]:
            raise InputError(f"{path}: row {rows[k]}: timestamps are not increasing")


def load_bars(path: str | Path, format: str = "csv") -> list[BarRecord]:
    """Read and validate a ``timestamp,close,volume`` file."""
    if format != "csv":
        raise InputError(f"unsupported format {format!r}; only 'csv' is available")
    header, rows = _read_rows(path)
    if tuple(header) != BAR_HEADER:
        raise InputError(f"{path}: row 1: expected header {','.join(BAR_HEADER)}, got {','.join(header)}")
    if not rows:
        raise InputError(f"{path}: no data rows")
    bars = []
    for row, cells in rows:
        if len(cells) != 3:
            raise InputError(f"{path}: row {row}: expected 3 fields, got {len(cells)}")
        ts = _parse_timestamp(cells[0].strip(), path, row)
        close = _parse_float(cells[1].strip(), "close", path, row)
        volume = _parse_float(cells[2].strip(), "volume", path, row)
        if close <= 0.0:
            raise InputError(f"{path}: row {row}: close must be positive, got {close}")
        if volume < 0.0:
            raise InputError(f"{path}: row {row}: volume must be non-negative, got {volume}")
        bars.append(BarRecord(ts, close, volume))
    _check_increasing([b.timestamp for b in bars], [r for r, _ in rows], path)
    return bars


def log_returns(bars: list[BarRecord]) -> np.ndarray:
    """Log returns over the bars with non-zero volume, in order.

    No minimum length is imposed; :func:`to_returns` adds the length check.
    """
    closes = np.array([b.close for b in bars if b.volume > 0.0], dtype=float)
    if closes.size < 2:
        return np.empty(0)
    return np.diff(np.log(closes))


def to_returns(bars: list[BarRecord], instrument_id: str = "series", period: str = "") -> ReturnSeries:
    """Drop zero-volume bars, then difference log closes."""
    kept = sum(1 for b in bars if b.volume > 0.0)
    if kept < MIN_BARS:
        raise InputError(f"need at least {MIN_BARS} bars with non-zero volume, got {kept}")
    r = log_returns(bars)
    if not np.all(np.isfinite(r)):
        raise InputError("non-finite return produced")
    return ReturnSeries(r, instrument_id, period)


def load_returns(path: str | Path, instrument_id: str | None = None) -> ReturnSeries:
    """Read a ``timestamp,return`` file."""
    header, rows = _read_rows(path)
    if tuple(header) != RETURN_HEADER:
        raise InputError(f"{path}: row 1: expected header {','.join(RETURN_HEADER)}, got {','.join(header)}")
    stamps, values = [], []
    for row, cells in rows:
        if len(cells) != 2:
            raise InputError(f"{path}: row {row}: expected 2 fields, got {len(cells)}")
        stamps.append(_parse_timestamp(cells[0].strip(), path, row))
        values.append(_parse_float(cells[1].strip(), "return", path, row))
    _check_increasing(stamps, [r for r, _ in rows], path)
    if len(values) < 2:
        raise InputError(f"{path}: need at least 2 returns, got {len(values)}")
    return ReturnSeries(np.array(values), instrument_id or Path(path).stem, "")


def load_series(path: str | Path, instrument_id: str | None = None) -> ReturnSeries:
    """Load either layout, chosen by the header row."""
    header, _ = _read_rows(path)
    name = instrument_id or Path(path).stem
    if tuple(header) == BAR_HEADER:
        return to_returns(load_bars(path), name)
    if tuple(header) == RETURN_HEADER:
        return load_returns(path, name)
    raise InputError(f"{path}: row 1: unrecognised header {','.join(header)}; expected "
                     f"{','.join(BAR_HEADER)} or {','.join(RETURN_HEADER)}")


def write_returns_csv(series: ReturnSeries, path: str | Path) -> Path:
    """Write ``timestamp,return`` rows with the step index as timestamp."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RETURN_HEADER)
        for i, r in enumerate(series.returns):
            w.writerow((i, repr(float(r))))
    return path


def write_bars_csv(bars: list[BarRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BAR_HEADER)
        for b in bars:
            w.writerow((b.timestamp, repr(b.close), repr(b.volume)))
    return path
