"""Per-step training scalars and their CSV export."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._errors import ConfigurationError

METRIC_COLUMNS: tuple[str, ...] = (
    "step",
    "pref_loss",
    "reg_value",
    "value_loss",
    "mean_abs_implicit_reward",
    "max_abs_implicit_reward",
    "gt_return",
    "oracle_reward_gap",
)

Row = dict[str, "float | int | None"]


def _format(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return "" if math.isnan(value) else repr(value)


def _parse(text: str, column: str) -> float | int | None:
    if text == "":
        return None
    return int(text) if column == "step" else float(text)


@dataclass
class MetricsLog:
    """Ordered rows of named scalars keyed by a strictly increasing step.

    Missing values are stored as ``None`` and exported as blank CSV cells.
    """

    columns: tuple[str, ...] = METRIC_COLUMNS
    rows: list[Row] = field(default_factory=list)

    def append(self, step: int, **values: float | None) -> Row:
        """Add the row for *step*.

        Raises
        ------
        ConfigurationError
            If *step* does not exceed the previous one or an unknown column is given.
        """
        if self.rows and step <= self.rows[-1]["step"]:  # type: ignore[operator]
            raise ConfigurationError(
                f"metrics steps must increase strictly, got {step} after {self.rows[-1]['step']}"
            )
        unknown = set(values) - set(self.columns)
        if unknown:
            raise ConfigurationError(f"unknown metric columns {sorted(unknown)}")
        row: Row = {"step": int(step)}
        for column in self.columns[1:]:
            value = values.get(column)
            row[column] = None if value is None or math.isnan(value) else float(value)
        self.rows.append(row)
        return row

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[Row]:
        return iter(self.rows)

    @property
    def last(self) -> Row | None:
        return self.rows[-1] if self.rows else None

    def column(self, name: str) -> np.ndarray:
        """Values of one column, ``nan`` where missing."""
        if name not in self.columns:
            raise KeyError(name)
        return np.array(
            [np.nan if row[name] is None else row[name] for row in self.rows], dtype=np.float64
        )

    def to_csv_string(self, *, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment is not None:
            buf.write(f"# {header_comment}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_format(row[c]) for c in self.columns])
        return buf.getvalue()

    def to_csv(self, path: str | Path, *, header_comment: str | None = None) -> None:
        """Write the log; *header_comment* becomes a leading ``# ...`` line."""
        Path(path).write_text(self.to_csv_string(header_comment=header_comment))

    @classmethod
    def from_csv(cls, path: str | Path) -> MetricsLog:
        """Read a log written by :meth:`to_csv`, skipping ``#`` comment lines."""
        lines = [line for line in Path(path).read_text().splitlines() if not line.startswith("#")]
        reader = csv.reader(lines)
        header = tuple(next(reader))
        log = cls(columns=header)
        for cells in reader:
            row = {c: _parse(text, c) for c, text in zip(header, cells)}
            log.rows.append(row)
        return log
