"""JSON encoder and JSON-lines helpers for iplearn documents."""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Any

import numpy as np

from ._errors import DatasetParseError


def jsonable(obj: Any) -> Any:
    """Recursively convert numpy types so ``json.dumps`` succeeds."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    return obj


class ArrayEncoder(json.JSONEncoder):
    """JSONEncoder that serializes numpy arrays and scalars as plain JSON.

    Floats are written with Python's shortest round-trip representation
    (never more than 17 significant digits), so ``json.loads`` recovers the
    exact double.  Use with ``json.dumps(obj, cls=ArrayEncoder)``.
    """

    def default(self, obj: Any) -> Any:
        """Serialize numpy values; delegate everything else.

        Parameters
        ----------
        obj : Any
            The object the JSON encoder cannot serialize natively.

        Returns
        -------
        Any
            A nested list for arrays, a Python scalar for numpy scalars.
            Other types go to :meth:`json.JSONEncoder.default`, which raises
            ``TypeError``.
        """
        if isinstance(obj, (np.ndarray, np.generic)):
            return jsonable(obj)
        return super().default(obj)


def dumps(obj: Any, *, indent: int | None = None) -> str:
    """Serialize *obj* to a JSON string, refusing NaN and infinity."""
    return json.dumps(
        obj,
        cls=ArrayEncoder,
        allow_nan=False,
        indent=indent,
        separators=(",", ":") if indent is None else None,
    )


def write_json(path: str | Path, obj: Any) -> None:
    """Write *obj* as an indented JSON document."""
    Path(path).write_text(dumps(obj, indent=2) + "\n")


def read_json(path: str | Path) -> Any:
    """Read a JSON document."""
    return json.loads(Path(path).read_text())


def write_json_lines(path: str | Path, records: Iterable[dict[str, Any]]) -> int:
    """Write one compact JSON record per line.

    Returns
    -------
    int
        Number of records written.  An empty iterable yields an empty file.
    """
    n = 0
    with Path(path).open("w") as fh:
        for record in records:
            fh.write(dumps(record))
            fh.write("\n")
            n += 1
    return n


def iter_json_lines(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield ``(line_number, record)`` for every non-blank line.

    Raises
    ------
    DatasetParseError
        If a line is not valid JSON or not a JSON object.
    """
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(record, dict):
                raise DatasetParseError(
                    f"expected a JSON object, got {type(record).__name__}", lineno
                )
            yield lineno, record
