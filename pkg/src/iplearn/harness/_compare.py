"""Summaries across finished runs (needs the ``analysis`` extra)."""

from __future__ import annotations

import logging
from collections.abc import Iterable
from pathlib import Path

import pandas as pd

from .._json import read_json

logger = logging.getLogger(__name__)

GROUP_COLUMNS: list[str] = ["environment", "method", "n_pairs"]


def load_summaries(run_dirs: Iterable[str | Path]) -> tuple[pd.DataFrame, list[str]]:
    """One row per run with a ``summary.json``; the rest are returned as missing."""
    rows = []
    missing = []
    for run_dir in run_dirs:
        path = Path(run_dir) / "summary.json"
        if not path.is_file():
            missing.append(str(run_dir))
            continue
        rows.append({**read_json(path), "run_dir": str(run_dir)})
    return pd.DataFrame(rows), missing


def compare_runs(run_dirs: Iterable[str | Path], *, value: str = "best_return") -> pd.DataFrame:
    """Mean and population standard deviation of *value* per (environment, method, data scale).

    The default reports each run's best evaluation checkpoint (maximum of
    the learning curve), not its final step.  Runs without a summary are
    listed in ``result.attrs["missing"]`` and logged, never filled in.

    Returns
    -------
    pd.DataFrame
        Columns ``environment``, ``method``, ``n_pairs``, ``mean``, ``std``,
        ``n_runs`` and ``seeds``.
    """
    frame, missing = load_summaries(run_dirs)
    for run_dir in missing:
        logger.warning("run %s has no summary.json; left out of the comparison", run_dir)
    columns = [*GROUP_COLUMNS, "mean", "std", "n_runs", "seeds"]
    if frame.empty:
        result = pd.DataFrame(columns=columns)
    else:
        frame = frame.dropna(subset=[value])
        grouped = frame.groupby(GROUP_COLUMNS, sort=True)
        result = grouped.agg(
            mean=(value, "mean"),
            std=(value, lambda x: float(x.std(ddof=0))),
            n_runs=(value, "size"),
            seeds=("seed", lambda x: sorted(int(s) for s in x)),
        ).reset_index()
    result.attrs["missing"] = missing
    result.attrs["value"] = value
    return result
