"""CSV ingestion keyed strictly on headers, with explicit diagnostics."""

from __future__ import annotations

import csv
import sys

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "mbart-figures"  # deterministic ids


class FigureDataError(Exception):
    """Missing or misheaded input; scripts exit nonzero with the message."""


def read_columns(path: str, required: list[str]) -> dict[str, list[str]]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FigureDataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FigureDataError(f"{path} is empty (no header row)") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise FigureDataError(f"{path} lacks required columns {missing}; header is {header}")
        cols: dict[str, list[str]] = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(v)
    return cols


def floats(cols: dict, name: str) -> list[float]:
    return [float(v) for v in cols[name]]


def run(render_fn, argv=None) -> int:
    """Shared entry-point wrapper: diagnostics to stderr, nonzero on bad input."""
    try:
        render_fn(argv)
        return 0
    except FigureDataError as exc:
        print(f"figure input error: {exc}", file=sys.stderr)
        return 2
