"""Dataset ingestion, transforms, cutpoint grids, and draw persistence.

The response is shifted and rescaled so the observed values span exactly
[-0.5, 0.5]; predictors with a decreasing monotone spec are sign flipped so
the rest of the package only ever sees nondecreasing constraints.  All
recorded transforms invert losslessly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .inference import DrawSet
from .priors import HyperParams
from .tree import Forest, parse_tree, serialize_tree

FORMAT_VERSION = "mbart-draws v1"

_DIRECTIONS = ("increasing", "decreasing", "none")


@dataclass
class Dataset:
    """Prepared training data on the internal scale."""

    X: np.ndarray
    y: np.ndarray
    names: list[str]
    monotone: list[str]  # original per-column spec
    col_signs: np.ndarray
    y_shift: float  # original y = (scaled + 0.5) * y_scale + y_shift
    y_scale: float
    y_raw: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def S(self) -> frozenset:
        return frozenset(i for i, d in enumerate(self.monotone) if d != "none")

    def transforms(self) -> dict:
        return {
            "y_shift": self.y_shift,
            "y_scale": self.y_scale,
            "col_signs": self.col_signs.tolist(),
            "names": list(self.names),
            "monotone": list(self.monotone),
        }


def prepare_arrays(
    X: np.ndarray,
    y: np.ndarray,
    names: Optional[Sequence[str]] = None,
    monotone: Optional[Sequence[str]] = None,
) -> Dataset:
    """Build a Dataset from in-memory arrays (simulations, tests)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if y.size != n:
        raise DataError(f"y has {y.size} rows, X has {n}")
    if names is None:
        names = [f"x{i}" for i in range(p)]
    if monotone is None:
        monotone = ["none"] * p
    monotone = list(monotone)
    if len(monotone) != p:
        raise DataError("monotone spec length does not match the column count")
    for d in monotone:
        if d not in _DIRECTIONS:
            raise DataError(f"unknown monotone direction {d!r}")

    y_min, y_max = float(y.min()), float(y.max())
    if y_min == y_max:
        raise DataError("y needs at least 2 distinct values")
    y_scale = y_max - y_min
    y_scaled = (y - y_min) / y_scale - 0.5

    signs = np.where([d == "decreasing" for d in monotone], -1.0, 1.0)
    Xi = X * signs
    for i, d in enumerate(monotone):
        if d != "none" and np.all(Xi[:, i] == Xi[0, i]):
            raise DataError(f"constrained column {names[i]!r} is constant")
    return Dataset(
        X=Xi,
        y=y_scaled,
        names=list(names),
        monotone=monotone,
        col_signs=signs,
        y_shift=y_min,
        y_scale=y_scale,
        y_raw=y.copy(),
    )


def load_csv(
    path: str,
    y_column: str,
    monotone_spec: Optional[dict] = None,
) -> Dataset:
    """Read a headed CSV; ordered categoricals pass through as numerics."""
    monotone_spec = dict(monotone_spec or {})
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if y_column not in header:
            raise DataError(f"response column {y_column!r} not found in {path}")
        for col in monotone_spec:
            if col not in header:
                raise DataError(f"monotone column {col!r} not found in {path}")
            if monotone_spec[col] not in _DIRECTIONS:
                raise DataError(f"unknown monotone direction {monotone_spec[col]!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                bad = next(v for v in row if not _is_number(v))
                raise DataError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    if not rows:
        raise DataError(f"{path} has no data rows")
    data = np.asarray(rows, dtype=float)
    y_idx = header.index(y_column)
    x_names = [h for h in header if h != y_column]
    x_idx = [i for i, h in enumerate(header) if h != y_column]
    monotone = [monotone_spec.get(name, "none") for name in x_names]
    return prepare_arrays(data[:, x_idx], data[:, y_idx], x_names, monotone)


def _is_number(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def build_cutpoints(dataset: Dataset, max_cuts: int = 100) -> list[np.ndarray]:
    """Per column: midpoints of the distinct values, or an equally spaced
    interior grid when there are more than max_cuts distinct values.

    Grids depend only on X, never on y.
    """
    if max_cuts < 1:
        raise DataError("max_cuts must be at least 1")
    grids = []
    for i in range(dataset.p):
        col = dataset.X[:, i]
        distinct = np.unique(col)
        if distinct.size == 1:
            if dataset.monotone[i] != "none":
                raise DataError(f"constrained column {dataset.names[i]!r} is constant")
            grids.append(np.empty(0))
        elif distinct.size <= max_cuts:
            grids.append((distinct[:-1] + distinct[1:]) / 2.0)
        else:
            grids.append(np.linspace(distinct[0], distinct[-1], max_cuts + 2)[1:-1])
    return grids


def _hyperparams_to_json(hp: HyperParams) -> dict:
    d = {
        "alpha": hp.alpha,
        "beta": hp.beta,
        "nu": hp.nu,
        "q": hp.q,
        "k": hp.k,
        "m": hp.m,
        "mu_mu": hp.mu_mu,
        "sigma_mu": hp.sigma_mu,
        "lam": hp.lam,
        "S": sorted(hp.S),
        "min_leaf": hp.min_leaf,
        "grid_points": hp.grid_points,
        "max_depth": hp.max_depth,
        "sigma_est": hp.sigma_est,
    }
    return d


def hyperparams_from_json(d: dict) -> HyperParams:
    d = dict(d)
    d["S"] = frozenset(d.get("S", ()))
    return HyperParams(**d)


def persist_draws(drawset: DrawSet, path: str) -> None:
    """Write the versioned draw file; loading reproduces predictions bit for bit."""
    meta = dict(drawset.meta)
    if "hyperparams" in meta and isinstance(meta["hyperparams"], HyperParams):
        meta["hyperparams"] = _hyperparams_to_json(meta["hyperparams"])
    header = {
        "meta": meta,
        "cutpoints": [[repr(float(v)) for v in grid] for grid in drawset.cutpoints],
        "n_draws": drawset.n_draws,
        "m": len(drawset.forests[0].trees) if drawset.forests else 0,
    }
    buf = io.StringIO()
    buf.write(FORMAT_VERSION + "\n")
    buf.write(json.dumps(header) + "\n")
    for k, forest in enumerate(drawset.forests):
        buf.write(f"draw {k}\n")
        buf.write(f"sigma {float(drawset.sigmas[k])!r}\n")
        for j, tree in enumerate(forest.trees):
            buf.write(f"tree {j + 1} of {len(forest.trees)}\n")
            for line in serialize_tree(tree):
                buf.write(line + "\n")
    buf.write("end\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_draws(path: str) -> DrawSet:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    pos = 0

    def take(what: str) -> str:
        nonlocal pos
        if pos >= len(lines):
            raise DataError(f"{path}: truncated file while reading {what}")
        line = lines[pos]
        pos += 1
        return line

    version = take("version header")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported draw-file version {version!r}")
    header_line = take("header")
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:2: bad header: {exc}") from exc
    cutpoints = [np.array([float(v) for v in grid]) for grid in header["cutpoints"]]
    n_draws, m = int(header["n_draws"]), int(header["m"])

    forests: list[Forest] = []
    sigmas: list[float] = []
    for k in range(n_draws):
        line = take(f"draw {k}")
        if line != f"draw {k}":
            raise DataError(f"{path}:{pos}: expected 'draw {k}', got {line!r}")
        line = take("sigma")
        if not line.startswith("sigma "):
            raise DataError(f"{path}:{pos}: expected a sigma line")
        sigmas.append(float(line[6:]))
        trees = []
        for j in range(m):
            line = take(f"tree header {j + 1}")
            if line != f"tree {j + 1} of {m}":
                raise DataError(f"{path}:{pos}: expected 'tree {j + 1} of {m}'")
            node_lines = []
            while pos < len(lines) and not lines[pos].startswith(("tree ", "draw ", "end")):
                node_lines.append(take("tree nodes"))
            try:
                trees.append(parse_tree(node_lines))
            except ValueError as exc:
                raise DataError(f"{path}: bad tree block near line {pos}: {exc}") from exc
        forests.append(Forest(trees, cutpoints))
    line = take("end marker")
    if line != "end":
        raise DataError(f"{path}:{pos}: missing end marker (truncated file?)")
    return DrawSet(
        forests=forests,
        sigmas=np.array(sigmas),
        cutpoints=cutpoints,
        meta=header["meta"],
    )


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """CSV with shortest round-trip decimals for floats (repr fidelity)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def read_csv_columns(path: str) -> dict[str, list[str]]:
    """Header-keyed raw columns of a CSV (consumers parse what they need)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        cols: dict[str, list[str]] = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(v)
    return cols
