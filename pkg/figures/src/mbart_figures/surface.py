"""Bivariate fitted surface over a two-predictor grid.

Joins a grid CSV (the design whose rows were predicted) with the matching
predictions CSV by row order and renders a 3-D surface of the mean fit.
"""

from __future__ import annotations

import argparse
import sys

import matplotlib.pyplot as plt
import numpy as np

from .io import FigureDataError, floats, read_columns

REQUIRED_PRED = ["row", "mean", "lo", "hi"]


def render(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("grid_csv", help="design CSV holding the predictor columns")
    ap.add_argument("predictions_csv")
    ap.add_argument("out_path")
    ap.add_argument("--x", required=True, help="first predictor column name")
    ap.add_argument("--y", required=True, help="second predictor column name")
    args = ap.parse_args(argv)

    grid_cols = read_columns(args.grid_csv, [args.x, args.y])
    pred_cols = read_columns(args.predictions_csv, REQUIRED_PRED)
    xs = np.array(floats(grid_cols, args.x))
    ys = np.array(floats(grid_cols, args.y))
    zs = np.array(floats(pred_cols, "mean"))
    if xs.size != zs.size:
        raise FigureDataError(
            f"grid rows ({xs.size}) and prediction rows ({zs.size}) do not match"
        )

    fig = plt.figure(figsize=(6.5, 5.0))
    ax = fig.add_subplot(111, projection="3d")
    if xs.size:
        ux, uy = np.unique(xs), np.unique(ys)
        if ux.size * uy.size == xs.size:  # full lattice: render as a surface
            order = np.lexsort((ys, xs))
            Z = zs[order].reshape(ux.size, uy.size)
            Xg, Yg = np.meshgrid(ux, uy, indexing="ij")
            ax.plot_surface(Xg, Yg, Z, cmap="viridis", edgecolor="none", alpha=0.9)
        else:
            ax.plot_trisurf(xs, ys, zs, cmap="viridis", alpha=0.9)
    ax.set_xlabel(args.x)
    ax.set_ylabel(args.y)
    ax.set_zlabel("fitted")
    fig.tight_layout()
    fig.savefig(args.out_path)
    plt.close(fig)


def main(argv=None) -> int:
    from .io import run

    return run(render, argv)


if __name__ == "__main__":
    sys.exit(main())
