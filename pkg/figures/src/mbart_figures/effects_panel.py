"""Conditional-effect curves, one line per frozen combination (effects CSV)."""

from __future__ import annotations

import argparse
import sys

import matplotlib.pyplot as plt
import numpy as np

from .io import floats, read_columns

REQUIRED = ["curve_id", "grid_value", "mean", "lo", "hi"]


def render(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("input_csv")
    ap.add_argument("out_path")
    ap.add_argument("--bands", action="store_true", help="shade pointwise intervals")
    args = ap.parse_args(argv)

    cols = read_columns(args.input_csv, REQUIRED)
    ids = np.array([int(v) for v in cols["curve_id"]] or [], dtype=int)
    grid = np.array(floats(cols, "grid_value"))
    mean = np.array(floats(cols, "mean"))
    lo = np.array(floats(cols, "lo"))
    hi = np.array(floats(cols, "hi"))

    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for cid in np.unique(ids):
        sel = ids == cid
        order = np.argsort(grid[sel])
        ax.plot(grid[sel][order], mean[sel][order], lw=1.2, alpha=0.8)
        if args.bands:
            ax.fill_between(grid[sel][order], lo[sel][order], hi[sel][order], alpha=0.15)
    ax.set_xlabel("predictor value")
    ax.set_ylabel("fitted f")
    fig.tight_layout()
    fig.savefig(args.out_path)
    plt.close(fig)


def main(argv=None) -> int:
    from .io import run

    return run(render, argv)


if __name__ == "__main__":
    sys.exit(main())
