"""Side-by-side fit panels with pointwise interval bands (sim1d fits CSV)."""

from __future__ import annotations

import argparse
import sys

import matplotlib.pyplot as plt
import numpy as np

from .io import floats, read_columns

REQUIRED = ["index", "x", "y", "f_true", "method", "mean", "lo", "hi"]


def render(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("input_csv")
    ap.add_argument("out_path")
    args = ap.parse_args(argv)

    cols = read_columns(args.input_csv, REQUIRED)
    methods = sorted(set(cols["method"])) or ["bart", "mbart"]
    fig, axes = plt.subplots(1, max(len(methods), 1), figsize=(6 * max(len(methods), 1), 4.5),
                             sharey=True, squeeze=False)
    x = np.array(floats(cols, "x"))
    y = np.array(floats(cols, "y"))
    f = np.array(floats(cols, "f_true"))
    mean = np.array(floats(cols, "mean"))
    lo = np.array(floats(cols, "lo"))
    hi = np.array(floats(cols, "hi"))
    meth = np.array(cols["method"])
    for ax, method in zip(axes[0], methods):
        sel = meth == method
        order = np.argsort(x[sel])
        xs = x[sel][order]
        ax.fill_between(xs, lo[sel][order], hi[sel][order], alpha=0.3, label="95% interval")
        ax.plot(xs, mean[sel][order], lw=2, label="posterior mean")
        ax.plot(xs, f[sel][order], ls="--", lw=1, label="truth")
        ax.scatter(xs, y[sel][order], s=8, alpha=0.5, label="data")
        ax.set_title(method)
        ax.set_xlabel("x")
    axes[0][0].set_ylabel("y")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out_path)
    plt.close(fig)


def main(argv=None) -> int:
    from .io import run

    return run(render, argv)


if __name__ == "__main__":
    sys.exit(main())
