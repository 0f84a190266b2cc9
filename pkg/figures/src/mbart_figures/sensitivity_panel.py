"""Paired per-observation range bars across prior settings (sensitivity CSV).

For each observation (x-sorted) the left vertical bar is the first method's
fit range and the right bar the second's, both centered on their mean fit.
"""

from __future__ import annotations

import argparse
import sys

import matplotlib.pyplot as plt
import numpy as np

from .io import floats, read_columns

REQUIRED = ["index", "x", "method", "lo", "hi"]


def render(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("input_csv")
    ap.add_argument("out_path")
    args = ap.parse_args(argv)

    cols = read_columns(args.input_csv, REQUIRED)
    idx = np.array([int(v) for v in cols["index"]] or [], dtype=int)
    lo = np.array(floats(cols, "lo"))
    hi = np.array(floats(cols, "hi"))
    meth = np.array(cols["method"])
    methods = sorted(set(meth)) or ["bart", "mbart"]

    fig, ax = plt.subplots(figsize=(10, 4.5))
    offsets = np.linspace(-0.22, 0.22, max(len(methods), 2))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k, method in enumerate(methods):
        sel = meth == method
        pos = idx[sel] + offsets[k]
        ax.vlines(pos, lo[sel], hi[sel], lw=1.2, color=colors[k % len(colors)], label=method)
    ax.axhline(0.0, color="gray", lw=0.5)
    ax.set_xlabel("observation (sorted by x)")
    ax.set_ylabel("fit range around per-setting mean")
    if methods:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out_path)
    plt.close(fig)


def main(argv=None) -> int:
    from .io import run

    return run(render, argv)


if __name__ == "__main__":
    sys.exit(main())
