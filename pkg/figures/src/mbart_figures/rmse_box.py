"""RMSE boxplots (sim5d or oos CSVs).

With a sigma column, boxes group by sigma with the methods adjacent within
each group; without one, a single group of per-method boxes.
"""

from __future__ import annotations

import argparse
import sys

import matplotlib.pyplot as plt
import numpy as np

from .io import floats, read_columns

REQUIRED = ["replicate", "method", "rmse"]


def render(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("input_csv")
    ap.add_argument("out_path")
    args = ap.parse_args(argv)

    cols = read_columns(args.input_csv, REQUIRED)
    meth = np.array(cols["method"])
    rmse = np.array(floats(cols, "rmse"))
    methods = sorted(set(meth))
    has_sigma = "sigma" in cols
    sigmas = sorted({float(v) for v in cols["sigma"]}) if has_sigma else [None]
    sigma_col = np.array(floats(cols, "sigma")) if has_sigma else None

    fig, ax = plt.subplots(figsize=(8, 4.5))
    data, positions, labels = [], [], []
    width = 0.8 / max(len(methods), 1)
    for gi, sigma in enumerate(sigmas):
        for mi, method in enumerate(methods):
            sel = meth == method
            if sigma is not None:
                sel &= sigma_col == sigma
            data.append(rmse[sel] if np.any(sel) else np.array([]))
            positions.append(gi + (mi - (len(methods) - 1) / 2.0) * width)
            labels.append(method)
    keep = [i for i, d in enumerate(data) if d.size]
    if keep:
        bp = ax.boxplot(
            [data[i] for i in keep],
            positions=[positions[i] for i in keep],
            widths=width * 0.9,
            patch_artist=True,
        )
        colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
        for artist, i in zip(bp["boxes"], keep):
            artist.set_facecolor(colors[methods.index(labels[i]) % len(colors)])
    ax.set_xticks(range(len(sigmas)))
    ax.set_xticklabels(
        [f"sigma = {s:g}" if s is not None else "out of sample" for s in sigmas]
    )
    ax.set_ylabel("RMSE")
    handles = [
        plt.Line2D([], [], color=plt.rcParams["axes.prop_cycle"].by_key()["color"][i % 10],
                   lw=6, label=m)
        for i, m in enumerate(methods)
    ]
    if handles:
        ax.legend(handles=handles, fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out_path)
    plt.close(fig)


def main(argv=None) -> int:
    from .io import run

    return run(render, argv)


if __name__ == "__main__":
    sys.exit(main())
