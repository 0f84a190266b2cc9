"""Noise-sd trace panels, one per input CSV, with optional reference lines."""

from __future__ import annotations

import argparse
import sys

import matplotlib.pyplot as plt

from .io import FigureDataError, floats, read_columns

REQUIRED = ["iteration", "sigma"]


def render(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("input_csvs", nargs="+", help="one trace CSV per panel")
    ap.add_argument("out_path")
    ap.add_argument(
        "--ref",
        action="append",
        default=[],
        metavar="LABEL=VALUE",
        help="horizontal reference line, repeatable",
    )
    args = ap.parse_args(argv)

    refs = []
    for item in args.ref:
        if "=" not in item:
            raise FigureDataError(f"--ref needs LABEL=VALUE, got {item!r}")
        label, value = item.split("=", 1)
        refs.append((label, float(value)))

    n = len(args.input_csvs)
    fig, axes = plt.subplots(1, n, figsize=(5.5 * n, 4.0), squeeze=False, sharey=True)
    styles = ["-", "--", "-.", ":"]
    for ax, path in zip(axes[0], args.input_csvs):
        cols = read_columns(path, REQUIRED)
        ax.plot(floats(cols, "iteration"), floats(cols, "sigma"), lw=0.8)
        for k, (label, value) in enumerate(refs):
            ax.axhline(value, ls=styles[k % len(styles)], color="black", lw=1, label=label)
        ax.set_xlabel("iteration")
        ax.set_title(path.rsplit("/", 1)[-1])
        if refs:
            ax.legend(fontsize=8)
    axes[0][0].set_ylabel("sigma")
    fig.tight_layout()
    fig.savefig(args.out_path)
    plt.close(fig)


def main(argv=None) -> int:
    from .io import run

    return run(render, argv)


if __name__ == "__main__":
    sys.exit(main())
