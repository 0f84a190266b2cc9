"""Command-line front end: fit, predict, effects, oos, and the simulation studies.

Every subcommand is deterministic given --seed, and every output CSV has a
stable documented header (consumers key on headers, never on positions).
Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
breach.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

import numpy as np

from .data_io import (
    load_csv,
    load_draws,
    persist_draws,
    prepare_arrays,
    read_csv_columns,
    write_csv,
)
from .errors import DataError, InvariantError
from .inference import conditional_effects, predict, quantile_grid, rmse
from .priors import HyperParams, default_hyperparams
from .sampler import run_chain


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we reserve 2 for data errors
        raise UsageError(message)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["bart", "mbart"], default="mbart")
    p.add_argument("--m", type=int, default=200, help="number of trees")
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--nu", type=float, default=3.0)
    p.add_argument("--q", type=float, default=0.90)
    p.add_argument("--alpha", type=float, default=None, help="tree prior base (mode default if unset)")
    p.add_argument("--beta", type=float, default=None, help="tree prior power (mode default if unset)")
    p.add_argument("--burn", type=int, default=500)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--grid-points", type=int, default=64)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--max-cuts", type=int, default=100)
    p.add_argument("--sigma-est", choices=["linear", "naive"], default="linear")
    p.add_argument("--workers", type=int, default=1, help="process pool size for replicates")


def _build_parser() -> _Parser:
    parser = _Parser(prog="mbart", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit on a CSV and store the posterior draws")
    p.add_argument("--data", required=True)
    p.add_argument("--y", required=True, help="response column name")
    p.add_argument("--monotone", default="", help="col:dir,... with dir increasing|decreasing")
    _add_common_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict at new rows from a stored draw file")
    p.add_argument("--draws-file", required=True)
    p.add_argument("--data", required=True, help="CSV holding the predictor columns")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("effects", help="conditional-effect curves from a stored draw file")
    p.add_argument("--draws-file", required=True)
    p.add_argument("--data", required=True, help="training CSV (grids come from observed ranges)")
    p.add_argument("--var", required=True, help="predictor name to vary")
    p.add_argument("--grid-count", type=int, default=15)
    p.add_argument("--combinations", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_effects)

    p = sub.add_parser("oos", help="repeated 75/25 out-of-sample comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--monotone", default="")
    p.add_argument("--replicates", type=int, default=20)
    _add_common_flags(p)
    p.set_defaults(func=cmd_oos)

    p = sub.add_parser("sim1d", help="cubic one-predictor simulation study")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--sigma-noise", type=float, default=0.1)
    p.add_argument("--sensitivity", action="store_true", help="run the 36-setting prior design")
    _add_common_flags(p)
    p.set_defaults(func=cmd_sim1d)

    p = sub.add_parser("sim5d", help="five-predictor out-of-sample RMSE study")
    p.add_argument("--sigmas", default="0.2,0.5,0.7,1.0")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--oracle", action="store_true", help="include the true-function zero-RMSE rows")
    _add_common_flags(p)
    p.set_defaults(func=cmd_sim5d)

    return parser


def _parse_monotone(spec: str) -> dict:
    out = {}
    if not spec:
        return out
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise UsageError(f"--monotone entries need col:dir, got {item!r}")
        col, direction = item.rsplit(":", 1)
        direction = {"inc": "increasing", "dec": "decreasing"}.get(direction, direction)
        if direction not in ("increasing", "decreasing", "none"):
            raise UsageError(f"unknown monotone direction {direction!r}")
        out[col.strip()] = direction
    return out


def _hyperparams(args, S) -> HyperParams:
    overrides = dict(
        m=args.m,
        k=args.k,
        nu=args.nu,
        q=args.q,
        min_leaf=args.min_leaf,
        grid_points=args.grid_points,
        sigma_est=args.sigma_est,
    )
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    if args.beta is not None:
        overrides["beta"] = args.beta
    return default_hyperparams(args.mode, S=S, **overrides)


def _out(args, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _write_manifest(args, path: str, wall: float, extra: dict) -> None:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    payload = {"flags": flags, "seed": args.seed, "wall_time_s": wall}
    payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def _sigma_trace_rows(drawset) -> list:
    scale = drawset.meta["transforms"]["y_scale"]
    return [(it, float(s) * scale) for it, s in enumerate(drawset.sigma_trace)]


# ---- subcommands ----------------------------------------------------------


def cmd_fit(args) -> int:
    monotone = _parse_monotone(args.monotone)
    dataset = load_csv(args.data, args.y, monotone)
    if args.mode == "mbart" and not dataset.S:
        raise UsageError("--mode mbart needs at least one --monotone column")
    hp = _hyperparams(args, dataset.S)
    start = time.time()
    drawset = run_chain(
        dataset,
        hp,
        args.mode,
        n_burn=args.burn,
        n_draw=args.draws,
        thin=args.thin,
        rng=args.seed,
        max_cuts=args.max_cuts,
    )
    wall = time.time() - start
    persist_draws(drawset, _out(args, "draws.txt"))
    write_csv(_out(args, "sigma_trace.csv"), ["iteration", "sigma"], _sigma_trace_rows(drawset))
    _write_manifest(
        args,
        _out(args, "manifest.json"),
        wall,
        {
            "mean_tree_size": drawset.meta["mean_tree_size"],
            "n": dataset.n,
            "p": dataset.p,
            "mode": args.mode,
        },
    )
    return 0


def _matrix_from_csv(path: str, names: Sequence[str]) -> np.ndarray:
    cols = read_csv_columns(path)
    missing = [n for n in names if n not in cols]
    if missing:
        raise DataError(f"{path} lacks predictor columns {missing}")
    try:
        return np.column_stack([[float(v) for v in cols[n]] for n in names])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric predictor cell ({exc})") from exc


def cmd_predict(args) -> int:
    drawset = load_draws(args.draws_file)
    names = drawset.meta["transforms"]["names"]
    X = _matrix_from_csv(args.data, names)
    mean, lo, hi = predict(drawset, X)
    rows = [(i, float(mean[i]), float(lo[i]), float(hi[i])) for i in range(len(mean))]
    write_csv(_out(args, "predictions.csv"), ["row", "mean", "lo", "hi"], rows)
    return 0


def _frozen_combinations(
    X: np.ndarray, var: int, n_combos: int, rng: np.random.Generator
) -> np.ndarray:
    """Cross product of small per-variable grids, randomly subsampled.

    Low-cardinality columns contribute all their levels; continuous ones a
    few quantiles.  The varied column gets a placeholder.
    """
    levels = []
    for i in range(X.shape[1]):
        if i == var:
            levels.append(np.array([0.0]))
            continue
        distinct = np.unique(X[:, i])
        levels.append(distinct if distinct.size <= 5 else np.unique(quantile_grid(X[:, i], 4)))
    total = int(np.prod([lv.size for lv in levels]))
    if total <= 20000:
        pool = np.array(list(itertools.product(*levels)))
    else:
        pool = np.column_stack([rng.choice(lv, size=n_combos * 4) for lv in levels])
        pool = np.unique(pool, axis=0)
    take = min(n_combos, pool.shape[0])
    idx = rng.choice(pool.shape[0], size=take, replace=False)
    return pool[idx]


def cmd_effects(args) -> int:
    drawset = load_draws(args.draws_file)
    tr = drawset.meta["transforms"]
    names = tr["names"]
    if args.var not in names:
        raise DataError(f"unknown predictor {args.var!r}; choices: {names}")
    var = names.index(args.var)
    X = _matrix_from_csv(args.data, names)
    grid = quantile_grid(X[:, var], args.grid_count)
    rng = np.random.default_rng(args.seed)
    combos = _frozen_combinations(X, var, args.combinations, rng)
    curves = conditional_effects(drawset, var, grid, combos)
    monotone = tr["monotone"]
    rows = []
    for cid, curve in enumerate(curves):
        if drawset.meta.get("mode") == "mbart" and monotone[var] != "none":
            if np.any(np.diff(curve.means) < -1e-9):
                raise InvariantError(f"effect curve {cid} for {args.var} is not monotone")
        for g, mval, lval, hval in zip(curve.grid, curve.means, curve.lo, curve.hi):
            rows.append((cid, float(g), float(mval), float(lval), float(hval)))
    write_csv(
        _out(args, f"effects_{args.var}.csv"),
        ["curve_id", "grid_value", "mean", "lo", "hi"],
        rows,
    )
    return 0


# ---- oos ------------------------------------------------------------------


def _ols_predict(X_train, y_train, X_test) -> np.ndarray:
    Z = np.column_stack([np.ones(len(X_train)), X_train])
    coef, *_ = np.linalg.lstsq(Z, y_train, rcond=None)
    return np.column_stack([np.ones(len(X_test)), X_test]) @ coef


def _posterior_mean_original(drawset) -> np.ndarray:
    fits = drawset.test_draws.mean(axis=0)
    return drawset.y_to_original(fits)


def _oos_task(payload) -> list:
    (rep, seed_entropy, X, y, names, monotone, hp_bart, hp_mbart, burn, draws, thin, max_cuts) = payload
    ss = np.random.SeedSequence(seed_entropy)
    split_rng = np.random.default_rng(ss.spawn(1)[0])
    n = len(y)
    perm = split_rng.permutation(n)
    n_train = int(round(0.75 * n))
    tr_idx, te_idx = perm[:n_train], perm[n_train:]
    ds = prepare_arrays(X[tr_idx], y[tr_idx], names, monotone)
    X_te, y_te = X[te_idx], y[te_idx]
    rows = []
    ols = _ols_predict(X[tr_idx], y[tr_idx], X_te)
    rows.append((rep, "linear", rmse(ols, y_te)))
    for method, hp in (("bart", hp_bart), ("mbart", hp_mbart)):
        draw = run_chain(
            ds,
            hp,
            method,
            n_burn=burn,
            n_draw=draws,
            thin=thin,
            rng=np.random.default_rng(ss.spawn(1)[0]),
            max_cuts=max_cuts,
            x_test=X_te,
            collect_draws=False,
        )
        rows.append((rep, method, rmse(_posterior_mean_original(draw), y_te)))
    return rows


def _run_pool(task_fn, payloads, workers: int) -> list:
    if workers <= 1 or len(payloads) <= 1:
        return [task_fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task_fn, payloads))


def cmd_oos(args) -> int:
    monotone = _parse_monotone(args.monotone)
    dataset = load_csv(args.data, args.y, monotone)
    if args.mode == "mbart" and not dataset.S:
        raise UsageError("oos needs at least one --monotone column for the mbart arm")
    hp_m = _hyperparams(args, dataset.S)
    hp_b = _hyperparams(argparse.Namespace(**{**vars(args), "mode": "bart"}), frozenset())
    X_orig = dataset.X * dataset.col_signs  # original-scale predictors
    payloads = [
        (
            rep,
            (args.seed, rep),
            X_orig,
            dataset.y_raw,
            dataset.names,
            dataset.monotone,
            hp_b,
            hp_m,
            args.burn,
            args.draws,
            args.thin,
            args.max_cuts,
        )
        for rep in range(args.replicates)
    ]
    results = _run_pool(_oos_task, payloads, args.workers)
    rows = [row for sub in results for row in sub]
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(_out(args, "oos_rmse.csv"), ["replicate", "method", "rmse"], rows)
    return 0


# ---- sim1d ----------------------------------------------------------------


def _sim1d_data(n: int, sigma_noise: float, rng: np.random.Generator):
    x = np.sort(rng.uniform(-1.0, 1.0, size=n))  # emit in x order (plotting convention)
    f = x**3
    y = f + (rng.normal(0.0, sigma_noise, size=n) if sigma_noise > 0 else 0.0)
    return x, f, y


def _fit_sim1d(x, y, mode, hp, burn, draws, thin, rng, max_cuts):
    ds = prepare_arrays(x[:, None], y, ["x"], ["increasing"])
    return run_chain(
        ds,
        hp,
        mode,
        n_burn=burn,
        n_draw=draws,
        thin=thin,
        rng=rng,
        max_cuts=max_cuts,
        x_test=x[:, None],
    )


def _sim1d_setting_task(payload):
    (x, y, mode, hp, burn, draws, thin, seed_entropy, max_cuts, tag) = payload
    drawset = _fit_sim1d(
        x, y, mode, hp, burn, draws, thin, np.random.default_rng(np.random.SeedSequence(seed_entropy)), max_cuts
    )
    return tag, mode, _posterior_mean_original(drawset)


def cmd_sim1d(args) -> int:
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 101)))
    x, f_true, y = _sim1d_data(args.n, args.sigma_noise, rng)
    rows = []
    for mode in ("bart", "mbart"):
        hp = _hyperparams(argparse.Namespace(**{**vars(args), "mode": mode}), frozenset({0}))
        drawset = _fit_sim1d(
            x, y, mode, hp, args.burn, args.draws, args.thin,
            np.random.default_rng(np.random.SeedSequence((args.seed, 202, mode == "mbart"))),
            args.max_cuts,
        )
        fits = drawset.test_draws
        mean = drawset.y_to_original(fits.mean(axis=0))
        lo = drawset.y_to_original(np.quantile(fits, 0.025, axis=0))
        hi = drawset.y_to_original(np.quantile(fits, 0.975, axis=0))
        for i in range(args.n):
            rows.append(
                (i, float(x[i]), float(y[i]), float(f_true[i]), mode, float(mean[i]), float(lo[i]), float(hi[i]))
            )
    write_csv(
        _out(args, "sim1d_fits.csv"),
        ["index", "x", "y", "f_true", "method", "mean", "lo", "hi"],
        rows,
    )

    if args.sensitivity:
        settings = sensitivity_design()
        payloads = []
        for mode in ("bart", "mbart"):
            for tag, (m, k, nu, q) in enumerate(settings):
                overrides = dict(
                    m=m, k=k, nu=nu, q=q, min_leaf=args.min_leaf,
                    grid_points=args.grid_points, sigma_est=args.sigma_est,
                )
                if args.alpha is not None:
                    overrides["alpha"] = args.alpha
                if args.beta is not None:
                    overrides["beta"] = args.beta
                hp = default_hyperparams(mode, S=frozenset({0}), **overrides)
                payloads.append(
                    (x, y, mode, hp, args.burn, args.draws, args.thin, (args.seed, 303, tag, mode == "mbart"), args.max_cuts, tag)
                )
        results = _run_pool(_sim1d_setting_task, payloads, args.workers)
        fits_by_mode: dict = {"bart": [], "mbart": []}
        for tag, mode, fit in results:
            fits_by_mode[mode].append(fit)
        sens_rows = []
        for mode in ("bart", "mbart"):
            stack = np.vstack(fits_by_mode[mode])  # (settings, n)
            center = stack.mean(axis=0)
            lo = stack.min(axis=0) - center
            hi = stack.max(axis=0) - center
            for i in range(args.n):
                sens_rows.append((i, float(x[i]), mode, float(lo[i]), float(hi[i])))
        write_csv(
            _out(args, "sim1d_sensitivity.csv"),
            ["index", "x", "method", "lo", "hi"],
            sens_rows,
        )
    return 0


def sensitivity_design() -> list[tuple[int, float, float, float]]:
    """The 3 x 4 x 3 = 36 prior settings: m, k, and the (nu, q) pairs."""
    return [
        (m, k, nu, q)
        for m in (50, 200, 500)
        for k in (1.0, 2.0, 3.0, 5.0)
        for (nu, q) in ((3.0, 0.90), (3.0, 0.99), (10.0, 0.75))
    ]


# ---- sim5d ----------------------------------------------------------------


def sim5d_truth(X: np.ndarray) -> np.ndarray:
    return X[:, 0] * X[:, 1] ** 2 + X[:, 2] * X[:, 3] ** 3 + X[:, 4]


def _sim5d_task(payload):
    (rep, sigma, seed_entropy, hp_bart, hp_mbart, burn, draws, thin, max_cuts, oracle) = payload
    ss = np.random.SeedSequence(seed_entropy)
    data_rng = np.random.default_rng(ss.spawn(1)[0])
    X_tr = data_rng.uniform(size=(500, 5))
    X_te = data_rng.uniform(size=(1000, 5))
    f_tr, f_te = sim5d_truth(X_tr), sim5d_truth(X_te)
    y = f_tr + data_rng.normal(0.0, sigma, size=500)
    names = [f"x{i + 1}" for i in range(5)]
    ds = prepare_arrays(X_tr, y, names, ["increasing"] * 5)
    rows = []
    for method, hp in (("bart", hp_bart), ("mbart", hp_mbart)):
        drawset = run_chain(
            ds,
            hp,
            method,
            n_burn=burn,
            n_draw=draws,
            thin=thin,
            rng=np.random.default_rng(ss.spawn(1)[0]),
            max_cuts=max_cuts,
            x_test=X_te,
            collect_draws=False,
        )
        rows.append((rep, method, sigma, rmse(_posterior_mean_original(drawset), f_te)))
    if oracle:
        rows.append((rep, "oracle", sigma, rmse(f_te, f_te)))
    return rows


def cmd_sim5d(args) -> int:
    try:
        sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --sigmas list {args.sigmas!r}") from None
    hp_m = _hyperparams(argparse.Namespace(**{**vars(args), "mode": "mbart"}), frozenset(range(5)))
    hp_b = _hyperparams(argparse.Namespace(**{**vars(args), "mode": "bart"}), frozenset())
    payloads = [
        (rep, sigma, (args.seed, si, rep), hp_b, hp_m, args.burn, args.draws, args.thin, args.max_cuts, args.oracle)
        for si, sigma in enumerate(sigmas)
        for rep in range(args.replicates)
    ]
    results = _run_pool(_sim5d_task, payloads, args.workers)
    rows = [row for sub in results for row in sub]
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    write_csv(_out(args, "sim5d_rmse.csv"), ["replicate", "method", "sigma", "rmse"], rows)
    return 0


# ---- entry ----------------------------------------------------------------


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
