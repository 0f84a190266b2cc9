import math

import numpy as np
import pytest

from mbart.data_io import (
    build_cutpoints,
    load_csv,
    load_draws,
    persist_draws,
    prepare_arrays,
    read_csv_columns,
    write_csv,
)
from mbart.errors import DataError
from mbart.inference import DrawSet, predict
from mbart.priors import default_hyperparams
from mbart.sampler import run_chain


def write_toy_csv(path, rows, header="x1,x2,y"):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


class TestLoadCsv:
    def test_three_row_toy_file(self, tmp_path):
        path = tmp_path / "toy.csv"
        write_toy_csv(path, [(0.1, 5, 2.0), (0.5, 3, 4.0), (0.9, 1, 3.0)])
        ds = load_csv(str(path), "y", {})
        assert ds.names == ["x1", "x2"]
        assert np.allclose(ds.X, [[0.1, 5], [0.5, 3], [0.9, 1]])
        assert ds.y.min() == -0.5 and ds.y.max() == 0.5
        assert np.allclose(np.sort(ds.y), [-0.5, 0.0, 0.5])
        # round trip back to the original scale
        assert np.allclose((ds.y + 0.5) * ds.y_scale + ds.y_shift, [2.0, 4.0, 3.0])

    def test_decreasing_column_is_flipped_and_recorded(self, tmp_path):
        path = tmp_path / "toy.csv"
        write_toy_csv(path, [(0.1, 5, 2.0), (0.5, 3, 4.0), (0.9, 1, 3.0)])
        ds = load_csv(str(path), "y", {"x2": "decreasing"})
        assert np.allclose(ds.X[:, 1], [-5, -3, -1])
        assert ds.col_signs.tolist() == [1.0, -1.0]
        assert ds.monotone == ["none", "decreasing"]
        assert ds.S == frozenset({1})

    def test_car_style_schema(self, tmp_path):
        # mileage decreasing, year increasing, featureCount decreasing,
        # isOneOwner increasing: four constrained columns
        path = tmp_path / "cars.csv"
        rng = np.random.default_rng(0)
        with open(path, "w") as fh:
            fh.write("price,mileage,year,featureCount,isOneOwner\n")
            for _ in range(30):
                fh.write(
                    f"{rng.uniform(5, 50):.2f},{rng.uniform(1e4, 2e5):.0f},"
                    f"{rng.integers(1995, 2015)},{rng.integers(0, 80)},{rng.integers(0, 2)}\n"
                )
        spec = {
            "mileage": "decreasing",
            "year": "increasing",
            "featureCount": "decreasing",
            "isOneOwner": "increasing",
        }
        ds = load_csv(str(path), "price", spec)
        assert len(ds.S) == 4
        assert ds.col_signs.tolist() == [-1.0, 1.0, -1.0, 1.0]

    def test_missing_column(self, tmp_path):
        path = tmp_path / "toy.csv"
        write_toy_csv(path, [(1, 2, 3), (2, 3, 4)])
        with pytest.raises(DataError, match="response column"):
            load_csv(str(path), "nope", {})
        with pytest.raises(DataError, match="monotone column"):
            load_csv(str(path), "y", {"zz": "increasing"})

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "toy.csv"
        with open(path, "w") as fh:
            fh.write("x1,y\n1.0,2.0\nfoo,3.0\n")
        with pytest.raises(DataError, match="non-numeric cell 'foo'"):
            load_csv(str(path), "y", {})

    def test_constant_response(self, tmp_path):
        path = tmp_path / "toy.csv"
        write_toy_csv(path, [(1, 2, 5.0), (2, 3, 5.0)])
        with pytest.raises(DataError, match="distinct"):
            load_csv(str(path), "y", {})

    def test_constant_constrained_column(self, tmp_path):
        path = tmp_path / "toy.csv"
        write_toy_csv(path, [(1, 7, 1.0), (2, 7, 2.0)])
        with pytest.raises(DataError, match="constant"):
            load_csv(str(path), "y", {"x2": "increasing"})

    def test_missing_file(self):
        with pytest.raises(DataError, match="cannot open"):
            load_csv("/nonexistent/file.csv", "y", {})


class TestCutpoints:
    def test_binary_column(self):
        ds = prepare_arrays(np.array([[0.0], [1.0], [0.0], [1.0]]), [1, 2, 3, 4])
        (grid,) = build_cutpoints(ds)
        assert np.allclose(grid, [0.5])

    def test_three_levels(self):
        ds = prepare_arrays(np.array([[1.0], [2.0], [3.0]]), [1, 2, 3])
        (grid,) = build_cutpoints(ds)
        assert np.allclose(grid, [1.5, 2.5])

    def test_many_values_equally_spaced(self, rng):
        vals = rng.uniform(0.0, 1.0, 1000)
        ds = prepare_arrays(vals[:, None], np.arange(1000.0))
        (grid,) = build_cutpoints(ds, max_cuts=100)
        assert grid.size == 100
        assert grid[0] > vals.min() and grid[-1] < vals.max()
        assert np.allclose(np.diff(grid), np.diff(grid)[0])

    def test_unconstrained_constant_column_empty_grid(self):
        X = np.column_stack([np.ones(5), np.arange(5.0)])
        ds = prepare_arrays(X, np.arange(5.0))
        grids = build_cutpoints(ds)
        assert grids[0].size == 0
        assert grids[1].size == 4

    def test_grids_ignore_y(self, rng):
        X = rng.uniform(size=(50, 2))
        ds1 = prepare_arrays(X, rng.normal(size=50))
        ds2 = prepare_arrays(X, rng.normal(size=50) * 100)
        g1, g2 = build_cutpoints(ds1), build_cutpoints(ds2)
        for a, b in zip(g1, g2):
            assert np.array_equal(a, b)


class TestTransforms:
    def test_round_trip_to_one_ulp(self, rng):
        y = rng.normal(3.0, 2.0, size=500)
        ds = prepare_arrays(rng.uniform(size=(500, 1)), y)
        back = (ds.y + 0.5) * ds.y_scale + ds.y_shift
        assert np.allclose(back, y, rtol=1e-15, atol=1e-12)


@pytest.fixture(scope="module")
def small_drawset():
    rng = np.random.default_rng(6)
    n = 60
    x = np.sort(rng.uniform(-1.0, 1.0, n))
    y = x**3 + rng.normal(0.0, 0.1, n)
    ds = prepare_arrays(x[:, None], y, ["x"], ["increasing"])
    hp = default_hyperparams("mbart", S=ds.S, m=5)
    return run_chain(ds, hp, "mbart", n_burn=20, n_draw=10, rng=3)


class TestPersistence:
    def test_empty_drawset_round_trip(self, tmp_path, small_drawset):
        empty = DrawSet(
            forests=[],
            sigmas=np.empty(0),
            cutpoints=small_drawset.cutpoints,
            meta=small_drawset.meta,
        )
        path = str(tmp_path / "draws.txt")
        persist_draws(empty, path)
        again = load_draws(path)
        assert again.n_draws == 0
        assert again.forests == []

    def test_predictions_bit_identical_after_round_trip(self, tmp_path, small_drawset):
        path = str(tmp_path / "draws.txt")
        persist_draws(small_drawset, path)
        again = load_draws(path)
        X_test = np.random.default_rng(1).uniform(-1, 1, size=(50, 1))
        m0, lo0, hi0 = predict(small_drawset, X_test)
        m1, lo1, hi1 = predict(again, X_test)
        assert np.array_equal(m0, m1)
        assert np.array_equal(lo0, lo1)
        assert np.array_equal(hi0, hi1)
        assert np.array_equal(small_drawset.sigmas, again.sigmas)

    def test_truncated_file_rejected(self, tmp_path, small_drawset):
        path = str(tmp_path / "draws.txt")
        persist_draws(small_drawset, path)
        lines = open(path).read().splitlines()
        with open(path, "w") as fh:
            fh.write("\n".join(lines[:-2]) + "\n")
        with pytest.raises(DataError):
            load_draws(path)

    def test_version_mismatch_rejected(self, tmp_path, small_drawset):
        path = str(tmp_path / "draws.txt")
        persist_draws(small_drawset, path)
        lines = open(path).read().splitlines()
        lines[0] = "mbart-draws v999"
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="version"):
            load_draws(path)


class TestCsvHelpers:
    def test_write_read_round_trip(self, tmp_path):
        path = str(tmp_path / "out.csv")
        rows = [(0, math.pi, "bart"), (1, 1.0 / 3.0, "mbart")]
        write_csv(path, ["idx", "value", "method"], rows)
        cols = read_csv_columns(path)
        assert list(cols) == ["idx", "value", "method"]
        assert float(cols["value"][0]) == math.pi  # repr fidelity
        assert float(cols["value"][1]) == 1.0 / 3.0
