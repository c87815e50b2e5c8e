"""Benchmark harness correctness (sweeps are deterministic; timing is not)."""

import numpy as np
import pytest

from rotsparse import BasisSpec
from rotsparse.bench import (
    bench_rotation,
    save_bench_csv,
    save_series_csv,
    save_sweep_coding_csv,
    sweep_angles,
    sweep_coding,
    sweep_convergence,
)
from rotsparse.coding import basis_for
from rotsparse.patches import synth_crosses


@pytest.fixture(scope="module")
def toy_coeffs():
    basis = basis_for(BasisSpec(15))
    patch_set, _ = synth_crosses(120, 15, seed=21)
    return basis, basis.analyze(patch_set.patches)


def test_bench_rotation_smoke_and_gate():
    results = bench_rotation(sizes=(11,), n_patches=200, seed=1, runs=2)
    methods = {r.method for r in results}
    assert methods == {"nearest", "bicubic", "steer", "steer_half"}
    for r in results:
        assert r.seconds > 0
        assert r.patches_per_sec == 200 / r.seconds


def test_bench_csv_format(tmp_path):
    results = bench_rotation(sizes=(11,), n_patches=100, seed=2, runs=1)
    path = tmp_path / "bench_rotation.csv"
    save_bench_csv(results, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "method,N,patches,seconds,patches_per_sec"
    assert len(lines) == 5


def test_steering_cost_scales_with_basis_size():
    # per-patch steering cost is one complex multiply per basis column; check
    # an R^2 > 0.9 linear fit of measured time against column count
    sizes = (11, 15, 21, 31)
    results = bench_rotation(sizes=sizes, n_patches=20_000, seed=3, runs=5)
    times = {r.diameter: r.seconds for r in results if r.method == "steer"}
    cols = {n: basis_for(BasisSpec(n)).n_columns for n in sizes}
    x = np.array([cols[n] for n in sizes], dtype=float)
    y = np.array([times[n] for n in sizes])
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = np.sum((y - pred) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    assert 1 - ss_res / ss_tot > 0.9


def test_sweep_coding_rotational_wins(toy_coeffs):
    from rotsparse.patches import load_pgm
    from importlib import resources

    with resources.as_file(
        resources.files("rotsparse").joinpath("data/oriented_texture_128.pgm")
    ) as path:
        image = load_pgm(path)
    result = sweep_coding(image[:64, :64], 11, (4,), (1,), n_angles=12,
                          iterations=3, seed=5, cap=400)
    assert result.cells[(4, 1, "rksvd")] <= result.cells[(4, 1, "ksvd")]
    assert all(v >= 0 for v in result.cells.values())


def test_sweep_convergence_series(toy_coeffs):
    basis, coeffs = toy_coeffs
    series = sweep_convergence(basis, coeffs, n_atoms=1, sparsity=2, n_angles=12,
                               max_iters=4, seed=6)
    assert [i for i, _ in series] == [1, 2, 3, 4, 5]  # final recode appended
    assert series[-1][1] <= series[0][1]


def test_sweep_angles_r1_matches_baseline(toy_coeffs):
    basis, coeffs = toy_coeffs
    from rotsparse.coding import LearnConfig, ksvd_learn
    from rotsparse.coding import MSE_SCALE

    series = sweep_angles(basis, coeffs, n_atoms=1, sparsity=2,
                          angle_counts=(1, 8), iterations=3, seed=7)
    _, _, report = ksvd_learn(basis, coeffs, LearnConfig(
        n_atoms=1, sparsity=2, n_angles=99, iterations=3, seed=7))
    baseline = MSE_SCALE * report.objective[-1] / len(coeffs)
    assert series[0][1] == baseline  # bit-identical R=1 path
    assert series[1][1] <= series[0][1]


def test_series_csv_format(tmp_path):
    save_series_csv([(1, 0.5), (2, 0.25)], tmp_path / "conv.csv", key_name="iter")
    lines = (tmp_path / "conv.csv").read_text().splitlines()
    assert lines[0] == "iter,mse"
    assert lines[1] == "1,0.5"


def test_sweep_csv_format(tmp_path, toy_coeffs):
    basis, coeffs = toy_coeffs
    from rotsparse.bench import SweepResult

    result = SweepResult({(4, 1, "ksvd"): 2.0, (4, 1, "rksvd"): 1.0})
    save_sweep_coding_csv(result, tmp_path / "sweep.csv")
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "method,M,K,mse"
    assert lines[1] == "ksvd,4,1,2"
    assert lines[2] == "rksvd,4,1,1"
