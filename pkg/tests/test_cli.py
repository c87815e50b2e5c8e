"""End-to-end CLI behavior: subcommands, exit codes, reproducibility."""

import numpy as np
import pytest

from rotsparse.cli import main
from rotsparse.patches import load_pgm, save_pgm, synth_textures, save_dataset


@pytest.fixture
def texture_png(tmp_path):
    rng = np.random.default_rng(3)
    img = rng.uniform(0.2, 0.8, (40, 40))
    path = tmp_path / "img.pgm"
    save_pgm(img, path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_version(capsys):
    code = main(["--version"])
    assert code == 0
    out = capsys.readouterr().out
    assert "rotsparse 0.1.0" in out
    assert "RSCDICT 1" in out


def test_usage_error_exit_code_1(capsys):
    code, _, err = run(capsys, "learn", "--method", "banana")
    assert code == 1
    assert "error" in err.lower()


def test_unknown_flag_exit_code_1(capsys):
    code, _, err = run(capsys, "synth", "crosses", "--frobnicate", "--out", "x")
    assert code == 1


def test_missing_file_exit_code_2(capsys, tmp_path):
    code, _, err = run(capsys, "code", "--dict", tmp_path / "none.rsc",
                       "--input", tmp_path / "none.pgm", "--out", tmp_path / "c.csv")
    assert code == 2
    assert "none.rsc" in err


def test_config_echo(capsys, texture_png, tmp_path):
    code, out, _ = run(capsys, "rotate", "--angle", "0", "--method", "nearest",
                       "--in", texture_png, "--out", tmp_path / "o.pgm",
                       "--seed", "7")
    assert code == 0
    header = out.splitlines()[0]
    assert header.startswith("config: ")
    assert "angle=0.0" in header
    assert "seed=7" in header


def test_rotate_zero_angle_identity(capsys, tmp_path):
    # a disk image already on the basis span: the steer path then acts as the
    # identity at angle 0 up to PGM quantization
    from rotsparse import BasisSpec
    from rotsparse.coding import basis_for

    basis = basis_for(BasisSpec(25))
    rng = np.random.default_rng(8)
    vec = basis.synthesize(basis.analyze(rng.uniform(0.3, 0.7, basis.n_pixels)))
    img = np.zeros((25, 25))
    img[12 + basis.offsets[:, 0], 12 + basis.offsets[:, 1]] = np.clip(vec, 0.0, 1.0)
    src_path = tmp_path / "disk.pgm"
    save_pgm(img, src_path)

    out_path = tmp_path / "same.pgm"
    code, _, _ = run(capsys, "rotate", "--angle", "0", "--method", "steer",
                     "--in", src_path, "--out", out_path)
    assert code == 0
    assert np.abs(load_pgm(out_path) - load_pgm(src_path)).max() <= 1.0 / 255 + 1e-12


def test_rotate_nearest_zero_angle_exact(capsys, texture_png, tmp_path):
    out_path = tmp_path / "same.pgm"
    code, _, _ = run(capsys, "rotate", "--angle", "0", "--method", "nearest",
                     "--in", texture_png, "--out", out_path)
    assert code == 0
    assert np.array_equal(load_pgm(texture_png), load_pgm(out_path))


def test_learn_then_code_roundtrip(capsys, texture_png, tmp_path):
    dict_path = tmp_path / "d.rsc"
    code, out, _ = run(capsys, "learn", "--method", "rksvd", "--n", "7",
                       "--atoms", "2", "--sparsity", "1", "--angles", "8",
                       "--iters", "2", "--input", texture_png,
                       "--out", dict_path, "--max-patches", "200",
                       "--threads", "1")
    assert code == 0
    assert "mse=" in out
    assert dict_path.exists()

    codes_path = tmp_path / "codes.csv"
    code, out, _ = run(capsys, "code", "--dict", dict_path, "--input", texture_png,
                       "--sparsity", "1", "--max-patches", "100",
                       "--out", codes_path, "--threads", "1")
    assert code == 0
    assert "mse=" in out
    lines = codes_path.read_text().splitlines()
    assert lines[0] == "patch,m,r,w"
    assert len(lines) > 1


def test_empty_dictionary_file_exit_2(capsys, texture_png, tmp_path):
    bad = tmp_path / "empty.rsc"
    bad.write_text("RSCDICT 1\nN 7 S 3 R 8 M 0\nT 1 6 7\n")
    code, _, err = run(capsys, "code", "--dict", bad, "--input", texture_png,
                       "--out", tmp_path / "c.csv")
    assert code == 2
    assert "empty.rsc" in err


def test_synth_textures_and_classify(capsys, tmp_path):
    data_dir = tmp_path / "data"
    code, _, _ = run(capsys, "synth", "textures", "--classes", "2", "--count", "2",
                     "--size", "24", "--out", data_dir, "--seed", "5")
    assert code == 0
    assert (data_dir / "manifest.csv").exists()

    model_dir = tmp_path / "model"
    code, _, _ = run(capsys, "classify", "train", "--data", data_dir,
                     "--model", model_dir, "--mode", "standard", "--n", "7",
                     "--atoms", "2", "--sparsity", "1", "--angles", "4",
                     "--ppi", "40", "--iters", "1", "--stride", "2",
                     "--threads", "1")
    assert code == 0
    code, out, _ = run(capsys, "classify", "test", "--data", data_dir,
                       "--model", model_dir, "--threads", "1")
    assert code == 0
    assert "accuracy=" in out


def test_synth_crosses_outputs(capsys, tmp_path):
    out_dir = tmp_path / "crosses"
    code, _, _ = run(capsys, "synth", "crosses", "--count", "8", "--n", "15",
                     "--out", out_dir)
    assert code == 0
    assert (out_dir / "crosses.npy").exists()
    assert (out_dir / "crosses_montage.pgm").exists()


def test_sweep_convergence_cli(capsys, tmp_path):
    out_dir = tmp_path / "crosses"
    run(capsys, "synth", "crosses", "--count", "30", "--n", "15", "--out", out_dir)
    sweep_dir = tmp_path / "sweep"
    code, _, _ = run(capsys, "sweep", "convergence", "--input", out_dir / "crosses.npy",
                     "--n", "15", "--atoms", "1", "--sparsity", "2", "--angles", "8",
                     "--iters", "2", "--out", sweep_dir, "--threads", "1")
    assert code == 0
    lines = (sweep_dir / "convergence.csv").read_text().splitlines()
    assert lines[0] == "iter,mse"


def test_bench_rotate_cli(capsys, tmp_path):
    out_dir = tmp_path / "bench"
    code, out, _ = run(capsys, "bench", "rotate", "--sizes", "11", "--count", "200",
                       "--runs", "1", "--out", out_dir)
    assert code == 0
    assert (out_dir / "bench_rotation.csv").exists()


def test_montage_cli(capsys, texture_png, tmp_path):
    dict_path = tmp_path / "d.rsc"
    run(capsys, "learn", "--method", "ksvd", "--n", "7", "--atoms", "2",
        "--sparsity", "1", "--iters", "1", "--input", texture_png,
        "--out", dict_path, "--max-patches", "100", "--threads", "1")
    out_path = tmp_path / "atoms.pgm"
    code, _, _ = run(capsys, "montage", "--in", dict_path, "--out", out_path,
                     "--columns", "2")
    assert code == 0
    img = load_pgm(out_path)
    assert img.shape == (9, 17)  # 1 row x 2 cols of 7-pixel tiles + separators


def test_learn_reproducible_across_runs(capsys, texture_png, tmp_path):
    args = ["learn", "--method", "rksvd", "--n", "7", "--atoms", "2",
            "--sparsity", "1", "--angles", "6", "--iters", "2",
            "--input", texture_png, "--max-patches", "150",
            "--seed", "3", "--threads", "1"]
    p1, p2 = tmp_path / "a.rsc", tmp_path / "b.rsc"
    assert run(capsys, *args, "--out", p1)[0] == 0
    assert run(capsys, *args, "--out", p2)[0] == 0
    assert p1.read_bytes() == p2.read_bytes()
