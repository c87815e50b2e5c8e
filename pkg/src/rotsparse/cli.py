"""Command-line entry point.

Every pipeline is a subcommand with file-based inputs and outputs; each run
echoes its fully resolved configuration so results are reproducible from the
header line alone.  Exit codes: 0 success, 1 usage error, 2 data or format
error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, bench, coding, kernels, patches, texclass
from .coding import LearnConfig, basis_for
from .errors import ConsistencyError, FormatError, TrainingError
from .patches import LabeledImageSet
from .steerbasis import BasisSpec

FORMAT_VERSIONS = "RSCBASIS 1, RSCDICT 1"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _echo_config(args) -> None:
    skip = {"func"}
    pairs = [f"{k}={v}" for k, v in sorted(vars(args).items()) if k not in skip]
    print("config: " + " ".join(pairs))


def _load_gray(path) -> np.ndarray:
    return patches.load_pgm(path)


def _pool_input_patches(path, diameter, stride, cap, seed):
    """Patches from a single PGM or from every train image of a dataset dir."""
    path = Path(path)
    if path.is_dir():
        dataset = patches.load_dataset(path)
        stacks = [
            patches.extract_patches(img, diameter, stride, normalize=True).patches
            for img, split in zip(dataset.images, dataset.splits)
            if split == "train"
        ]
        if not stacks:
            raise FormatError(f"{path}: dataset has no train images")
        pool = np.vstack(stacks)
    else:
        pool = patches.extract_patches(_load_gray(path), diameter, stride,
                                       normalize=True).patches
    if cap is not None and len(pool) > cap:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(pool), size=cap, replace=False)
        pick.sort()
        pool = pool[pick]
    return pool


def _cmd_synth(args) -> int:
    if args.kind == "crosses":
        patch_set, template = patches.synth_crosses(args.count, args.n, seed=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        patches.save_pgm(patches.montage(patch_set.patches[:60], args.n, 10),
                         out / "crosses_montage.pgm")
        patches.save_pgm(patches.montage(template, args.n, 1), out / "template.pgm")
        np.save(out / "crosses.npy", patch_set.patches)
        print(f"wrote {len(patch_set)} patches to {out}")
    else:
        dataset = patches.synth_textures(args.classes, args.count, args.size, args.seed)
        patches.save_dataset(dataset, args.out)
        print(f"wrote {len(dataset)} images ({args.classes} classes) to {args.out}")
    return 0


def _cmd_learn(args) -> int:
    pool = _pool_input_patches(args.input, args.n, args.stride, args.max_patches, args.seed)
    basis = basis_for(BasisSpec(args.n))
    coeffs = basis.analyze(pool)
    config = LearnConfig(n_atoms=args.atoms, sparsity=args.sparsity,
                         n_angles=args.angles, iterations=args.iters,
                         seed=args.seed, threads=args.threads)
    if args.method == "ksvd":
        dictionary, _, report = coding.ksvd_learn(basis, coeffs, config)
    else:
        dictionary, _, report = coding.rksvd_learn(basis, coeffs, config)
    coding.save_dictionary(dictionary, args.out)
    final_mse = coding.MSE_SCALE * report.objective[-1] / len(coeffs)
    print(f"patches={len(coeffs)} iterations={args.iters} "
          f"mse={final_mse:.6g} (mse_scale={coding.MSE_SCALE:g}) "
          f"resets={report.n_resets} wall={report.wall_time:.2f}s")
    print(f"wrote dictionary to {args.out}")
    return 0


def _cmd_code(args) -> int:
    dictionary = coding.load_dictionary(args.dict)
    if dictionary.n_atoms == 0:
        raise FormatError(f"{args.dict}: dictionary holds no atoms")
    spec = dictionary.basis_spec.resolve()
    pool = _pool_input_patches(args.input, spec.diameter, args.stride,
                               args.max_patches, args.seed)
    basis = basis_for(dictionary.basis_spec)
    coeffs = basis.analyze(pool)
    codes, total = coding.code_set(dictionary, coeffs, args.sparsity,
                                   threads=args.threads)
    coding.save_codes(codes, args.out)
    print(f"patches={len(coeffs)} mse={coding.MSE_SCALE * total / len(coeffs):.6g} "
          f"(mse_scale={coding.MSE_SCALE:g})")
    print(f"wrote codes to {args.out}")
    return 0


def _cmd_rotate(args) -> int:
    image = _load_gray(args.infile)
    angle = np.deg2rad(args.angle)
    if args.method in ("nearest", "bicubic"):
        out = patches.bicubic_rotate_image(image, args.angle) if args.method == "bicubic" \
            else _rotate_nearest_image(image, args.angle)
    else:
        out = _rotate_steer_image(image, angle)
    patches.save_pgm(out, args.out)
    print(f"rotated {args.infile} by {args.angle} degrees ({args.method}) -> {args.out}")
    return 0


def _rotate_nearest_image(image, angle_deg):
    height, width = image.shape
    angle = np.deg2rad(angle_deg)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    rows, cols = np.mgrid[0:height, 0:width]
    y, x = rows - cy, cols - cx
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    src_r = np.rint(-sin_a * x + cos_a * y + cy).astype(int)
    src_c = np.rint(cos_a * x + sin_a * y + cx).astype(int)
    inside = (src_r >= 0) & (src_r < height) & (src_c >= 0) & (src_c < width)
    out = np.zeros_like(image)
    out[inside] = image[src_r[inside], src_c[inside]]
    return out


def _rotate_steer_image(image, angle):
    """Steer the largest centered disk patch; pixels outside the disk -> 0."""
    height, width = image.shape
    diameter = min(height, width)
    if diameter % 2 == 0:
        diameter -= 1
    basis = basis_for(BasisSpec(diameter))
    cy, cx = height // 2, width // 2
    vec = image[cy + basis.offsets[:, 0], cx + basis.offsets[:, 1]]
    rotated = basis.rotate_patch(vec, angle, "steer")
    out = np.zeros_like(image)
    out[cy + basis.offsets[:, 0], cx + basis.offsets[:, 1]] = np.clip(rotated, 0.0, 1.0)
    return out


def _cmd_classify(args) -> int:
    dataset = patches.load_dataset(args.data)
    if args.stage == "train":
        params = texclass.ClassifierParams(
            diameter=args.n, n_atoms=args.atoms, sparsity=args.sparsity,
            n_angles=args.angles, patches_per_image=args.ppi,
            iterations=args.iters, stride=args.stride, threads=args.threads,
        )
        model = texclass.fit(dataset.subset("train"), params, args.mode, args.seed)
        texclass.save_model(model, args.model)
        print(f"trained {args.mode} model ({dataset.subset('train').n_classes} classes) "
              f"-> {args.model}")
    else:
        model = texclass.load_model(args.model)
        test = dataset.subset(args.split)
        if len(test) == 0:
            raise FormatError(f"{args.data}: no images in split {args.split!r}")
        acc = texclass.accuracy(test, model)
        print(f"accuracy={acc:.6g} images={len(test)} split={args.split}")
    return 0


def _cmd_sweep(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "coding":
        image = _load_gray(args.input)
        result = bench.sweep_coding(
            image, args.n, args.atoms_list, args.sparsity_list,
            n_angles=args.angles, iterations=args.iters, seed=args.seed,
            cap=args.max_patches, threads=args.threads,
        )
        path = out / "sweep_coding.csv"
        bench.save_sweep_coding_csv(result, path)
    else:
        if args.input.endswith(".npy"):
            pool = np.load(args.input)
            diameter = args.n
        else:
            pool = _pool_input_patches(args.input, args.n, 1, args.max_patches, args.seed)
            diameter = args.n
        basis = basis_for(BasisSpec(diameter))
        coeffs = basis.analyze(pool)
        if args.kind == "convergence":
            series = bench.sweep_convergence(basis, coeffs, args.atoms, args.sparsity,
                                             args.angles, args.iters, seed=args.seed,
                                             threads=args.threads)
            path = out / "convergence.csv"
            bench.save_series_csv(series, path, key_name="iter")
        else:
            series = bench.sweep_angles(basis, coeffs, args.atoms, args.sparsity,
                                        args.angles_list, args.iters, seed=args.seed,
                                        threads=args.threads)
            path = out / "angles.csv"
            bench.save_series_csv(series, path, key_name="R")
    print(f"wrote {path}")
    return 0


def _cmd_bench(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "rotate":
        results = bench.bench_rotation(args.sizes, args.count, args.seed, args.runs)
        path = out / "bench_rotation.csv"
    else:
        results = bench.bench_backends(n_patches=args.count, seed=args.seed,
                                       runs=args.runs)
        path = out / "bench_backends.csv"
    bench.save_bench_csv(results, path)
    for r in results:
        print(f"{r.method:12s} N={r.diameter:3d} {r.patches_per_sec:12.0f} patches/s")
    print(f"wrote {path}")
    return 0


def _cmd_montage(args) -> int:
    src = Path(args.infile)
    if src.suffix == ".rsc":
        dictionary = coding.load_dictionary(src)
        basis = basis_for(dictionary.basis_spec)
        tiles = basis.synthesize(dictionary.atoms)
        diameter = dictionary.basis_spec.resolve().diameter
    elif src.suffix == ".npy":
        tiles = np.load(src)
        diameter = args.n
    else:
        raise FormatError(f"{src}: montage input must be a .rsc dictionary or .npy patches")
    patches.save_pgm(patches.montage(tiles, diameter, args.columns), args.out)
    print(f"wrote montage of {len(np.atleast_2d(tiles))} tiles to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rotsparse",
                     description="Rotational sparse coding of image patches")
    parser.add_argument("--version", action="version",
                        version=f"rotsparse {__version__} (formats: {FORMAT_VERSIONS})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=max(1, os.cpu_count() or 1),
                        help="1 forces the deterministic single-threaded path")
    common.add_argument("--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic data")
    p.add_argument("kind", choices=["crosses", "textures"])
    p.add_argument("--count", type=int, default=1000,
                   help="patches (crosses) or images per class per split (textures)")
    p.add_argument("--n", type=int, default=41, help="patch diameter for crosses")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--size", type=int, default=64, help="texture image size")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("learn", parents=[common], help="learn a dictionary")
    p.add_argument("--method", choices=["ksvd", "rksvd"], required=True)
    p.add_argument("--n", type=int, default=11, help="patch diameter")
    p.add_argument("--atoms", type=int, required=True)
    p.add_argument("--sparsity", type=int, required=True)
    p.add_argument("--angles", type=int, default=60)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--max-patches", type=int, default=None)
    p.add_argument("--input", required=True, help="PGM image or dataset directory")
    p.add_argument("--out", required=True, help="output dictionary (.rsc)")
    p.set_defaults(func=_cmd_learn)

    p = sub.add_parser("code", parents=[common], help="code patches with a dictionary")
    p.add_argument("--dict", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--sparsity", type=int, default=2)
    p.add_argument("--max-patches", type=int, default=None)
    p.add_argument("--out", required=True, help="output codes CSV")
    p.set_defaults(func=_cmd_code)

    p = sub.add_parser("rotate", parents=[common], help="rotate a PGM image")
    p.add_argument("--angle", type=float, required=True, help="degrees")
    p.add_argument("--method", choices=["steer", "nearest", "bicubic"], default="steer")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rotate)

    p = sub.add_parser("classify", parents=[common], help="texture classification")
    p.add_argument("stage", choices=["train", "test"])
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--mode", choices=list(texclass.MODES), default="rotational")
    p.add_argument("--n", type=int, default=11)
    p.add_argument("--atoms", type=int, default=10)
    p.add_argument("--sparsity", type=int, default=1)
    p.add_argument("--angles", type=int, default=24)
    p.add_argument("--ppi", type=int, default=500, help="patches per image")
    p.add_argument("--iters", type=int, default=8)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--split", default="test", help="dataset split to score")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("sweep", parents=[common], help="coding-error sweeps")
    p.add_argument("kind", choices=["coding", "convergence", "angles"])
    p.add_argument("--input", required=True, help="PGM image, dataset dir, or .npy patches")
    p.add_argument("--n", type=int, default=11)
    p.add_argument("--atoms", type=int, default=20)
    p.add_argument("--sparsity", type=int, default=2)
    p.add_argument("--atoms-list", type=int, nargs="+", default=[10, 20])
    p.add_argument("--sparsity-list", type=int, nargs="+", default=[1, 2])
    p.add_argument("--angles", type=int, default=60)
    p.add_argument("--angles-list", type=int, nargs="+", default=[1, 10, 20, 40, 60])
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--max-patches", type=int, default=4000)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("bench", parents=[common], help="timing benchmarks")
    p.add_argument("kind", choices=["rotate", "omp"])
    p.add_argument("--sizes", type=int, nargs="+", default=[11, 21, 31])
    p.add_argument("--count", type=int, default=10_000)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("montage", parents=[common], help="tile atoms or patches to a PGM")
    p.add_argument("--in", dest="infile", required=True, help=".rsc dictionary or .npy patches")
    p.add_argument("--n", type=int, default=11, help="patch diameter for .npy input")
    p.add_argument("--columns", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_montage)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _echo_config(args)
    if getattr(args, "verbose", False):
        print(f"kernel backend: {kernels.active_backend()}")
    try:
        return args.func(args)
    except (FormatError, TrainingError, ConsistencyError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
