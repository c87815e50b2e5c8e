"""Texture classification with per-class dictionaries.

One dictionary is learned per class; a patch is labeled by the dictionary
that codes it with the smallest squared error, patch labels are pooled into a
per-image histogram, and images are classified by the chi-squared nearest
training histogram.  Three training modes: ``standard`` (plain K-SVD),
``standard_aug`` (K-SVD on patches steered by random angles from the test
set), ``rotational`` (rotational K-SVD).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import coding
from .coding import Dictionary, LearnConfig, basis_for
from .errors import FormatError, TrainingError
from .patches import TEST_ANGLES_DEG, LabeledImageSet, extract_patches
from .steerbasis import BasisSpec

MODES = ("standard", "standard_aug", "rotational")


@dataclass(frozen=True)
class ClassifierParams:
    diameter: int = 11
    n_atoms: int = 10
    sparsity: int = 1
    n_angles: int = 24
    patches_per_image: int = 500
    iterations: int = 8
    stride: int = 1
    threads: int = 1


@dataclass
class ClassifierModel:
    params: ClassifierParams
    mode: str
    dictionaries: list[Dictionary]
    train_features: np.ndarray   # (n_train_images, n_classes) histograms
    train_labels: np.ndarray     # (n_train_images,)


@dataclass(frozen=True)
class SweepGrid:
    diameters: tuple[int, ...]
    sparsities: tuple[int, ...]
    atom_counts: tuple[int, ...]
    repeats: int = 20
    holdout_fraction: float = 0.88

    def __post_init__(self):
        if not (self.diameters and self.sparsities and self.atom_counts):
            raise ValueError("sweep lists must be non-empty")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def _sample_image_patches(image, params: ClassifierParams, rng) -> np.ndarray:
    """Seeded sample of normalized patches, without replacement when possible."""
    patch_set = extract_patches(image, params.diameter, stride=1, normalize=True)
    available = len(patch_set)
    want = params.patches_per_image
    if available == 0:
        return patch_set.patches
    if want >= available:
        if want > available:
            warnings.warn(
                f"requested {want} patches but only {available} available; using all",
                stacklevel=2,
            )
        return patch_set.patches
    pick = rng.choice(available, size=want, replace=False)
    pick.sort()
    return patch_set.patches[pick]


def train_class_dicts(train: LabeledImageSet, params: ClassifierParams,
                      mode: str, seed: int = 0) -> list[Dictionary]:
    """Learn one dictionary per class from pooled per-image patch samples."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    basis = basis_for(BasisSpec(params.diameter))
    rng = np.random.default_rng(seed)
    dictionaries = []
    for label in range(train.n_classes):
        pooled = [
            _sample_image_patches(img, params, rng)
            for img, lab in zip(train.images, train.labels)
            if lab == label
        ]
        pooled = [p for p in pooled if len(p)]
        if not pooled:
            raise TrainingError(f"class {label} has no usable training patches")
        coeffs = basis.analyze(np.vstack(pooled))
        config = LearnConfig(
            n_atoms=params.n_atoms, sparsity=params.sparsity,
            n_angles=params.n_angles, iterations=params.iterations,
            seed=seed + label, threads=params.threads,
        )
        if mode == "rotational":
            dictionary, _, _ = coding.rksvd_learn(basis, coeffs, config)
        else:
            if mode == "standard_aug":
                angles = rng.choice(np.deg2rad(TEST_ANGLES_DEG), size=len(coeffs))
                coeffs = coeffs * np.exp(np.outer(angles, basis.freqs) * -1j)
            dictionary, _, _ = coding.ksvd_learn(basis, coeffs, config)
        dictionaries.append(dictionary)
    return dictionaries


def _class_errors(coeffs: np.ndarray, dictionaries: list[Dictionary],
                  sparsity: int, n_angles: int, threads: int = 1) -> np.ndarray:
    """(n_classes, P) coding errors of every patch under every class dictionary."""
    errors = []
    for dictionary in dictionaries:
        basis = basis_for(dictionary.basis_spec)
        _, _, _, err = coding._code_arrays(
            dictionary.atoms, basis, coeffs, sparsity, n_angles, threads=threads
        )
        errors.append(err)
    return np.array(errors)


def label_patches(coeffs: np.ndarray, dictionaries: list[Dictionary],
                  sparsity: int, n_angles: int, threads: int = 1) -> np.ndarray:
    """Minimum-coding-error class per patch; ties take the lowest class."""
    return np.argmin(_class_errors(coeffs, dictionaries, sparsity, n_angles, threads), axis=0)


def patch_label(target: np.ndarray, dictionaries: list[Dictionary],
                sparsity: int, n_angles: int) -> int:
    """Class of one coefficient vector (argmin of per-class coding error)."""
    return int(label_patches(np.atleast_2d(target), dictionaries, sparsity, n_angles)[0])


def image_histogram(image: np.ndarray, model: ClassifierModel,
                    prerotate: int | None = None) -> np.ndarray:
    """Normalized class-label histogram of an image's patches.

    ``prerotate`` steers every extracted patch by that rotation index before
    labeling (used by the rotation-robustness checks).
    """
    params = model.params
    basis = basis_for(BasisSpec(params.diameter))
    patch_set = extract_patches(image, params.diameter, stride=params.stride, normalize=True)
    if len(patch_set) == 0:
        raise ValueError("image produced no usable patches")
    coeffs = basis.analyze(patch_set.patches)
    n_angles = params.n_angles if model.mode == "rotational" else 1
    if prerotate is not None:
        coeffs = coeffs * basis.steering_phases(prerotate, params.n_angles)
    labels = label_patches(coeffs, model.dictionaries, params.sparsity,
                           n_angles, threads=params.threads)
    hist = np.bincount(labels, minlength=len(model.dictionaries)).astype(np.float64)
    return hist / hist.sum()


def chi2(a: np.ndarray, b: np.ndarray) -> float:
    """Chi-squared histogram distance; 0/0 terms contribute zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("histogram lengths differ")
    if (a < 0).any() or (b < 0).any():
        raise ValueError("histograms must be non-negative")
    total = a + b
    safe = np.where(total > 0, total, 1.0)
    return float((((a - b) ** 2) / safe).sum())


def fit(train: LabeledImageSet, params: ClassifierParams, mode: str,
        seed: int = 0) -> ClassifierModel:
    """Train dictionaries and the training-image histogram features."""
    dictionaries = train_class_dicts(train, params, mode, seed)
    model = ClassifierModel(params, mode, dictionaries,
                            np.zeros((0, len(dictionaries))), np.zeros(0, dtype=np.int64))
    feats = [image_histogram(img, model) for img in train.images]
    model.train_features = np.array(feats)
    model.train_labels = np.array(train.labels, dtype=np.int64)
    return model


def classify(image: np.ndarray, model: ClassifierModel) -> int:
    """Chi-squared nearest-neighbor label; ties take the lowest train index."""
    hist = image_histogram(image, model)
    distances = np.array([chi2(hist, f) for f in model.train_features])
    return int(model.train_labels[int(np.argmin(distances))])


def accuracy(test: LabeledImageSet, model: ClassifierModel) -> float:
    hits = sum(classify(img, model) == lab for img, lab in zip(test.images, test.labels))
    return hits / len(test.images)


def _holdout_accuracy(features, labels, holdout_fraction, repeats, rng,
                      max_retries: int = 100) -> tuple[float, float]:
    """Hold out a fraction of images, classify them from the retained rest."""
    n = len(labels)
    n_hold = min(max(int(round(holdout_fraction * n)), 1), n - 1)
    scores = []
    for _ in range(repeats):
        for _ in range(max_retries):
            perm = rng.permutation(n)
            held, kept = perm[:n_hold], perm[n_hold:]
            if len(set(labels[kept])) == len(set(labels)):
                break
        else:
            raise TrainingError("hold-out split left a class empty in the retained set")
        hits = 0
        for i in held:
            dist = np.array([chi2(features[i], features[j]) for j in kept])
            hits += int(labels[kept[int(np.argmin(dist))]] == labels[i])
        scores.append(hits / len(held))
    return float(np.mean(scores)), float(np.std(scores))


def cross_validate(train: LabeledImageSet, grid: SweepGrid, mode: str,
                   seed: int = 0, base_params: ClassifierParams = ClassifierParams()):
    """Joint parameter sweep scored by repeated hold-out cross-validation.

    Dictionaries and features are computed once per setting; only the NN
    split is resampled across repeats.  Returns the winning parameters (ties:
    smaller n_atoms, then diameter, then sparsity) and the full table of
    ``(params, mean, std)`` rows.
    """
    rows = []
    best = None
    for n_atoms, diameter, sparsity in product(
        grid.atom_counts, grid.diameters, grid.sparsities
    ):
        params = replace(base_params, diameter=diameter, n_atoms=n_atoms,
                         sparsity=sparsity)
        model = fit(train, params, mode, seed)
        rng = np.random.default_rng(seed + 1)
        mean, std = _holdout_accuracy(model.train_features, model.train_labels,
                                      grid.holdout_fraction, grid.repeats, rng)
        rows.append((params, mean, std))
        key = (-mean, n_atoms, diameter, sparsity)
        if best is None or key < best[0]:
            best = (key, params)
    return best[1], rows


def save_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "K", "M", "mode", "accuracy_mean", "accuracy_std"])
        for params, mean, std, mode in rows:
            writer.writerow([params.diameter, params.sparsity, params.n_atoms,
                             mode, f"{mean:.17g}", f"{std:.17g}"])


def save_model(model: ClassifierModel, root) -> None:
    """Directory with one RSCDICT per class, the feature table, and params."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for label, dictionary in enumerate(model.dictionaries):
        coding.save_dictionary(dictionary, root / f"class_{label}.rsc")
    with open(root / "model.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "label"] + [f"h{c}" for c in range(len(model.dictionaries))])
        for i, (label, feat) in enumerate(zip(model.train_labels, model.train_features)):
            writer.writerow([i, int(label)] + [f"{v:.17g}" for v in feat])
    with open(root / "params.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        writer.writerow(["mode", model.mode])
        for key in ("diameter", "n_atoms", "sparsity", "n_angles",
                    "patches_per_image", "iterations", "stride"):
            writer.writerow([key, getattr(model.params, key)])


def load_model(root) -> ClassifierModel:
    root = Path(root)
    params_path = root / "params.csv"
    if not params_path.exists():
        raise FormatError(f"{params_path}: model parameter file not found")
    kv = {}
    with open(params_path, newline="") as fh:
        for row in csv.DictReader(fh):
            kv[row["key"]] = row["value"]
    mode = kv.pop("mode", "standard")
    params = ClassifierParams(**{k: int(v) for k, v in kv.items()})
    dictionaries = []
    for label in range(10_000):
        path = root / f"class_{label}.rsc"
        if not path.exists():
            break
        dictionaries.append(coding.load_dictionary(path))
    if not dictionaries:
        raise FormatError(f"{root}: no class dictionaries found")
    features, labels = [], []
    with open(root / "model.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["image", "label"]:
            raise FormatError(f"{root / 'model.csv'}: malformed feature table header")
        for row in reader:
            labels.append(int(row[1]))
            features.append([float(v) for v in row[2:]])
    return ClassifierModel(params, mode, dictionaries,
                           np.array(features), np.array(labels, dtype=np.int64))
