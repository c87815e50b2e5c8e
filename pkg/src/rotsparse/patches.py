"""Image I/O, circular patch extraction, and synthetic dataset generation.

Images are ``(height, width)`` float arrays with values in [0, 1]; binary PGM
(``P5``) is the only file format.  Patches are vectorized over the disk mask
in the canonical row-major order of :func:`rotsparse.steerbasis.disk_mask`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .steerbasis import BasisSpec, _cubic_kernel, disk_mask
from .coding import basis_for

# Rotation angles of the synthetic test split (degrees); also the pool the
# augmentation training mode draws from.
TEST_ANGLES_DEG = (5.0, 10.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0)


@dataclass
class PatchSet:
    """Vectorized circular patches over a shared disk mask."""

    diameter: int
    offsets: np.ndarray            # (n_pixels, 2) mask offsets
    patches: np.ndarray            # (P, n_pixels) float64
    origins: np.ndarray | None = None  # (P, 3) int: image id, center row, center col
    normalized: bool = False
    n_dropped: int = 0             # zero-norm patches dropped at extraction

    def __len__(self) -> int:
        return self.patches.shape[0]


@dataclass
class LabeledImageSet:
    """Images with class labels, train/test split tags and rotation angles."""

    images: list[np.ndarray] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    splits: list[str] = field(default_factory=list)
    angles_deg: list[float] = field(default_factory=list)

    def add(self, image, label, split, angle_deg=0.0):
        self.images.append(image)
        self.labels.append(int(label))
        self.splits.append(split)
        self.angles_deg.append(float(angle_deg))

    def subset(self, split: str) -> "LabeledImageSet":
        out = LabeledImageSet()
        for img, lab, sp, ang in zip(self.images, self.labels, self.splits, self.angles_deg):
            if sp == split:
                out.add(img, lab, sp, ang)
        return out

    @property
    def n_classes(self) -> int:
        return max(self.labels) + 1 if self.labels else 0

    def __len__(self) -> int:
        return len(self.images)


# ---------------------------------------------------------------------------
# PGM

def load_pgm(path) -> np.ndarray:
    """Read a binary PGM (``P5``, maxval <= 65535) scaled to [0, 1]."""
    data = Path(path).read_bytes()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            if data[pos : pos + 1].isspace():
                pos += 1
            elif data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header at byte {start}")
        return data[start:pos]

    magic = token()
    if magic != b"P5":
        raise FormatError(f"{path}: expected P5 magic at byte 0, got {magic!r}")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError:
        raise FormatError(f"{path}: non-numeric header field near byte {pos}") from None
    if width <= 0 or height <= 0 or not 0 < maxval <= 65535:
        raise FormatError(f"{path}: bad dimensions/maxval {width}x{height}/{maxval}")
    pos += 1  # single whitespace after maxval
    bytes_per = 1 if maxval < 256 else 2
    need = width * height * bytes_per
    raw = data[pos : pos + need]
    if len(raw) < need:
        raise FormatError(
            f"{path}: truncated pixel data at byte {pos + len(raw)} "
            f"(expected {need} bytes)"
        )
    dtype = np.uint8 if bytes_per == 1 else ">u2"
    values = np.frombuffer(raw, dtype=dtype).astype(np.float64) / maxval
    return values.reshape(height, width)


def save_pgm(image: np.ndarray, path) -> None:
    """Write [0, 1] grayscale as 8-bit binary PGM (round half up)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    quantized = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(quantized.tobytes())


# ---------------------------------------------------------------------------
# extraction

def extract_patches(image: np.ndarray, diameter: int, stride: int = 1,
                    normalize: bool = True, image_id: int = 0) -> PatchSet:
    """All fully-contained disk patches on the stride grid.

    With ``normalize`` every patch is scaled to unit norm and patches with
    norm below 1e-12 are dropped (the count is kept on the result).
    """
    img = np.asarray(image, dtype=np.float64)
    height, width = img.shape
    if height < diameter or width < diameter:
        raise ValueError(f"image {height}x{width} smaller than patch diameter {diameter}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    offsets = disk_mask(diameter)
    half = (diameter - 1) // 2
    centers_r = np.arange(half, height - half, stride)
    centers_c = np.arange(half, width - half, stride)
    n_total = len(centers_r) * len(centers_c)
    patches = np.empty((n_total, len(offsets)))
    origins = np.empty((n_total, 3), dtype=np.int64)
    k = 0
    for r in centers_r:
        rows = r + offsets[:, 0]
        for c in centers_c:
            patches[k] = img[rows, c + offsets[:, 1]]
            origins[k] = (image_id, r, c)
            k += 1
    n_dropped = 0
    if normalize:
        norms = np.linalg.norm(patches, axis=1)
        keep = norms > 1e-12
        n_dropped = int((~keep).sum())
        patches = patches[keep] / norms[keep, None]
        origins = origins[keep]
    return PatchSet(diameter, offsets, patches, origins, normalize, n_dropped)


# ---------------------------------------------------------------------------
# synthetic data

def ridge_template(diameter: int) -> np.ndarray:
    """Unit-norm oriented ridge through the patch center.

    Gaussian cross profile of width ``diameter / 8`` (sigma = diameter / 16)
    and soft-clipped length ``0.9 * diameter``, smooth enough to survive the
    basis projection.
    """
    offsets = disk_mask(diameter)
    along = offsets[:, 1].astype(np.float64)
    across = offsets[:, 0].astype(np.float64)
    sigma = diameter / 16.0
    half_len = 0.45 * diameter
    profile = np.exp(-(across ** 2) / (2 * sigma ** 2))
    overhang = np.maximum(np.abs(along) - half_len, 0.0)
    taper = np.exp(-(overhang ** 2) / (2 * sigma ** 2))
    template = profile * taper
    return template / np.linalg.norm(template)


def synth_crosses(n_patches: int, diameter: int, seed: int = 0,
                  angle_pairs: np.ndarray | None = None) -> tuple[PatchSet, np.ndarray]:
    """Cross-shaped patches: two random rotations of one ridge template.

    Rotations use continuous-angle steering of the template coefficients;
    every patch is normalized to unit norm.  ``angle_pairs`` overrides the
    random angles (test hook).
    """
    basis = basis_for(BasisSpec(diameter))
    template = ridge_template(diameter)
    coeffs = basis.analyze(template)
    if angle_pairs is None:
        rng = np.random.default_rng(seed)
        angle_pairs = rng.uniform(0.0, 2 * np.pi, size=(n_patches, 2))
    angle_pairs = np.asarray(angle_pairs, dtype=np.float64)
    mixed = (
        np.exp(np.outer(angle_pairs[:, 0], basis.freqs) * -1j)
        + np.exp(np.outer(angle_pairs[:, 1], basis.freqs) * -1j)
    ) * coeffs
    patches = basis.synthesize(mixed)
    patches /= np.linalg.norm(patches, axis=1, keepdims=True)
    return (
        PatchSet(diameter, basis.offsets, patches, None, True, 0),
        template,
    )


def bicubic_rotate_image(image: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate a full image about its center (Keys bicubic, outside -> 0)."""
    img = np.asarray(image, dtype=np.float64)
    height, width = img.shape
    angle = np.deg2rad(angle_deg)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    rows, cols = np.mgrid[0:height, 0:width]
    y = rows - cy
    x = cols - cx
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    src_y = (-sin_a * x + cos_a * y) + cy
    src_x = (cos_a * x + sin_a * y) + cx
    base_y = np.floor(src_y).astype(int)
    base_x = np.floor(src_x).astype(int)
    out = np.zeros_like(img)
    padded = np.zeros((height + 4, width + 4))
    padded[2:-2, 2:-2] = img
    for dy in range(-1, 3):
        wy = _cubic_kernel(src_y - (base_y + dy))
        for dx in range(-1, 3):
            wx = _cubic_kernel(src_x - (base_x + dx))
            yy = np.clip(base_y + dy + 2, 0, height + 3)
            xx = np.clip(base_x + dx + 2, 0, width + 3)
            out += wy * wx * padded[yy, xx]
    return np.clip(out, 0.0, 1.0)


def _grating(size, freq, angle, phase):
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    axis = np.cos(angle) * rows + np.sin(angle) * cols
    return 0.5 + 0.45 * np.sin(freq * axis + phase)


def _checkerboard(size, freq, phase_r, phase_c):
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    return 0.5 + 0.45 * np.sign(np.sin(freq * rows + phase_r) * np.sin(freq * cols + phase_c))


def _ridge_field(size, rng, mean_angle=0.0, spread=0.08, n_segments=None):
    if n_segments is None:
        n_segments = max(20, int(60 * (size / 64.0) ** 2))
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for _ in range(n_segments):
        cy, cx = rng.uniform(0, size, 2)
        ang = mean_angle + rng.normal(0.0, spread)
        length = rng.uniform(10, 18) * size / 64.0
        width = rng.uniform(0.9, 1.3)
        cos_a, sin_a = np.cos(ang), np.sin(ang)
        along = cos_a * (cols - cx) + sin_a * (rows - cy)
        across = -sin_a * (cols - cx) + cos_a * (rows - cy)
        img += np.exp(-(across ** 2) / (2 * width ** 2)) * (np.abs(along) < length / 2)
    top = img.max()
    return img / top if top > 0 else img


def texture_image(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """One procedural texture sample; four visually distinct families."""
    family = label % 4
    scale = 1.0 + 0.5 * (label // 4)   # extra classes get scaled variants
    if family == 0:
        img = _grating(size, 0.55 * scale, 0.0, rng.uniform(0, 2 * np.pi))
    elif family == 1:
        img = _grating(size, 1.5 * scale, 0.0, rng.uniform(0, 2 * np.pi))
    elif family == 2:
        img = _checkerboard(size, 0.8 * scale, rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi))
    else:
        img = _ridge_field(size, rng)
    img = img + rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_textures(n_classes: int, count_per_class: int, size: int = 64,
                   seed: int = 0) -> LabeledImageSet:
    """Seeded multi-class texture set with a rotated test split.

    The train split holds upright samples; the test split holds fresh samples
    rotated by angles cycling through :data:`TEST_ANGLES_DEG` (bicubic
    rotation of a larger canvas, then center crop).
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    dataset = LabeledImageSet()
    big = int(np.ceil(size * 1.6))
    lo = (big - size) // 2
    for label in range(n_classes):
        for _ in range(count_per_class):
            dataset.add(texture_image(label, size, rng), label, "train", 0.0)
        for k in range(count_per_class):
            angle = TEST_ANGLES_DEG[k % len(TEST_ANGLES_DEG)]
            canvas = texture_image(label, big, rng)
            rotated = bicubic_rotate_image(canvas, angle)
            dataset.add(rotated[lo:lo + size, lo:lo + size], label, "test", angle)
    return dataset


def save_dataset(dataset: LabeledImageSet, root) -> None:
    """``<root>/<split>/<class>/<index>.pgm`` plus a manifest.csv."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    counters: dict[tuple[str, int], int] = {}
    rows = []
    for img, label, split, angle in zip(dataset.images, dataset.labels,
                                        dataset.splits, dataset.angles_deg):
        idx = counters.get((split, label), 0)
        counters[(split, label)] = idx + 1
        rel = Path(split) / str(label) / f"{idx}.pgm"
        (root / rel).parent.mkdir(parents=True, exist_ok=True)
        save_pgm(img, root / rel)
        rows.append((str(rel), label, split, angle))
    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "split", "angle_deg"])
        writer.writerows(rows)


def load_dataset(root) -> LabeledImageSet:
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FormatError(f"{manifest}: dataset manifest not found")
    dataset = LabeledImageSet()
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            dataset.add(load_pgm(root / row["path"]), int(row["label"]),
                        row["split"], float(row["angle_deg"]))
    if not dataset.images:
        raise FormatError(f"{manifest}: empty dataset")
    return dataset


# ---------------------------------------------------------------------------
# visualization

def montage(patches: np.ndarray, diameter: int, columns: int = 10) -> np.ndarray:
    """Tile masked patches into a grid image with 1-pixel separators.

    Each tile is min-max scaled; a constant tile renders mid-gray.
    """
    patches = np.atleast_2d(np.asarray(patches, dtype=np.float64))
    if patches.shape[0] == 0:
        raise ValueError("montage of an empty patch set")
    offsets = disk_mask(diameter)
    half = (diameter - 1) // 2
    columns = max(1, min(columns, patches.shape[0]))
    n_rows = -(-patches.shape[0] // columns)
    out = np.zeros((n_rows * (diameter + 1) + 1, columns * (diameter + 1) + 1))
    for k, patch in enumerate(patches):
        tile = np.zeros((diameter, diameter))
        tile[offsets[:, 0] + half, offsets[:, 1] + half] = patch
        lo, hi = tile.min(), tile.max()
        tile = np.full_like(tile, 0.5) if hi - lo < 1e-12 else (tile - lo) / (hi - lo)
        r, c = divmod(k, columns)
        out[r * (diameter + 1) + 1 : (r + 1) * (diameter + 1),
            c * (diameter + 1) + 1 : (c + 1) * (diameter + 1)] = tile
    return out
