"""Regenerate the bundled oriented-texture image (data/oriented_texture_128.pgm).

The image is a dense field of short anti-aliased ridge segments at uniformly
random orientations: locally oriented everywhere, with orientation varying
across the image, which is the regime where rotational coding pays off.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from rotsparse.patches import save_pgm  # noqa: E402


def oriented_texture(size=128, n_segments=350, seed=11):
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size))
    rows, cols = np.mgrid[0:size, 0:size].astype(float)
    for _ in range(n_segments):
        cy, cx = rng.uniform(0, size, 2)
        angle = rng.uniform(0, np.pi)
        length = rng.uniform(8, 22)
        width = rng.uniform(0.8, 1.6)
        amp = rng.uniform(0.5, 1.0)
        cos_a, sin_a = np.cos(angle), np.sin(angle)
        along = cos_a * (cols - cx) + sin_a * (rows - cy)
        across = -sin_a * (cols - cx) + cos_a * (rows - cy)
        img += amp * np.exp(-(across**2) / (2 * width**2)) * (np.abs(along) < length / 2)
    img -= img.min()
    img /= img.max()
    return img


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "rotsparse" / "data"
    out.mkdir(parents=True, exist_ok=True)
    save_pgm(oriented_texture(), out / "oriented_texture_128.pgm")
    print(f"wrote {out / 'oriented_texture_128.pgm'}")
