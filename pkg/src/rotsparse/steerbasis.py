"""Discrete steerable basis of annular circular harmonics.

The basis is built over a circular pixel mask: each column samples
``exp(i*t*theta)`` on one radial ring of the disk, so image rotation acts on
the coefficients as a diagonal phase multiplication ("steering").  Rings have
disjoint pixel support, which makes the Gram matrix block-diagonal; within a
ring the sampled harmonics are only nearly orthogonal, so analysis goes
through a per-ring Cholesky solve of the Gram block (a biorthogonal pair of
bases).

Coordinate conventions, fixed for the whole package:

* pixel offsets are ``(row, col)`` relative to the patch center, enumerated in
  row-major order over the masked pixels (the canonical vectorization),
* the polar angle of an offset is ``atan2(row, col)``; rotation by a positive
  angle therefore turns the +col axis toward the +row axis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from math import ceil, pi

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConsistencyError

# A ring block is kept at cutoff T only while its Gram eigenvalues stay inside
# this window; otherwise the (+T, -T) column pair is dropped and T decreases.
# Discrete sampling aliases high angular frequencies on small rings (e.g. the
# 8-pixel ring of an 11-pixel disk repeats frequencies modulo 8), which would
# make the Gram singular at the nominal half-circumference cutoff.
_LAMBDA_MIN_KEEP = 0.05
_LAMBDA_MAX_KEEP = 1.999

_ROTATION_METHODS = ("steer", "nearest", "bicubic")


@dataclass(frozen=True)
class BasisSpec:
    """Construction parameters of a steerable basis.

    diameter    -- patch diameter in pixels, odd, >= 3
    n_rings     -- number of radial rings (default: diameter // 2)
    max_freqs   -- per-ring maximum angular frequency; default is the half
                   circumference of the ring measured at its mid radius,
                   ``ceil(pi * (s - 1/2) * diameter / (2 * n_rings))``
    n_angles    -- rotation discretization used by learning on this basis
    """

    diameter: int
    n_rings: int | None = None
    max_freqs: tuple[int, ...] | None = None
    n_angles: int = 1

    def __post_init__(self):
        n = self.diameter
        if n % 2 == 0 or n < 3:
            raise ValueError(f"patch diameter must be odd and >= 3, got {n}")
        if self.n_rings is not None and self.n_rings < 1:
            raise ValueError("n_rings must be >= 1")
        if self.n_angles < 1:
            raise ValueError("n_angles must be >= 1")
        if self.max_freqs is not None:
            object.__setattr__(self, "max_freqs", tuple(int(t) for t in self.max_freqs))
            if self.n_rings is not None and len(self.max_freqs) != self.n_rings:
                raise ValueError("max_freqs must have one entry per ring")
            if any(t < 0 for t in self.max_freqs):
                raise ValueError("max_freqs entries must be non-negative")

    def resolve(self) -> "BasisSpec":
        """Fill in defaulted fields and return a fully concrete spec."""
        rings = self.n_rings if self.n_rings is not None else self.diameter // 2
        freqs = self.max_freqs
        if freqs is None:
            freqs = default_max_freqs(self.diameter, rings)
        elif len(freqs) != rings:
            raise ValueError("max_freqs must have one entry per ring")
        return BasisSpec(self.diameter, rings, tuple(freqs), self.n_angles)


def default_max_freqs(diameter: int, n_rings: int) -> tuple[int, ...]:
    """Half circumference of each ring at its mid radius, rounded up."""
    width = diameter / (2.0 * n_rings)
    return tuple(int(ceil(pi * (s - 0.5) * width)) for s in range(1, n_rings + 1))


def disk_mask(diameter: int) -> np.ndarray:
    """Integer (row, col) offsets inside the disk of radius ``diameter / 2``.

    Offsets are enumerated row-major; this ordering is the canonical patch
    vectorization used everywhere (file formats included).
    """
    n = diameter
    if not isinstance(n, (int, np.integer)) or n % 2 == 0 or n < 3:
        raise ValueError(f"patch diameter must be an odd integer >= 3, got {n!r}")
    half = (n - 1) // 2
    limit = (n / 2.0) ** 2
    offsets = [
        (i, j)
        for i in range(-half, half + 1)
        for j in range(-half, half + 1)
        if i * i + j * j <= limit
    ]
    return np.array(offsets, dtype=np.int64)


class SteerableBasis:
    """Sampled annular circular harmonics with a precomputed analysis solve.

    Attributes
    ----------
    spec : BasisSpec
        Resolved construction parameters.
    offsets : (n_pixels, 2) int array
        Disk-mask offsets, canonical order.
    columns : (n_pixels, n_columns) complex array
        Unit-norm sampled harmonics, grouped by ring, frequencies -T..T.
    labels : (n_columns, 2) int array
        Per-column ``(ring, frequency)``; rings are 1-based.
    max_freqs : tuple of int
        Effective per-ring cutoffs actually kept (-1 for a ring with no
        pixels); ``spec.max_freqs`` holds the requested ones.
    """

    def __init__(self, spec, offsets, columns, labels, max_freqs, ring_eigs,
                 n_dropped_columns, n_empty_rings):
        self.spec = spec
        self.offsets = offsets
        self.columns = columns
        self.labels = labels
        self.max_freqs = max_freqs
        self.ring_eigs = ring_eigs
        self.n_dropped_columns = n_dropped_columns
        self.n_empty_rings = n_empty_rings
        self.freqs = labels[:, 1].astype(np.float64)
        self._ring_slices = _ring_slices(labels)
        self._cho = [
            (sl, sla.cho_factor(columns[:, sl].conj().T @ columns[:, sl]))
            for sl in self._ring_slices
        ]

    @property
    def n_pixels(self) -> int:
        return self.columns.shape[0]

    @property
    def n_columns(self) -> int:
        return self.columns.shape[1]

    @cached_property
    def conjugate_pair_index(self) -> np.ndarray:
        """Index array mapping column (ring, t) to column (ring, -t)."""
        pos = {(s, t): i for i, (s, t) in enumerate(map(tuple, self.labels))}
        return np.array([pos[(s, -t)] for s, t in self.labels], dtype=np.int64)

    def analyze(self, patches: np.ndarray) -> np.ndarray:
        """Biorthogonal coordinates of real patches.

        ``patches`` is one vector of length ``n_pixels`` or a ``(P, n_pixels)``
        stack; the result has matching shape with ``n_columns`` complex
        entries per patch.
        """
        x = np.asarray(patches, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.n_pixels:
            raise ValueError(
                f"patch length {x.shape[1]} does not match mask size {self.n_pixels}"
            )
        coeffs = x @ np.conj(self.columns)
        for sl, cho in self._cho:
            coeffs[:, sl] = sla.cho_solve(cho, coeffs[:, sl].T).T
        return coeffs[0] if single else coeffs

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Real patches from coefficients.

        For conjugate-symmetric input the imaginary part of the synthesis is
        numerical dust; it is checked and discarded.  A large imaginary
        residue on symmetric input raises :class:`ConsistencyError`.
        """
        c = np.asarray(coeffs, dtype=np.complex128)
        single = c.ndim == 1
        c = np.atleast_2d(c)
        if c.shape[1] != self.n_columns:
            raise ValueError(
                f"coefficient length {c.shape[1]} does not match basis size {self.n_columns}"
            )
        full = c @ self.columns.T
        if self.is_conjugate_symmetric(c):
            scale = max(1.0, float(np.abs(full).max(initial=0.0)))
            worst = float(np.abs(full.imag).max(initial=0.0))
            if worst > 1e-6 * scale:
                raise ConsistencyError(
                    f"imaginary residue {worst:.3e} on conjugate-symmetric input"
                )
        out = full.real
        return out[0] if single else out

    def is_conjugate_symmetric(self, coeffs: np.ndarray, tol: float = 1e-8) -> bool:
        c = np.atleast_2d(np.asarray(coeffs, dtype=np.complex128))
        flipped = np.conj(c[:, self.conjugate_pair_index])
        scale = max(1.0, float(np.abs(c).max(initial=0.0)))
        return bool(np.abs(c - flipped).max(initial=0.0) <= tol * scale)

    def steering_phases(self, rotation_index: int, n_angles: int) -> np.ndarray:
        """Unit-modulus diagonal implementing rotation by 2*pi*r/R.

        Entry for a column of frequency t is ``exp(-1j * t * 2*pi*r/R)``.
        """
        r, big_r = int(rotation_index), int(n_angles)
        if big_r < 1:
            raise ValueError("n_angles must be >= 1")
        if not 0 <= r < big_r:
            raise ValueError(f"rotation index {r} outside [0, {big_r})")
        return np.exp(self.freqs * (-2j * pi * r / big_r))

    def continuous_phases(self, angle: float) -> np.ndarray:
        """Steering diagonal for an arbitrary angle in radians."""
        return np.exp(self.freqs * (-1j * angle))

    def phase_table(self, n_angles: int) -> np.ndarray:
        """(n_angles, n_columns) stack of all discrete steering diagonals."""
        r = np.arange(int(n_angles))
        return np.exp(np.outer(r, self.freqs) * (-2j * pi / n_angles))

    def rotate_patch(self, patch: np.ndarray, angle: float, method: str = "steer") -> np.ndarray:
        """Rotate one masked patch by ``angle`` radians.

        ``steer`` analyzes, applies the continuous steering diagonal, and
        synthesizes (exact on the basis span).  ``nearest`` and ``bicubic``
        apply a sparse interpolation operator; source samples falling outside
        the disk contribute zero.
        """
        if method not in _ROTATION_METHODS:
            raise ValueError(f"unknown rotation method {method!r}")
        x = np.asarray(patch, dtype=np.float64)
        if x.shape != (self.n_pixels,):
            raise ValueError("patch length does not match mask size")
        if method == "steer":
            return self.synthesize(steer(self.analyze(x), self.continuous_phases(angle)))
        op = build_interp_rotation(self.spec.diameter, angle, method)
        return op @ x

    def export_text(self, path) -> None:
        """Textual dump of the basis (debugging aid; RSCBASIS format)."""
        spec = self.spec
        with open(path, "w") as fh:
            fh.write("RSCBASIS 1\n")
            fh.write(f"N {spec.diameter} S {spec.n_rings} R {spec.n_angles}\n")
            fh.write("T " + " ".join(str(t) for t in self.max_freqs) + "\n")
            for col, (s, t) in zip(self.columns.T, self.labels):
                parts = [str(s), str(t)]
                for v in col:
                    parts.append(f"{v.real:.17g}")
                    parts.append(f"{v.imag:.17g}")
                fh.write(" ".join(parts) + "\n")


def _ring_slices(labels: np.ndarray) -> list[slice]:
    slices = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i, 0] != labels[start, 0]:
            slices.append(slice(start, i))
            start = i
    return slices


def _ring_membership(radii: np.ndarray, diameter: int, n_rings: int) -> list[np.ndarray]:
    """Pixel index sets per ring; the outermost ring includes its outer edge."""
    width = diameter / (2.0 * n_rings)
    members = []
    for s in range(1, n_rings + 1):
        lo, hi = width * (s - 1), width * s
        if s == n_rings:
            sel = (radii >= lo) & (radii <= diameter / 2.0)
        else:
            sel = (radii >= lo) & (radii < hi)
        members.append(np.nonzero(sel)[0])
    return members


def build_basis(spec: BasisSpec) -> SteerableBasis:
    """Sample, normalize and stack the harmonics; precompute analysis factors.

    Rings whose sampled block would be rank deficient (aliased high
    frequencies) are trimmed pairwise from the top until the block Gram
    eigenvalues fall inside a safe window, so the full Gram is always
    invertible.  Rings containing no pixels are dropped with a warning.
    """
    spec = spec.resolve()
    offsets = disk_mask(spec.diameter)
    radii = np.hypot(offsets[:, 0], offsets[:, 1])
    angles = np.arctan2(offsets[:, 0], offsets[:, 1])
    members = _ring_membership(radii, spec.diameter, spec.n_rings)

    columns: list[np.ndarray] = []
    labels: list[tuple[int, int]] = []
    effective: list[int] = []
    ring_eigs: list[tuple[float, float]] = []
    n_dropped = 0
    n_empty = 0

    for s, sel in enumerate(members, start=1):
        requested = spec.max_freqs[s - 1]
        if len(sel) == 0:
            n_empty += 1
            n_dropped += 2 * requested + 1
            effective.append(-1)
            ring_eigs.append((np.nan, np.nan))
            continue
        theta = angles[sel]
        # The polar angle is undefined at the origin; the rotation-equivariant
        # sample of a t != 0 harmonic there is 0.  A ring holding only the
        # center pixel therefore yields all-zero columns for t != 0, which are
        # dropped in conjugate pairs.
        center = radii[sel] == 0.0
        block = None
        for t_eff in range(requested, -1, -1):
            cols, labs = [], []
            for t in range(-t_eff, t_eff + 1):
                col = np.exp(1j * t * theta)
                if t != 0:
                    col = np.where(center, 0.0, col)
                norm = np.linalg.norm(col)
                if norm == 0.0:
                    continue
                full = np.zeros(len(offsets), dtype=np.complex128)
                full[sel] = col / norm
                cols.append(full)
                labs.append((s, t))
            cand = np.array(cols).T
            eigs = np.linalg.eigvalsh(cand.conj().T @ cand)
            if eigs[0] >= _LAMBDA_MIN_KEEP and eigs[-1] <= _LAMBDA_MAX_KEEP:
                block = cand
                ring_eigs.append((float(eigs[0]), float(eigs[-1])))
                break
        if block is None:  # pragma: no cover - t_eff = 0 always passes
            raise AssertionError("ring reduction failed to terminate")
        n_dropped += 2 * requested + 1 - block.shape[1]
        effective.append(max(t for _, t in labs))
        columns.append(block)
        labels.extend(labs)

    if n_empty:
        warnings.warn(
            f"{n_empty} ring(s) of {spec.n_rings} contain no pixels and were dropped",
            stacklevel=2,
        )
    if not columns:
        raise ValueError("all basis columns were dropped; spec has no usable rings")

    return SteerableBasis(
        spec=spec,
        offsets=offsets,
        columns=np.hstack(columns),
        labels=np.array(labels, dtype=np.int64),
        max_freqs=tuple(effective),
        ring_eigs=ring_eigs,
        n_dropped_columns=n_dropped,
        n_empty_rings=n_empty,
    )


def steer(coeffs: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Apply a steering diagonal to coefficients (entrywise product)."""
    c = np.asarray(coeffs)
    p = np.asarray(phases)
    if c.shape[-1] != p.shape[-1]:
        raise ValueError(f"coefficient length {c.shape[-1]} != phase length {p.shape[-1]}")
    return c * p


def _cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution weights."""
    x = np.abs(x)
    out = np.zeros_like(x)
    near = x < 1
    mid = (x >= 1) & (x < 2)
    out[near] = (a + 2) * x[near] ** 3 - (a + 3) * x[near] ** 2 + 1
    out[mid] = a * (x[mid] ** 3 - 5 * x[mid] ** 2 + 8 * x[mid] - 4)
    return out


def build_interp_rotation(diameter: int, angle: float, method: str) -> sp.csr_matrix:
    """Sparse rotation-by-interpolation operator over the disk pixels.

    The row for destination offset k holds interpolation weights at the
    source location ``rot(-angle) @ k``; taps outside the disk are omitted
    (source value taken as zero).
    """
    if method not in ("nearest", "bicubic"):
        raise ValueError(f"unknown interpolation method {method!r}")
    offsets = disk_mask(diameter)
    index = {(int(i), int(j)): k for k, (i, j) in enumerate(offsets)}
    n = len(offsets)
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    # Source point of (row, col): inverse rotation in the (col, row) frame.
    src_col = cos_a * offsets[:, 1] + sin_a * offsets[:, 0]
    src_row = -sin_a * offsets[:, 1] + cos_a * offsets[:, 0]

    rows, cols, vals = [], [], []
    if method == "nearest":
        near_r = np.rint(src_row).astype(int)
        near_c = np.rint(src_col).astype(int)
        for k in range(n):
            j = index.get((near_r[k], near_c[k]))
            if j is not None:
                rows.append(k)
                cols.append(j)
                vals.append(1.0)
    else:
        base_r = np.floor(src_row).astype(int)
        base_c = np.floor(src_col).astype(int)
        taps = np.arange(-1, 3)
        for k in range(n):
            wr = _cubic_kernel(src_row[k] - (base_r[k] + taps))
            wc = _cubic_kernel(src_col[k] - (base_c[k] + taps))
            for di, wri in zip(taps, wr):
                if wri == 0.0:
                    continue
                for dj, wcj in zip(taps, wc):
                    w = wri * wcj
                    if w == 0.0:
                        continue
                    j = index.get((base_r[k] + di, base_c[k] + dj))
                    if j is not None:
                        rows.append(k)
                        cols.append(j)
                        vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
