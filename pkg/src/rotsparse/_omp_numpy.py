"""Pure numpy orthogonal matching pursuit over a steered-atom matrix.

This is the fallback for the compiled kernel in ``_omp_cy``; both expose the
same ``omp_batch`` contract.  Selection is greedy on the real part of the
correlation; after every selection all weights are refit jointly by real
least squares (the realified normal equations: ``Re(S S^H) w = Re(S x^H)``).
"""

from __future__ import annotations

import numpy as np

DEFAULT_RES_TOL = 1e-12
DEFAULT_CORR_TOL = 1e-12
_CHUNK = 1024


def _refit(rows: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jointly refit real weights of the selected steered atoms."""
    gram = (rows @ rows.conj().T).real
    rhs = (rows.conj() @ target).real
    w = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return w, target - w @ rows


def omp_batch(
    aug: np.ndarray,
    targets: np.ndarray,
    sparsity: int,
    res_tol: float = DEFAULT_RES_TOL,
    corr_tol: float = DEFAULT_CORR_TOL,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Code every target against the rows of ``aug``.

    Parameters
    ----------
    aug : (n_aug, B) complex
        Steered atoms as rows (column ``m * R + r`` of the augmented
        dictionary, one row here).
    targets : (P, B) complex
        Coefficient vectors to code.
    sparsity : int
        Maximum selections per target; clamped to ``n_aug``.

    Returns
    -------
    sel : (P, sparsity) int64, -1 padded
    weights : (P, sparsity) float64
    counts : (P,) int64
    errors : (P,) float64, final squared residual norms
    """
    aug = np.ascontiguousarray(aug, dtype=np.complex128)
    targets = np.ascontiguousarray(np.atleast_2d(targets), dtype=np.complex128)
    n_aug = aug.shape[0]
    n_pat = targets.shape[0]
    k_max = max(0, min(int(sparsity), n_aug))
    width = max(int(sparsity), 1)

    sel = np.full((n_pat, width), -1, dtype=np.int64)
    weights = np.zeros((n_pat, width), dtype=np.float64)
    counts = np.zeros(n_pat, dtype=np.int64)
    errors = np.einsum("pb,pb->p", targets, targets.conj()).real.copy()
    if k_max == 0 or n_pat == 0:
        return sel, weights, counts, errors

    conj_aug_t = aug.conj().T
    for lo in range(0, n_pat, _CHUNK):
        hi = min(lo + _CHUNK, n_pat)
        _omp_chunk(
            aug, conj_aug_t, targets[lo:hi], k_max, res_tol, corr_tol,
            sel[lo:hi], weights[lo:hi], counts[lo:hi], errors[lo:hi],
        )
    return sel, weights, counts, errors


def _omp_chunk(aug, conj_aug_t, targets, k_max, res_tol, corr_tol,
               sel, weights, counts, errors):
    p = targets.shape[0]
    res = targets.copy()
    active = np.sqrt(errors) > res_tol
    rows_idx = np.arange(p)
    for it in range(k_max):
        if not active.any():
            break
        corr = np.abs((res @ conj_aug_t).real)
        for i in range(it):
            prev = sel[:, i]
            ok = prev >= 0
            corr[rows_idx[ok], prev[ok]] = -1.0
        best = np.argmax(corr, axis=1)
        best_val = corr[rows_idx, best]
        active &= best_val > corr_tol
        for pi in np.nonzero(active)[0]:
            k = counts[pi]
            sel[pi, k] = best[pi]
            counts[pi] = k + 1
            rows = aug[sel[pi, : k + 1]]
            w, r = _refit(rows, targets[pi])
            weights[pi, : k + 1] = w
            res[pi] = r
        errors[:] = np.einsum("pb,pb->p", res, res.conj()).real
        active &= np.sqrt(errors) > res_tol


def omp_batch_grouped(
    atoms: np.ndarray,
    freqs: np.ndarray,
    n_angles: int,
    targets: np.ndarray,
    sparsity: int,
    res_tol: float = DEFAULT_RES_TOL,
    corr_tol: float = DEFAULT_CORR_TOL,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """OMP with correlations computed per atom via a length-R inverse DFT.

    Functionally identical to materializing the augmented matrix and calling
    :func:`omp_batch`: grouping coefficients by frequency modulo ``n_angles``
    turns the R correlations of one atom into one inverse discrete Fourier
    transform.  Kept behind a flag and validated against the direct path.
    """
    atoms = np.ascontiguousarray(atoms, dtype=np.complex128)
    targets = np.ascontiguousarray(np.atleast_2d(targets), dtype=np.complex128)
    n_atoms, n_cols = atoms.shape
    big_r = int(n_angles)
    n_aug = n_atoms * big_r
    n_pat = targets.shape[0]
    k_max = max(0, min(int(sparsity), n_aug))
    width = max(int(sparsity), 1)

    sel = np.full((n_pat, width), -1, dtype=np.int64)
    weights = np.zeros((n_pat, width), dtype=np.float64)
    counts = np.zeros(n_pat, dtype=np.int64)
    errors = np.einsum("pb,pb->p", targets, targets.conj()).real.copy()
    if k_max == 0 or n_pat == 0:
        return sel, weights, counts, errors

    # 0/1 aggregation matrix: column residue tau gathers frequencies t = tau mod R.
    residues = np.mod(np.rint(freqs).astype(np.int64), big_r)
    gather = np.zeros((n_cols, big_r), dtype=np.complex128)
    gather[np.arange(n_cols), residues] = 1.0
    r_grid = np.arange(big_r)
    phase_rows = np.exp(np.outer(r_grid, freqs) * (-2j * np.pi / big_r))

    def steered_row(j: int) -> np.ndarray:
        return atoms[j // big_r] * phase_rows[j % big_r]

    for lo in range(0, n_pat, _CHUNK):
        hi = min(lo + _CHUNK, n_pat)
        tgt = targets[lo:hi]
        p = tgt.shape[0]
        res = tgt.copy()
        rows_idx = np.arange(p)
        active = np.sqrt(errors[lo:hi]) > res_tol
        for it in range(k_max):
            if not active.any():
                break
            corr = np.empty((p, n_aug), dtype=np.float64)
            for m in range(n_atoms):
                z = (res * atoms[m].conj()) @ gather          # (p, R)
                corr[:, m * big_r : (m + 1) * big_r] = np.abs(
                    big_r * np.fft.ifft(z, axis=1).real
                )
            for i in range(it):
                prev = sel[lo:hi, i]
                ok = prev >= 0
                corr[rows_idx[ok], prev[ok]] = -1.0
            best = np.argmax(corr, axis=1)
            best_val = corr[rows_idx, best]
            active &= best_val > corr_tol
            for pi in np.nonzero(active)[0]:
                k = counts[lo + pi]
                sel[lo + pi, k] = best[pi]
                counts[lo + pi] = k + 1
                rows = np.array([steered_row(j) for j in sel[lo + pi, : k + 1]])
                w, r = _refit(rows, tgt[pi])
                weights[lo + pi, : k + 1] = w
                res[pi] = r
            errors[lo:hi] = np.einsum("pb,pb->p", res, res.conj()).real
            active &= np.sqrt(errors[lo:hi]) > res_tol
    return sel, weights, counts, errors
