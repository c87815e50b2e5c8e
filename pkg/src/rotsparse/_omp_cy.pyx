# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled orthogonal matching pursuit kernel.

Same contract as ``_omp_numpy.omp_batch``: greedy selection on the real part
of the correlation with a joint real-weight refit after every pick.  The
patch loop runs without the GIL, so chunked callers can overlap threads; BLAS
does the correlation scan (one zgemv per patch per pick).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt
from scipy.linalg.cython_blas cimport zgemv, zdotc
from scipy.linalg.cython_lapack cimport dposv

cnp.import_array()


cdef inline double _re_dotc(int n, double complex *x, double complex *y) nogil:
    cdef int one = 1
    cdef double complex v = zdotc(&n, x, &one, y, &one)
    return v.real


cdef int _solve_spd(int k, double *gram, double *rhs, double *scratch) nogil:
    """Solve the k x k symmetric system in-place into rhs; 0 on success."""
    cdef int info = 0, nrhs = 1, i, j, attempt
    cdef double ridge, trace
    for attempt in range(3):
        for i in range(k * k):
            scratch[i] = gram[i]
        if attempt > 0:
            trace = 0.0
            for i in range(k):
                trace += gram[i * k + i]
            ridge = (1e-12 if attempt == 1 else 1e-8) * (trace / k + 1.0)
            for i in range(k):
                scratch[i * k + i] += ridge
        dposv("U", &k, &nrhs, scratch, &k, rhs, &k, &info)
        if info == 0:
            return 0
    return info


def omp_batch(aug, targets, sparsity, double res_tol=1e-12, double corr_tol=1e-12):
    """Greedy coding of every row of ``targets`` against the rows of ``aug``."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] a = np.ascontiguousarray(aug, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] x = np.ascontiguousarray(np.atleast_2d(targets), dtype=np.complex128)
    cdef int n_aug = a.shape[0]
    cdef int ncol = a.shape[1] if n_aug else (x.shape[1] if x.shape[0] else 0)
    cdef int n_pat = x.shape[0]
    cdef int k_max = min(int(sparsity), n_aug)
    cdef int width = max(int(sparsity), 1)
    if k_max < 0:
        k_max = 0

    sel_arr = np.full((n_pat, width), -1, dtype=np.int64)
    w_arr = np.zeros((n_pat, width), dtype=np.float64)
    count_arr = np.zeros(n_pat, dtype=np.int64)
    err_arr = np.einsum("pb,pb->p", x, x.conj()).real.copy()
    if k_max == 0 or n_pat == 0 or ncol == 0:
        return sel_arr, w_arr, count_arr, err_arr

    cdef cnp.ndarray[cnp.int64_t, ndim=2] sel = sel_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=2] wts = w_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = count_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] errors = err_arr

    cdef cnp.ndarray[cnp.complex128_t, ndim=1] res_buf = np.empty(ncol, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] corr_buf = np.empty(n_aug, dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gram = np.empty(k_max * k_max, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(k_max * k_max, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rhs = np.empty(k_max, dtype=np.float64)

    cdef double complex *ap = <double complex *> a.data
    cdef double complex *xp = <double complex *> x.data
    cdef double complex *res = <double complex *> res_buf.data
    cdef double complex *corr = <double complex *> corr_buf.data
    cdef double complex alpha = 1.0 + 0.0j
    cdef double complex beta = 0.0 + 0.0j
    cdef double complex zcoef
    cdef int one = 1
    cdef int p, it, j, i, l, k, best, used
    cdef long jj
    cdef double val, best_val, resn
    cdef double res_tol2 = res_tol * res_tol

    with nogil:
        for p in range(n_pat):
            resn = errors[p]
            if sqrt(resn) <= res_tol:
                continue
            for i in range(ncol):
                res[i] = xp[p * ncol + i]
            k = 0
            for it in range(k_max):
                # corr = A^H res: the C-ordered (n_aug, ncol) buffer is a
                # column-major (ncol, n_aug) matrix.
                zgemv("C", &ncol, &n_aug, &alpha, ap, &ncol, res, &one, &beta, corr, &one)
                best = -1
                best_val = -1.0
                for j in range(n_aug):
                    val = fabs(corr[j].real)
                    if val > best_val:
                        used = 0
                        for i in range(k):
                            if sel[p, i] == j:
                                used = 1
                                break
                        if not used:
                            best_val = val
                            best = j
                if best < 0 or best_val <= corr_tol:
                    break
                sel[p, k] = best
                k += 1
                # realified normal equations over the selected rows
                for i in range(k):
                    jj = sel[p, i]
                    rhs[i] = _re_dotc(ncol, ap + jj * ncol, xp + p * ncol)
                    for l in range(i, k):
                        val = _re_dotc(ncol, ap + jj * ncol, ap + sel[p, l] * ncol)
                        gram[i * k + l] = val
                        gram[l * k + i] = val
                if _solve_spd(k, <double *> gram.data, <double *> rhs.data,
                              <double *> scratch.data) != 0:
                    # singular selection; keep previous weights, stop this patch
                    k -= 1
                    sel[p, k] = -1
                    break
                for i in range(ncol):
                    res[i] = xp[p * ncol + i]
                for i in range(k):
                    wts[p, i] = rhs[i]
                    zcoef = -rhs[i]
                    jj = sel[p, i]
                    for l in range(ncol):
                        res[l] = res[l] + zcoef * ap[jj * ncol + l]
                resn = _re_dotc(ncol, res, res)
                if resn <= res_tol2:
                    break
            counts[p] = k
            errors[p] = resn
    return sel_arr, w_arr, count_arr, err_arr
