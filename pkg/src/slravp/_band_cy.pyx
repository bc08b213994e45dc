# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled banded kernels: the hot loops of Gram assembly, the banded
(block-Toeplitz aware) Cholesky, triangular band solves, the gradient
double sum and the Jacobian right-hand-side columns.

Contracts and layouts match _band_py exactly: band arrays use the
transposed lower band layout band[c, r] = A[c + r, c] of shape (N, bw + 1),
which keeps every inner loop below on contiguous memory.
"""

import numpy as np

from libc.math cimport fabs, sqrt

IMPL = "cython"


def assemble_elementwise(double[:, ::1] band, double[:, ::1] R,
                         const double[::1] gam, gam_off_arr, m_vec_arr,
                         Py_ssize_t col0, Py_ssize_t nb):
    cdef const Py_ssize_t[::1] gam_off = np.ascontiguousarray(
        gam_off_arr, dtype=np.intp)
    cdef const Py_ssize_t[::1] m_vec = np.ascontiguousarray(
        m_vec_arr, dtype=np.intp)
    cdef Py_ssize_t d = R.shape[0]
    cdef Py_ssize_t s = band.shape[1] // d
    cdef Py_ssize_t q = m_vec.shape[0]
    cdef Py_ssize_t i, k, li, ml, o, goff, a, b, t, kmax
    cdef double acc, ra
    # column-block outer loop: writes stay within one contiguous band row
    for i in range(nb):
        kmax = nb - i
        if kmax > s:
            kmax = s
        for k in range(kmax):
            o = 0
            for li in range(q):
                ml = m_vec[li]
                goff = gam_off[li] + i + k
                if k < ml:
                    for a in range(d):
                        for b in range(d):
                            if k == 0 and b < a:
                                continue
                            acc = 0.0
                            for t in range(ml - k):
                                acc += R[a, o + t + k] * R[b, o + t] * \
                                    gam[goff + t]
                            band[col0 + i * d + a, k * d + b - a] += acc
                o += ml


cdef inline Py_ssize_t _chol_col(double[:, ::1] L, Py_ssize_t j,
                                 double piv_tol) noexcept:
    """Factor column j in place; returns j on a failed pivot, else -1."""
    cdef Py_ssize_t N = L.shape[0]
    cdef Py_ssize_t bw = L.shape[1] - 1
    cdef Py_ssize_t k, r, hi, take, kmin
    cdef double ljk, piv, root
    kmin = j - bw
    if kmin < 0:
        kmin = 0
    for k in range(kmin, j):
        ljk = L[k, j - k]
        if ljk != 0.0:
            hi = k + bw
            if hi > N - 1:
                hi = N - 1
            for r in range(hi - j + 1):
                L[j, r] -= ljk * L[k, j - k + r]
    piv = L[j, 0]
    if piv <= piv_tol:
        return j
    root = sqrt(piv)
    L[j, 0] = root
    take = bw
    if take > N - 1 - j:
        take = N - 1 - j
    for r in range(1, take + 1):
        L[j, r] /= root
    for r in range(take + 1, bw + 1):
        L[j, r] = 0.0
    return -1


def cholesky_generic(band, Py_ssize_t d, double piv_tol):
    L_arr = np.array(band, dtype=float, order="C", copy=True)
    cdef double[:, ::1] L = L_arr
    cdef Py_ssize_t N = L.shape[0]
    cdef Py_ssize_t j
    for j in range(N):
        if _chol_col(L, j, piv_tol) >= 0:
            return L_arr, j
    return L_arr, -1


cdef inline double _row_diff(double[:, ::1] L, Py_ssize_t j1,
                             Py_ssize_t j2) noexcept:
    cdef Py_ssize_t r
    cdef double diff = 0.0, x
    for r in range(L.shape[1]):
        x = fabs(L[j1, r] - L[j2, r])
        if x > diff:
            diff = x
    return diff


cdef inline double _row_amax(double[:, ::1] L, Py_ssize_t j) noexcept:
    cdef Py_ssize_t r
    cdef double amax = 0.0, x
    for r in range(L.shape[1]):
        x = fabs(L[j, r])
        if x > amax:
            amax = x
    return amax


def cholesky_toeplitz(band, Py_ssize_t d, double piv_tol, double freeze_rtol):
    """Banded Cholesky with freezing of converged repeated block rows."""
    L_arr = np.array(band, dtype=float, order="C", copy=True)
    cdef double[:, ::1] L = L_arr
    cdef Py_ssize_t N = L.shape[0]
    cdef Py_ssize_t bw = L.shape[1] - 1
    cdef Py_ssize_t j = 0, jv, streak = 0, c, r, start
    while j < N:
        if _chol_col(L, j, piv_tol) >= 0:
            return L_arr, j, -1
        if j >= d and j + bw < N:
            if _row_diff(L, j, j - d) <= freeze_rtol * _row_amax(L, j):
                streak += 1
            else:
                streak = 0
            if streak >= 2 * d:
                jv = j + 1
                if jv >= N:
                    return L_arr, -1, -1
                if _chol_col(L, jv, piv_tol) >= 0:
                    return L_arr, jv, -1
                if _row_diff(L, jv, jv - d) <= \
                        10.0 * freeze_rtol * _row_amax(L, jv - d):
                    for c in range(jv + 1, N):
                        for r in range(bw + 1):
                            L[c, r] = L[c - d, r]
                    start = N - bw
                    if start < 0:
                        start = 0
                    for c in range(start, N):
                        for r in range(N - c, bw + 1):
                            L[c, r] = 0.0
                    return L_arr, -1, jv
                streak = 0
                j = jv
        j += 1
    return L_arr, -1, -1


def solve_lower(factor, b):
    """Solve L x = b (forward substitution), b of shape (N,) or (N, k).

    Multiple right-hand sides sweep the factor once, vectorizing row
    updates across columns.
    """
    cdef double[:, ::1] L = np.ascontiguousarray(factor, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    one_d = b_arr.ndim == 1
    cdef Py_ssize_t N = L.shape[0]
    cdef Py_ssize_t bw = L.shape[1] - 1
    cdef Py_ssize_t col, j, r, hi, nrhs
    cdef double v, ljr, l0
    if one_d:
        x1_arr = np.array(b_arr, copy=True)
        x1 = _sl1(L, x1_arr, N, bw)
        return x1_arr
    x_arr = np.array(b_arr, order="C", copy=True)
    cdef double[:, ::1] x = x_arr
    nrhs = x.shape[1]
    for j in range(N):
        l0 = L[j, 0]
        for col in range(nrhs):
            x[j, col] /= l0
        hi = bw
        if hi > N - 1 - j:
            hi = N - 1 - j
        for r in range(1, hi + 1):
            ljr = L[j, r]
            if ljr != 0.0:
                for col in range(nrhs):
                    x[j + r, col] -= ljr * x[j, col]
    return x_arr


cdef int _sl1(double[:, ::1] L, double[::1] x, Py_ssize_t N,
              Py_ssize_t bw) noexcept:
    cdef Py_ssize_t j, r, hi
    cdef double v
    for j in range(N):
        v = x[j] / L[j, 0]
        x[j] = v
        if v != 0.0:
            hi = bw
            if hi > N - 1 - j:
                hi = N - 1 - j
            for r in range(1, hi + 1):
                x[j + r] -= v * L[j, r]
    return 0


def solve_lower_t(factor, b):
    """Solve L^T x = b (back substitution), factor swept once for many
    right-hand sides."""
    cdef double[:, ::1] L = np.ascontiguousarray(factor, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    one_d = b_arr.ndim == 1
    cdef Py_ssize_t N = L.shape[0]
    cdef Py_ssize_t bw = L.shape[1] - 1
    cdef Py_ssize_t col, j, r, hi, nrhs
    cdef double acc, ljr, l0
    if one_d:
        x1_arr = np.array(b_arr, copy=True)
        _slt1(L, x1_arr, N, bw)
        return x1_arr
    x_arr = np.array(b_arr, order="C", copy=True)
    cdef double[:, ::1] x = x_arr
    nrhs = x.shape[1]
    for j in range(N - 1, -1, -1):
        hi = bw
        if hi > N - 1 - j:
            hi = N - 1 - j
        for r in range(1, hi + 1):
            ljr = L[j, r]
            if ljr != 0.0:
                for col in range(nrhs):
                    x[j, col] -= ljr * x[j + r, col]
        l0 = L[j, 0]
        for col in range(nrhs):
            x[j, col] /= l0
    return x_arr


cdef int _slt1(double[:, ::1] L, double[::1] x, Py_ssize_t N,
               Py_ssize_t bw) noexcept:
    cdef Py_ssize_t j, r, hi
    cdef double acc
    for j in range(N - 1, -1, -1):
        acc = x[j]
        hi = bw
        if hi > N - 1 - j:
            hi = N - 1 - j
        for r in range(1, hi + 1):
            acc -= L[j, r] * x[j + r]
        x[j] = acc / L[j, 0]
    return 0


def grad_second_term(double[:, ::1] T, double[:, ::1] R, double[:, ::1] Yl,
                     double[:, ::1] Pl, const double[::1] gam, gam_off_arr,
                     m_vec_arr):
    cdef const Py_ssize_t[::1] gam_off = np.ascontiguousarray(
        gam_off_arr, dtype=np.intp)
    cdef const Py_ssize_t[::1] m_vec = np.ascontiguousarray(
        m_vec_arr, dtype=np.intp)
    cdef Py_ssize_t d = R.shape[0]
    cdef Py_ssize_t nb = Yl.shape[1]
    cdef Py_ssize_t q = m_vec.shape[0]
    cdef Py_ssize_t li, ml, o = 0, goff, k, c, i, a, kmax
    cdef double w
    for li in range(q):
        ml = m_vec[li]
        goff = gam_off[li]
        kmax = ml if ml < nb else nb
        for k in range(kmax):
            for c in range(ml - k):
                for i in range(nb - k):
                    w = Pl[o + c + k, i] * gam[goff + i + c + k]
                    if w != 0.0:
                        for a in range(d):
                            T[a, o + c] += Yl[a, i + k] * w
                    if k > 0:
                        w = Pl[o + c, i + k] * gam[goff + i + c + k]
                        if w != 0.0:
                            for a in range(d):
                                T[a, o + c + k] += Yl[a, i] * w
        o += ml


def add_z_columns(double[::1, :] Z, double[:, ::1] R, double[:, ::1] Yl,
                  double[:, ::1] SM, const double[::1] gam,
                  const double[::1] gA, gam_off_arr, m_vec_arr,
                  Py_ssize_t row0, Py_ssize_t gcol0, col_js_arr,
                  double scale):
    cdef const Py_ssize_t[::1] gam_off = np.ascontiguousarray(
        gam_off_arr, dtype=np.intp)
    cdef const Py_ssize_t[::1] m_vec = np.ascontiguousarray(
        m_vec_arr, dtype=np.intp)
    cdef const Py_ssize_t[::1] col_js = np.ascontiguousarray(
        col_js_arr, dtype=np.intp)
    cdef Py_ssize_t d = R.shape[0]
    cdef Py_ssize_t nb = Yl.shape[1]
    cdef Py_ssize_t njs = col_js.shape[0]
    cdef Py_ssize_t jj, j, li, ml, o, goff, jloc, i, col, l, t, t0, t1, kk, a
    cdef double w
    cdef double[::1] acc = np.zeros(R.shape[0])
    for jj in range(njs):
        j = col_js[jj]
        li = 0
        o = 0
        while j >= o + m_vec[li]:
            o += m_vec[li]
            li += 1
        ml = m_vec[li]
        goff = gam_off[li]
        jloc = j - o
        for i in range(d):
            col = jj * d + i
            for l in range(nb):
                # z2 block l: sum over kernel rows t of layer li with the
                # data column kk = l + t - jloc inside the stripe
                t0 = jloc - l
                if t0 < 0:
                    t0 = 0
                t1 = nb - l + jloc
                if t1 > ml:
                    t1 = ml
                for a in range(d):
                    acc[a] = 0.0
                for t in range(t0, t1):
                    kk = l + t - jloc
                    w = gam[goff + t + l] * Yl[i, kk]
                    if w != 0.0:
                        for a in range(d):
                            acc[a] += w * R[a, o + t]
                for a in range(d):
                    Z[row0 + l * d + a, col] -= scale * acc[a]
                Z[row0 + l * d + i, col] += SM[j, gcol0 + l] - \
                    scale * gA[goff + jloc + l]


def cholesky_toeplitz_compact(double[:, ::1] trow, Py_ssize_t N,
                              Py_ssize_t d, double piv_tol,
                              double freeze_rtol, Py_ssize_t cap):
    """Factor a block-Toeplitz band given only its d template rows.

    See the python lane for the contract; returns (head, info, status)
    with status 0 = frozen, 1 = complete head, 2 = caller must fall back.
    """
    cdef Py_ssize_t rows = trow.shape[1]
    cdef Py_ssize_t bw = rows - 1
    cdef Py_ssize_t j, jv, streak = 0, r
    if cap < 6 * d + 2:
        cap = 6 * d + 2
    if cap > N:
        cap = N
    head_arr = np.empty((cap + 2 if cap + 2 < N else N, rows))
    cdef double[:, ::1] head = head_arr
    if cap + 1 + bw >= N:
        if N <= cap:
            for j in range(N):
                for r in range(rows):
                    head[j, r] = trow[j % d, r]
                if _chol_col(head, j, piv_tol) >= 0:
                    return head_arr, j, 1
            return head_arr, -1, 1
        return np.empty((0, rows)), -1, 2
    j = 0
    while j < cap:
        for r in range(rows):
            head[j, r] = trow[j % d, r]
        if _chol_col(head, j, piv_tol) >= 0:
            return head_arr, j, 2
        if j >= d:
            if _row_diff(head, j, j - d) <= freeze_rtol * _row_amax(head, j):
                streak += 1
            else:
                streak = 0
            if streak >= 2 * d:
                jv = j + 1
                for r in range(rows):
                    head[jv, r] = trow[jv % d, r]
                if _chol_col(head, jv, piv_tol) >= 0:
                    return head_arr, jv, 2
                if _row_diff(head, jv, jv - d) <= \
                        10.0 * freeze_rtol * _row_amax(head, jv - d):
                    return np.ascontiguousarray(head_arr[:jv + 1]), -1, 0
                streak = 0
                j = jv
        j += 1
    return head_arr[:cap], -1, 2


def solve_compact_lower(double[:, ::1] head, Py_ssize_t d, stripe_sizes, b):
    """Forward substitution with a compact cyclic factor, per stripe."""
    cdef const Py_ssize_t[::1] sizes = np.ascontiguousarray(
        stripe_sizes, dtype=np.intp)
    b_arr = np.asarray(b, dtype=float)
    one_d = b_arr.ndim == 1
    x_arr = np.array(b_arr.reshape(b_arr.shape[0], -1), order="F", copy=True)
    cdef double[::1, :] x = x_arr
    cdef Py_ssize_t rows = head.shape[1]
    cdef Py_ssize_t bw = rows - 1
    cdef Py_ssize_t hc = head.shape[0]
    cdef Py_ssize_t nrhs = x.shape[1]
    cdef Py_ssize_t ls, lo = 0, nl, col, c, r, take, rowidx
    cdef double v
    for ls in range(sizes.shape[0]):
        nl = sizes[ls]
        for col in range(nrhs):
            for c in range(nl):
                rowidx = c if c < hc else hc - d + (c - hc) % d
                v = x[lo + c, col] / head[rowidx, 0]
                x[lo + c, col] = v
                take = bw
                if take > nl - 1 - c:
                    take = nl - 1 - c
                if v != 0.0:
                    for r in range(1, take + 1):
                        x[lo + c + r, col] -= v * head[rowidx, r]
        lo += nl
    return x_arr[:, 0] if one_d else x_arr


def solve_compact_lower_t(double[:, ::1] head, Py_ssize_t d, stripe_sizes, b):
    """Back substitution with a compact cyclic factor, per stripe."""
    cdef const Py_ssize_t[::1] sizes = np.ascontiguousarray(
        stripe_sizes, dtype=np.intp)
    b_arr = np.asarray(b, dtype=float)
    one_d = b_arr.ndim == 1
    x_arr = np.array(b_arr.reshape(b_arr.shape[0], -1), order="F", copy=True)
    cdef double[::1, :] x = x_arr
    cdef Py_ssize_t rows = head.shape[1]
    cdef Py_ssize_t bw = rows - 1
    cdef Py_ssize_t hc = head.shape[0]
    cdef Py_ssize_t nrhs = x.shape[1]
    cdef Py_ssize_t ls, lo = 0, nl, col, c, r, take, rowidx
    cdef double acc
    for ls in range(sizes.shape[0]):
        nl = sizes[ls]
        for col in range(nrhs):
            for c in range(nl - 1, -1, -1):
                rowidx = c if c < hc else hc - d + (c - hc) % d
                take = bw
                if take > nl - 1 - c:
                    take = nl - 1 - c
                acc = x[lo + c, col]
                for r in range(1, take + 1):
                    acc -= head[rowidx, r] * x[lo + c + r, col]
                x[lo + c, col] = acc / head[rowidx, 0]
        lo += nl
    return x_arr[:, 0] if one_d else x_arr


def mosaic_residual(double[::1] r, const double[::1] p, double[:, ::1] R,
                    m_vec_arr, n_vec_arr, param_off_arr):
    """vec(R S(p)) for a mosaic Hankel structure by direct correlation.

    param_off_arr is the (nstripes, q+1) table of block parameter offsets.
    """
    cdef const Py_ssize_t[::1] m_vec = np.ascontiguousarray(
        m_vec_arr, dtype=np.intp)
    cdef const Py_ssize_t[::1] n_vec = np.ascontiguousarray(
        n_vec_arr, dtype=np.intp)
    cdef const Py_ssize_t[:, ::1] param_off = np.ascontiguousarray(
        param_off_arr, dtype=np.intp)
    cdef Py_ssize_t d = R.shape[0]
    cdef Py_ssize_t q = m_vec.shape[0]
    cdef Py_ssize_t nstr = n_vec.shape[0]
    cdef Py_ssize_t l, k, a, j, t, nb, ml, o, po, col0 = 0
    cdef double acc
    for l in range(nstr):
        nb = n_vec[l]
        o = 0
        for k in range(q):
            ml = m_vec[k]
            po = param_off[l, k]
            for a in range(d):
                for j in range(nb):
                    acc = 0.0
                    for t in range(ml):
                        acc += R[a, o + t] * p[po + j + t]
                    r[col0 + j * d + a] += acc
            o += ml
        col0 += nb * d


def mosaic_term1(double[:, ::1] out, const double[::1] p, double[:, ::1] Y,
                 m_vec_arr, n_vec_arr, param_off_arr):
    """Y S(p)^T for a mosaic Hankel structure by direct correlation."""
    cdef const Py_ssize_t[::1] m_vec = np.ascontiguousarray(
        m_vec_arr, dtype=np.intp)
    cdef const Py_ssize_t[::1] n_vec = np.ascontiguousarray(
        n_vec_arr, dtype=np.intp)
    cdef const Py_ssize_t[:, ::1] param_off = np.ascontiguousarray(
        param_off_arr, dtype=np.intp)
    cdef Py_ssize_t d = Y.shape[0]
    cdef Py_ssize_t q = m_vec.shape[0]
    cdef Py_ssize_t nstr = n_vec.shape[0]
    cdef Py_ssize_t l, k, a, c, j, nb, ml, o, po, col0 = 0
    cdef double acc
    for l in range(nstr):
        nb = n_vec[l]
        o = 0
        for k in range(q):
            ml = m_vec[k]
            po = param_off[l, k]
            for a in range(d):
                for c in range(ml):
                    acc = 0.0
                    for j in range(nb):
                        acc += p[po + c + j] * Y[a, col0 + j]
                    out[a, o + c] += acc
            o += ml
        col0 += nb
