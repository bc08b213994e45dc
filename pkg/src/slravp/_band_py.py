"""Pure-numpy implementations of the banded hot kernels.

These mirror the compiled extension (same function names and contracts) and
are selected at import time when the extension is unavailable.

All kernels use the transposed lower band layout ``band[c, r] = A[c + r, c]``
with shape (N, bw + 1), C-contiguous.  This is byte-identical to the LAPACK
column-major band layout, so scipy/LAPACK routines consume ``band.T`` with
no copy, while column-oriented factorization and substitution sweeps run on
contiguous rows.

Index conventions (0-based): a stripe has nb column blocks of size d; layer
k of the structure contributes rows m_off[k]..m_off[k+1]-1 of the kernel R
and owns the inverse-weight slice gam[gam_off[k]:gam_off[k+1]] of length
m_vec[k] + nb - 1.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import cholesky_banded
from scipy.linalg.lapack import dtbtrs

IMPL = "python"


def assemble_elementwise(band, R, gam, gam_off, m_vec, col0, nb):
    """Accumulate the Gram band of one stripe for element-wise weights.

    The block at block-lag k >= 0 and block row i is R V R^T with V the
    shift-by-k matrix scaled by the inverse-weight window at offset i; the
    (a, b) entry over all i is a sliding correlation of the weight slice
    with the lag-k products of R's columns.  Entry (a, b) of block
    (i, i+k) lands at band[col0 + i*d + a, k*d + b - a].
    """
    d, m = R.shape
    s = band.shape[1] // d
    m_off = np.concatenate(([0], np.cumsum(m_vec)))
    for k in range(min(s, nb)):
        for li in range(len(m_vec)):
            ml = int(m_vec[li])
            if k >= ml:
                continue
            g = gam[gam_off[li]:gam_off[li + 1]]
            o = int(m_off[li])
            Ra = R[:, o + k:o + ml]
            Rb = R[:, o:o + ml - k]
            for a in range(d):
                for b in range(d):
                    if k == 0 and b < a:
                        continue
                    corr = np.correlate(g, Ra[a] * Rb[b], mode="valid")
                    band[col0 + a:col0 + nb * d:d,
                         k * d + b - a][:nb - k] += corr[k:nb]


def cholesky_generic(band, d, piv_tol):
    """Banded Cholesky (lower), returning (factor, failing_column_or_-1).

    Factor comes back in the same transposed band layout.
    """
    try:
        fac = cholesky_banded(band.T, lower=True)
    except np.linalg.LinAlgError:
        return band.copy(), _first_bad_pivot(band, piv_tol)
    piv = fac[0] ** 2
    if piv.min() <= piv_tol:
        return np.ascontiguousarray(fac.T), int(np.argmin(piv))
    return np.ascontiguousarray(fac.T), -1


def _first_bad_pivot(band, piv_tol):
    # recompute column by column to localize the failure
    L = band.copy()
    for j in range(band.shape[0]):
        info = _chol_col(L, j, piv_tol)
        if info >= 0:
            return info
    return band.shape[0] - 1


def _chol_col(L, j, piv_tol):
    """Factor column j in place (transposed layout); -1 or the failed j."""
    N, rows = L.shape
    bw = rows - 1
    for k in range(max(0, j - bw), j):
        ljk = L[k, j - k]
        if ljk != 0.0:
            hi = min(k + bw, N - 1)
            L[j, 0:hi - j + 1] -= ljk * L[k, j - k:hi - k + 1]
    piv = L[j, 0]
    if piv <= piv_tol:
        return j
    root = np.sqrt(piv)
    L[j, 0] = root
    take = min(bw, N - 1 - j)
    L[j, 1:take + 1] /= root
    if take < bw:
        L[j, take + 1:] = 0.0
    return -1


def cholesky_toeplitz(band, d, piv_tol, freeze_rtol):
    """Banded Cholesky for an exactly block-Toeplitz band.

    Columns are computed incrementally; once d consecutive column pairs at
    block period d agree within freeze_rtol (two full block rows), the
    repeated block is verified against one more freshly computed column and
    then tiled over the remaining columns.

    Returns (factor, failing_column_or_-1, frozen_at_column_or_-1).
    """
    N, rows = band.shape
    bw = rows - 1
    L = band.copy()
    # transient cap: beyond this, give up on freezing and factor generically
    cap = int(min(N, max(6 * d + 2, 96)))
    streak = 0
    j = 0
    while j < cap:
        info = _chol_col(L, j, piv_tol)
        if info >= 0:
            return L, info, -1
        if j >= d and j + bw < N:
            scale = np.abs(L[j]).max()
            if np.abs(L[j] - L[j - d]).max() <= freeze_rtol * scale:
                streak += 1
            else:
                streak = 0
            if streak >= 2 * d:
                jv = j + 1
                if jv >= N:
                    return L, -1, -1
                info = _chol_col(L, jv, piv_tol)
                if info >= 0:
                    return L, info, -1
                ref = L[jv - d]
                if np.abs(L[jv] - ref).max() <= \
                        10 * freeze_rtol * np.abs(ref).max():
                    for t in range(d):
                        start = jv + 1 + t
                        if start < N:
                            L[start::d] = L[start - d]
                    _zero_band_tail(L)
                    return L, -1, jv
                streak = 0
                j = jv
        j += 1
    if N <= cap:
        _zero_band_tail(L)
        return L, -1, -1
    # no convergence within the cap: generic factorization
    fac, info = cholesky_generic(band, d, piv_tol)
    return fac, info, -1


def _zero_band_tail(L):
    """Zero band slots that fall below the last matrix row."""
    N, rows = L.shape
    for c in range(max(0, N - rows + 1), N):
        L[c, N - c:] = 0.0


def solve_lower(factor, b):
    """Solve L x = b with the banded lower factor; b may have many columns."""
    b = np.asarray(b, dtype=float)
    one_d = b.ndim == 1
    x, info = dtbtrs(factor.T, b.reshape(b.shape[0], -1), uplo="L",
                     trans="N")
    if info != 0:
        raise np.linalg.LinAlgError("banded triangular solve failed")
    return x[:, 0] if one_d else x


def solve_lower_t(factor, b):
    """Solve L^T x = b with the banded lower factor."""
    b = np.asarray(b, dtype=float)
    one_d = b.ndim == 1
    x, info = dtbtrs(factor.T, b.reshape(b.shape[0], -1), uplo="L",
                     trans="T")
    if info != 0:
        raise np.linalg.LinAlgError("banded triangular solve failed")
    return x[:, 0] if one_d else x


def grad_second_term(T, R, Yl, Pl, gam, gam_off, m_vec):
    """Accumulate the banded double sum of the cost gradient for one stripe.

    T (d, m) accumulates sum_{|i-j| < s} y_j y_i^T R V(i,j); Yl (d, nb) and
    Pl = (R^T Y)|stripe (m, nb) are the stripe slices.
    """
    d, m = R.shape
    nb = Yl.shape[1]
    m_off = np.concatenate(([0], np.cumsum(m_vec)))
    for li in range(len(m_vec)):
        ml = int(m_vec[li])
        o = int(m_off[li])
        g = gam[gam_off[li]:gam_off[li + 1]]
        gwin = sliding_window_view(g, nb)          # gwin[t, i] = g[t + i]
        for k in range(min(ml, nb)):
            gk = gwin[k:ml, :nb - k]
            B1 = Pl[o + k:o + ml, :nb - k] * gk
            T[:, o:o + ml - k] += Yl[:, k:nb] @ B1.T
            if k > 0:
                B2 = Pl[o:o + ml - k, k:nb] * gk
                T[:, o + k:o + ml] += Yl[:, :nb - k] @ B2.T


def add_z_columns(Z, R, Yl, SM, gam, gA, gam_off, m_vec, row0, gcol0,
                  col_js, scale):
    """Fill the stripe rows of the Jacobian right-hand-side columns.

    For each requested kernel column j and each row index i the column
    holds (S^T(p))_{:,j} (x) e_i - scale * (z1_j (x) e_i + z2_ij) restricted
    to this stripe.  gA is the element-wise product of gam with the
    per-layer anti-diagonal sums of R^T Y (stripe layout identical to gam).
    """
    d, m = R.shape
    nb = Yl.shape[1]
    m_off = np.concatenate(([0], np.cumsum(m_vec)))
    layer_of = np.repeat(np.arange(len(m_vec)), m_vec)
    for jj, j in enumerate(col_js):
        li = int(layer_of[j])
        ml = int(m_vec[li])
        o = int(m_off[li])
        jloc = j - o
        g = gam[gam_off[li]:gam_off[li + 1]]
        gwin = sliding_window_view(g, nb)
        # shared row contribution: S(p)[j, cols] - scale * z1_j
        srow = SM[j, gcol0:gcol0 + nb] - \
            scale * gA[gam_off[li] + jloc:gam_off[li] + jloc + nb]
        ypad = np.zeros((d, ml - 1 + nb))
        ypad[:, jloc:jloc + nb] = Yl
        for i in range(d):
            ywin = sliding_window_view(ypad[i], nb)   # ywin[t, l] = ypad[t+l]
            M2 = gwin[:ml] * ywin[:ml]
            blk = R[:, o:o + ml] @ M2                 # (d, nb)
            col = jj * d + i
            Z[row0:row0 + nb * d, col] -= scale * blk.T.ravel()
            Z[row0 + i:row0 + nb * d:d, col] += srow


def cholesky_toeplitz_compact(trow, N, d, piv_tol, freeze_rtol, cap):
    """Factor a block-Toeplitz band given only its d template rows.

    Band row c of the matrix is trow[c % d] (clipped at the matrix edge).
    Computes factor rows until they freeze, without materializing the band.

    Returns (head, info, status): head holds the computed factor rows;
    rows c >= len(head) repeat head[len(head)-d:] cyclically.  status is
    0 when frozen, 1 when head covers the whole matrix, 2 when the
    transient cap was hit without convergence (caller must fall back).
    """
    rows = trow.shape[1]
    bw = rows - 1
    cap = int(min(N, max(cap, 6 * d + 2)))
    if cap + 1 + bw >= N:
        # too small to freeze safely; let the caller materialize
        if N <= cap:
            head = np.empty((N, rows))
            for j in range(N):
                head[j] = trow[j % d]
                info = _chol_col(head, j, piv_tol)
                if info >= 0:
                    return head, info, 1
            return head, -1, 1
        return np.empty((0, rows)), -1, 2
    head = np.empty((cap + 2, rows))
    streak = 0
    j = 0
    while j < cap:
        head[j] = trow[j % d]
        info = _chol_col(head, j, piv_tol)
        if info >= 0:
            return head, info, 2
        if j >= d:
            scale = np.abs(head[j]).max()
            if np.abs(head[j] - head[j - d]).max() <= freeze_rtol * scale:
                streak += 1
            else:
                streak = 0
            if streak >= 2 * d:
                jv = j + 1
                head[jv] = trow[jv % d]
                info = _chol_col(head, jv, piv_tol)
                if info >= 0:
                    return head, info, 2
                ref = head[jv - d]
                if np.abs(head[jv] - ref).max() <= \
                        10 * freeze_rtol * np.abs(ref).max():
                    return np.ascontiguousarray(head[:jv + 1]), -1, 0
                streak = 0
                j = jv
        j += 1
    return head[:cap], -1, 2


def _compact_row(head, d, c):
    hc = head.shape[0]
    if c < hc:
        return head[c]
    return head[hc - d + (c - hc) % d]


def solve_compact_lower(head, d, stripe_sizes, b):
    """Forward substitution with a compact cyclic factor, per stripe.

    stripe_sizes are the scalar sizes of the block-diagonal stripes; rows
    within each stripe restart the head/cycle pattern.
    """
    from scipy.signal import lfilter, lfiltic
    b = np.asarray(b, dtype=float)
    one_d = b.ndim == 1
    x = np.array(b.reshape(b.shape[0], -1), dtype=float, copy=True)
    rows = head.shape[1]
    bw = rows - 1
    hc = head.shape[0]
    lo = 0
    for nl in stripe_sizes:
        hi = lo + nl
        split = min(hc, nl)
        for c in range(split):
            L = head[c]
            v = x[lo + c] / L[0]
            x[lo + c] = v
            take = min(bw, nl - 1 - c)
            if take > 0:
                x[lo + c + 1:lo + c + 1 + take] -= np.outer(L[1:take + 1], v)
        if split < nl:
            if d != 1:
                raise NotImplementedError(
                    "compact cyclic solve supports d == 1 in this lane")
            a = head[hc - 1]
            past = x[lo + split - bw:lo + split][::-1] if split >= bw else \
                np.vstack([x[lo:lo + split][::-1],
                           np.zeros((bw - split, x.shape[1]))])
            tail = np.empty_like(x[lo + split:hi])
            for col in range(x.shape[1]):
                zi = lfiltic([1.0], a, past[:, col])
                tail[:, col] = lfilter([1.0], a, x[lo + split:hi, col],
                                       zi=zi)[0]
            x[lo + split:hi] = tail
        lo = hi
    return x[:, 0] if one_d else x


def solve_compact_lower_t(head, d, stripe_sizes, b):
    """Back substitution with a compact cyclic factor, per stripe."""
    from scipy.signal import lfilter
    b = np.asarray(b, dtype=float)
    one_d = b.ndim == 1
    x = np.array(b.reshape(b.shape[0], -1), dtype=float, copy=True)
    rows = head.shape[1]
    bw = rows - 1
    hc = head.shape[0]
    lo = 0
    for nl in stripe_sizes:
        hi = lo + nl
        split = min(hc, nl)
        if split < nl:
            if d != 1:
                raise NotImplementedError(
                    "compact cyclic solve supports d == 1 in this lane")
            a = head[hc - 1]
            # reversed recursion sees future x values, zero beyond the edge
            rev = x[lo + split:hi][::-1]
            out = np.empty_like(rev)
            for col in range(x.shape[1]):
                out[:, col] = lfilter([1.0], a, rev[:, col])
            x[lo + split:hi] = out[::-1]
        for c in range(split - 1, -1, -1):
            L = head[c]
            take = min(bw, nl - 1 - c)
            acc = x[lo + c].copy()
            if take > 0:
                acc -= L[1:take + 1] @ x[lo + c + 1:lo + c + 1 + take]
            x[lo + c] = acc / L[0]
        lo = hi
    return x[:, 0] if one_d else x


def mosaic_residual(r, p, R, m_vec, n_vec, param_off):
    """vec(R S(p)) for a mosaic Hankel structure by direct correlation."""
    d = R.shape[0]
    m_off = np.concatenate(([0], np.cumsum(m_vec)))
    col0 = 0
    for l in range(len(n_vec)):
        nb = int(n_vec[l])
        for k in range(len(m_vec)):
            blk = p[param_off[l, k]:param_off[l, k + 1]]
            o = int(m_off[k])
            ml = int(m_vec[k])
            for a in range(d):
                r[col0 + a:col0 + nb * d:d] += \
                    np.correlate(blk, R[a, o:o + ml], mode="valid")
        col0 += nb * d
    return r


def mosaic_term1(out, p, Y, m_vec, n_vec, param_off):
    """Y S(p)^T for a mosaic Hankel structure by direct correlation."""
    d = Y.shape[0]
    m_off = np.concatenate(([0], np.cumsum(m_vec)))
    col0 = 0
    for l in range(len(n_vec)):
        nb = int(n_vec[l])
        for k in range(len(m_vec)):
            blk = p[param_off[l, k]:param_off[l, k + 1]]
            o = int(m_off[k])
            ml = int(m_vec[k])
            for a in range(d):
                out[a, o:o + ml] += np.correlate(blk, Y[a, col0:col0 + nb],
                                                 mode="valid")
        col0 += nb
    return out
