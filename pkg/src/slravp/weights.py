"""Weighted 2-norms on the parameter space, including infinite weights that
pin parameters to their data values.

Three representations are supported: diagonal weights (entries in (0, inf]),
a full symmetric positive definite matrix, and a banded inverse supplied as
the lower band of the inverse matrix.  Infinite diagonal weights are turned
into zero inverse weights immediately so that no infinities reach the
numerical kernels.
"""

import numpy as np
from scipy.linalg import cholesky_banded, cho_solve_banded
from scipy.linalg.blas import dtbmv

from .errors import InputError


class DiagonalWeights:
    """Element-wise weights w_i in (0, inf]; w_i = inf fixes parameter i."""

    kind = "diagonal"

    def __init__(self, w):
        w = np.asarray(w, dtype=float)
        if w.ndim != 1:
            raise InputError("diagonal weights must be a vector")
        if np.any(np.isnan(w)) or np.any(w <= 0):
            raise InputError("diagonal weights must be positive (inf allowed)")
        self.w = w
        self.nparam = w.size
        self.fixed = np.isinf(w)
        # gamma_i = 1/w_i with inf -> 0; these are the only values kernels see
        self.gamma = np.where(self.fixed, 0.0, 1.0 / w)
        self.sqrt_w_inv = np.sqrt(self.gamma)

    def norm_sq(self, v):
        v = np.asarray(v, dtype=float)
        if np.any(v[self.fixed] != 0.0):
            return np.inf
        free = ~self.fixed
        return float(np.dot(self.w[free], v[free] ** 2))

    def reparametrize(self, p, dp):
        """p - sqrt(W)^{-1} dp; fixed entries of p are returned unchanged."""
        return np.asarray(p, dtype=float) - self.sqrt_w_inv * np.asarray(dp)

    def sqrt_winv_t_apply(self, v):
        return self.sqrt_w_inv * np.asarray(v, dtype=float)

    def winv_apply(self, v):
        return self.gamma * np.asarray(v, dtype=float)


class FullWeights:
    """Dense symmetric positive definite weight matrix."""

    kind = "full"

    def __init__(self, W):
        W = np.asarray(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise InputError("W must be square")
        if not np.allclose(W, W.T, rtol=0, atol=1e-10 * max(1.0, abs(W).max())):
            raise InputError("W must be symmetric")
        self.W = 0.5 * (W + W.T)
        self.nparam = W.shape[0]
        self.fixed = np.zeros(self.nparam, dtype=bool)
        try:
            # upper factor C with C.T @ C = W
            self.sqrt_w = np.linalg.cholesky(self.W).T
        except np.linalg.LinAlgError:
            raise InputError("W is not positive definite") from None
        dmin = np.diag(self.sqrt_w).min() ** 2
        if dmin <= 1e-12 * np.diag(self.W).max():
            raise InputError("W is numerically singular "
                             "(Cholesky pivot below tolerance)")
        eye = np.eye(self.nparam)
        from scipy.linalg import solve_triangular
        self.sqrt_w_inv = solve_triangular(self.sqrt_w, eye)   # upper
        self.w_inv = self.sqrt_w_inv @ self.sqrt_w_inv.T

    def norm_sq(self, v):
        v = np.asarray(v, dtype=float)
        return float(v @ self.W @ v)

    def reparametrize(self, p, dp):
        return np.asarray(p, dtype=float) - self.sqrt_w_inv @ np.asarray(dp)

    def sqrt_winv_t_apply(self, v):
        return self.sqrt_w_inv.T @ np.asarray(v, dtype=float)

    def winv_apply(self, v):
        return self.w_inv @ np.asarray(v, dtype=float)


class BandedInverseWeights:
    """Weights specified through a banded inverse matrix.

    ``band`` holds the lower band of W^{-1} in LAPACK layout:
    band[r, c] = (W^{-1})[c + r, c].  The number of band rows b means the
    inverse has nonzero diagonals 0..b-1 only, which widens the Gram band of
    a scalar Hankel problem to m + b - 1 blocks.
    """

    kind = "banded_inverse"

    def __init__(self, band):
        band = np.asarray(band, dtype=float)
        if band.ndim != 2:
            raise InputError("Winv band must be a 2-d array")
        self.band = band
        self.bandwidth = band.shape[0]
        self.nparam = band.shape[1]
        self.fixed = np.zeros(self.nparam, dtype=bool)
        try:
            # W^{-1} = L L^T with L lower banded; sqrt(W)^{-1} := L
            self._winv_factor = cholesky_banded(band, lower=True)
        except np.linalg.LinAlgError:
            raise InputError("W^{-1} band is not positive definite") from None

    def winv_submatrix(self, i, j, m):
        """Dense m-by-m slice (W^{-1})[i:i+m, j:j+m] (0-based)."""
        out = np.zeros((m, m))
        rows = i + np.arange(m)[:, None]
        cols = j + np.arange(m)[None, :]
        lo = np.minimum(rows, cols)
        off = np.abs(rows - cols)
        ok = (off < self.bandwidth) & (lo + off < self.nparam)
        out[ok] = self.band[off[ok], lo[ok]]
        return out

    def winv_dense(self):
        out = np.zeros((self.nparam, self.nparam))
        for r in range(self.bandwidth):
            out += np.diag(self.band[r, :self.nparam - r], -r)
            if r:
                out += np.diag(self.band[r, :self.nparam - r], r)
        return out

    def norm_sq(self, v):
        v = np.asarray(v, dtype=float)
        return float(v @ cho_solve_banded((self._winv_factor, True), v))

    def reparametrize(self, p, dp):
        # sqrt(W)^{-1} dp = L dp, banded triangular multiply
        ldp = dtbmv(self.bandwidth - 1, self._winv_factor,
                    np.asarray(dp, dtype=float), lower=1)
        return np.asarray(p, dtype=float) - ldp

    def sqrt_winv_t_apply(self, v):
        return dtbmv(self.bandwidth - 1, self._winv_factor,
                     np.asarray(v, dtype=float), lower=1, trans=1)

    def winv_apply(self, v):
        return cho_solve_banded((self._winv_factor, True),
                                np.asarray(v, dtype=float))


def identity_weights(nparam):
    return DiagonalWeights(np.ones(nparam))


def as_weights(obj, nparam):
    """Coerce user input to a weight object and validate its size."""
    if obj is None:
        return identity_weights(nparam)
    if isinstance(obj, (DiagonalWeights, FullWeights, BandedInverseWeights)):
        ws = obj
    else:
        arr = np.asarray(obj, dtype=float)
        ws = DiagonalWeights(arr) if arr.ndim == 1 else FullWeights(arr)
    if ws.nparam != nparam:
        raise InputError(
            f"weights cover {ws.nparam} parameters, structure has {nparam}")
    return ws


def frobenius_weight(structure):
    """Weights making the parameter norm match the Frobenius matrix norm.

    The Gramian of the basis matrices; returned diagonal when it is diagonal.
    """
    smat = structure.as_general().vec_map()
    gram = smat.T @ smat
    if np.linalg.matrix_rank(smat) < smat.shape[1]:
        raise InputError("structure map is not injective; Frobenius weights "
                         "are undefined")
    off = gram - np.diag(np.diag(gram))
    if np.all(off == 0):
        return DiagonalWeights(np.diag(gram))
    return FullWeights(gram)
