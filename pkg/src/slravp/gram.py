"""Block-banded Gram matrix of the projected least-norm problem.

The Gram matrix has d-by-d blocks G(i,j) = R V(i,j) R^T indexed by matrix
columns, where the V blocks are determined by the structure and the weights.
It is block-diagonal across column stripes of a mosaic structure, block
banded within a stripe, and block-Toeplitz when the inverse weights are
constant per layer.

Storage is the transposed LAPACK lower band layout
``band[c, r] = Gram[c + r, c]`` of shape (N, bw + 1), C-contiguous, which is
byte-identical to the column-major (bw + 1, N) LAPACK layout and keeps the
factorization sweeps on contiguous memory.
"""

import numpy as np

from .backend import get_backend
from .errors import InputError, SingularGramError

# pivot <= PIVOT_RTOL * max diagonal entry marks the system singular
PIVOT_RTOL = 1e-13
# successive factor block rows closer than this freeze the Toeplitz factor
FREEZE_RTOL = 1e-13
# below this band footprint, materializing beats the compact bookkeeping
COMPACT_MIN_BYTES = 1_310_000


class GramSystem:
    """Assembled (and optionally factored) block-banded Gram matrix.

    Two storage modes: an explicit band array, or (for block-Toeplitz
    systems) just the d distinct band rows in ``template``; the compact
    mode factors and solves without ever materializing the band.
    """

    def __init__(self, d, stripe_blocks, block_bandwidth, band=None,
                 toeplitz=False, toeplitz_blocks=None, backend=None,
                 template=None):
        self.d = int(d)
        self.stripe_blocks = [int(x) for x in stripe_blocks]
        self.block_bandwidth = int(block_bandwidth)
        self._band = band
        self.template = template
        if (band is None) == (template is None):
            raise InputError("exactly one of band/template must be given")
        self.toeplitz = bool(toeplitz)
        self.toeplitz_blocks = toeplitz_blocks
        self.backend = backend if backend is not None else get_backend()
        self.factor_band = None
        self.factor_head = None
        self.frozen_at = None

    @property
    def n_blocks(self):
        return sum(self.stripe_blocks)

    @property
    def size(self):
        return self.n_blocks * self.d

    @property
    def compact(self):
        return self.template is not None

    def stripe_offsets(self):
        off = np.concatenate(([0], np.cumsum(self.stripe_blocks))) * self.d
        return off.astype(int)

    def stripe_sizes(self):
        return [nb * self.d for nb in self.stripe_blocks]

    def band_full(self):
        """Materialize (and cache) the explicit band array."""
        if self._band is None:
            band = np.empty((self.size, self.template.shape[1]))
            offs = self.stripe_offsets()
            for l in range(len(self.stripe_blocks)):
                lo, hi = offs[l], offs[l + 1]
                for beta in range(self.d):
                    band[lo + beta:hi:self.d] = self.template[beta]
                _zero_stripe_tail(band, lo, hi)
            self._band = band
        return self._band

    @property
    def band(self):
        return self.band_full()

    def pivot_tolerance(self):
        if self._band is not None:
            diag_max = float(self._band[:, 0].max())
        else:
            diag_max = float(self.template[:, 0].max())
        return PIVOT_RTOL * max(diag_max, 0.0)

    def factor(self):
        """Banded Cholesky of the Gram matrix.

        Large block-Toeplitz systems factor through the compact cyclic path
        (incremental rows, freezing once consecutive block rows converge);
        small bands are cheaper to factor directly, and the generic path is
        also the fallback when the factor rows do not converge.
        """
        if self.factor_band is not None or self.factor_head is not None:
            return self
        tol = self.pivot_tolerance()
        use_compact = self.compact and self._band is None and \
            self.size * self.template.shape[1] * 8 >= COMPACT_MIN_BYTES
        if use_compact:
            nmax = max(self.stripe_blocks) * self.d
            head, info, status = self.backend.cholesky_toeplitz_compact(
                self.template, nmax, self.d, tol, FREEZE_RTOL, 96)
            if info >= 0:
                raise SingularGramError(
                    f"Gram matrix singular at column {info} "
                    f"(pivot below {tol:.3e})", column=info)
            if status in (0, 1):
                self.factor_head = np.ascontiguousarray(head)
                self.frozen_at = head.shape[0] - 1 if status == 0 else -1
                return self
            # transient did not converge: fall through to the full band
        factor, info = self.backend.cholesky_generic(self.band_full(),
                                                     self.d, tol)
        if info >= 0:
            raise SingularGramError(
                f"Gram matrix singular at column {info} "
                f"(pivot below {tol:.3e})", column=info)
        self.factor_band = factor
        return self

    def _require_factor(self):
        if self.factor_band is None and self.factor_head is None:
            self.factor()
        return self.factor_band

    def half_solve(self, v):
        """g with L g = v, so that ||g||^2 = v^T Gram^{-1} v."""
        self._require_factor()
        if self.factor_head is not None:
            return self.backend.solve_compact_lower(
                self.factor_head, self.d, self.stripe_sizes(), v)
        return self.backend.solve_lower(self.factor_band, v)

    def solve(self, v):
        """u with Gram u = v via the two banded triangular solves."""
        self._require_factor()
        if self.factor_head is not None:
            g = self.backend.solve_compact_lower(
                self.factor_head, self.d, self.stripe_sizes(), v)
            return self.backend.solve_compact_lower_t(
                self.factor_head, self.d, self.stripe_sizes(), g)
        f = self.factor_band
        return self.backend.solve_lower_t(f, self.backend.solve_lower(f, v))

    def factor_band_full(self):
        """Materialize the factor band (tests and diagnostics)."""
        self._require_factor()
        if self.factor_band is not None:
            return self.factor_band
        head = self.factor_head
        hc = head.shape[0]
        out = np.empty((self.size, head.shape[1]))
        offs = self.stripe_offsets()
        for l in range(len(self.stripe_blocks)):
            lo, hi = offs[l], offs[l + 1]
            nl = hi - lo
            take = min(hc, nl)
            out[lo:lo + take] = head[:take]
            for c in range(take, nl):
                out[lo + c] = head[hc - self.d + (c - hc) % self.d]
            _zero_stripe_tail(out, lo, hi)
        return out

    def dense(self):
        """Dense Gram matrix (tests and small problems only)."""
        N = self.size
        band = self.band_full()
        out = np.zeros((N, N))
        for r in range(band.shape[1]):
            vals = band[:N - r, r]
            out += np.diag(vals, -r)
            if r:
                out += np.diag(vals, r)
        return out

    def factor_dense(self):
        f = self.factor_band_full()
        N = self.size
        out = np.zeros((N, N))
        for r in range(f.shape[1]):
            out += np.diag(f[:N - r, r], -r)
        return out


def _zero_stripe_tail(band, lo, hi):
    """Clear band slots of columns in [lo, hi) that cross the stripe end."""
    rows = band.shape[1]
    for c in range(max(lo, hi - rows + 1), hi):
        band[c, hi - c:] = 0.0


def _band_rows(s, d, stripe_blocks):
    return min(int(s), max(int(x) for x in stripe_blocks)) * int(d)


class HankelColumnGram:
    """V-block provider for mosaic Hankel structures with diagonal weights.

    ``structure`` supplies the layer sizes and the per-block parameter
    layout; ``gamma`` is the vector of inverse weights (zero where a
    parameter is fixed).  When every layer carries one constant inverse
    weight across all stripes, the Gram matrix is block-Toeplitz and only
    its generator blocks are formed.
    """

    def __init__(self, structure, gamma, force_elementwise=False):
        self.structure = structure
        self.gamma = np.ascontiguousarray(gamma, dtype=float)
        if self.gamma.shape != (structure.nparam,):
            raise InputError("inverse-weight vector does not match structure")
        self.m_vec = structure.m_vec
        self.n_vec = structure.n_vec
        self._m_vec_i = structure.m_vec.astype(np.intp)
        self._template_idx = None
        self._gam_off = [
            (structure.param_off[l] - structure.param_off[l, 0]).astype(
                np.intp)
            for l in range(structure.nstripes)]
        self.block_bandwidth = int(self.m_vec.max())
        self.blockwise = False
        self.layer_gamma = None
        if not force_elementwise:
            self._detect_blockwise()

    def _detect_blockwise(self):
        st = self.structure
        vals = np.empty(st.q)
        for k in range(st.q):
            for l in range(st.nstripes):
                blk = self.gamma[st.block_param_slice(k, l)]
                if blk.size and (blk != blk[0]).any():
                    return
                if l == 0:
                    vals[k] = blk[0]
                elif blk[0] != vals[k]:
                    return
        self.blockwise = True
        self.layer_gamma = vals

    def toeplitz_blocks(self, R):
        """Generator blocks G_k = R V_k R^T, k = 0..bandwidth-1.

        Entry (a, b) over all lags is the cross-correlation of the layer
        slices of kernel rows a and b.
        """
        d = R.shape[0]
        s = self.block_bandwidth
        m_off = self.structure.row_off
        blocks = np.zeros((s, d, d))
        for li, ml in enumerate(self.m_vec):
            g = self.layer_gamma[li]
            if g == 0.0:
                continue
            o = int(m_off[li])
            ml = int(ml)
            take = min(ml, s)
            for a in range(d):
                for b in range(d):
                    corr = np.correlate(R[a, o:o + ml], R[b, o:o + ml],
                                        mode="full")
                    blocks[:take, a, b] += g * corr[ml - 1:ml - 1 + take]
        return blocks

    def vblock(self, l, i, j):
        """Dense V(i,j) of stripe l (reference path for tests)."""
        st = self.structure
        m = st.m
        if j < i:
            return self.vblock(l, j, i).T
        k = j - i
        out = np.zeros((m, m))
        for li in range(st.q):
            ml = int(self.m_vec[li])
            if k >= ml:
                continue
            o = int(st.row_off[li])
            g = self.gamma[st.block_param_slice(li, l)]
            # nonzeros of V(i, i+k) sit on the k-th subdiagonal within the
            # layer: V[t+k, t] = gamma window at offset i
            for t in range(ml - k):
                out[o + t + k, o + t] = g[i + t + k]
        return out

    def assemble(self, R, backend=None):
        backend = backend if backend is not None else get_backend()
        st = self.structure
        d, m = R.shape
        if m != st.m:
            raise InputError("kernel width does not match structure rows")
        s = self.block_bandwidth
        rows = _band_rows(s, d, st.n_vec)
        N = st.n * d
        offs = np.concatenate(([0], np.cumsum(st.n_vec))) * d
        if self.blockwise:
            blocks = self.toeplitz_blocks(R)
            if self._template_idx is None or \
                    self._template_idx[0].shape != (d, rows):
                rr = np.arange(rows)
                kk, alpha = np.divmod(rr[None, :] + np.arange(d)[:, None], d)
                self._template_idx = (kk, alpha, kk < s)
            kk, alpha, ok = self._template_idx
            template = np.zeros((d, rows))
            beta_idx = np.broadcast_to(np.arange(d)[:, None], kk.shape)
            template[ok] = blocks[kk[ok], beta_idx[ok], alpha[ok]]
            return GramSystem(d, st.n_vec, s, toeplitz=True,
                              toeplitz_blocks=blocks, backend=backend,
                              template=template)
        band = np.zeros((N, rows))
        for l in range(st.nstripes):
            nb = int(st.n_vec[l])
            gam = self.gamma[st.param_off[l, 0]:st.param_off[l, st.q]]
            backend.assemble_elementwise(
                band, np.ascontiguousarray(R, dtype=float), gam,
                self._gam_off[l], self._m_vec_i, int(offs[l]), nb)
        return GramSystem(d, st.n_vec, s, band, toeplitz=False,
                          backend=backend)


class BandedInverseColumnGram:
    """V-block provider for a scalar Hankel structure whose weight matrix is
    given through a banded inverse: V(i,j) is the m-by-m window of W^{-1} at
    offset (i, j), so the Gram bandwidth grows to m + b - 1 blocks."""

    def __init__(self, structure, winv):
        if getattr(structure, "q", 0) != 1 or structure.nstripes != 1:
            raise InputError("banded-inverse weights support scalar Hankel "
                             "structures only")
        self.structure = structure
        self.winv = winv
        self.m = structure.m
        self.n = structure.n
        self.block_bandwidth = self.m + winv.bandwidth - 1
        self.blockwise = False

    def vblock(self, l, i, j):
        return self.winv.winv_submatrix(i, j, self.m)

    def assemble(self, R, backend=None):
        backend = backend if backend is not None else get_backend()
        d = R.shape[0]
        n = self.n
        s = min(self.block_bandwidth, n)
        band = np.zeros((n * d, s * d))
        for i in range(n):
            for j in range(i, min(n, i + s)):
                blk = R @ self.vblock(0, i, j) @ R.T
                _store_block(band, blk, i, j, d)
        return GramSystem(d, [n], s, band, toeplitz=False, backend=backend)


class DenseColumnGram:
    """Dense V fallback for general affine structures or full weights."""

    def __init__(self, v_dense, m, n):
        self.v = v_dense
        self.m = int(m)
        self.n = int(n)
        self.block_bandwidth = self.n
        self.blockwise = False

    def vblock(self, l, i, j):
        m = self.m
        return self.v[i * m:(i + 1) * m, j * m:(j + 1) * m]

    def assemble(self, R, backend=None):
        backend = backend if backend is not None else get_backend()
        d = R.shape[0]
        n = self.n
        v4 = self.v.reshape(n, self.m, n, self.m)
        blocks = np.einsum("as,isjt,bt->iajb", R, v4, R)
        dense = blocks.reshape(n * d, n * d)
        band = np.zeros((n * d, n * d))
        for r in range(n * d):
            band[:n * d - r, r] = np.diag(dense, -r)
        return GramSystem(d, [n], n, band, toeplitz=False, backend=backend)


def _store_block(band, gij, i, j, d):
    """Store Gram block (i, j), j >= i, into the transposed band layout."""
    k = j - i
    for a in range(d):
        for b in range(d):
            if k == 0 and b < a:
                continue
            band[i * d + a, k * d + b - a] = gij[a, b]


def build_gram(provider, R, backend=None):
    """Assemble the Gram system of a provider at kernel R."""
    return provider.assemble(np.asarray(R, dtype=float), backend=backend)
