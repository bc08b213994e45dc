"""Affine matrix structures: general sparse-basis maps, Hankel and mosaic
Hankel specializations, and the block-Hankel permutation equivalence.

A structure maps a parameter vector p (length ``nparam``) to an m-by-n matrix
``S0 + sum_k p[k] * S_k``.  Hankel-type structures never materialize the basis
matrices; they evaluate through index arithmetic, and expose the adjoint of
the linear part (anti-diagonal accumulation) which the fast evaluation paths
rely on.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError, SizeCapError

# Dense vectorized maps beyond this many entries are refused loudly.
DENSE_MAP_CAP = 10_000_000


def shift_matrix(m, k=1):
    """m-by-m matrix with ones on the k-th superdiagonal (k=0 is identity)."""
    return np.eye(m, k=k)


def _as_triplets(entries, m, n, what):
    """Validate a coordinate list [(i, j, val), ...] and return arrays."""
    if len(entries) == 0:
        return (np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp),
                np.zeros(0))
    arr = np.asarray(entries, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError(f"{what}: expected (i, j, value) triplets")
    rows = arr[:, 0].astype(np.intp)
    cols = arr[:, 1].astype(np.intp)
    if rows.min(initial=0) < 0 or cols.min(initial=0) < 0 \
            or rows.max(initial=-1) >= m or cols.max(initial=-1) >= n:
        raise InputError(f"{what}: index out of range for {m}x{n} matrix")
    return rows, cols, arr[:, 2].copy()


class GeneralAffineStructure:
    """Affine structure given by an offset and a sparse basis.

    Parameters
    ----------
    m, n : matrix shape
    basis : list of coordinate-triplet lists, one per parameter; entry k
        holds the nonzeros of the k-th basis matrix as (row, col, value).
    s0 : optional coordinate-triplet list for the offset matrix.
    """

    kind = "general"

    def __init__(self, m, n, basis, s0=()):
        self.m = int(m)
        self.n = int(n)
        if self.m <= 0 or self.n <= 0:
            raise InputError("matrix dimensions must be positive")
        self.nparam = len(basis)
        self._basis = [_as_triplets(b, self.m, self.n, f"basis[{k}]")
                       for k, b in enumerate(basis)]
        self._s0 = _as_triplets(s0, self.m, self.n, "s0")

    def s0_matrix(self):
        out = np.zeros((self.m, self.n))
        r, c, v = self._s0
        np.add.at(out, (r, c), v)
        return out

    def basis_matrix(self, k):
        out = np.zeros((self.m, self.n))
        r, c, v = self._basis[k]
        np.add.at(out, (r, c), v)
        return out

    def evaluate(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.nparam,):
            raise InputError(
                f"parameter vector has length {p.size}, expected {self.nparam}")
        out = self.s0_matrix()
        for k in range(self.nparam):
            r, c, v = self._basis[k]
            np.add.at(out, (r, c), p[k] * v)
        return out

    def vec_map(self):
        """Dense mn-by-nparam matrix whose k-th column is vec(S_k).

        vec is column-major: entry (i, j) maps to row i + m*j.
        """
        if self.m * self.n * max(self.nparam, 1) > DENSE_MAP_CAP:
            raise SizeCapError("vectorized map would exceed the dense cap")
        out = np.zeros((self.m * self.n, self.nparam))
        for k in range(self.nparam):
            r, c, v = self._basis[k]
            np.add.at(out[:, k], r + self.m * c, v)
        return out

    def adjoint(self, mat):
        """Apply the transpose of the linear part: k-th entry is <S_k, mat>."""
        out = np.empty(self.nparam)
        for k in range(self.nparam):
            r, c, v = self._basis[k]
            out[k] = np.dot(v, mat[r, c])
        return out

    def as_general(self):
        return self

    def transposed(self):
        """Structure of the transposed matrices plus the parameter map.

        Returns (structure, perm) with perm the identity here: parameters are
        shared, only the basis matrices are transposed.
        """
        basis = [list(zip(c.tolist(), r.tolist(), v.tolist()))
                 for (r, c, v) in self._basis]
        r0, c0, v0 = self._s0
        s0 = list(zip(c0.tolist(), r0.tolist(), v0.tolist()))
        return (GeneralAffineStructure(self.n, self.m, basis, s0),
                np.arange(self.nparam))


class MosaicHankelStructure:
    """Grid of Hankel blocks H_{m_k, n_l} sharing parameters per block.

    Parameters are laid out block by block, column-block-major: all layer
    blocks of stripe 0 first (k = 0..q-1), then stripe 1, and so on.  Block
    (k, l) owns m_k + n_l - 1 parameters and evaluates to the Hankel matrix
    H[i, j] = p[i + j] (0-based) in its grid cell.
    """

    kind = "mosaic"

    def __init__(self, m_vec, n_vec):
        self.m_vec = np.asarray(m_vec, dtype=np.intp)
        self.n_vec = np.asarray(n_vec, dtype=np.intp)
        if self.m_vec.ndim != 1 or self.n_vec.ndim != 1 \
                or len(self.m_vec) == 0 or len(self.n_vec) == 0 \
                or self.m_vec.min() <= 0 or self.n_vec.min() <= 0:
            raise InputError("m_vec and n_vec must be positive integer vectors")
        self.q = len(self.m_vec)
        self.nstripes = len(self.n_vec)
        self.m = int(self.m_vec.sum())
        self.n = int(self.n_vec.sum())
        self.row_off = np.concatenate(([0], np.cumsum(self.m_vec)))
        self.col_off = np.concatenate(([0], np.cumsum(self.n_vec)))
        # param_off[l][k] = start of block (k, l); stripes vary slowly.
        off = 0
        self.param_off = np.zeros((self.nstripes, self.q + 1), dtype=np.intp)
        for l in range(self.nstripes):
            self.param_off[l, 0] = off
            for k in range(self.q):
                off += int(self.m_vec[k] + self.n_vec[l] - 1)
                self.param_off[l, k + 1] = off
        self.nparam = off

    def block_param_slice(self, k, l):
        return slice(int(self.param_off[l, k]), int(self.param_off[l, k + 1]))

    def evaluate(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.nparam,):
            raise InputError(
                f"parameter vector has length {p.size}, expected {self.nparam}")
        out = np.empty((self.m, self.n))
        for l in range(self.nstripes):
            nl = int(self.n_vec[l])
            c0 = int(self.col_off[l])
            for k in range(self.q):
                mk = int(self.m_vec[k])
                blk = p[self.block_param_slice(k, l)]
                r0 = int(self.row_off[k])
                # H[i, j] = blk[i + j], one contiguous copy per row
                for i in range(mk):
                    out[r0 + i, c0:c0 + nl] = blk[i:i + nl]
        return out

    def adjoint(self, mat):
        """Anti-diagonal sums per block: the transpose of the linear part."""
        out = np.empty(self.nparam)
        for l in range(self.nstripes):
            nl = int(self.n_vec[l])
            cols = np.arange(nl)
            for k in range(self.q):
                mk = int(self.m_vec[k])
                block = mat[self.row_off[k]:self.row_off[k + 1],
                            self.col_off[l]:self.col_off[l + 1]]
                idx = (np.arange(mk)[:, None] + cols[None, :]).ravel()
                out[self.block_param_slice(k, l)] = np.bincount(
                    idx, weights=block.ravel(), minlength=mk + nl - 1)
        return out

    def blocks(self):
        """q-by-nstripes grid of scalar HankelStructure blocks."""
        return [[HankelStructure(int(mk), int(nl)) for nl in self.n_vec]
                for mk in self.m_vec]

    def as_general(self):
        if self.m * self.n * self.nparam > DENSE_MAP_CAP:
            raise SizeCapError("general-affine form would exceed the dense cap")
        basis = [[] for _ in range(self.nparam)]
        for l in range(self.nstripes):
            for k in range(self.q):
                p0 = int(self.param_off[l, k])
                for i in range(int(self.m_vec[k])):
                    for j in range(int(self.n_vec[l])):
                        basis[p0 + i + j].append(
                            (self.row_off[k] + i, self.col_off[l] + j, 1.0))
        return GeneralAffineStructure(self.m, self.n, basis)

    def transposed(self):
        """Swapped mosaic plus the parameter permutation onto the old layout.

        The transpose of the (k, l) block is the Hankel block (l, k) of the
        swapped mosaic with the same parameters, so only the block enumeration
        order changes.  Returns (structure, perm) with
        p_transposed[t] = p[perm[t]].
        """
        other = MosaicHankelStructure(self.n_vec, self.m_vec)
        perm = np.empty(self.nparam, dtype=np.intp)
        for l in range(self.nstripes):
            for k in range(self.q):
                src = self.block_param_slice(k, l)
                dst = other.block_param_slice(l, k)
                perm[dst] = np.arange(src.start, src.stop)
        return other, perm


class HankelStructure(MosaicHankelStructure):
    """Scalar Hankel structure: S(p)[i, j] = p[i + j] (0-based)."""

    kind = "hankel"

    def __init__(self, m, n):
        super().__init__([m], [n])
        self.m_rows = int(m)
        self.n_cols = int(n)

    def as_general(self):
        """Stacked-shift form: row-block j of the map selects p[j : j + m]."""
        if self.m * self.n * self.nparam > DENSE_MAP_CAP:
            raise SizeCapError("general-affine form would exceed the dense cap")
        basis = [[(i, k - i, 1.0)
                  for i in range(max(0, k - self.n + 1), min(self.m, k + 1))]
                 for k in range(self.nparam)]
        return GeneralAffineStructure(self.m, self.n, basis)


class PhiComposedStructure:
    """Left multiplication of an inner structure by a full-row-rank matrix."""

    kind = "phi"

    def __init__(self, phi, inner):
        self.phi = np.ascontiguousarray(phi, dtype=float)
        if self.phi.ndim != 2:
            raise InputError("phi must be a matrix")
        self.inner = inner
        if self.phi.shape[1] != inner.m:
            raise InputError(
                f"phi has {self.phi.shape[1]} columns, inner structure has "
                f"{inner.m} rows")
        if self.phi.shape[0] > self.phi.shape[1]:
            raise InputError("phi must have no more rows than columns")
        if np.linalg.matrix_rank(self.phi) < self.phi.shape[0]:
            raise InputError("phi must have full row rank")
        self.m = self.phi.shape[0]
        self.n = inner.n
        self.nparam = inner.nparam

    def evaluate(self, p):
        return self.phi @ self.inner.evaluate(p)

    def adjoint(self, mat):
        return self.inner.adjoint(self.phi.T @ mat)

    def as_general(self):
        g = self.inner.as_general()
        if self.m * self.n * self.nparam > DENSE_MAP_CAP:
            raise SizeCapError("general-affine form would exceed the dense cap")
        def compress(rows, cols, vals):
            # left-multiply a triplet matrix by phi, densely per column
            dense = np.zeros((self.inner.m, self.n))
            np.add.at(dense, (rows, cols), vals)
            prod = self.phi @ dense
            r, c = np.nonzero(prod)
            return list(zip(r.tolist(), c.tolist(), prod[r, c].tolist()))
        basis = [compress(*g._basis[k]) for k in range(self.nparam)]
        s0 = compress(*g._s0)
        return GeneralAffineStructure(self.m, self.n, basis, s0)

    def transposed(self):
        raise InputError("structures with a row-compression matrix support "
                         "only m <= n; transpose the data instead")


def evaluate(structure, p):
    """Evaluate any structure kind on a parameter vector."""
    return structure.evaluate(p)


def vec_map(structure):
    """Dense matrix of the linear part for any structure kind."""
    return structure.as_general().vec_map()


def hankel_as_general(h):
    """Scalar Hankel structure in explicit sparse-basis form."""
    return h.as_general()


def mosaic_as_blocks(ms):
    """Grid of scalar Hankel blocks of a mosaic structure."""
    return ms.blocks()


def block_hankel_interleave(k, l):
    """Index array of the permutation mapping k*l interleaved entries.

    Row i of the permutation selects source index perm[i]; applying it to a
    vector grouped as l groups of k entries regroups it as k groups of l.
    Matches the Kronecker-selector construction used for block-Hankel
    matrices: target position j*k + i (0-based, j in 0..l-1, i in 0..k-1)
    takes source position i*l + j.
    """
    j, i = np.meshgrid(np.arange(l), np.arange(k), indexing="ij")
    return (i * l + j).ravel()


def block_hankel_permutations(m1, n1, q, N):
    """Row and column permutations turning a block-Hankel matrix into mosaic
    form.

    Returns (row_perm, col_perm) index arrays: if B is the (m1*q)-by-(n1*N)
    block-Hankel matrix of a tensor C (blocks of q-by-N slices), then
    B[np.ix_(row_perm, col_perm)] equals the mosaic Hankel matrix with q
    copies of m1 rows and N copies of n1 columns on the unfolded parameters
    p_block(k,l)[i] = C[i, k, l].
    """
    if min(m1, n1, q, N) <= 0:
        raise InputError("all block-Hankel dimensions must be positive")
    return block_hankel_interleave(m1, q), block_hankel_interleave(n1, N)


def block_hankel_matrix(tensor, m1, n1):
    """Block-Hankel matrix of a 3-tensor C: block (I, J) is C[I+J, :, :]."""
    C = np.asarray(tensor, dtype=float)
    if C.ndim != 3:
        raise InputError("expected a 3-tensor")
    depth, q, N = C.shape
    if depth != m1 + n1 - 1:
        raise InputError("tensor depth must be m1 + n1 - 1")
    out = np.empty((m1 * q, n1 * N))
    for I in range(m1):
        for J in range(n1):
            out[I * q:(I + 1) * q, J * N:(J + 1) * N] = C[I + J]
    return out


def block_hankel_unfold(tensor):
    """Parameter vector of the mosaic equivalent of a block-Hankel tensor."""
    C = np.asarray(tensor, dtype=float)
    depth, q, N = C.shape
    return np.concatenate([C[:, k, l] for l in range(N) for k in range(q)])
