"""Slow dense reference implementations used as ground truth.

Everything here goes through explicit matrices and orthogonal
factorizations (SVD), never through the banded Gram route, so agreement
with the fast path is a genuine cross-check.  A hard size cap keeps the
oracle honest: it refuses rather than approximates.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, SizeCapError
from .weights import as_weights

SIZE_CAP = 1_000_000  # max m*n*nparam entries of the dense map


@dataclass
class DenseProblem:
    """Dense data of one evaluation point: the structure map, the inverse
    square-root weight, the data vector, the kernel and the offset."""
    smat: np.ndarray        # (m*n, nparam), column k = vec of k-th basis
    sqrt_winv: np.ndarray   # (nparam, nparam)
    p: np.ndarray
    R: np.ndarray
    s0vec: np.ndarray       # (m*n,)
    m: int
    n: int


def from_problem(structure, weights, p, R):
    """Build the dense problem data, enforcing the size cap."""
    m, n, npar = structure.m, structure.n, structure.nparam
    if m * n * npar > SIZE_CAP:
        raise SizeCapError(
            f"oracle refuses {m}x{n} with {npar} parameters "
            f"({m * n * npar} > {SIZE_CAP} entries)")
    ws = as_weights(weights, npar)
    g = structure.as_general()
    smat = g.vec_map()
    s0vec = g.s0_matrix().ravel(order="F")
    if ws.kind == "diagonal":
        sqrt_winv = np.diag(ws.sqrt_w_inv)
    elif ws.kind == "full":
        sqrt_winv = ws.sqrt_w_inv
    else:
        # banded inverse: W^{-1} = L L^T, take L as the square root
        from scipy.linalg import cholesky
        sqrt_winv = cholesky(ws.winv_dense(), lower=True)
    return DenseProblem(smat=smat, sqrt_winv=sqrt_winv,
                        p=np.asarray(p, dtype=float),
                        R=np.atleast_2d(np.asarray(R, dtype=float)),
                        s0vec=s0vec, m=m, n=n)


def dense_G(dp):
    """(I_n (x) R) S sqrtW^{-1}, built block row by block row."""
    d = dp.R.shape[0]
    npar = dp.smat.shape[1]
    G = np.empty((dp.n * d, npar))
    for j in range(dp.n):
        G[j * d:(j + 1) * d, :] = dp.R @ dp.smat[j * dp.m:(j + 1) * dp.m, :]
    return G @ dp.sqrt_winv


def dense_residual(dp):
    vecS = dp.s0vec + dp.smat @ dp.p
    return np.ravel(dp.R @ vecS.reshape((dp.m, dp.n), order="F"), order="F")


def dense_gamma(dp):
    """Explicit Gram matrix G G^T (only for tests that probe the Gram route)."""
    G = dense_G(dp)
    return G @ G.T


def dense_cost(dp, rank_rtol=1e-11):
    """Least-norm solve by SVD of G; returns (f, dp_star).

    Uses the pseudo-inverse when G is row rank deficient; raises if the
    system is then inconsistent.
    """
    G = dense_G(dp)
    r = dense_residual(dp)
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(s > rank_rtol * s[0]))
    if rank == 0:
        if np.linalg.norm(r) > 0:
            raise InfeasibleError("zero constraint matrix with nonzero "
                                  "residual")
        return 0.0, np.zeros(dp.smat.shape[1])
    coef = (U[:, :rank].T @ r) / s[:rank]
    dp_star = Vt[:rank, :].T @ coef
    if rank < min(G.shape):
        resid = np.linalg.norm(G @ dp_star - r)
        if resid > 1e-8 * max(np.linalg.norm(r), 1e-300):
            raise InfeasibleError(
                "constraint system is rank deficient and inconsistent")
    return float(dp_star @ dp_star), dp_star


def dense_gradient_fd(dp, h=None):
    """Central finite differences of the dense cost over the kernel entries."""
    d, m = dp.R.shape
    out = np.empty((d, m))
    for i in range(d):
        for j in range(m):
            step = h if h is not None else 1e-6 * (1.0 + abs(dp.R[i, j]))
            Rp = dp.R.copy()
            Rp[i, j] += step
            fp, _ = dense_cost(DenseProblem(dp.smat, dp.sqrt_winv, dp.p, Rp,
                                            dp.s0vec, dp.m, dp.n))
            Rm = dp.R.copy()
            Rm[i, j] -= step
            fm, _ = dense_cost(DenseProblem(dp.smat, dp.sqrt_winv, dp.p, Rm,
                                            dp.s0vec, dp.m, dp.n))
            out[i, j] = (fp - fm) / (2.0 * step)
    return out
