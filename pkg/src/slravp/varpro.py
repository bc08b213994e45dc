"""Variable-projection evaluation: projected cost, optimal correction,
gradient, Jacobian of the correction, and the pseudo-Jacobian.

Eliminating the structured matrix analytically reduces the rank-constrained
approximation to an outer problem in the kernel matrix R.  The residual is
vec(R S(p)) laid out block per matrix column; the Gram system of the inner
least-norm problem is assembled by the gram module, and everything else is
index arithmetic on the structure:

    cost        f(R)  = ||L^{-1} r||^2          (banded forward solve)
    correction  dp*   = sqrtW^{-T} S^T vec(R^T Y), Y the unvec'd Gram solve
    gradient    2 Y S(p)^T - 2 sum y_j y_i^T R V(i,j)  over the band

Jacobian columns are right-hand sides z built once per kernel column j and
pushed through the factored Gram system.
"""

from dataclasses import dataclass, field

import numpy as np

from . import structure as _st
from .backend import get_backend
from .errors import InputError, SizeCapError
from .gram import (BandedInverseColumnGram, DenseColumnGram, GramSystem,
                   HankelColumnGram, build_gram)
from .weights import (BandedInverseWeights, DiagonalWeights, FullWeights,
                      as_weights)

# dense V matrices beyond this many entries are refused
DENSE_V_CAP = 16_000_000


@dataclass
class Residual:
    """Residual bundle: r = vec(R S(p)), y the Gram solve, Y its matrix."""
    r: np.ndarray
    y: np.ndarray
    Y: np.ndarray
    gram: GramSystem = field(repr=False, default=None)


@dataclass
class Evaluation:
    """Requested evaluation products at one kernel matrix."""
    f: float = None
    dp_star: np.ndarray = None
    grad: np.ndarray = None
    jac: np.ndarray = None
    pseudo_jac: np.ndarray = None
    half_residual: np.ndarray = None


class _MosaicDiagEngine:
    """Fast path: mosaic Hankel structure with diagonal weights.

    The residual, the first gradient term and the adjoint of the correction
    are sliding correlations against the parameter blocks, so the structured
    matrix itself is only materialized for Jacobian columns.
    """

    def __init__(self, st, ws, force_elementwise, backend):
        self.st = st
        self.ws = ws
        self.backend = backend
        self.provider = HankelColumnGram(st, ws.gamma,
                                         force_elementwise=force_elementwise)
        self._m_vec = st.m_vec.astype(np.intp)
        self._n_vec = st.n_vec.astype(np.intp)
        self._param_off = st.param_off.astype(np.intp)

    @property
    def toeplitz(self):
        return self.provider.blockwise

    def gram(self, R):
        return build_gram(self.provider, R, backend=self.backend)

    def residual_vec(self, pw, R):
        r = np.zeros(self.st.n * R.shape[0])
        self.backend.mosaic_residual(r, pw, R, self._m_vec, self._n_vec,
                                     self._param_off)
        return r

    def term1(self, pw, R, Y):
        """Y S(p)^T through per-block correlations."""
        out = np.zeros((R.shape[0], self.st.m))
        self.backend.mosaic_term1(out, pw, np.ascontiguousarray(Y),
                                  self._m_vec, self._n_vec, self._param_off)
        return out

    def adjoint_P(self, R, Y):
        """S^T vec(R^T Y) as per-block convolutions of kernel and solve."""
        st = self.st
        d = R.shape[0]
        out = np.zeros(st.nparam)
        for l in range(st.nstripes):
            c0 = int(st.col_off[l])
            nb = int(st.n_vec[l])
            Yl = Y[:, c0:c0 + nb]
            for k in range(st.q):
                o = int(st.row_off[k])
                ml = int(st.m_vec[k])
                sl = st.block_param_slice(k, l)
                acc = np.zeros(ml + nb - 1)
                for a in range(d):
                    acc += np.convolve(R[a, o:o + ml], Yl[a])
                out[sl] = acc
        return out

    def grad_second(self, R, Y, gram):
        st = self.st
        d = R.shape[0]
        T = np.zeros((d, st.m))
        P = R.T @ Y
        offs = st.col_off
        for l in range(st.nstripes):
            gam = self.ws.gamma[st.param_off[l, 0]:st.param_off[l, st.q]]
            gam_off = (st.param_off[l] - st.param_off[l, 0]).astype(np.intp)
            self.backend.grad_second_term(
                T, np.ascontiguousarray(R, dtype=float),
                np.ascontiguousarray(Y[:, offs[l]:offs[l + 1]]),
                np.ascontiguousarray(P[:, offs[l]:offs[l + 1]]),
                np.ascontiguousarray(gam), gam_off,
                st.m_vec.astype(np.intp))
        return T

    def fast_grad_second(self, R, Y, gram):
        """Block-Toeplitz shortcut: lag products of Y against shifted kernels.

        The lag blocks N_k = sum_stripes Y(:, k:) Y(:, :-k)^T come from one
        matrix product against zero-padded shifts; contracting them with the
        shifted kernel columns is a correlation (k >= 0 side) plus a
        convolution (k < 0 side) per layer and kernel row pair.
        """
        st = self.st
        d = R.shape[0]
        s = gram.block_bandwidth
        lg = self.provider.layer_gamma
        offs = st.col_off
        if d == 1:
            # scalar lag products are symmetric: one banded lag product per
            # stripe, one two-sided correlation per layer
            from numpy.lib.stride_tricks import sliding_window_view
            nk1 = np.zeros(s)
            for l in range(st.nstripes):
                Yl = Y[0, offs[l]:offs[l + 1]]
                nb = Yl.shape[0]
                ss = min(s, nb)
                ypad = np.zeros(nb + ss)
                ypad[:nb] = Yl
                nk1[:ss] += sliding_window_view(ypad, nb)[:ss] @ Yl
            coef = np.concatenate([nk1[:0:-1], nk1])
            T = np.zeros((1, st.m))
            for li in range(st.q):
                g = lg[li]
                if g == 0.0:
                    continue
                ml = int(st.m_vec[li])
                o = int(st.row_off[li])
                rpad = np.zeros(ml + 2 * (s - 1))
                rpad[s - 1:s - 1 + ml] = R[0, o:o + ml]
                T[0, o:o + ml] = g * np.correlate(rpad, coef, mode="valid")
            return T
        from numpy.lib.stride_tricks import sliding_window_view
        nk = np.zeros((s, d, d))
        for l in range(st.nstripes):
            Yl = Y[:, offs[l]:offs[l + 1]]
            nb = Yl.shape[1]
            ss = min(s, nb)
            ypad = np.zeros((d, nb + ss))
            ypad[:, :nb] = Yl
            sw = sliding_window_view(ypad, nb, axis=1)[:, :ss, :]
            prod = sw.reshape(d * ss, nb) @ Yl.T
            nk[:ss] += prod.reshape(d, ss, d).transpose(1, 0, 2)
        T = np.zeros((d, st.m))
        for li in range(st.q):
            g = lg[li]
            if g == 0.0:
                continue
            ml = int(st.m_vec[li])
            o = int(st.row_off[li])
            for b in range(d):
                rpad = np.concatenate([R[b, o:o + ml], np.zeros(s - 1)])
                for a in range(d):
                    # k >= 0 lags read the kernel shifted forward
                    T[a, o:o + ml] += g * np.correlate(rpad, nk[:, a, b],
                                                       mode="valid")
                    # k > 0 transposed lags read it shifted backward
                    coef = nk[:, b, a].copy()
                    coef[0] = 0.0
                    T[a, o:o + ml] += g * np.convolve(R[b, o:o + ml],
                                                      coef)[:ml]
        return T

    def z_matrix(self, R, Y, M, col_js, scale):
        st = self.st
        d = R.shape[0]
        N = st.n * d
        Z = np.zeros((N, d * len(col_js)), order="F")
        gA = self.ws.gamma * self.adjoint_P(R, Y)
        offs = st.col_off
        row0 = 0
        for l in range(st.nstripes):
            sl = slice(st.param_off[l, 0], st.param_off[l, st.q])
            gam_off = (st.param_off[l] - st.param_off[l, 0]).astype(np.intp)
            nb = int(st.n_vec[l])
            self.backend.add_z_columns(
                Z, np.ascontiguousarray(R, dtype=float),
                np.ascontiguousarray(Y[:, offs[l]:offs[l + 1]]), M,
                np.ascontiguousarray(self.ws.gamma[sl]),
                np.ascontiguousarray(gA[sl]), gam_off,
                st.m_vec.astype(np.intp), row0, int(offs[l]),
                np.asarray(col_js, dtype=np.intp), float(scale))
            row0 += nb * d
        return Z


class _VBlockEngine:
    """Reference path: anything expressible through explicit V blocks.

    Covers general affine structures and full weight matrices via a dense V,
    and scalar Hankel structures with a banded inverse weight matrix via
    windowed blocks.  All derivative quantities are matrix products with V.
    """

    def __init__(self, st, ws, provider, vmatvec, backend):
        self.st = st
        self.ws = ws
        self.provider = provider
        self._vmatvec = vmatvec
        self.backend = backend

    @property
    def toeplitz(self):
        return False

    def gram(self, R):
        return build_gram(self.provider, R, backend=self.backend)

    def residual_vec(self, pw, R):
        return np.ravel(R @ self.st.evaluate(pw), order="F")

    def term1(self, pw, R, Y):
        return Y @ self.st.evaluate(pw).T

    def adjoint_P(self, R, Y):
        return self.st.adjoint(R.T @ Y)

    def grad_second(self, R, Y, gram):
        # sum_{ij} y_j y_i^T R V(i,j) = Y * unvec(V vec(R^T Y))^T
        m, n = self.st.m, self.st.n
        u = (R.T @ Y).ravel(order="F")
        Mv = self._vmatvec(u).reshape((m, n), order="F")
        return Y @ Mv.T

    def fast_grad_second(self, R, Y, gram):
        raise InputError("fast gradient requires layer-constant weights")

    def z_matrix(self, R, Y, M, col_js, scale):
        m, n = self.st.m, self.st.n
        d = R.shape[0]
        u = (R.T @ Y).ravel(order="F")
        M1 = self._vmatvec(u).reshape((m, n), order="F")
        Z = np.empty((n * d, d * len(col_js)), order="F")
        E = np.zeros((m, n))
        for jj, j in enumerate(col_js):
            z1 = M1[j, :]
            for i in range(d):
                E[j, :] = Y[i, :]
                v2 = self._vmatvec(E.ravel(order="F"))
                z2 = R @ v2.reshape((m, n), order="F")
                col = np.ravel(z2, order="F") * (-scale)
                col[i::d] += M[j, :] - scale * z1
                Z[:, jj * d + i] = col
            E[j, :] = 0.0
        return Z


def _dense_v(st, ws):
    mn = st.m * st.n
    if mn * mn > DENSE_V_CAP:
        raise SizeCapError(
            f"dense V would need {mn}x{mn} entries; this structure/weight "
            "combination is only supported at small sizes")
    smat = st.as_general().vec_map()
    if isinstance(ws, DiagonalWeights):
        return (smat * ws.gamma) @ smat.T
    return smat @ ws.winv_apply(smat.T)


class VarproProblem:
    """Variable-projection evaluator bound to one structure and weighting.

    Transposes internally when the structure is taller than wide; kernels
    then act on the right of the original matrix and ``kernel_width`` tells
    callers the expected number of kernel columns.
    """

    def __init__(self, structure, weights=None, force_elementwise=False,
                 backend=None):
        self.backend = get_backend(backend) if not hasattr(backend, "IMPL") \
            else backend
        self.original_structure = structure
        weights = as_weights(weights, structure.nparam)
        self.original_weights = weights
        self.transposed = structure.m > structure.n
        self._param_perm = None
        self.phi = None

        st = structure
        if st.kind == "phi":
            if self.transposed:
                raise InputError("structures with a row-compression matrix "
                                 "support only m <= n")
            self.phi = st.phi
            st = st.inner
        if self.transposed:
            st, perm = st.transposed()
            self._param_perm = perm
            weights = _permute_weights(weights, perm)
        self.st = st
        self.ws = weights

        if isinstance(st, _st.MosaicHankelStructure) and \
                isinstance(weights, DiagonalWeights):
            self.engine = _MosaicDiagEngine(st, weights, force_elementwise,
                                            self.backend)
        elif isinstance(st, _st.MosaicHankelStructure) and \
                isinstance(weights, BandedInverseWeights) and \
                st.q == 1 and st.nstripes == 1:
            provider = BandedInverseColumnGram(st, weights)
            self.engine = _VBlockEngine(
                st, weights, provider,
                _banded_vmatvec(st, weights), self.backend)
        else:
            v = _dense_v(st, weights)
            provider = DenseColumnGram(v, st.m, st.n)
            self.engine = _VBlockEngine(st, weights, provider,
                                        lambda x: v @ x, self.backend)

    # -- geometry ----------------------------------------------------------
    @property
    def kernel_width(self):
        """Number of columns a kernel matrix must have."""
        return self.phi.shape[0] if self.phi is not None else self.st.m

    @property
    def n_cols(self):
        return self.st.n

    @property
    def nparam(self):
        return self.st.nparam

    def _working_p(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.original_structure.nparam,):
            raise InputError(
                f"parameter vector has length {p.size}, expected "
                f"{self.original_structure.nparam}")
        return p[self._param_perm] if self._param_perm is not None else p

    def _unpermute(self, dp):
        if self._param_perm is None:
            return dp
        out = np.empty_like(dp)
        out[self._param_perm] = dp
        return out

    def _working_R(self, R):
        R = np.ascontiguousarray(np.atleast_2d(np.asarray(R, dtype=float)))
        if R.shape[1] != self.kernel_width:
            raise InputError(
                f"kernel has {R.shape[1]} columns, expected "
                f"{self.kernel_width}")
        d = R.shape[0]
        if self.st.nparam < self.st.n * d:
            raise InputError(
                f"necessary condition violated: {self.st.nparam} parameters "
                f"< {self.st.n} columns x {d} rank reduction; the inner "
                "least-norm system cannot have full row rank")
        if self.phi is not None:
            R = R @ self.phi
        return R

    # -- shared context ----------------------------------------------------
    def _context(self, p, R):
        pw = self._working_p(p)
        Rw = self._working_R(R)
        r = self.engine.residual_vec(pw, Rw)
        gram = self.engine.gram(Rw)
        return pw, Rw, r, gram

    # -- operations --------------------------------------------------------
    def residual(self, p, R):
        pw, Rw, r, gram = self._context(p, R)
        y = gram.solve(r)
        Y = y.reshape((Rw.shape[0], self.st.n), order="F")
        return Residual(r=r, y=y, Y=Y, gram=gram)

    def cost(self, p, R):
        _, _, r, gram = self._context(p, R)
        g = gram.half_solve(r)
        return float(g @ g)

    def correction(self, p, R):
        res = self.residual(p, R)
        Rw = self._working_R(R)
        return self._correction_from(Rw, res.Y)

    def _correction_from(self, Rw, Y):
        a = self.engine.adjoint_P(Rw, Y)
        return self._unpermute(self.ws.sqrt_winv_t_apply(a))

    def gradient(self, p, R):
        pw, Rw, r, gram = self._context(p, R)
        y = gram.solve(r)
        Y = y.reshape((Rw.shape[0], self.st.n), order="F")
        G = 2.0 * self.engine.term1(pw, Rw, Y) - \
            2.0 * self.engine.grad_second(Rw, Y, gram)
        return self._grad_back(G)

    def fast_gradient(self, p, R):
        pw, Rw, r, gram = self._context(p, R)
        if not gram.toeplitz:
            raise InputError("fast gradient requires layer-constant weights "
                             "(block-Toeplitz Gram matrix)")
        y = gram.solve(r)
        Y = y.reshape((Rw.shape[0], self.st.n), order="F")
        G = 2.0 * self.engine.term1(pw, Rw, Y) - \
            2.0 * self.engine.fast_grad_second(Rw, Y, gram)
        return self._grad_back(G)

    def _grad_back(self, G):
        """Map a working-kernel gradient back through the row compression."""
        return G @ self.phi.T if self.phi is not None else G

    def jacobian_dp(self, p, R, col_js=None):
        pw, Rw, r, gram = self._context(p, R)
        M = self.st.evaluate(pw)
        d = Rw.shape[0]
        y = gram.solve(r)
        Y = y.reshape((d, self.st.n), order="F")
        if self.phi is not None:
            full = self._phi_jac(
                self._jac_dp_working(Rw, M, Y, gram, range(self.st.m)), d)
            return full if col_js is None else full[:, _col_idx(col_js, d)]
        cols = range(self.st.m) if col_js is None else col_js
        return self._jac_dp_working(Rw, M, Y, gram, cols)

    def _jac_dp_working(self, Rw, M, Y, gram, col_js):
        col_js = list(col_js)
        d = Rw.shape[0]
        Z = self.engine.z_matrix(Rw, Y, M, col_js, 1.0)
        U = gram.solve(Z)
        out = np.empty((self.nparam, d * len(col_js)))
        E = np.zeros((self.st.m, self.st.n))
        for jj, j in enumerate(col_js):
            for i in range(d):
                c = jj * d + i
                Uc = U[:, c].reshape((d, self.st.n), order="F")
                dp = self.ws.sqrt_winv_t_apply(self.st.adjoint(Rw.T @ Uc))
                E[j, :] = Y[i, :]
                dp += self.ws.sqrt_winv_t_apply(self.st.adjoint(E))
                E[j, :] = 0.0
                out[:, c] = self._unpermute(dp)
        return out

    def pseudo_jacobian(self, p, R, col_js=None):
        pw, Rw, r, gram = self._context(p, R)
        M = self.st.evaluate(pw)
        d = Rw.shape[0]
        y = gram.solve(r)
        Y = y.reshape((d, self.st.n), order="F")
        if self.phi is not None:
            Z = self.engine.z_matrix(Rw, Y, M, range(self.st.m), 0.5)
            full = self._phi_jac(gram.half_solve(Z), d)
            return full if col_js is None else full[:, _col_idx(col_js, d)]
        cols = list(range(self.st.m)) if col_js is None else list(col_js)
        Z = self.engine.z_matrix(Rw, Y, M, cols, 0.5)
        return gram.half_solve(Z)

    def _phi_jac(self, J_inner, d):
        """Chain rule through the row compression: mix inner kernel columns."""
        mprime = self.st.m
        ncols = J_inner.shape[0]
        J3 = J_inner.reshape(ncols, mprime, d)
        out = np.einsum("ncd,jc->njd", J3, self.phi)
        return out.reshape(ncols, -1)

    def evaluate(self, p, R, want=("cost",), jac_cols=None):
        """Evaluate several quantities sharing one factored Gram system."""
        pw, Rw, r, gram = self._context(p, R)
        M = None
        if set(want) & {"jacobian_dp", "pseudo_jacobian"}:
            M = self.st.evaluate(pw)
        d = Rw.shape[0]
        ev = Evaluation()
        g = gram.half_solve(r)
        ev.half_residual = g
        ev.f = float(g @ g)
        needs_y = set(want) & {"correction", "gradient", "fast_gradient",
                               "jacobian_dp", "pseudo_jacobian"}
        if needs_y:
            y = gram.solve(r)
            Y = y.reshape((d, self.st.n), order="F")
        if "correction" in want:
            ev.dp_star = self._correction_from(Rw, Y)
        if "gradient" in want or "fast_gradient" in want:
            use_fast = "fast_gradient" in want and gram.toeplitz
            second = (self.engine.fast_grad_second if use_fast
                      else self.engine.grad_second)(Rw, Y, gram)
            ev.grad = self._grad_back(
                2.0 * self.engine.term1(pw, Rw, Y) - 2.0 * second)
        inner_cols = list(range(self.st.m)) if (jac_cols is None or
                                                self.phi is not None) \
            else list(jac_cols)
        if "jacobian_dp" in want:
            ev.jac = self._jac_dp_working(Rw, M, Y, gram, inner_cols)
            if self.phi is not None:
                ev.jac = self._phi_jac(ev.jac, d)
                if jac_cols is not None:
                    ev.jac = ev.jac[:, _col_idx(jac_cols, d)]
        if "pseudo_jacobian" in want:
            Z = self.engine.z_matrix(Rw, Y, M, inner_cols, 0.5)
            pj = gram.half_solve(Z)
            if self.phi is not None:
                pj = self._phi_jac(pj, d)
                if jac_cols is not None:
                    pj = pj[:, _col_idx(jac_cols, d)]
            ev.pseudo_jac = pj
        return ev


def _col_idx(col_js, d):
    """Flat Jacobian column indices of the kernel columns in col_js."""
    return np.concatenate([np.arange(d) + j * d for j in col_js])


def _permute_weights(ws, perm):
    if isinstance(ws, DiagonalWeights):
        return DiagonalWeights(ws.w[perm])
    if isinstance(ws, FullWeights):
        return FullWeights(ws.W[np.ix_(perm, perm)])
    raise InputError("cannot transpose a problem with banded-inverse "
                     "weights; supply the transposed structure instead")


def _banded_vmatvec(st, winv):
    m, n = st.m, st.n
    s = m + winv.bandwidth - 1

    def vmatvec(x):
        X = x.reshape((m, n), order="F")
        out = np.zeros_like(X)
        for i in range(n):
            for j in range(max(0, i - s + 1), min(n, i + s)):
                out[:, i] += winv.winv_submatrix(i, j, m) @ X[:, j]
        return out.ravel(order="F")

    return vmatvec


# -- module-level operation wrappers (one evaluator per call) ---------------

def residual(structure, weights, p, R):
    return VarproProblem(structure, weights).residual(p, R)


def cost(structure, weights, p, R):
    return VarproProblem(structure, weights).cost(p, R)


def correction(structure, weights, p, R):
    return VarproProblem(structure, weights).correction(p, R)


def gradient(structure, weights, p, R):
    return VarproProblem(structure, weights).gradient(p, R)


def fast_gradient(structure, weights, p, R):
    return VarproProblem(structure, weights).fast_gradient(p, R)


def jacobian_dp(structure, weights, p, R):
    return VarproProblem(structure, weights).jacobian_dp(p, R)


def pseudo_jacobian(structure, weights, p, R):
    return VarproProblem(structure, weights).pseudo_jacobian(p, R)
