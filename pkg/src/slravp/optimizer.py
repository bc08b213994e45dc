"""Outer minimization of the projected cost over full-row-rank kernels.

Levenberg-Marquardt on the residual whose squared norm is the cost: either
the half-solved residual (with the pseudo-Jacobian) or the optimal
correction (with its exact Jacobian).  The default parametrization pins the
kernel to [X -I] times a fixed column permutation chosen so that the
eliminated block is well conditioned; the alternative optimizes all kernel
entries with row re-orthonormalization after each accepted step.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InputError, SingularGramError
from .structure import HankelStructure
from .varpro import VarproProblem
from .weights import as_weights


@dataclass
class SolverOptions:
    parametrization: str = "stls_xi"      # or "full_r"
    max_iter: int = 100
    grad_tol: float = 1e-8                # on ||grad||_inf relative to start
    step_tol: float = 1e-12               # relative step size
    lm_lambda0: float = 1e-3
    lm_up: float = 10.0
    lm_down: float = 0.1
    hessian_source: str = "pseudo_jacobian"   # or "jacobian_dp"
    init: str = "svd"                     # or "random"
    seed: int = 0

    def validate(self):
        if self.parametrization not in ("stls_xi", "full_r"):
            raise InputError(f"unknown parametrization {self.parametrization!r}")
        if self.hessian_source not in ("pseudo_jacobian", "jacobian_dp"):
            raise InputError(f"unknown hessian source {self.hessian_source!r}")
        for name in ("grad_tol", "step_tol", "lm_lambda0", "lm_up", "lm_down"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")


@dataclass
class SolveResult:
    R_opt: np.ndarray
    p_hat: np.ndarray
    f_opt: float
    iterations: int
    convergence_reason: str
    trace: list = field(default_factory=list)   # (iter, f, gnorm, lam, step)
    rank_certificate: float = None
    reduced_from: tuple = None    # (m, r) of the original scalar Hankel


def initialize(structure, weights, p, d):
    """Kernel seed and column permutation.

    The seed spans the d least-significant left singular vectors of the
    evaluated (possibly transposed) matrix; the permutation puts the d most
    independent kernel columns (by column-pivoted QR) last, where the
    [X -I] parametrization eliminates them.
    """
    M = structure.evaluate(np.asarray(p, dtype=float))
    if M.shape[0] > M.shape[1]:
        M = M.T
    m = M.shape[0]
    if d >= m:
        raise InputError(f"rank reduction {d} must be below {m} rows")
    U, _, _ = np.linalg.svd(M)
    R0 = U[:, m - d:].T.copy()
    return R0, kernel_permutation(R0)


def kernel_permutation(R0):
    """Column order ending in the best-conditioned square block of R0."""
    d, m = R0.shape
    _, _, piv = scipy.linalg.qr(R0, pivoting=True, mode="economic")
    return np.concatenate([np.sort(piv[d:]), piv[:d]])


def reduce_hankel_rank(m, np_len, r):
    """Equivalent scalar-Hankel dimensions with rank reduction one.

    A Hankel matrix built on np_len parameters has rank <= r exactly when
    the (r+1)-row Hankel matrix on the same parameters does, so (m', r') =
    (r+1, r) with d' = 1.
    """
    n = np_len - m + 1
    if r >= min(m, n):
        raise InputError("rank must be below both matrix dimensions")
    return r + 1, r


def _is_scalar_hankel(structure):
    from .structure import MosaicHankelStructure
    return isinstance(structure, MosaicHankelStructure) and \
        structure.q == 1 and structure.nstripes == 1


def _xi_kernel(X, perm, d, m):
    R = np.empty((d, m))
    r = m - d
    R[:, perm[:r]] = X
    R[:, perm[r:]] = -np.eye(d)
    return R


def _orth_rows(R):
    Q, _ = np.linalg.qr(R.T)
    return Q.T.copy()


def solve(structure, weights, p, r, opts=None, R0=None):
    """Minimize the weighted distance to rank <= r structured matrices."""
    opts = opts or SolverOptions()
    opts.validate()
    p = np.asarray(p, dtype=float)
    ws = as_weights(weights, structure.nparam)

    vp = VarproProblem(structure, ws)
    m = vp.kernel_width
    n = vp.n_cols
    if not (0 < r < min(m, n)):
        raise InputError(f"rank {r} must lie strictly between 0 and "
                         f"{min(m, n)}")
    d = m - r
    reduced_from = None
    if _is_scalar_hankel(structure) and d > 1:
        # scalar Hankel problems always reduce to rank reduction one; the
        # inner system is otherwise rank deficient for every kernel
        m_red, _ = reduce_hankel_rank(min(structure.m, structure.n),
                                      structure.nparam, r)
        reduced_from = (structure.m, r)
        structure = HankelStructure(m_red, structure.nparam - m_red + 1)
        vp = VarproProblem(structure, ws)
        m = vp.kernel_width
        d = m - r
        R0 = None
    if vp.nparam < n * d:
        raise InputError(
            f"necessary condition violated: {vp.nparam} parameters < "
            f"{n} columns x {d} rank reduction")

    rng = np.random.default_rng(opts.seed)
    if R0 is not None:
        R0 = np.atleast_2d(np.asarray(R0, dtype=float))
        if R0.shape != (d, m):
            raise InputError(f"initial kernel must be {d}x{m}")
        perm = kernel_permutation(R0)
    elif opts.init == "random":
        R0 = _orth_rows(rng.standard_normal((d, m)))
        perm = kernel_permutation(R0)
    else:
        R0, perm = initialize(structure, ws, p, d)

    if opts.parametrization == "stls_xi":
        B = R0[:, perm[r:]]
        try:
            X = -np.linalg.solve(B, R0[:, perm[:r]])
        except np.linalg.LinAlgError:
            raise SingularGramError(
                "eliminated kernel block is singular; re-permute or supply "
                "a different initial kernel") from None
        kernel_of = lambda X_: _xi_kernel(X_, perm, d, m)
        xcols = [int(c) for c in perm[:r]]
        x = X.copy()
    else:
        kernel_of = lambda R_: R_
        xcols = None
        x = _orth_rows(R0)

    def eval_point(xcur):
        R = kernel_of(xcur)
        if opts.hessian_source == "pseudo_jacobian":
            ev = vp.evaluate(p, R, want=("pseudo_jacobian",), jac_cols=xcols)
            return ev.f, ev.half_residual, ev.pseudo_jac
        ev = vp.evaluate(p, R, want=("correction", "jacobian_dp"),
                         jac_cols=xcols)
        return ev.f, ev.dp_star, ev.jac

    def eval_cost(xcur):
        return vp.cost(p, kernel_of(xcur))

    try:
        f, g, J = eval_point(x)
    except SingularGramError as exc:
        raise SingularGramError(
            f"Gram matrix singular at the initial kernel ({exc}); try a "
            "different permutation or initial kernel") from exc

    grad = 2.0 * (J.T @ g)
    gnorm0 = np.abs(grad).max()
    lam = opts.lm_lambda0
    trace = [(0, f, gnorm0, lam, 0.0)]
    reason = "max_iter"
    it = 0
    while it < opts.max_iter:
        gnorm = np.abs(grad).max()
        if gnorm <= opts.grad_tol * max(gnorm0, 1e-300):
            reason = "grad_tol"
            break
        A = J.T @ J
        dg = np.diag(A).copy()
        dg = np.maximum(dg, 1e-14 * max(dg.max(), 1e-300))
        accepted = False
        while True:
            try:
                delta = np.linalg.solve(A + lam * np.diag(dg), -0.5 * grad)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None:
                x_trial = x + delta.reshape(x.shape)
                if opts.parametrization == "full_r":
                    x_trial = _orth_rows(x_trial)
                try:
                    f_trial = eval_cost(x_trial)
                except SingularGramError:
                    f_trial = np.inf
                if f_trial < f:
                    step = np.linalg.norm(delta)
                    x = x_trial
                    f, g, J = eval_point(x)
                    grad = 2.0 * (J.T @ g)
                    lam = max(lam * opts.lm_down, 1e-14)
                    it += 1
                    trace.append((it, f, np.abs(grad).max(), lam, step))
                    accepted = True
                    if step <= opts.step_tol * (1.0 + np.linalg.norm(x)):
                        reason = "step_tol"
                    break
            lam *= opts.lm_up
            if lam > 1e14:
                reason = "lm_stalled"
                break
        if reason in ("step_tol", "lm_stalled"):
            break

    R_opt = kernel_of(x)
    dp = vp.correction(p, R_opt)
    p_hat = ws.reparametrize(p, dp)
    f_opt = float(dp @ dp)
    return SolveResult(R_opt=R_opt, p_hat=p_hat, f_opt=f_opt, iterations=it,
                       convergence_reason=reason, trace=trace,
                       rank_certificate=_rank_certificate(
                           vp.original_structure, p_hat, r),
                       reduced_from=reduced_from)


def _rank_certificate(structure, p_hat, r):
    s = np.linalg.svd(structure.evaluate(p_hat), compute_uv=False)
    if s[0] == 0.0:
        return 0.0
    return float(s[r] / s[0])
