"""Conditioning analysis of block-Toeplitz Gram matrices and the scaling
benchmark harness.

The spectrum of the banded block-Toeplitz Gram matrix is governed by its
matrix trigonometric polynomial on the unit circle; sampling its extreme
eigenvalues bounds the condition number, and the growth of the condition
number with the matrix size is measured directly by Lanczos iterations on
the band.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg.blas import dsbmv
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .backend import get_backend
from .errors import InputError, SingularGramError
from .gram import HankelColumnGram, build_gram
from .structure import HankelStructure, MosaicHankelStructure
from .varpro import VarproProblem
from .weights import DiagonalWeights


@dataclass
class GeneratingFunction:
    """Matrix trigonometric polynomial sum_k B_k z^k with B_{-k} = B_k^T."""
    blocks: np.ndarray    # (s, d, d): lags 0..s-1

    @classmethod
    def from_gram(cls, gs):
        if not gs.toeplitz or gs.toeplitz_blocks is None:
            raise InputError("generating function requires a block-Toeplitz "
                             "Gram system")
        return cls(np.asarray(gs.toeplitz_blocks))

    def eval_at(self, z):
        s, d, _ = self.blocks.shape
        F = np.array(self.blocks[0], dtype=complex)
        for k in range(1, s):
            F += self.blocks[k] * z ** k + self.blocks[k].T * z ** (-k)
        return F


def gf_bounds(gf, samples=512):
    """Extreme eigenvalues of the generating function sampled on the circle.

    Returns (a, b): the sampled minimum of the smallest and maximum of the
    largest eigenvalue.  The sampled a is an upper bound on the true one
    (and b a lower bound); enough samples resolve clustered minima.
    """
    if samples < 64:
        raise InputError("need at least 64 circle samples")
    a = np.inf
    b = -np.inf
    for t in np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False):
        w = np.linalg.eigvalsh(gf.eval_at(np.exp(1j * t)))
        a = min(a, w[0])
        b = max(b, w[-1])
    return float(a), float(b)


def roots_to_kernel(roots):
    """Row kernel whose polynomial (ascending coefficients) has the roots."""
    coeffs = np.poly(np.asarray(roots, dtype=complex))[::-1]
    if np.abs(coeffs.imag).max() > 1e-9 * max(np.abs(coeffs.real).max(), 1.0):
        raise InputError("roots must come in conjugate pairs (real kernel)")
    return coeffs.real.reshape(1, -1).copy()


def hankel_gram(R, n, backend=None):
    """Unweighted Gram system of a scalar Hankel structure at kernel R."""
    m = R.shape[1]
    st = HankelStructure(m, n)
    prov = HankelColumnGram(st, np.ones(st.nparam))
    return build_gram(prov, R, backend=get_backend(backend))


def extreme_eigenvalues(gs, tol=1e-6):
    """(lambda_min, lambda_max) of the banded Gram matrix by Lanczos.

    The largest eigenvalue uses banded matrix-vector products; the smallest
    uses inverse iteration through the banded Cholesky factor.
    """
    N = gs.size
    bw = gs.band.shape[1] - 1
    band = gs.band.T  # (bw+1, N) Fortran order, zero copy

    def matvec(x):
        return dsbmv(bw, 1.0, band, x, lower=1)

    op = LinearOperator((N, N), matvec=matvec, dtype=float)
    try:
        lmax = float(eigsh(op, k=1, which="LA", tol=tol,
                           return_eigenvectors=False)[0])
    except ArpackNoConvergence as exc:
        raise InputError(f"Lanczos failed to converge for the largest "
                         f"eigenvalue: {exc}") from exc
    gs.factor()
    inv = LinearOperator((N, N), matvec=gs.solve, dtype=float)
    try:
        theta = float(eigsh(inv, k=1, which="LA", tol=tol,
                            return_eigenvectors=False)[0])
    except ArpackNoConvergence as exc:
        raise InputError(f"Lanczos failed to converge for the smallest "
                         f"eigenvalue: {exc}") from exc
    return 1.0 / theta, lmax


def kappa_growth(r_poly_roots, n_list, tol=1e-6, backend=None):
    """Condition number of the unweighted Hankel Gram matrix versus size.

    Returns (rows, slope): rows of (n, kappa2) and the log-log slope fitted
    with the two smallest sizes discarded.
    """
    R = roots_to_kernel(r_poly_roots)
    rows = []
    for n in n_list:
        gs = hankel_gram(R, int(n), backend=backend)
        try:
            lmin, lmax = extreme_eigenvalues(gs, tol=tol)
            kappa = lmax / lmin if lmin > 0 else np.inf
        except SingularGramError:
            kappa = np.inf
        rows.append((int(n), float(kappa)))
    ns = np.array([r[0] for r in rows], dtype=float)
    ks = np.array([r[1] for r in rows], dtype=float)
    finite = np.isfinite(ks)
    slope = fit_loglog_slope(ns[finite], ks[finite]) if finite.sum() >= 3 \
        else np.nan
    return rows, slope


def fit_loglog_slope(xs, ys, discard=2):
    """Least-squares slope of log y against log x, dropping the smallest
    ``discard`` x values (constant-overhead contamination)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    order = np.argsort(xs)
    xs, ys = xs[order], ys[order]
    if xs.size > discard + 1:
        xs, ys = xs[discard:], ys[discard:]
    if xs.size < 2:
        raise InputError("need at least two sizes to fit a slope")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


@dataclass
class BenchRecord:
    variant: str
    operation: str
    m: int
    n: int
    d: int
    time_ms: float
    reps: int


def bench_kernel(d, m):
    """Fixed dense well-conditioned kernel used by the timing benchmarks.

    Every stored entry is nonzero so that sparsity shortcuts in the kernels
    cannot flatter the timings.  The truncated geometric series has all its
    polynomial roots on the circle of radius 2, far from the unit circle,
    which keeps the generating function well conditioned and lets the
    block-Toeplitz factorization converge quickly, the regime its
    complexity claim describes.
    """
    decay = 0.5 ** np.arange(m, dtype=float)
    R = np.zeros((d, m))
    for i in range(d):
        R[i, i:] = decay[:m - i]
    return R


def _bench_contexts(spec, backend=None):
    """Build the timed closures of one benchmark instance spec.

    spec keys: m_vec, n_vec, d, variant ('element_wise'|'block_wise'),
    ops (subset of cost/gradient/pseudo_jacobian), reps (>= 5), seed.
    """
    m_vec = list(spec["m_vec"])
    n_vec = list(spec["n_vec"])
    d = int(spec.get("d", 1))
    variant = spec["variant"]
    if variant not in ("element_wise", "block_wise"):
        raise InputError(f"unknown variant {variant!r}")
    ops = list(spec.get("ops", ("cost", "gradient", "pseudo_jacobian")))
    reps = max(int(spec.get("reps", 5)), 5)
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    st = MosaicHankelStructure(m_vec, n_vec)
    ws = DiagonalWeights(np.ones(st.nparam))
    vp = VarproProblem(st, ws, force_elementwise=(variant == "element_wise"),
                       backend=backend)
    p = rng.standard_normal(st.nparam)
    R = bench_kernel(d, st.m)
    out = []
    for op in ops:
        if op == "cost":
            fn = lambda: vp.cost(p, R)
        elif op == "gradient":
            fn = (lambda: vp.fast_gradient(p, R)) \
                if variant == "block_wise" else (lambda: vp.gradient(p, R))
        elif op == "pseudo_jacobian":
            fn = lambda: vp.pseudo_jacobian(p, R)
        else:
            raise InputError(f"unknown benchmark operation {op!r}")
        rec = BenchRecord(variant=variant, operation=op, m=st.m, n=st.n,
                          d=d, time_ms=0.0, reps=reps)
        out.append((rec, fn))
    return out


def bench_instance(spec, backend=None):
    """Run one benchmark instance spec and return its records."""
    return _run_contexts(_bench_contexts(spec, backend=backend))


def _run_contexts(contexts):
    """Time closures back to back: repetitions of one context stay
    consecutive (warm caches, the regime a repeated solver evaluation
    sees) and the median over them absorbs machine noise."""
    out = []
    for rec, fn in contexts:
        fn()  # warm up
        times = []
        for _ in range(rec.reps):
            t0 = time.perf_counter()
            fn()
            times.append((time.perf_counter() - t0) * 1e3)
        rec.time_ms = float(np.median(times))
        out.append(rec)
    return out


def bench_scaling(plan, backend=None, jobs=1, passes=2, shuffle_seed=0):
    """Run a list of benchmark instance specs.

    Instances run in a shuffled order and the whole plan is swept
    ``passes`` times, keeping per record the smallest of the pass medians;
    both measures decorrelate machine speed drift from instance size.
    """
    if jobs > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_bench_worker,
                                  [(spec, backend) for spec in plan]))
        return [rec for group in results for rec in group]
    order = np.random.default_rng(shuffle_seed).permutation(len(plan))
    best = {}
    for _ in range(max(passes, 1)):
        for idx in order:
            for rec in bench_instance(plan[idx], backend=backend):
                key = (rec.variant, rec.operation, rec.m, rec.n, rec.d)
                if key not in best or rec.time_ms < best[key].time_ms:
                    best[key] = rec
    out = []
    for spec in plan:
        m, n, d = sum(spec["m_vec"]), sum(spec["n_vec"]), spec.get("d", 1)
        for op in spec.get("ops", ("cost", "gradient", "pseudo_jacobian")):
            out.append(best[(spec["variant"], op, m, n, d)])
    return out


def _bench_worker(args):
    spec, backend = args
    return bench_instance(spec, backend=backend)


def ex1_plan(k_range=range(11), d=1, reps=5,
             ops=("cost", "gradient", "pseudo_jacobian")):
    """Two-layer mosaic family with growing column counts, both variants."""
    plan = []
    for variant in ("element_wise", "block_wise"):
        for k in k_range:
            plan.append({"m_vec": [20, 22],
                         "n_vec": [250 + 250 * k, 255 + 250 * k],
                         "d": d, "variant": variant, "ops": list(ops),
                         "reps": reps, "seed": 0})
    return plan


def hankel_m_sweep_plan(m_list=(25, 50, 100, 200, 400), n=2000, reps=5,
                        ops=("cost", "gradient", "pseudo_jacobian")):
    """Scalar Hankel row sweep at fixed column count, both variants."""
    plan = []
    for variant in ("element_wise", "block_wise"):
        for m in m_list:
            plan.append({"m_vec": [m], "n_vec": [n], "d": 1,
                         "variant": variant, "ops": list(ops),
                         "reps": reps, "seed": 0})
    return plan


def records_to_csv(records):
    lines = ["variant,operation,m,n,d,time_ms,reps"]
    for r in records:
        lines.append(f"{r.variant},{r.operation},{r.m},{r.n},{r.d},"
                     f"{r.time_ms:.6f},{r.reps}")
    return "\n".join(lines) + "\n"


def slopes_by_operation(records, axis="n", discard=2):
    """Fitted log-log slope per (variant, operation) against m or n."""
    keys = sorted({(r.variant, r.operation) for r in records})
    out = {}
    for variant, op in keys:
        rows = [r for r in records if r.variant == variant
                and r.operation == op]
        xs = [getattr(r, axis) for r in rows]
        ts = [r.time_ms for r in rows]
        out[(variant, op)] = fit_loglog_slope(xs, ts, discard=discard)
    return out
