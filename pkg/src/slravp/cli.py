"""Command-line interface: problem files in, results out.

Subcommands: solve, eval, bench, cond, validate.  Problem files are JSON
(weights may use the string "inf" for fixed values); all numeric output is
written with 17 significant digits so results round-trip exactly.

Exit codes: 0 success, 1 input error, 2 non-convergence, 3 singular Gram
matrix.
"""

import argparse
import json
import sys

import numpy as np

from . import analysis, optimizer
from .errors import InputError, SingularGramError, SlravpError
from .structure import (GeneralAffineStructure, HankelStructure,
                        MosaicHankelStructure, PhiComposedStructure)
from .varpro import VarproProblem
from .weights import (BandedInverseWeights, DiagonalWeights, FullWeights,
                      identity_weights)

_SCHEMA = {
    "type": "object",
    "required": ["structure", "p", "rank"],
    "properties": {
        "structure": {"type": "object", "required": ["kind"]},
        "weights": {"type": "object"},
        "p": {"type": "array"},
        "rank": {"type": "integer", "minimum": 1},
        "R_init": {"type": "array"},
        "options": {"type": "object"},
    },
}


def _num(x, where):
    """Parse a number that may be the string 'inf'."""
    if isinstance(x, str):
        if x.lower() in ("inf", "infinity", "+inf"):
            return np.inf
        raise InputError(f"{where}: cannot parse number {x!r}")
    return float(x)


def parse_structure(obj):
    kind = obj.get("kind")
    if kind == "hankel":
        return HankelStructure(int(obj["m"]), int(obj["n"]))
    if kind == "mosaic":
        return MosaicHankelStructure(obj["m_vec"], obj["n_vec"])
    if kind == "general":
        return GeneralAffineStructure(int(obj["m"]), int(obj["n"]),
                                      obj["basis"], obj.get("s0", ()))
    if kind == "phi":
        inner = parse_structure(obj["inner"])
        return PhiComposedStructure(np.asarray(obj["phi"], dtype=float),
                                    inner)
    raise InputError(f"unknown structure kind {kind!r}")


def parse_weights(obj, nparam):
    if obj is None:
        return identity_weights(nparam)
    if "w" in obj:
        return DiagonalWeights([_num(x, "weights.w") for x in obj["w"]])
    if "W" in obj:
        return FullWeights(np.asarray(obj["W"], dtype=float))
    if "Winv_band" in obj:
        spec = obj["Winv_band"]
        band = np.asarray(spec["rows"], dtype=float)
        if band.shape[0] != int(spec.get("bandwidth", band.shape[0])):
            raise InputError("Winv_band: bandwidth does not match rows")
        return BandedInverseWeights(band)
    raise InputError("weights must provide one of w / W / Winv_band")


def load_problem(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read problem file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"problem file is not valid JSON: {exc}") from exc
    try:
        import jsonschema
        jsonschema.validate(data, _SCHEMA)
    except ImportError:
        pass
    except Exception as exc:
        raise InputError(f"problem file schema error: {exc.message}"
                         if hasattr(exc, "message") else str(exc)) from exc
    structure = parse_structure(data["structure"])
    p = np.asarray([_num(x, "p") for x in data["p"]], dtype=float)
    if p.size != structure.nparam:
        raise InputError(f"p has {p.size} entries, structure needs "
                         f"{structure.nparam}")
    weights = parse_weights(data.get("weights"), structure.nparam)
    rank = int(data["rank"])
    r_init = None
    if "R_init" in data:
        r_init = np.atleast_2d(np.asarray(data["R_init"], dtype=float))
    opts = optimizer.SolverOptions(**data.get("options", {}))
    return structure, weights, p, rank, r_init, opts


def _fmt(x):
    return format(float(x), ".16e")


def _fmt_vec(v):
    return [" ".join(_fmt(x) for x in np.atleast_1d(row))
            for row in np.atleast_2d(v)]


def _check_nc(structure, weights, rank):
    vp = VarproProblem(structure, weights)
    d = vp.kernel_width - rank
    if d < 1:
        raise InputError(f"rank {rank} does not reduce the rank of a "
                         f"{vp.kernel_width}-row matrix")
    from .optimizer import _is_scalar_hankel
    if vp.nparam < vp.n_cols * d and not (
            _is_scalar_hankel(structure) and d > 1):
        raise InputError(
            f"necessary condition violated: {vp.nparam} parameters < "
            f"{vp.n_cols} columns x {d} rank reduction")
    return vp, d


def cmd_solve(args):
    structure, weights, p, rank, r_init, opts = load_problem(args.problem)
    _apply_flag_options(args, opts)
    _check_nc(structure, weights, rank)
    result = optimizer.solve(structure, weights, p, rank, opts=opts,
                             R0=r_init)
    out = {
        "f_opt": result.f_opt,
        "p_hat": result.p_hat.tolist(),
        "R_opt": result.R_opt.tolist(),
        "iterations": result.iterations,
        "convergence_reason": result.convergence_reason,
        "rank_certificate": result.rank_certificate,
    }
    text = json.dumps(out, indent=1)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("iter,f,grad_norm,lambda,step_norm\n")
            for row in result.trace:
                fh.write(",".join(_fmt(x) if i else str(int(x))
                                  for i, x in enumerate(row)) + "\n")
    return 0 if result.convergence_reason in ("grad_tol", "step_tol") else 2


def cmd_eval(args):
    structure, weights, p, rank, r_init, _ = load_problem(args.problem)
    if args.R is not None:
        R = np.atleast_2d(np.loadtxt(args.R, ndmin=2))
    elif r_init is not None:
        R = r_init
    else:
        raise InputError("eval needs a kernel: R_init in the problem file "
                         "or --R")
    vp = VarproProblem(structure, weights)
    what = args.what
    if what == "cost":
        print(_fmt(vp.cost(p, R)))
    elif what == "grad":
        for line in _fmt_vec(vp.gradient(p, R)):
            print(line)
    elif what == "correction":
        for line in _fmt_vec(vp.correction(p, R)):
            print(line)
    elif what == "jac":
        for line in _fmt_vec(vp.jacobian_dp(p, R)):
            print(line)
    elif what == "pjac":
        for line in _fmt_vec(vp.pseudo_jacobian(p, R)):
            print(line)
    else:
        raise InputError(f"unknown eval quantity {what!r}")
    return 0


def cmd_bench(args):
    if args.plan:
        with open(args.plan) as fh:
            plan_data = json.load(fh)
        if isinstance(plan_data, dict) and "preset" in plan_data:
            plan = _preset_plan(plan_data)
        else:
            plan = plan_data["instances"] if isinstance(plan_data, dict) \
                else plan_data
    else:
        plan = _preset_plan({"preset": args.preset or "ex1"})
    for spec in plan:
        spec.setdefault("seed", args.seed)
    records = analysis.bench_scaling(plan, backend=args.backend,
                                     jobs=args.jobs)
    csv = analysis.records_to_csv(records)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(f"# backend={args.backend or 'auto'}\n")
            fh.write(csv)
    else:
        sys.stdout.write(csv)
    return 0


def _preset_plan(data):
    name = data["preset"]
    reps = int(data.get("reps", 5))
    if name == "ex1":
        return analysis.ex1_plan(range(int(data.get("kmax", 10)) + 1),
                                 reps=reps)
    if name == "hankel_m_sweep":
        return analysis.hankel_m_sweep_plan(
            m_list=tuple(data.get("m_list", (25, 50, 100, 200, 400))),
            n=int(data.get("n", 2000)), reps=reps)
    raise InputError(f"unknown benchmark preset {name!r}")


def cmd_cond(args):
    with open(args.spec) as fh:
        data = json.load(fh)
    if "roots" in data:
        roots = [complex(re, im) for re, im in data["roots"]]
    else:
        rng = np.random.default_rng(int(data.get("seed", args.seed)))
        pairs = int(data.get("n_pairs", 4))
        radius = float(data.get("radius", 1.0))
        ang = rng.uniform(0.0, np.pi, pairs)
        up = radius * np.exp(1j * ang)
        roots = np.concatenate([up, up.conj()])
    n_list = data.get("n_list", list(range(100, 1001, 100)))
    rows, slope = analysis.kappa_growth(roots, n_list)
    lines = ["n,kappa2"]
    lines += [f"{n},{_fmt(k)}" for n, k in rows]
    lines.append(f"# fitted_slope={slope:.6f}")
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate(args):
    structure, weights, p, rank, r_init, opts = load_problem(args.problem)
    vp, d = _check_nc(structure, weights, rank)
    print(f"ok: {structure.kind} {structure.m}x{structure.n}, "
          f"{structure.nparam} parameters, rank {rank} "
          f"(rank reduction {d})")
    return 0


def _apply_flag_options(args, opts):
    for flag, attr in [("max_iter", "max_iter"), ("grad_tol", "grad_tol"),
                       ("step_tol", "step_tol"), ("lm_lambda0", "lm_lambda0"),
                       ("lm_up", "lm_up"), ("lm_down", "lm_down"),
                       ("parametrization", "parametrization"),
                       ("hessian_source", "hessian_source"),
                       ("init", "init")]:
        val = getattr(args, flag, None)
        if val is not None:
            setattr(opts, attr, val)
    opts.seed = args.seed
    opts.validate()


def build_parser():
    ap = argparse.ArgumentParser(
        prog="slravp",
        description="Structured low-rank approximation by variable "
                    "projection")
    ap.add_argument("--seed", type=int, default=0,
                    help="seed for all randomized choices (default 0)")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="minimize the weighted distance to "
                                      "rank-deficient structured matrices")
    sp.add_argument("problem")
    sp.add_argument("--output", help="result JSON file (default stdout)")
    sp.add_argument("--trace", help="write the iteration trace CSV here")
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--grad-tol", dest="grad_tol", type=float)
    sp.add_argument("--step-tol", dest="step_tol", type=float)
    sp.add_argument("--lm-lambda0", dest="lm_lambda0", type=float)
    sp.add_argument("--lm-up", dest="lm_up", type=float)
    sp.add_argument("--lm-down", dest="lm_down", type=float)
    sp.add_argument("--parametrization",
                    choices=["stls_xi", "full_r"])
    sp.add_argument("--hessian-source", dest="hessian_source",
                    choices=["pseudo_jacobian", "jacobian_dp"])
    sp.add_argument("--init", choices=["svd", "random"])
    sp.set_defaults(func=cmd_solve)

    ep = sub.add_parser("eval", help="evaluate cost or derivatives at a "
                                     "kernel")
    ep.add_argument("problem")
    ep.add_argument("what",
                    choices=["cost", "grad", "jac", "pjac", "correction"])
    ep.add_argument("--R", help="text file with the kernel matrix "
                                "(default: R_init from the problem file)")
    ep.set_defaults(func=cmd_eval)

    bp = sub.add_parser("bench", help="run scaling benchmarks, emit CSV")
    bp.add_argument("--plan", help="JSON plan file (instances or preset)")
    bp.add_argument("--preset", choices=["ex1", "hankel_m_sweep"])
    bp.add_argument("--backend", choices=["auto", "python", "cython"])
    bp.add_argument("--jobs", type=int, default=1)
    bp.add_argument("--output")
    bp.set_defaults(func=cmd_bench)

    cp = sub.add_parser("cond", help="condition number growth study")
    cp.add_argument("spec", help="JSON file with roots or sampling recipe")
    cp.add_argument("--output")
    cp.set_defaults(func=cmd_cond)

    vp = sub.add_parser("validate", help="check a problem file")
    vp.add_argument("problem")
    vp.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except SingularGramError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (InputError, SlravpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
