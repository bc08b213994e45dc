"""Structured low-rank approximation by variable projection.

Find the nearest parameter vector (in a weighted 2-norm, possibly with
fixed entries) whose affinely structured matrix drops to a prescribed
rank.  The inner correction is eliminated analytically; evaluation of the
projected cost and its derivatives exploits the block-banded (and
block-Toeplitz) structure of the underlying Gram matrix, with compiled
kernels and a pure-numpy fallback.
"""

from .backend import HAVE_COMPILED, available_backends, get_backend
from .errors import (InfeasibleError, InputError, SingularGramError,
                     SizeCapError, SlravpError)
from .structure import (GeneralAffineStructure, HankelStructure,
                        MosaicHankelStructure, PhiComposedStructure,
                        block_hankel_permutations, evaluate, vec_map)
from .weights import (BandedInverseWeights, DiagonalWeights, FullWeights,
                      frobenius_weight, identity_weights)
from .varpro import (Evaluation, Residual, VarproProblem, correction, cost,
                     fast_gradient, gradient, jacobian_dp, pseudo_jacobian,
                     residual)
from .optimizer import (SolveResult, SolverOptions, initialize,
                        reduce_hankel_rank, solve)
from . import analysis, gram, oracle

__version__ = "0.1.0"

__all__ = [
    "HAVE_COMPILED", "available_backends", "get_backend",
    "InfeasibleError", "InputError", "SingularGramError", "SizeCapError",
    "SlravpError",
    "GeneralAffineStructure", "HankelStructure", "MosaicHankelStructure",
    "PhiComposedStructure", "block_hankel_permutations", "evaluate",
    "vec_map",
    "BandedInverseWeights", "DiagonalWeights", "FullWeights",
    "frobenius_weight", "identity_weights",
    "Evaluation", "Residual", "VarproProblem", "correction", "cost",
    "fast_gradient", "gradient", "jacobian_dp", "pseudo_jacobian",
    "residual",
    "SolveResult", "SolverOptions", "initialize", "reduce_hankel_rank",
    "solve",
    "analysis", "gram", "oracle",
]
