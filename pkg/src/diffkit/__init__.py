"""diffkit: path transformations for one-dimensional regular diffusions.

Library + CLI for first-exit-time Monte Carlo, European pricing under
strict-local-martingale (bubble) dynamics via a uniquely solvable transformed
Cauchy problem, and explicit perpetual-American optimal stopping through
concave majorants.
"""

from .coeffs import ModelFamily, expand_family, parse_expr, eval_expr, compile_fn
from .core import (
    DiffusionSpec,
    ScaleSpeed,
    ClassificationReport,
    check_engelbert_schmidt,
    classify,
    scale_speed,
)

__all__ = [
    "ModelFamily",
    "expand_family",
    "parse_expr",
    "eval_expr",
    "compile_fn",
    "DiffusionSpec",
    "ScaleSpeed",
    "ClassificationReport",
    "check_engelbert_schmidt",
    "classify",
    "scale_speed",
]

__version__ = "0.1.0"
