"""Weakly convex variational regularisation for linear inverse problems.

Building blocks: dense array utilities and image metrics (``arrays``),
forward operators with certified adjoints and norms (``operators``), the
weak-convexity calculus with proximal maps and critical-point bounds
(``functionals``), the squared-L2 fidelity conjugate (``fidelity``), the
over-relaxed primal-dual solver with descent and rate diagnostics
(``pdhgm``), the noise-schedule harness (``regpath``), toy learned
regularisers (``toylearn``), and a deterministic CLI (``cli``).
"""

from . import (arrays, errors, fidelity, functionals, operators, pdhgm,
               phantoms, regpath, toylearn)

__version__ = "0.1.0"

__all__ = [
    "arrays",
    "errors",
    "fidelity",
    "functionals",
    "operators",
    "pdhgm",
    "phantoms",
    "regpath",
    "toylearn",
    "__version__",
]
