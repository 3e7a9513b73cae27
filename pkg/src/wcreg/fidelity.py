"""Data fidelity terms and the conjugate machinery the dual step needs.

Only the squared-L2 fidelity ships.  The 1/alpha weighting is folded into
the fidelity, F(y) = |y - y_ref|^2 / (2 alpha), so the regulariser and its
moduli stay fixed while alpha sweeps; the conjugate is then
F*(w) = (alpha/2)|w|^2 + <w, y_ref> with strong-convexity modulus alpha.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .arrays import inner, norm
from .errors import ConfigError, ShapeError

__all__ = [
    "Fidelity",
    "ConjugateFidelity",
    "sq_l2",
    "sq_l2_fidelity",
    "conjugate_sq_l2",
    "conj_prox",
    "conj_eval",
    "assumption_audit",
]


@dataclass
class Fidelity:
    """Distance-like term D(y, y_ref) with its triangle-type constants."""

    name: str
    eval_fn: Callable[[np.ndarray, np.ndarray], float]
    p: float
    C: float
    convex_in_first: bool = True

    def eval(self, y, y_ref) -> float:
        y = np.asarray(y, dtype=np.float64)
        y_ref = np.asarray(y_ref, dtype=np.float64)
        if y.shape != y_ref.shape:
            raise ShapeError(f"fidelity shapes {y.shape} vs {y_ref.shape}")
        return float(self.eval_fn(y, y_ref))


@dataclass
class ConjugateFidelity:
    """Conjugate of the alpha-weighted squared-L2 fidelity."""

    alpha: float
    y_delta: np.ndarray

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        self.y_delta = np.asarray(self.y_delta, dtype=np.float64)

    @property
    def mu_fid(self) -> float:
        return self.alpha


def sq_l2(y, y_ref) -> float:
    """Plain squared-L2 distance |y - y_ref|^2 / 2."""
    y = np.asarray(y, dtype=np.float64)
    y_ref = np.asarray(y_ref, dtype=np.float64)
    if y.shape != y_ref.shape:
        raise ShapeError(f"sq_l2 shapes {y.shape} vs {y_ref.shape}")
    d = y - y_ref
    return 0.5 * float(np.dot(d.ravel(), d.ravel()))


def sq_l2_fidelity() -> Fidelity:
    # the triangle-type inequality holds with C = 2, p = 2 (worst ratio 1.5)
    return Fidelity("sq_l2", sq_l2, p=2.0, C=2.0, convex_in_first=True)


def conjugate_sq_l2(alpha: float, y_delta) -> ConjugateFidelity:
    return ConjugateFidelity(alpha=alpha, y_delta=y_delta)


def conj_eval(cf: ConjugateFidelity, w) -> float:
    """F*(w) = (alpha/2)|w|^2 + <w, y_delta>."""
    w = np.asarray(w, dtype=np.float64)
    return 0.5 * cf.alpha * float(np.dot(w.ravel(), w.ravel())) + inner(w, cf.y_delta)


def conj_prox(cf: ConjugateFidelity, sigma: float, v) -> np.ndarray:
    """argmin_w F*(w) + |w - v|^2 / (2 sigma) = (v - sigma y_delta) / (1 + sigma alpha)."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    v = np.asarray(v, dtype=np.float64)
    return (v - sigma * cf.y_delta) / (1.0 + sigma * cf.alpha)


def assumption_audit(fid: Fidelity, samples: int = 10000, dim: int = 4,
                     box=(-2.0, 2.0), seed: int = 0) -> dict:
    """Empirical audit of D(y1,y2) <= C (D(y1,y3) + |y2-y3|^p) on random triples."""
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = box
    worst = 0.0
    for _ in range(samples):
        y1 = rng.uniform(lo, hi, size=dim)
        y2 = rng.uniform(lo, hi, size=dim)
        y3 = rng.uniform(lo, hi, size=dim)
        denom = fid.eval(y1, y3) + norm(y2 - y3) ** fid.p
        if denom == 0.0:
            continue
        worst = max(worst, fid.eval(y1, y2) / denom)
    return {
        "name": fid.name,
        "claim": f"triangle-type bound with C={fid.C}, p={fid.p}",
        "samples": samples,
        "worst_violation": worst,
        "pass": bool(worst <= fid.C),
    }
