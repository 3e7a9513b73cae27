"""Weak-convexity calculus: functionals, proximal maps, envelopes, bounds.

A ``Functional`` carries its certified weak-convexity modulus ``rho_wc``
(meaning f + (rho_wc/2)|.|^2 is convex), a deterministic subgradient
selection, and optionally a closed-form proximal map.  Moduli are declared
by constructors and audited empirically with ``check_rho_convexity``; they
are never inferred symbolically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .arrays import inner, norm
from .errors import CertificateError, ConfigError, InnerSolveError, NonproxableError

__all__ = [
    "Functional",
    "SplitRegulariser",
    "prox",
    "moreau",
    "power_modulus",
    "composition_modulus",
    "check_rho_convexity",
    "check_subgradient_inequality",
    "modulus_certificate",
    "zero_functional",
    "quadratic",
    "l1",
    "mcp",
    "abs_plus_cos",
    "geometric_ripple",
    "with_offset",
    "critical_point_bound",
    "critical_point_bound_cases",
    "scan_critical_points",
]


@dataclass
class Functional:
    """Evaluation, subgradient selection, and certified moduli.

    ``pointwise``/``pointwise_deriv`` are vectorised elementwise hooks for
    separable functionals; grid scans and secant audits use them when
    present.  ``quad_info = (weight, center)`` marks centred quadratics so
    split regularisers can fold them into a proximal step exactly.
    """

    name: str
    eval_fn: Callable[[np.ndarray], float]
    subgrad_fn: Callable[[np.ndarray], np.ndarray]
    rho_wc: float = 0.0
    lipschitz: Optional[float] = None
    prox_closed_form: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    strong_convexity: float = 0.0
    pointwise: Optional[Callable[[np.ndarray], np.ndarray]] = None
    pointwise_deriv: Optional[Callable[[np.ndarray], np.ndarray]] = None
    quad_info: Optional[tuple] = field(default=None, repr=False)

    def eval(self, x) -> float:
        return float(self.eval_fn(np.asarray(x, dtype=np.float64)))

    def subgrad(self, x) -> np.ndarray:
        return np.asarray(self.subgrad_fn(np.asarray(x, dtype=np.float64)))

    def batch_eval(self, points) -> np.ndarray:
        """Evaluate at each row of ``points`` (n, dim)."""
        points = np.asarray(points, dtype=np.float64)
        if self.pointwise is not None:
            return np.sum(self.pointwise(points), axis=-1)
        return np.array([self.eval(row) for row in points])


def _separable(name, pointwise, pointwise_deriv, **kwargs) -> Functional:
    return Functional(
        name=name,
        eval_fn=lambda x: float(np.sum(pointwise(x))),
        subgrad_fn=lambda x: pointwise_deriv(x),
        pointwise=pointwise,
        pointwise_deriv=pointwise_deriv,
        **kwargs,
    )


# ---------------------------------------------------------------------------
# proximal map and Moreau envelope


def prox(f: Functional, nu: float, v, tol: float = 1e-8, max_iters: int = 500):
    """argmin_z f(z) + |z - v|^2 / (2 nu); unique for nu * rho_wc < 1."""
    if nu <= 0:
        raise ConfigError(f"prox step must be positive, got {nu}")
    if nu * f.rho_wc >= 1.0:
        raise NonproxableError(
            f"nu*rho_wc = {nu * f.rho_wc:.3g} >= 1 for {f.name}; prox not unique"
        )
    v = np.asarray(v, dtype=np.float64)
    if f.prox_closed_form is not None:
        return f.prox_closed_form(nu, v)
    return _prox_descent(f, nu, v, tol, max_iters)


def _prox_descent(f, nu, v, tol, max_iters):
    # Armijo-backtracked descent on the prox objective.  The objective is
    # (1/nu - rho_wc)-strongly convex under the precondition, so plain
    # descent with halving converges; c = 1e-4.
    z = v.copy()
    phi = f.eval(z)
    step = nu
    for _ in range(max_iters):
        g = f.subgrad(z) + (z - v) / nu
        gn = norm(g)
        if gn <= tol:
            return z
        while True:
            trial = z - step * g
            phi_trial = f.eval(trial) + norm(trial - v) ** 2 / (2.0 * nu)
            if phi_trial <= phi - 1e-4 * step * gn * gn:
                break
            step *= 0.5
            if step < 1e-18:
                raise InnerSolveError(
                    f"prox line search stalled for {f.name}", residual=gn
                )
        z = trial
        phi = phi_trial
        step = min(step * 2.0, 4.0 * nu)
    g = f.subgrad(z) + (z - v) / nu
    gn = norm(g)
    if gn <= tol:
        return z
    raise InnerSolveError(
        f"prox inner solver for {f.name} stopped at residual {gn:.3g}", residual=gn
    )


def moreau(f: Functional, nu: float, x):
    """Envelope value and gradient: grad = (x - prox(x)) / nu."""
    x = np.asarray(x, dtype=np.float64)
    p = prox(f, nu, x)
    value = f.eval(p) + norm(p - x) ** 2 / (2.0 * nu)
    grad = (x - p) / nu
    return value, grad


# ---------------------------------------------------------------------------
# modulus calculus


def power_modulus(B: float, rho: float, q: float) -> float:
    """Modulus of f^q for f bounded in [0, B] and rho-weakly convex."""
    if q < 1:
        raise ConfigError(f"q must be >= 1, got {q}")
    if B <= 0:
        raise ConfigError(f"B must be positive, got {B}")
    if rho < 0:
        raise ConfigError(f"rho must be nonnegative, got {rho}")
    return q * B ** (q - 1) * rho


def composition_modulus(L: float, beta: float) -> float:
    """Modulus of g_c o g_sm for L-Lipschitz convex outer, beta-smooth inner."""
    if L < 0 or beta < 0:
        raise ConfigError("L and beta must be nonnegative")
    return L * beta


def check_rho_convexity(f: Functional, rho: float, samples: int = 10000,
                        box=(-3.0, 3.0), dim: int = 1, seed: int = 0) -> float:
    """Worst secant-inequality violation of f + (rho/2)|.|^2 convexity.

    Samples (x1, x2, lam) uniformly and returns
    max f(lam x1 + (1-lam) x2) - lam f(x1) - (1-lam) f(x2)
        - (rho/2) lam (1-lam) |x1 - x2|^2.
    Nonpositive (up to tolerance) certifies the claimed modulus empirically.
    """
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    lo, hi = box
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(lo, hi, size=(samples, dim))
    x2 = rng.uniform(lo, hi, size=(samples, dim))
    lam = rng.uniform(0.0, 1.0, size=samples)
    mid = lam[:, None] * x1 + (1.0 - lam[:, None]) * x2
    f1 = f.batch_eval(x1)
    f2 = f.batch_eval(x2)
    fm = f.batch_eval(mid)
    gap = np.sum((x1 - x2) ** 2, axis=1)
    violation = fm - lam * f1 - (1.0 - lam) * f2 - 0.5 * rho * lam * (1.0 - lam) * gap
    return float(np.max(violation))


def check_subgradient_inequality(f: Functional, rho: float, samples: int = 1000,
                                 box=(-3.0, 3.0), dim: int = 1, seed: int = 0) -> float:
    """Worst violation of f(x') >= f(x) + <g, x'-x> - (rho/2)|x'-x|^2."""
    lo, hi = box
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(samples):
        x = rng.uniform(lo, hi, size=dim)
        xp = rng.uniform(lo, hi, size=dim)
        g = f.subgrad(x)
        lhs = f.eval(x) + inner(g, xp - x) - 0.5 * rho * norm(xp - x) ** 2
        worst = max(worst, lhs - f.eval(xp))
    return float(worst)


def modulus_certificate(f: Functional, rho: Optional[float] = None,
                        samples: int = 10000, box=(-3.0, 3.0), dim: int = 1,
                        seed: int = 0, tol: float = 1e-9) -> dict:
    """JSON-ready audit record for the declared weak-convexity modulus."""
    if rho is None:
        rho = f.rho_wc
    worst = check_rho_convexity(f, rho, samples=samples, box=box, dim=dim, seed=seed)
    return {
        "name": f.name,
        "claim": f"secant inequality at modulus {rho!r} on box {list(box)!r}",
        "samples": samples,
        "worst_violation": worst,
        "pass": bool(worst <= tol),
    }


# ---------------------------------------------------------------------------
# shipped functionals


def zero_functional() -> Functional:
    return _separable(
        "zero",
        lambda t: np.zeros_like(t),
        lambda t: np.zeros_like(t),
        rho_wc=0.0,
        lipschitz=0.0,
        prox_closed_form=lambda nu, v: v.copy(),
    )


def quadratic(weight: float = 1.0, center=None) -> Functional:
    """(weight/2) |x - center|^2; strongly convex with modulus ``weight``."""
    if weight <= 0:
        raise ConfigError("quadratic weight must be positive")

    def eval_fn(x):
        d = x - center if center is not None else x
        return 0.5 * weight * float(np.sum(d * d))

    def subgrad_fn(x):
        d = x - center if center is not None else x
        return weight * d

    def prox_cf(nu, v):
        c = center if center is not None else 0.0
        return (v + nu * weight * c) / (1.0 + nu * weight)

    f = Functional(
        name=f"quadratic(w={weight})",
        eval_fn=eval_fn,
        subgrad_fn=subgrad_fn,
        rho_wc=0.0,
        prox_closed_form=prox_cf,
        strong_convexity=weight,
        quad_info=(weight, center),
    )
    if center is None:
        f.pointwise = lambda t: 0.5 * weight * t * t
        f.pointwise_deriv = lambda t: weight * t
    return f


def l1(weight: float = 1.0, lipschitz: Optional[float] = None) -> Functional:
    """weight * |x|_1 with soft-threshold prox; sign(0) selected as 0."""
    if weight <= 0:
        raise ConfigError("l1 weight must be positive")

    def prox_cf(nu, v):
        t = nu * weight
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)

    return _separable(
        f"l1(w={weight})",
        lambda t: weight * np.abs(t),
        lambda t: weight * np.sign(t),
        rho_wc=0.0,
        lipschitz=lipschitz,
        prox_closed_form=prox_cf,
    )


def mcp(lambda_m: float, a_m: float) -> Functional:
    """Separable minimax concave penalty; rho_wc = 1/a_m, closed-form prox."""
    if lambda_m <= 0:
        raise ConfigError("lambda_m must be positive")
    if a_m <= 1:
        raise ConfigError("a_m must exceed 1")

    def value(t):
        at = np.abs(t)
        ramp = lambda_m * at - t * t / (2.0 * a_m)
        return np.where(at <= a_m * lambda_m, ramp, 0.5 * a_m * lambda_m**2)

    def deriv(t):
        at = np.abs(t)
        return np.where(at <= a_m * lambda_m, np.sign(t) * lambda_m - t / a_m, 0.0)

    def prox_cf(nu, v):
        at = np.abs(v)
        shrunk = np.sign(v) * (at - nu * lambda_m) / (1.0 - nu / a_m)
        out = np.where(at <= nu * lambda_m, 0.0, shrunk)
        return np.where(at > a_m * lambda_m, v, out)

    return _separable(
        f"mcp(lambda={lambda_m},a={a_m})",
        value,
        deriv,
        rho_wc=1.0 / a_m,
        lipschitz=lambda_m,
        prox_closed_form=prox_cf,
    )


def abs_plus_cos() -> Functional:
    """Separable |t| + cos(t): weakly convex with modulus 1, 2-Lipschitz.

    On the positive axis the only flat points sit where sin(t) = 1, so the
    functional is coercive yet has critical points arbitrarily far out; it
    is the stock instability fixture.
    """

    def prox_cf(nu, v):
        # prox objective per element: |z| + cos z + (z - v)^2 / (2 nu).
        # For nu < 1 the smooth branch derivative sign(z) - sin z + (z-v)/nu
        # is strictly increasing on each half-axis, so the minimiser is 0
        # when |v| <= nu and otherwise the unique root on sign(v)'s side.
        out = np.zeros_like(v)
        flat = np.abs(v) <= nu

        def branch_root(vi):
            s = 1.0 if vi > 0 else -1.0

            def dphi(z):
                return s - math.sin(z) + (z - vi) / nu

            lo, hi = (0.0, vi) if vi > 0 else (vi, 0.0)
            # the derivative has opposite signs at the half-axis ends
            return brentq(dphi, lo, hi, xtol=1e-14)

        for idx in np.ndindex(v.shape):
            if not flat[idx]:
                out[idx] = branch_root(float(v[idx]))
        return out

    return _separable(
        "abs_plus_cos",
        lambda t: np.abs(t) + np.cos(t),
        lambda t: np.sign(t) - np.sin(t),
        rho_wc=1.0,
        lipschitz=2.0,
        prox_closed_form=prox_cf,
    )


def geometric_ripple(gamma: float) -> Functional:
    """Nonnegative weakly convex ripple whose humps grow geometrically.

    The derivative on the positive axis is (m + gamma) m^n - gamma x for
    x in [m^n, m^(n+1)) with m = gamma / (gamma - 2), so the quadratic
    x^2/2 plus this functional is stationary exactly at every power m^n:
    the standard demonstration that gamma >= 2 mu admits unbounded
    critical-point chains.  The value integrates the derivative exactly
    per segment and vanishes at every breakpoint; the extension to the
    negative axis is even.
    """
    if gamma <= 2:
        raise ConfigError("geometric_ripple needs gamma > 2")
    m = gamma / (gamma - 2.0)
    log_m = math.log(m)

    def _segment_base(ax):
        # ax > 0; clamp the segment index so m**n never overflows
        n = np.floor(np.log(ax) / log_m)
        n = np.clip(n, -600.0, 600.0)
        return m**n

    def value(t):
        ax = np.abs(np.asarray(t, dtype=np.float64))
        out = np.zeros_like(ax)
        pos = ax > 0.0
        base = _segment_base(ax[pos])
        v = (m + gamma) * base * (ax[pos] - base) - 0.5 * gamma * (
            ax[pos] ** 2 - base**2
        )
        out[pos] = np.maximum(v, 0.0)
        return out

    def deriv(t):
        t = np.asarray(t, dtype=np.float64)
        ax = np.abs(t)
        out = np.zeros_like(ax)
        pos = ax > 0.0
        base = _segment_base(ax[pos])
        out[pos] = np.sign(t[pos]) * ((m + gamma) * base - gamma * ax[pos])
        return out

    f = _separable(
        f"geometric_ripple(gamma={gamma})",
        value,
        deriv,
        rho_wc=gamma,
        lipschitz=None,
    )
    f.ripple_ratio = m
    return f


def with_offset(f: Functional, offset: float) -> Functional:
    """f + constant; subgradients, prox, and critical points are unchanged."""
    g = Functional(
        name=f"{f.name}+{offset}",
        eval_fn=lambda x: f.eval(x) + offset,
        subgrad_fn=f.subgrad_fn,
        rho_wc=f.rho_wc,
        lipschitz=f.lipschitz,
        prox_closed_form=f.prox_closed_form,
        strong_convexity=f.strong_convexity,
    )
    if f.pointwise is not None:
        # offset applied once per evaluation, not per element: keep eval_fn
        g.pointwise = None
        g.pointwise_deriv = f.pointwise_deriv
    return g


# ---------------------------------------------------------------------------
# split regularisers and critical-point bounds


@dataclass
class SplitRegulariser:
    """R = r_wc + r_sc with audited moduli (gamma, mu_sc).

    ``strict`` construction enforces one of the two certificate cases
    (gamma < 2 mu_sc, or r_wc globally Lipschitz); pass strict=False to
    build deliberately unbounded instances for negative controls.
    """

    r_wc: Functional
    r_sc: Functional
    gamma: float
    mu_sc: float
    strict: bool = True

    def __post_init__(self):
        if self.mu_sc <= 0:
            raise ConfigError("mu_sc must be positive")
        if self.strict and not (self.gamma < 2.0 * self.mu_sc
                                or self.r_wc.lipschitz is not None):
            raise ConfigError(
                "split regulariser needs gamma < 2*mu_sc or a Lipschitz r_wc"
            )

    def combined(self) -> Functional:
        """R as a single functional; folds a centred-quadratic r_sc into the
        prox of r_wc when both admit it."""
        r_wc, r_sc = self.r_wc, self.r_sc
        prox_cf = None
        if r_sc.quad_info is not None and r_wc.prox_closed_form is not None:
            w, c = r_sc.quad_info

            def prox_cf(nu, v):
                nu_eff = nu / (1.0 + nu * w)
                centre = c if c is not None else 0.0
                v_eff = (v + nu * w * centre) / (1.0 + nu * w)
                return r_wc.prox_closed_form(nu_eff, v_eff)

        f = Functional(
            name=f"{r_wc.name}+{r_sc.name}",
            eval_fn=lambda x: r_wc.eval(x) + r_sc.eval(x),
            subgrad_fn=lambda x: r_wc.subgrad(x) + r_sc.subgrad(x),
            rho_wc=max(0.0, self.gamma - self.mu_sc),
            prox_closed_form=prox_cf,
            strong_convexity=max(0.0, self.mu_sc - self.gamma),
        )
        if r_wc.pointwise is not None and r_sc.pointwise is not None:
            f.pointwise = lambda t: r_wc.pointwise(t) + r_sc.pointwise(t)
            f.pointwise_deriv = lambda t: (
                r_wc.pointwise_deriv(t) + r_sc.pointwise_deriv(t)
            )
        return f


def critical_point_bound_cases(reg: SplitRegulariser, z) -> dict:
    """Radii from each applicable certificate case, selection-relative."""
    z = np.asarray(z, dtype=np.float64)
    g_sc = reg.r_sc.subgrad(z)
    gn = norm(g_sc)
    cases = {}
    if reg.r_wc.lipschitz is not None:
        cases["lipschitz"] = (reg.r_wc.lipschitz + gn) / reg.mu_sc
    if reg.gamma < 2.0 * reg.mu_sc:
        slack = reg.mu_sc - 0.5 * reg.gamma
        rw = max(reg.r_wc.eval(z), 0.0)
        cases["bounded"] = gn / slack + math.sqrt(rw / slack)
    return cases


def critical_point_bound(reg: SplitRegulariser, z) -> float:
    """Radius around z containing every critical point of r_wc + r_sc.

    Returns the smaller of the applicable case radii; raises
    CertificateError when neither case applies (gamma >= 2 mu_sc and
    r_wc not Lipschitz).
    """
    cases = critical_point_bound_cases(reg, z)
    if not cases:
        raise CertificateError(
            "no bound applies: gamma >= 2*mu_sc and r_wc is not Lipschitz"
        )
    return min(cases.values())


# ---------------------------------------------------------------------------
# 1-D critical point scans


def scan_critical_points(selection, lo: float, hi: float, step: float,
                         touch_slack: float = 4.0):
    """Roots of a 1-D subgradient selection on a grid, jumps included.

    Detects (i) sign changes, refined by bisection (which also lands on
    jump locations whose subdifferential interval straddles zero), and
    (ii) one-sided touches where the selection decays linearly to zero and
    jumps away, refined by extrapolating the approach branch.  ``selection``
    must accept a vector of abscissae.
    """
    xs = np.arange(lo, hi + 0.5 * step, step)
    gs = np.asarray(selection(xs), dtype=np.float64)
    roots = []

    prod = gs[:-1] * gs[1:]
    for i in np.flatnonzero(prod <= 0.0):
        if gs[i] == 0.0 and gs[i + 1] == 0.0:
            continue
        a, b = xs[i], xs[i + 1]
        fa = gs[i]
        for _ in range(80):
            c = 0.5 * (a + b)
            fc = float(selection(np.array([c]))[0])
            if fa * fc <= 0.0:
                b = c
            else:
                a, fa = c, fc
        roots.append(0.5 * (a + b))

    # touch points: |g| has a local minimum below the one-step decay scale
    absg = np.abs(gs)
    for i in range(1, len(gs) - 1):
        if not (absg[i] < absg[i - 1] and absg[i] <= absg[i + 1]):
            continue
        slope = abs(gs[i - 1] - gs[i]) / step
        if slope == 0.0 or absg[i] > touch_slack * slope * step:
            continue
        root = xs[i] - gs[i] * step / (gs[i] - gs[i - 1])
        if xs[i] - step <= root <= xs[i] + step:
            roots.append(root)

    roots.sort()
    merged = []
    for r in roots:
        if merged and abs(r - merged[-1]) < 2.0 * step:
            continue
        merged.append(r)
    return np.array(merged)
