"""Modified primal-dual hybrid gradient solver with descent certification.

The solver alternates a proximal primal step, over-relaxation by
``theta_relax``, and a conjugate-fidelity dual step.  With theta_relax = 1
and step sizes satisfying tau*sigma*|A|^2 < 1, tau*rho < 1, mu*sigma > 3,
the Lyapunov value L(z) + |z' - z|_M^2 / 2 decreases by at least
(mu sigma - 3)|dy|_M^2 / 2 + (1 - rho tau)|dx|_M^2 / 2 per iteration; every
run records the realised margin so the property is asserted, not assumed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .arrays import inner, norm
from .errors import CertificateError, ConfigError, DivergenceError
from .fidelity import ConjugateFidelity, conj_eval, conj_prox, conjugate_sq_l2, sq_l2
from .functionals import Functional, prox
from .operators import LinearOperator

__all__ = [
    "PdConfig",
    "InverseProblem",
    "SolverTrace",
    "suggest_steps",
    "constraint_violations",
    "nu_margin",
    "lagrangian",
    "pdhgm_step",
    "run_pdhgm",
    "min_residual_certificate",
    "descent_certificate",
    "ergodic_gap",
    "RateClassification",
    "rate_classify_distances",
    "rate_classify",
    "objective",
    "subgradient_solve",
    "trace_csv_text",
    "write_trace_csv",
    "summary_payload",
    "write_summary_json",
]

DIVERGENCE_GUARD = 1e8


@dataclass
class PdConfig:
    tau: float
    sigma: float
    theta_relax: float = 1.0
    max_iters: int = 1000
    tol: float = 0.0
    inner_tol: float = 1e-8
    seed: int = 0
    override_constraints: bool = False
    keep_iterates: bool = False


@dataclass
class InverseProblem:
    """min_x alpha R(x) + |Ax - y_delta|^2 / 2, solved through its saddle form."""

    op: LinearOperator
    y_delta: np.ndarray
    alpha: float
    reg: Functional
    x0: np.ndarray
    y0: Optional[np.ndarray] = None

    def conjugate(self) -> ConjugateFidelity:
        return conjugate_sq_l2(self.alpha, self.y_delta)


@dataclass
class SolverTrace:
    lagrangian_values: np.ndarray
    lyapunov: np.ndarray
    descent_margin: np.ndarray
    residual_m: np.ndarray
    dx_norm: np.ndarray
    dy_norm: np.ndarray
    final_x: np.ndarray
    final_y: np.ndarray
    iterations: int
    converged: bool
    config: PdConfig
    rho: float
    mu: float
    norm_a: float
    constraints_ok: bool
    xs: Optional[list] = field(default=None, repr=False)
    ys: Optional[list] = field(default=None, repr=False)
    gap: Optional[np.ndarray] = field(default=None, repr=False)


def constraint_violations(tau, sigma, rho, mu, norm_a):
    """Names of violated step-size constraints, empty when all hold."""
    bad = []
    if not tau > 0 or not sigma > 0:
        bad.append("positive step sizes")
    if not tau * sigma * norm_a**2 < 1.0:
        bad.append(f"tau*sigma*|A|^2 < 1 (got {tau * sigma * norm_a ** 2:.6g})")
    if not tau * rho < 1.0:
        bad.append(f"tau*rho < 1 (got {tau * rho:.6g})")
    if not mu * sigma > 3.0:
        bad.append(f"mu*sigma > 3 (got {mu * sigma:.6g})")
    return bad


def nu_margin(tau, sigma, rho, mu):
    return min(mu * sigma - 3.0, 1.0 - rho * tau)


def suggest_steps(rho: float, mu_fid: float, norm_a: float, margin: float = 0.9):
    """Feasible (tau, sigma): tau at margin below min{1/rho, mu/(3|A|^2)},
    sigma the geometric mean of its admissible interval."""
    if mu_fid <= 0:
        raise ConfigError("mu_fid must be positive")
    if norm_a <= 0:
        raise ConfigError("norm_a must be positive")
    if not 0.0 < margin < 1.0:
        raise ConfigError("margin must lie in (0, 1)")
    cap = mu_fid / (3.0 * norm_a**2)
    tau = margin * (min(1.0 / rho, cap) if rho > 0 else cap)
    sigma = math.sqrt((3.0 / mu_fid) / (tau * norm_a**2))
    bad = constraint_violations(tau, sigma, rho, mu_fid, norm_a)
    if bad:
        raise ConfigError("suggested steps infeasible: " + "; ".join(bad))
    return tau, sigma


def lagrangian(x, y, reg: Functional, cf: ConjugateFidelity, op: LinearOperator):
    """L(x, y) = R(x) + <Ax, y> - F*(y)."""
    return reg.eval(x) + inner(op.apply(x), y) - conj_eval(cf, y)


def pdhgm_step(x, y, reg, cf, op, cfg: PdConfig):
    """One update: primal prox, over-relaxation, dual prox."""
    x_next = prox(reg, cfg.tau, x - cfg.tau * op.adjoint_apply(y), tol=cfg.inner_tol)
    x_over = x_next + cfg.theta_relax * (x_next - x)
    y_next = conj_prox(cf, cfg.sigma, y + cfg.sigma * op.apply(x_over))
    return x_next, y_next


def run_pdhgm(problem: InverseProblem, cfg: PdConfig) -> SolverTrace:
    """Iterate to tolerance or max_iters, recording every certified quantity.

    Refuses to run without a converged operator-norm estimate, because the
    constraint check is only meaningful against a certified |A|.
    """
    op = problem.op
    if op.norm_estimate is None or not op.norm_converged:
        raise ConfigError("operator needs a converged norm estimate; "
                          "run operator_norm first")
    reg = problem.reg
    cf = problem.conjugate()
    rho = reg.rho_wc
    mu = cf.mu_fid
    norm_a = op.norm_estimate
    bad = constraint_violations(cfg.tau, cfg.sigma, rho, mu, norm_a)
    if bad and not cfg.override_constraints:
        raise ConfigError("step-size constraints violated: " + "; ".join(bad))
    if cfg.tau * rho >= 1.0:
        # even override runs need a well-defined primal prox
        raise ConfigError(f"tau*rho = {cfg.tau * rho:.6g} >= 1: primal prox undefined")

    x = np.asarray(problem.x0, dtype=np.float64).copy()
    y = (np.asarray(problem.y0, dtype=np.float64).copy()
         if problem.y0 is not None else np.zeros(op.range_shape))

    ax = op.apply(x)
    lag = [reg.eval(x) + inner(ax, y) - conj_eval(cf, y)]
    lyap = [lag[0]]
    residuals, dxs, dys, margins = [], [], [], []
    xs = [x.copy()] if cfg.keep_iterates else None
    ys = [y.copy()] if cfg.keep_iterates else None

    scale_y = 0.5 * (mu * cfg.sigma - 3.0)
    scale_x = 0.5 * (1.0 - rho * cfg.tau)
    converged = False
    k = 0
    for k in range(1, cfg.max_iters + 1):
        x_next = prox(reg, cfg.tau, x - cfg.tau * op.adjoint_apply(y),
                      tol=cfg.inner_tol)
        ax_next = op.apply(x_next)
        ax_over = (1.0 + cfg.theta_relax) * ax_next - cfg.theta_relax * ax
        y_next = conj_prox(cf, cfg.sigma, y + cfg.sigma * ax_over)

        dx = x_next - x
        dy = y_next - y
        dxn = norm(dx)
        dyn = norm(dy)
        m_sq = (dxn**2 / cfg.tau
                - 2.0 * inner(ax_next - ax, dy)
                + dyn**2 / cfg.sigma)
        res = math.sqrt(max(m_sq, 0.0))
        lag_next = reg.eval(x_next) + inner(ax_next, y_next) - conj_eval(cf, y_next)
        lyap_next = lag_next + 0.5 * m_sq

        dxs.append(dxn)
        dys.append(dyn)
        residuals.append(res)
        lag.append(lag_next)
        lyap.append(lyap_next)
        if k >= 2:
            # realised descent over the transition just completed
            margins.append(lyap[k - 1] - lyap[k]
                           - scale_y * dyn**2 / cfg.sigma
                           - scale_x * dxn**2 / cfg.tau)

        x, y, ax = x_next, y_next, ax_next
        if cfg.keep_iterates:
            xs.append(x.copy())
            ys.append(y.copy())

        if norm(x) + norm(y) > DIVERGENCE_GUARD:
            raise DivergenceError(f"iterate norm exceeded {DIVERGENCE_GUARD:g} "
                                  f"at iteration {k}")
        if cfg.tol > 0 and res < cfg.tol:
            converged = True
            break

    return SolverTrace(
        lagrangian_values=np.array(lag),
        lyapunov=np.array(lyap),
        descent_margin=np.array(margins),
        residual_m=np.array(residuals),
        dx_norm=np.array(dxs),
        dy_norm=np.array(dys),
        final_x=x,
        final_y=y,
        iterations=k,
        converged=converged,
        config=cfg,
        rho=rho,
        mu=mu,
        norm_a=norm_a,
        constraints_ok=not bad,
        xs=xs,
        ys=ys,
    )


def descent_certificate(trace: SolverTrace, tol: float = 1e-10) -> dict:
    """Smallest realised Lyapunov descent margin; pass iff >= -tol."""
    worst = float(np.min(trace.descent_margin)) if trace.descent_margin.size else 0.0
    return {
        "name": "lyapunov_descent",
        "claim": f"margin >= -{tol:g} at every iteration",
        "samples": int(trace.descent_margin.size),
        "worst_violation": -worst,
        "pass": bool(worst >= -tol),
    }


def min_residual_certificate(trace: SolverTrace, nu: Optional[float] = None,
                             slack: float = 1e-9) -> dict:
    """Check min_{k<=K} |dz_k|_M <= 2 sqrt(dLyap / (nu K)) for every K.

    Refuses relaxation parameters other than 1: the descent inequality the
    bound rests on is only certified there.
    """
    if trace.config.theta_relax != 1.0:
        raise CertificateError("residual bound certified only for theta_relax = 1")
    if nu is None:
        nu = nu_margin(trace.config.tau, trace.config.sigma, trace.rho, trace.mu)
    if nu <= 0:
        raise CertificateError(f"nu = {nu:.6g} <= 0: constraint set violated")
    rm = trace.residual_m
    lyap = trace.lyapunov
    worst_k, worst_ratio, ok = None, 0.0, True
    running = math.inf
    # step k (z^k -> z^{k+1}) is residual index k-1; K ranges over 1..len-1
    for big_k in range(1, len(rm)):
        running = min(running, rm[big_k])
        drop = max(lyap[1] - lyap[big_k + 1], 0.0)
        bound = 2.0 * math.sqrt(drop / (nu * big_k))
        ratio = running / bound if bound > 0 else (0.0 if running == 0 else math.inf)
        if running > bound + slack:
            ok = False
        if ratio > worst_ratio:
            worst_ratio, worst_k = ratio, big_k
    return {
        "name": "min_residual_bound",
        "claim": "min residual below the 2 sqrt(dLyap/(nu K)) envelope for all K",
        "samples": max(len(rm) - 1, 0),
        "worst_violation": worst_ratio,
        "worst_K": worst_k,
        "pass": bool(ok),
    }


def ergodic_gap(trace: SolverTrace, probe_x, probe_y, zhat, rho: Optional[float] = None,
                mu: Optional[float] = None, problem: Optional[InverseProblem] = None,
                fit_from: int = 100):
    """Offset-corrected ergodic gap sequence and its log(k)/k tail fit.

    The raw gap L(xbar_k, probe_y) - L(probe_x, ybar_k) carries a constant
    nonconvexity offset (rho |probe_x - xhat|^2 - mu |probe_y - yhat|^2)/2
    that does not vanish; the returned sequence has it subtracted so only
    the k-dependent part is fitted.
    """
    if trace.xs is None:
        raise ConfigError("ergodic_gap needs keep_iterates=True on the run")
    n = len(trace.xs) - 1
    if n < fit_from:
        raise ConfigError(f"trace too short for the tail fit ({n} < {fit_from})")
    if problem is None:
        raise ConfigError("ergodic_gap needs the problem for the Lagrangian")
    reg = problem.reg
    cf = problem.conjugate()
    op = problem.op
    xhat, yhat = zhat
    if rho is None:
        rho = reg.rho_wc
    if mu is None:
        mu = cf.mu_fid
    offset = 0.5 * (rho * norm(np.asarray(probe_x) - xhat) ** 2
                    - mu * norm(np.asarray(probe_y) - yhat) ** 2)

    a_probe = op.apply(np.asarray(probe_x, dtype=np.float64))
    f_star_probe = conj_eval(cf, probe_y)
    r_probe = reg.eval(probe_x)
    xsum = np.zeros_like(trace.xs[0])
    ysum = np.zeros_like(trace.ys[0])
    gaps = np.empty(n)
    for i in range(1, n + 1):
        xsum += trace.xs[i]
        ysum += trace.ys[i]
        xbar = xsum / i
        ybar = ysum / i
        left = reg.eval(xbar) + inner(op.apply(xbar), probe_y) - f_star_probe
        right = r_probe + inner(a_probe, ybar) - conj_eval(cf, ybar)
        gaps[i - 1] = left - right - offset

    ks = np.arange(1, n + 1)
    sel = ks >= fit_from
    basis = np.log(ks[sel]) / ks[sel]
    tail = gaps[sel]
    c = float(np.dot(basis, tail) / np.dot(basis, basis))
    resid = tail - c * basis
    denom = norm(tail)
    rel = float(norm(resid) / denom) if denom > 0 else 0.0
    return ks, gaps, {"c": c, "rel_residual": rel, "fit_from": fit_from}


@dataclass
class RateClassification:
    kind: str  # "finite" | "linear" | "power" | "inconclusive"
    parameter: float
    fit_residual: float


def rate_classify_distances(distances) -> RateClassification:
    """Fit log-distance against k (linear rate) and log k (power rate)."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size < 10:
        return RateClassification("inconclusive", math.nan, math.nan)
    scale = d[0] if d[0] > 0 else np.max(d)
    if scale == 0.0:
        return RateClassification("finite", 0.0, 0.0)
    if d[-1] > 10.0 * scale:
        return RateClassification("inconclusive", math.nan, math.nan)
    floor = 1e-13 * scale
    if np.any(d <= floor):
        first_dead = int(np.argmax(d <= floor))
        if np.all(d[first_dead:] <= floor) and first_dead < 0.8 * d.size:
            return RateClassification("finite", float(first_dead), 0.0)
    live = d > floor
    ks = np.arange(1, d.size + 1)[live]
    logs = np.log(d[live])

    def lsq(design):
        coef, res, *_ = np.linalg.lstsq(design, logs, rcond=None)
        fitted = design @ coef
        return coef, float(np.sqrt(np.mean((fitted - logs) ** 2)))

    lin_design = np.stack([np.ones_like(ks, dtype=float), ks.astype(float)], axis=1)
    pow_design = np.stack([np.ones_like(ks, dtype=float), np.log(ks)], axis=1)
    (_, slope_k), lin_res = lsq(lin_design)
    (_, slope_logk), pow_res = lsq(pow_design)
    if lin_res <= pow_res and 0.0 < math.exp(slope_k) < 1.0:
        return RateClassification("linear", float(math.exp(slope_k)), lin_res)
    return RateClassification("power", float(slope_logk), pow_res)


def rate_classify(trace: SolverTrace, zhat,
                  problem: Optional[InverseProblem] = None) -> RateClassification:
    """Classify iterate convergence toward zhat in the M-norm."""
    if trace.xs is None:
        raise ConfigError("rate_classify needs keep_iterates=True on the run")
    xhat, yhat = zhat
    tau, sigma = trace.config.tau, trace.config.sigma
    dists = []
    for x, y in zip(trace.xs[1:], trace.ys[1:]):
        dx = x - xhat
        dy = y - yhat
        m_sq = norm(dx) ** 2 / tau + norm(dy) ** 2 / sigma
        if problem is not None:
            m_sq -= 2.0 * inner(problem.op.apply(dx), dy)
        dists.append(math.sqrt(max(m_sq, 0.0)))
    return rate_classify_distances(np.array(dists))


# ---------------------------------------------------------------------------
# baseline solver and objective


def objective(problem: InverseProblem, x) -> float:
    """alpha R(x) + |Ax - y_delta|^2 / 2."""
    return problem.alpha * problem.reg.eval(x) + sq_l2(problem.op.apply(x),
                                                       problem.y_delta)


@dataclass
class SubgradTrace:
    objective_values: np.ndarray
    best_x: np.ndarray
    best_objective: float
    best_iteration: int
    final_x: np.ndarray


def subgradient_solve(problem: InverseProblem, x0=None, step: float = 1e-3,
                      iters: int = 1000) -> SubgradTrace:
    """Plain subgradient descent on the variational objective.

    Keeps the best-objective iterate so callers can early-stop; useful as
    the no-certificates baseline against the saddle-point solver.
    """
    if step <= 0:
        raise ConfigError("step must be positive")
    x = np.asarray(problem.x0 if x0 is None else x0, dtype=np.float64).copy()
    op = problem.op
    vals = np.empty(iters + 1)
    vals[0] = objective(problem, x)
    best_x, best_val, best_it = x.copy(), vals[0], 0
    for k in range(1, iters + 1):
        g = problem.alpha * problem.reg.subgrad(x) + op.adjoint_apply(
            op.apply(x) - problem.y_delta)
        x = x - step * g
        vals[k] = objective(problem, x)
        if vals[k] < best_val:
            best_x, best_val, best_it = x.copy(), vals[k], k
    return SubgradTrace(vals, best_x, float(best_val), best_it, x)


# ---------------------------------------------------------------------------
# trace serialisation


def _fmt(v) -> str:
    return repr(float(v))


def trace_csv_text(trace: SolverTrace) -> str:
    """Columns: k, L, lyapunov, descent_margin, residual_M, dx_norm, dy_norm, gap."""
    import io

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["k", "L", "lyapunov", "descent_margin", "residual_M",
                "dx_norm", "dy_norm", "gap"])
    for k in range(len(trace.lagrangian_values)):
        margin = (trace.descent_margin[k - 1]
                  if 1 <= k <= len(trace.descent_margin) else math.nan)
        res = trace.residual_m[k] if k < len(trace.residual_m) else math.nan
        dxn = trace.dx_norm[k] if k < len(trace.dx_norm) else math.nan
        dyn = trace.dy_norm[k] if k < len(trace.dy_norm) else math.nan
        gap = (trace.gap[k] if trace.gap is not None and k < len(trace.gap)
               else math.nan)
        w.writerow([k, _fmt(trace.lagrangian_values[k]), _fmt(trace.lyapunov[k]),
                    _fmt(margin), _fmt(res), _fmt(dxn), _fmt(dyn), _fmt(gap)])
    return buf.getvalue()


def write_trace_csv(path, trace: SolverTrace):
    with open(path, "w", newline="") as fh:
        fh.write(trace_csv_text(trace))


def summary_payload(trace: SolverTrace, certificates=None, extra=None) -> dict:
    payload = {
        "config": {
            "tau": trace.config.tau,
            "sigma": trace.config.sigma,
            "theta_relax": trace.config.theta_relax,
            "max_iters": trace.config.max_iters,
            "tol": trace.config.tol,
            "seed": trace.config.seed,
            "override_constraints": trace.config.override_constraints,
        },
        "moduli": {"rho": trace.rho, "mu": trace.mu, "norm_a": trace.norm_a},
        "constraints_ok": trace.constraints_ok,
        "certificates": certificates or [],
        "final_residual": float(trace.residual_m[-1]) if trace.residual_m.size else None,
        "iterations": trace.iterations,
        "converged": trace.converged,
    }
    if extra:
        payload.update(extra)
    return payload


def write_summary_json(path, trace: SolverTrace, certificates=None, extra=None):
    with open(path, "w") as fh:
        json.dump(summary_payload(trace, certificates, extra), fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
