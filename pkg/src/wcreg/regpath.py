"""Empirical convergent-regularisation and stability experiments.

A path runs a noise schedule delta_k = delta0 * decay^k for k = 1..levels
with alpha_k = alpha_rule(delta_k), solving for a critical point at each
level with warm starts, and records data-consistency and criticality
residuals.  The noise is Gaussian rescaled so |eta| = delta_k exactly,
which makes the level certificates sharp.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .arrays import norm
from .errors import ConfigError, DivergenceError, UnsupportedError
from .functionals import Functional
from .operators import LinearOperator, ensure_norm, kernel_projector
from .pdhgm import (InverseProblem, PdConfig, run_pdhgm, subgradient_solve,
                    suggest_steps)

__all__ = [
    "RegPathConfig",
    "RegPathReport",
    "alpha_rule_audit",
    "criticality_residual",
    "run_regpath",
    "stability_probe",
    "regpath_csv_text",
    "write_regpath_csv",
]


@dataclass
class RegPathConfig:
    delta0: float = 0.1
    decay: float = 0.5
    levels: int = 7
    alpha_rule: Callable[[float], float] = lambda delta: delta
    noise_seed: int = 0
    solver: str = "pdhgm"  # or "subgradient"
    max_iters: int = 20000
    tol: float = 1e-10
    step_margin: float = 0.9
    subgradient_step: float = 1e-3

    def deltas(self):
        return np.array([self.delta0 * self.decay**k
                         for k in range(1, self.levels + 1)])


@dataclass
class RegPathReport:
    deltas: np.ndarray
    alphas: np.ndarray
    data_residual: np.ndarray
    criticality_feasibility: np.ndarray
    criticality_tangential: np.ndarray
    dist_prev_level: np.ndarray
    solutions: list = field(repr=False, default_factory=list)
    flagged_levels: list = field(default_factory=list)


def alpha_rule_audit(rule: Callable[[float], float], p: float,
                     delta0: float = 0.1, decay: float = 0.5,
                     levels: int = 7, extend_cap: int = 200000) -> dict:
    """Both schedule limits must vanish: alpha_k -> 0 and delta_k^p/alpha_k -> 0.

    Numerical reading: walking the schedule (extended past the run's levels
    if needed), each sequence must drop below 1e-3 of its initial value; a
    sequence that grows past 100x its start, or never gets there within the
    cap, fails.
    """
    alpha_init = ratio_init = None
    verdict = False
    worst = float("inf")
    k = 1
    while k <= extend_cap:
        delta = delta0 * decay**k
        alpha = rule(delta)
        if alpha <= 0 or not np.isfinite(alpha):
            return {"name": "alpha_rule", "claim": "alpha_k > 0 along the schedule",
                    "samples": k, "worst_violation": float("inf"), "pass": False}
        ratio = delta**p / alpha
        if alpha_init is None:
            alpha_init, ratio_init = alpha, ratio
        worst = max(alpha / alpha_init, ratio / ratio_init)
        if k >= levels:
            if worst < 1e-3:
                verdict = True
                break
            if alpha > 100.0 * alpha_init or ratio > 100.0 * ratio_init:
                break
        k += 1
    return {
        "name": "alpha_rule",
        "claim": "alpha_k -> 0 and delta_k^p / alpha_k -> 0 along the schedule",
        "samples": k,
        "worst_violation": float(worst),
        "pass": bool(verdict),
    }


def criticality_residual(x, reg: Functional, op: LinearOperator, y0,
                         projector: Optional[np.ndarray] = None):
    """(feasibility, tangential) residuals of the constrained criticality test.

    feasibility = |Ax - y0|; tangential = |P_ker(A) g| for the regulariser's
    subgradient selection g at x.  Both near zero certifies, relative to the
    selection, that x is a critical point of the regulariser on {Ax = y0}.
    """
    x = np.asarray(x, dtype=np.float64)
    feas = norm(op.apply(x) - np.asarray(y0, dtype=np.float64))
    if projector is None:
        try:
            projector = kernel_projector(op)
        except UnsupportedError:
            raise
    g = reg.subgrad(x).ravel()
    tang = norm(projector @ g)
    return feas, tang


def _solve_level(op, y_level, alpha, reg, x_init, cfg: RegPathConfig, norm_a):
    if cfg.solver == "pdhgm":
        tau, sigma = suggest_steps(reg.rho_wc, alpha, norm_a, margin=cfg.step_margin)
        pd_cfg = PdConfig(tau=tau, sigma=sigma, theta_relax=1.0,
                          max_iters=cfg.max_iters, tol=cfg.tol)
        problem = InverseProblem(op=op, y_delta=y_level, alpha=alpha, reg=reg,
                                 x0=x_init)
        trace = run_pdhgm(problem, pd_cfg)
        return trace.final_x
    if cfg.solver == "subgradient":
        problem = InverseProblem(op=op, y_delta=y_level, alpha=alpha, reg=reg,
                                 x0=x_init)
        out = subgradient_solve(problem, step=cfg.subgradient_step,
                                iters=cfg.max_iters)
        return out.best_x
    raise ConfigError(f"unknown solver {cfg.solver!r}")


def run_regpath(op: LinearOperator, reg: Functional, x_true,
                cfg: RegPathConfig) -> RegPathReport:
    """Solve down the noise schedule with warm starts and record residuals.

    Warm starts keep the computed critical-point branch continuous across
    levels; a diverging level is flagged and the path continues from the
    last good iterate.
    """
    x_true = np.asarray(x_true, dtype=np.float64)
    y0 = op.apply(x_true)
    norm_a = ensure_norm(op)
    rng = np.random.default_rng(cfg.noise_seed)
    projector = kernel_projector(op)

    deltas = cfg.deltas()
    alphas = np.array([cfg.alpha_rule(d) for d in deltas])
    if np.any(alphas <= 0):
        raise ConfigError("alpha rule produced a nonpositive value")

    x = np.zeros_like(x_true)
    prev = None
    data_res, feas_res, tang_res, dists = [], [], [], []
    solutions, flagged = [], []
    for level, (delta, alpha) in enumerate(zip(deltas, alphas)):
        eta = rng.standard_normal(y0.shape)
        eta *= delta / norm(eta)
        y_level = y0 + eta
        try:
            x = _solve_level(op, y_level, alpha, reg, x, cfg, norm_a)
        except DivergenceError:
            flagged.append(level)
        feas, tang = criticality_residual(x, reg, op, y0, projector=projector)
        data_res.append(norm(op.apply(x) - y0))
        feas_res.append(feas)
        tang_res.append(tang)
        dists.append(norm(x - prev) if prev is not None else float("nan"))
        prev = x.copy()
        solutions.append(x.copy())
    return RegPathReport(
        deltas=deltas,
        alphas=alphas,
        data_residual=np.array(data_res),
        criticality_feasibility=np.array(feas_res),
        criticality_tangential=np.array(tang_res),
        dist_prev_level=np.array(dists),
        solutions=solutions,
        flagged_levels=flagged,
    )


def stability_probe(op: LinearOperator, reg: Functional, y_delta, alpha: float,
                    perturbation_sizes, seed: int = 0,
                    cfg: Optional[RegPathConfig] = None,
                    init_rule: Optional[Callable[[int], np.ndarray]] = None):
    """Deviation of the reconstruction under measurement perturbations.

    Solves from y_delta and from y_delta + e for each size |e|, reporting
    |x(y+e) - x(y)|.  ``init_rule(i)`` selects the solver start per probe
    (index 0 is the unperturbed baseline); criticality alone does not pin
    down which critical point a solver lands on, so a far-out start rule
    exhibits the documented failure mode when the regulariser has no
    strongly convex part.
    """
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    cfg = cfg or RegPathConfig()
    y_delta = np.asarray(y_delta, dtype=np.float64)
    norm_a = ensure_norm(op)
    rng = np.random.default_rng(seed)
    domain = op.domain_shape

    def start(i):
        if init_rule is not None:
            return np.asarray(init_rule(i), dtype=np.float64)
        return np.zeros(domain)

    x_base = _solve_level(op, y_delta, alpha, reg, start(0), cfg, norm_a)
    sizes = list(perturbation_sizes)
    deviations = []
    for i, size in enumerate(sizes, start=1):
        e = rng.standard_normal(y_delta.shape)
        if norm(e) > 0 and size > 0:
            e *= size / norm(e)
        else:
            e = np.zeros_like(y_delta)
        x_pert = _solve_level(op, y_delta + e, alpha, reg, start(i), cfg, norm_a)
        deviations.append(norm(x_pert - x_base))
    return np.array(sizes, dtype=np.float64), np.array(deviations)


def regpath_csv_text(report: RegPathReport) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["level", "delta", "alpha", "data_residual",
                "criticality_feasibility", "criticality_tangential",
                "dist_prev_level"])
    for i in range(len(report.deltas)):
        w.writerow([
            i + 1,
            repr(float(report.deltas[i])),
            repr(float(report.alphas[i])),
            repr(float(report.data_residual[i])),
            repr(float(report.criticality_feasibility[i])),
            repr(float(report.criticality_tangential[i])),
            repr(float(report.dist_prev_level[i])),
        ])
    return buf.getvalue()


def write_regpath_csv(path, report: RegPathReport):
    with open(path, "w", newline="") as fh:
        fh.write(regpath_csv_text(report))
