import json
import math

import numpy as np
import pytest

from wcreg.errors import CertificateError, ConfigError, DivergenceError
from wcreg.fidelity import conj_eval, conjugate_sq_l2
from wcreg.functionals import l1, mcp, prox, quadratic, zero_functional
from wcreg.operators import (ensure_norm, make_convolution, matrix_operator,
                             zero_operator)
from wcreg.pdhgm import (InverseProblem, PdConfig, descent_certificate,
                         ergodic_gap, lagrangian, min_residual_certificate,
                         nu_margin, objective, pdhgm_step, rate_classify,
                         rate_classify_distances, run_pdhgm, subgradient_solve,
                         suggest_steps, write_summary_json, write_trace_csv)


def deconv_problem(reg, alpha=0.5, noise=0.05, seed=0, n=64):
    kernel = np.array([0.1, 0.8, 0.1])
    op = make_convolution(kernel, "zero", domain_shape=(n,))
    ensure_norm(op)
    rng = np.random.default_rng(seed)
    x_true = np.zeros(n)
    x_true[[8, 21, 40, 52]] = [1.0, -0.8, 1.2, 0.6]
    y0 = op.apply(x_true)
    eta = rng.standard_normal(n)
    eta *= noise / np.linalg.norm(eta)
    return InverseProblem(op=op, y_delta=y0 + eta, alpha=alpha, reg=reg,
                          x0=np.zeros(n)), x_true


def scalar_problem(reg_weight=1.0, alpha=1.0, y_delta=2.0):
    op = matrix_operator(np.array([[1.0]]))
    ensure_norm(op)
    return InverseProblem(op=op, y_delta=np.array([y_delta]), alpha=alpha,
                          reg=quadratic(reg_weight), x0=np.array([0.0]))


class TestSuggestSteps:
    def test_convex_case(self):
        tau, sigma = suggest_steps(0.0, 6.0, 1.0, margin=0.9)
        assert tau == pytest.approx(1.8)
        assert sigma == pytest.approx(math.sqrt(0.5 / 1.8))

    def test_weakly_convex_case(self):
        tau, sigma = suggest_steps(1.0, 6.0, 1.0, margin=0.99)
        assert tau == pytest.approx(0.99)
        assert 6.0 * sigma > 3.0
        assert tau * sigma < 1.0

    def test_large_operator_norm(self):
        tau, sigma = suggest_steps(0.0, 1.0, 10.0, margin=0.9)
        assert tau <= 1.0 / 300.0
        assert tau * sigma * 100.0 < 1.0
        assert sigma > 3.0

    def test_rejects_bad_inputs(self):
        with pytest.raises(ConfigError):
            suggest_steps(0.0, 0.0, 1.0)
        with pytest.raises(ConfigError):
            suggest_steps(0.0, 1.0, 1.0, margin=1.5)


class TestPdhgmStep:
    def test_pure_dual_contraction(self):
        op = zero_operator((2,), (2,))
        cf = conjugate_sq_l2(1.0, np.array([1.0, -1.0]))
        cfg = PdConfig(tau=1.0, sigma=4.0)
        x = np.array([0.3, -0.4])
        y = np.array([2.0, 2.0])
        x1, y1 = pdhgm_step(x, y, zero_functional(), cf, op, cfg)
        np.testing.assert_allclose(x1, x)
        np.testing.assert_allclose(y1, (y - 4.0 * cf.y_delta) / 5.0)

    def test_scalar_hand_oracle(self):
        op = matrix_operator(np.array([[1.0]]))
        cf = conjugate_sq_l2(1.0, np.array([1.0]))
        cfg = PdConfig(tau=0.5, sigma=0.5, theta_relax=1.0)
        x1, y1 = pdhgm_step(np.array([0.0]), np.array([0.0]), quadratic(1.0),
                            cf, op, cfg)
        np.testing.assert_allclose(x1, [0.0], atol=1e-12)
        np.testing.assert_allclose(y1, [-1.0 / 3.0], rtol=1e-12)
        # brute-force both prox objectives on a fine grid
        zs = np.arange(-3.0, 3.0, 1e-5)
        x_obj = 0.5 * zs**2 + 0.0 * zs + (zs - 0.0) ** 2 / (2 * 0.5)
        assert abs(zs[np.argmin(x_obj)] - x1[0]) < 1e-4
        y_obj = 0.5 * zs**2 + zs * 1.0 - zs * (2 * x1[0] - 0.0) + zs**2
        assert abs(zs[np.argmin(y_obj)] - y1[0]) < 1e-4

    def test_saddle_point_is_fixed(self):
        rng = np.random.default_rng(3)
        a_mat = rng.standard_normal((2, 2))
        op = matrix_operator(a_mat)
        ensure_norm(op)
        c, alpha = 0.7, 1.3
        y_delta = rng.standard_normal(2)
        # stationarity: c x + A^T y = 0 ; alpha y + y_delta - A x = 0
        block = np.block([[c * np.eye(2), a_mat.T],
                          [-a_mat, alpha * np.eye(2)]])
        sol = np.linalg.solve(block, np.concatenate([np.zeros(2), -y_delta]))
        xhat, yhat = sol[:2], sol[2:]
        cf = conjugate_sq_l2(alpha, y_delta)
        tau, sigma = suggest_steps(0.0, alpha, op.norm_estimate, 0.9)
        x1, y1 = pdhgm_step(xhat, yhat, quadratic(c), cf, op,
                            PdConfig(tau=tau, sigma=sigma))
        assert np.max(np.abs(x1 - xhat)) < 1e-10
        assert np.max(np.abs(y1 - yhat)) < 1e-10


class TestLagrangian:
    def test_zero_everything(self):
        op = matrix_operator(np.array([[1.0]]))
        cf = conjugate_sq_l2(1.0, np.zeros(1))
        assert lagrangian(np.zeros(1), np.zeros(1), quadratic(1.0), cf, op) == 0.0

    def test_component_recomposition(self):
        op = matrix_operator(np.array([[2.0]]))
        cf = conjugate_sq_l2(1.5, np.array([0.3]))
        x, y = np.array([0.7]), np.array([-0.4])
        reg = quadratic(0.9)
        expected = reg.eval(x) + (2.0 * 0.7) * (-0.4) - conj_eval(cf, y)
        assert lagrangian(x, y, reg, cf, op) == pytest.approx(expected,
                                                              rel=1e-12)

    def test_sup_over_dual_recovers_objective(self):
        op = matrix_operator(np.array([[1.3]]))
        alpha = 0.8
        cf = conjugate_sq_l2(alpha, np.array([0.5]))
        reg = quadratic(1.0)
        x = np.array([0.9])
        ys = np.arange(-50.0, 50.0, 1e-3)
        vals = reg.eval(x) + (1.3 * 0.9) * ys - (0.5 * alpha * ys**2 + ys * 0.5)
        target = reg.eval(x) + (1.3 * 0.9 - 0.5) ** 2 / (2 * alpha)
        assert np.max(vals) == pytest.approx(target, abs=1e-3)


class TestRunPdhgm:
    def test_scalar_quadratic_converges_to_direct_solve(self):
        prob = scalar_problem()
        tau, sigma = suggest_steps(0.0, 1.0, 1.0, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=2000,
                                         tol=1e-12))
        assert trace.residual_m[-1] < 1e-8
        # saddle of 0.5 x^2 + (x - 2)^2/2: x = 1
        assert trace.final_x[0] == pytest.approx(1.0, abs=1e-8)

    def test_mcp_deconvolution_descent(self):
        prob, _ = deconv_problem(mcp(0.1, 4.0))
        tau, sigma = suggest_steps(prob.reg.rho_wc, prob.alpha,
                                   prob.op.norm_estimate, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=1500))
        assert np.min(trace.descent_margin) >= -1e-10
        cert = descent_certificate(trace)
        assert cert["pass"]
        # square-summability: finite sums, vanishing tails
        assert np.isfinite(np.sum(trace.dx_norm**2))
        assert np.isfinite(np.sum(trace.dy_norm**2))
        assert trace.dx_norm[-1] ** 2 < 1e-12
        assert trace.dy_norm[-1] ** 2 < 1e-12

    def test_decoupled_dual_contraction(self):
        op = zero_operator((2,), (2,))
        prob = InverseProblem(op=op, y_delta=np.array([1.0, 2.0]), alpha=1.0,
                              reg=zero_functional(), x0=np.array([0.5, -0.5]))
        trace = run_pdhgm(prob, PdConfig(tau=1.0, sigma=4.0, max_iters=60,
                                         keep_iterates=True))
        np.testing.assert_allclose(trace.final_x, [0.5, -0.5])
        dy = trace.dy_norm[:12]  # before the geometric decay hits the floor
        ratios = dy[1:] / dy[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-8)
        assert 0.0 < ratios[0] < 1.0

    def test_constraint_guard_names_violation(self):
        prob = scalar_problem()
        with pytest.raises(ConfigError, match="tau\\*sigma"):
            run_pdhgm(prob, PdConfig(tau=2.0, sigma=2.0, max_iters=5))

    def test_override_allows_run(self):
        prob = scalar_problem()
        trace = run_pdhgm(prob, PdConfig(tau=2.0, sigma=2.0, max_iters=20,
                                         override_constraints=True))
        assert not trace.constraints_ok

    def test_requires_certified_norm(self):
        op = matrix_operator(np.array([[1.0]]))
        prob = InverseProblem(op=op, y_delta=np.zeros(1), alpha=1.0,
                              reg=quadratic(1.0), x0=np.zeros(1))
        with pytest.raises(ConfigError, match="norm"):
            run_pdhgm(prob, PdConfig(tau=0.3, sigma=3.2, max_iters=5))

    def test_divergence_guard(self):
        op = matrix_operator(np.array([[1.0]]))
        ensure_norm(op)
        prob = InverseProblem(op=op, y_delta=np.array([1.0]), alpha=1e-6,
                              reg=zero_functional(), x0=np.array([0.0]))
        with pytest.raises(DivergenceError):
            run_pdhgm(prob, PdConfig(tau=40.0, sigma=40.0, max_iters=100000,
                                     override_constraints=True))

    def test_residual_two_route_identity(self):
        prob = scalar_problem()
        tau, sigma = suggest_steps(0.0, 1.0, 1.0, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=50,
                                         keep_iterates=True))
        a_mat = np.array([[1.0]])
        m_block = np.block([[np.eye(1) / tau, -a_mat.T],
                            [-a_mat, np.eye(1) / sigma]])
        for k in range(len(trace.residual_m)):
            dz = np.concatenate([trace.xs[k] - trace.xs[k + 1],
                                 trace.ys[k] - trace.ys[k + 1]])
            direct = math.sqrt(max(dz @ m_block @ dz, 0.0))
            assert abs(direct - trace.residual_m[k]) < 1e-12


class TestResidualCertificate:
    def test_pass_on_constraint_satisfying_run(self):
        prob, _ = deconv_problem(mcp(0.1, 4.0))
        tau, sigma = suggest_steps(prob.reg.rho_wc, prob.alpha,
                                   prob.op.norm_estimate, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=800))
        cert = min_residual_certificate(trace)
        assert cert["pass"]

    def test_single_step_bound_direct(self):
        prob = scalar_problem()
        tau, sigma = suggest_steps(0.0, 1.0, 1.0, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=10))
        nu = nu_margin(tau, sigma, 0.0, 1.0)
        bound = 2.0 * math.sqrt(max(trace.lyapunov[1] - trace.lyapunov[2], 0.0)
                                / nu)
        assert trace.residual_m[1] <= bound + 1e-9

    def test_refuses_unrelaxed_runs(self):
        prob = scalar_problem()
        trace = run_pdhgm(prob, PdConfig(tau=0.3, sigma=3.17, theta_relax=0.0,
                                         max_iters=30,
                                         override_constraints=True))
        with pytest.raises(CertificateError):
            min_residual_certificate(trace)

    def test_near_boundary_override_recorded(self):
        # negative control: constraint-violating regime, certificate may fail
        prob = scalar_problem()
        trace = run_pdhgm(prob, PdConfig(tau=0.35, sigma=2.0, max_iters=60,
                                         override_constraints=True))
        assert not trace.constraints_ok
        with pytest.raises(CertificateError):
            # mu*sigma <= 3 makes nu <= 0: no certified envelope exists
            min_residual_certificate(trace)


class TestConvexEquivalence:
    @staticmethod
    def prox_gradient_oracle(prob, iters=200000, tol=1e-15):
        t = 0.9 / prob.op.norm_estimate**2
        x = np.zeros(prob.op.domain_shape)
        for _ in range(iters):
            x_new = prox(prob.reg, t * prob.alpha,
                         x - t * prob.op.adjoint_apply(prob.op.apply(x)
                                                       - prob.y_delta))
            if np.linalg.norm(x_new - x) < tol:
                return x_new
            x = x_new
        return x

    def test_scalar_quadratic(self):
        prob = scalar_problem()
        tau, sigma = suggest_steps(0.0, 1.0, 1.0, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=5000,
                                         tol=1e-13))
        oracle = self.prox_gradient_oracle(prob)
        assert np.linalg.norm(trace.final_x - oracle) < 1e-6

    def test_soft_threshold_deconvolution(self):
        prob, _ = deconv_problem(l1(0.05))
        tau, sigma = suggest_steps(0.0, prob.alpha, prob.op.norm_estimate, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=30000,
                                         tol=1e-13))
        oracle = self.prox_gradient_oracle(prob)
        assert np.linalg.norm(trace.final_x - oracle) < 1e-6


class TestErgodicGap:
    @staticmethod
    def gap_fixture():
        prob = scalar_problem()
        tau, sigma = suggest_steps(0.0, 1.0, 1.0, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=5000,
                                         keep_iterates=True))
        ref = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=50000))
        return prob, trace, (ref.final_x, ref.final_y)

    def test_probe_at_saddle_vanishes(self):
        prob, trace, zhat = self.gap_fixture()
        _, gaps, _ = ergodic_gap(trace, probe_x=zhat[0], probe_y=zhat[1],
                                 zhat=zhat, problem=prob)
        assert abs(gaps[-1]) < 1e-5

    def test_log_over_k_tail_fit(self):
        prob, trace, zhat = self.gap_fixture()
        ks, gaps, fit = ergodic_gap(trace, probe_x=zhat[0],
                                    probe_y=zhat[1] + 1.0, zhat=zhat,
                                    problem=prob, fit_from=100)
        assert fit["rel_residual"] < 0.2
        assert len(ks) == len(gaps) == 5000

    def test_short_trace_rejected(self):
        prob = scalar_problem()
        tau, sigma = suggest_steps(0.0, 1.0, 1.0, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=50,
                                         keep_iterates=True))
        with pytest.raises(ConfigError):
            ergodic_gap(trace, np.zeros(1), np.zeros(1),
                        (np.zeros(1), np.zeros(1)), problem=prob)


class TestRateClassify:
    def test_linear_on_strongly_convex_instance(self):
        prob, _ = deconv_problem(quadratic(0.2))
        tau, sigma = suggest_steps(0.0, prob.alpha, prob.op.norm_estimate, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=150,
                                         keep_iterates=True))
        ref = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=4000))
        verdict = rate_classify(trace, (ref.final_x, ref.final_y),
                                problem=prob)
        assert verdict.kind == "linear"
        assert 0.0 < verdict.parameter < 1.0

    def test_synthetic_power_law(self):
        ks = np.arange(1, 2001, dtype=float)
        verdict = rate_classify_distances(ks**-2.0)
        assert verdict.kind == "power"
        assert verdict.parameter == pytest.approx(-2.0, abs=0.05)

    def test_exact_termination_is_finite(self):
        d = np.ones(100)
        d[3:] = 0.0
        assert rate_classify_distances(d).kind == "finite"

    def test_divergent_is_inconclusive(self):
        d = np.linspace(1.0, 100.0, 50)
        assert rate_classify_distances(d).kind == "inconclusive"


class TestSubgradientSolve:
    def test_quadratic_classical_convergence(self):
        prob = scalar_problem()
        out = subgradient_solve(prob, step=0.5, iters=2000)
        # minimiser of 0.5 x^2 + (x-2)^2/2 is x = 1
        assert abs(out.best_x[0] - 1.0) < 1e-6

    def test_stationary_start_stays(self):
        prob = scalar_problem()
        out = subgradient_solve(prob, x0=np.array([1.0]), step=0.1, iters=50)
        assert np.max(np.abs(out.objective_values
                             - out.objective_values[0])) < 1e-20

    def test_matches_pdhgm_objective_on_mcp_instance(self):
        prob, _ = deconv_problem(mcp(0.1, 4.0))
        tau, sigma = suggest_steps(prob.reg.rho_wc, prob.alpha,
                                   prob.op.norm_estimate, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=3000))
        j_pd = objective(prob, trace.final_x)
        out = subgradient_solve(prob, step=0.005, iters=60000)
        assert abs(out.best_objective - j_pd) / j_pd < 0.01


class TestTraceSerialisation:
    def test_csv_and_summary_deterministic(self, tmp_path):
        prob = scalar_problem()
        tau, sigma = suggest_steps(0.0, 1.0, 1.0, 0.9)
        blobs = []
        for run in range(2):
            trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma,
                                             max_iters=40))
            csv_path = tmp_path / f"trace{run}.csv"
            json_path = tmp_path / f"summary{run}.json"
            write_trace_csv(csv_path, trace)
            write_summary_json(json_path, trace,
                               certificates=[descent_certificate(trace)])
            blobs.append(csv_path.read_bytes() + json_path.read_bytes())
        assert blobs[0] == blobs[1]

    def test_summary_contents(self, tmp_path):
        prob = scalar_problem()
        tau, sigma = suggest_steps(0.0, 1.0, 1.0, 0.9)
        trace = run_pdhgm(prob, PdConfig(tau=tau, sigma=sigma, max_iters=40))
        path = tmp_path / "s.json"
        write_summary_json(path, trace)
        payload = json.loads(path.read_text())
        assert payload["config"]["tau"] == tau
        assert payload["iterations"] == 40
        assert "final_residual" in payload
