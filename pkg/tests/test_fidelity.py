import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wcreg.errors import ConfigError, ShapeError
from wcreg.fidelity import (assumption_audit, conj_eval, conj_prox,
                            conjugate_sq_l2, sq_l2, sq_l2_fidelity)
from wcreg.functionals import Functional, check_rho_convexity


class TestSqL2:
    def test_zero_at_equal(self):
        y = np.array([1.0, 2.0])
        assert sq_l2(y, y) == 0.0

    def test_three_four_five(self):
        assert sq_l2(np.array([3.0, 4.0]), np.zeros(2)) == pytest.approx(12.5)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sq_l2(np.zeros(2), np.zeros(3))

    def test_triangle_type_bound_on_random_triples(self):
        fid = sq_l2_fidelity()
        record = assumption_audit(fid, samples=10000, dim=4, seed=0)
        assert record["pass"]
        assert record["worst_violation"] <= 2.0

    def test_degenerate_triples(self):
        fid = sq_l2_fidelity()
        rng = np.random.default_rng(1)
        y1 = rng.standard_normal(3)
        y2 = rng.standard_normal(3)
        # y2 == y3: ratio D/D = 1 <= C
        assert fid.eval(y1, y2) / (fid.eval(y1, y2) + 0.0) == pytest.approx(1.0)
        # y1 == y3: ratio D(y1,y2)/|y2-y1|^2 = 1/2
        ratio = fid.eval(y1, y2) / np.linalg.norm(y2 - y1) ** 2
        assert ratio == pytest.approx(0.5)


class TestConjugate:
    def test_eval_at_zero(self):
        cf = conjugate_sq_l2(1.0, np.zeros(2))
        assert conj_eval(cf, np.zeros(2)) == 0.0

    def test_eval_simple(self):
        cf = conjugate_sq_l2(1.0, np.zeros(1))
        assert conj_eval(cf, np.array([2.0])) == pytest.approx(2.0)

    def test_eval_matches_grid_sup(self):
        alpha = 2.0
        y_delta = np.array([1.0])
        cf = conjugate_sq_l2(alpha, y_delta)
        w = np.array([3.0])
        got = conj_eval(cf, w)
        assert got == pytest.approx(12.0)
        ys = np.arange(-50.0, 50.0, 1e-3)
        sup = np.max(w[0] * ys - (ys - y_delta[0]) ** 2 / (2 * alpha))
        assert got == pytest.approx(sup, abs=1e-3)

    def test_prox_simple(self):
        cf = conjugate_sq_l2(1.0, np.zeros(1))
        np.testing.assert_allclose(conj_prox(cf, 1.0, np.array([2.0])), [1.0])

    def test_prox_matches_grid(self):
        cf = conjugate_sq_l2(1.0, np.array([2.0]))
        got = conj_prox(cf, 1.0, np.array([4.0]))[0]
        assert got == pytest.approx(1.0)
        ws = np.arange(-20.0, 20.0, 1e-4)
        obj = 0.5 * ws**2 + ws * 2.0 + (ws - 4.0) ** 2 / 2.0
        assert abs(ws[np.argmin(obj)] - got) < 1e-4

    def test_prox_vanishing_step_is_identity(self):
        cf = conjugate_sq_l2(1.0, np.array([5.0]))
        v = np.array([2.0])
        out = conj_prox(cf, 1e-8, v)
        assert np.max(np.abs(out - v)) < 1e-6

    def test_prox_optimality_condition(self):
        rng = np.random.default_rng(2)
        cf = conjugate_sq_l2(1.7, rng.standard_normal(4))
        for sigma in (0.3, 1.0, 4.0):
            v = rng.standard_normal(4)
            w = conj_prox(cf, sigma, v)
            residual = cf.alpha * w + cf.y_delta + (w - v) / sigma
            assert np.max(np.abs(residual)) < 1e-12

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(ConfigError):
            conjugate_sq_l2(0.0, np.zeros(1))


@settings(deadline=None, max_examples=100)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.2, 3.0), st.floats(-2, 2))
def test_fenchel_young(w, y, alpha, y_delta):
    cf = conjugate_sq_l2(alpha, np.array([y_delta]))
    f_of_y = (y - y_delta) ** 2 / (2 * alpha)
    f_star = conj_eval(cf, np.array([w]))
    assert f_star + f_of_y >= w * y - 1e-9
    # equality at y = grad F*(w)
    y_eq = alpha * w + y_delta
    f_eq = (y_eq - y_delta) ** 2 / (2 * alpha)
    assert f_star + f_eq == pytest.approx(w * y_eq, abs=1e-9)


def test_conjugate_strong_convexity_modulus():
    alpha = 1.3
    y_delta = np.array([0.7])
    cf = conjugate_sq_l2(alpha, y_delta)
    shifted = Functional(
        name="conj_minus_quadratic",
        eval_fn=lambda w: conj_eval(cf, w) - 0.5 * alpha * float(w @ w),
        subgrad_fn=lambda w: y_delta.copy(),
        pointwise=lambda t: 0.5 * alpha * t * t + y_delta[0] * t
        - 0.5 * alpha * t * t,
        pointwise_deriv=lambda t: np.full_like(t, y_delta[0]),
    )
    worst = check_rho_convexity(shifted, 0.0, samples=5000, seed=3)
    assert worst <= 1e-9
