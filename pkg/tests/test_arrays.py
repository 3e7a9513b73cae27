import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays as np_arrays

from wcreg.arrays import (ProductPoint, inner, m_norm_sq, norm, psnr,
                          read_pgm, read_raw, ssim, write_pgm, write_raw)
from wcreg.errors import ConfigError, ShapeError
from wcreg.operators import identity_operator, matrix_operator, zero_operator


def kahan_dot(u, v):
    total = 0.0
    comp = 0.0
    for a, b in zip(u, v):
        term = a * b - comp
        fresh = total + term
        comp = (fresh - total) - term
        total = fresh
    return total


def test_inner_direct_sum():
    assert inner(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0


def test_inner_zero():
    v = np.arange(5, dtype=float)
    assert inner(np.zeros(5), v) == 0.0


def test_inner_matches_kahan_oracle():
    rng = np.random.default_rng(7)
    u = rng.standard_normal(100)
    v = rng.standard_normal(100)
    expected = kahan_dot(u, v)
    assert inner(u, v) == pytest.approx(expected, rel=1e-12)


def test_inner_shape_mismatch():
    with pytest.raises(ShapeError):
        inner(np.zeros(3), np.zeros(4))


vectors = np_arrays(np.float64, 6, elements=st.floats(-1e3, 1e3))


@settings(deadline=None, max_examples=50)
@given(vectors, vectors, st.floats(-10, 10), st.floats(-10, 10))
def test_inner_symmetric_bilinear(u, v, a, b):
    w = np.linspace(-1.0, 1.0, 6)
    assert inner(u, v) == pytest.approx(inner(v, u), rel=1e-12, abs=1e-9)
    lhs = inner(a * u + b * w, v)
    rhs = a * inner(u, v) + b * inner(w, v)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-6)


class TestMNorm:
    def test_decoupled_norms(self):
        z = ProductPoint(np.array([1.0]), np.array([2.0]))
        op = zero_operator((1,), (1,))
        assert m_norm_sq(z, 1.0, 1.0, op) == pytest.approx(5.0)

    def test_zero_primal_reduces_to_dual_norm(self):
        y = np.array([1.5, -2.0])
        z = ProductPoint(np.zeros(2), y)
        op = identity_operator((2,))
        sigma = 0.25
        assert m_norm_sq(z, 1.0, sigma, op) == pytest.approx(norm(y) ** 2 / sigma)

    def test_dense_assembly_oracle(self):
        # A = I2, tau = sigma = 0.5: assemble the full preconditioner as a
        # dense 4x4 block matrix and compare the quadratic forms
        a_mat = np.eye(2)
        op = matrix_operator(a_mat)
        tau = sigma = 0.5
        big = np.zeros((4, 4))
        big[:2, :2] = np.eye(2) / tau
        big[2:, 2:] = np.eye(2) / sigma
        big[:2, 2:] = -a_mat.T
        big[2:, :2] = -a_mat
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.standard_normal(2)
            y = rng.standard_normal(2)
            zvec = np.concatenate([x, y])
            expected = zvec @ big @ zvec
            got = m_norm_sq(ProductPoint(x, y), tau, sigma, op)
            assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)
        ones = ProductPoint(np.ones(2), np.ones(2))
        assert m_norm_sq(ones, tau, sigma, op) == pytest.approx(4.0)

    def test_nonnegative_under_step_constraint(self):
        rng = np.random.default_rng(11)
        a_mat = rng.standard_normal((3, 4))
        op = matrix_operator(a_mat)
        norm_a = np.linalg.norm(a_mat, 2)
        tau, sigma = 0.3, 0.9 / (0.3 * norm_a**2)
        assert tau * sigma * norm_a**2 < 1.0
        for _ in range(200):
            z = ProductPoint(rng.standard_normal(4), rng.standard_normal(3))
            val = m_norm_sq(z, tau, sigma, op)
            scale = norm(z.x) ** 2 + norm(z.y) ** 2
            assert val >= -1e-12 * scale

    def test_rejects_bad_steps(self):
        z = ProductPoint(np.zeros(2), np.zeros(2))
        with pytest.raises(ConfigError):
            m_norm_sq(z, -1.0, 1.0, identity_operator((2,)))


class TestPsnr:
    def test_identical_is_inf(self):
        img = np.random.default_rng(0).random((8, 8))
        assert psnr(img, img) == math.inf

    def test_uniform_error(self):
        ref = np.zeros((4, 4))
        test = np.full((4, 4), 0.1)
        assert psnr(ref, test, peak=1.0) == pytest.approx(20.0)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(5)
        ref = rng.random((16, 16))
        test = rng.random((16, 16))
        mse = np.mean((ref - test) ** 2)
        expected = 10.0 * math.log10(1.0 / mse)
        assert psnr(ref, test, 1.0) == pytest.approx(expected, rel=1e-10)

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(6)
        ref = rng.random((8, 8))
        test = rng.random((8, 8))
        assert psnr(ref, test, 2.0) == pytest.approx(psnr(test, ref, 2.0))


def ssim_reference_loops(ref, test, peak):
    """Straightforward scalar re-implementation with identical constants."""
    size, sigma = 11, 1.5
    half = (size - 1) / 2.0
    w1 = np.exp(-0.5 * ((np.arange(size) - half) / sigma) ** 2)
    w = np.outer(w1, w1)
    w /= w.sum()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    rows = ref.shape[0] - size + 1
    cols = ref.shape[1] - size + 1
    out = []
    for i in range(rows):
        for j in range(cols):
            pr = ref[i:i + size, j:j + size]
            pt = test[i:i + size, j:j + size]
            mr = (w * pr).sum()
            mt = (w * pt).sum()
            vr = (w * pr * pr).sum() - mr * mr
            vt = (w * pt * pt).sum() - mt * mt
            cov = (w * pr * pt).sum() - mr * mt
            out.append(((2 * mr * mt + c1) * (2 * cov + c2))
                       / ((mr * mr + mt * mt + c1) * (vr + vt + c2)))
    return float(np.mean(out))


class TestSsim:
    def test_identical(self):
        img = np.random.default_rng(1).random((16, 16))
        assert ssim(img, img) == pytest.approx(1.0)

    def test_zero_vs_nonzero_below_one(self):
        img = np.random.default_rng(2).random((16, 16))
        assert ssim(img, np.zeros_like(img)) < 1.0

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(9)
        ref = rng.random((16, 16))
        test = np.clip(ref + 0.1 * rng.standard_normal((16, 16)), 0, 1)
        expected = ssim_reference_loops(ref, test, 1.0)
        assert ssim(ref, test, 1.0) == pytest.approx(expected, abs=1e-6)

    def test_too_small_image(self):
        with pytest.raises(ConfigError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_value_in_range(self):
        rng = np.random.default_rng(10)
        a = rng.random((12, 12))
        b = rng.random((12, 12))
        val = ssim(a, b)
        assert -1.0 <= val <= 1.0


class TestFileFormats:
    def test_raw_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        arr = rng.standard_normal((3, 5, 2))
        path = tmp_path / "a.raw"
        write_raw(path, arr)
        back = read_raw(path)
        assert back.shape == arr.shape
        np.testing.assert_array_equal(back, arr)

    def test_raw_magic(self, tmp_path):
        path = tmp_path / "a.raw"
        write_raw(path, np.ones(3))
        assert path.read_bytes()[:8] == b"WCREG\x00v1"

    def test_pgm_round_trip_quantised(self, tmp_path):
        img = np.linspace(0, 1, 64).reshape(8, 8)
        path = tmp_path / "img.pgm"
        write_pgm(path, img)
        back = read_pgm(path)
        assert back.shape == img.shape
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12
