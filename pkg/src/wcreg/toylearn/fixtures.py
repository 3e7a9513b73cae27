"""Double-spiral data manifold, distance oracle, and alignment metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ConfigError
from . import tape
from .nets import AwcrParams, IcnnParams, awcr_batch_eval, icnn_forward_var
from .train import TrainSchedule, train_awcr, train_regression

__all__ = [
    "SPIRAL_A",
    "SPIRAL_B",
    "SPIRAL_T_MIN",
    "SPIRAL_T_MAX",
    "SpiralOracle",
    "spiral_fixture",
    "distance_alignment",
    "default_awcr",
    "matched_icnn",
    "icnn_batch_eval",
    "train_spiral_awcr",
    "train_spiral_icnn",
    "universal_demo",
]

SPIRAL_A = 0.5
SPIRAL_B = 0.25
SPIRAL_T_MIN = 0.5 * math.pi
SPIRAL_T_MAX = 2.5 * math.pi


def _spiral_points(ts, phase):
    r = SPIRAL_A + SPIRAL_B * ts
    return np.stack([r * np.cos(ts + phase), r * np.sin(ts + phase)], axis=1)


@dataclass
class SpiralOracle:
    """Distance queries against a dense discretisation of both arms."""

    points: np.ndarray
    pitch: float

    def __post_init__(self):
        self._tree = cKDTree(self.points)

    def distance(self, queries) -> np.ndarray:
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        d, _ = self._tree.query(q)
        return np.asarray(d)


def spiral_fixture(n_per_arm: int, noise_sigma: float, seed: int = 0,
                   oracle_density: int = 10000):
    """Clean samples on the two arms, noisy copies, and a distance oracle."""
    if n_per_arm < 1:
        raise ConfigError("n_per_arm must be >= 1")
    rng = np.random.default_rng(seed)
    ts = rng.uniform(SPIRAL_T_MIN, SPIRAL_T_MAX, size=n_per_arm)
    real = np.concatenate([_spiral_points(ts, 0.0), _spiral_points(ts, math.pi)])
    noisy = real + noise_sigma * rng.standard_normal(real.shape)
    dense_t = np.linspace(SPIRAL_T_MIN, SPIRAL_T_MAX, oracle_density)
    dense = np.concatenate([_spiral_points(dense_t, 0.0),
                            _spiral_points(dense_t, math.pi)])
    pitch = float(np.max(np.linalg.norm(np.diff(
        _spiral_points(dense_t, 0.0), axis=0), axis=1)))
    return real, noisy, SpiralOracle(dense, pitch)


def distance_alignment(values_fn, oracle, grid_box=(-2.6, 2.6), grid_n: int = 64):
    """Correlation and calibrated sup error of a regulariser against the
    oracle distance, after the best monotone affine map a + b * R (b >= 0).

    ``values_fn(points)`` evaluates the regulariser at rows of ``points``.
    Learned critics are only defined up to affine terms, hence the
    calibration before comparison.
    """
    if grid_n < 16:
        raise ConfigError("grid_n must be >= 16")
    lo, hi = grid_box
    axis = np.linspace(lo, hi, grid_n)
    gx, gy = np.meshgrid(axis, axis)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    r = np.asarray(values_fn(pts), dtype=np.float64).ravel()
    d = oracle.distance(pts)
    var_r = float(np.var(r))
    if var_r == 0.0:
        return 0.0, float(np.max(np.abs(np.mean(d) - d)))
    b = max(0.0, float(np.cov(r, d)[0, 1] / var_r))
    a = float(np.mean(d) - b * np.mean(r))
    calibrated = a + b * r
    corr = float(np.corrcoef(r, d)[0, 1])
    sup_err = float(np.max(np.abs(calibrated - d)))
    return corr, sup_err


# ---------------------------------------------------------------------------
# default toy architectures and training drivers


def default_awcr(seed: int = 0, smooth_dims=(2, 16, 16), icnn_hidden=(8,),
                 mu0=None, residual: bool = False) -> AwcrParams:
    from .nets import MU0_DEFAULT, SmoothNetParams

    rng = np.random.default_rng(seed)
    smooth = SmoothNetParams.init(list(smooth_dims), rng)
    icnn_in = smooth_dims[-1] + (smooth_dims[0] if residual else 0)
    icnn = IcnnParams.init(icnn_in, list(icnn_hidden), rng)
    return AwcrParams(smooth=smooth, icnn=icnn, residual=residual,
                      mu0=MU0_DEFAULT if mu0 is None else mu0)


def matched_icnn(reference: AwcrParams, in_dim: int = 2, seed: int = 0) -> IcnnParams:
    """Single-hidden-layer convex net sized to the reference parameter count."""
    from .nets import param_arrays

    target = sum(a.size for a in param_arrays(reference))
    # widths: layer0 (h*in + h) + final (h + in + 1)
    h = max(4, round((target - in_dim - 1) / (in_dim + 2)))
    rng = np.random.default_rng(seed)
    return IcnnParams.init(in_dim, [h], rng)


def icnn_batch_eval(params: IcnnParams, points, mu0: float = 0.0) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    u = tape.const(pts.T)
    vals = icnn_forward_var(params, u).value.ravel()
    if mu0:
        vals = vals + 0.5 * mu0 * np.sum(pts * pts, axis=1)
    return vals


def train_spiral_awcr(p: AwcrParams, real, noisy, schedule: TrainSchedule):
    return train_awcr(real, noisy, p, schedule)


def train_spiral_icnn(params: IcnnParams, real, noisy, schedule: TrainSchedule,
                      mu0: float = 0.0):
    """Adversarial training of the convex-only baseline with the same loss."""
    from .nets import MU0_DEFAULT, SmoothNetParams

    # wrap the bare convex net as a degenerate composite: identity smooth part
    dim = params.wx[0].shape[1]
    smooth = SmoothNetParams(weights=[np.eye(dim)], biases=[np.zeros((dim, 1))])
    wrapped = AwcrParams(smooth=smooth, icnn=params,
                         mu0=mu0 if mu0 else MU0_DEFAULT)
    wrapped, log = train_awcr(real, noisy, wrapped, schedule)
    return wrapped.icnn, log


def universal_demo(target, budget: int = 2000, seed: int = 0,
                   smooth_dims=(1, 16, 16), icnn_hidden=(8,),
                   rate: float = 3e-3, final_rate=None, grid_n: int = 257,
                   convex_only: bool = False):
    """Fit a 1-D continuous target by least squares; sup error on a fine grid.

    With ``convex_only`` the smooth block is frozen to the identity, leaving
    a purely convex model: on targets with interior humps its error floor is
    structural, which is the comparison the composite architecture wins.
    """
    from .nets import SmoothNetParams, param_arrays

    rng = np.random.default_rng(seed)
    xs = np.linspace(-1.0, 1.0, grid_n)
    ys = np.array([target(x) for x in xs])

    if convex_only:
        hidden = [max(icnn_hidden[0] * 4, 16)]
        icnn = IcnnParams.init(1, hidden, rng)
        smooth = SmoothNetParams(weights=[np.eye(1)], biases=[np.zeros((1, 1))])
        p = AwcrParams(smooth=smooth, icnn=icnn, mu0=0.0)
    else:
        p = default_awcr(seed=seed, smooth_dims=smooth_dims,
                         icnn_hidden=icnn_hidden, mu0=0.0, residual=True)

    arrays = param_arrays(p)
    batch = tape.const(xs.reshape(1, -1))
    from .train import _forward_batch

    def forward(pvars):
        return _forward_batch(p, batch, pvars)

    train_regression(forward, arrays, p.icnn.project, xs, ys,
                     epochs=budget, rate=rate, seed=seed,
                     final_rate=final_rate)
    hold = np.linspace(-1.0, 1.0, 4 * grid_n + 1)
    pred = awcr_batch_eval(p, hold.reshape(-1, 1))
    truth = np.array([target(x) for x in hold])
    return float(np.max(np.abs(pred - truth)))
