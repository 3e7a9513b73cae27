"""Forward models: apply/adjoint pairs with certified norm estimates.

Every constructor returns a ``LinearOperator`` whose adjoint is the exact
transpose of the discretised forward map, so the saddle-point solver's
step-size theory applies without an adjoint-mismatch fudge.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from .arrays import inner, norm
from .errors import ConfigError, UnsupportedError

__all__ = [
    "LinearOperator",
    "adjoint_test",
    "operator_norm",
    "ensure_norm",
    "identity_operator",
    "matrix_operator",
    "zero_operator",
    "make_convolution",
    "make_subsample",
    "make_radon",
    "compose",
    "as_dense_matrix",
    "kernel_projector",
    "dump_weight_table",
]


@dataclass
class LinearOperator:
    domain_shape: tuple
    range_shape: tuple
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint_apply: Callable[[np.ndarray], np.ndarray]
    norm_estimate: Optional[float] = None
    norm_converged: bool = False
    # explicit matrix when the operator was built from one (dense or sparse)
    matrix: object = field(default=None, repr=False)


def adjoint_test(op: LinearOperator, trials: int = 20, seed: int = 0) -> float:
    """Worst normalised discrepancy |<Au,w> - <u,A*w>| over random probes."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.domain_shape)
        w = rng.standard_normal(op.range_shape)
        au = op.apply(u)
        atw = op.adjoint_apply(w)
        lhs = inner(au, w)
        rhs = inner(u, atw)
        scale = norm(au) * norm(w) + norm(u) * norm(atw)
        if scale == 0.0:
            continue
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def operator_norm(op: LinearOperator, max_iters: int = 500, tol: float = 1e-12,
                  seed: int = 0, return_history: bool = False):
    """Power-method estimate of the largest singular value.

    Iterates x <- A*Ax / |A*Ax|; the Rayleigh quotient |Ax|^2 is monotone
    nondecreasing, and we stop when successive square-root quotients differ
    by less than ``tol``.  The estimate and a converged flag are cached on
    the operator.
    """
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    if tol <= 0:
        raise ConfigError("tol must be positive")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.domain_shape)
    nx = norm(x)
    if nx == 0.0:
        x = np.ones(op.domain_shape)
        nx = norm(x)
    x = x / nx
    prev = 0.0
    converged = False
    estimate = 0.0
    history = []
    for _ in range(max_iters):
        ax = op.apply(x)
        estimate = norm(ax)
        if estimate == 0.0:
            # zero operator (or x in the kernel of a rank-deficient map);
            # restart once from a fresh direction, then accept 0
            x = rng.standard_normal(op.domain_shape)
            ax = op.apply(x)
            if norm(ax) == 0.0:
                op.norm_estimate = 0.0
                op.norm_converged = True
                if return_history:
                    return 0.0, True, np.array([0.0])
                return 0.0, True
            estimate = norm(ax) / norm(x)
        history.append(estimate)
        if abs(estimate - prev) < tol:
            converged = True
            break
        prev = estimate
        x = op.adjoint_apply(ax)
        x = x / norm(x)
    op.norm_estimate = float(estimate)
    op.norm_converged = converged
    if return_history:
        return float(estimate), converged, np.array(history)
    return float(estimate), converged


def ensure_norm(op: LinearOperator, seed: int = 0, tol: float = 1e-9,
                max_iters: int = 50000) -> float:
    """Return a converged norm estimate, running the power method if needed.

    The default tolerance is looser than the power method's own: step-size
    rules consume the estimate through a strict safety margin, so 1e-9 on
    the Rayleigh quotient is ample.
    """
    if op.norm_estimate is None or not op.norm_converged:
        est, converged = operator_norm(op, max_iters=max_iters, tol=tol, seed=seed)
        if not converged:
            raise ConfigError("operator norm estimate did not converge")
        return est
    return op.norm_estimate


def identity_operator(shape) -> LinearOperator:
    shape = tuple(shape)
    return LinearOperator(shape, shape, lambda x: x.copy(), lambda y: y.copy(),
                          norm_estimate=1.0, norm_converged=True)


def zero_operator(domain_shape, range_shape) -> LinearOperator:
    domain_shape = tuple(domain_shape)
    range_shape = tuple(range_shape)
    return LinearOperator(
        domain_shape, range_shape,
        lambda x: np.zeros(range_shape),
        lambda y: np.zeros(domain_shape),
        norm_estimate=0.0, norm_converged=True,
    )


def matrix_operator(mat) -> LinearOperator:
    """Wrap a dense or scipy.sparse matrix acting on flat vectors."""
    if sp.issparse(mat):
        mat = mat.tocsr()
        apply_ = lambda x: np.asarray(mat @ x.ravel())
        adj = lambda y: np.asarray(mat.T @ y.ravel())
    else:
        mat = np.asarray(mat, dtype=np.float64)
        apply_ = lambda x: mat @ x.ravel()
        adj = lambda y: mat.T @ y.ravel()
    m, n = mat.shape
    return LinearOperator((n,), (m,), apply_, adj, matrix=mat)


def make_convolution(kernel, boundary: str = "zero", domain_shape=None) -> LinearOperator:
    """Discrete convolution with a centred odd-extent kernel.

    The adjoint is correlation with the same kernel under the same boundary
    rule, which is the exact transpose of the forward map for both zero and
    periodic boundaries.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if any(e % 2 == 0 for e in kernel.shape):
        raise ConfigError(f"kernel extents must be odd, got {kernel.shape}")
    if boundary == "zero":
        mode = "constant"
    elif boundary == "periodic":
        mode = "wrap"
    else:
        raise ConfigError(f"unknown boundary rule {boundary!r}")
    if domain_shape is None:
        raise ConfigError("make_convolution requires the domain shape")
    domain_shape = tuple(domain_shape)
    if len(domain_shape) != kernel.ndim:
        raise ConfigError("kernel rank must match the domain rank")

    def apply_(x):
        return ndi.convolve(x, kernel, mode=mode, cval=0.0)

    def adjoint_(y):
        return ndi.correlate(y, kernel, mode=mode, cval=0.0)

    return LinearOperator(domain_shape, domain_shape, apply_, adjoint_)


def make_subsample(mask) -> LinearOperator:
    """Restriction to kept entries; adjoint zero-fills. |A| = 1."""
    mask = np.asarray(mask, dtype=bool)
    kept = int(mask.sum())
    if kept == 0:
        raise ConfigError("subsample mask keeps no entries")
    flat_idx = np.flatnonzero(mask.ravel())
    domain_shape = mask.shape

    def apply_(x):
        return x.ravel()[flat_idx].copy()

    def adjoint_(y):
        out = np.zeros(mask.size)
        out[flat_idx] = y.ravel()
        return out.reshape(domain_shape)

    return LinearOperator(domain_shape, (kept,), apply_, adjoint_,
                          norm_estimate=1.0, norm_converged=True)


def _radon_weight_table(grid_n: int, angles, detectors: int):
    """Sparse line-integral weights with a bilinear interpolation footprint.

    Image lives on [-1,1]^2; detector offsets span the image diagonal.  Each
    ray is sampled at half-pixel spacing and every sample deposits its
    bilinear footprint, scaled by the sample spacing, into the weight table.
    """
    angles = np.asarray(angles, dtype=np.float64)
    pixel = 2.0 / grid_n
    half_diag = np.sqrt(2.0)
    s_coords = np.linspace(-half_diag, half_diag, detectors)
    step = 0.5 * pixel
    n_samples = int(np.ceil(2.0 * half_diag / step)) + 1
    t_coords = np.linspace(-half_diag, half_diag, n_samples)
    dt = t_coords[1] - t_coords[0]

    # pixel centres: cell (i, j) centred at (-1 + (j+1/2) px, -1 + (i+1/2) px)
    rows, cols, weights = [], [], []
    for a_idx, theta in enumerate(angles):
        normal = np.array([np.cos(theta), np.sin(theta)])
        direction = np.array([-np.sin(theta), np.cos(theta)])
        for d_idx, s in enumerate(s_coords):
            pts = s * normal[None, :] + t_coords[:, None] * direction[None, :]
            # fractional pixel coordinates of each sample
            fx = (pts[:, 0] + 1.0) / pixel - 0.5
            fy = (pts[:, 1] + 1.0) / pixel - 0.5
            ix = np.floor(fx).astype(np.int64)
            iy = np.floor(fy).astype(np.int64)
            wx = fx - ix
            wy = fy - iy
            row_id = a_idx * detectors + d_idx
            for dx, dy, w in (
                (0, 0, (1 - wx) * (1 - wy)),
                (1, 0, wx * (1 - wy)),
                (0, 1, (1 - wx) * wy),
                (1, 1, wx * wy),
            ):
                gx = ix + dx
                gy = iy + dy
                ok = (gx >= 0) & (gx < grid_n) & (gy >= 0) & (gy < grid_n)
                if not ok.any():
                    continue
                cols.append((gy[ok] * grid_n + gx[ok]))
                weights.append(w[ok] * dt)
                rows.append(np.full(ok.sum(), row_id, dtype=np.int64))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    weights = np.concatenate(weights)
    table = sp.coo_matrix(
        (weights, (rows, cols)), shape=(len(angles) * detectors, grid_n * grid_n)
    )
    table.sum_duplicates()
    return table.tocsr()


def make_radon(grid_n: int, angles, detectors: int) -> LinearOperator:
    """Parallel-beam line-integral operator with exact-transpose adjoint."""
    if grid_n < 8:
        raise ConfigError("grid_n must be >= 8")
    angles = np.atleast_1d(np.asarray(angles, dtype=np.float64))
    if angles.size < 1:
        raise ConfigError("need at least one angle")
    table = _radon_weight_table(grid_n, angles, detectors)
    domain_shape = (grid_n, grid_n)
    range_shape = (angles.size, detectors)

    def apply_(x):
        return np.asarray(table @ x.ravel()).reshape(range_shape)

    def adjoint_(y):
        return np.asarray(table.T @ y.ravel()).reshape(domain_shape)

    return LinearOperator(domain_shape, range_shape, apply_, adjoint_, matrix=table)


def dump_weight_table(op: LinearOperator, path):
    """CSV dump (row, col, weight) of an operator built from an explicit table."""
    if op.matrix is None or not sp.issparse(op.matrix):
        raise UnsupportedError("operator carries no sparse weight table")
    coo = op.matrix.tocoo()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "weight"])
        for r, c, w in zip(coo.row, coo.col, coo.data):
            writer.writerow([int(r), int(c), repr(float(w))])


def compose(outer: LinearOperator, inner_op: LinearOperator) -> LinearOperator:
    """outer after inner; norm estimates multiply when both are certified."""
    if outer.domain_shape != inner_op.range_shape:
        raise ConfigError(
            f"cannot compose: {outer.domain_shape} vs {inner_op.range_shape}"
        )
    op = LinearOperator(
        inner_op.domain_shape,
        outer.range_shape,
        lambda x: outer.apply(inner_op.apply(x)),
        lambda y: inner_op.adjoint_apply(outer.adjoint_apply(y)),
    )
    if outer.norm_converged and inner_op.norm_converged:
        op.norm_estimate = outer.norm_estimate * inner_op.norm_estimate
        # product is an upper bound, not a certified estimate
        op.norm_converged = False
    return op


def as_dense_matrix(op: LinearOperator, max_columns: int = 4096) -> np.ndarray:
    """Materialise the operator column by column.  Desk scale only."""
    n = int(np.prod(op.domain_shape))
    if n > max_columns:
        raise UnsupportedError(f"operator too large to materialise ({n} columns)")
    if op.matrix is not None:
        mat = op.matrix
        return mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=np.float64)
    cols = []
    probe = np.zeros(n)
    for j in range(n):
        probe[j] = 1.0
        cols.append(op.apply(probe.reshape(op.domain_shape)).ravel().copy())
        probe[j] = 0.0
    return np.stack(cols, axis=1)


def kernel_projector(op: LinearOperator, max_columns: int = 4096, rtol: float = 1e-10):
    """Orthogonal projector onto ker(A) via a dense SVD.  Desk scale only."""
    mat = as_dense_matrix(op, max_columns=max_columns)
    _, svals, vt = np.linalg.svd(mat, full_matrices=True)
    cut = svals[0] * rtol if svals.size else 0.0
    rank = int(np.sum(svals > cut))
    null_basis = vt[rank:].T  # (n, n-rank)
    return null_basis @ null_basis.T
