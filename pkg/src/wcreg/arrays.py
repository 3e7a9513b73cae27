"""Dense array carriers, inner products, the solver's M-norm, and image metrics.

Arrays are plain float64 C-order numpy arrays throughout the package.
Reductions go through ``inner`` so the summation order is fixed and runs
are bit-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

__all__ = [
    "ProductPoint",
    "as_array",
    "inner",
    "norm",
    "m_norm_sq",
    "psnr",
    "ssim",
    "write_raw",
    "read_raw",
    "write_pgm",
    "read_pgm",
]

RAW_MAGIC = b"WCREG\x00v1"

# SSIM constant block: 11x11 Gaussian window with std 1.5 and the usual
# stabilisers C1=(0.01 peak)^2, C2=(0.03 peak)^2.
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def as_array(values, shape=None):
    """Coerce to a float64 C-order array, optionally reshaped."""
    a = np.asarray(values, dtype=np.float64)
    if shape is not None:
        a = a.reshape(shape)
    return np.ascontiguousarray(a)


@dataclass
class ProductPoint:
    """Primal-dual pair (x, y)."""

    x: np.ndarray
    y: np.ndarray

    def copy(self):
        return ProductPoint(self.x.copy(), self.y.copy())


def _check_same_shape(u, v, what):
    if u.shape != v.shape:
        raise ShapeError(f"{what}: shapes {u.shape} and {v.shape} differ")


def inner(u, v):
    """Euclidean inner product with a fixed left-to-right reduction order."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_same_shape(u, v, "inner")
    return float(np.dot(u.ravel(), v.ravel()))


def norm(u):
    return float(np.linalg.norm(np.asarray(u, dtype=np.float64).ravel()))


def m_norm_sq(z: ProductPoint, tau: float, sigma: float, op) -> float:
    """Quadratic form (1/tau)|x|^2 - 2<Ax,y> + (1/sigma)|y|^2.

    Nonnegative whenever tau*sigma*|A|^2 < 1.
    """
    if tau <= 0 or sigma <= 0:
        raise ConfigError(f"step sizes must be positive, got tau={tau}, sigma={sigma}")
    ax = op.apply(z.x) if op is not None else np.zeros_like(z.y)
    return (
        inner(z.x, z.x) / tau
        - 2.0 * inner(ax, z.y)
        + inner(z.y, z.y) / sigma
    )


def psnr(reference, test, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); returns +inf when the images coincide.

    The +inf sentinel keeps trace files writable instead of raising on
    exact reconstructions.
    """
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    _check_same_shape(reference, test, "psnr")
    if peak <= 0:
        raise ConfigError(f"peak must be positive, got {peak}")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    t = np.arange(size) - half
    w = np.exp(-0.5 * (t / sigma) ** 2)
    w2 = np.outer(w, w)
    return w2 / w2.sum()


def _window_means(img, window):
    # valid-mode weighted local means; small images, direct sliding product
    from numpy.lib.stride_tricks import sliding_window_view

    patches = sliding_window_view(img, window.shape)
    return np.einsum("ijkl,kl->ij", patches, window)


def ssim(reference, test, peak: float = 1.0) -> float:
    """Mean local structural similarity over valid sliding windows."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    _check_same_shape(reference, test, "ssim")
    if reference.ndim != 2:
        raise ConfigError("ssim expects 2-D arrays")
    if min(reference.shape) < SSIM_WINDOW:
        raise ConfigError(
            f"image extents {reference.shape} below the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    if peak <= 0:
        raise ConfigError(f"peak must be positive, got {peak}")
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    mu_r = _window_means(reference, w)
    mu_t = _window_means(test, w)
    m_rr = _window_means(reference * reference, w)
    m_tt = _window_means(test * test, w)
    m_rt = _window_means(reference * test, w)
    var_r = m_rr - mu_r**2
    var_t = m_tt - mu_t**2
    cov = m_rt - mu_r * mu_t

    num = (2 * mu_r * mu_t + c1) * (2 * cov + c2)
    den = (mu_r**2 + mu_t**2 + c1) * (var_r + var_t + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# file formats


def write_raw(path, array):
    """Raw format: magic, u32 rank, u32 extents, row-major little-endian f64."""
    a = as_array(array)
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        for extent in a.shape:
            fh.write(struct.pack("<I", extent))
        fh.write(a.astype("<f8").tobytes(order="C"))


def read_raw(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != RAW_MAGIC:
            raise ConfigError(f"{path}: bad magic {magic!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(fh.read(8 * count), dtype="<f8", count=count)
    return data.astype(np.float64).reshape(shape)


def write_pgm(path, image):
    """P5 PGM with linear [0,1] -> [0,255] mapping; values are clipped."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("pgm export expects a 2-D array")
    q = np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.tobytes(order="C"))


def read_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise ConfigError(f"{path}: not a binary PGM")
    # header = magic, width, height, maxval, single whitespace, then payload
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise ConfigError(f"{path}: expected maxval 255, got {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=width * height, offset=pos)
    return data.reshape(height, width).astype(np.float64) / 255.0
