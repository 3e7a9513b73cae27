"""Deterministic synthetic test images with values in [0, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["Phantom", "make_phantom", "MINI_SHEPP_ELLIPSES"]

# (additive value, semi-axis a, semi-axis b, centre x, centre y, angle deg)
MINI_SHEPP_ELLIPSES = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


@dataclass
class Phantom:
    image: np.ndarray
    description: str


def _grid(n):
    axis = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    return np.meshgrid(axis, axis)


def _discs(n):
    gx, gy = _grid(n)
    img = np.zeros((n, n))
    for (cx, cy, r, v) in ((-0.35, -0.3, 0.3, 0.7), (0.35, -0.25, 0.22, 1.0),
                           (0.0, 0.4, 0.35, 0.45), (0.15, 0.05, 0.1, 0.85)):
        img = np.where((gx - cx) ** 2 + (gy - cy) ** 2 <= r * r, v, img)
    return img


def _bars(n):
    gx, _ = _grid(n)
    img = np.zeros((n, n))
    # mirror-symmetric bar chart: |x| decides the bar, so a left-right flip
    # leaves the image invariant
    edges = (0.15, 0.35, 0.55, 0.8)
    values = (1.0, 0.6, 0.3, 0.8)
    prev = 0.0
    for edge, v in zip(edges, values):
        img = np.where((np.abs(gx) >= prev) & (np.abs(gx) < edge), v, img)
        prev = edge
    return img


def _mini_shepp(n):
    gx, gy = _grid(n)
    img = np.zeros((n, n))
    for value, a, b, cx, cy, deg in MINI_SHEPP_ELLIPSES:
        phi = math.radians(deg)
        c, s = math.cos(phi), math.sin(phi)
        xr = (gx - cx) * c + (gy - cy) * s
        yr = -(gx - cx) * s + (gy - cy) * c
        img += value * ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0)
    return np.clip(img, 0.0, 1.0)


_KINDS = {"discs": _discs, "bars": _bars, "mini-shepp": _mini_shepp}


def make_phantom(kind: str, n: int) -> Phantom:
    if n < 16:
        raise ConfigError("phantom size must be >= 16")
    try:
        builder = _KINDS[kind]
    except KeyError:
        raise ConfigError(f"unknown phantom kind {kind!r}; "
                          f"choose from {sorted(_KINDS)}") from None
    img = builder(n)
    return Phantom(image=np.clip(img, 0.0, 1.0),
                   description=f"{kind} phantom at {n}x{n}")
