"""Micro dense networks: input-convex, smooth, and their weakly convex
composition plus a small quadratic term.

The convex block keeps its propagation weights entrywise nonnegative and
uses a leaky rectifier (convex, nondecreasing), so its input-output map is
convex by construction.  Composing it with a smooth (silu) subnetwork gives
a weakly convex map whose declared modulus is the product of the convex
block's Lipschitz bound and the smooth block's gradient-Lipschitz bound;
both bounds are upper estimates recorded next to the parameters.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, StructureError
from . import tape
from .tape import Var

__all__ = [
    "SmoothNetParams",
    "IcnnParams",
    "AwcrParams",
    "MU0_DEFAULT",
    "smooth_forward",
    "icnn_forward_var",
    "icnn_forward",
    "icnn_grad",
    "iwcnn_forward",
    "awcr_eval",
    "awcr_grad",
    "awcr_batch_eval",
    "icnn_lipschitz_bound",
    "smooth_curvature_bound",
    "save_checkpoint",
    "load_checkpoint",
]

# small strictly positive quadratic weight keeping the full regulariser's
# convex part nondegenerate without visibly changing its landscape
MU0_DEFAULT = float(np.log1p(np.exp(-9.0)))

LEAKY_SLOPE = 0.2

# silu slope / curvature bounds from a dense scan; see smooth_curvature_bound
_SILU_GRID = np.linspace(-20.0, 20.0, 200001)


def _silu_d1_max():
    s = 1.0 / (1.0 + np.exp(-_SILU_GRID))
    d1 = s * (1.0 + _SILU_GRID * (1.0 - s))
    return float(np.max(np.abs(d1)))


def _silu_d2_max():
    s = 1.0 / (1.0 + np.exp(-_SILU_GRID))
    d1s = s * (1.0 - s)
    d2 = 2.0 * d1s + _SILU_GRID * d1s * (1.0 - 2.0 * s)
    return float(np.max(np.abs(d2)))


SILU_SLOPE_BOUND = _silu_d1_max()
SILU_CURVATURE_BOUND = _silu_d2_max()


@dataclass
class SmoothNetParams:
    """Affine stack with silu between layers, linear last layer."""

    weights: list  # of np.ndarray (out, in)
    biases: list  # of np.ndarray (out, 1)

    @classmethod
    def init(cls, dims, rng, scale: float = 1.0, bias_spread: float = 0.5):
        # spread biases so activation breakpoints cover the data range
        weights, biases = [], []
        for din, dout in zip(dims[:-1], dims[1:]):
            weights.append(rng.standard_normal((dout, din)) * scale / math.sqrt(din))
            biases.append(rng.uniform(-bias_spread, bias_spread, (dout, 1)))
        return cls(weights, biases)

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]


@dataclass
class IcnnParams:
    """Input-convex block: passthrough weights free, propagation weights >= 0."""

    wx: list  # per layer, (out, in_dim) acting on the block input
    wz: list  # per layer after the first, (out, prev) entrywise nonnegative
    biases: list
    slope: float = LEAKY_SLOPE

    @classmethod
    def init(cls, in_dim, hidden, rng, scale: float = 1.0,
             bias_spread: float = 0.5):
        """hidden: list of hidden widths; output is scalar."""
        dims = list(hidden) + [1]
        wx, wz, biases = [], [], []
        prev = None
        for dout in dims:
            wx.append(rng.standard_normal((dout, in_dim)) * scale / math.sqrt(in_dim))
            if prev is not None:
                w = np.abs(rng.standard_normal((dout, prev))) * scale / math.sqrt(prev)
                wz.append(w)
            biases.append(rng.uniform(-bias_spread, bias_spread, (dout, 1)))
            prev = dout
        return cls(wx, wz, biases)

    def project(self):
        """Clip propagation weights at zero (structural convexity condition)."""
        for w in self.wz:
            np.maximum(w, 0.0, out=w)

    def check_structure(self):
        for w in self.wz:
            if np.any(w < 0.0):
                raise StructureError("negative propagation weight in convex block")


@dataclass
class AwcrParams:
    """Weakly convex regulariser: convex block after a smooth block, plus
    (mu0/2)|x|^2.  ``rho_hat`` is the declared composition modulus.

    With ``residual`` the convex block sees [smooth(x); x]; the identity
    channel carries no curvature, so the composition modulus argument is
    untouched while the convex block gains exact kinks in the raw input.
    """

    smooth: SmoothNetParams
    icnn: IcnnParams
    mu0: float = MU0_DEFAULT
    residual: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def rho_hat(self) -> float:
        return icnn_lipschitz_bound(self.icnn) * smooth_curvature_bound(self.smooth)


# ---------------------------------------------------------------------------
# forward passes (Var graph)


def _param_vars(arrays):
    return [tape.leaf(a) for a in arrays]


def smooth_forward(params: SmoothNetParams, x: Var, weight_vars=None,
                   bias_vars=None) -> Var:
    ws = weight_vars if weight_vars is not None else _param_vars(params.weights)
    bs = bias_vars if bias_vars is not None else _param_vars(params.biases)
    h = x
    last = len(ws) - 1
    for i, (w, b) in enumerate(zip(ws, bs)):
        h = tape.add(tape.matmul(w, h), b)
        if i < last:
            h = tape.silu(h)
    return h


def icnn_forward_var(params: IcnnParams, u: Var, wx_vars=None, wz_vars=None,
                     bias_vars=None) -> Var:
    params.check_structure()
    wxs = wx_vars if wx_vars is not None else _param_vars(params.wx)
    wzs = wz_vars if wz_vars is not None else _param_vars(params.wz)
    bs = bias_vars if bias_vars is not None else _param_vars(params.biases)
    z = None
    last = len(wxs) - 1
    for i in range(len(wxs)):
        pre = tape.add(tape.matmul(wxs[i], u), bs[i])
        if z is not None:
            pre = tape.add(pre, tape.matmul(wzs[i - 1], z))
        z = pre if i == last else tape.leaky_relu(pre, params.slope)
    return z


def icnn_forward(params: IcnnParams, x) -> float:
    u = tape.const(np.asarray(x, dtype=np.float64).reshape(-1, 1))
    return float(icnn_forward_var(params, u).value)


def icnn_grad(params: IcnnParams, x) -> np.ndarray:
    u = tape.leaf(np.asarray(x, dtype=np.float64).reshape(-1, 1))
    out = icnn_forward_var(params, u)
    (g,) = tape.grad(out, [u])
    return g.value.ravel()


def split_param_vars(p: AwcrParams, pvars):
    ns = len(p.smooth.weights)
    ni = len(p.icnn.wx)
    nz = len(p.icnn.wz)
    return (pvars[:ns], pvars[ns:2 * ns], pvars[2 * ns:2 * ns + ni],
            pvars[2 * ns + ni:2 * ns + ni + nz], pvars[2 * ns + ni + nz:])


def iwcnn_var(p: AwcrParams, x: Var, pvars=None) -> Var:
    if pvars is None:
        sw = sb = wx = wz = ib = None
    else:
        sw, sb, wx, wz, ib = split_param_vars(p, pvars)
    h = smooth_forward(p.smooth, x, weight_vars=sw, bias_vars=sb)
    if p.residual:
        h = tape.vstack(h, x)
    return icnn_forward_var(p.icnn, h, wx_vars=wx, wz_vars=wz, bias_vars=ib)


def iwcnn_forward(p: AwcrParams, x) -> float:
    u = tape.const(np.asarray(x, dtype=np.float64).reshape(-1, 1))
    return float(iwcnn_var(p, u).value)


def awcr_eval(p: AwcrParams, x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    return iwcnn_forward(p, x) + 0.5 * p.mu0 * float(np.dot(x, x))


def awcr_grad(p: AwcrParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    u = tape.leaf(x.reshape(-1, 1))
    out = iwcnn_var(p, u)
    (g,) = tape.grad(out, [u])
    return g.value.ravel() + p.mu0 * x


def awcr_batch_eval(p: AwcrParams, points) -> np.ndarray:
    """Values at each row of ``points`` (n, dim)."""
    pts = np.asarray(points, dtype=np.float64)
    u = tape.const(pts.T)
    vals = iwcnn_var(p, u).value.ravel()
    return vals + 0.5 * p.mu0 * np.sum(pts * pts, axis=1)


# ---------------------------------------------------------------------------
# modulus bookkeeping


def icnn_lipschitz_bound(params: IcnnParams) -> float:
    """Upper bound on the convex block's Lipschitz constant.

    Activation slope is at most 1, so layer recursion gives
    L_{i+1} <= |Wz_i| L_i + |Wx_i|; spectral norms throughout.
    """
    lip = 0.0
    for i in range(len(params.wx)):
        gain = float(np.linalg.norm(params.wx[i], 2))
        if i > 0:
            gain += float(np.linalg.norm(params.wz[i - 1], 2)) * lip
            lip = gain
        else:
            lip = gain
    return lip


def smooth_curvature_bound(params: SmoothNetParams) -> float:
    """Upper bound on the smooth block's gradient-Lipschitz constant.

    Composition recursion: for h = g2 o g1,
    beta(h) <= beta2 * Lip1^2 + Lip2 * beta1; affine layers have beta 0 and
    the activation uses scanned slope/curvature bounds.
    """
    lip, beta = 1.0, 0.0
    last = len(params.weights) - 1
    for i, w in enumerate(params.weights):
        wn = float(np.linalg.norm(w, 2))
        lip, beta = wn * lip, wn * beta
        if i < last:
            lip, beta = (SILU_SLOPE_BOUND * lip,
                         SILU_CURVATURE_BOUND * lip**2 + SILU_SLOPE_BOUND * beta)
    return beta


# ---------------------------------------------------------------------------
# parameter flattening and checkpoints


def param_arrays(p: AwcrParams):
    """Canonical parameter order: smooth (W, b)*, then convex wx*, wz*, b*."""
    return (list(p.smooth.weights) + list(p.smooth.biases)
            + list(p.icnn.wx) + list(p.icnn.wz) + list(p.icnn.biases))


def save_checkpoint(path, p: AwcrParams, extra: Optional[dict] = None):
    """Length-prefixed JSON header followed by the raw little-endian blob."""
    arrays = param_arrays(p)
    header = {
        "architecture": {
            "smooth_dims": [p.smooth.weights[0].shape[1]]
            + [w.shape[0] for w in p.smooth.weights],
            "icnn_in": p.icnn.wx[0].shape[1],
            "icnn_hidden": [w.shape[0] for w in p.icnn.wx[:-1]],
            "slope": p.icnn.slope,
            "residual": p.residual,
        },
        "mu0": p.mu0,
        "rho_hat": p.rho_hat,
        "shapes": [list(a.shape) for a in arrays],
        "meta": p.meta,
    }
    if extra:
        header["meta"] = {**header["meta"], **extra}
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        fh.write(blob)


def load_checkpoint(path) -> AwcrParams:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        blob = fh.read()
    arch = header["architecture"]
    rng = np.random.default_rng(0)
    smooth = SmoothNetParams.init(arch["smooth_dims"], rng)
    icnn = IcnnParams.init(arch["icnn_in"], arch["icnn_hidden"], rng)
    icnn.slope = arch["slope"]
    p = AwcrParams(smooth=smooth, icnn=icnn, mu0=header["mu0"],
                   residual=arch.get("residual", False),
                   meta=header.get("meta", {}))
    arrays = param_arrays(p)
    offset = 0
    for a, shape in zip(arrays, header["shapes"]):
        if list(a.shape) != shape:
            raise ConfigError(f"checkpoint shape mismatch: {a.shape} vs {shape}")
        count = int(np.prod(shape))
        a[...] = np.frombuffer(blob, dtype="<f8", count=count,
                               offset=offset).reshape(shape)
        offset += 8 * count
    return p
