"""Minimal reverse-mode tape on 2-D float64 arrays.

Values follow a (features, batch) matrix convention; scalars are (1, 1).
Backward rules construct graph nodes themselves, so differentiating a
gradient (double backprop, needed for the input-gradient penalty) is just
a second call to ``grad``.  Piecewise-linear activations take zero second
derivative away from their kinks; smooth activations reference their own
output node in the backward rule so curvature flows exactly.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Var",
    "const",
    "leaf",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "leaky_relu",
    "relu",
    "sigmoid",
    "silu",
    "reciprocal",
    "sqrt",
    "bsum",
    "colsum",
    "rows",
    "vstack",
    "grad",
]


class Var:
    __slots__ = ("value", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.atleast_2d(np.asarray(value, dtype=np.float64))
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def const(value) -> Var:
    return Var(value)


def leaf(value) -> Var:
    return Var(value)


def add(a: Var, b: Var) -> Var:
    # supports (m,B)+(m,B), and bias broadcast (m,B)+(m,1)
    out = Var(a.value + b.value, (a, b))
    bias_b = b.shape[1] == 1 and a.shape[1] != 1
    bias_a = a.shape[1] == 1 and b.shape[1] != 1

    def vjp(g):
        ga = _rowsum(g) if bias_a else g
        gb = _rowsum(g) if bias_b else g
        return [(a, ga), (b, gb)]

    out.vjp = vjp
    return out


def sub(a: Var, b: Var) -> Var:
    return add(a, scale(b, -1.0))


def scale(a: Var, c: float) -> Var:
    out = Var(a.value * c, (a,))
    out.vjp = lambda g: [(a, scale(g, c))]
    return out


def mul(a: Var, b: Var) -> Var:
    if a.shape != b.shape:
        raise ValueError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = Var(a.value * b.value, (a, b))
    out.vjp = lambda g: [(a, mul(g, b)), (b, mul(g, a))]
    return out


def matmul(a: Var, b: Var) -> Var:
    out = Var(a.value @ b.value, (a, b))
    out.vjp = lambda g: [
        (a, matmul(g, transpose(b))),
        (b, matmul(transpose(a), g)),
    ]
    return out


def transpose(a: Var) -> Var:
    out = Var(a.value.T, (a,))
    out.vjp = lambda g: [(a, transpose(g))]
    return out


def leaky_relu(a: Var, slope: float) -> Var:
    mask = np.where(a.value > 0.0, 1.0, slope)
    out = Var(a.value * mask, (a,))
    out.vjp = lambda g: [(a, mul(g, const(mask)))]
    return out


def relu(a: Var) -> Var:
    return leaky_relu(a, 0.0)


def sigmoid(a: Var) -> Var:
    out = Var(1.0 / (1.0 + np.exp(-a.value)), (a,))
    # derivative s(1-s) written in graph ops so curvature backpropagates
    out.vjp = lambda g: [(a, mul(g, mul(out, sub(const(np.ones_like(out.value)), out))))]
    return out


def silu(a: Var) -> Var:
    return mul(a, sigmoid(a))


def reciprocal(a: Var) -> Var:
    out = Var(1.0 / a.value, (a,))
    out.vjp = lambda g: [(a, scale(mul(g, mul(out, out)), -1.0))]
    return out


def sqrt(a: Var) -> Var:
    out = Var(np.sqrt(a.value), (a,))
    out.vjp = lambda g: [(a, mul(scale(g, 0.5), reciprocal(out)))]
    return out


def bsum(a: Var) -> Var:
    """Full sum to a (1,1) scalar."""
    out = Var(np.sum(a.value), (a,))
    shape = a.shape

    def vjp(g):
        tiled = Var(np.broadcast_to(g.value, shape).copy(), (g,))
        tiled.vjp = lambda gg: [(g, bsum(gg))]
        return [(a, tiled)]

    out.vjp = vjp
    return out


def colsum(a: Var) -> Var:
    """Sum over rows: (m, B) -> (1, B)."""
    out = Var(np.sum(a.value, axis=0, keepdims=True), (a,))
    m = a.shape[0]

    def vjp(g):
        tiled = Var(np.broadcast_to(g.value, (m, g.shape[1])).copy(), (g,))
        tiled.vjp = lambda gg: [(g, colsum(gg))]
        return [(a, tiled)]

    out.vjp = vjp
    return out


def rows(a: Var, start: int, stop: int) -> Var:
    """Row slice; the backward pass zero-pads back into place."""
    out = Var(a.value[start:stop].copy(), (a,))
    m = a.shape[0]

    def vjp(g):
        padded = np.zeros((m, g.shape[1]))
        padded[start:stop] = g.value
        node = Var(padded, (g,))
        node.vjp = lambda gg: [(g, rows(gg, start, stop))]
        return [(a, node)]

    out.vjp = vjp
    return out


def vstack(a: Var, b: Var) -> Var:
    """Stack rows: (m1, B) and (m2, B) -> (m1+m2, B)."""
    out = Var(np.vstack([a.value, b.value]), (a, b))
    m1 = a.shape[0]
    m2 = b.shape[0]
    out.vjp = lambda g: [(a, rows(g, 0, m1)), (b, rows(g, m1, m1 + m2))]
    return out


def _rowsum(a: Var) -> Var:
    """Sum over columns: (m, B) -> (m, 1); adjoint of bias broadcast."""
    out = Var(np.sum(a.value, axis=1, keepdims=True), (a,))
    n = a.shape[1]

    def vjp(g):
        tiled = Var(np.broadcast_to(g.value, (g.shape[0], n)).copy(), (g,))
        tiled.vjp = lambda gg: [(g, _rowsum(gg))]
        return [(a, tiled)]

    out.vjp = vjp
    return out


def _topo_order(output: Var):
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def grad(output: Var, wrt, seed: Var = None):
    """Gradients of a scalar output; results are graph nodes themselves."""
    if seed is None:
        if output.value.size != 1:
            raise ValueError("grad needs a scalar output or an explicit seed")
        seed = const(np.ones_like(output.value))
    grads = {id(output): seed}
    holders = {id(output): output}
    for node in reversed(_topo_order(output)):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in node.vjp(g):
            if id(parent) in grads:
                grads[id(parent)] = add(grads[id(parent)], pg)
            else:
                grads[id(parent)] = pg
            holders[id(parent)] = parent
    out = []
    for w in wrt:
        got = grads.get(id(w))
        out.append(got if got is not None else const(np.zeros_like(w.value)))
    return out
