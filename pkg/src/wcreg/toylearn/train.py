"""Adversarial training of the weakly convex regulariser.

The critic loss is mean R on clean samples minus mean R on artefact
samples plus a gradient penalty sampled on random convex combinations of
paired samples; the penalty's parameter gradient goes through the input
gradient (double backprop on the tape).  Optimisation is root-mean-square
propagation with the propagation weights clipped at zero after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError, ShapeError, TrainingDiverged
from . import tape
from .nets import AwcrParams, iwcnn_var, param_arrays

__all__ = [
    "TrainSchedule",
    "adversarial_loss",
    "train_awcr",
    "train_regression",
    "RmsProp",
]


@dataclass
class TrainSchedule:
    epochs_phase1: int = 200
    epochs_phase2: int = 50
    lambda_phase1: float = 0.1
    lambda_phase2: float = 10.0
    learning_rate: float = 5e-5
    fine_tune_rate: Optional[float] = None  # defaults to learning_rate
    batch_size: int = 64
    seed: int = 0


class RmsProp:
    """decay 0.99, epsilon 1e-8."""

    def __init__(self, arrays, rate: float, decay: float = 0.99,
                 epsilon: float = 1e-8):
        self.arrays = arrays
        self.rate = rate
        self.decay = decay
        self.epsilon = epsilon
        self.cache = [np.zeros_like(a) for a in arrays]

    def step(self, grads):
        for a, c, g in zip(self.arrays, self.cache, grads):
            c *= self.decay
            c += (1.0 - self.decay) * g * g
            a -= self.rate * g / (np.sqrt(c) + self.epsilon)


def _forward_batch(p: AwcrParams, x: tape.Var, param_vars):
    return iwcnn_var(p, x, pvars=param_vars)


def _mix_batches(real, noisy, rng, p: AwcrParams, max_redraws: int = 5):
    """Convex combinations of randomly paired samples, avoiding exact kink
    hits of the rectifier (a probability-zero event, still guarded)."""
    perm = rng.permutation(noisy.shape[0])
    for _ in range(max_redraws):
        t = rng.uniform(0.0, 1.0, size=(real.shape[0], 1))
        mix = t * real + (1.0 - t) * noisy[perm]
        if not _hits_kink(p, mix):
            return mix
    return mix


def _hits_kink(p: AwcrParams, points) -> bool:
    # value-only forward, checking convex-block preactivations for exact zeros
    h = points.T
    last = len(p.smooth.weights) - 1
    for i, (w, b) in enumerate(zip(p.smooth.weights, p.smooth.biases)):
        h = w @ h + b
        if i < last:
            h = h * (1.0 / (1.0 + np.exp(-h)))
    if p.residual:
        h = np.vstack([h, points.T])
    z = None
    for i in range(len(p.icnn.wx)):
        pre = p.icnn.wx[i] @ h + p.icnn.biases[i]
        if z is not None:
            pre = pre + p.icnn.wz[i - 1] @ z
        if i < len(p.icnn.wx) - 1:
            if np.any(pre == 0.0):
                return True
            z = np.where(pre > 0.0, pre, p.icnn.slope * pre)
        else:
            z = pre
    return False


def adversarial_loss(p: AwcrParams, batch_real, batch_noisy, lambda_gp: float,
                     seed: int = 0, mix=None):
    """Critic loss and parameter gradients (canonical order).

    Returns (loss, grads, parts) with parts = (mean_real, mean_noisy,
    penalty).  The penalty is sampled at convex combinations of paired
    samples; its gradient flows through the input-gradient norm.
    """
    real = np.asarray(batch_real, dtype=np.float64)
    noisy = np.asarray(batch_noisy, dtype=np.float64)
    if real.ndim != 2 or noisy.ndim != 2 or real.shape[1] != noisy.shape[1]:
        raise ShapeError(f"batch shapes {real.shape} vs {noisy.shape}")
    if real.shape[0] == 0 or noisy.shape[0] == 0:
        raise ShapeError("batches must be nonempty")
    rng = np.random.default_rng(seed)

    arrays = param_arrays(p)
    pvars = [tape.leaf(a) for a in arrays]

    def mean_output(points):
        x = tape.const(points.T)
        out = _forward_batch(p, x, pvars)  # (1, B)
        quad = 0.5 * p.mu0 * np.sum(points * points, axis=1)[None, :]
        total = tape.add(out, tape.const(quad))
        return tape.scale(tape.bsum(total), 1.0 / points.shape[0])

    loss_real = mean_output(real)
    loss_noisy = mean_output(noisy)
    loss = tape.sub(loss_real, loss_noisy)

    penalty_value = 0.0
    if lambda_gp != 0.0:
        if mix is None:
            n = min(real.shape[0], noisy.shape[0])
            mix = _mix_batches(real[:n], noisy[:n], rng, p)
        x_mix = tape.leaf(mix.T)
        out_mix = _forward_batch(p, x_mix, pvars)
        quad_mix = tape.scale(tape.colsum(tape.mul(x_mix, x_mix)), 0.5 * p.mu0)
        s = tape.bsum(tape.add(out_mix, quad_mix))
        (gx,) = tape.grad(s, [x_mix])  # per-sample input gradients, columns
        norms = tape.sqrt(tape.colsum(tape.mul(gx, gx)))
        hinge = tape.relu(tape.sub(norms, tape.const(np.ones((1, 1)))))
        penalty = tape.scale(tape.bsum(tape.mul(hinge, hinge)),
                             1.0 / mix.shape[0])
        penalty_value = float(penalty.value)
        loss = tape.add(loss, tape.scale(penalty, lambda_gp))

    grads = tape.grad(loss, pvars)
    grad_arrays = [g.value.reshape(a.shape) for g, a in zip(grads, arrays)]
    parts = (float(loss_real.value), float(loss_noisy.value), penalty_value)
    return float(loss.value), grad_arrays, parts


def train_awcr(dataset_real, dataset_noisy, p: AwcrParams,
               schedule: TrainSchedule):
    """Two-phase schedule: small penalty weight first, large to fine-tune.

    Returns the trained parameters and a per-epoch log of the loss parts.
    Raises TrainingDiverged (with the last finite checkpoint attached) on a
    non-finite loss.
    """
    real = np.asarray(dataset_real, dtype=np.float64)
    noisy = np.asarray(dataset_noisy, dtype=np.float64)
    if real.size == 0 or noisy.size == 0:
        raise ConfigError("datasets must be nonempty")
    rng = np.random.default_rng(schedule.seed)
    arrays = param_arrays(p)
    log = []

    phases = [
        (schedule.epochs_phase1, schedule.lambda_phase1, schedule.learning_rate),
        (schedule.epochs_phase2, schedule.lambda_phase2,
         schedule.fine_tune_rate or schedule.learning_rate),
    ]
    n = min(real.shape[0], noisy.shape[0])
    batch = min(schedule.batch_size, n)
    epoch_counter = 0
    for epochs, lam, rate in phases:
        opt = RmsProp(arrays, rate)
        for _ in range(epochs):
            order_r = rng.permutation(real.shape[0])
            order_n = rng.permutation(noisy.shape[0])
            sums = np.zeros(3)
            steps = 0
            for start in range(0, n - batch + 1, batch):
                br = real[order_r[start:start + batch]]
                bn = noisy[order_n[start:start + batch]]
                loss, grads, parts = adversarial_loss(
                    p, br, bn, lam, seed=int(rng.integers(2**31)))
                if not math.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch_counter}",
                        checkpoint=p)
                opt.step(grads)
                p.icnn.project()
                sums += parts
                steps += 1
            epoch_counter += 1
            log.append({
                "epoch": epoch_counter,
                "loss_real": sums[0] / max(steps, 1),
                "loss_noisy": sums[1] / max(steps, 1),
                "penalty": sums[2] / max(steps, 1),
                "lambda": lam,
            })
    return p, log


def train_regression(forward: Callable, arrays, project: Callable,
                     inputs, targets, epochs: int, rate: float, seed: int = 0,
                     final_rate: Optional[float] = None):
    """Least-squares fit of a scalar network to target samples.

    ``forward(pvars)`` must return the (1, n) prediction Var for the fixed
    input batch; ``project()`` restores structural constraints in place.
    The learning rate decays geometrically from ``rate`` to ``final_rate``
    (default rate/100) across the budget.
    """
    targets = np.asarray(targets, dtype=np.float64).reshape(1, -1)
    final_rate = final_rate if final_rate is not None else rate / 100.0
    decay = (final_rate / rate) ** (1.0 / max(epochs - 1, 1)) if epochs > 1 else 1.0
    opt = RmsProp(arrays, rate)
    losses = np.empty(epochs)
    for e in range(epochs):
        opt.rate = rate * decay**e
        pvars = [tape.leaf(a) for a in arrays]
        pred = forward(pvars)
        err = tape.sub(pred, tape.const(targets))
        loss = tape.scale(tape.bsum(tape.mul(err, err)), 1.0 / targets.size)
        grads = tape.grad(loss, pvars)
        opt.step([g.value.reshape(a.shape) for g, a in zip(grads, arrays)])
        project()
        losses[e] = float(loss.value)
        if not math.isfinite(losses[e]):
            raise TrainingDiverged(f"regression diverged at epoch {e}")
    return losses
