"""Toy-scale learned weakly convex regularisation."""

from .fixtures import (default_awcr, distance_alignment, icnn_batch_eval,
                       matched_icnn, spiral_fixture, train_spiral_awcr,
                       train_spiral_icnn, universal_demo)
from .nets import (AwcrParams, IcnnParams, MU0_DEFAULT, SmoothNetParams,
                   awcr_batch_eval, awcr_eval, awcr_grad, icnn_forward,
                   icnn_grad, icnn_lipschitz_bound, iwcnn_forward,
                   load_checkpoint, save_checkpoint, smooth_curvature_bound)
from .train import RmsProp, TrainSchedule, adversarial_loss, train_awcr

__all__ = [
    "AwcrParams",
    "IcnnParams",
    "MU0_DEFAULT",
    "RmsProp",
    "SmoothNetParams",
    "TrainSchedule",
    "adversarial_loss",
    "awcr_batch_eval",
    "awcr_eval",
    "awcr_grad",
    "default_awcr",
    "distance_alignment",
    "icnn_batch_eval",
    "icnn_forward",
    "icnn_grad",
    "icnn_lipschitz_bound",
    "iwcnn_forward",
    "load_checkpoint",
    "matched_icnn",
    "save_checkpoint",
    "smooth_curvature_bound",
    "spiral_fixture",
    "train_awcr",
    "train_spiral_awcr",
    "train_spiral_icnn",
    "universal_demo",
]
