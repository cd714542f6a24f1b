"""Gradient descent on per-voxel class logits: a stand-in for network training.

The free parameters are logits ``z`` with ``P = softmax(z)``.  The loss is the
tissue Dice+CE on ``P`` plus, when ``laplace_weight > 0``, the laminar
Dice+CE on the band channels of the soft-solver potential of ``P``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import SoftLaplaceConfig, soft_solve_backward, soft_solve_forward
from .errors import DimsMismatch, InvalidArgument, NonFiniteLoss
from .labelize import BandSpec, soft_one_hot, soft_one_hot_backward
from .loss import LossBreakdown, combined_loss
from .volume import LabelField3D, SoftSegmentation

log = logging.getLogger(__name__)

LOGIT_FLOOR = 1e-6
TRACE_COLUMNS = ("step", "dice_tissue", "ce_tissue", "dice_laplace", "ce_laplace", "total")


@dataclass(frozen=True)
class OptimizeConfig:
    steps: int = 200
    learning_rate: float = 20000.0
    laplace_weight: float = 1.0
    solver: SoftLaplaceConfig = field(default_factory=SoftLaplaceConfig)
    bands: BandSpec = field(default_factory=BandSpec)
    seed: int = 0

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidArgument(f"steps must be a positive integer, got {self.steps!r}")
        if not self.learning_rate > 0:
            raise InvalidArgument(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not self.laplace_weight >= 0:
            raise InvalidArgument("laplace_weight must be nonnegative")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    return probs * (grad_probs - (probs * grad_probs).sum(axis=0, keepdims=True))


def loss_and_grad(probs: np.ndarray, S_gt: LabelField3D, S_phi_gt: LabelField3D | None,
                  config: OptimizeConfig) -> tuple[LossBreakdown, np.ndarray]:
    """Combined loss at ``probs`` and its gradient with respect to ``probs``."""
    if config.laplace_weight == 0:
        breakdown, grad, _ = combined_loss(probs, S_gt, laplace_weight=0.0)
        return breakdown, grad
    phi, tape = soft_solve_forward(probs, config.solver)
    channels = soft_one_hot(phi.values, config.bands)
    breakdown, grad, grad_ch = combined_loss(probs, S_gt, channels, S_phi_gt,
                                             laplace_weight=config.laplace_weight)
    grad_phi = soft_one_hot_backward(phi.values, config.bands, grad_ch)
    return breakdown, grad + soft_solve_backward(tape, grad_phi)


def logits_loss_and_grad(logits, S_gt, S_phi_gt, config):
    probs = softmax(logits)
    breakdown, grad = loss_and_grad(probs, S_gt, S_phi_gt, config)
    return breakdown, softmax_backward(probs, grad)


def run_descent(init_probs: SoftSegmentation, S_gt: LabelField3D, S_phi_gt: LabelField3D | None,
                config: OptimizeConfig = OptimizeConfig()
                ) -> tuple[SoftSegmentation, list[LossBreakdown]]:
    """Plain gradient descent from ``log(init_probs + 1e-6)``.

    The trace holds the loss evaluated at the start of every step.
    """
    dims = init_probs.dims
    if not dims.same_grid(S_gt.dims) or (S_phi_gt is not None and not dims.same_grid(S_phi_gt.dims)):
        raise DimsMismatch("probabilities and targets are on different grids")
    if config.laplace_weight > 0 and S_phi_gt is None:
        raise InvalidArgument("laminar targets are required when laplace_weight > 0")
    logits = np.log(np.asarray(init_probs.probs, dtype=np.float64) + LOGIT_FLOOR)
    trace = []
    for step in range(config.steps):
        if not np.all(np.isfinite(logits)):
            raise NonFiniteLoss(step)
        breakdown, grad = logits_loss_and_grad(logits, S_gt, S_phi_gt, config)
        if not np.isfinite(breakdown.total) or not np.all(np.isfinite(grad)):
            raise NonFiniteLoss(step)
        trace.append(breakdown)
        logits -= config.learning_rate * grad
        log.debug("step %d total %.6f", step, breakdown.total)
    return SoftSegmentation(dims, softmax(logits)), trace


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for step, b in enumerate(trace):
            writer.writerow([step, repr(b.dice_tissue), repr(b.ce_tissue), repr(b.dice_laplace),
                             repr(b.ce_laplace), repr(b.total)])
