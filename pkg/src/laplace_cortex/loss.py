"""Dice + cross-entropy losses on tissue and laminar channels.

Channel ``k`` of a prediction scores label code ``k + 1``; code 0 is the
ignore label by default, and ignored voxels contribute nothing to any sum.
Every loss returns ``(value, gradient)`` with the gradient taken with respect
to the prediction array.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimsMismatch, EmptyDomain, InvalidArgument
from .labelize import BandSpec, soft_one_hot
from .volume import UNLABELED, LabelField3D, ScalarField3D

DICE_EPS = 1e-5
CE_CLIP = 1e-7


@dataclass(frozen=True)
class LossBreakdown:
    dice_tissue: float
    ce_tissue: float
    dice_laplace: float
    ce_laplace: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def _prepare(pred, gt, ignore_label):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt.labels if isinstance(gt, LabelField3D) else gt)
    if p.ndim != 4 or p.shape[1:] != g.shape:
        raise DimsMismatch(f"prediction {p.shape} does not match labels {g.shape}")
    valid = g != ignore_label
    if not valid.any():
        raise EmptyDomain("every voxel carries the ignore label")
    top = int(g[valid].max())
    if top > p.shape[0]:
        raise InvalidArgument(f"label {top} needs {top} channels, prediction has {p.shape[0]}")
    return p, g.astype(np.intp), valid


def soft_dice(pred, gt, ignore_label: int = UNLABELED, eps: float = DICE_EPS):
    """``1 - mean_c (2*sum(p_c g_c) + eps) / (sum p_c + sum g_c + eps)``.

    Sums run over non-ignored voxels.  The mean runs over the channels whose
    class occurs among the non-ignored targets: a class absent from the
    targets would otherwise score ~0 for any stray mass (eps / (sum p + eps))
    and dominate the loss.
    """
    p, g, valid = _prepare(pred, gt, ignore_label)
    C = p.shape[0]
    present = set(np.unique(g[valid]).tolist())
    classes = [c for c in range(C) if c + 1 != ignore_label and c + 1 in present]
    if not classes:
        raise EmptyDomain("no non-ignored voxel carries a class with a prediction channel")
    grad = np.zeros_like(p)
    total = 0.0
    for c in classes:
        gc = (g == c + 1) & valid
        pc = np.where(valid, p[c], 0.0)
        num = 2.0 * pc[gc].sum() + eps
        den = pc.sum() + gc.sum() + eps
        total += num / den
        grad[c] = np.where(valid, -(2.0 * gc / den - num / den**2), 0.0)
    n = len(classes)
    return float(1.0 - total / n), grad / n


def cross_entropy(pred, gt, ignore_label: int = UNLABELED, clip: float = CE_CLIP):
    """Mean of ``-log p[gt]`` over non-ignored voxels, with ``p`` clipped to [clip, 1-clip]."""
    p, g, valid = _prepare(pred, gt, ignore_label)
    n = int(valid.sum())
    idx = np.where(valid, g - 1, 0)
    picked = np.take_along_axis(p, idx[None], axis=0)[0]
    clipped = np.clip(picked, clip, 1.0 - clip)
    loss = float(-np.log(clipped)[valid].sum() / n)
    inside = valid & (picked == clipped)
    dpick = np.where(inside, -1.0 / np.where(inside, picked, 1.0), 0.0) / n
    grad = np.zeros_like(p)
    np.put_along_axis(grad, idx[None], dpick[None], axis=0)
    return loss, grad


def dice_ce(pred, gt, ignore_label: int = UNLABELED):
    d, gd = soft_dice(pred, gt, ignore_label)
    c, gc = cross_entropy(pred, gt, ignore_label)
    return d, c, gd + gc


def laplacian_targets(phi_gt, tissue_gt: LabelField3D, spec: BandSpec = BandSpec(),
                      ignore_label: int = UNLABELED) -> LabelField3D:
    """Hard laminar targets: argmax band of ``phi_gt`` as code ``band + 1``.

    Voxels ignored in the tissue labels stay ignored.
    """
    values = phi_gt.values if isinstance(phi_gt, ScalarField3D) else phi_gt
    band = np.argmax(soft_one_hot(values, spec), axis=0) + 1
    codes = np.where(tissue_gt.labels != ignore_label, band, ignore_label)
    return LabelField3D(tissue_gt.dims, codes)


def combined_loss(S_pred, S_gt, phi_channels_pred=None, S_phi_gt=None, *,
                  ignore_label: int = UNLABELED, laplace_weight: float = 1.0):
    """Tissue DCE plus ``laplace_weight`` times laminar DCE.

    Returns ``(LossBreakdown, grad_probs, grad_channels)``; with no laminar
    channels given (or a zero weight) only the tissue term is evaluated and
    ``grad_channels`` is None.
    """
    probs = S_pred.probs if hasattr(S_pred, "probs") else S_pred
    d_t, c_t, g_probs = dice_ce(probs, S_gt, ignore_label)
    if phi_channels_pred is None or laplace_weight == 0:
        return LossBreakdown(d_t, c_t, 0.0, 0.0, d_t + c_t), g_probs, None
    if S_phi_gt is None:
        raise InvalidArgument("laminar channels given without laminar targets")
    if laplace_weight < 0:
        raise InvalidArgument("laplace_weight must be nonnegative")
    d_l, c_l, g_ch = dice_ce(phi_channels_pred, S_phi_gt, ignore_label)
    total = d_t + c_t + laplace_weight * (d_l + c_l)
    return LossBreakdown(d_t, c_t, d_l, c_l, total), g_probs, laplace_weight * g_ch
