"""Evaluation measures: overlap, surface distance, laminar agreement,
inscribed-sphere thickness and rater agreement statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (DegenerateInput, DimsMismatch, EmptyMask, InvalidArgument,
                     InvalidSegmentation, LandmarkOutsideMask)
from .labelize import laminar_bins
from .solver import EVAL_ITERS, LaplaceProblem, SolverConfig, solve_sor
from .volume import BG, GM, SRLM, WM, LabelField3D

EVAL_LAYERS = 5
DEFAULT_SEARCH_RADIUS_MM = 2.0


@dataclass
class MetricReport:
    dsc: dict = field(default_factory=dict)
    hd95_mm: float | None = None
    laplacian_dsc: dict | None = None

    def as_dict(self) -> dict:
        out = {f"dsc_{k}": v for k, v in self.dsc.items()}
        if self.hd95_mm is not None:
            out["hd95_mm"] = self.hd95_mm
        if self.laplacian_dsc is not None:
            out.update({f"laplacian_dsc_layer{k}": v for k, v in self.laplacian_dsc.items()})
        return out


def _labels(x) -> np.ndarray:
    return np.asarray(x.labels if isinstance(x, LabelField3D) else x)


def dsc(a, b, label: int) -> float:
    """Dice overlap of the voxels carrying ``label``; 1.0 when both are empty."""
    la, lb = _labels(a), _labels(b)
    if la.shape != lb.shape:
        raise DimsMismatch(f"label fields differ in shape: {la.shape} vs {lb.shape}")
    ma, mb = la == label, lb == label
    total = int(ma.sum()) + int(mb.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((ma & mb).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with a face neighbour outside the mask or off the grid."""
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(3, 1),
                                      border_value=0)
    return mask & ~interior


def _sampling(spacing):
    sx, sy, sz = spacing
    return (sz, sy, sx)


def surface_distances(a, b, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Distances (mm) from each boundary voxel of ``a`` to the nearest one of ``b``."""
    ba, bb = boundary(a), boundary(b)
    dist_to_b = ndimage.distance_transform_edt(~bb, sampling=_sampling(spacing))
    return dist_to_b[ba]


def hd95(a, b, spacing=(1.0, 1.0, 1.0)) -> float:
    """95th percentile of the pooled boundary-to-boundary distances, both ways."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimsMismatch("masks differ in shape")
    if not a.any() or not b.any():
        raise EmptyMask("hd95 needs two nonempty masks")
    pooled = np.concatenate([surface_distances(a, b, spacing), surface_distances(b, a, spacing)])
    return float(np.percentile(pooled, 95))


def laminar_field(seg: LabelField3D, iters: int = EVAL_ITERS, omega="auto", threads: int = 1):
    """Re-solve the potential of a tissue segmentation with the network's SOR scheme."""
    labels = _labels(seg)
    for code, name in ((GM, "GM"), (WM, "WM"), (BG, "BG")):
        if not (labels == code).any():
            raise InvalidSegmentation(f"segmentation has no {name} voxels")
    problem = LaplaceProblem.from_labels(seg)
    phi, _ = solve_sor(problem, config=SolverConfig(omega=omega, max_iters=iters,
                                                    tolerance=0.0, threads=threads))
    return phi, problem.domain


def laminar_segmentation(seg: LabelField3D, n_layers: int = EVAL_LAYERS, iters: int = EVAL_ITERS,
                         threads: int = 1) -> LabelField3D:
    phi, domain = laminar_field(seg, iters, threads=threads)
    return laminar_bins(phi, domain, n_layers)


def laplace_eval(seg_pred: LabelField3D, seg_gt: LabelField3D, n_layers: int = EVAL_LAYERS,
                 iters: int = EVAL_ITERS, threads: int = 1) -> dict[int, float]:
    """Per-layer DSC of the laminar segmentations of two tissue segmentations.

    Keys run from the pial side: key 1 is the layer nearest the pial
    surface (phi near 1), key ``n_layers`` the layer on the WM surface.
    """
    if not seg_pred.dims.same_grid(seg_gt.dims):
        raise DimsMismatch("segmentations are on different grids")
    lam_pred = laminar_segmentation(seg_pred, n_layers, iters, threads).labels
    lam_gt = laminar_segmentation(seg_gt, n_layers, iters, threads).labels
    return {n_layers + 1 - k: dsc(lam_pred, lam_gt, k) for k in range(n_layers, 0, -1)}


def inscribed_radius_map(gm_mask, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Radius (mm) of the largest ball centred at each GM voxel that stays in GM.

    Exact Euclidean distance to the nearest non-GM voxel centre, less half a
    voxel so the ball ends on the voxel face rather than the outside centre.
    Zero outside the mask.
    """
    gm = np.asarray(gm_mask, dtype=bool)
    if gm.all():
        raise InvalidArgument("GM mask has no outside voxels to measure against")
    edt = ndimage.distance_transform_edt(gm, sampling=_sampling(spacing))
    return np.where(gm, edt - 0.5 * min(spacing), 0.0)


def thickness_at(gm_mask, landmark, search_radius_mm: float = DEFAULT_SEARCH_RADIUS_MM,
                 spacing=(1.0, 1.0, 1.0)) -> float:
    """Diameter (mm) of the largest inscribed ball that contains ``landmark``.

    Candidate centres lie within ``search_radius_mm`` of the landmark, given
    as an ``(x, y, z)`` voxel coordinate.
    """
    gm = np.asarray(gm_mask, dtype=bool)
    radius = inscribed_radius_map(gm, spacing)
    x, y, z = landmark
    sx, sy, sz = spacing
    nz, ny, nx = gm.shape
    rx, ry, rz = (int(np.ceil(search_radius_mm / s)) for s in spacing)
    zs = slice(max(z - rz, 0), min(z + rz + 1, nz))
    ys = slice(max(y - ry, 0), min(y + ry + 1, ny))
    xs = slice(max(x - rx, 0), min(x + rx + 1, nx))
    zz, yy, xx = np.mgrid[zs, ys, xs]
    dist = np.sqrt(((xx - x) * sx) ** 2 + ((yy - y) * sy) ** 2 + ((zz - z) * sz) ** 2)
    r = radius[zs, ys, xs]
    ok = gm[zs, ys, xs] & (dist <= search_radius_mm) & (dist <= r)
    if not ok.any():
        raise LandmarkOutsideMask(f"no inscribed ball within {search_radius_mm} mm contains {landmark}")
    return float(2.0 * r[ok].max())


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimsMismatch("pearson_r needs two equal-length vectors")
    if len(x) < 3:
        raise InvalidArgument("pearson_r needs at least 3 observations")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("zero variance")
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def icc_fixed_raters(ratings) -> float:
    """ICC(3,k): two-way mixed, consistency, average of k fixed raters.

    ``(BMS - EMS) / BMS`` with BMS the between-subjects mean square and EMS
    the residual mean square of the two-way ANOVA.
    """
    r = np.asarray(ratings, dtype=np.float64)
    if r.ndim != 2:
        raise DimsMismatch("ratings must be an (n_subjects, k_raters) matrix")
    n, k = r.shape
    if n < 3 or k < 2:
        raise InvalidArgument("ICC needs at least 3 subjects and 2 raters")
    grand = r.mean()
    ss_total = float(((r - grand) ** 2).sum())
    ss_rows = k * float(((r.mean(axis=1) - grand) ** 2).sum())
    ss_cols = n * float(((r.mean(axis=0) - grand) ** 2).sum())
    bms = ss_rows / (n - 1)
    ems = (ss_total - ss_rows - ss_cols) / ((n - 1) * (k - 1))
    if bms == 0:
        raise DegenerateInput("no between-subject variance")
    return (bms - ems) / bms


def evaluate(pred: LabelField3D, gt: LabelField3D, labels=(GM, WM, BG, SRLM),
             hd_label: int = GM, laplacian: bool = False, threads: int = 1) -> MetricReport:
    report = MetricReport()
    for code in labels:
        report.dsc[code] = dsc(pred, gt, code)
    a, b = pred.labels == hd_label, gt.labels == hd_label
    if a.any() and b.any():
        report.hd95_mm = hd95(a, b, gt.dims.spacing)
    if laplacian:
        report.laplacian_dsc = laplace_eval(pred, gt, threads=threads)
    return report
