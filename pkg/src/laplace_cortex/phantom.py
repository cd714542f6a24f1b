"""Synthetic ground truth: slabs and shells with closed-form potentials, and a
folded cortex whose sulcus can be bridged in the corrupted probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument
from .solver import LaplaceProblem, solve_reference
from .volume import (BG, GM, UNLABELED, WM, GridDims, LabelField3D, ScalarField3D,
                     SoftSegmentation, TISSUE_CHANNELS)

CONFUSION = 0.1


class PhantomKind(Enum):
    SLAB = "slab"
    SHELL = "shell"
    SULCUS = "sulcus"


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of one phantom; lengths are in voxels.

    Sulcus parameters: a GM sheet of ``gm_thickness`` drapes a WM block
    whose top surface undulates along y with ``amplitude`` and
    ``wavelength`` (random phase drawn from ``seed``).  A straight cleft of
    ``gap`` voxels cuts through the middle of x down to just above the WM.
    With ``bridge`` the cleft is painted GM in the corrupted probabilities.
    With ``hide_far_bank`` the training labels mark the cleft and everything
    beyond it as unlabeled.
    """

    kind: PhantomKind
    dims: GridDims
    thickness: int = 10
    a: float = 6.0
    b: float = 14.0
    gap: int = 1
    gm_thickness: int = 5
    wavelength: float | None = None
    amplitude: float = 1.5
    bridge: bool = True
    hide_far_bank: bool = True
    confusion: float = CONFUSION
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", PhantomKind(self.kind))
        if not 0 <= self.confusion < 1:
            raise InvalidArgument("confusion must lie in [0, 1)")
        d = self.dims
        if self.kind is PhantomKind.SLAB:
            if not 1 <= self.thickness <= d.nz - 2:
                raise InvalidArgument(f"slab thickness {self.thickness} does not fit nz={d.nz}")
        elif self.kind is PhantomKind.SHELL:
            if not 1 <= self.a < self.b:
                raise InvalidArgument("shell needs 1 <= a < b")
            if 2 * self.b + 2 > d.min_dim:
                raise InvalidArgument(f"shell radius {self.b} does not fit the grid")
        else:
            if self.gap < 0 or self.gm_thickness < 1:
                raise InvalidArgument("sulcus needs gap >= 0 and gm_thickness >= 1")
            if d.nx < 2 * (2 * self.gm_thickness + 2) + self.gap:
                raise InvalidArgument("grid too narrow for the sulcus banks")
            if d.nz < 3 * self.gm_thickness + 6 + 2 * self.amplitude:
                raise InvalidArgument("grid too shallow for the folded sheet")


@dataclass(frozen=True)
class Phantom:
    spec: PhantomSpec
    gt_labels: LabelField3D
    phi_gt: ScalarField3D
    corrupted_probs: SoftSegmentation
    train_labels: LabelField3D

    @property
    def dims(self) -> GridDims:
        return self.spec.dims


def analytic_shell_phi(r, a: float, b: float):
    """Potential between concentric spheres held at 0 (radius a) and 1 (radius b)."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < a) or np.any(r > b):
        raise InvalidArgument(f"radius outside [{a}, {b}]")
    out = (1.0 / a - 1.0 / r) / (1.0 / a - 1.0 / b)
    return float(out) if out.ndim == 0 else out


def shell_radius(dims: GridDims) -> np.ndarray:
    """Distance (voxels) of each voxel centre from the grid centre."""
    z, y, x = np.indices(dims.shape, dtype=np.float64)
    cz, cy, cx = ((n - 1) / 2.0 for n in dims.shape)
    return np.sqrt((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2)


def _slab_labels(spec):
    d = spec.dims
    z0 = (d.nz - spec.thickness) // 2
    z = np.arange(d.nz)[:, None, None]
    labels = np.where(z < z0, WM, np.where(z < z0 + spec.thickness, GM, BG))
    return np.broadcast_to(labels, d.shape).astype(np.uint8), None


def _shell_labels(spec):
    r = shell_radius(spec.dims)
    return np.where(r < spec.a, WM, np.where(r > spec.b, BG, GM)).astype(np.uint8), None


def cleft_columns(spec: PhantomSpec) -> tuple[int, int]:
    """First and one-past-last x index of the sulcal cleft."""
    start = spec.dims.nx // 2 - spec.gap // 2
    return start, start + spec.gap


def _sulcus_labels(spec):
    d = spec.dims
    rng = np.random.default_rng(spec.seed)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    wavelength = spec.wavelength or d.ny
    z, y, x = np.indices(d.shape)
    top = np.rint(0.75 * d.nz + spec.amplitude * np.sin(2 * math.pi * y / wavelength + phase))
    floor = spec.gm_thickness + 2
    x0, x1 = cleft_columns(spec)
    cleft = (x >= x0) & (x < x1) & (z >= floor) & (z < top)
    bg = (z >= top) | cleft
    dist = ndimage.distance_transform_edt(~bg)
    labels = np.where(bg, BG, np.where(dist <= spec.gm_thickness, GM, WM)).astype(np.uint8)
    return labels, cleft


def make_phantom(spec: PhantomSpec) -> Phantom:
    """Ground-truth labels and potential plus corrupted class probabilities.

    The potential comes from the 26-neighbour reference solver on the full
    labels.  Probabilities are ``(1 - confusion) * one_hot + confusion / C``.
    """
    builder = {PhantomKind.SLAB: _slab_labels, PhantomKind.SHELL: _shell_labels,
               PhantomKind.SULCUS: _sulcus_labels}[spec.kind]
    labels, cleft = builder(spec)
    gt = LabelField3D(spec.dims, labels)
    phi_gt = solve_reference(LaplaceProblem.from_labels(gt))

    C = len(TISSUE_CHANNELS)
    corrupted = labels.copy()
    train = labels.copy()
    if cleft is not None:
        if spec.bridge:
            corrupted[cleft] = GM
        if spec.hide_far_bank:
            train[:, :, cleft_columns(spec)[0]:] = UNLABELED
    onehot = np.stack([corrupted == code for code in TISSUE_CHANNELS]).astype(np.float64)
    probs = (1.0 - spec.confusion) * onehot + spec.confusion / C
    return Phantom(spec, gt, phi_gt, SoftSegmentation(spec.dims, probs),
                   LabelField3D(spec.dims, train))


def bg_path_through_cleft(labels, spec: PhantomSpec) -> bool:
    """True when the cleft holds BG voxels 6-connected to the BG above the sheet.

    A fused (bridged) sulcus has no such voxel below the sheet's lowest top.
    """
    arr = np.asarray(labels.labels if isinstance(labels, LabelField3D) else labels)
    bg = arr == BG
    comp, _ = ndimage.label(bg, structure=ndimage.generate_binary_structure(3, 1))
    top_ids = set(np.unique(comp[-1][bg[-1]]).tolist()) - {0}
    x0, x1 = cleft_columns(spec)
    floor = spec.gm_thickness + 2
    lowest_top = int(np.floor(0.75 * spec.dims.nz - spec.amplitude))
    deep = comp[floor:lowest_top, :, x0:x1]
    return bool(top_ids & set(np.unique(deep).tolist()))

