"""Finite-difference checks of the hand-written adjoints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import SoftLaplaceConfig, soft_solve_backward, soft_solve_forward
from .labelize import BandSpec
from .optimize import OptimizeConfig, logits_loss_and_grad
from .volume import GridDims, LabelField3D

SMALL_GRAD = 1e-6


@dataclass(frozen=True)
class GradcheckResult:
    max_rel_error: float
    max_abs_error_small: float
    n_checked: int

    def passed(self, rel_tol: float, abs_tol: float = 1e-7) -> bool:
        return self.max_rel_error < rel_tol and self.max_abs_error_small < abs_tol


def central_differences(f, x: np.ndarray, h: float, richardson: bool = False) -> np.ndarray:
    """Central differences of scalar ``f`` at every entry of ``x``.

    With ``richardson`` the steps ``h`` and ``h/2`` are combined as
    ``(4*D(h/2) - D(h)) / 3``, cancelling the O(h^2) truncation term.
    """
    if richardson:
        return (4.0 * central_differences(f, x, h / 2) - central_differences(f, x, h)) / 3.0
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        out[idx] = (fp - fm) / (2.0 * h)
    return out


def compare(analytic: np.ndarray, numeric: np.ndarray) -> GradcheckResult:
    big = np.abs(analytic) > SMALL_GRAD
    rel = np.abs(analytic - numeric)[big] / np.abs(analytic[big])
    small = np.abs(analytic - numeric)[~big]
    return GradcheckResult(float(rel.max()) if rel.size else 0.0,
                           float(small.max()) if small.size else 0.0, int(analytic.size))


def random_probs(rng, dims: GridDims, channels: int = 4) -> np.ndarray:
    return rng.dirichlet(np.ones(channels), size=dims.shape).transpose(3, 0, 1, 2)


def check_solver_gradient(dims: GridDims, iters: int = 3, seed: int = 0, h: float = 1e-3,
                          clamp: bool = True, threads: int = 1,
                          richardson: bool = True) -> GradcheckResult:
    """Adjoint of the soft solver against central differences of ``<g, phi>``.

    ``phi`` is a polynomial of degree ``2*iters + 1`` in the probabilities,
    so plain differences at ``h = 1e-3`` carry an O(h^2) error that can
    reach 1e-4 relative on small entries; Richardson extrapolation removes it.
    """
    rng = np.random.default_rng(seed)
    probs = random_probs(rng, dims)
    g = rng.standard_normal(dims.shape)
    config = SoftLaplaceConfig(iters=iters, clamp_each_iter=clamp, threads=threads)
    _, tape = soft_solve_forward(probs, config)
    analytic = soft_solve_backward(tape, g)

    def f(p):
        return float(np.sum(g * soft_solve_forward(p, config)[0].values))

    return compare(analytic, central_differences(f, probs, h, richardson))


def check_full_chain(dims: GridDims, iters: int = 3, seed: int = 0, h: float = 1e-4,
                     bands: BandSpec = BandSpec(), threads: int = 1) -> GradcheckResult:
    """Logits -> softmax -> soft solver -> bands -> combined loss, against central differences."""
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((4,) + dims.shape)
    tissue = rng.integers(0, 5, size=dims.shape)
    laminar = np.where(tissue > 0, rng.integers(1, bands.n_channels + 1, size=dims.shape), 0)
    S_gt = LabelField3D(dims, tissue)
    S_phi_gt = LabelField3D(dims, laminar)
    config = OptimizeConfig(solver=SoftLaplaceConfig(iters=iters, threads=threads), bands=bands)
    _, analytic = logits_loss_and_grad(logits, S_gt, S_phi_gt, config)

    def f(z):
        return logits_loss_and_grad(z, S_gt, S_phi_gt, config)[0].total

    return compare(analytic, central_differences(f, logits, h))
