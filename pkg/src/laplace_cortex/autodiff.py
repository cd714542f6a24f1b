"""Differentiable soft-boundary Laplace solver.

The forward pass turns class probabilities into a potential field:

1. ``phi0 = sum_c w_c * P_c`` (GM 0.5, WM 0, BG 1, SRLM 0 by default);
2. ``iters`` red-black SOR iterations over *every* voxel, each half-sweep
   optionally re-blending the relaxed values towards the soft Dirichlet
   data, ``x' = A * x_relaxed + b`` with ``A = 1 - sum_{c != GM} P_c`` and
   ``b = sum_{c != GM} w_c P_c``.

With one-hot probabilities the blend pins WM/SRLM to 0 and BG to 1, which
makes the forward pass identical to :func:`laplace_cortex.solver.solve_sor`.

The backward pass is a hand-written adjoint that walks the recorded
half-sweeps in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .errors import DimsMismatch, InvalidArgument, TapeMismatch
from .solver import AUTO, EMBEDDED_ITERS, SWEEP_ORDER, resolve_omega
from .stencil import Stencil
from .volume import (BG, GM, SRLM, WM, GridDims, ScalarField3D, SoftSegmentation,
                     checkerboard_array, channel_of)

DEFAULT_INIT_WEIGHTS = {GM: 0.5, WM: 0.0, BG: 1.0, SRLM: 0.0}


@dataclass(frozen=True)
class SoftLaplaceConfig:
    omega: Union[float, str] = AUTO
    iters: int = EMBEDDED_ITERS
    init_weights: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_INIT_WEIGHTS))
    clamp_each_iter: bool = True
    threads: int = 1

    def __post_init__(self):
        if int(self.iters) != self.iters or self.iters < 1:
            raise InvalidArgument(f"iters must be a positive integer, got {self.iters!r}")
        if not all(np.isfinite(float(w)) for w in self.init_weights.values()):
            raise InvalidArgument("init weights must be finite")

    def weight_vector(self, channels: int) -> np.ndarray:
        """Per-channel boundary values; channels without a weight get 0."""
        w = np.zeros(channels)
        for code, value in self.init_weights.items():
            c = channel_of(code)
            if not 0 <= c < channels:
                raise InvalidArgument(f"weight given for class {code} but only {channels} channels")
            w[c] = value
        return w


def _unpack(seg) -> tuple[np.ndarray, GridDims]:
    """Accept a SoftSegmentation or a raw ``(C, nz, ny, nx)`` array.

    Raw arrays skip the simplex check so that finite-difference probes,
    which leave the simplex, can be pushed through the same code.
    """
    if isinstance(seg, SoftSegmentation):
        return np.asarray(seg.probs, dtype=np.float64), seg.dims
    probs = np.asarray(seg, dtype=np.float64)
    if probs.ndim != 4:
        raise DimsMismatch(f"expected (C, nz, ny, nx) probabilities, got shape {probs.shape}")
    return probs, GridDims.from_shape(probs.shape[1:])


def init_from_probs(seg, weights: Mapping[int, float] = DEFAULT_INIT_WEIGHTS
                    ) -> ScalarField3D:
    probs, dims = _unpack(seg)
    w = SoftLaplaceConfig(init_weights=weights).weight_vector(probs.shape[0])
    return ScalarField3D(dims, np.tensordot(w, probs, axes=1))


def _blend_terms(probs: np.ndarray, w: np.ndarray):
    fixed = np.ones(probs.shape[0], dtype=bool)
    fixed[channel_of(GM)] = False
    A = 1.0 - probs[fixed].sum(axis=0)
    b = np.tensordot(w[fixed], probs[fixed], axes=1)
    return A, b, fixed


@dataclass
class Tape:
    """Everything the adjoint needs: inputs, settings and every half-sweep input."""

    dims: GridDims
    probs: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    omega: float
    clamp: bool
    threads: int
    fields: list = field(repr=False)
    used: bool = False

    @property
    def output(self) -> np.ndarray:
        return self.fields[-1]

    def _sweep_masks(self):
        masks = [checkerboard_array(self.dims.shape, p) for p in SWEEP_ORDER]
        n_half = len(self.fields) - 1
        return [masks[k % 2] for k in range(n_half)]

    def replay(self) -> np.ndarray:
        """Recompute the forward pass from the stored inputs."""
        A, b, _ = _blend_terms(self.probs, self.weights)
        x = np.tensordot(self.weights, self.probs, axes=1)
        with Stencil(np.ones(self.dims.shape, bool), self.threads) as st:
            for active in self._sweep_masks():
                x = _half_sweep(x, st, active, self.omega, A, b, self.clamp)
        return x


def _half_sweep(x, stencil, active, omega, A, b, clamp):
    relaxed = stencil.relax(x, omega)
    if clamp:
        relaxed = A * relaxed + b
    return np.where(active, relaxed, x)


def soft_solve_forward(seg, config: SoftLaplaceConfig = SoftLaplaceConfig()
                       ) -> tuple[ScalarField3D, Tape]:
    probs, dims = _unpack(seg)
    omega = resolve_omega(config.omega, dims)
    w = config.weight_vector(probs.shape[0])
    A, b, _ = _blend_terms(probs, w)
    x = np.tensordot(w, probs, axes=1)
    fields = [x]
    masks = [checkerboard_array(dims.shape, p) for p in SWEEP_ORDER]
    with Stencil(np.ones(dims.shape, bool), config.threads) as st:
        for _ in range(config.iters):
            for active in masks:
                x = _half_sweep(x, st, active, omega, A, b, config.clamp_each_iter)
                fields.append(x)
    tape = Tape(dims, probs, w, omega, config.clamp_each_iter, config.threads, fields)
    return ScalarField3D(dims, x), tape


def soft_solve_backward(tape: Tape, grad_out) -> np.ndarray:
    """Gradient of ``<grad_out, phi>`` with respect to the input probabilities.

    Returns an array shaped like the probabilities, ``(C, nz, ny, nx)``.
    A tape supports a single backward call.
    """
    if tape.used:
        raise TapeMismatch("tape has already been consumed by a backward pass")
    g = np.asarray(grad_out.values if isinstance(grad_out, ScalarField3D) else grad_out,
                   dtype=np.float64)
    if g.shape != tape.dims.shape:
        raise TapeMismatch(f"gradient shape {g.shape} does not match tape grid {tape.dims.shape}")
    tape.used = True

    probs, w = tape.probs, tape.weights
    A, b, fixed = _blend_terms(probs, w)
    gA = np.zeros(tape.dims.shape)
    gb = np.zeros(tape.dims.shape)
    omega = tape.omega
    masks = tape._sweep_masks()
    with Stencil(np.ones(tape.dims.shape, bool), tape.threads) as st:
        for k in range(len(masks) - 1, -1, -1):
            active = masks[k]
            x = tape.fields[k]
            g_act = np.where(active, g, 0.0)
            if tape.clamp:
                gA += g_act * st.relax(x, omega)
                gb += g_act
                g_act = A * g_act
            g = (np.where(active, 0.0, g) + (1.0 - omega) * g_act
                 + omega * st.mean_transpose(g_act))

    grad = w[:, None, None, None] * g[None]
    grad[fixed] += w[fixed][:, None, None, None] * gb[None] - gA[None]
    return grad


def init_from_probs_backward(grad_out, channels: int,
                             weights: Mapping[int, float] = DEFAULT_INIT_WEIGHTS) -> np.ndarray:
    """Gradient of ``<grad_out, init_from_probs(P)>`` with respect to ``P``."""
    g = np.asarray(grad_out, dtype=np.float64)
    w = SoftLaplaceConfig(init_weights=weights).weight_vector(channels)
    return w[:, None, None, None] * g[None]
