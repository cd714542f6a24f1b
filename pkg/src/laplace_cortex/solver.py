"""Hard-boundary Laplace solvers.

Three routes to the potential between a source surface (phi = 0) and a sink
surface (phi = 1):

* :func:`solve_sor` -- red-black successive over-relaxation on the
  6-neighbour stencil, one iteration being a BLACK then a RED half-sweep.
* :func:`solve_reference` -- Jacobi iteration on the uniform 26-neighbour
  average, used to produce ground-truth fields.
* :func:`dense_solve` -- direct sparse solve of the 6-neighbour system, the
  exact fixed point of the SOR iteration; an oracle for small problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from .errors import DimsMismatch, InvalidArgument, SingularSystem, TooLarge
from .stencil import FACE_OFFSETS, Stencil, neighbor26_sum
from .volume import (BG, GM, SRLM, WM, GridDims, LabelField3D, Parity,
                     ScalarField3D, checkerboard_array)

DEFAULT_DOMAIN_VALUE = 0.5
EMBEDDED_ITERS = 60
EVAL_ITERS = 120
# "sum of changes < 0.001% of total volume", as a mean per domain voxel
REFERENCE_TOLERANCE = 1e-5
DENSE_CAP = 5000

AUTO = "auto"
SWEEP_ORDER = (Parity.BLACK, Parity.RED)


class Scheme(Enum):
    SOR6 = "sor6"
    REFERENCE26 = "reference26"


def omega_opt(n: int) -> float:
    """Optimal over-relaxation factor ``2 / (1 + sin(pi / (n + 1)))``."""
    if int(n) != n or n < 1:
        raise InvalidArgument(f"grid dimension must be a positive integer, got {n!r}")
    return 2.0 / (1.0 + math.sin(math.pi / (n + 1)))


def resolve_omega(omega, dims: GridDims) -> float:
    if isinstance(omega, str):
        if omega.lower() != AUTO:
            raise InvalidArgument(f"omega must be a number or 'auto', got {omega!r}")
        return omega_opt(dims.min_dim)
    omega = float(omega)
    if not 1.0 <= omega < 2.0:
        raise InvalidArgument(f"omega must lie in [1, 2), got {omega}")
    return omega


@dataclass(frozen=True)
class LaplaceProblem:
    """Domain, source (phi=0) and sink (phi=1) voxel masks on one grid.

    Voxels in none of the masks are exterior: never updated and never
    counted in a domain voxel's neighbour average.
    """

    dims: GridDims
    domain: np.ndarray = field(repr=False)
    source: np.ndarray = field(repr=False)
    sink: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("domain", "source", "sink"):
            m = np.asarray(getattr(self, name), dtype=bool)
            if m.shape != self.dims.shape:
                raise DimsMismatch(f"{name} mask shape {m.shape} != grid {self.dims.shape}")
            m = m.copy()
            m.flags.writeable = False
            object.__setattr__(self, name, m)
        if (self.domain & self.source).any() or (self.domain & self.sink).any() \
                or (self.source & self.sink).any():
            raise InvalidArgument("domain, source and sink masks must be disjoint")
        if self.domain.any() and self.dims.size == 1:
            raise InvalidArgument("domain voxels need at least one in-grid neighbour")

    @classmethod
    def from_labels(cls, labels: LabelField3D, domain_labels=(GM,),
                    source_labels=(WM, SRLM), sink_labels=(BG,)) -> "LaplaceProblem":
        return cls(labels.dims, labels.mask(*domain_labels),
                   labels.mask(*source_labels), labels.mask(*sink_labels))

    @property
    def member(self) -> np.ndarray:
        return self.domain | self.source | self.sink

    def initial_field(self, domain_value: float = DEFAULT_DOMAIN_VALUE) -> ScalarField3D:
        phi = np.zeros(self.dims.shape)
        phi[self.domain] = domain_value
        phi[self.sink] = 1.0
        return ScalarField3D(self.dims, phi)


@dataclass(frozen=True)
class SolverConfig:
    omega: Union[float, str] = AUTO
    max_iters: int = EMBEDDED_ITERS
    tolerance: float = 0.0
    scheme: Scheme = Scheme.SOR6
    threads: int = 1

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidArgument(f"max_iters must be a positive integer, got {self.max_iters!r}")
        if not self.tolerance >= 0:
            raise InvalidArgument(f"tolerance must be nonnegative, got {self.tolerance!r}")
        if not isinstance(self.omega, str):
            resolve_omega(self.omega, GridDims(1, 1, 1))


@dataclass(frozen=True)
class SolveReport:
    iterations_run: int
    final_change: float
    converged: bool


def _start_field(problem: LaplaceProblem, init) -> np.ndarray:
    if init is None:
        init = problem.initial_field()
    if not init.dims.same_grid(problem.dims):
        raise DimsMismatch("initial field does not match the problem grid")
    phi = np.array(init.values, dtype=np.float64)
    if np.any(phi[problem.source] != 0.0) or np.any(phi[problem.sink] != 1.0):
        raise InvalidArgument("initial field must hold 0 on source and 1 on sink voxels")
    return phi


def sor_half_sweep(phi: np.ndarray, stencil: Stencil, active: np.ndarray,
                   omega: float) -> float:
    """Relax the ``active`` voxels of ``phi`` in place; return sum of |change|."""
    new = stencil.relax(phi, omega)
    change = float(np.abs(new - phi)[active].sum())
    np.copyto(phi, new, where=active)
    return change


def solve_sor(problem: LaplaceProblem, init: ScalarField3D | None = None,
              config: SolverConfig = SolverConfig()) -> tuple[ScalarField3D, SolveReport]:
    """Red-black SOR on the 6-neighbour stencil.

    Runs ``config.max_iters`` iterations, stopping early once the mean
    absolute change per domain voxel over one iteration drops below
    ``config.tolerance`` (0 disables the check).
    """
    if config.scheme is not Scheme.SOR6:
        raise InvalidArgument("solve_sor requires the SOR6 scheme")
    omega = resolve_omega(config.omega, problem.dims)
    phi = _start_field(problem, init)
    n_domain = int(problem.domain.sum())
    if n_domain == 0:
        return ScalarField3D(problem.dims, phi), SolveReport(0, 0.0, True)

    with Stencil(problem.member, threads=config.threads) as stencil:
        if np.any(stencil.count[problem.domain] == 0):
            raise InvalidArgument("a domain voxel has no contributing neighbour")
        actives = [problem.domain & checkerboard_array(problem.dims.shape, p)
                   for p in SWEEP_ORDER]
        change, it, converged = 0.0, 0, False
        while it < config.max_iters:
            change = sum(sor_half_sweep(phi, stencil, a, omega) for a in actives) / n_domain
            it += 1
            if change < config.tolerance:
                converged = True
                break
    return ScalarField3D(problem.dims, phi), SolveReport(it, change, converged)


def solve_reference(problem: LaplaceProblem, init: ScalarField3D | None = None, *,
                    tolerance: float = REFERENCE_TOLERANCE,
                    max_iters: int = 100_000) -> ScalarField3D:
    """Jacobi iteration on the uniform 26-neighbour mean.

    Stops when the mean absolute change per domain voxel falls below
    ``tolerance``.
    """
    phi = _start_field(problem, init)
    domain = problem.domain
    if not domain.any():
        return ScalarField3D(problem.dims, phi)
    member = problem.member.astype(np.float64)
    count = neighbor26_sum(member)
    if np.any(count[domain] == 0):
        raise InvalidArgument("a domain voxel has no contributing neighbour")
    count = np.where(count > 0, count, 1.0)
    n_domain = int(domain.sum())
    for _ in range(max_iters):
        new = neighbor26_sum(phi * member) / count
        change = float(np.abs(new - phi)[domain].sum()) / n_domain
        np.copyto(phi, new, where=domain)
        if change < tolerance:
            break
    return ScalarField3D(problem.dims, phi)


def _check_connected(problem: LaplaceProblem):
    structure = ndimage.generate_binary_structure(3, 1)
    comp, n = ndimage.label(problem.domain, structure=structure)
    touching = ndimage.binary_dilation(problem.source | problem.sink, structure=structure)
    reached = np.unique(comp[touching & problem.domain])
    if len(set(reached.tolist()) - {0}) < n:
        raise SingularSystem("a domain component has no path to any boundary voxel")


def dense_solve(problem: LaplaceProblem) -> ScalarField3D:
    """Direct solve of ``count_v*phi_v - sum(domain nbrs) = sum(boundary nbrs)``."""
    domain = problem.domain
    n = int(domain.sum())
    if n > DENSE_CAP:
        raise TooLarge(f"{n} domain voxels exceeds the dense cap of {DENSE_CAP}")
    phi = np.zeros(problem.dims.shape)
    phi[problem.sink] = 1.0
    if n == 0:
        return ScalarField3D(problem.dims, phi)
    _check_connected(problem)

    index = -np.ones(problem.dims.shape, dtype=np.intp)
    index[domain] = np.arange(n)
    member = problem.member
    nz, ny, nx = problem.dims.shape
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    rhs = np.zeros(n)
    zz, yy, xx = np.nonzero(domain)
    ids = index[zz, yy, xx]
    for dz, dy, dx in FACE_OFFSETS:
        z2, y2, x2 = zz + dz, yy + dy, xx + dx
        ok = (z2 >= 0) & (z2 < nz) & (y2 >= 0) & (y2 < ny) & (x2 >= 0) & (x2 < nx)
        src = ids[ok]
        z2, y2, x2 = z2[ok], y2[ok], x2[ok]
        is_member = member[z2, y2, x2]
        np.add.at(diag, src[is_member], 1.0)
        inner = domain[z2, y2, x2]
        rows.append(src[inner])
        cols.append(index[z2[inner], y2[inner], x2[inner]])
        vals.append(-np.ones(int(inner.sum())))
        np.add.at(rhs, src, problem.sink[z2, y2, x2].astype(np.float64))
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    phi[domain] = spsolve(A.tocsc(), rhs)
    return ScalarField3D(problem.dims, phi)
