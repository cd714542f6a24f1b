"""Differentiable Laplace solving for laminar cortical geometry.

Red-black SOR and reference solvers, a soft-label solver with a
hand-written adjoint, band-pass labelization, Dice+CE losses, evaluation
metrics and synthetic phantoms.
"""

__version__ = "0.1.0"

from .errors import LaplaceCortexError  # noqa: E402
from .volume import (BG, GM, SRLM, UNLABELED, WM, GridDims, LabelField3D,  # noqa: E402
                     ScalarField3D, SoftSegmentation, read_vgrid, write_vgrid)
from .solver import (LaplaceProblem, SolverConfig, dense_solve, omega_opt,  # noqa: E402
                     solve_reference, solve_sor)
from .autodiff import SoftLaplaceConfig, soft_solve_backward, soft_solve_forward  # noqa: E402
from .labelize import BandSpec, argmax_labels, laminar_bins, soft_one_hot  # noqa: E402
from .loss import combined_loss, laplacian_targets  # noqa: E402
from .metrics import dsc, hd95, icc_fixed_raters, laplace_eval, pearson_r, thickness_at  # noqa: E402
from .phantom import PhantomKind, PhantomSpec, make_phantom  # noqa: E402
from .optimize import OptimizeConfig, run_descent  # noqa: E402
