"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
input, failed numerical check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .autodiff import SoftLaplaceConfig, soft_solve_forward
from .errors import LaplaceCortexError
from .gradcheck import check_full_chain, check_solver_gradient
from .labelize import DEFAULT_BETA, BandSpec, argmax_labels, laminar_bins, soft_one_hot
from .loss import combined_loss, laplacian_targets
from .metrics import DEFAULT_SEARCH_RADIUS_MM, EVAL_LAYERS, evaluate, thickness_at
from .optimize import OptimizeConfig, run_descent, write_trace
from .phantom import PhantomKind, PhantomSpec, make_phantom
from .solver import (AUTO, EMBEDDED_ITERS, EVAL_ITERS, REFERENCE_TOLERANCE, LaplaceProblem,
                     SolverConfig, resolve_omega, solve_reference, solve_sor)
from .volume import (GM, GridDims, LabelField3D, ScalarField3D, SoftSegmentation, read_vgrid,
                     write_vgrid)

log = logging.getLogger("laplace_cortex")

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _omega(text: str):
    if text == AUTO:
        return AUTO
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"omega must be a number or 'auto', got {text!r}")


def _triple(name):
    def parse(text):
        vals = _float_list(text) if name == "spacing" else _int_list(text)
        if len(vals) != 3:
            raise argparse.ArgumentTypeError(f"--{name} needs three values x,y,z")
        return vals
    return parse


def _bands(args) -> BandSpec:
    if args.bands is None:
        return BandSpec(beta=args.beta)
    return BandSpec.parse(args.bands, beta=args.beta)


def _read(path, kind):
    fld = read_vgrid(path)
    if not isinstance(fld, kind):
        raise LaplaceCortexError(f"{path}: expected a {kind.__name__}, found {type(fld).__name__}")
    return fld


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _problem(labels: LabelField3D, args) -> LaplaceProblem:
    return LaplaceProblem.from_labels(labels, args.domain_labels, args.source_labels,
                                      args.sink_labels)


# -- commands ---------------------------------------------------------------

def cmd_phantom(args):
    nx, ny, nz = args.dims
    sx, sy, sz = args.spacing
    spec = PhantomSpec(PhantomKind(args.kind), GridDims(nx, ny, nz, sx, sy, sz),
                       thickness=args.thickness, a=args.a, b=args.b, gap=args.gap,
                       gm_thickness=args.gm_thickness, wavelength=args.wavelength,
                       amplitude=args.amplitude, bridge=args.bridge,
                       hide_far_bank=args.hide_far_bank, confusion=args.confusion,
                       seed=args.seed)
    ph = make_phantom(spec)
    outputs = {"labels": ph.gt_labels, "phi": ph.phi_gt, "probs": ph.corrupted_probs}
    if spec.kind is PhantomKind.SULCUS:
        outputs["train_labels"] = ph.train_labels
    written = {}
    for suffix, fld in outputs.items():
        path = f"{args.out}_{suffix}.vgrid"
        write_vgrid(fld, path)
        written[suffix] = path
    _emit({"kind": spec.kind.value, "files": written})


def cmd_solve(args):
    labels = _read(args.labels, LabelField3D)
    problem = _problem(labels, args)
    if args.scheme == "reference26":
        tol = REFERENCE_TOLERANCE if args.tol is None else args.tol
        phi = solve_reference(problem, tolerance=tol, max_iters=args.iters)
        report = {"scheme": args.scheme, "tolerance": tol}
    else:
        config = SolverConfig(omega=args.omega, max_iters=args.iters,
                              tolerance=args.tol or 0.0, threads=args.threads)
        phi, rep = solve_sor(problem, config=config)
        report = {"scheme": args.scheme, "omega": resolve_omega(args.omega, labels.dims),
                  "iterations_run": rep.iterations_run, "final_change": rep.final_change,
                  "converged": rep.converged}
    write_vgrid(phi, args.out)
    _emit(report, args.report)


def cmd_soft_solve(args):
    seg = _read(args.probs, SoftSegmentation)
    config = SoftLaplaceConfig(omega=args.omega, iters=args.iters,
                               clamp_each_iter=not args.no_clamp, threads=args.threads)
    phi, _ = soft_solve_forward(seg, config)
    write_vgrid(phi, args.out)
    _emit({"iters": args.iters, "omega": resolve_omega(args.omega, seg.dims),
           "min": float(phi.values.min()), "max": float(phi.values.max())})


def cmd_labelize(args):
    phi = _read(args.phi, ScalarField3D)
    if args.mode == "bins":
        if args.labels is None:
            raise UsageError("labelize --mode bins requires --labels")
        tissue = _read(args.labels, LabelField3D)
        if not tissue.dims.same_grid(phi.dims):
            raise LaplaceCortexError("--phi and --labels are on different grids")
        out = laminar_bins(phi, tissue.mask(*args.domain_labels), args.layers)
    else:
        out = argmax_labels(soft_one_hot(phi, _bands(args)), phi.dims)
    write_vgrid(out, args.out)
    counts = np.bincount(out.labels.ravel())
    _emit({"mode": args.mode, "counts": {str(k): int(v) for k, v in enumerate(counts) if v}})


def cmd_loss(args):
    seg = _read(args.probs, SoftSegmentation)
    gt = _read(args.labels, LabelField3D)
    spec = _bands(args)
    channels = targets = None
    if args.phi_gt is not None and args.laplace_weight > 0:
        phi_gt = _read(args.phi_gt, ScalarField3D)
        targets = laplacian_targets(phi_gt, gt, spec, args.ignore_label)
        config = SoftLaplaceConfig(omega=args.omega, iters=args.iters, threads=args.threads)
        phi, _ = soft_solve_forward(seg, config)
        channels = soft_one_hot(phi, spec)
    breakdown, _, _ = combined_loss(seg, gt, channels, targets, ignore_label=args.ignore_label,
                                    laplace_weight=args.laplace_weight)
    _emit(breakdown.as_dict(), args.report)


def cmd_metrics(args):
    pred = _read(args.pred, LabelField3D)
    gt = _read(args.gt, LabelField3D)
    report = evaluate(pred, gt, hd_label=args.hd_label, laplacian=args.laplacian,
                      threads=args.threads)
    _emit(report.as_dict(), args.report)


def cmd_thickness(args):
    labels = _read(args.labels, LabelField3D)
    with open(args.landmarks) as fh:
        try:
            landmarks = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LaplaceCortexError(f"{args.landmarks}: {exc}") from None
    if not isinstance(landmarks, list) or not all(
            isinstance(p, list) and len(p) == 3 and all(isinstance(v, int) for v in p)
            for p in landmarks):
        raise LaplaceCortexError("landmarks must be a JSON array of [x, y, z] integer triples")
    gm = labels.mask(*args.gm_labels)
    values = [thickness_at(gm, tuple(p), args.search_radius, labels.dims.spacing)
              for p in landmarks]
    _emit({"thickness_mm": values}, args.report)


def cmd_optimize(args):
    seg = _read(args.probs, SoftSegmentation)
    gt = _read(args.labels, LabelField3D)
    spec = _bands(args)
    targets = None
    if args.laplace_weight > 0:
        if args.phi_gt is None:
            raise UsageError("optimize with --laplace-weight > 0 requires --phi-gt")
        targets = laplacian_targets(_read(args.phi_gt, ScalarField3D), gt, spec)
    config = OptimizeConfig(steps=args.steps, learning_rate=args.lr,
                            laplace_weight=args.laplace_weight, bands=spec, seed=args.seed,
                            solver=SoftLaplaceConfig(omega=args.omega, iters=args.iters,
                                                     threads=args.threads))
    result, trace = run_descent(seg, gt, targets, config)
    write_vgrid(result, args.out)
    if args.trace:
        write_trace(trace, args.trace)
    if args.out_labels:
        write_vgrid(result.argmax(), args.out_labels)
    _emit({"steps": len(trace), "initial": trace[0].as_dict(), "final": trace[-1].as_dict()})


def cmd_gradcheck(args):
    nx, ny, nz = args.dims
    dims = GridDims(nx, ny, nz)
    res = check_solver_gradient(dims, args.iters, args.seed, args.h, threads=args.threads)
    out = {"max_rel_error": res.max_rel_error, "max_abs_error_small": res.max_abs_error_small,
           "entries": res.n_checked}
    if args.full_chain:
        chain = check_full_chain(dims, args.iters, args.seed, threads=args.threads)
        out["full_chain_max_rel_error"] = chain.max_rel_error
    print(f"max relative error: {res.max_rel_error:.3e}")
    _emit(out)
    ok = res.passed(args.tol)
    if args.full_chain:
        ok = ok and chain.passed(args.chain_tol)
    return 0 if ok else 2


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads for stencil sweeps")
    common.add_argument("--verbose", action="store_true")

    mapping = _Parser(add_help=False)
    mapping.add_argument("--domain-labels", type=_int_list, default=(1,))
    mapping.add_argument("--source-labels", type=_int_list, default=(2, 4))
    mapping.add_argument("--sink-labels", type=_int_list, default=(3,))

    bands = _Parser(add_help=False)
    bands.add_argument("--beta", type=float, default=DEFAULT_BETA)
    bands.add_argument("--bands", default=None, help='band list "lo:hi,lo:hi,..."')

    p = _Parser(prog="laplace-cortex", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", parents=[common], help="write a synthetic phantom")
    s.add_argument("--kind", choices=[k.value for k in PhantomKind], required=True)
    s.add_argument("--dims", type=_triple("dims"), required=True, help="nx,ny,nz")
    s.add_argument("--spacing", type=_triple("spacing"), default=(1.0, 1.0, 1.0))
    s.add_argument("--thickness", type=int, default=10)
    s.add_argument("--a", type=float, default=6.0)
    s.add_argument("--b", type=float, default=14.0)
    s.add_argument("--gap", type=int, default=1)
    s.add_argument("--gm-thickness", type=int, default=5)
    s.add_argument("--wavelength", type=float, default=None)
    s.add_argument("--amplitude", type=float, default=1.5)
    s.add_argument("--bridge", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--hide-far-bank", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--confusion", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("solve", parents=[common, mapping], help="hard-label Laplace solve")
    s.add_argument("--labels", required=True)
    s.add_argument("--iters", type=int, default=EVAL_ITERS)
    s.add_argument("--omega", type=_omega, default=AUTO)
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--scheme", choices=["sor6", "reference26"], default="sor6")
    s.add_argument("--out", required=True)
    s.add_argument("--report", default=None, help="also write the JSON report here")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("soft-solve", parents=[common], help="soft-label Laplace solve")
    s.add_argument("--probs", required=True)
    s.add_argument("--iters", type=int, default=EMBEDDED_ITERS)
    s.add_argument("--omega", type=_omega, default=AUTO)
    s.add_argument("--no-clamp", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_soft_solve)

    s = sub.add_parser("labelize", parents=[common, bands], help="potential to laminar labels")
    s.add_argument("--phi", required=True)
    s.add_argument("--mode", choices=["argmax", "bins"], default="argmax")
    s.add_argument("--layers", type=int, default=EVAL_LAYERS)
    s.add_argument("--labels", default=None, help="tissue labels (bins mode)")
    s.add_argument("--domain-labels", type=_int_list, default=(GM,))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_labelize)

    s = sub.add_parser("loss", parents=[common, bands], help="evaluate the combined loss")
    s.add_argument("--probs", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--phi-gt", default=None)
    s.add_argument("--iters", type=int, default=EMBEDDED_ITERS)
    s.add_argument("--omega", type=_omega, default=AUTO)
    s.add_argument("--laplace-weight", type=float, default=1.0)
    s.add_argument("--ignore-label", type=int, default=0)
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("metrics", parents=[common], help="compare two label fields")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--hd-label", type=int, default=GM)
    s.add_argument("--laplacian", action="store_true")
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("thickness", parents=[common], help="inscribed-sphere thickness")
    s.add_argument("--labels", required=True)
    s.add_argument("--landmarks", required=True, help="JSON array of [x,y,z]")
    s.add_argument("--gm-labels", type=_int_list, default=(GM,))
    s.add_argument("--search-radius", type=float, default=DEFAULT_SEARCH_RADIUS_MM)
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_thickness)

    s = sub.add_parser("optimize", parents=[common, bands], help="gradient descent on logits")
    s.add_argument("--probs", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--phi-gt", default=None)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--lr", type=float, default=OptimizeConfig.learning_rate)
    s.add_argument("--laplace-weight", type=float, default=1.0)
    s.add_argument("--iters", type=int, default=EMBEDDED_ITERS)
    s.add_argument("--omega", type=_omega, default=AUTO)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--out-labels", default=None)
    s.add_argument("--trace", default=None, help="CSV loss trace")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("gradcheck", parents=[common], help="adjoint vs finite differences")
    s.add_argument("--dims", type=_triple("dims"), default=(6, 6, 6))
    s.add_argument("--iters", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--h", type=float, default=1e-3)
    s.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    s.add_argument("--full-chain", action="store_true")
    s.add_argument("--chain-tol", type=float, default=1e-3)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("usage error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (LaplaceCortexError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
