"""``insulopt`` command line.

Exit status: 0 on success, 1 when a solver fails, 2 on usage errors (bad
flags, unreadable inputs).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, oracles
from .eigen import EigenOptions, EigenProblem, StartSpec, default_starts, solve_eigen
from .energy import EnergyOptions, EnergyProblem, UndefinedDensityError, solve_energy
from .fem import assemble
from .linalg import ConvergenceError
from .mesh import MeshError, disk, generate_mesh, interval, load_mesh, rectangle, save_mesh, two_disks
from .reports import (
    ConvergenceConfig,
    SourceSpecError,
    convergence_study,
    dump_json,
    parse_mass,
    parse_source,
    write_csv,
)
from .shape import ShapeError, boundary_profile, first_variation, stationarity_check
from .symmetry import (
    BracketError,
    SymmetryError,
    ThresholdOptions,
    disk_geometry,
    estimate_m0_fem,
    symmetry_report,
)

__all__ = ["main", "build_parser", "UsageError"]

logger = logging.getLogger("insulopt")


class UsageError(Exception):
    """Invalid command-line input; ``flag`` names the offending option."""

    def __init__(self, flag: str, message: str):
        super().__init__(f"{flag}: {message}")
        self.flag = flag


# ----------------------------------------------------------------------
# argument helpers


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
    return v


def _pos_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text!r}")
    return v


def _load_any_mesh(text: str):
    """A path to an insulmesh file, or a generator spec such as ``disk:1,4``."""
    path = Path(text)
    if path.exists():
        try:
            return load_mesh(path)
        except (OSError, MeshError) as exc:
            raise UsageError("--mesh", f"cannot read {text}: {exc}") from exc
    try:
        return generate_mesh(text)
    except MeshError as exc:
        raise UsageError("--mesh", f"{text!r} is neither a readable file nor a generator spec ({exc})") from exc


def _disk_radius(ops):
    try:
        return disk_geometry(ops)[1]
    except SymmetryError:
        return None


def _mass(text, ops):
    try:
        return parse_mass(text, _disk_radius(ops) if ops is not None else 1.0)
    except ValueError as exc:
        raise UsageError("--m", str(exc)) from exc


def _parse_starts(text: str, seed: int) -> list[StartSpec]:
    if text == "default":
        return default_starts(seed)
    named = {s.name.split("(")[0]: s for s in default_starts(seed)}
    out = []
    for item in text.split(","):
        item = item.strip()
        kind, _, arg = item.partition(":")
        if item in named:
            out.append(named[item])
        elif kind == "random":
            try:
                sd = int(arg) if arg else seed
            except ValueError:
                raise UsageError("--starts", f"bad random seed in {item!r}") from None
            out.append(StartSpec("random", seed=sd, name=f"random({sd})"))
        elif kind == "cap":
            try:
                angle, fraction = (float(v) for v in arg.split(":"))
            except ValueError:
                raise UsageError("--starts", f"cap start needs cap:<angle>:<fraction>, got {item!r}") from None
            if not 0 < fraction <= 1:
                raise UsageError("--starts", "cap fraction must lie in (0, 1]")
            out.append(StartSpec("cap", angle=angle, fraction=fraction))
        else:
            raise UsageError("--starts", f"unknown start {item!r}")
    if not out:
        raise UsageError("--starts", "no starts given")
    return out


def _config(args) -> dict:
    skip = {"func", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _emit(args, payload: dict) -> None:
    text = dump_json(payload, _config(args), timestamp=not args.no_timestamp)
    if args.out:
        from .mesh import atomic_write_text

        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


def _mesh_summary(mesh, ops) -> dict:
    return {
        "dim": mesh.dim,
        "nodes": mesh.n_nodes,
        "elements": mesh.n_elements,
        "boundary_nodes": int(len(ops.boundary_nodes)),
        "components": mesh.component_count,
        "perimeter": ops.perimeter,
    }


# ----------------------------------------------------------------------
# subcommands


def cmd_mesh(args) -> dict:
    gen = args.generator
    try:
        if gen == "interval":
            mesh = interval(args.a, args.b, args.n)
        elif gen == "disk":
            mesh = disk(args.radius, args.refinement)
        elif gen == "two_disks":
            mesh = two_disks(args.r1, args.r2, args.separation, args.refinement)
        else:
            mesh = rectangle(args.width, args.height, args.nx, args.ny)
    except MeshError as exc:
        raise UsageError(gen, str(exc)) from exc
    save_mesh(mesh, args.mesh_out)
    args.out = args.summary
    return {"mesh": str(args.mesh_out), "summary": _mesh_summary(mesh, assemble(mesh))}


def cmd_energy(args) -> dict:
    mesh = _load_any_mesh(args.mesh)
    ops = assemble(mesh)
    m = _mass(args.m, ops)
    try:
        f = parse_source(args.f, ops)
    except SourceSpecError as exc:
        raise UsageError("--f", str(exc)) from exc
    opt = EnergyOptions(tol=args.tol, max_iter=args.max_iter, method=args.method)
    sol = solve_energy(EnergyProblem(ops, m, f, opt))
    tr = sol.trace
    mean = float(ops.boundary_weights @ tr / ops.perimeter)
    std = float(np.sqrt(ops.boundary_weights @ (tr - mean) ** 2 / ops.perimeter))
    payload = {
        "m": m,
        "energy": sol.energy,
        "iterations": sol.iterations,
        "method": sol.method,
        "el_residual": sol.el_residual,
        "trace_stats": {"mean": mean, "min": float(tr.min()), "max": float(tr.max()), "cv": std / mean if mean > 0 else math.inf},
        "degenerate_dirichlet": {str(k): v for k, v in sol.degenerate_dirichlet.items()},
        "h_opt": None if sol.h_opt is None else sol.h_opt.values,
        "mesh": _mesh_summary(mesh, ops),
    }
    if args.with_u:
        payload["u"] = sol.u.values
    if _disk_radius(ops) is not None and sol.h_opt is not None:
        payload["symmetry"] = symmetry_report(sol, ops).as_dict()
    if args.csv:
        if sol.h_opt is None:
            raise UsageError("--csv", "optimal density is undefined (boundary trace vanishes)")
        write_csv(args.csv, ["s", "h_opt"], zip(_arclength(ops), sol.h_opt.values))
    return payload


def _arclength(ops) -> np.ndarray:
    """Arc-length parameter of each boundary node, restarting at 0 on every component.

    In 1D the boundary is two points and the node coordinate is reported.
    """
    from .shape import boundary_cycles

    mesh = ops.mesh
    if mesh.dim == 1:
        return mesh.nodes[ops.boundary_nodes, 0].copy()
    pos = {int(n): k for k, n in enumerate(ops.boundary_nodes)}
    out = np.zeros(len(ops.boundary_nodes))
    for cyc in boundary_cycles(mesh):
        x = mesh.nodes[cyc]
        seg = np.linalg.norm(np.diff(x, axis=0), axis=1)
        out[[pos[int(n)] for n in cyc]] = np.concatenate([[0.0], np.cumsum(seg)])
    return out


def _eigen_options(args) -> EigenOptions:
    return EigenOptions(tol=args.tol, max_iter=args.max_iter)


def cmd_eigen(args) -> dict:
    mesh = _load_any_mesh(args.mesh)
    ops = assemble(mesh)
    m = _mass(args.m, ops)
    starts = _parse_starts(args.starts, args.seed)
    sol = solve_eigen(EigenProblem(ops, m, starts, _eigen_options(args)))
    payload = {
        "lambda": sol.lam,
        "m": m,
        "zero_set_fraction": sol.zero_set_fraction,
        "kkt_equality": sol.kkt_equality,
        "kkt_inequality": sol.kkt_inequality,
        "best_start": sol.per_start[sol.best_index].start.label,
        "per_start": [r.as_dict() for r in sol.per_start],
        "h_opt": sol.h_opt.values,
        "mesh": _mesh_summary(mesh, ops),
    }
    R = _disk_radius(ops)
    if R is not None:
        rep = symmetry_report(sol, ops)
        payload["symmetry"] = rep.as_dict()
        payload["classification"] = rep.classification
        payload["lambda_radial_oracle"] = oracles.disk_radial_lambda(R, m)
        payload["m0_oracle"] = oracles.threshold_m0(R)
    if args.with_u:
        payload["u"] = sol.u.values
    if args.csv:
        from .symmetry import boundary_angles

        th = boundary_angles(ops)
        w = ops.boundary_weights
        rows = []
        for r in sol.per_start:
            if r.u is None:
                continue
            tr = r.u[ops.boundary_nodes]
            h = m * tr / (w @ tr)
            rows += [(r.start.label, a, v) for a, v in zip(th, h)]
        write_csv(args.csv, ["start", "angle", "h_opt"], rows)
    return payload


def cmd_threshold(args) -> dict:
    if args.mesh:
        mesh = _load_any_mesh(args.mesh)
    else:
        mesh = disk(args.radius, args.refinement)
    if args.bracket == "auto":
        bracket = ThresholdOptions().bracket
    else:
        try:
            lo, hi = (float(v) for v in args.bracket.split(","))
        except ValueError:
            raise UsageError("--bracket", "expected 'auto' or lo,hi (multiples of m0)") from None
        if not 0 < lo < hi:
            raise UsageError("--bracket", "need 0 < lo < hi")
        bracket = (lo, hi)
    opts = ThresholdOptions(bracket=bracket, width_tol=args.width_tol, seed=args.seed, eigen_options=_eigen_options(args))
    try:
        res = estimate_m0_fem(mesh, opts)
    except SymmetryError as exc:
        raise UsageError("--mesh", str(exc)) from exc
    if args.csv:
        write_csv(
            args.csv,
            ["m", "lambda_best", "lambda_radial_oracle", "cv", "classification"],
            [(p.m, p.lam_best, p.lam_radial, p.cv, p.classification) for p in sorted(res.probes, key=lambda p: p.m)],
        )
    out = res.as_dict()
    out["relative_error"] = abs(res.m0_fem - res.m0_oracle) / res.m0_oracle
    return out


def cmd_shape(args) -> dict:
    mesh = _load_any_mesh(args.mesh)
    ops = assemble(mesh)
    m = _mass(args.m, ops)
    if args.problem == "energy":
        try:
            f = parse_source(args.f, ops)
        except SourceSpecError as exc:
            raise UsageError("--f", str(exc)) from exc
        sol = solve_energy(EnergyProblem(ops, m, f, EnergyOptions(tol=args.tol, max_iter=args.max_iter)))
    else:
        sol = solve_eigen(EigenProblem(ops, m, _parse_starts(args.starts, args.seed), _eigen_options(args)))
    prof = boundary_profile(sol, ops)
    ok, spread = stationarity_check(prof, args.stationarity_tol)
    if args.csv:
        write_csv(
            args.csv,
            ["angle", "u", "du_dnu", "du_dtau", "j"],
            zip(prof.angle, prof.u, prof.du_dnu, prof.du_dtau, prof.j),
        )
    return {
        "problem": args.problem,
        "m": m,
        "mean_j": prof.mean_j,
        "spread": spread,
        "is_stationary": ok,
        "first_variation": {str(k): first_variation(prof, k) for k in (1, 2, 3)},
    }


def cmd_analytic(args) -> dict:
    q = args.query
    if q == "ball-energy":
        c, e = oracles.ball_energy(oracles.BallSpec(args.d, args.radius), args.m)
        return {"c_opt": c, "energy": e}
    if q == "two-balls":
        r = oracles.two_ball_optimum(args.r1, args.r2, args.d, args.m)
        return {"c1": r.c1, "c2": r.c2, "energy": r.energy, "unique": r.unique}
    if q == "interval-lambda":
        lam = oracles.interval_lambda(args.m)
        return {"lambda": lam, "omega": math.sqrt(lam)}
    if q == "disk-lambda":
        try:
            m = parse_mass(args.m, args.radius)
        except ValueError as exc:
            raise UsageError("--m", str(exc)) from exc
        lam = oracles.disk_radial_lambda(args.radius, m)
        return {"lambda": lam, "omega": math.sqrt(lam)}
    if q == "threshold":
        a, b = oracles.threshold_m0(args.radius), oracles.threshold_m0_by_root(args.radius)
        return {"m0": a, "m0_root": b, "agreement": abs(a - b) / a, "lambda_N": oracles.disk_neumann_lambda(args.radius)}
    if q == "bessel-root":
        return {"kind": args.kind, "root": oracles.bessel_root(args.kind)}
    if q == "bessel":
        return {"order": args.order, "x": args.x, "value": oracles.bessel_j(args.order, args.x)}
    # bound
    ns = list(range(1, args.n + 1)) if args.sequence else [args.n]
    seq = [oracles.nonexistence_bound(args.d, args.m, n) for n in ns]
    return {"d": args.d, "m": args.m, "n": ns, "bound": seq}


def cmd_converge(args) -> dict:
    try:
        levels = [int(v) for v in args.levels.split(",")]
        cfg = ConvergenceConfig(args.study, levels, None if args.m is None else parse_mass(args.m, args.radius), args.radius)
    except ValueError as exc:
        raise UsageError("--levels" if "level" in str(exc) else "--study", str(exc)) from exc
    rows = convergence_study(cfg)
    if args.csv:
        write_csv(args.csv, ["level", "h", "quantity", "reference", "error", "rate"],
                  [(r.level, r.h, r.quantity, r.reference, r.error, r.rate) for r in rows])
    return {"study": cfg.study, "rows": [r.as_dict() for r in rows]}


# ----------------------------------------------------------------------
# parser


def _common(p, solver=True):
    p.add_argument("--out", help="write the JSON result here instead of stdout")
    p.add_argument("--csv", help="also write plot-ready CSV data here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp field")
    if solver:
        p.add_argument("--tol", type=_positive, default=None)
        p.add_argument("--max-iter", type=_pos_int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="insulopt", description="Optimal boundary insulation solvers.")
    ap.add_argument("--version", action="version", version=f"insulopt {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate a mesh file")
    gsub = p.add_subparsers(dest="generator", required=True)
    g = gsub.add_parser("interval")
    g.add_argument("--a", type=float, default=-1.0)
    g.add_argument("--b", type=float, default=1.0)
    g.add_argument("--n", type=_pos_int, default=100)
    g = gsub.add_parser("disk")
    g.add_argument("--radius", type=_positive, default=1.0)
    g.add_argument("--refinement", type=int, default=4)
    g = gsub.add_parser("two_disks")
    g.add_argument("--r1", type=_positive, default=0.5)
    g.add_argument("--r2", type=_positive, default=1.0)
    g.add_argument("--separation", type=_positive, default=3.0)
    g.add_argument("--refinement", type=int, default=4)
    g = gsub.add_parser("rectangle")
    g.add_argument("--width", type=_positive, default=1.0)
    g.add_argument("--height", type=_positive, default=1.0)
    g.add_argument("--nx", type=_pos_int, default=16)
    g.add_argument("--ny", type=_pos_int, default=16)
    for g in gsub.choices.values():
        g.add_argument("--mesh-out", "-o", required=True, help="insulmesh file to write")
        g.add_argument("--summary", help="write the JSON summary here instead of stdout")
        g.add_argument("--no-timestamp", action="store_true")
        g.set_defaults(func=cmd_mesh, out=None)

    p = sub.add_parser("energy", help="minimize the total energy")
    p.add_argument("--mesh", required=True, help="insulmesh file or generator spec (disk:1,4)")
    p.add_argument("--m", required=True, help="insulator mass (number or multiple of m0)")
    p.add_argument("--f", default="const:1", help="const:<v> or radial:<profile>")
    p.add_argument("--method", choices=["auto", "surrogate", "alternating"], default="auto")
    p.add_argument("--with-u", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("eigen", help="minimize the first eigenvalue")
    p.add_argument("--mesh", required=True)
    p.add_argument("--m", required=True)
    p.add_argument("--starts", default="default", help="default, or a list like uniform,cap-half,random:3,cap:0:0.3")
    p.add_argument("--with-u", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("threshold", help="estimate the symmetry-breaking mass on a disk")
    p.add_argument("--radius", type=_positive, default=1.0)
    p.add_argument("--refinement", type=int, default=4)
    p.add_argument("--mesh", help="disk mesh (overrides --radius/--refinement)")
    p.add_argument("--bracket", default="auto", help="auto or lo,hi as multiples of m0")
    p.add_argument("--width-tol", type=_positive, default=0.05)
    _common(p)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("shape", help="shape-derivative density and stationarity")
    p.add_argument("--problem", choices=["energy", "eigen"], required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--m", required=True)
    p.add_argument("--f", default="const:1")
    p.add_argument("--starts", default="default")
    p.add_argument("--stationarity-tol", type=_positive, default=1e-2)
    _common(p)
    p.set_defaults(func=cmd_shape)

    p = sub.add_parser("analytic", help="closed-form reference values")
    asub = p.add_subparsers(dest="query", required=True)
    q = asub.add_parser("ball-energy")
    q.add_argument("--d", type=_pos_int, default=2)
    q.add_argument("--radius", type=_positive, default=1.0)
    q.add_argument("--m", type=float, default=1.0)
    q = asub.add_parser("two-balls")
    q.add_argument("--r1", type=_positive, default=0.5)
    q.add_argument("--r2", type=_positive, default=1.0)
    q.add_argument("--d", type=_pos_int, default=2)
    q.add_argument("--m", type=float, default=1.0)
    q = asub.add_parser("interval-lambda")
    q.add_argument("--m", type=_positive, default=2.0)
    q = asub.add_parser("disk-lambda")
    q.add_argument("--radius", type=_positive, default=1.0)
    q.add_argument("--m", default="2m0")
    q = asub.add_parser("threshold")
    q.add_argument("--radius", type=_positive, default=1.0)
    q = asub.add_parser("bessel-root")
    q.add_argument("--kind", choices=["dirichlet_j0", "neumann_j1prime"], default="dirichlet_j0")
    q = asub.add_parser("bessel")
    q.add_argument("--order", type=int, choices=[0, 1], default=0)
    q.add_argument("--x", type=float, required=True)
    q = asub.add_parser("bound")
    q.add_argument("--d", type=int, default=3)
    q.add_argument("--m", type=_positive, default=1.0)
    q.add_argument("--n", type=_pos_int, default=1)
    q.add_argument("--sequence", action="store_true", help="emit the bound for n = 1..N")
    for q in asub.choices.values():
        _common(q, solver=False)
        q.set_defaults(func=cmd_analytic)

    p = sub.add_parser("converge", help="mesh convergence study against an oracle")
    p.add_argument("--study", choices=["disk-energy", "disk-lambda", "interval-lambda"], required=True)
    p.add_argument("--levels", default="2,3,4", help="comma-separated refinement levels")
    p.add_argument("--m", default=None)
    p.add_argument("--radius", type=_positive, default=1.0)
    _common(p, solver=False)
    p.set_defaults(func=cmd_converge)
    return ap


def _fill_defaults(args) -> None:
    # solver tolerances default to the per-problem option defaults
    if getattr(args, "tol", 0) is None:
        args.tol = EnergyOptions().tol if args.command == "energy" else EigenOptions().tol
        if args.command == "shape" and args.problem == "energy":
            args.tol = EnergyOptions().tol
    if getattr(args, "max_iter", 0) is None:
        energy = args.command == "energy" or (args.command == "shape" and args.problem == "energy")
        args.max_iter = EnergyOptions().max_iter if energy else EigenOptions().max_iter


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    _fill_defaults(args)
    try:
        payload = args.func(args)
        _emit(args, payload)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"insulopt: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"insulopt: error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, UndefinedDensityError, BracketError, ShapeError, ArithmeticError, ValueError) as exc:
        print(f"insulopt: solver error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
