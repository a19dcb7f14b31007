"""Symmetry diagnostics of optimal densities and threshold estimation on the disk."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import oracles
from .fem import AssembledOperators, assemble

__all__ = [
    "SymmetryError",
    "BracketError",
    "SymmetryReport",
    "ThresholdOptions",
    "ThresholdResult",
    "ProbeRecord",
    "CurvePoint",
    "boundary_angles",
    "disk_geometry",
    "density_stats",
    "classify",
    "symmetry_report",
    "estimate_m0_fem",
    "lambda_curve",
]

logger = logging.getLogger(__name__)

RADIAL_CV = 0.02
NONRADIAL_CV = 0.1


class SymmetryError(ValueError):
    """The mesh is not a single disk."""


class BracketError(ValueError):
    pass


def boundary_angles(ops: AssembledOperators) -> np.ndarray:
    """Polar angle of each boundary node about the boundary centroid."""
    x = ops.mesh.nodes[ops.boundary_nodes]
    if ops.mesh.dim == 1:
        c = x[:, 0].mean()
        return np.where(x[:, 0] >= c, 0.0, math.pi)
    c = x.mean(axis=0)
    return np.arctan2(x[:, 1] - c[1], x[:, 0] - c[0])


def disk_geometry(ops: AssembledOperators, rtol: float = 1e-8) -> tuple[np.ndarray, float]:
    """Center and radius of a single-disk mesh; raises :class:`SymmetryError` otherwise."""
    mesh = ops.mesh
    if mesh.dim != 2 or mesh.component_count != 1:
        raise SymmetryError("symmetry diagnostics need a single 2D disk")
    x = mesh.nodes[ops.boundary_nodes]
    c = x.mean(axis=0)
    r = np.linalg.norm(x - c, axis=1)
    if r.max() - r.min() > rtol * r.mean():
        raise SymmetryError("boundary nodes are not co-circular")
    return c, float(r.mean())


def density_stats(ops: AssembledOperators, h: np.ndarray, zero_level: float) -> tuple[float, float, float]:
    """``(cv, fourier_ratio, zero_fraction)`` of a boundary density.

    The coefficient of variation and the Fourier coefficients are weighted by
    the lumped boundary measure; ``fourier_ratio = |c_1| / c_0`` with ``c_k``
    the complex angular Fourier coefficients.
    """
    w = ops.boundary_weights
    h = np.asarray(h, dtype=float)
    total = w @ h
    per = w.sum()
    mean = total / per
    cv = float(np.sqrt(w @ (h - mean) ** 2 / per) / mean) if mean > 0 else math.inf
    th = boundary_angles(ops)
    c1 = abs(np.sum(w * h * np.exp(1j * th)))
    ratio = float(c1 / total) if total > 0 else math.inf
    zero = float(w[h < zero_level].sum() / per)
    return cv, ratio, zero


def classify(cv: float, radial_cv: float = RADIAL_CV, nonradial_cv: float = NONRADIAL_CV) -> str:
    if cv < radial_cv:
        return "radial"
    if cv > nonradial_cv:
        return "nonradial"
    return "indeterminate"


@dataclass
class SymmetryReport:
    cv: float
    fourier_ratio: float
    zero_fraction: float
    classification: str

    def as_dict(self) -> dict:
        return {
            "cv": self.cv,
            "fourier_ratio": self.fourier_ratio,
            "zero_fraction": self.zero_fraction,
            "classification": self.classification,
        }


def symmetry_report(
    solution,
    ops: AssembledOperators,
    radial_cv: float = RADIAL_CV,
    nonradial_cv: float = NONRADIAL_CV,
    pin_threshold: float = 1e-8,
) -> SymmetryReport:
    """Rotation-invariant description of ``solution.h_opt`` on a disk mesh.

    ``solution`` may be an eigen or energy solution, a :class:`DensityField`
    or a plain array of boundary values.
    """
    disk_geometry(ops)
    h = getattr(solution, "h_opt", solution)
    if h is None:
        raise ValueError("solution has no optimal density")
    m = getattr(h, "total_mass", None)
    h = np.asarray(getattr(h, "values", h), dtype=float)
    if m is None:
        m = float(ops.boundary_weights @ h)
    zero_level = pin_threshold * m / ops.perimeter
    cv, ratio, zero = density_stats(ops, h, zero_level)
    return SymmetryReport(cv, ratio, zero, classify(cv, radial_cv, nonradial_cv))


# ----------------------------------------------------------------------
# threshold estimation


@dataclass
class ThresholdOptions:
    bracket: tuple[float, float] = (0.3, 3.0)  # multiples of the oracle threshold
    width_tol: float = 0.05
    max_probes: int = 12
    eigen_options: object = None
    seed: int = 0


@dataclass
class ProbeRecord:
    m: float
    classification: str
    lam_best: float
    lam_radial: float
    cv: float
    method: str = "cv"

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ThresholdResult:
    m0_oracle: float
    m0_fem: float
    bracket: tuple[float, float]
    m0_neumann_crossing: float
    lam_neumann: float
    probes: list = field(default_factory=list)
    mesh_summary: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "m0_oracle": self.m0_oracle,
            "m0_fem": self.m0_fem,
            "bracket": list(self.bracket),
            "m0_neumann_crossing": self.m0_neumann_crossing,
            "lam_neumann": self.lam_neumann,
            "probes": [p.as_dict() for p in self.probes],
            "mesh": self.mesh_summary,
        }


def _seed_for(m: float, base: int) -> int:
    return (int(round(m * 1e6)) + 7919 * base) % (2**31 - 1)


def _probe(ops, m, R, opts, refined_ops=None, mesh_tol=None) -> ProbeRecord:
    from .eigen import EigenProblem, default_starts, solve_eigen

    sol = solve_eigen(EigenProblem(ops, m, default_starts(_seed_for(m, opts.seed)), options=opts.eigen_options))
    lam_rad = oracles.disk_radial_lambda(R, m)
    rep = symmetry_report(sol, ops)
    rec = ProbeRecord(m, rep.classification, sol.lam, lam_rad, rep.cv)
    if rec.classification == "indeterminate" and refined_ops is not None:
        sol = solve_eigen(
            EigenProblem(refined_ops, m, default_starts(_seed_for(m, opts.seed)), options=opts.eigen_options)
        )
        rep = symmetry_report(sol, refined_ops)
        rec = ProbeRecord(m, rep.classification, sol.lam, lam_rad, rep.cv, "refined-cv")
        if rec.classification == "indeterminate":
            gap = (lam_rad - sol.lam) / lam_rad
            tol = mesh_tol if mesh_tol is not None else 1e-3
            rec.classification = "nonradial" if gap > 10 * tol else "radial"
            rec.method = "lambda-gap"
    return rec


def _mesh_tolerance(ops, R, m, opts) -> float:
    from .eigen import EigenProblem, StartSpec, solve_eigen

    sol = solve_eigen(EigenProblem(ops, m, [StartSpec("uniform")], options=opts.eigen_options))
    lam = oracles.disk_radial_lambda(R, m)
    return abs(sol.lam - lam) / lam


def estimate_m0_fem(mesh, options: ThresholdOptions | None = None, refined_mesh=None) -> ThresholdResult:
    """Bisect on the symmetry classification of the best multi-start minimizer."""
    from .eigen import neumann_eigen

    opts = options or ThresholdOptions()
    ops = mesh if isinstance(mesh, AssembledOperators) else assemble(mesh)
    _, R = disk_geometry(ops)
    m0 = oracles.threshold_m0(R)
    if abs(m0 - oracles.threshold_m0_by_root(R)) > 1e-9 * m0:
        raise RuntimeError("threshold oracle paths disagree")
    refined_ops = None
    if refined_mesh is not None:
        refined_ops = refined_mesh if isinstance(refined_mesh, AssembledOperators) else assemble(refined_mesh)
    mesh_tol = _mesh_tolerance(ops, R, 2.0 * m0, opts)
    lam_n, _ = neumann_eigen(ops)
    lo, hi = opts.bracket[0] * m0, opts.bracket[1] * m0
    probes = []
    rec_lo = _probe(ops, lo, R, opts, refined_ops, mesh_tol)
    rec_hi = _probe(ops, hi, R, opts, refined_ops, mesh_tol)
    probes += [rec_lo, rec_hi]
    if rec_lo.classification != "nonradial" or rec_hi.classification != "radial":
        raise BracketError(
            f"bracket [{lo:.4g}, {hi:.4g}] does not straddle the threshold "
            f"({rec_lo.classification} / {rec_hi.classification}); try a wider bracket"
        )
    while hi - lo >= opts.width_tol * m0 and len(probes) < opts.max_probes:
        mid = 0.5 * (lo + hi)
        rec = _probe(ops, mid, R, opts, refined_ops, mesh_tol)
        probes.append(rec)
        logger.info("probe m=%.6g -> %s (lambda %.8g)", mid, rec.classification, rec.lam_best)
        if rec.classification == "nonradial":
            lo = mid
        else:
            hi = mid
    crossing = _neumann_crossing(probes, lam_n)
    summary = {"nodes": ops.n, "boundary_nodes": len(ops.boundary_nodes), "radius": R, "mesh_tolerance": mesh_tol}
    return ThresholdResult(m0, 0.5 * (lo + hi), (lo, hi), crossing, lam_n, probes, summary)


def _neumann_crossing(probes, lam_n) -> float:
    pts = sorted((p.m, p.lam_best - lam_n) for p in probes)
    for (m1, g1), (m2, g2) in zip(pts, pts[1:]):
        if g1 > 0 >= g2:
            return m1 + (m2 - m1) * g1 / (g1 - g2)
    return math.nan


@dataclass
class CurvePoint:
    m: float
    lam_best: float
    lam_radial: float
    cv: float
    classification: str

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def lambda_curve(mesh, m_grid, eigen_options=None, seed: int = 0) -> list[CurvePoint]:
    """Best multi-start eigenvalue against the radial oracle along ``m_grid``."""
    from .eigen import EigenProblem, default_starts, solve_eigen

    grid = [float(m) for m in m_grid]
    if any(m <= 0 for m in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("m_grid must be positive and strictly increasing")
    ops = mesh if isinstance(mesh, AssembledOperators) else assemble(mesh)
    _, R = disk_geometry(ops)
    out = []
    for m in grid:
        try:
            sol = solve_eigen(EigenProblem(ops, m, default_starts(_seed_for(m, seed)), options=eigen_options))
        except Exception as exc:
            exc.args = (f"at m={m:.6g}: {exc}",) + exc.args[1:]
            raise
        rep = symmetry_report(sol, ops)
        out.append(CurvePoint(m, sol.lam, oracles.disk_radial_lambda(R, m), rep.cv, rep.classification))
    return out
