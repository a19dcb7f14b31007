"""Optimal insulation for the first eigenvalue.

The density is eliminated exactly as in the energy case, leaving the
quotient

    J_m(u) = (u'Ku + (sum_i w_i |u_i|)^2 / m) / u'Mu.

Its minimizer is found per start by alternating Robin eigensolves at fixed
``h`` with the closed-form update ``h = m u / sum w u``.  Boundary nodes whose
density collapses are pinned to zero; once the pinned set settles, an active
set step solves the rank-one eigenproblem with that zero set directly and
checks the complementarity conditions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .energy import DensityField
from .fem import AssembledOperators, ScalarField, boundary_integral
from .linalg import ConvergenceError, smallest_eigenpair
from .symmetry import boundary_angles, density_stats

__all__ = [
    "StartSpec",
    "default_starts",
    "EigenOptions",
    "EigenProblem",
    "StartResult",
    "EigenSolution",
    "solve_robin_eigen",
    "solve_eigen",
    "rayleigh_quotient",
    "neumann_eigen",
    "dirichlet_eigen",
    "neumann_comparison",
    "NeumannComparison",
    "initial_density",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StartSpec:
    """Initial density: ``uniform``, ``cap`` (centered at ``angle``, covering
    ``fraction`` of the circle) or ``random`` (seeded)."""

    kind: str = "uniform"
    angle: float = 0.0
    fraction: float = 0.5
    seed: int = 0
    scale: float = 1.0
    name: str | None = None

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "cap":
            return f"cap({self.angle:.4g},{self.fraction:.4g})"
        if self.kind == "random":
            return f"random({self.seed})"
        return self.kind


def default_starts(seed: int = 0) -> list[StartSpec]:
    return [
        StartSpec("uniform", name="uniform"),
        StartSpec("cap", fraction=0.5, name="cap-half"),
        StartSpec("cap", fraction=0.25, name="cap-quarter"),
        StartSpec("random", seed=seed, name=f"random({seed})"),
    ]


def initial_density(start: StartSpec, ops: AssembledOperators, m: float) -> np.ndarray:
    nb = len(ops.boundary_nodes)
    if start.kind == "uniform":
        h = np.ones(nb)
    elif start.kind == "cap":
        th = boundary_angles(ops)
        dist = np.abs(np.angle(np.exp(1j * (th - start.angle))))
        h = np.where(dist <= math.pi * start.fraction + 1e-12, 1.0, 1e-3)
    elif start.kind == "random":
        rng = np.random.default_rng(start.seed)
        h = np.exp(2.0 * rng.standard_normal(nb))
    else:
        raise ValueError(f"unknown start kind {start.kind!r}")
    h = start.scale * h
    return h * (m / (ops.boundary_weights @ h))


@dataclass
class EigenOptions:
    tol: float = 1e-9
    max_iter: int = 300
    inner_tol: float = 1e-10
    pin_threshold: float = 1e-8
    h_floor: float = 1e-12
    max_set_changes: int = 50
    polish_every: int = 20
    kkt_tol: float = 1e-6
    kkt_accept: float = 1e-2
    candidate_threshold: float = 1e-3


@dataclass
class EigenProblem:
    operators: AssembledOperators
    m: float
    starts: list = field(default_factory=default_starts)
    options: EigenOptions | None = None

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("m must be positive")
        if not self.starts:
            raise ValueError("at least one start is required")
        if self.options is None:
            self.options = EigenOptions()


@dataclass
class StartResult:
    start: StartSpec
    lam: float
    cv: float
    fourier1_ratio: float
    zero_set_fraction: float
    iterations: int
    polished: bool
    lam_trace: list = field(default_factory=list)
    u: np.ndarray | None = None
    error: str | None = None

    def as_dict(self) -> dict:
        return {
            "name": self.start.label,
            "lambda": self.lam,
            "cv": self.cv,
            "fourier1_ratio": self.fourier1_ratio,
            "zero_set_fraction": self.zero_set_fraction,
            "iterations": self.iterations,
            "polished": self.polished,
            "error": self.error,
        }


@dataclass
class EigenSolution:
    lam: float
    u: ScalarField
    h_opt: DensityField
    per_start: list
    zero_set_fraction: float
    m: float
    operators: AssembledOperators
    kkt_equality: float = math.nan
    kkt_inequality: float = math.nan
    best_index: int = 0


# ----------------------------------------------------------------------


def rayleigh_quotient(u, m: float, ops: AssembledOperators) -> float:
    """Discrete ``J_m(u)``."""
    u = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    den = u @ (ops.mass @ u)
    if not den > 0:
        raise ZeroDivisionError("u has zero L2 norm")
    s = boundary_integral(ops, u)
    return float((u @ (ops.stiffness @ u) + s * s / m) / den)


def _restricted(ops, pinned):
    keep = np.ones(ops.n, dtype=bool)
    keep[ops.boundary_nodes[pinned]] = False
    return keep


def solve_robin_eigen(ops: AssembledOperators, h, dirichlet_mask=None, x0=None, tol: float = 1e-10):
    """Smallest eigenpair of ``(K + diag(w/h)) u = lam M u``.

    ``h`` lives on the boundary nodes; ``inf`` entries give a Neumann
    condition.  Nodes flagged in ``dirichlet_mask`` (boundary-node aligned)
    are pinned to zero.  The eigenvector is M-normalized with nonnegative
    mean.
    """
    h = np.asarray(getattr(h, "values", h), dtype=float)
    nb = len(ops.boundary_nodes)
    if h.shape != (nb,):
        raise ValueError("h must have one value per boundary node")
    pinned = np.zeros(nb, dtype=bool) if dirichlet_mask is None else np.asarray(dirichlet_mask, dtype=bool)
    if np.any(h < 0):
        raise ValueError("h must be nonnegative")
    if np.any((h == 0) & ~pinned):
        raise ValueError("zero density requires the node to be in the Dirichlet mask")
    d = np.zeros(ops.n)
    free = ~pinned
    with np.errstate(divide="ignore"):
        d[ops.boundary_nodes[free]] = np.where(np.isinf(h[free]), 0.0, ops.boundary_weights[free] / h[free])
    keep = _restricted(ops, pinned)
    A = (ops.stiffness + sp.diags(d)).tocsr()[keep][:, keep]
    M = ops.mass[keep][:, keep]
    start = None if x0 is None else np.asarray(x0, dtype=float)[keep]
    res = smallest_eigenpair(A, M, x0=start, tol=tol)
    u = np.zeros(ops.n)
    u[keep] = res.vector
    if u.sum() < 0:
        u = -u
    return res.value, u


def _normal_flux(ops, u, lam):
    r = ops.stiffness @ u - lam * (ops.mass @ u)
    return r[ops.boundary_nodes] / ops.boundary_weights


def _kkt(ops, u, lam, m, pinned):
    """Relative violation of the boundary optimality system at ``u >= 0``."""
    g = _normal_flux(ops, u, lam)
    s = ops.boundary_weights @ u[ops.boundary_nodes]
    target = -s / m
    pos = ~pinned
    eq = float(np.abs(g[pos] - target).max() / abs(target)) if pos.any() and target != 0 else 0.0
    ineq = float(np.maximum(target - g[pinned], 0.0).max() / abs(target)) if pinned.any() and target != 0 else 0.0
    return eq, ineq, g, target


def _polish(ops, m, u, pinned, opt: EigenOptions):
    """Active-set refinement; returns ``(lam, u, pinned)`` or ``None``.

    Set changes are made in bulk until a pinned set repeats, then one node at
    a time (the worst offender).  If that cycles too, the relaxed rank-one
    problem cannot settle the last nodes; the best admissible point seen is
    returned when its complementarity violation is below ``kkt_accept``.
    """
    w = ops.boundary_weights
    bn = ops.boundary_nodes
    pinned = pinned.copy()
    lam_est = rayleigh_quotient(u, m, ops)
    seen = set()
    single = False
    best = None

    def fallback(reason):
        if best is not None and best[3] <= opt.kkt_accept:
            logger.debug("polish: %s; accepting point with violation %.3g", reason, best[3])
            return best[:3]
        logger.debug("polish: %s", reason)
        return None

    for _ in range(opt.max_set_changes):
        key = pinned.tobytes()
        if key in seen:
            if single:
                return fallback("active set cycles")
            single = True
            seen.clear()
        seen.add(key)
        keep = _restricted(ops, pinned)
        K = ops.stiffness[keep][:, keep]
        M = ops.mass[keep][:, keep]
        c_full = np.zeros(ops.n)
        c_full[bn[~pinned]] = w[~pinned] / math.sqrt(m)
        c = c_full[keep]
        try:
            res = smallest_eigenpair(
                K, M, x0=u[keep], rank_one=c, tol=opt.inner_tol, shift=lam_est * (1 - 1e-4), maxiter=60
            )
        except (ConvergenceError, RuntimeError) as exc:
            return fallback(f"restricted eigensolve failed ({exc})")
        v = np.zeros(ops.n)
        v[keep] = res.vector
        if v @ c_full < 0:
            v = -v
        scale = np.abs(v).max()
        if np.any(v < -1e-8 * scale):
            neg_b = (v[bn] < -1e-10 * scale) & ~pinned
            if not neg_b.any():
                # sign change in the interior: not an admissible minimizer
                return fallback(f"interior sign change with {int(pinned.sum())} pinned")
            if single:
                neg_b = np.arange(len(bn)) == np.argmin(np.where(neg_b, v[bn], np.inf))
            pinned |= neg_b
            u = np.abs(v)
            continue
        v = np.maximum(v, 0.0)
        lam = res.value
        eq, ineq, g, target = _kkt(ops, v, lam, m, pinned)
        if eq < opt.kkt_tol and (best is None or lam < best[0]):
            best = (lam, v, pinned.copy(), ineq)
        viol = pinned & (g < target * (1 + opt.kkt_tol))
        lowtrace = ~pinned & (v[bn] <= 1e-10 * scale)
        if viol.any():
            if single:
                viol = np.arange(len(bn)) == np.argmin(np.where(viol, g, np.inf))
            pinned &= ~viol
            u = v
            lam_est = lam
            continue
        if lowtrace.any() and not (pinned | lowtrace).all():
            pinned |= lowtrace
            u = v
            continue
        return lam, v, pinned
    return fallback(f"no settled active set after {opt.max_set_changes} changes")


def _polish_ladder(ops, m, u, h, pinned, levels, lam_j, opt: EigenOptions, allow_empty: bool = False):
    """Try the active-set polish with growing candidate zero sets.

    Low-density nodes are candidates; the polish unpins any node that violates
    the sign condition, so an oversized set is corrected.  Midway through a
    run an empty set is skipped, since it can only return the all-positive
    point and would capture starts still heading elsewhere.  The first result
    that does not raise the quotient is accepted.
    """
    tried = None
    for level in levels:
        cand = pinned | (h < level)
        if (not cand.any() and not allow_empty) or (tried is not None and np.array_equal(cand, tried)):
            continue
        tried = cand
        got = _polish(ops, m, u, cand, opt)
        if got is not None and got[0] <= lam_j * (1 + 1e-12):
            return got
    return None


def _run_start(problem: EigenProblem, start: StartSpec) -> StartResult:
    ops = problem.operators
    opt = problem.options
    m = problem.m
    w = ops.boundary_weights
    P = ops.perimeter
    pin_level = opt.pin_threshold * m / P
    cand_levels = [f * opt.candidate_threshold * m / P for f in (1.0, 10.0, 100.0, 300.0)]
    floor = opt.h_floor * m / P
    h = initial_density(start, ops, m)
    pinned = h < pin_level
    h = np.maximum(h, floor)
    u = np.ones(ops.n)
    trace = []
    history = []
    converged = False
    polished = False
    it = 0
    lam_j = math.inf
    for it in range(1, opt.max_iter + 1):
        lam_h, u = solve_robin_eigen(ops, h, pinned, x0=u, tol=opt.inner_tol)
        u = np.abs(u)
        lam_j = rayleigh_quotient(u, m, ops)
        trace += [lam_h, lam_j]
        tr = u[ops.boundary_nodes].copy()
        tr[pinned] = 0.0
        h_new = m * tr / (w @ tr)
        pinned = pinned | (h_new < pin_level)
        h = np.maximum(h_new, floor)
        history.append(lam_j)
        if len(history) >= 2 and abs(history[-1] - history[-2]) < opt.tol * history[-1]:
            converged = True
            break
        if opt.polish_every and it % opt.polish_every == 0:
            got = _polish_ladder(ops, m, u, h, pinned, cand_levels, lam_j, opt)
            if got is not None:
                lam_j, u, pinned = got
                trace.append(lam_j)
                polished = True
                break
    if not polished:
        got = _polish_ladder(ops, m, u, h, pinned, cand_levels, lam_j, opt, allow_empty=True)
        if got is not None:
            lam_j, u, pinned = got
            trace.append(lam_j)
            polished = True
    if not (converged or polished):
        raise ConvergenceError(f"start {start.label}: no convergence in {opt.max_iter} iterations", trace)
    u = u / math.sqrt(u @ (ops.mass @ u))
    lam = rayleigh_quotient(u, m, ops)
    tr = u[ops.boundary_nodes]
    hvals = m * tr / (w @ tr)
    hvals[pinned] = 0.0
    cv, ratio, zero = density_stats(ops, hvals, pin_level)
    return StartResult(start, lam, cv, ratio, zero, it, polished, trace, u)


def solve_eigen(problem: EigenProblem) -> EigenSolution:
    """Best minimizer of the eigenvalue quotient over all starts."""
    ops = problem.operators
    results = []
    for start in problem.starts:
        try:
            results.append(_run_start(problem, start))
        except ConvergenceError as exc:
            logger.warning("%s", exc)
            results.append(StartResult(start, math.inf, math.nan, math.nan, math.nan, 0, False, exc.history, None, str(exc)))
    ok = [k for k, r in enumerate(results) if r.u is not None]
    if not ok:
        raise ConvergenceError("all starts failed", [r.error for r in results])
    best = min(ok, key=lambda k: (results[k].lam, k))
    r = results[best]
    u = r.u
    m = problem.m
    w = ops.boundary_weights
    tr = u[ops.boundary_nodes]
    pin_level = problem.options.pin_threshold * m / ops.perimeter
    hvals = m * tr / (w @ tr)
    pinned = hvals < pin_level
    hvals[pinned] = 0.0
    eq, ineq, _, _ = _kkt(ops, u, r.lam, m, pinned)
    return EigenSolution(
        lam=r.lam,
        u=ScalarField(ops.mesh, u),
        h_opt=DensityField(hvals, m),
        per_start=results,
        zero_set_fraction=r.zero_set_fraction,
        m=m,
        operators=ops,
        kkt_equality=eq,
        kkt_inequality=ineq,
        best_index=best,
    )


# ----------------------------------------------------------------------
# reference spectra on the same mesh


def _component_indicators(ops):
    markers = ops.mesh.node_markers()
    return [(markers == mk).astype(float) for mk in ops.mesh.component_markers]


def neumann_eigen(ops: AssembledOperators, align_with=None, tol: float = 1e-11):
    """First nonzero Neumann eigenpair, deflating the locally constant functions.

    When the eigenvalue is degenerate (the disk), starting from ``align_with``
    returns the eigenfunction in the direction of that field's projection.
    """
    M = ops.mass
    consts = _component_indicators(ops)
    if align_with is not None:
        x0 = np.asarray(getattr(align_with, "values", align_with), dtype=float)
    else:
        x0 = ops.mesh.nodes[:, 0] - ops.mesh.nodes[:, 0].mean()
    res = smallest_eigenpair(ops.stiffness, M, x0=x0, tol=tol, deflate=consts, rayleigh=False, maxiter=2000)
    v = res.vector
    if align_with is not None and v @ (M @ x0) < 0:
        v = -v
    return res.value, v


def dirichlet_eigen(ops: AssembledOperators, tol: float = 1e-11):
    """First Dirichlet eigenpair (all boundary nodes pinned)."""
    nb = len(ops.boundary_nodes)
    return solve_robin_eigen(ops, np.zeros(nb), np.ones(nb, dtype=bool), tol=tol)


@dataclass
class NeumannComparison:
    lhs: float
    rhs: float
    discrepancy: float


def neumann_comparison(u, lam: float, ops: AssembledOperators, v, lam_v: float) -> NeumannComparison:
    """Both sides of ``(lam - lam_v) int u v = -int_{dOmega} (du/dnu) v``.

    ``du/dnu`` is the variational flux ``Ku - lam Mu`` of ``u``; ``v`` is a
    Neumann eigenfunction with eigenvalue ``lam_v`` (``v = const``, ``lam_v = 0``
    reduces the identity to the divergence theorem).
    """
    u = np.asarray(getattr(u, "values", u), dtype=float)
    v = np.broadcast_to(np.asarray(getattr(v, "values", v), dtype=float), u.shape)
    lhs = (lam - lam_v) * float(u @ (ops.mass @ v))
    flux = ops.stiffness @ u - lam * (ops.mass @ u)
    bn = ops.boundary_nodes
    rhs = -float(flux[bn] @ v[bn])
    return NeumannComparison(lhs, rhs, abs(lhs - rhs))
