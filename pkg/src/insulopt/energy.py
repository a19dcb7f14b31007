"""Optimal insulation for the total energy.

Eliminating the density in closed form leaves the convex problem

    min_u  1/2 u'Ku + 1/(2m) (sum_i w_i |u_i|)^2 - u'Mf,

whose minimizer gives the optimal density ``h = m |u| / sum_j w_j |u_j|``.
For ``f >= 0`` on a connected mesh the trace is nonnegative and the absolute
value can be dropped, leaving one SPD solve with a rank-one boundary term.
Otherwise the solver alternates between Robin solves at fixed ``h`` and the
closed-form density update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import AssembledOperators, ScalarField, boundary_integral
from .linalg import ConvergenceError, pcg

__all__ = [
    "DensityField",
    "EnergyOptions",
    "EnergyProblem",
    "EnergySolution",
    "UndefinedDensityError",
    "solve_energy",
    "optimal_density",
    "el_residual",
    "energy_quotient",
    "discrete_energy",
    "joint_energy",
]

logger = logging.getLogger(__name__)


class UndefinedDensityError(ValueError):
    """The boundary trace vanishes, so every density is optimal."""


@dataclass(frozen=True)
class DensityField:
    """Insulator density on the boundary nodes of ``ops`` (aligned with ``ops.boundary_nodes``)."""

    values: np.ndarray
    total_mass: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if np.any(v < 0):
            raise ValueError("density must be nonnegative")
        object.__setattr__(self, "values", v)

    def mass(self, ops: AssembledOperators) -> float:
        return float(ops.boundary_weights @ self.values)

    def component_mass(self, ops: AssembledOperators, marker: int) -> float:
        ids, wts = ops.components[marker]
        pos = np.searchsorted(ops.boundary_nodes, ids)
        return float(wts @ self.values[pos])


def optimal_density(u, m: float, ops: AssembledOperators) -> DensityField:
    """Closed-form density ``m |u| / int |u|`` minimizing the boundary term."""
    u = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    total = boundary_integral(ops, u)
    scale = np.abs(u[ops.boundary_nodes]).max(initial=0.0)
    if total <= 0.0 or scale == 0.0:
        raise UndefinedDensityError("boundary trace vanishes identically")
    return DensityField(m * np.abs(u[ops.boundary_nodes]) / total, m)


@dataclass
class EnergyOptions:
    tol: float = 1e-10
    max_iter: int = 500
    cg_rtol: float = 1e-10
    h_floor: float = 1e-12
    pin_threshold: float = 1e-8
    method: str = "auto"  # auto | surrogate | alternating
    nonneg_tol: float = 1e-9


@dataclass
class EnergyProblem:
    operators: AssembledOperators
    m: float
    f: np.ndarray
    options: EnergyOptions = field(default_factory=EnergyOptions)
    initial_density: np.ndarray | None = None

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("m must be positive")
        f = self.f.values if isinstance(self.f, ScalarField) else self.f
        f = np.broadcast_to(np.asarray(f, dtype=float), (self.operators.n,)).copy()
        if np.any(f < 0):
            raise ValueError("heat source f must be nonnegative")
        self.f = f

    @property
    def load(self) -> np.ndarray:
        return self.operators.mass @ self.f


@dataclass
class EnergySolution:
    u: ScalarField
    energy: float
    h_opt: DensityField | None
    iterations: int
    el_residual: float
    degenerate_dirichlet: dict
    m: float
    load: np.ndarray
    method: str
    operators: AssembledOperators
    energy_trace: list = field(default_factory=list)

    @property
    def trace(self) -> np.ndarray:
        return self.u.values[self.u.mesh.boundary_nodes]


def discrete_energy(u, ops: AssembledOperators, m: float, load: np.ndarray) -> float:
    """Value of the auxiliary energy functional at ``u``."""
    s = boundary_integral(ops, u)
    return float(0.5 * u @ (ops.stiffness @ u) + s * s / (2.0 * m) - u @ load)


def joint_energy(u, h, ops: AssembledOperators, load: np.ndarray) -> float:
    """``1/2 u'Ku + 1/2 sum w u^2/h - u'Mf`` with ``0/0 = 0`` on pinned nodes."""
    tr = u[ops.boundary_nodes]
    w = ops.boundary_weights
    with np.errstate(divide="ignore", invalid="ignore"):
        bterm = np.where(tr == 0.0, 0.0, w * tr * tr / h)
    return float(0.5 * u @ (ops.stiffness @ u) + 0.5 * bterm.sum() - u @ load)


def _solve_surrogate(problem: EnergyProblem):
    ops = problem.operators
    K = ops.stiffness
    b = ops.b
    m = problem.m
    apply = lambda x: K @ x + b * ((b @ x) / m)
    diag = K.diagonal() + b * b / m
    res = pcg(apply, problem.load, diag, rtol=problem.options.cg_rtol)
    return res


def _robin_solve(ops, h, pinned, load, cg_rtol, x0=None):
    """Solve ``(K + diag(w/h)) u = Mf`` with ``u = 0`` on pinned boundary nodes."""
    n = ops.n
    bn = ops.boundary_nodes
    d = np.zeros(n)
    free_b = ~pinned
    d[bn[free_b]] = ops.boundary_weights[free_b] / h[free_b]
    keep = np.ones(n, dtype=bool)
    keep[bn[pinned]] = False
    A = (ops.stiffness + sp.diags(d)).tocsr()[keep][:, keep]
    rhs = load[keep]
    res = pcg(lambda x: A @ x, rhs, A.diagonal(), x0=None if x0 is None else x0[keep], rtol=cg_rtol)
    u = np.zeros(n)
    u[keep] = res.x
    return u, res


def _alternating(problem: EnergyProblem):
    ops = problem.operators
    opt = problem.options
    m = problem.m
    load = problem.load
    w = ops.boundary_weights
    P = ops.perimeter
    if problem.initial_density is not None:
        h = np.asarray(problem.initial_density, dtype=float).copy()
        h *= m / (w @ h)
    else:
        h = np.full(len(w), m / P)
    floor = opt.h_floor * m / P
    pin_level = opt.pin_threshold * m / P
    pinned = h < pin_level
    h = np.maximum(h, floor)
    trace = []
    u = None
    history = []
    for it in range(1, opt.max_iter + 1):
        u, res = _robin_solve(ops, h, pinned, load, opt.cg_rtol, x0=u)
        if not res.converged:
            raise ConvergenceError(f"Robin solve failed at iteration {it}", trace)
        trace.append(joint_energy(u, h, ops, load))
        tr = np.abs(u[ops.boundary_nodes])
        tr[pinned] = 0.0
        s = w @ tr
        if s <= 0.0:
            # trace vanished: h is irrelevant, the Dirichlet solution is optimal
            trace.append(trace[-1])
            return u, it, trace
        h_new = m * tr / s
        pinned = pinned | (h_new < pin_level)
        h = np.maximum(h_new, floor)
        h[pinned] = floor
        e = discrete_energy(u, ops, m, load)
        trace.append(e)
        history.append(e)
        if len(history) >= 3:
            scale = max(abs(history[-1]), 1e-300)
            if (
                abs(history[-1] - history[-2]) < opt.tol * scale
                and abs(history[-2] - history[-3]) < opt.tol * scale
            ):
                return u, it, trace
    raise ConvergenceError(f"alternating energy minimization did not converge in {opt.max_iter} iterations", trace)


def solve_energy(problem: EnergyProblem) -> EnergySolution:
    """Minimize the auxiliary energy and recover the optimal density."""
    ops = problem.operators
    opt = problem.options
    m = problem.m
    load = problem.load
    mesh = ops.mesh
    method = opt.method
    if method not in ("auto", "surrogate", "alternating"):
        raise ValueError(f"unknown method {method!r}")
    use_fast = method == "surrogate" or (
        method == "auto" and mesh.component_count == 1 and problem.initial_density is None
    )
    u = None
    iterations = 0
    trace: list = []
    used = "alternating"
    if use_fast:
        res = _solve_surrogate(problem)
        scale = np.abs(res.x).max(initial=0.0)
        if res.converged and np.all(res.x >= -opt.nonneg_tol * max(scale, 1e-300)):
            u = res.x
            iterations = res.iterations
            used = "surrogate"
            trace = [discrete_energy(u, ops, m, load)]
        elif method == "surrogate":
            raise ConvergenceError("surrogate solve failed or produced a sign-changing trace")
        else:
            logger.info("surrogate path rejected (converged=%s); switching to alternating", res.converged)
    if u is None:
        if not np.any(load > 0):
            u = np.zeros(ops.n)
            trace = [0.0]
        else:
            u, iterations, trace = _alternating(problem)
    energy = discrete_energy(u, ops, m, load)
    field_u = ScalarField(mesh, u)
    degenerate = {}
    for mk in mesh.component_markers:
        s = boundary_integral(ops, u, mk)
        degenerate[mk] = bool(s <= 1e-14 * max(np.abs(u).max(initial=0.0), 1e-300) * ops.component_perimeter(mk))
    try:
        h_opt = optimal_density(u, m, ops)
    except UndefinedDensityError:
        h_opt = None
    sol = EnergySolution(
        u=field_u,
        energy=energy,
        h_opt=h_opt,
        iterations=iterations,
        el_residual=np.inf,
        degenerate_dirichlet=degenerate,
        m=m,
        load=load,
        method=used,
        operators=ops,
        energy_trace=trace,
    )
    sol.el_residual = el_residual(sol, problem)
    return sol


def normal_derivative(u, ops: AssembledOperators, residual_rhs: np.ndarray) -> np.ndarray:
    """Discrete ``du/dnu`` on boundary nodes: ``(Ku - rhs)_i / w_i``."""
    r = ops.stiffness @ u - residual_rhs
    return r[ops.boundary_nodes] / ops.boundary_weights


def el_residual(solution: EnergySolution, problem: EnergyProblem | None = None) -> float:
    """Max deviation of ``du/dnu`` from ``-int f / |dOmega|`` on positive-trace components.

    Returns ``inf`` when no component has a strictly positive trace.
    """
    ops = solution.operators
    u = solution.u.values
    load = solution.load
    g = normal_derivative(u, ops, load)
    bn = ops.boundary_nodes
    scale = np.abs(u).max(initial=0.0)
    worst = -np.inf
    for mk, (ids, wts) in ops.components.items():
        if scale == 0.0 or np.any(u[ids] <= 1e-12 * scale):
            continue
        pos = np.searchsorted(bn, ids)
        nodes = ops.component_nodes(mk)
        target = -load[nodes].sum() / wts.sum()
        worst = max(worst, float(np.abs(g[pos] - target).max()))
    return worst if worst > -np.inf else np.inf


def energy_quotient(u, f, m: float, ops: AssembledOperators) -> float:
    """Scale-free form ``(u'Ku + (int|u|)^2/m) / (u'Mf)^2``."""
    u = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    f = np.broadcast_to(np.asarray(f.values if isinstance(f, ScalarField) else f, dtype=float), u.shape)
    den = u @ (ops.mass @ f)
    if den == 0.0:
        raise ZeroDivisionError("int f u vanishes")
    s = boundary_integral(ops, u)
    return float((u @ (ops.stiffness @ u) + s * s / m) / den**2)
