"""Boundary shape-derivative density and stationarity checks.

For a computed optimum the first variation of the objective under a normal
boundary perturbation ``V . nu`` is an integral of a density ``j`` over the
boundary.  With ``S = int u`` on the boundary and ``H`` the curvature,

    eigen:   j = |u_tau|^2 - |u_nu|^2 - lam u^2 + (2/m) S H u
    energy:  j = |u_tau|^2 - |u_nu|^2 - u     + (2/m) S H u

A domain is stationary when ``j`` is constant, since then every
volume-preserving perturbation has zero first variation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .energy import EnergySolution
from .eigen import EigenSolution, rayleigh_quotient
from .fem import AssembledOperators
from .symmetry import boundary_angles

__all__ = [
    "ShapeError",
    "BoundaryProfile",
    "boundary_cycles",
    "boundary_curvature",
    "boundary_profile",
    "stationarity_check",
    "first_variation",
]


class ShapeError(ValueError):
    pass


@dataclass
class BoundaryProfile:
    """Boundary quantities aligned with ``ops.boundary_nodes``."""

    kind: str  # "energy" or "eigen"
    nodes: np.ndarray
    weights: np.ndarray
    angle: np.ndarray
    u: np.ndarray
    du_dnu: np.ndarray
    du_dtau: np.ndarray
    curvature: np.ndarray
    j: np.ndarray
    m: float
    lam: float = math.nan

    @property
    def mean_j(self) -> float:
        return float(self.weights @ self.j / self.weights.sum())

    def summary(self, tol: float = 1e-2) -> dict:
        ok, spread = stationarity_check(self, tol)
        return {"mean_j": self.mean_j, "spread": spread, "is_stationary": ok}


def boundary_cycles(mesh) -> list[np.ndarray]:
    """Boundary nodes of a 2D mesh grouped into closed, counterclockwise cycles."""
    if mesh.dim != 2:
        raise ShapeError("boundary cycles need a 2D mesh")
    nxt = {}
    for a, b in mesh.boundary:
        if a in nxt:
            raise ShapeError(f"boundary node {a} has two outgoing facets")
        nxt[int(a)] = int(b)
    seen = set()
    cycles = []
    for s in sorted(nxt):
        if s in seen:
            continue
        cyc = [s]
        seen.add(s)
        k = nxt[s]
        while k != s:
            if k in seen or k not in nxt:
                raise ShapeError("boundary facets do not form closed loops")
            cyc.append(k)
            seen.add(k)
            k = nxt[k]
        cyc = np.array(cyc)
        x = mesh.nodes[cyc]
        # shoelace: an outer boundary traversed clockwise gets reversed
        area = 0.5 * np.sum(x[:, 0] * np.roll(x[:, 1], -1) - np.roll(x[:, 0], -1) * x[:, 1])
        if area < 0:
            cyc = cyc[::-1]
        cycles.append(cyc)
    return cycles


def _circumcurvature(p0, p1, p2) -> np.ndarray:
    a = np.linalg.norm(p1 - p0, axis=1)
    b = np.linalg.norm(p2 - p1, axis=1)
    c = np.linalg.norm(p2 - p0, axis=1)
    cross = (p1 - p0)[:, 0] * (p2 - p0)[:, 1] - (p1 - p0)[:, 1] * (p2 - p0)[:, 0]
    return 2.0 * cross / (a * b * c)


def boundary_curvature(ops: AssembledOperators) -> np.ndarray:
    """Signed curvature at each boundary node from the circle through it and its neighbours.

    Nodes placed on an exact circle of radius ``R`` get ``1/R``; straight
    boundary pieces get 0.  In 1D the boundary is a point set and ``H = 0``.
    """
    mesh = ops.mesh
    nb = len(ops.boundary_nodes)
    if mesh.dim == 1:
        return np.zeros(nb)
    H = np.zeros(nb)
    pos = {int(n): k for k, n in enumerate(ops.boundary_nodes)}
    for cyc in boundary_cycles(mesh):
        x = mesh.nodes[cyc]
        kappa = _circumcurvature(np.roll(x, 1, axis=0), x, np.roll(x, -1, axis=0))
        H[[pos[int(n)] for n in cyc]] = kappa
    return H


def _tangential(ops: AssembledOperators, u: np.ndarray) -> np.ndarray:
    """Nodal tangential derivative: length-weighted mean of the two edge slopes."""
    mesh = ops.mesh
    nb = len(ops.boundary_nodes)
    if mesh.dim == 1:
        return np.zeros(nb)
    out = np.zeros(nb)
    pos = {int(n): k for k, n in enumerate(ops.boundary_nodes)}
    for cyc in boundary_cycles(mesh):
        x = mesh.nodes[cyc]
        v = u[cyc]
        le = np.linalg.norm(np.roll(x, -1, axis=0) - x, axis=1)
        slope = (np.roll(v, -1) - v) / le  # edge k joins cyc[k] and cyc[k+1]
        lprev, sprev = np.roll(le, 1), np.roll(slope, 1)
        out[[pos[int(n)] for n in cyc]] = (lprev * sprev + le * slope) / (lprev + le)
    return out


def boundary_profile(solution, ops: AssembledOperators | None = None) -> BoundaryProfile:
    """Evaluate the shape-derivative density for an energy or eigen solution.

    The normal derivative is the variational boundary flux of the discrete
    equation, matching :func:`insulopt.energy.el_residual`.
    """
    if not isinstance(solution, (EnergySolution, EigenSolution)):
        raise TypeError("expected an EnergySolution or EigenSolution")
    ops = ops or solution.operators
    u = np.asarray(solution.u.values, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ShapeError("solution contains non-finite values")
    bn = ops.boundary_nodes
    w = ops.boundary_weights
    m = float(solution.m)
    if isinstance(solution, EnergySolution):
        if not np.isfinite(solution.el_residual):
            raise ShapeError("energy solution has no positive-trace component")
        r = ops.stiffness @ u - solution.load
        kind, lam, zeroth = "energy", math.nan, u[bn]
    else:
        lam = float(solution.lam)
        if abs(rayleigh_quotient(u, m, ops) - lam) > 1e-8 * lam:
            raise ShapeError("eigen solution is not converged (quotient and eigenvalue differ)")
        r = ops.stiffness @ u - lam * (ops.mass @ u)
        kind, zeroth = "eigen", lam * u[bn] ** 2
    g = r[bn] / w
    tau = _tangential(ops, u)
    H = boundary_curvature(ops)
    s = float(w @ np.abs(u[bn]))
    j = tau**2 - g**2 - zeroth + (2.0 / m) * s * H * u[bn]
    return BoundaryProfile(kind, bn.copy(), w.copy(), boundary_angles(ops), u[bn].copy(), g, tau, H, j, m, lam)


def stationarity_check(profile: BoundaryProfile, tol: float = 1e-2) -> tuple[bool, float]:
    """``(is_stationary, spread)`` with ``spread = max |j - mean_w(j)|``."""
    if profile.j.size == 0:
        return True, 0.0
    spread = float(np.abs(profile.j - profile.mean_j).max())
    return spread < tol, spread


def first_variation(profile: BoundaryProfile, mode: int) -> float:
    """Largest ``int j cos(k(theta - phi))`` over the phase ``phi``.

    Fields ``V . nu = cos(k(theta - phi))`` with ``k >= 1`` preserve volume to
    first order, so a stationary domain gives zero for every ``k``.
    """
    if mode < 1:
        raise ValueError("mode must be >= 1 (k = 0 changes the volume)")
    return float(abs(np.sum(profile.weights * profile.j * np.exp(1j * mode * profile.angle))))
