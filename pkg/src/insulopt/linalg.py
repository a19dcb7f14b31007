"""Linear solvers shared by the energy and eigenvalue solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["ConvergenceError", "PCGResult", "pcg", "smallest_eigenpair", "EigenpairResult"]


class ConvergenceError(RuntimeError):
    """An iteration failed to reach its tolerance.  ``history`` holds the trace."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def pcg(apply_a, rhs, diag, x0=None, rtol: float = 1e-10, maxiter: int | None = None) -> PCGResult:
    """Jacobi-preconditioned conjugate gradients for ``A x = rhs``.

    ``apply_a`` is a callable (so rank-one terms can stay matrix-free) and
    ``diag`` the diagonal of ``A``.  Stops when ``|r| <= rtol |rhs|``.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = len(rhs)
    maxiter = maxiter or 10 * n
    dinv = 1.0 / np.asarray(diag, dtype=float)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - apply_a(x)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return PCGResult(np.zeros(n), 0, 0.0, True)
    target = rtol * bnorm
    z = dinv * r
    p = z.copy()
    rz = r @ z
    rnorm = np.linalg.norm(r)
    k = 0
    while rnorm > target and k < maxiter:
        ap = apply_a(p)
        pap = p @ ap
        if pap <= 0.0:
            # operator not positive definite along p (singular / inconsistent system)
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        rnorm = np.linalg.norm(r)
        k += 1
    return PCGResult(x, k, rnorm / bnorm, bool(rnorm <= target))


@dataclass
class EigenpairResult:
    value: float
    vector: np.ndarray
    iterations: int
    history: list = field(default_factory=list)


def smallest_eigenpair(
    A,
    M,
    x0=None,
    rank_one=None,
    tol: float = 1e-10,
    maxiter: int = 200,
    shift: float | None = None,
    rayleigh: bool = True,
    deflate=None,
) -> EigenpairResult:
    """Lowest eigenpair of ``(A + c c^T) x = lam M x`` by inverse iteration.

    ``rank_one`` is the vector ``c`` (applied through Sherman-Morrison, never
    densified).  Iteration starts with a fixed shift below the spectrum; once
    the residual drops under ``1e-3`` the shift follows the Rayleigh quotient
    for a few cubically convergent steps.  ``deflate`` is an optional list of
    vectors to keep the iterate M-orthogonal to (e.g. constants).
    """
    n = A.shape[0]
    c = None if rank_one is None else np.asarray(rank_one, dtype=float)
    diagA = A.diagonal()
    diagM = M.diagonal()
    def apply(x):
        y = A @ x
        if c is not None:
            y = y + c * (c @ x)
        return y

    def project(x):
        if deflate:
            for q in deflate:
                x = x - q * ((q @ (M @ x)) / (q @ (M @ q)))
        return x

    def factor(sigma):
        lu = spla.splu(sp.csc_matrix(A - sigma * M))
        if c is None:
            return lu.solve
        yc = lu.solve(c)
        denom = 1.0 + c @ yc
        if not abs(denom) > 1e-14 * (1.0 + abs(c @ yc)):
            raise RuntimeError("rank-one update makes the shifted system singular")

        def solve(v):
            y = lu.solve(v)
            return y - yc * ((c @ y) / denom)

        return solve

    x = np.ones(n) if x0 is None else np.array(x0, dtype=float)
    x = project(x)
    nrm = np.sqrt(x @ (M @ x))
    if not nrm > 0:
        x = project(np.random.default_rng(0).standard_normal(n))
        nrm = np.sqrt(x @ (M @ x))
    x /= nrm
    if shift is None:
        # strictly below the spectrum; penalty-sized diagonals must not set the scale
        rq0 = float(x @ apply(x))
        shift = -max(1e-2 * rq0, 1e-8 * float(np.median(diagA / diagM)))
    solve = factor(shift)
    lam = x @ apply(x)
    history = []
    rq_steps = 0
    for it in range(1, maxiter + 1):
        y = project(solve(M @ x))
        y /= np.sqrt(y @ (M @ y))
        ay = apply(y)
        lam = y @ ay
        res = np.linalg.norm(ay - lam * (M @ y)) / max(np.linalg.norm(ay), 1e-300)
        history.append((lam, res))
        # a fixed point of the iteration is an eigenvector even when A y ~ 0
        # makes the relative residual meaningless (Neumann kernel)
        dx = y - x if y @ (M @ x) >= 0 else y + x
        still = np.sqrt(max(dx @ (M @ dx), 0.0)) < tol
        x = y
        if res < tol or still:
            return EigenpairResult(float(lam), x, it, history)
        if rayleigh and res < 1e-3 and rq_steps < 8:
            rq_steps += 1
            try:
                solve = factor(lam)
            except RuntimeError:
                # exactly singular at the Rayleigh quotient: already converged
                return EigenpairResult(float(lam), x, it, history)
    raise ConvergenceError(f"inverse iteration stagnated (residual {history[-1][1]:.3e})", history)
