"""Closed-form and semi-analytic reference values.

Everything here is plain floating point on scalar inputs: Bessel functions
of order 0 and 1, bracketed bisection, ball energies, the 1D and radial disk
eigenvalues of the insulation quotient, the symmetry-breaking threshold on
the disk and the small-ball upper bound for ``d >= 3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

__all__ = [
    "BallSpec",
    "unit_ball_volume",
    "bessel_j",
    "bisect",
    "bessel_root",
    "ball_energy",
    "two_ball_optimum",
    "TwoBallOptimum",
    "interval_lambda",
    "disk_radial_lambda",
    "disk_dirichlet_lambda",
    "disk_neumann_lambda",
    "threshold_m0",
    "threshold_m0_by_root",
    "nonexistence_bound",
]

SERIES_CUTOFF = 12.0


def unit_ball_volume(d: int) -> float:
    """Lebesgue measure of the unit ball, via ``w_d = 2 pi / d * w_{d-2}``."""
    if d < 0:
        raise ValueError("dimension must be nonnegative")
    w = 1.0 if d % 2 == 0 else 2.0
    for k in range(2 + d % 2, d + 1, 2):
        w *= 2.0 * math.pi / k
    return w


@dataclass(frozen=True)
class BallSpec:
    d: int
    R: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not self.R > 0:
            raise ValueError("radius must be positive")

    @property
    def omega_d(self) -> float:
        return unit_ball_volume(self.d)

    @property
    def volume(self) -> float:
        return self.omega_d * self.R**self.d

    @property
    def surface(self) -> float:
        return self.d * self.omega_d * self.R ** (self.d - 1)


# ----------------------------------------------------------------------
# Bessel functions


def _bessel_series(n: int, x: float) -> float:
    half = 0.5 * x
    term = half**n / math.factorial(n)
    total = term
    q = -half * half
    k = 0
    while True:
        k += 1
        term *= q / (k * (k + n))
        total += term
        if abs(term) < 1e-17 * max(abs(total), 1e-300) and k > 2:
            break
        if k > 200:
            break
    return total


def _bessel_asymptotic(n: int, x: float) -> float:
    # Hankel expansion J_n(x) ~ sqrt(2/(pi x)) (P cos chi - Q sin chi)
    mu = 4.0 * n * n
    p = 1.0
    q = 0.0
    term = 1.0
    k = 0
    best = math.inf
    while k < 60:
        k += 1
        term *= (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(term) >= best:
            break  # asymptotic series: stop at the smallest term
        best = abs(term)
        if k % 2 == 1:
            q += term if (k // 2) % 2 == 0 else -term
        else:
            p += -term if (k // 2) % 2 == 1 else term
        if best < 1e-17:
            break
    chi = x - (0.5 * n + 0.25) * math.pi
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


def bessel_j(order: int, x: float) -> float:
    """Bessel function of the first kind ``J_0`` or ``J_1`` for ``x >= 0``."""
    if order not in (0, 1):
        raise ValueError("only orders 0 and 1 are supported")
    x = float(x)
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x <= SERIES_CUTOFF:
        return _bessel_series(order, x)
    return _bessel_asymptotic(order, x)


def bessel_j1_prime(x: float) -> float:
    """``J_1'(x) = J_0(x) - J_1(x)/x`` (with the limit 1/2 at the origin)."""
    if x == 0:
        return 0.5
    return bessel_j(0, x) - bessel_j(1, x) / x


# ----------------------------------------------------------------------
# root finding


def bisect(f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-12, maxiter: int = 400):
    """Bisection on a verified sign change; returns ``(root, (lo, hi))``.

    The returned bracket still straddles the sign change and has width at
    most ``xtol``.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo, (lo, lo)
    if fhi == 0:
        return hi, (hi, hi)
    if (flo > 0) == (fhi > 0):
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    for _ in range(maxiter):
        if hi - lo <= xtol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if fm == 0:
            return mid, (mid, mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi), (lo, hi)


def bessel_root(kind: str, index: int = 1) -> float:
    """First zero of ``J_0`` (``"dirichlet_j0"``) or of ``J_1'`` (``"neumann_j1prime"``)."""
    if index != 1:
        raise ValueError("only the first root is available")
    if kind == "dirichlet_j0":
        return bisect(lambda x: bessel_j(0, x), 2.0, 3.0)[0]
    if kind == "neumann_j1prime":
        return bisect(bessel_j1_prime, 1.5, 2.5)[0]
    raise ValueError(f"unknown root kind {kind!r}")


def disk_dirichlet_lambda(R: float = 1.0) -> float:
    return (bessel_root("dirichlet_j0") / R) ** 2


def disk_neumann_lambda(R: float = 1.0) -> float:
    return (bessel_root("neumann_j1prime") / R) ** 2


# ----------------------------------------------------------------------
# energy problem on balls


def ball_energy(spec: BallSpec, m: float) -> tuple[float, float]:
    """Optimal boundary value and minimal energy for ``f = 1`` on a ball."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    d, R, w = spec.d, spec.R, spec.omega_d
    c_opt = m / (d * d * w * R ** (d - 2))
    energy = -(R * R / (2 * d)) * (w * R**d / (d + 2) + m / d)
    return c_opt, energy


@dataclass(frozen=True)
class TwoBallOptimum:
    c1: float
    c2: float
    energy: float
    unique: bool


def two_ball_energy(R1: float, R2: float, d: int, m: float, c1: float, c2: float) -> float:
    """Energy of ``u = (R_j^2 - r^2)/(2d) + c_j`` on two disjoint balls with ``f = 1``."""
    w = unit_ball_volume(d)
    e = -w / (2 * d * (d + 2)) * (R1 ** (d + 2) + R2 ** (d + 2))
    if m > 0:
        e += d * d * w * w / (2 * m) * (c1 * R1 ** (d - 1) + c2 * R2 ** (d - 1)) ** 2
    return e - w * (c1 * R1**d + c2 * R2**d)


def two_ball_optimum(R1: float, R2: float, d: int, m: float) -> TwoBallOptimum:
    """All insulator goes around the larger ball; equal radii are non-unique.

    For equal radii the canonical representative puts everything on the
    second ball.  ``c1``/``c2`` follow the argument order.
    """
    if not (R1 > 0 and R2 > 0) or m < 0:
        raise ValueError("radii must be positive and m nonnegative")
    small_first = R1 <= R2
    Rs, Rl = (R1, R2) if small_first else (R2, R1)
    w = unit_ball_volume(d)
    cl = m / (d * d * w * Rl ** (d - 2))
    cs = 0.0
    c1, c2 = (cs, cl) if small_first else (cl, cs)
    energy = two_ball_energy(R1, R2, d, m, c1, c2)
    return TwoBallOptimum(c1, c2, energy, unique=(R1 != R2 or m == 0))


# ----------------------------------------------------------------------
# eigenvalue problem


def interval_lambda(m: float) -> float:
    """``omega**2`` where ``tan(omega) = 2/(m omega)`` on ``(0, pi/2)``."""
    if not m > 0:
        raise ValueError("m must be positive")
    g = lambda w: w * math.tan(w) - 2.0 / m
    omega, _ = bisect(g, 0.0, math.pi / 2)
    return omega * omega


def disk_radial_lambda(R: float, m: float) -> float:
    """Radial branch ``omega**2`` with ``m omega J1(omega R) = 2 pi R J0(omega R)``."""
    if not (R > 0 and m > 0):
        raise ValueError("R and m must be positive")
    j01 = bessel_root("dirichlet_j0")
    g = lambda w: m * w * bessel_j(1, w * R) - 2.0 * math.pi * R * bessel_j(0, w * R)
    omega, _ = bisect(g, 0.0, j01 / R)
    return omega * omega


def threshold_m0(R: float = 1.0) -> float:
    """Budget at which the radial branch meets the first Neumann eigenvalue."""
    if not R > 0:
        raise ValueError("R must be positive")
    jp = bessel_root("neumann_j1prime")
    return 2.0 * math.pi * R * bessel_j(0, jp) / ((jp / R) * bessel_j(1, jp))


def threshold_m0_by_root(R: float = 1.0) -> float:
    """Same threshold as :func:`threshold_m0`, by root finding in ``m``."""
    lam_n = disk_neumann_lambda(R)
    g = lambda m: disk_radial_lambda(R, m) - lam_n
    lo, hi = 1e-3 * R * R, 1e3 * R * R
    # g decreases in m; geometric subdivision keeps the relative accuracy uniform
    root, _ = bisect(lambda t: g(math.exp(t)), math.log(lo), math.log(hi), xtol=1e-13)
    return math.exp(root)


def nonexistence_bound(d: int, m: float, n: float) -> float:
    """Upper bound ``d^2 w_d / (m n^(d-2))`` on the eigenvalue of ``B_{1/n}``."""
    if d < 3:
        raise ValueError("the small-ball bound is only informative for d >= 3")
    if not m > 0 or n < 1:
        raise ValueError("need m > 0 and n >= 1")
    return d * d * unit_ball_volume(d) / (m * n ** (d - 2))
