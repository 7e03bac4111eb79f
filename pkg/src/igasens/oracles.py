"""Independent reference values for tests and acceptance runs.

Nothing here imports the discretization modules; every value is built
from series, enumeration or difference stencils.
"""

from __future__ import annotations

from math import factorial, pi

import numpy as np

from .errors import DomainError


def bessel_j(nu: int, x: float, terms: int = 60) -> float:
    """J_nu(x) from its power series (adequate for |x| <= 20)."""
    x = float(x)
    total = 0.0
    term = (0.5 * x) ** nu / factorial(nu)
    for k in range(terms):
        total += term
        term *= -(0.25 * x * x) / ((k + 1) * (k + 1 + nu))
    return total


def bessel_root(nu: int, k: int = 1) -> float:
    """k-th positive root of J_nu by sign scan and bisection."""
    step = 0.05
    a = 1e-6 if nu else 0.0
    fa = bessel_j(nu, a)
    found = 0
    x = a
    while True:
        b = x + step
        fb = bessel_j(nu, b)
        if fa * fb < 0:
            found += 1
            if found == k:
                lo, hi = x, b
                flo = fa
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    fm = bessel_j(nu, mid)
                    if fm == 0.0 or hi - lo <= 1e-16 * hi:
                        return mid
                    if flo * fm < 0:
                        hi = mid
                    else:
                        lo, flo = mid, fm
                return 0.5 * (lo + hi)
        x, fa = b, fb


def bessel_j0_first_root() -> float:
    """First positive zero of J_0, bracketed in [2, 3]."""
    lo, hi = 2.0, 3.0
    flo = bessel_j(0, lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = bessel_j(0, mid)
        if fm == 0.0 or hi - lo <= 2e-16 * hi:
            break
        if flo * fm < 0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def pillbox_lambda(r: float) -> float:
    if r <= 0:
        raise DomainError("radius must be positive")
    return bessel_j0_first_root() ** 2 / r ** 2


def pillbox_lambda_derivs(r: float, n: int) -> np.ndarray:
    """d^k/dr^k of x01^2 / r^2 for k = 0..n."""
    if r <= 0:
        raise DomainError("radius must be positive")
    x2 = bessel_j0_first_root() ** 2
    return np.array([x2 * (-1) ** k * factorial(k + 1) * r ** (-2.0 - k) for k in range(n + 1)])


def chain_rule_t(derivs_r, slope: float) -> np.ndarray:
    """Derivatives in t for r = a + slope * t."""
    d = np.asarray(derivs_r, dtype=float)
    return d * slope ** np.arange(d.size)


def pillbox_expectation(a: float, b: float) -> float:
    """Mean of x01^2 / r^2 for r uniform on [a, b]."""
    return bessel_j0_first_root() ** 2 / (b - a) * (1.0 / a - 1.0 / b)


def pillbox_taylor_expectation(r0: float, a: float, b: float, order: int) -> float:
    """Mean over [a, b] of the order-n Taylor polynomial of x01^2 / r^2 about r0."""
    d = pillbox_lambda_derivs(r0, order)
    return sum(d[k] / factorial(k + 1) * ((b - r0) ** (k + 1) - (a - r0) ** (k + 1))
               for k in range(order + 1)) / (b - a)


def disk_spectrum(radius: float, count: int) -> np.ndarray:
    """Dirichlet Laplacian eigenvalues of a disk with multiplicities (J_0..J_9 roots)."""
    vals = []
    for nu in range(10):
        for k in range(1, count + 1):
            x = bessel_root(nu, k)
            vals.extend([x * x] * (1 if nu == 0 else 2))
    return np.sort(vals)[:count] / radius ** 2


def interval_spectrum(length: float, count: int) -> np.ndarray:
    return (np.arange(1, count + 1) * pi / length) ** 2


def square_spectrum(length: float, count: int) -> np.ndarray:
    n = int(np.ceil(np.sqrt(count))) + 2
    vals = sorted((i * i + j * j) for i in range(1, n + 1) for j in range(1, n + 1))
    return np.array(vals[:count], dtype=float) * (pi / length) ** 2


def cube_maxwell_spectrum(L: float, count: int) -> np.ndarray:
    """Nonzero Maxwell eigenvalues of the PEC cube [0, L]^3 with multiplicities.

    A triple (m, n, k) with at least two nonzero indices carries two
    independent fields if all three are nonzero and one otherwise.
    """
    if L <= 0:
        raise DomainError("edge length must be positive")
    n = int(np.ceil(count ** (1 / 3))) + 3
    vals = []
    for m in range(n + 1):
        for q in range(n + 1):
            for k in range(n + 1):
                nz = (m > 0) + (q > 0) + (k > 0)
                if nz >= 2:
                    vals.extend([m * m + q * q + k * k] * (2 if nz == 3 else 1))
    vals.sort()
    return np.array(vals[:count], dtype=float) * (pi / L) ** 2


_CENTRAL = {
    1: {1: 0.5, -1: -0.5},
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
    4: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0},
}


def finite_difference(f, t: float, order: int, h: float):
    """Second-order central difference estimate of the ``order``-th derivative."""
    if h <= 0:
        raise DomainError("h must be positive")
    if order not in _CENTRAL:
        raise DomainError("orders 1 to 4 are supported")
    total = None
    for s, c in sorted(_CENTRAL[order].items()):
        v = f(t + s * h)
        total = c * v if total is None else total + c * v
    return total / h ** order


def fem_q1_square():
    """Bilinear stiffness and mass matrices on the unit square, nodes (0,0),(1,0),(0,1),(1,1)."""
    K = np.array([[4, -1, -1, -2], [-1, 4, -2, -1], [-1, -2, 4, -1], [-2, -1, -1, 4]]) / 6.0
    M = np.array([[4, 2, 2, 1], [2, 4, 1, 2], [2, 1, 4, 2], [1, 2, 2, 4]]) / 36.0
    return K, M
