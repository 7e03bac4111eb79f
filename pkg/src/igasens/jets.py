"""Derivative stacks ("jets") of matrix- and scalar-valued functions of t.

A jet of order n holds the values f(t0), f'(t0), ..., f^(n)(t0); the
entries are derivative values, not Taylor coefficients.  Arithmetic on
jets applies the Leibniz rule, so products, inverses and determinants of
jets are exact derivative stacks of the composed functions.

Coefficient arrays have shape ``(n + 1, *batch, d, d)`` for matrices and
``(n + 1, *batch)`` for scalars, which lets one call process every
quadrature point of a patch at once.
"""

from __future__ import annotations

from math import comb

import numpy as np

from .errors import DomainError, SingularityError

MAX_ORDER = 14


class ScalarJet:
    """Derivative stack of a scalar function (optionally batched)."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim < 1:
            raise DomainError("a jet needs at least one coefficient")

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    def __getitem__(self, k):
        return self.coeffs[k]

    def __len__(self):
        return self.coeffs.shape[0]

    def taylor(self, delta):
        """Truncated Taylor sum at t0 + delta."""
        return _taylor(self.coeffs, delta)

    def __repr__(self):
        return f"ScalarJet(order={self.order}, batch={self.coeffs.shape[1:]})"


class MatrixJet:
    """Derivative stack of a d x d matrix function (optionally batched)."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim < 3 or self.coeffs.shape[-1] != self.coeffs.shape[-2]:
            raise DomainError("matrix jet coefficients must have shape (n+1, ..., d, d)")

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.coeffs.shape[-1]

    def __getitem__(self, k):
        return self.coeffs[k]

    def __len__(self):
        return self.coeffs.shape[0]

    def taylor(self, delta):
        return _taylor(self.coeffs, delta)

    def __repr__(self):
        return f"MatrixJet(order={self.order}, dim={self.dim}, batch={self.coeffs.shape[1:-2]})"


def _taylor(c, delta):
    out = np.zeros_like(c[0])
    fact = 1.0
    for k in range(c.shape[0]):
        if k:
            fact *= k
        out = out + c[k] * (delta ** k / fact)
    return out


def _check_orders(a, b):
    if a.order != b.order:
        raise DomainError(f"jet orders differ ({a.order} vs {b.order})")


def jet_from_affine(J0, JV, t0: float, order: int) -> MatrixJet:
    """Jet of J0 + t * JV expanded at t0."""
    J0 = np.asarray(J0, dtype=float)
    JV = np.asarray(JV, dtype=float)
    if order < 0:
        raise DomainError("order must be >= 0")
    c = np.zeros((order + 1,) + J0.shape)
    c[0] = J0 + t0 * JV
    if order >= 1:
        c[1] = JV
    return MatrixJet(c)


def constant_jet(value, order: int):
    value = np.asarray(value, dtype=float)
    c = np.zeros((order + 1,) + value.shape)
    c[0] = value
    return MatrixJet(c) if value.ndim >= 2 and value.shape[-1] == value.shape[-2] else ScalarJet(c)


def _leibniz(a, b, op):
    n = a.shape[0] - 1
    first = op(a[0], b[0])
    out = np.empty((n + 1,) + first.shape)
    out[0] = first
    for k in range(1, n + 1):
        acc = op(a[0], b[k]) + op(a[k], b[0])
        for j in range(1, k):
            acc = acc + comb(k, j) * op(a[j], b[k - j])
        out[k] = acc
    return out


def jet_mul(a: MatrixJet, b: MatrixJet) -> MatrixJet:
    """Matrix product a(t) @ b(t)."""
    _check_orders(a, b)
    return MatrixJet(_leibniz(a.coeffs, b.coeffs, np.matmul))


def scalar_mul(a: ScalarJet, b: ScalarJet) -> ScalarJet:
    _check_orders(a, b)
    return ScalarJet(_leibniz(a.coeffs, b.coeffs, np.multiply))


def jet_scale(s: ScalarJet, a: MatrixJet) -> MatrixJet:
    """Scalar function times matrix function."""
    _check_orders(s, a)
    return MatrixJet(_leibniz(s.coeffs, a.coeffs, lambda x, y: x[..., None, None] * y))


def jet_transpose(a: MatrixJet) -> MatrixJet:
    return MatrixJet(np.swapaxes(a.coeffs, -1, -2))


def _singular(values, scale, where):
    bad = ~(np.abs(values) > 1e-14 * scale)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        raise SingularityError(f"{where}: singular zeroth coefficient at batch index {tuple(idx)}")


def jet_inv(a: MatrixJet) -> MatrixJet:
    """Inverse matrix function; uses (X^-1)' = -X^-1 X' X^-1 recursively."""
    c = a.coeffs
    d = a.dim
    scale = np.max(np.abs(c[0]), axis=(-1, -2)) ** d
    _singular(np.linalg.det(c[0]), np.maximum(scale, np.finfo(float).tiny), "jet_inv")
    n = a.order
    X = np.empty_like(c)
    X[0] = np.linalg.inv(c[0])
    nz = [j for j in range(1, n + 1) if np.any(c[j])]
    for k in range(1, n + 1):
        acc = np.zeros_like(c[0])
        for j in nz:
            if j > k:
                break
            acc = acc + comb(k, j) * (c[j] @ X[k - j])
        X[k] = -X[0] @ acc
    return MatrixJet(X)


def jet_det(a: MatrixJet) -> ScalarJet:
    """Determinant via cofactor expansion of jets (d <= 3)."""
    c = a.coeffs
    d = a.dim
    e = lambda i, j: c[..., i, j]
    mul = lambda x, y: _leibniz(x, y, np.multiply)
    if d == 1:
        return ScalarJet(e(0, 0).copy())
    if d == 2:
        return ScalarJet(mul(e(0, 0), e(1, 1)) - mul(e(0, 1), e(1, 0)))
    if d == 3:
        m0 = mul(e(1, 1), e(2, 2)) - mul(e(1, 2), e(2, 1))
        m1 = mul(e(1, 0), e(2, 2)) - mul(e(1, 2), e(2, 0))
        m2 = mul(e(1, 0), e(2, 1)) - mul(e(1, 1), e(2, 0))
        return ScalarJet(mul(e(0, 0), m0) - mul(e(0, 1), m1) + mul(e(0, 2), m2))
    raise DomainError(f"jet_det supports d <= 3, got {d}")


def jet_recip(s: ScalarJet) -> ScalarJet:
    """1 / s(t)."""
    c = s.coeffs
    _singular(c[0], 1.0, "jet_recip")
    n = s.order
    y = np.empty_like(c)
    y[0] = 1.0 / c[0]
    for k in range(1, n + 1):
        acc = np.zeros_like(c[0])
        for j in range(1, k + 1):
            acc = acc + comb(k, j) * c[j] * y[k - j]
        y[k] = -y[0] * acc
    return ScalarJet(y)


def A_jet(G: MatrixJet, det: ScalarJet | None = None, inv: MatrixJet | None = None) -> MatrixJet:
    """det(G) G^-1 G^-T, the pullback matrix of gradients."""
    det = jet_det(G) if det is None else det
    inv = jet_inv(G) if inv is None else inv
    return jet_scale(det, jet_mul(inv, jet_transpose(inv)))


def C_jet(G: MatrixJet, det: ScalarJet | None = None) -> MatrixJet:
    """G^T G / det(G), the pullback matrix of curls."""
    det = jet_det(G) if det is None else det
    return jet_scale(jet_recip(det), jet_mul(jet_transpose(G), G))


# --------------------------------------------------------------------------
# Closed-form first to third derivatives for G[t] = G0 + t * JV.
# Used as independent cross-checks of the jet arithmetic.

def _setup(G0, JV, t):
    G = np.asarray(G0, dtype=float) + t * np.asarray(JV, dtype=float)
    det = np.linalg.det(G)
    if not abs(det) > 1e-14 * max(np.abs(G).max(), np.finfo(float).tiny) ** G.shape[-1]:
        raise SingularityError("closed form: singular Jacobian")
    Gi = np.linalg.inv(G)
    X = np.asarray(JV, dtype=float) @ Gi
    return G, det, Gi, X


def closed_form_first(G0, JV, t):
    """First t-derivatives of det(G), A and C.

    Returns
    -------
    dict with keys ``d_det``, ``dA``, ``dC``.
    """
    G, det, Gi, X = _setup(G0, JV, t)
    V = np.asarray(JV, dtype=float)
    tau = np.trace(X)
    A = det * Gi @ Gi.T
    C = G.T @ G / det
    B = Gi @ V @ A
    return {
        "d_det": tau * det,
        "dA": tau * A - B - B.T,
        "dC": -tau * C + (V.T @ G + (V.T @ G).T) / det,
    }


def closed_form_second_C(G0, JV, t):
    G, det, Gi, X = _setup(G0, JV, t)
    V = np.asarray(JV, dtype=float)
    tau = np.trace(X)
    C = G.T @ G / det
    dC = closed_form_first(G0, JV, t)["dC"]
    return (np.trace(X @ X) * C - tau * dC
            - tau / det * (V.T @ G + G.T @ V)
            + 2.0 / det * V.T @ V)


def closed_form_third_C(G0, JV, t):
    G, det, Gi, X = _setup(G0, JV, t)
    V = np.asarray(JV, dtype=float)
    tau = np.trace(X)
    s2 = np.trace(X @ X)
    s3 = np.trace(X @ X @ X)
    f2 = (tau ** 2 + s2) / det
    return ((-tau * f2 - 2.0 / det * (tau * s2 + s3)) * G.T @ G
            - 6.0 / det * tau * V.T @ V
            + 3.0 * f2 * V.T @ G
            + 3.0 * f2 * G.T @ V)


def trace_rate(G0, JV, t):
    """d/dt tr(JV G^-1) = -tr((JV G^-1)^2)."""
    X = _setup(G0, JV, t)[3]
    return -np.trace(X @ X)
