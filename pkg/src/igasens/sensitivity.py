"""Arbitrary-order derivatives of a simple eigenpair of K[t] u = lambda M[t] u.

Differentiating (K - lambda M) u = 0 and u_star^T M u = 1 k times gives a
linear system for (u^(k), lambda^(k)) whose matrix does not depend on k::

    [ K - lambda M   -M u ] [ u^(k)      ]   [ r_k ]
    [ u_star^T M      0   ] [ lambda^(k) ] = [ s_k ]

The right-hand side only involves lower orders, so the bordered matrix is
factorized once and reused for every k.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, MultiplicityError, NumericalRankError

log = logging.getLogger(__name__)


class _Counter:
    def __init__(self):
        self.count = 0


FACTORIZATIONS = _Counter()


@dataclass
class EigenpairJet:
    """lambda^(0..n) and u^(0..n) of one mode at the expansion point."""

    mode: int
    lambda_derivs: np.ndarray
    vector_derivs: np.ndarray
    u_star: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    normalization_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    factorizations: int = 1
    condition_estimate: float = float("nan")

    @property
    def order(self) -> int:
        return self.lambda_derivs.size - 1


@dataclass(frozen=True)
class GapReport:
    simple: bool
    gap: float


def check_multiplicity(eigenvalues, mode: int, gap_tol: float = 1e-6) -> GapReport:
    """Relative distance of 1-based ``mode`` to the other computed eigenvalues.

    gap = min_j |lambda_m - lambda_j| / max(1, |lambda_m|); simple iff gap > gap_tol.
    """
    lam = np.asarray(getattr(eigenvalues, "eigenvalues", eigenvalues), dtype=float)
    if not 1 <= mode <= lam.size:
        raise DomainError(f"mode {mode} outside 1..{lam.size}")
    lm = lam[mode - 1]
    others = np.delete(lam, mode - 1)
    gap = np.inf if others.size == 0 else np.abs(others - lm).min() / max(1.0, abs(lm))
    return GapReport(bool(gap > gap_tol), float(gap))


def leibniz_residual(K_stack, M_stack, lam, U, k):
    """sum_j C(k,j) (K^(j) - (lambda M)^(j)) u^(k-j) for derivative stacks."""
    r = np.zeros(U.shape[1])
    for j in range(k + 1):
        lamM = sum(comb(j, i) * lam[i] * M_stack[j - i] for i in range(j + 1))
        r += comb(k, j) * ((K_stack[j] - lamM) @ U[k - j])
    return r


def normalization_identity(M_stack, u_star, U, k):
    """sum_j C(k,j) u_star^T M^(k-j) u^(j) (equals 1 for k = 0, else 0)."""
    return sum(comb(k, j) * (u_star @ (M_stack[k - j] @ U[j])) for j in range(k + 1))


def eigenpair_derivatives(system, base, mode: int, max_order: int | None = None,
                          gap_tol: float = 1e-6, check_tol: float = 1e-8) -> EigenpairJet:
    """Derivatives of eigenpair ``mode`` (1-based) up to ``max_order``.

    Parameters
    ----------
    system : AssembledSystem
        Needs ``system.order >= max_order``.
    base : EigenSolution
        Solution at the expansion point; its u_star is kept fixed.
    gap_tol : float
        Relative gap below which the eigenvalue counts as multiple.
    check_tol : float
        Bound on the order-k residual identity relative to ||K||.
    """
    n = system.order if max_order is None else int(max_order)
    if n < 0 or n > system.order:
        raise DomainError(f"max_order must lie in 0..{system.order}")
    rep = check_multiplicity(base.eigenvalues, mode, gap_tol)
    if not rep.simple:
        raise MultiplicityError(
            f"mode {mode} is not simple (relative gap {rep.gap:.2e} <= {gap_tol:.1e})")

    Ks, Ms = system.K_stack, system.M_stack
    lam0, u0 = base.mode(mode)
    u_star = base.u_star[:, mode - 1]
    N = u0.size

    lam = np.zeros(n + 1)
    U = np.zeros((n + 1, N))
    lam[0] = lam0
    U[0] = u0

    normK = spla.norm(Ks[0], 1) if sp.issparse(Ks[0]) else np.linalg.norm(Ks[0], 1)
    res = np.zeros(n + 1)
    nres = np.zeros(n + 1)
    res[0] = np.linalg.norm(leibniz_residual(Ks, Ms, lam, U, 0)) / normK
    nres[0] = normalization_identity(Ms, u_star, U, 0) - 1.0
    if n == 0:
        return EigenpairJet(mode, lam, U, u_star, res, nres, 0)

    Mu = Ms[0] @ u0
    B = sp.bmat([[sp.csr_matrix(Ks[0] - lam0 * Ms[0]), sp.csr_matrix(-Mu[:, None])],
                 [sp.csr_matrix((Ms[0] @ u_star)[None, :]), None]], format="csc")
    try:
        lu = spla.splu(B)
    except RuntimeError as exc:
        raise NumericalRankError(f"bordered matrix of mode {mode} is singular: {exc}") from None
    FACTORIZATIONS.count += 1
    cond = _condition_estimate(B, lu)
    log.debug("bordered system of mode %d: condition estimate %.3e", mode, cond)
    if not np.isfinite(cond) or cond > 1e15:
        raise NumericalRankError(f"bordered matrix of mode {mode} is numerically singular "
                                 f"(condition estimate {cond:.2e})")

    # cache of M^(b) u^(c)
    MU = {}

    def mu(b, c):
        if (b, c) not in MU:
            MU[b, c] = Ms[b] @ U[c]
        return MU[b, c]

    for k in range(1, n + 1):
        rhs = np.zeros(N)
        for j in range(1, k + 1):
            rhs -= comb(k, j) * (Ks[j] @ U[k - j])
        for a in range(k + 1):
            for b in range(k + 1 - a):
                c = k - a - b
                if (a == 0 and b == 0) or a == k or lam[a] == 0.0:
                    continue
                coef = factorial(k) / (factorial(a) * factorial(b) * factorial(c))
                rhs += coef * lam[a] * mu(b, c)
        s = -sum(comb(k, j) * (u_star @ mu(k - j, j)) for j in range(k))
        sol = lu.solve(np.append(rhs, s))
        U[k] = sol[:N]
        lam[k] = sol[N]
        res[k] = np.linalg.norm(leibniz_residual(Ks, Ms, lam, U, k)) / normK
        nres[k] = normalization_identity(Ms, u_star, U, k)
        if not np.all(np.isfinite(sol)):
            raise NumericalRankError(f"non-finite derivative of order {k} for mode {mode}")
    scale = np.maximum(1.0, np.abs(lam))
    if np.any(res > check_tol * scale):
        log.warning("mode %d: residual identity violated (max %.2e)", mode, res.max())
    return EigenpairJet(mode, lam, U, u_star, res, nres, 1, cond)


def _condition_estimate(B, lu):
    n = B.shape[0]
    inv = spla.LinearOperator((n, n), matvec=lu.solve,
                              rmatvec=lambda x: lu.solve(x, trans="T"), dtype=float)
    try:
        return float(spla.onenormest(B) * spla.onenormest(inv))
    except Exception:  # onenormest is a heuristic; never let it abort a solve
        return float("nan")
