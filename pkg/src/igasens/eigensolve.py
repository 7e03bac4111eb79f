"""Generalized symmetric eigenproblem K u = lambda M u."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DefinitenessError, DomainError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class EigenSolution:
    """Smallest eigenpairs, ascending, scaled so that ``u_star^T M u = 1``.

    ``u_star[:, m]`` is the eigenvector of mode m itself at solve time, so
    the scaling reproduces the usual M-normalization.  ``n_zero`` counts
    eigenvalues below ``zero_tol * max|lambda|`` (gradient fields in
    H(curl) problems).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    u_star: np.ndarray
    n_zero: int
    residuals: np.ndarray

    @property
    def count(self) -> int:
        return self.eigenvalues.size

    def mode(self, m):
        """Eigenpair of 1-based mode ``m``."""
        if not 1 <= m <= self.count:
            raise DomainError(f"mode {m} outside 1..{self.count}")
        return self.eigenvalues[m - 1], self.eigenvectors[:, m - 1]


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def fix_sign(U, rel=1e-6):
    """Flip columns so that the leading entry of largest magnitude is positive.

    Entries within ``rel`` of the maximum magnitude count as tied and the
    first of them decides, so symmetric modes get a solver-independent sign.
    """
    U = np.array(U, dtype=float, copy=True)
    one = U.ndim == 1
    if one:
        U = U[:, None]
    mag = np.abs(U)
    lead = np.argmax(mag >= (1.0 - rel) * mag.max(axis=0), axis=0)
    s = np.sign(U[lead, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    U = U * s
    return U[:, 0] if one else U


def solve_gevp(K, M, count: int = 6, tol: float = 1e-8, solver: str = "dense",
               zero_tol: float = 1e-8, skip_zero: bool = False) -> EigenSolution:
    """Smallest ``count`` eigenpairs of K u = lambda M u.

    Parameters
    ----------
    K, M : array_like or sparse matrix
        Symmetric; M positive definite.
    count : int
        Number of pairs (1 <= count <= n).
    tol : float
        Residual bound relative to ||K|| + lambda ||M||.
    solver : {"dense", "shift-invert"}
        Dense Cholesky-reduced solve or sparse shift-invert Lanczos about 0.
    skip_zero : bool
        Drop numerically-zero eigenvalues and return the next ``count``.
    """
    n = K.shape[0]
    if n == 0:
        raise DomainError("system has no degrees of freedom")
    if not 1 <= count <= n:
        raise DomainError(f"count must lie in 1..{n}, got {count}")
    Md = _dense(M)
    try:
        sla.cholesky(Md, lower=True)
    except np.linalg.LinAlgError:
        raise DefinitenessError("mass matrix is not positive definite") from None

    Kd = _dense(K)
    if solver == "dense":
        subset = None if skip_zero else [0, count - 1]
        lam, U = sla.eigh(Kd, Md, subset_by_index=subset)
    elif solver == "shift-invert":
        extra = 0
        lam, U = None, None
        while True:
            k = min(n - 1, count + extra + 6)
            v0 = np.ones(n) / np.sqrt(n)
            lam, U = spla.eigsh(sp.csc_matrix(K), k=k, M=sp.csc_matrix(M), sigma=-1.0,
                                which="LM", v0=v0)
            order = np.argsort(lam)
            lam, U = lam[order], U[:, order]
            nz = int(np.sum(np.abs(lam) <= zero_tol * max(np.abs(lam).max(), 1.0)))
            if not skip_zero or k >= n - 1 or k - nz >= count + 1:
                break
            extra = 2 * (extra + nz + 6)
    else:
        raise DomainError(f"unknown solver {solver!r}")

    scale = max(np.abs(lam).max(), 1.0)
    zero = np.abs(lam) <= zero_tol * scale
    n_zero = int(zero.sum())
    sel = np.flatnonzero(~zero) if skip_zero else np.arange(lam.size)
    if sel.size < count:
        raise DomainError(f"only {sel.size} eigenpairs available, {count} requested")
    sel = sel[:count]
    lam, U = lam[sel], U[:, sel]

    U = fix_sign(U)
    MU = Md @ U
    norms = np.einsum("ij,ij->j", U, MU)
    U = U / np.sqrt(norms)
    U_star = U.copy()

    normK = np.linalg.norm(Kd, 1)
    normM = np.linalg.norm(Md, 1)
    res = np.linalg.norm(Kd @ U - (Md @ U) * lam, axis=0) / (normK + np.abs(lam) * normM)
    if np.any(res > tol):
        raise DomainError(f"eigen residual {res.max():.2e} exceeds tolerance {tol:.1e}")
    return EigenSolution(lam, U, U_star, n_zero, res)


def frequency(lam):
    """Frequency in Hz of the eigenvalue ``lam`` (in m^-2): sqrt(lam) c0 / 2 pi."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise DomainError("eigenvalue must be non-negative")
    f = np.sqrt(lam) * SPEED_OF_LIGHT / (2.0 * np.pi)
    return float(f) if f.ndim == 0 else f
