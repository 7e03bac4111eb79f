"""Taylor prediction, uniform expectations and eigenmode tracking."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import factorial

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assemble, assemble_direct, build_space
from .eigensolve import solve_gevp
from .errors import DomainError, MultiplicityError, NoMatchError
from .sensitivity import check_multiplicity, eigenpair_derivatives


@dataclass(frozen=True)
class TaylorModel:
    """Derivative values of lambda (and optionally u) at ``t0``."""

    t0: float
    lambda_derivs: np.ndarray
    vector_derivs: np.ndarray | None = None

    @property
    def order(self) -> int:
        return len(self.lambda_derivs) - 1

    @classmethod
    def from_jet(cls, jet, t0):
        return cls(float(t0), np.asarray(jet.lambda_derivs), np.asarray(jet.vector_derivs))

    def truncated(self, order):
        if not 0 <= order <= self.order:
            raise DomainError(f"order must lie in 0..{self.order}")
        v = None if self.vector_derivs is None else self.vector_derivs[:order + 1]
        return TaylorModel(self.t0, self.lambda_derivs[:order + 1], v)


def _horner(derivs, delta):
    # sum_k d_k delta^k / k!, nested as d0 + delta (d1 + delta/2 (d2 + delta/3 (...)))
    n = len(derivs) - 1
    acc = derivs[n] * 1.0
    for k in range(n, 0, -1):
        acc = derivs[k - 1] + acc * (delta / k)
    return acc


def taylor_eval(model: TaylorModel, t, order: int | None = None):
    """Truncated Taylor sum of lambda (and u, if present) at ``t``."""
    m = model if order is None else model.truncated(order)
    delta = t - m.t0
    lam = float(_horner(m.lambda_derivs, delta))
    if m.vector_derivs is None:
        return lam
    return lam, _horner(m.vector_derivs, delta)


def reparametrize(model: TaylorModel, a: float, b: float) -> TaylorModel:
    """Express a model in t as a model in r = a + (b - a) t."""
    if not a < b:
        raise DomainError("need a < b")
    s = b - a
    scale = s ** -np.arange(model.order + 1, dtype=float)
    v = None
    if model.vector_derivs is not None:
        v = model.vector_derivs * scale[:, None]
    return TaylorModel(a + s * model.t0, model.lambda_derivs * scale, v)


def uniform_expectation(model: TaylorModel, a: float, b: float) -> float:
    """Mean of the Taylor polynomial over a uniform density on [a, b].

    The polynomial is integrated exactly term by term.
    """
    if not a < b:
        raise DomainError("need a < b")
    total = 0.0
    for k, c in enumerate(model.lambda_derivs):
        total += c / factorial(k + 1) * ((b - model.t0) ** (k + 1) - (a - model.t0) ** (k + 1))
    return float(total / (b - a))


def correlation(u1, u2, M) -> float:
    """|u1^T M u2| / sqrt(u1^T M u1 * u2^T M u2), in [0, 1]."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    n1 = u1 @ (M @ u1)
    n2 = u2 @ (M @ u2)
    if not (n1 > 0 and n2 > 0):
        raise DomainError("correlation needs nonzero vectors")
    return float(min(1.0, abs(u1 @ (M @ u2)) / np.sqrt(n1 * n2)))


def correlation_matrix(U1, U2, M):
    """Pairwise correlations between the columns of U1 and U2."""
    U1 = np.atleast_2d(np.asarray(U1, dtype=float).T).T
    U2 = np.atleast_2d(np.asarray(U2, dtype=float).T).T
    MU2 = M @ U2
    n1 = np.einsum("ij,ij->j", U1, M @ U1)
    n2 = np.einsum("ij,ij->j", U2, MU2)
    if np.any(n1 <= 0) or np.any(n2 <= 0):
        raise DomainError("correlation needs nonzero vectors")
    return np.minimum(1.0, np.abs(U1.T @ MU2) / np.sqrt(np.outer(n1, n2)))


def greedy_match(scores):
    """One-to-one assignment of rows to columns by descending score.

    Returns an array ``col`` with ``col[i]`` the column given to row i
    (-1 if none is left) and the matched scores.
    """
    scores = np.asarray(scores, dtype=float)
    nr, nc = scores.shape
    col = -np.ones(nr, dtype=int)
    got = np.zeros(nr)
    flat = np.argsort(-scores, axis=None, kind="stable")
    used_r, used_c = set(), set()
    for f in flat:
        i, j = divmod(int(f), nc)
        if i in used_r or j in used_c:
            continue
        col[i], got[i] = j, scores[i, j]
        used_r.add(i)
        used_c.add(j)
        if len(used_r) == nr:
            break
    return col, got


@dataclass
class TrackingRun:
    """Tracked eigenvalues over the step points.

    Arrays are indexed ``[step, tracked mode]``; ``indices`` holds the
    1-based position of the matched eigenpair in each step's solution.
    """

    t: np.ndarray
    modes: tuple
    order: int
    threshold: float
    lambdas: np.ndarray
    predicted: np.ndarray
    correlations: np.ndarray
    indices: np.ndarray

    def rows(self):
        for s in range(self.t.size):
            for i, m in enumerate(self.modes):
                yield s, self.t[s], m, self.lambdas[s, i], self.correlations[s, i]


@dataclass(frozen=True)
class ProblemSetup:
    """What to discretize: space kind, solution degrees, refinement, quadrature."""

    kind: str = "h1"
    degrees: tuple | int | None = None
    refine: int = 1
    quad: object = None
    skip_zero: bool = False


def _solve_at(space, geom, t, order, setup, count, solver):
    system = assemble(space, geom, t, order, setup.quad)
    sol = solve_gevp(system.K_stack[0], system.M_stack[0], count, solver=solver,
                     skip_zero=setup.skip_zero)
    return system, sol


def track(geom, setup: ProblemSetup, modes, steps: int, order: int = 1,
          match_threshold: float = 0.8, count: int | None = None,
          gap_tol: float = 1e-6, solver: str = "dense") -> TrackingRun:
    """Follow eigenmodes from t = 0 to t = 1 in ``steps`` equal steps.

    At each step the tracked pairs are differentiated to ``order``, the
    Taylor prediction at the next step is matched against the freshly
    solved candidates by correlation (greedy, one-to-one), and a mode is
    rejected if its best score falls below ``match_threshold``.
    """
    modes = tuple(int(m) for m in modes)
    if steps < 1:
        raise DomainError("steps must be >= 1")
    if not modes or min(modes) < 1:
        raise DomainError("modes are 1-based and must be non-empty")
    space = build_space(geom, setup.kind, setup.degrees, setup.refine)
    count = min(space.n_dof, max(modes) + 4 if count is None else count)
    ts = np.linspace(0.0, 1.0, steps + 1)
    nm = len(modes)
    lambdas = np.zeros((steps + 1, nm))
    predicted = np.zeros((steps + 1, nm))
    corr = np.ones((steps + 1, nm))
    idx = np.zeros((steps + 1, nm), dtype=int)

    system, sol = _solve_at(space, geom, ts[0], order, setup, count, solver)
    cur = list(modes)
    lambdas[0] = sol.eigenvalues[np.array(cur) - 1]
    predicted[0] = lambdas[0]
    idx[0] = cur
    for s in range(steps):
        preds_l, preds_u = [], []
        for i, m in enumerate(cur):
            rep = check_multiplicity(sol.eigenvalues, m, gap_tol)
            if not rep.simple:
                raise MultiplicityError(
                    f"step {s} (t={ts[s]:.6g}): tracked mode {modes[i]} (index {m}) is not "
                    f"simple, relative gap {rep.gap:.2e}")
            jet = eigenpair_derivatives(system, sol, m, order, gap_tol)
            lam_hat, u_hat = taylor_eval(TaylorModel.from_jet(jet, ts[s]), ts[s + 1])
            preds_l.append(lam_hat)
            preds_u.append(u_hat)
        system, sol = _solve_at(space, geom, ts[s + 1], order, setup, count, solver)
        scores = correlation_matrix(np.array(preds_u).T, sol.eigenvectors, system.M_stack[0])
        col, got = greedy_match(scores)
        for i in range(nm):
            if col[i] < 0 or got[i] < match_threshold:
                best = scores[i].max()
                raise NoMatchError(
                    f"step {s + 1} (t={ts[s + 1]:.6g}): mode {modes[i]} has best correlation "
                    f"{best:.4f} < threshold {match_threshold}; predicted lambda "
                    f"{preds_l[i]:.10g}, candidates {np.array2string(sol.eigenvalues, precision=6)}")
        cur = [int(c) + 1 for c in col]
        lambdas[s + 1] = sol.eigenvalues[col]
        predicted[s + 1] = preds_l
        corr[s + 1] = got
        idx[s + 1] = cur
    return TrackingRun(ts, modes, order, match_threshold, lambdas, predicted, corr, idx)


@dataclass
class ErrorStudy:
    """Relative prediction errors indexed ``[order, step size]``."""

    orders: np.ndarray
    deltas: np.ndarray
    lambda_errors: np.ndarray
    vector_errors: np.ndarray
    lambda_fresh: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def slopes(self, which="lambda"):
        err = self.lambda_errors if which == "lambda" else self.vector_errors
        return np.array([loglog_slope(self.deltas, e) for e in err])


def loglog_slope(x, y):
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("errors must be positive for a log-log fit")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def polish_eigenpair(K, M, lam, u, u_star, iterations=3):
    """Newton refinement of (lam, u) on the bordered system with extended-precision residuals.

    Keeps u_star^T M u = 1.  Residuals are formed in long double, which
    matters when the pair must be accurate to well below 1e-12.
    """
    Kl = sp.csr_matrix(K, dtype=np.longdouble)
    Ml = sp.csr_matrix(M, dtype=np.longdouble)
    lam_l = np.longdouble(lam)
    u_l = np.asarray(u, dtype=np.longdouble)
    us_l = np.asarray(u_star, dtype=np.longdouble)
    Kd = sp.csr_matrix(K, dtype=float)
    Md = sp.csr_matrix(M, dtype=float)
    u = np.asarray(u, dtype=float)
    Mus = Md @ np.asarray(u_star, dtype=float)
    B = sp.bmat([[Kd - float(lam) * Md, sp.csr_matrix((-(Md @ u))[:, None])],
                 [sp.csr_matrix(Mus[None, :]), None]], format="csc")
    lu = spla.splu(B)
    N = u_l.size
    for _ in range(iterations):
        r1 = Kl @ u_l - lam_l * (Ml @ u_l)
        r2 = us_l @ (Ml @ u_l) - 1
        rhs = -np.append(np.asarray(r1, dtype=float), float(r2))
        step = lu.solve(rhs)
        u_l = u_l + step[:N].astype(np.longdouble)
        lam_l = lam_l + np.longdouble(step[N])
    return lam_l, u_l


def prediction_error_study(geom, setup: ProblemSetup, mode: int, orders, deltas,
                           t0: float = 0.0, polish: bool = True,
                           gap_tol: float = 1e-6) -> ErrorStudy:
    """Errors of order-n Taylor predictions against fresh solves at t0 + delta.

    Eigenvalue errors are relative; eigenvector errors are
    ||u_hat - u||_2 / ||u||_2, with the fresh u scaled so that
    u_star^T M(t) u = 1 and its sign aligned to u_hat.
    """
    orders = np.asarray(orders, dtype=int)
    deltas = np.asarray(deltas, dtype=float)
    n = int(orders.max())
    space = build_space(geom, setup.kind, setup.degrees, setup.refine)
    count = min(space.n_dof, mode + 2)
    system = assemble(space, geom, t0, n, setup.quad)
    base = solve_gevp(system.K_stack[0], system.M_stack[0], count, skip_zero=setup.skip_zero)
    if polish:
        lam0, u0 = base.mode(mode)
        lam0, u0 = polish_eigenpair(system.K_stack[0], system.M_stack[0], lam0, u0,
                                    base.u_star[:, mode - 1])
        lam = base.eigenvalues.copy()
        U = base.eigenvectors.copy()
        lam[mode - 1] = float(lam0)
        U[:, mode - 1] = np.asarray(u0, dtype=float)
        base = replace(base, eigenvalues=lam, eigenvectors=U)
    jet = eigenpair_derivatives(system, base, mode, n, gap_tol)
    model = TaylorModel.from_jet(jet, t0)
    u_star = jet.u_star

    lam_err = np.zeros((orders.size, deltas.size))
    vec_err = np.zeros((orders.size, deltas.size))
    lam_fresh = np.zeros(deltas.size)
    for j, d in enumerate(deltas):
        K, M = assemble_direct(space, geom, t0 + d, setup.quad)
        sol = solve_gevp(K, M, count, skip_zero=setup.skip_zero)
        lam, u = sol.mode(mode)
        u = u / (u_star @ (M @ u))
        if polish:
            lam_l, u_l = polish_eigenpair(K, M, lam, u, u_star)
        else:
            lam_l, u_l = np.longdouble(lam), np.asarray(u, dtype=np.longdouble)
        lam_fresh[j] = float(lam_l)
        for i, o in enumerate(orders):
            lam_hat, u_hat = _taylor_long(model, o, d)
            lam_err[i, j] = float(abs(lam_hat - lam_l) / abs(lam_l))
            if u_hat @ (M @ np.asarray(u_l, dtype=float)) < 0:
                u_hat = -u_hat
            vec_err[i, j] = float(np.linalg.norm(u_hat - u_l) / np.linalg.norm(u_l))
    return ErrorStudy(orders, deltas, lam_err, vec_err, lam_fresh)


def _taylor_long(model, order, delta):
    lam = np.asarray(model.lambda_derivs[:order + 1], dtype=np.longdouble)
    U = np.asarray(model.vector_derivs[:order + 1], dtype=np.longdouble)
    d = np.longdouble(delta)
    lam_hat = _horner(lam, d)
    u_hat = _horner(U, d)
    return lam_hat, u_hat
