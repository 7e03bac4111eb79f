"""B-spline knot vectors, 1D spaces, tensor-product spaces and NURBS evaluation.

All knot vectors are open (clamped) on the reference interval [0, 1].
The last span is right-closed, so ``xi = 1`` is a valid evaluation point.
Tensor-product multi-indices are flattened with the first factor running
fastest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError

KNOT_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open knot vector on [0, 1] together with its degree."""

    values: np.ndarray
    degree: int

    def __post_init__(self):
        vals = _frozen(self.values)
        p = int(self.degree)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "degree", p)
        if vals.ndim != 1:
            raise ValidationError("knot vector must be one-dimensional")
        if p < 0:
            raise ValidationError("degree must be non-negative")
        if vals.size < 2 * p + 2:
            raise ValidationError(f"need at least {2 * p + 2} knots for degree {p}")
        if np.any(np.diff(vals) < 0):
            raise ValidationError("knots must be non-decreasing")
        if abs(vals[0]) > KNOT_TOL or abs(vals[-1] - 1.0) > KNOT_TOL:
            raise ValidationError("knot vector must span [0, 1]")
        if np.any(vals[: p + 1] != vals[0]) or np.any(vals[-p - 1:] != vals[-1]):
            raise ValidationError("end knots must be repeated p+1 times (open knot vector)")
        if vals[p + 1] == vals[0] or vals[-p - 2] == vals[-1]:
            raise ValidationError("end knots must be repeated exactly p+1 times")
        _, counts = np.unique(vals, return_counts=True)
        if counts.size > 2 and counts[1:-1].max() > p + 1:
            raise ValidationError("interior knot multiplicity exceeds p+1")

    @classmethod
    def uniform(cls, n_elements: int, degree: int) -> "KnotVector":
        """Open uniform knot vector with ``n_elements`` spans of maximal smoothness."""
        if n_elements < 1:
            raise ValidationError("n_elements must be >= 1")
        inner = np.linspace(0.0, 1.0, n_elements + 1)[1:-1]
        return cls(np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)]), degree)

    @classmethod
    def from_breaks(cls, breaks, degree, multiplicities=None) -> "KnotVector":
        """Build an open knot vector from breakpoints and interior multiplicities."""
        breaks = np.asarray(breaks, dtype=float)
        if multiplicities is None:
            multiplicities = np.ones(len(breaks) - 2, dtype=int)
        inner = np.repeat(breaks[1:-1], multiplicities)
        return cls(np.concatenate([np.full(degree + 1, breaks[0]), inner,
                                   np.full(degree + 1, breaks[-1])]), degree)

    def __len__(self):
        return self.values.size

    @property
    def n_basis(self) -> int:
        return self.values.size - self.degree - 1

    @property
    def breaks(self) -> np.ndarray:
        """Distinct knot values (element boundaries)."""
        return np.unique(self.values)

    @property
    def interior_multiplicities(self) -> np.ndarray:
        _, counts = np.unique(self.values, return_counts=True)
        return counts[1:-1]

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.degree, self.values.tobytes()))

    def __repr__(self):
        return f"KnotVector({self.values.tolist()}, degree={self.degree})"


class SplineSpace1D:
    """Univariate B-spline space spanned by the basis of one knot vector."""

    def __init__(self, knots: KnotVector | Sequence[float], degree: int | None = None):
        if not isinstance(knots, KnotVector):
            if degree is None:
                raise ValidationError("degree is required when passing raw knot values")
            knots = KnotVector(knots, degree)
        self.knots = knots

    @property
    def degree(self) -> int:
        return self.knots.degree

    @property
    def n_basis(self) -> int:
        return self.knots.n_basis

    @property
    def regularity(self) -> int:
        """p minus the largest interior multiplicity; -1 means discontinuous."""
        mult = self.knots.interior_multiplicities
        return self.degree - (int(mult.max()) if mult.size else 0)

    @property
    def breaks(self) -> np.ndarray:
        return self.knots.breaks

    @property
    def n_elements(self) -> int:
        return self.breaks.size - 1

    def __eq__(self, other):
        return isinstance(other, SplineSpace1D) and self.knots == other.knots

    def __hash__(self):
        return hash(self.knots)

    def __repr__(self):
        return f"SplineSpace1D(p={self.degree}, n_basis={self.n_basis}, elements={self.n_elements})"

    def find_span(self, xi):
        """Span index s with knots[s] <= xi < knots[s+1]; xi = 1 uses the last span."""
        xi = np.asarray(xi, dtype=float)
        if np.any((xi < 0.0) | (xi > 1.0)) or np.any(np.isnan(xi)):
            raise DomainError(f"evaluation point outside [0, 1]: {xi}")
        span = np.searchsorted(self.knots.values, xi, side="right") - 1
        return np.clip(span, self.degree, self.n_basis - 1)

    def eval_basis(self, xi: float) -> tuple[int, np.ndarray]:
        """Return ``(first_index, values)`` of the p+1 possibly non-zero functions."""
        ders = self.eval_basis_derivatives(xi, 0)
        return int(self.find_span(xi)) - self.degree, ders[0]

    def eval_basis_derivatives(self, xi: float, max_order: int) -> np.ndarray:
        """Derivatives of the active functions, shape ``(max_order + 1, p + 1)``."""
        if max_order < 0:
            raise DomainError("max_order must be non-negative")
        span = self.find_span(xi)
        out = basis_derivatives(self.knots.values, self.degree,
                                np.atleast_1d(span), np.atleast_1d(float(xi)), max_order)
        return out[0]

    def eval_all(self, xi: float, order: int = 0) -> np.ndarray:
        """Full-length vector of the ``order``-th derivative of every basis function."""
        first, _ = self.eval_basis(xi)
        vals = self.eval_basis_derivatives(xi, order)[order]
        full = np.zeros(self.n_basis)
        full[first:first + self.degree + 1] = vals
        return full

    def greville(self) -> np.ndarray:
        """Greville abscissae (knot averages)."""
        p, U = self.degree, self.knots.values
        if p == 0:
            return 0.5 * (U[:-1] + U[1:])
        return np.array([U[i + 1:i + p + 1].mean() for i in range(self.n_basis)])

    def lowered(self) -> "SplineSpace1D":
        """Space of degree p-1 and regularity one lower (drop first and last knot)."""
        if self.degree < 1:
            raise ValidationError("cannot lower a degree-0 space")
        return SplineSpace1D(KnotVector(self.knots.values[1:-1], self.degree - 1))

    def derivative_matrix(self) -> np.ndarray:
        """Matrix D with (sum_i c_i B_i)' = sum_j (D c)_j B^{p-1}_j in ``lowered()``."""
        p, U, n = self.degree, self.knots.values, self.n_basis
        D = np.zeros((n - 1, n))
        for j in range(n - 1):
            h = U[j + p + 1] - U[j + 1]
            if h > 0:
                D[j, j] = -p / h
                D[j, j + 1] = p / h
        return D


def basis_derivatives(knots, degree, spans, x, max_order):
    """Vectorised derivative recursion for the non-zero B-splines.

    Parameters
    ----------
    knots : ndarray
        Knot values.
    degree : int
    spans : ndarray of int, shape (m,)
        Span index for every point.
    x : ndarray, shape (m,)
    max_order : int
        Highest derivative; orders above ``degree`` come back as zeros.

    Returns
    -------
    ndarray, shape (m, max_order + 1, degree + 1)
    """
    U = np.asarray(knots, dtype=float)
    p = degree
    x = np.asarray(x, dtype=float)
    spans = np.asarray(spans, dtype=int)
    m = x.size
    n = min(max_order, p)

    ndu = np.zeros((p + 1, p + 1, m))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, m))
    right = np.zeros((p + 1, m))
    for j in range(1, p + 1):
        left[j] = x - U[spans + 1 - j]
        right[j] = U[spans + j] - x
        saved = np.zeros(m)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((m, max_order + 1, p + 1))
    for j in range(p + 1):
        ders[:, 0, j] = ndu[j, p]

    a = np.zeros((2, p + 1, m))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:] = 0.0
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = np.zeros(m)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1

    fac = float(p)
    for k in range(1, n + 1):
        ders[:, k, :] *= fac
        fac *= p - k
    return ders


def greville_refine(space: SplineSpace1D, n_subdiv: int) -> SplineSpace1D:
    """Split every non-empty span into ``n_subdiv`` equal spans by knot insertion."""
    if n_subdiv < 1:
        raise DomainError("n_subdiv must be >= 1")
    if n_subdiv == 1:
        return SplineSpace1D(space.knots)
    breaks = space.breaks
    new = [breaks[i] + (breaks[i + 1] - breaks[i]) * np.arange(1, n_subdiv) / n_subdiv
           for i in range(breaks.size - 1)]
    values = np.sort(np.concatenate([space.knots.values, *new]))
    return SplineSpace1D(KnotVector(values, space.degree))


def space_on_breaks(geometry_space: SplineSpace1D, degree: int, n_subdiv: int = 1) -> SplineSpace1D:
    """Solution space of ``degree`` on the refined breakpoints of ``geometry_space``.

    Breakpoints inherited from the geometry keep the geometry's regularity
    (capped at ``degree - 1``); inserted breakpoints get multiplicity one.
    """
    g = geometry_space
    breaks = g.breaks
    _, counts = np.unique(g.knots.values, return_counts=True)
    mult = []
    all_breaks = [breaks[0]]
    for i in range(breaks.size - 1):
        a, b = breaks[i], breaks[i + 1]
        for k in range(1, n_subdiv):
            all_breaks.append(a + (b - a) * k / n_subdiv)
            mult.append(1)
        all_breaks.append(b)
        if i < breaks.size - 2:
            alpha = g.degree - counts[i + 1]
            mult.append(max(1, degree - min(alpha, degree - 1)))
    return SplineSpace1D(KnotVector.from_breaks(all_breaks, degree, mult))


class TensorSplineSpace:
    """Tensor product of 1D spaces; flat index = i1 + n1*i2 + n1*n2*i3."""

    def __init__(self, factors: Sequence[SplineSpace1D]):
        factors = tuple(factors)
        if not 1 <= len(factors) <= 3:
            raise ValidationError("tensor spaces support dimension 1, 2 or 3")
        self.factors = factors

    @property
    def dim(self) -> int:
        return len(self.factors)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.n_basis for f in self.factors)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(f.degree for f in self.factors)

    @property
    def regularities(self) -> tuple[int, ...]:
        return tuple(f.regularity for f in self.factors)

    def flatten(self, multi_index) -> int:
        return int(np.ravel_multi_index(tuple(multi_index), self.shape, order="F"))

    def unflatten(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(index, self.shape, order="F"))

    def __eq__(self, other):
        return isinstance(other, TensorSplineSpace) and self.factors == other.factors

    def __hash__(self):
        return hash(self.factors)

    def __repr__(self):
        return f"TensorSplineSpace(degrees={self.degrees}, shape={self.shape})"

    def eval_basis(self, xi) -> np.ndarray:
        """Full flattened vector of all tensor basis values at ``xi``."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if xi.size != self.dim:
            raise DomainError(f"expected a {self.dim}-vector, got {xi}")
        return tensor_product([f.eval_all(x) for f, x in zip(self.factors, xi)])


def tensor_product(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Flattened outer product with the first vector running fastest."""
    out = np.asarray(vectors[0], dtype=float)
    for v in vectors[1:]:
        out = np.multiply.outer(np.asarray(v, dtype=float), out).ravel()
    return out


def eval_nurbs(basis_values, weights, control_points) -> np.ndarray:
    """Evaluate sum_i B_i w_i P_i / sum_i B_i w_i.

    Parameters
    ----------
    basis_values : sequence of ndarray
        Full-length basis vectors, one per parametric direction (as returned
        by ``SplineSpace1D.eval_all``). A single array is treated as 1D.
    weights : array_like, shape (n,)
        Positive weights in flattened tensor order.
    control_points : array_like, shape (n, d)
    """
    if isinstance(basis_values, np.ndarray) and basis_values.ndim == 1:
        basis_values = [basis_values]
    B = tensor_product(list(basis_values))
    w = np.asarray(weights, dtype=float)
    P = np.asarray(control_points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if np.any(w <= 0):
        raise ValidationError("NURBS weights must be positive")
    if not (B.size == w.size == P.shape[0]):
        raise ValidationError(
            f"size mismatch: {B.size} basis functions, {w.size} weights, {P.shape[0]} points")
    Bw = B * w
    return Bw @ P / Bw.sum()
