"""Tensor Gauss-Legendre rules on the elements of a spline space."""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DomainError


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule with ``orders[k]`` points in direction k.

    Exact for polynomials of degree ``2 * q - 1`` per direction.
    """

    orders: tuple

    def __post_init__(self):
        orders = tuple(int(q) for q in self.orders)
        if not orders or min(orders) < 1:
            raise DomainError("quadrature order must be >= 1 in every direction")
        object.__setattr__(self, "orders", orders)

    @classmethod
    def for_degrees(cls, degrees, extra=1):
        return cls(tuple(p + extra for p in degrees))

    @property
    def dim(self):
        return len(self.orders)

    def reference(self, k):
        """Nodes and weights of direction k on [0, 1]."""
        x, w = leggauss(self.orders[k])
        return 0.5 * (x + 1.0), 0.5 * w

    def on_breaks(self, k, breaks):
        """Nodes (n_el, q) and weights (n_el, q) on the elements given by ``breaks``."""
        x, w = self.reference(k)
        b = np.asarray(breaks, dtype=float)
        h = np.diff(b)
        return b[:-1, None] + h[:, None] * x[None, :], h[:, None] * w[None, :]


def element_points(rule, breaks_per_dir):
    """Quadrature points grouped by tensor element.

    Returns
    -------
    points : ndarray, shape (n_el, n_q, d)
    weights : ndarray, shape (n_el, n_q)

    Elements and points are both ordered first-direction-fastest.
    """
    d = len(breaks_per_dir)
    if rule.dim != d:
        raise DomainError(f"rule has dimension {rule.dim}, space has {d}")
    pts = np.zeros((1, 1, 0))
    wts = np.ones((1, 1))
    for k in range(d):
        xk, wk = rule.on_breaks(k, breaks_per_dir[k])
        ne, nq = xk.shape
        e0, q0 = pts.shape[:2]
        # new element index = e_old + e0 * e_k (old directions fastest)
        p = np.empty((ne, e0, nq, q0, k + 1))
        p[..., :k] = pts[None, :, None, :, :]
        p[..., k] = xk[:, None, :, None]
        w = wk[:, None, :, None] * wts[None, :, None, :]
        pts = p.reshape(ne * e0, nq * q0, k + 1)
        wts = w.reshape(ne * e0, nq * q0)
    return pts, wts
