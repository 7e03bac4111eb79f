"""Ready-made morph geometries: boxes, intervals, a quarter annulus and a 5-patch disk."""

import numpy as np

from .errors import DomainError
from .geometry import MorphGeometry, Patch, detect_interfaces
from .spline import KnotVector, SplineSpace1D, TensorSplineSpace

SQRT1_2 = np.sqrt(0.5)


def _grid(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel(order="F") for m in mesh], axis=1)


def box(lengths, end_lengths=None, degree=1, elements=1):
    """Axis-aligned box [0, L_1] x ... as a single polynomial patch.

    Control points sit at the scaled Greville abscissae so the map is
    linear.  ``end_lengths`` gives the box at t = 1 (default: no morph).
    """
    lengths = np.atleast_1d(np.asarray(lengths, dtype=float))
    d = lengths.size
    if not 1 <= d <= 3 or np.any(lengths <= 0):
        raise DomainError("need 1 to 3 positive lengths")
    degrees = np.broadcast_to(np.atleast_1d(degree), (d,))
    elems = np.broadcast_to(np.atleast_1d(elements), (d,))
    factors = [SplineSpace1D(KnotVector.uniform(int(e), int(p))) for p, e in zip(degrees, elems)]
    space = TensorSplineSpace(factors)
    g = _grid([f.greville() for f in factors])
    P0 = g * lengths
    P1 = None
    if end_lengths is not None:
        P1 = g * np.broadcast_to(np.asarray(end_lengths, dtype=float), (d,))
    return MorphGeometry([Patch(space, np.ones(space.size), P0)],
                         None if P1 is None else [P1])


def unit_box(dim, scale=1.0, end_scale=None, degree=1, elements=1):
    """Unit square/cube (optionally scaled); identity map when ``scale == 1``."""
    end = None if end_scale is None else [end_scale] * dim
    return box([scale] * dim, end, degree=degree, elements=elements)


def interval(length=1.0, end_length=None, degree=1, elements=1):
    return box([length], None if end_length is None else [end_length], degree, elements)


def quarter_annulus(r_inner=1.0, r_outer=2.0):
    """Quarter annulus in the first quadrant, radial direction first."""
    if not 0 < r_inner < r_outer:
        raise DomainError("need 0 < r_inner < r_outer")
    space = TensorSplineSpace([SplineSpace1D(KnotVector.uniform(1, 1)),
                               SplineSpace1D(KnotVector.uniform(1, 2))])
    arc = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    P = np.array([r * a for a in arc for r in (r_inner, r_outer)])
    w = np.array([wa for wa in (1.0, SQRT1_2, 1.0) for _ in range(2)])
    return MorphGeometry([Patch(space, w, P)])


def _rot(k):
    c, s = np.round(np.cos(k * np.pi / 2)), np.round(np.sin(k * np.pi / 2))
    return np.array([[c, -s], [s, c]])


def disk_net(radius=1.0, core=0.4):
    """Control nets, weights and space of the 5-patch disk of given radius.

    The central patch is a square of half-width ``core * radius``; four
    rational patches fill the ring between the square and the circle.
    """
    r = float(radius)
    if r <= 0 or not 0 < core < SQRT1_2:
        raise DomainError("need radius > 0 and 0 < core < 1/sqrt(2)")
    c = core * r
    quad = SplineSpace1D(KnotVector.uniform(1, 2))
    space = TensorSplineSpace([quad, quad])
    w1 = np.array([1.0, SQRT1_2, 1.0])

    nets, weights = [], []
    xs = np.array([-c, 0.0, c])
    nets.append(_grid([xs, xs]))
    weights.append(np.outer(w1, w1).ravel(order="F"))

    inner = np.array([[c, -c], [c, 0.0], [c, c]])
    outer = np.array([[r * SQRT1_2, -r * SQRT1_2], [2 * r * SQRT1_2, 0.0],
                      [r * SQRT1_2, r * SQRT1_2]])
    right = np.empty((9, 2))
    for j in range(3):  # arc direction (second)
        right[3 * j + 0] = inner[j]
        right[3 * j + 1] = 0.5 * (inner[j] + outer[j])
        right[3 * j + 2] = outer[j]
    w_ring = np.repeat(w1, 3)
    for k in range(4):
        nets.append(right @ _rot(k).T)
        weights.append(w_ring)
    return space, weights, nets


def disk(r_start=1.0, r_end=None, core=0.4):
    """Disk of radius ``r_start`` morphing radially to ``r_end``."""
    space, weights, nets = disk_net(r_start, core)
    ends = None
    if r_end is not None:
        ends = [P * (r_end / r_start) for P in nets]
    return _assemble(space, weights, nets, ends)


def disk_to_ellipse(radius=1.0, semi_axes=(1.2, 0.9), core=0.4):
    """Disk at t = 0 deformed into an axis-aligned ellipse at t = 1."""
    space, weights, nets = disk_net(radius, core)
    scale = np.asarray(semi_axes, dtype=float) / radius
    return _assemble(space, weights, nets, [P * scale for P in nets])


def _assemble(space, weights, nets, ends):
    geom = MorphGeometry([Patch(space, w, P) for w, P in zip(weights, nets)], ends)
    return geom.with_interfaces(detect_interfaces(geom))


def perturbed(geom, amplitude, seed=0):
    """Copy of ``geom`` whose end net is the start net plus a random displacement.

    Coincident control points receive the same displacement, so glued
    interfaces stay glued.
    """
    rng = np.random.default_rng(seed)
    keys = {}
    ends = []
    for patch in geom.patches:
        P = patch.control_points
        D = np.empty_like(P)
        for i, x in enumerate(P):
            key = tuple(np.round(x, 9))
            if key not in keys:
                keys[key] = rng.uniform(-1.0, 1.0, size=P.shape[1])
            D[i] = keys[key]
        ends.append(P + amplitude * D)
    return MorphGeometry(geom.patches, ends, geom.interfaces)


def with_end_net(geom, ends):
    return MorphGeometry(geom.patches, ends, geom.interfaces)
