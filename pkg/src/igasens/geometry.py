"""NURBS patches, the control-point morph F[t] and multipatch topology.

A morph is given by two control nets of identical layout.  The control
points move on straight lines, P_i[t] = (1 - t) P_{0,i} + t P_{1,i}, while
the weights stay fixed, so the Jacobian of the mapping is affine in t::

    dF[t] = dF_0 + t * sum_i (P_{1,i} - P_{0,i}) (grad R_i)^T

where R_i are the rational basis functions of the patch.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, GeometryError, GeometryParseError, ValidationError
from .spline import KnotVector, SplineSpace1D, TensorSplineSpace, basis_derivatives

COINCIDENCE_TOL = 1e-12


def tensor_basis(space: TensorSplineSpace, points: np.ndarray, derivatives: bool = True):
    """Active tensor B-splines at many points.

    Parameters
    ----------
    space : TensorSplineSpace
    points : ndarray, shape (m, d)
        Reference coordinates in [0, 1]^d.

    Returns
    -------
    index : ndarray of int, shape (m, nloc)
        Flat indices of the active functions.
    values : ndarray, shape (m, nloc)
    grads : ndarray, shape (m, nloc, d) or None
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m, d = points.shape
    if d != space.dim:
        raise DomainError(f"points have dimension {d}, space has {space.dim}")
    order = 1 if derivatives else 0
    idx_1d, ders_1d = [], []
    for k, f in enumerate(space.factors):
        span = f.find_span(points[:, k])
        ders_1d.append(basis_derivatives(f.knots.values, f.degree, span, points[:, k], order))
        idx_1d.append(span[:, None] - f.degree + np.arange(f.degree + 1)[None, :])

    shape = space.shape
    index = np.zeros((m, 1), dtype=int)
    values = np.ones((m, 1))
    grads = np.ones((m, 1, d)) if derivatives else None
    stride = 1
    for k in range(d):
        nk = ders_1d[k].shape[2]
        index = (index[:, None, :] + stride * idx_1d[k][:, :, None]).reshape(m, -1)
        v = ders_1d[k][:, 0, :]
        if derivatives:
            dv = ders_1d[k][:, 1, :]
            g = grads[:, None, :, :] * v[:, :, None, None]
            g[:, :, :, k] = values[:, None, :] * dv[:, :, None]
            grads = g.reshape(m, -1, d)
        values = (values[:, None, :] * v[:, :, None]).reshape(m, -1)
        stride *= shape[k]
        del nk
    return index, values, grads


class Patch:
    """Single NURBS patch: geometry space, weights and control points."""

    def __init__(self, space: TensorSplineSpace, weights, control_points):
        self.space = space
        w = np.array(weights, dtype=float).ravel()
        P = np.array(control_points, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        if w.size != space.size or P.shape[0] != space.size:
            raise ValidationError(
                f"patch has {space.size} basis functions but {w.size} weights "
                f"and {P.shape[0]} control points")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be positive")
        if P.shape[1] != space.dim:
            raise ValidationError("control point dimension must equal parametric dimension")
        w.setflags(write=False)
        P.setflags(write=False)
        self.weights = w
        self.control_points = P

    @property
    def dim(self) -> int:
        return self.space.dim

    def rational_basis(self, points):
        """Rational basis R_i and gradients at ``points`` (reference coordinates)."""
        idx, B, dB = tensor_basis(self.space, points)
        w = self.weights[idx]
        Bw = B * w
        W = Bw.sum(axis=1)
        dW = np.einsum("mi,mik->mk", w, dB)
        R = Bw / W[:, None]
        dR = w[:, :, None] * (dB * W[:, None, None] - B[:, :, None] * dW[:, None, :]) \
            / (W ** 2)[:, None, None]
        return idx, R, dR


@dataclass(frozen=True)
class Interface:
    """Two coincident patch faces.

    Faces are numbered ``2 * axis + side``.  ``orientation`` maps the face
    grid of ``patch_b`` onto that of ``patch_a``: bit 2 transposes the two
    in-face axes (3D only), then bit 0 flips the first and bit 1 the second
    in-face axis.
    """

    patch_a: int
    face_a: int
    patch_b: int
    face_b: int
    orientation: int = 0


def face_indices(shape: Sequence[int], face: int) -> np.ndarray:
    """Flat indices (first axis fastest) of the basis functions on ``face``."""
    axis, side = divmod(face, 2)
    if axis >= len(shape):
        raise ValidationError(f"face {face} does not exist in dimension {len(shape)}")
    grid = np.arange(int(np.prod(shape))).reshape(shape, order="F")
    return np.take(grid, 0 if side == 0 else shape[axis] - 1, axis=axis)


def orient(face_grid: np.ndarray, orientation: int) -> np.ndarray:
    g = face_grid
    if orientation & 4:
        if g.ndim != 2:
            raise ValidationError("transposed orientation needs a 2D face")
        g = g.T
    if orientation & 1 and g.ndim >= 1:
        g = np.flip(g, axis=0)
    if orientation & 2:
        if g.ndim != 2:
            raise ValidationError("orientation bit 1 needs a 2D face")
        g = np.flip(g, axis=1)
    return g


def matched_face_indices(shapes_a, shapes_b, iface: Interface):
    """Pairs of flat indices identified by an interface (for arbitrary spaces)."""
    ga = face_indices(shapes_a, iface.face_a)
    gb = orient(face_indices(shapes_b, iface.face_b), iface.orientation)
    if ga.shape != gb.shape:
        raise ValidationError(
            f"interface {iface}: face grids {ga.shape} and {gb.shape} do not match")
    return ga.ravel(), gb.ravel()


@dataclass(frozen=True)
class MappingReport:
    """Sample-based validity verdict for one parameter value."""

    t: float
    min_det: float
    valid: bool
    patch: int
    location: tuple


class MorphGeometry:
    """Family of (multipatch) NURBS mappings F[t] between two control nets."""

    def __init__(self, patches: Sequence[Patch], points_end=None,
                 interfaces: Sequence[Interface] | None = None):
        self.patches = tuple(patches)
        if not self.patches:
            raise ValidationError("geometry needs at least one patch")
        dims = {p.dim for p in self.patches}
        if len(dims) != 1:
            raise ValidationError("all patches must have the same dimension")
        if points_end is None:
            points_end = [p.control_points for p in self.patches]
        ends = []
        for k, (patch, P1) in enumerate(zip(self.patches, points_end, strict=True)):
            P1 = np.array(P1, dtype=float)
            if P1.ndim == 1:
                P1 = P1[:, None]
            if P1.shape != patch.control_points.shape:
                raise ValidationError(
                    f"patch {k}: end net has shape {P1.shape}, start net "
                    f"{patch.control_points.shape}")
            P1.setflags(write=False)
            ends.append(P1)
        self.points_end = tuple(ends)
        self.interfaces = tuple(interfaces) if interfaces is not None else ()

    @property
    def dim(self) -> int:
        return self.patches[0].dim

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    def _patch(self, k):
        if not 0 <= k < self.n_patches:
            raise DomainError(f"patch index {k} out of range (0..{self.n_patches - 1})")
        return self.patches[k]

    def control_points(self, patch: int, t: float) -> np.ndarray:
        P0 = self._patch(patch).control_points
        return (1.0 - t) * P0 + t * self.points_end[patch]

    def displacement(self, patch: int) -> np.ndarray:
        return self.points_end[patch] - self._patch(patch).control_points

    def map_points(self, patch: int, t: float, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx, R, _ = self._patch(patch).rational_basis(pts)
        return np.einsum("mi,mik->mk", R, self.control_points(patch, t)[idx])

    def map_point(self, patch: int, t: float, xhat) -> np.ndarray:
        """F[t](xhat) for one reference point."""
        return self.map_points(patch, t, np.atleast_1d(xhat)[None, :])[0]

    def jacobian_data(self, patch: int, points):
        """Jacobian of F_0 and the velocity Jacobian at many points.

        Returns ``(J0, JV)`` of shape (m, d, d) with dF[t] = J0 + t * JV.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx, _, dR = self._patch(patch).rational_basis(pts)
        P0 = self.patches[patch].control_points[idx]
        dP = self.displacement(patch)[idx]
        J0 = np.einsum("mid,mik->mdk", P0, dR)
        JV = np.einsum("mid,mik->mdk", dP, dR)
        return J0, JV

    def jacobian(self, patch: int, t: float, xhat) -> np.ndarray:
        """dF[t] with entries dF_i / dxhat_j."""
        pts = np.atleast_1d(np.asarray(xhat, dtype=float))[None, :]
        idx, _, dR = self._patch(patch).rational_basis(pts)
        P = self.control_points(patch, t)[idx]
        return np.einsum("mid,mik->mdk", P, dR)[0]

    def velocity_jacobian(self, patch: int, xhat) -> np.ndarray:
        """sum_i (P_{1,i} - P_{0,i}) grad R_i^T; dF[t] = dF_0 + t * this."""
        _, JV = self.jacobian_data(patch, np.atleast_1d(np.asarray(xhat, float))[None, :])
        return JV[0]

    def sample_points(self, patch: int, samples_per_element: int) -> np.ndarray:
        """Tensor grid of sample points, ``samples_per_element`` per direction and element."""
        if samples_per_element < 1:
            raise DomainError("samples_per_element must be >= 1")
        axes = []
        for f in self._patch(patch).space.factors:
            b = f.breaks
            if samples_per_element == 1:
                s = 0.5 * (b[:-1] + b[1:])
            else:
                u = np.linspace(0.0, 1.0, samples_per_element)
                s = np.unique((b[:-1, None] + (b[1:] - b[:-1])[:, None] * u).ravel())
            axes.append(s)
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel(order="F") for g in grid], axis=1)

    def validate_mapping(self, t: float, samples_per_element: int = 5,
                         extra_points: np.ndarray | None = None) -> MappingReport:
        """Sample det dF[t] on every element of every patch; valid iff min > 0."""
        best = (np.inf, -1, ())
        for k in range(self.n_patches):
            pts = self.sample_points(k, samples_per_element)
            if extra_points is not None:
                pts = np.vstack([pts, extra_points])
            J0, JV = self.jacobian_data(k, pts)
            dets = np.linalg.det(J0 + t * JV)
            i = int(np.argmin(dets))
            if dets[i] < best[0]:
                best = (float(dets[i]), k, tuple(float(x) for x in pts[i]))
        return MappingReport(float(t), best[0], bool(best[0] > 0), best[1], best[2])

    def with_interfaces(self, interfaces) -> "MorphGeometry":
        return MorphGeometry(self.patches, self.points_end, interfaces)


def detect_interfaces(geom: MorphGeometry, tol: float = COINCIDENCE_TOL) -> list[Interface]:
    """Find coincident patch faces by matching control points of both nets."""
    d = geom.dim
    n_orient = {1: 1, 2: 2, 3: 8}[d]
    found = []
    used = set()
    for a, b in itertools.combinations(range(geom.n_patches), 2):
        sa, sb = geom.patches[a].space.shape, geom.patches[b].space.shape
        for fa in range(2 * d):
            if (a, fa) in used:
                continue
            for fb in range(2 * d):
                if (b, fb) in used:
                    continue
                for o in range(n_orient):
                    iface = Interface(a, fa, b, fb, o)
                    try:
                        ia, ib = matched_face_indices(sa, sb, iface)
                    except ValidationError:
                        continue
                    if _coincide(geom, iface, ia, ib, tol):
                        found.append(iface)
                        used.update({(a, fa), (b, fb)})
                        break
                if (a, fa) in used:
                    break
    return found


def _coincide(geom, iface, ia, ib, tol):
    for t in (0.0, 1.0):
        Pa = geom.control_points(iface.patch_a, t)[ia]
        Pb = geom.control_points(iface.patch_b, t)[ib]
        if not np.all(np.abs(Pa - Pb) <= tol * max(1.0, np.abs(Pa).max())):
            return False
    wa = geom.patches[iface.patch_a].weights[ia]
    wb = geom.patches[iface.patch_b].weights[ib]
    return bool(np.allclose(wa, wb, rtol=0, atol=tol))


def check_interfaces(geom: MorphGeometry, tol: float = COINCIDENCE_TOL) -> None:
    """Raise ValidationError unless every declared interface is coincident."""
    for iface in geom.interfaces:
        for k in (iface.patch_a, iface.patch_b):
            geom._patch(k)
        ia, ib = matched_face_indices(geom.patches[iface.patch_a].space.shape,
                                      geom.patches[iface.patch_b].space.shape, iface)
        if not _coincide(geom, iface, ia, ib, tol):
            raise ValidationError(f"interface {iface}: control points or weights do not coincide")


# --------------------------------------------------------------------------
# JSON I/O

def _require(obj, key, where):
    if key not in obj:
        raise GeometryParseError(f"missing field '{key}'", where)
    return obj[key]


def _as_array(value, where, ndim):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise GeometryParseError(f"expected numbers ({exc})", where) from None
    if arr.ndim != ndim:
        raise GeometryParseError(f"expected a {ndim}-dimensional array", where)
    if not np.all(np.isfinite(arr)):
        raise GeometryParseError("non-finite value", where)
    return arr


def geometry_from_dict(data: dict) -> MorphGeometry:
    """Build a geometry from the decoded JSON document."""
    if not isinstance(data, dict):
        raise GeometryParseError("top level must be an object", "$")
    d = _require(data, "dimension", "$")
    if d not in (1, 2, 3):
        raise GeometryParseError("dimension must be 1, 2 or 3", "dimension")
    raw_patches = _require(data, "patches", "$")
    if not isinstance(raw_patches, list) or not raw_patches:
        raise GeometryParseError("expected a non-empty list", "patches")
    patches, ends = [], []
    for k, rp in enumerate(raw_patches):
        where = f"patches[{k}]"
        if "weights_end" in rp:
            raise GeometryParseError("t-dependent weights are not supported", where + ".weights_end")
        degrees = _require(rp, "degrees", where)
        knots = _require(rp, "knots", where)
        if len(degrees) != d or len(knots) != d:
            raise GeometryParseError(f"need {d} degrees and knot vectors", where)
        factors = []
        for j, (p, kv) in enumerate(zip(degrees, knots)):
            try:
                factors.append(SplineSpace1D(KnotVector(_as_array(kv, f"{where}.knots[{j}]", 1), int(p))))
            except ValidationError as exc:
                raise GeometryParseError(str(exc), f"{where}.knots[{j}]") from None
        space = TensorSplineSpace(factors)
        P0 = _as_array(_require(rp, "points_start", where), where + ".points_start", 2)
        w = _as_array(rp.get("weights", np.ones(space.size).tolist()), where + ".weights", 1)
        P1 = _as_array(rp.get("points_end", P0.tolist()), where + ".points_end", 2)
        try:
            patches.append(Patch(space, w, P0))
        except ValidationError as exc:
            raise GeometryParseError(str(exc), where) from None
        if P1.shape != P0.shape:
            raise GeometryParseError("points_end must match points_start", where + ".points_end")
        ends.append(P1)
    interfaces = None
    if "interfaces" in data:
        interfaces = []
        for k, ri in enumerate(data["interfaces"]):
            where = f"interfaces[{k}]"
            try:
                interfaces.append(Interface(int(_require(ri, "patch_a", where)),
                                            int(_require(ri, "face_a", where)),
                                            int(_require(ri, "patch_b", where)),
                                            int(_require(ri, "face_b", where)),
                                            int(ri.get("orientation", 0))))
            except (TypeError, ValueError) as exc:
                raise GeometryParseError(str(exc), where) from None
    geom = MorphGeometry(patches, ends, interfaces)
    if interfaces is None:
        geom = geom.with_interfaces(detect_interfaces(geom))
    else:
        try:
            check_interfaces(geom)
        except (ValidationError, DomainError) as exc:
            raise GeometryParseError(str(exc), "interfaces") from None
    return geom


def geometry_to_dict(geom: MorphGeometry) -> dict:
    out = {"dimension": geom.dim, "patches": [], "interfaces": []}
    for patch, P1 in zip(geom.patches, geom.points_end):
        out["patches"].append({
            "degrees": list(patch.space.degrees),
            "knots": [f.knots.values.tolist() for f in patch.space.factors],
            "weights": patch.weights.tolist(),
            "points_start": patch.control_points.tolist(),
            "points_end": P1.tolist(),
        })
    for i in geom.interfaces:
        out["interfaces"].append({"patch_a": i.patch_a, "face_a": i.face_a,
                                  "patch_b": i.patch_b, "face_b": i.face_b,
                                  "orientation": i.orientation})
    return out


def load_geometry(path) -> MorphGeometry:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GeometryParseError(exc.msg, f"line {exc.lineno}, column {exc.colno}") from None
    return geometry_from_dict(data)


def save_geometry(geom: MorphGeometry, path) -> None:
    Path(path).write_text(json.dumps(geometry_to_dict(geom), indent=1), encoding="utf-8")


def require_valid(geom: MorphGeometry, t: float, samples_per_element: int = 5) -> MappingReport:
    rep = geom.validate_mapping(t, samples_per_element)
    if not rep.valid:
        raise GeometryError(
            f"mapping not valid at t={t}: det dF = {rep.min_det:.3e} in patch {rep.patch} "
            f"at {rep.location}")
    return rep
