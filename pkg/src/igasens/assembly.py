"""Stiffness and mass matrices and their t-derivatives on a morphing domain.

All integrals are pulled back to the reference patch.  With G[t] the
mapping (reference setting) or G[t] = I + t dV composed with the start
mapping (physical setting), the integrands only depend on t through

    det G,    A = det G * G^-1 G^-T,    C = G^T G / det G,

so the derivative matrices follow by inserting the jets of these three
quantities into fixed quadrature sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (DomainError, GeometryError, SingularityError,
                     UnsupportedFeatureError, ValidationError)
from .geometry import MorphGeometry, face_indices, matched_face_indices, tensor_basis
from .jets import MAX_ORDER, A_jet, C_jet, ScalarJet, jet_det, jet_from_affine, jet_inv, jet_recip
from .quadrature import QuadratureRule, element_points
from .spline import TensorSplineSpace, space_on_breaks

KINDS = ("h1", "hcurl")
SETTINGS = ("reference", "physical")


@dataclass
class DiscreteSpace:
    """Global numbering of a (glued) H1 or H(curl) spline space.

    ``components[k]`` lists the tensor spaces of patch k (one for H1, d
    for H(curl)); ``local_to_global[k][c]`` maps their flat indices to
    global indices before boundary elimination.
    """

    kind: str
    degrees: tuple
    refine: int
    components: list
    local_to_global: list
    n_total: int
    boundary: np.ndarray
    free: np.ndarray = field(init=False)

    def __post_init__(self):
        self.free = np.flatnonzero(~self.boundary)

    @property
    def n_dof(self) -> int:
        return int(self.free.size)

    @property
    def n_patches(self) -> int:
        return len(self.components)

    def expand(self, u):
        """Free-dof vector to a full pre-elimination vector (boundary dofs zero)."""
        full = np.zeros(self.n_total)
        full[self.free] = u
        return full


def _solution_space(gspace: TensorSplineSpace, degrees, refine) -> TensorSplineSpace:
    return TensorSplineSpace([space_on_breaks(f, int(p), refine)
                              for f, p in zip(gspace.factors, degrees)])


def _face_knots_match(sa, sb, iface):
    d = sa.dim
    ax_a = [k for k in range(d) if k != iface.face_a // 2]
    ax_b = [k for k in range(d) if k != iface.face_b // 2]
    if iface.orientation & 4:
        ax_b = ax_b[::-1]
    for j, (ka, kb) in enumerate(zip(ax_a, ax_b)):
        ua = sa.factors[ka].knots.values
        ub = sb.factors[kb].knots.values
        if iface.orientation & (1 << j):
            ub = 1.0 - ub[::-1]
        if ua.shape != ub.shape or not np.allclose(ua, ub, atol=1e-12):
            return False
    return True


def build_space(geom: MorphGeometry, kind: str = "h1", degrees=None, refine: int = 1) -> DiscreteSpace:
    """Discrete space of ``kind`` with the given solution degrees.

    ``refine`` splits every geometry element into ``refine`` equal parts per
    direction.  Boundary functions (all faces that are not interfaces for
    H1, tangential components for H(curl)) are flagged for elimination.
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise DomainError(f"unknown space kind {kind!r}")
    d = geom.dim
    if degrees is None:
        degrees = geom.patches[0].space.degrees
    degrees = tuple(int(p) for p in np.broadcast_to(np.atleast_1d(degrees), (d,)))
    if min(degrees) < 1:
        raise DomainError("solution degrees must be >= 1")
    if refine < 1:
        raise DomainError("refine must be >= 1")

    if kind == "hcurl":
        if geom.n_patches > 1:
            raise UnsupportedFeatureError("H(curl) spaces are single-patch only")
        if d < 2:
            raise DomainError("H(curl) needs dimension 2 or 3")
        scalar = _solution_space(geom.patches[0].space, degrees, refine)
        comps, l2g, flags = [], [], []
        offset = 0
        for c in range(d):
            fac = list(scalar.factors)
            fac[c] = fac[c].lowered()
            S = TensorSplineSpace(fac)
            comps.append(S)
            l2g.append(offset + np.arange(S.size))
            offset += S.size
            grid = np.zeros(S.shape, dtype=bool)
            for e in range(d):
                if e != c:
                    sl = [slice(None)] * d
                    sl[e] = [0, S.shape[e] - 1]
                    grid[tuple(sl)] = True
            flags.append(grid.ravel(order="F"))
        return DiscreteSpace(kind, degrees, refine, [comps], [l2g], offset, np.concatenate(flags))

    spaces = [_solution_space(p.space, degrees, refine) for p in geom.patches]
    offsets = np.concatenate([[0], np.cumsum([s.size for s in spaces])])
    parent = np.arange(offsets[-1])

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    interface_faces = set()
    for iface in geom.interfaces:
        sa, sb = spaces[iface.patch_a], spaces[iface.patch_b]
        if not _face_knots_match(sa, sb, iface):
            raise ValidationError(f"interface {iface}: solution spaces do not match")
        ia, ib = matched_face_indices(sa.shape, sb.shape, iface)
        for i, j in zip(ia + offsets[iface.patch_a], ib + offsets[iface.patch_b]):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
        interface_faces.update({(iface.patch_a, iface.face_a), (iface.patch_b, iface.face_b)})

    roots = np.array([find(i) for i in range(offsets[-1])])
    uniq, numbering = np.unique(roots, return_inverse=True)
    n_total = uniq.size
    boundary = np.zeros(n_total, dtype=bool)
    l2g = []
    for k, S in enumerate(spaces):
        g = numbering[offsets[k]:offsets[k + 1]]
        l2g.append([g])
        for f in range(2 * d):
            if (k, f) not in interface_faces:
                boundary[g[face_indices(S.shape, f).ravel()]] = True
    return DiscreteSpace(kind, degrees, refine, [[S] for S in spaces], l2g, n_total, boundary)


@dataclass
class AssembledSystem:
    """Derivative stacks K^(k), M^(k), k = 0..order, on the free dofs."""

    K_stack: list
    M_stack: list
    t0: float
    space: DiscreteSpace
    setting: str = "reference"

    @property
    def order(self) -> int:
        return len(self.K_stack) - 1

    @property
    def n_dof(self) -> int:
        return self.space.n_dof

    def taylor(self, delta, order=None):
        """Truncated Taylor sums of K and M at t0 + delta."""
        n = self.order if order is None else order
        K = self.K_stack[0].copy()
        M = self.M_stack[0].copy()
        fact = 1.0
        for k in range(1, n + 1):
            fact *= k
            K = K + self.K_stack[k] * (delta ** k / fact)
            M = M + self.M_stack[k] * (delta ** k / fact)
        return K, M

    def dump(self, stem):
        """Write K_k and M_k as 'i j value' lower-triangle text files; returns paths."""
        paths = []
        for name, stack in (("K", self.K_stack), ("M", self.M_stack)):
            for k, A in enumerate(stack):
                path = f"{stem}_{name}{k}.txt"
                write_triplets(A, path)
                paths.append(path)
        return paths


def write_triplets(A, path):
    L = sp.tril(sp.coo_matrix(A))
    order = np.lexsort((L.col, L.row))
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, v in zip(L.row[order], L.col[order], L.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")


def read_triplets(path, n):
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((n, n))
    i, j, v = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2]
    L = sp.coo_matrix((v, (i, j)), shape=(n, n)).tocsr()
    return (L + sp.tril(L, -1).T).tocsr()


def default_quadrature(space: DiscreteSpace) -> QuadratureRule:
    return QuadratureRule.for_degrees(space.degrees)


def _det_adj(G):
    """Determinant and adjugate of a batch of 1x1, 2x2 or 3x3 matrices (any float dtype)."""
    d = G.shape[-1]
    if d == 1:
        return G[:, 0, 0].copy(), np.ones_like(G)
    if d == 2:
        adj = np.empty_like(G)
        adj[:, 0, 0], adj[:, 1, 1] = G[:, 1, 1], G[:, 0, 0]
        adj[:, 0, 1], adj[:, 1, 0] = -G[:, 0, 1], -G[:, 1, 0]
    else:
        adj = np.empty_like(G)
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != j]
                c = [k for k in range(3) if k != i]
                adj[:, i, j] = (-1) ** (i + j) * (G[:, r[0], c[0]] * G[:, r[1], c[1]]
                                                 - G[:, r[0], c[1]] * G[:, r[1], c[0]])
    det = np.einsum("mj,mj->m", G[:, 0, :], adj[:, :, 0])
    return det, adj


def _pullback_coefficients(G0, GV, t0, order, direct, dtype=float):
    """det, A, C stacks of shape (order+1, m[, d, d]) for G = G0 + t GV."""
    if direct:
        G = np.asarray(G0, dtype=dtype) + dtype(t0) * np.asarray(GV, dtype=dtype)
        det, adj = _det_adj(G)
        _check_det(det)
        A = adj @ np.swapaxes(adj, -1, -2) / det[:, None, None]
        C = np.swapaxes(G, -1, -2) @ G / det[:, None, None]
        return det[None], A[None], C[None]
    Gj = jet_from_affine(G0, GV, t0, order)
    detj = jet_det(Gj)
    _check_det(detj.coeffs[0])
    A = A_jet(Gj, det=detj, inv=jet_inv(Gj))
    C = C_jet(Gj, det=detj)
    return detj.coeffs, A.coeffs, C.coeffs


class _BadDet(Exception):
    def __init__(self, index, value):
        self.index, self.value = index, value


def _check_det(det):
    scale = max(np.abs(det).max(), np.finfo(float).tiny)
    bad = np.flatnonzero(~(det > 1e-14 * scale))
    if bad.size:
        raise _BadDet(int(bad[0]), float(det[bad[0]]))


def _raise_det(err, patch, pts, t):
    loc = tuple(float(x) for x in pts[err.index])
    if err.value < 0:
        raise GeometryError(f"negative Jacobian determinant {err.value:.3e} at t={t}, "
                            f"patch {patch}, reference point {loc}")
    raise SingularityError(f"singular Jacobian at t={t}, patch {patch}, reference point {loc}")


def _component_data(space: DiscreteSpace, patch: int, pts):
    """Values (m, nloc, d) and curls/gradients (m, nloc, r) of all local functions."""
    comps = space.components[patch]
    m, d = pts.shape
    if space.kind == "h1":
        idx, B, dB = tensor_basis(comps[0], pts)
        gidx = space.local_to_global[patch][0][idx]
        return gidx, B[:, :, None], dB
    gl, vals, curls = [], [], []
    for c, S in enumerate(comps):
        idx, B, dB = tensor_basis(S, pts)
        gl.append(space.local_to_global[patch][c][idx])
        v = np.zeros(B.shape + (d,))
        v[:, :, c] = B
        vals.append(v)
        if d == 2:
            cu = (-dB[:, :, 1] if c == 0 else dB[:, :, 0])[:, :, None]
        else:
            e = np.zeros(3)
            e[c] = 1.0
            cu = np.cross(dB, e)
        curls.append(cu)
    return np.concatenate(gl, axis=1), np.concatenate(vals, axis=1), np.concatenate(curls, axis=1)


def _assemble_stacks(space, geom, t0, order, quad, setting, direct, dtype=float):
    if setting not in SETTINGS:
        raise DomainError(f"unknown setting {setting!r}")
    if order < 0 or order > MAX_ORDER:
        raise DomainError(f"order must lie in 0..{MAX_ORDER}")
    quad = default_quadrature(space) if quad is None else quad
    n = space.n_total
    n_out = 1 if direct else order + 1
    rows, cols, kvals, mvals = [], [], [[] for _ in range(n_out)], [[] for _ in range(n_out)]
    d = geom.dim
    for patch in range(geom.n_patches):
        S0 = space.components[patch][0]
        breaks = [f.breaks for f in S0.factors]
        epts, ewts = element_points(quad, breaks)
        E, Q, _ = epts.shape
        pts = epts.reshape(E * Q, d)
        J0, JV = geom.jacobian_data(patch, pts)
        gidx, vals, grads = _component_data(space, patch, pts)
        w = ewts.reshape(-1)
        if setting == "reference":
            G0, GV = J0, JV
        else:
            det0 = np.linalg.det(J0)
            try:
                _check_det(det0)
            except _BadDet as err:
                _raise_det(err, patch, pts, 0.0)
            J0inv = np.linalg.inv(J0)
            G0 = np.broadcast_to(np.eye(d), J0.shape)
            GV = JV @ J0inv
            w = w * det0
            if space.kind == "h1":
                grads = np.einsum("mba,mib->mia", J0inv, grads)
            else:
                vals = np.einsum("mba,mib->mia", J0inv, vals)
                if d == 3:
                    grads = np.einsum("mab,mib->mia", J0, grads) / det0[:, None, None]
                else:
                    grads = grads / det0[:, None, None]
        try:
            det, A, C = _pullback_coefficients(G0, GV, t0, order, direct, dtype)
        except _BadDet as err:
            _raise_det(err, patch, pts, t0)

        nloc = gidx.shape[1]
        eg = gidx.reshape(E, Q, nloc)[:, 0, :]
        rows.append(np.repeat(eg, nloc, axis=1).ravel())
        cols.append(np.tile(eg, (1, nloc)).ravel())
        wq = w.reshape(E, Q)
        gq = grads.reshape(E, Q, nloc, -1)
        vq = vals.reshape(E, Q, nloc, -1)
        for k in range(n_out):
            if space.kind == "h1":
                Kc = A[k].reshape(E, Q, d, d)
                Kloc = np.einsum("eq,eqia,eqab,eqjb->eij", wq, gq, Kc, gq, optimize=True)
                Mloc = np.einsum("eq,eqi,eqj->eij", wq * det[k].reshape(E, Q),
                                 vq[..., 0], vq[..., 0], optimize=True)
            else:
                Mc = A[k].reshape(E, Q, d, d)
                Mloc = np.einsum("eq,eqia,eqab,eqjb->eij", wq, vq, Mc, vq, optimize=True)
                if d == 3:
                    Cc = C[k].reshape(E, Q, d, d)
                    Kloc = np.einsum("eq,eqia,eqab,eqjb->eij", wq, gq, Cc, gq, optimize=True)
                else:
                    # scalar curl: the curl coefficient is 1 / det
                    inv_det = (1.0 / det[0] if direct else _recip_stack(det)[k]).reshape(E, Q)
                    Kloc = np.einsum("eq,eqi,eqj->eij", wq * inv_det,
                                     gq[..., 0], gq[..., 0], optimize=True)
            kvals[k].append((0.5 * (Kloc + np.swapaxes(Kloc, 1, 2))).ravel())
            mvals[k].append((0.5 * (Mloc + np.swapaxes(Mloc, 1, 2))).ravel())

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    free = space.free
    K_stack, M_stack = [], []
    for k in range(n_out):
        for vals_k, stack in ((kvals[k], K_stack), (mvals[k], M_stack)):
            A_full = sp.coo_matrix((np.concatenate(vals_k), (r, c)), shape=(n, n)).tocsr()
            A_free = A_full[free][:, free].tocsr()
            A_free.sum_duplicates()
            A_free.sort_indices()
            stack.append(A_free)
    return K_stack, M_stack


def _recip_stack(det):
    return jet_recip(ScalarJet(det)).coeffs


def assemble(space: DiscreteSpace, geom: MorphGeometry, t0: float, order: int = 1,
             quad: QuadratureRule | None = None, setting: str = "reference",
             validate: bool = True) -> AssembledSystem:
    """K^(k) and M^(k) at ``t0`` for k = 0..order.

    Parameters
    ----------
    setting : {"reference", "physical"}
        Pull back to the reference patch with G = F[t], or to the start
        domain with G = I + t dV.  Both give the same matrices.
    validate : bool
        Sample the mapping at ``t0`` first and raise GeometryError if it
        is not valid.
    """
    if validate:
        rep = geom.validate_mapping(t0)
        if not rep.valid:
            raise GeometryError(f"mapping not valid at t={t0}: min det {rep.min_det:.3e} "
                                f"in patch {rep.patch} at {rep.location}")
    K, M = _assemble_stacks(space, geom, t0, order, quad, setting, direct=False)
    return AssembledSystem(K, M, float(t0), space, setting)


def assemble_direct(space: DiscreteSpace, geom: MorphGeometry, t: float,
                    quad: QuadratureRule | None = None, setting: str = "reference",
                    dtype=float):
    """K and M evaluated directly at ``t`` (no jets).

    ``dtype=np.longdouble`` carries the t-dependent part of the integrands
    and the sums in extended precision, which finite-difference checks of
    higher derivatives need.
    """
    K, M = _assemble_stacks(space, geom, t, 0, quad, setting, direct=True, dtype=dtype)
    return K[0], M[0]


def discrete_gradient(h1: DiscreteSpace, hcurl: DiscreteSpace):
    """Sparse gradient map from the full H1 numbering to the full H(curl) numbering.

    Requires the single-patch pair built with the same degrees and
    refinement, so that the derivative of each H1 function is an exact
    combination of H(curl) basis functions.
    """
    if h1.kind != "h1" or hcurl.kind != "hcurl" or h1.n_patches != 1:
        raise DomainError("need a single-patch H1 space and an H(curl) space")
    S = h1.components[0][0]
    d = S.dim
    blocks = []
    for c in range(d):
        mats = []
        for e, f in enumerate(S.factors):
            mats.append(sp.csr_matrix(f.derivative_matrix()) if e == c else sp.identity(f.n_basis, format="csr"))
        B = mats[0]
        for Mk in mats[1:]:
            B = sp.kron(Mk, B, format="csr")
        blocks.append(B)
    G = sp.vstack(blocks, format="csr")
    if G.shape != (hcurl.n_total, h1.n_total):
        raise ValidationError("H1 and H(curl) spaces are not compatible")
    return G
