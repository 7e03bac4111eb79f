import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from igasens import shapes
from igasens.assembly import (assemble, assemble_direct, build_space, discrete_gradient,
                              read_triplets)
from igasens.errors import GeometryError, UnsupportedFeatureError, ValidationError
from igasens.geometry import MorphGeometry, Patch
from igasens.oracles import fem_q1_square, finite_difference
from igasens.quadrature import QuadratureRule, element_points

from conftest import rel_err


def no_bc(space):
    space.boundary[:] = False
    space.__post_init__()
    return space


def test_quadrature_exactness():
    rule = QuadratureRule((3,))
    x, w = rule.reference(0)
    for k in range(6):
        assert abs(w @ x ** k - 1 / (k + 1)) < 1e-15
    pts, wts = element_points(QuadratureRule((2, 3)), [np.array([0, 0.5, 1]), np.array([0, 1])])
    assert pts.shape == (2, 6, 2) and abs(wts.sum() - 1) < 1e-15
    assert np.all(pts[1, :, 0] > 0.5)


def test_h1_counts():
    g = shapes.unit_box(2)
    S = build_space(g, "h1", (2, 2), 4)
    assert S.n_total == 36 and S.n_dof == 16


def test_hcurl_counts():
    g = shapes.unit_box(3)
    S = build_space(g, "hcurl", (2, 2, 2), 2)
    assert S.components[0][0].size == 3 * 4 * 4 == 48
    assert S.components[0][0].degrees == (1, 2, 2)
    assert S.n_total == 144


def test_glued_squares():
    a = shapes.unit_box(2)
    P = a.patches[0].control_points + [1.0, 0.0]
    g = MorphGeometry([a.patches[0], Patch(a.patches[0].space, np.ones(4), P)])
    from igasens.geometry import detect_interfaces
    g = g.with_interfaces(detect_interfaces(g))
    S = build_space(g, "h1", (1, 1), 1)
    assert S.n_total == 6


def test_hcurl_multipatch_rejected(radial_disk):
    with pytest.raises(UnsupportedFeatureError):
        build_space(radial_disk, "hcurl", 2, 1)


def test_mismatched_interface_spaces():
    a = shapes.unit_box(2)
    b = shapes.box([1.0, 1.0], degree=1, elements=(1, 2))
    P = b.patches[0].control_points + [1.0, 0.0]
    g = MorphGeometry([a.patches[0], Patch(b.patches[0].space, np.ones(6), P)])
    from igasens.geometry import Interface
    g = g.with_interfaces([Interface(0, 1, 1, 0, 0)])
    with pytest.raises(ValidationError):
        build_space(g, "h1", 1, 1)


def test_classical_bilinear_element():
    g = shapes.unit_box(2)
    S = no_bc(build_space(g, "h1", (1, 1), 1))
    K, M = assemble_direct(S, g, 0.0)
    Kref, Mref = fem_q1_square()
    np.testing.assert_allclose(K.toarray(), Kref, atol=1e-15)
    np.testing.assert_allclose(M.toarray(), Mref, atol=1e-15)


def test_zero_morph_derivatives_vanish():
    g = shapes.quarter_annulus()
    S = build_space(g, "h1", 2, 3)
    sysm = assemble(S, g, 0.3, 3)
    for k in range(1, 4):
        assert abs(sysm.K_stack[k]).max() == 0 and abs(sysm.M_stack[k]).max() == 0


def test_3d_scaling_h1():
    g = shapes.unit_box(3, 1.0, 2.0, degree=1)
    S = build_space(g, "h1", 2, 2)
    sysm = assemble(S, g, 0.0, 2)
    K0, K1, M0, M1 = sysm.K_stack[0], sysm.K_stack[1], sysm.M_stack[0], sysm.M_stack[1]
    assert abs(M1 - 3 * M0).max() <= 1e-12 * abs(M0).max()
    assert abs(K1 - K0).max() <= 1e-12 * abs(K0).max()


def test_3d_scaling_hcurl_direct():
    g = shapes.unit_box(3, 1.0, 2.0, degree=1)
    S = build_space(g, "hcurl", 2, 2)
    K0, M0 = assemble_direct(S, g, 0.0)
    for t in (0.3, 0.8):
        K, M = assemble_direct(S, g, t)
        assert abs(M - (1 + t) * M0).max() <= 1e-12 * abs(M0).max()
        assert abs(K - K0 / (1 + t)).max() <= 1e-12 * abs(K0).max()


def test_direct_equals_stack_at_t0(ellipse_disk):
    S = build_space(ellipse_disk, "h1", 2, 2)
    sysm = assemble(S, ellipse_disk, 0.4, 2)
    K, M = assemble_direct(S, ellipse_disk, 0.4)
    assert abs(K - sysm.K_stack[0]).max() <= 1e-13 * abs(K).max()
    assert abs(M - sysm.M_stack[0]).max() <= 1e-13 * abs(M).max()


def test_taylor_sum_of_stacks(ellipse_disk):
    S = build_space(ellipse_disk, "h1", 2, 2)
    sysm = assemble(S, ellipse_disk, 0.4, 6)
    K, M = assemble_direct(S, ellipse_disk, 0.45)
    Kt, Mt = sysm.taylor(0.05)
    assert rel_err(Kt, K) <= 1e-10 and rel_err(Mt, M) <= 1e-13


def _fd_cases():
    return [
        ("h1-ellipse", lambda: shapes.disk_to_ellipse(0.5, (0.6, 0.45)), "h1", 2, 2),
        ("h1-perturbed-disk", lambda: shapes.perturbed(shapes.disk(0.5), 0.02, seed=4), "h1", 2, 2),
        ("hcurl-cube", lambda: shapes.perturbed(shapes.box([1, 1, 1], degree=2), 0.05, seed=1), "hcurl", 2, 2),
        ("hcurl-square", lambda: shapes.perturbed(shapes.box([1, 1], degree=2), 0.05, seed=2), "hcurl", 2, 3),
    ]


@pytest.mark.parametrize("name,make,kind,deg,ref", _fd_cases())
def test_stacks_match_finite_differences(name, make, kind, deg, ref):
    g = make()
    S = build_space(g, kind, deg, ref)
    t0 = 0.4
    sysm = assemble(S, g, t0, 4)
    for k, h, tol in ((1, 1e-5, 1e-6), (2, 1e-3, 1e-4), (3, 1e-2, 1e-3), (4, 1e-2, 1e-3)):
        for which in (0, 1):
            fd = finite_difference(lambda t: assemble_direct(S, g, t)[which], t0, k, h)
            exact = (sysm.K_stack, sysm.M_stack)[which][k]
            base = (sysm.K_stack, sysm.M_stack)[which][0]
            # affine morphs have identically vanishing higher M derivatives
            err = spla.norm(fd - exact) / max(spla.norm(exact), 1e-3 * spla.norm(base))
            assert err <= tol, (name, k, which, err)


def test_symmetry_and_spectra(ellipse_disk):
    S = build_space(ellipse_disk, "h1", 2, 2)
    sysm = assemble(S, ellipse_disk, 0.5, 3)
    for A in sysm.K_stack + sysm.M_stack:
        assert abs(A - A.T).max() <= 1e-14 * abs(A).max()
    assert sla.eigvalsh(sysm.M_stack[0].toarray()).min() > 0
    assert sla.eigvalsh(sysm.K_stack[0].toarray()).min() > -1e-12


def test_hcurl_k_semidefinite():
    g = shapes.perturbed(shapes.box([1, 1, 1], degree=2), 0.05, seed=1)
    S = build_space(g, "hcurl", 2, 2)
    K, M = assemble_direct(S, g, 0.5)
    ev = sla.eigvalsh(K.toarray())
    assert ev.min() >= -1e-12 * ev.max()
    assert sla.eigvalsh(M.toarray()).min() > 0


def test_pullback_settings_agree(rng):
    for g, kind, deg, ref in ((shapes.perturbed(shapes.disk(0.5), 0.03, seed=5), "h1", 2, 2),
                              (shapes.perturbed(shapes.box([1, 1, 1], degree=2), 0.05, seed=1), "hcurl", 2, 2),
                              (shapes.perturbed(shapes.box([1, 1], degree=2), 0.05, seed=2), "hcurl", 2, 2)):
        S = build_space(g, kind, deg, ref)
        for t in rng.uniform(0, 1, 3):
            Ka, Ma = assemble_direct(S, g, t)
            Kb, Mb = assemble_direct(S, g, t, setting="physical")
            assert rel_err(Kb, Ka) <= 1e-10 and rel_err(Mb, Ma) <= 1e-10
        A = assemble(S, g, 0.3, 3)
        B = assemble(S, g, 0.3, 3, setting="physical")
        for k in range(4):
            assert rel_err(B.K_stack[k], A.K_stack[k]) <= 1e-10


@pytest.mark.parametrize("dim", [2, 3])
def test_discrete_de_rham(dim):
    g = shapes.perturbed(shapes.box([1.0] * dim, degree=2), 0.05, seed=dim)
    H = build_space(g, "h1", 2, 2)
    E = build_space(g, "hcurl", 2, 2)
    G = discrete_gradient(H, E).toarray()
    # gradients of interior H1 functions have no tangential boundary part
    removed = np.flatnonzero(E.boundary)
    assert np.abs(G[np.ix_(removed, H.free)]).max() == 0
    Gf = G[np.ix_(E.free, H.free)]
    K, _ = assemble_direct(E, g, 0.6)
    K = K.toarray()
    normK = np.linalg.norm(K, 2)
    for j in range(Gf.shape[1]):
        gj = Gf[:, j]
        assert np.linalg.norm(K @ gj) <= 1e-10 * normK * np.linalg.norm(gj)


def test_invalid_mapping_raises():
    base = shapes.unit_box(2, degree=2, elements=2)
    P = base.patches[0].control_points.copy()
    P[5] = -P[5]
    g = MorphGeometry([Patch(base.patches[0].space, np.ones(16), P)])
    S = build_space(g, "h1", 2, 1)
    with pytest.raises(GeometryError, match="not valid"):
        assemble(S, g, 0.0, 1)
    with pytest.raises(GeometryError, match="patch 0"):
        assemble(S, g, 0.0, 1, validate=False)


def test_dump_roundtrip(tmp_path, ellipse_disk):
    S = build_space(ellipse_disk, "h1", 2, 1)
    sysm = assemble(S, ellipse_disk, 0.2, 1)
    paths = sysm.dump(str(tmp_path / "sys"))
    assert len(paths) == 4
    lines = open(paths[0]).read().splitlines()
    i, j, _ = lines[0].split()
    assert int(i) >= int(j)
    K = read_triplets(paths[0], S.n_dof)
    assert abs(K - sysm.K_stack[0]).max() == 0


@pytest.mark.parametrize("name,make,kind,deg,ref", _fd_cases())
def test_second_derivative_small_step_extended_precision(name, make, kind, deg, ref):
    # with h = 1e-5 the second difference needs extended-precision matrices
    g = make()
    S = build_space(g, kind, deg, ref)
    t0 = np.longdouble(0.4)
    sysm = assemble(S, g, 0.4, 2)
    for k in (1, 2):
        for which in (0, 1):
            fd = finite_difference(lambda t: assemble_direct(S, g, t, dtype=np.longdouble)[which],
                                   t0, k, np.longdouble(1e-5))
            exact = (sysm.K_stack, sysm.M_stack)[which][k]
            err = spla.norm(fd.astype(float) - exact) / spla.norm(exact)
            assert err <= 1e-6, (name, k, which, err)


def test_extended_precision_matches_double(ellipse_disk):
    S = build_space(ellipse_disk, "h1", 2, 2)
    K, M = assemble_direct(S, ellipse_disk, 0.3)
    Kl, Ml = assemble_direct(S, ellipse_disk, 0.3, dtype=np.longdouble)
    assert Kl.dtype == np.longdouble
    assert rel_err(Kl.astype(float), K) <= 1e-14
