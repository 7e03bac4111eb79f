import json

import numpy as np
import pytest

from igasens import shapes
from igasens.errors import DomainError, GeometryParseError, ValidationError
from igasens.geometry import (Interface, MorphGeometry, Patch, detect_interfaces,
                              geometry_from_dict, geometry_to_dict, load_geometry,
                              save_geometry)


def test_endpoints(radial_disk, rng):
    g = radial_disk
    x = rng.uniform(0, 1, (10, 2))
    for k in range(g.n_patches):
        np.testing.assert_array_equal(g.control_points(k, 0.0), g.patches[k].control_points)
        np.testing.assert_array_equal(g.control_points(k, 1.0), g.points_end[k])
        np.testing.assert_allclose(g.map_points(k, 1.0, x), 4 * g.map_points(k, 0.0, x), atol=1e-15)


def test_zero_morph_independent_of_t(rng):
    g = shapes.quarter_annulus()
    x = rng.uniform(0, 1, (10, 2))
    np.testing.assert_array_equal(g.map_points(0, 0.0, x), g.map_points(0, 0.7, x))
    np.testing.assert_array_equal(g.velocity_jacobian(0, x[0]), np.zeros((2, 2)))


def test_disk_boundary_radius_at_half(radial_disk):
    s = np.linspace(0, 1, 25)
    for k in range(1, 5):
        x = radial_disk.map_points(k, 0.5, np.c_[np.ones_like(s), s])
        assert np.max(np.abs(np.linalg.norm(x, axis=1) - 0.5)) <= 1e-12


def test_patch_index_error(radial_disk):
    with pytest.raises(DomainError):
        radial_disk.map_point(5, 0.0, np.array([0.5, 0.5]))


def test_identity_jacobian(rng):
    for d in (1, 2, 3):
        g = shapes.unit_box(d, degree=2, elements=3)
        for x in rng.uniform(0, 1, (5, d)):
            np.testing.assert_allclose(g.jacobian(0, 0.3, x), np.eye(d), atol=1e-14)


def test_affine_net(rng):
    base = shapes.unit_box(2, degree=2, elements=2)
    B = np.array([[2.0, 0.5], [-0.3, 1.5]])
    c = np.array([0.1, -1.0])
    P = base.patches[0].control_points @ B.T + c
    g = MorphGeometry([Patch(base.patches[0].space, np.ones(len(P)), P)])
    for x in rng.uniform(0, 1, (5, 2)):
        np.testing.assert_allclose(g.jacobian(0, 0.0, x), B, atol=1e-14)
        np.testing.assert_allclose(g.map_point(0, 0.0, x), B @ x + c, atol=1e-14)


def test_quarter_annulus_jacobian_fd():
    g = shapes.quarter_annulus(1.0, 2.0)
    x = np.array([0.5, 0.5])
    h = 1e-6
    fd = np.column_stack([(g.map_point(0, 0, x + h * e) - g.map_point(0, 0, x - h * e)) / (2 * h)
                          for e in np.eye(2)])
    J = g.jacobian(0, 0, x)
    assert np.max(np.abs(fd - J)) <= 1e-6 * np.max(np.abs(J))


def test_velocity_jacobian_scaling_net(rng):
    g = shapes.quarter_annulus(1.0, 2.0)
    g2 = MorphGeometry(g.patches, [2 * g.patches[0].control_points])
    for x in rng.uniform(0, 1, (5, 2)):
        JV = g2.velocity_jacobian(0, x)
        np.testing.assert_allclose(JV, g2.jacobian(0, 0.0, x), atol=1e-14)
        np.testing.assert_allclose(JV, g2.jacobian(0, 1.0, x) - g2.jacobian(0, 0.0, x), atol=1e-13)


def test_jacobian_linear_in_t(ellipse_disk, rng):
    g = shapes.perturbed(ellipse_disk, 0.03, seed=3)
    for k in range(g.n_patches):
        x = rng.uniform(0, 1, 2)
        t = rng.uniform()
        d = g.jacobian(k, t, x) - g.jacobian(k, 0, x) - t * g.velocity_jacobian(k, x)
        assert np.abs(d).max() <= 1e-13


def test_validate_identity():
    rep = shapes.unit_box(2).validate_mapping(0.4)
    assert rep.valid and abs(rep.min_det - 1) < 1e-14


def test_validate_flipped_point():
    base = shapes.unit_box(2, degree=2, elements=2)
    P = base.patches[0].control_points.copy()
    P[5] = -P[5]  # interior point (1, 1) of the 4x4 net
    g = MorphGeometry([Patch(base.patches[0].space, np.ones(16), P)])
    rep = g.validate_mapping(0.0)
    assert not rep.valid and rep.min_det < 0


def test_validate_disk(radial_disk):
    for t in (0.0, 0.5, 1.0):
        assert radial_disk.validate_mapping(t).valid


def test_validate_samples_precondition():
    with pytest.raises(DomainError):
        shapes.unit_box(2).validate_mapping(0.0, 0)


def test_disk_interfaces_conform(radial_disk, rng):
    g = radial_disk
    assert len(g.interfaces) == 8
    for iface in g.interfaces:
        s = rng.uniform(0, 1, 100)
        for t in (0.0, 0.37, 1.0):
            pa = _face_points(iface.face_a, s)
            sb = s if not iface.orientation & 1 else 1 - s
            pb = _face_points(iface.face_b, sb)
            xa = g.map_points(iface.patch_a, t, pa)
            xb = g.map_points(iface.patch_b, t, pb)
            assert np.abs(xa - xb).max() <= 1e-12


def _face_points(face, s):
    axis, side = divmod(face, 2)
    pts = np.zeros((s.size, 2))
    pts[:, axis] = side
    pts[:, 1 - axis] = s
    return pts


def test_json_roundtrip(tmp_path, radial_disk, rng):
    path = tmp_path / "disk.json"
    save_geometry(radial_disk, path)
    g = load_geometry(path)
    assert g.interfaces == radial_disk.interfaces
    x = rng.uniform(0, 1, (5, 2))
    for k in range(5):
        np.testing.assert_array_equal(g.map_points(k, 0.3, x), radial_disk.map_points(k, 0.3, x))


def test_json_defaults_points_end():
    doc = geometry_to_dict(shapes.unit_box(2))
    del doc["patches"][0]["points_end"]
    g = geometry_from_dict(doc)
    np.testing.assert_array_equal(g.points_end[0], g.patches[0].control_points)


def test_json_rejects_t_dependent_weights():
    doc = geometry_to_dict(shapes.unit_box(2))
    doc["patches"][0]["weights_end"] = [1, 1, 1, 1]
    with pytest.raises(GeometryParseError, match="weights_end"):
        geometry_from_dict(doc)


def test_json_field_diagnostics():
    doc = geometry_to_dict(shapes.unit_box(2))
    doc["patches"][0]["knots"][1] = [0, 0.5, 1, 1]
    with pytest.raises(GeometryParseError, match=r"patches\[0\]\.knots\[1\]"):
        geometry_from_dict(doc)
    doc = geometry_to_dict(shapes.unit_box(2))
    del doc["patches"][0]["degrees"]
    with pytest.raises(GeometryParseError, match="degrees"):
        geometry_from_dict(doc)


def test_json_syntax_error_has_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n "dimension": 2,\n "patches": [,]\n}')
    with pytest.raises(GeometryParseError, match="line 3"):
        load_geometry(path)


def test_json_bad_interface(radial_disk):
    doc = geometry_to_dict(radial_disk)
    doc["interfaces"][0]["orientation"] = 1
    with pytest.raises(GeometryParseError, match="interfaces"):
        geometry_from_dict(doc)


def test_mismatched_end_net():
    g = shapes.unit_box(2)
    with pytest.raises(ValidationError):
        MorphGeometry(g.patches, [np.zeros((3, 2))])


def test_nonpositive_weight():
    g = shapes.unit_box(2)
    with pytest.raises(ValidationError):
        Patch(g.patches[0].space, [1, 1, 0, 1], g.patches[0].control_points)


def test_two_squares_interface():
    a = shapes.unit_box(2)
    P = a.patches[0].control_points + [1.0, 0.0]
    g = MorphGeometry([a.patches[0], Patch(a.patches[0].space, np.ones(4), P)])
    assert detect_interfaces(g) == [Interface(0, 1, 1, 0, 0)]
