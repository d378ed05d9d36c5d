import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torsionpinn.errors import GeometryError, PointFileError, PointValidationError
from torsionpinn.geometry import (L_SHAPE_VERTICES, Circle, EquilateralTriangle, Polygon, PointSet, Rectangle,
                                  format_domain, grid_points, integrate_field, load_points, parse_domain,
                                  ray_crossings, sample_boundary, sample_interior, save_points,
                                  shoelace_area, standard_domain, winding_number)


def test_standard_domains():
    c = standard_domain("circle")
    assert c.area == pytest.approx(math.pi * 0.01)
    sq = standard_domain("square")
    assert sq.area == pytest.approx(0.04) and sq.perimeter == pytest.approx(0.8)
    tri = standard_domain("triangle")
    assert tri.area == pytest.approx(math.sqrt(3) / 4 * 0.04)
    np.testing.assert_allclose(tri.centroid, [0, 0], atol=1e-15)
    ls = standard_domain("irregular")
    assert ls.area == pytest.approx(0.04 - 0.08 * 0.1)
    with pytest.raises(GeometryError):
        standard_domain("hexagon")


def test_contains_is_strict():
    sq = standard_domain("square")
    assert sq.contains([0.0, 0.0])
    assert not sq.contains([0.1, 0.0])
    assert not sq.contains([0.1000001, 0.0])
    c = standard_domain("circle")
    assert not c.contains([0.1, 0.0]) and c.contains([0.0999, 0.0])
    ls = standard_domain("l_shape")
    assert ls.contains([0.05, 0.15]) and not ls.contains([0.15, 0.15])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_winding_and_ray_crossing_agree(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.05, 0.25, (300, 2))
    w = winding_number(pts, L_SHAPE_VERTICES) != 0
    r = ray_crossings(pts, L_SHAPE_VERTICES) % 2 == 1
    assert np.array_equal(w, r)


def test_polygon_validation():
    with pytest.raises(GeometryError):
        Polygon(np.array([[0, 0], [1, 0]]))
    with pytest.raises(GeometryError):
        Polygon(L_SHAPE_VERTICES[::-1].copy())  # clockwise
    with pytest.raises(GeometryError):
        Polygon(np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float))  # bow tie
    with pytest.raises(GeometryError):
        Circle((0, 0), 0.0)
    assert shoelace_area(L_SHAPE_VERTICES) == pytest.approx(0.032)


@pytest.mark.parametrize("name", ["circle", "square", "triangle", "irregular"])
def test_sampling_stays_in_domain(name):
    d = standard_domain(name)
    inner = sample_interior(d, 500, 3)
    assert inner.shape == (500, 2) and np.all(d.contains(inner))
    bd = sample_boundary(d, 200, 4)
    assert np.max(d.boundary_distance(bd)) < 1e-12
    assert np.array_equal(sample_interior(d, 50, 9), sample_interior(d, 50, 9))


def test_grid_points_and_validation():
    d = standard_domain("square")
    ps = grid_points(d, 0.005, 0.0025)
    assert len(ps.interior) == 39 * 39
    assert len(ps.boundary) == 320
    ps.validate(d)
    bad = PointSet(np.array([[0.0, 0.0], [0.5, 0.5]]), np.array([[0.1, 0.0], [0.0, 0.05]]))
    with pytest.raises(PointValidationError) as info:
        bad.validate(d)
    assert info.value.indices == [1]


def test_integrate_field_area_and_moment():
    c = standard_domain("circle")
    area = integrate_field(c, lambda p: np.ones(len(p)), 0.0005)
    assert area == pytest.approx(c.area, rel=2e-3)
    sq = standard_domain("square")
    # integral of x^2 over the square: s^4 / 12
    val = integrate_field(sq, lambda p: p[:, 0] ** 2, 0.001)
    assert val == pytest.approx(0.2 ** 4 / 12, rel=1e-4)


def test_point_file_roundtrip_and_errors(tmp_path):
    d = standard_domain("triangle")
    ps = PointSet(sample_interior(d, 20, 1), sample_boundary(d, 10, 2))
    path = save_points(ps, tmp_path / "pts.csv")
    back = load_points(path, d)
    assert np.array_equal(back.interior, ps.interior) and np.array_equal(back.boundary, ps.boundary)

    (tmp_path / "bad.csv").write_text("kind,x,y\ninterior,0,0\ninterior,abc,0\n")
    with pytest.raises(PointFileError) as info:
        load_points(tmp_path / "bad.csv")
    assert info.value.line == 3
    (tmp_path / "hdr.csv").write_text("x,y\n")
    with pytest.raises(PointFileError):
        load_points(tmp_path / "hdr.csv")
    (tmp_path / "kind.csv").write_text("kind,x,y\nedge,0,0\n")
    with pytest.raises(PointFileError):
        load_points(tmp_path / "kind.csv")


@pytest.mark.parametrize("dom", [Circle((0.01, -0.02), 0.07), Rectangle((0, 0), (0.3, 0.1)),
                                 EquilateralTriangle((0.1, 0.1), 0.2, 0.3), Polygon(L_SHAPE_VERTICES.copy())])
def test_domain_file_roundtrip(dom):
    back = parse_domain(format_domain(dom))
    assert back.kind == dom.kind
    assert back.area == pytest.approx(dom.area, rel=1e-12)
    pts = np.random.default_rng(0).uniform(-0.1, 0.35, (400, 2))
    assert np.array_equal(back.contains(pts), dom.contains(pts))


def test_domain_file_errors():
    with pytest.raises(GeometryError):
        parse_domain("shape = blob\n")
    with pytest.raises(GeometryError):
        parse_domain("shape = circle\nradius = 0.1\ncolour = red\n")
    with pytest.raises(GeometryError):
        parse_domain("shape = circle\n")
    with pytest.raises(GeometryError):
        parse_domain("shape = polygon\nvertices = 0,0; 1,1; 1,0; 0,1\n")
