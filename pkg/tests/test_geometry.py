import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bscreg.errors import BscError
from bscreg.geometry import (
    ConvexBody,
    body_metrics,
    bump_quadrature,
    gauge,
    hausdorff,
    mollify,
    regular_polygon,
    square,
)


def ray_exit(vertices, origin, direction):
    """Independent ray/polygon oracle: first crossing of the ray with any edge."""
    best = np.inf
    n = len(vertices)
    for i in range(n):
        a, b = vertices[i], vertices[(i + 1) % n]
        M = np.column_stack([direction, a - b])
        if abs(np.linalg.det(M)) < 1e-15:
            continue
        t, s = np.linalg.solve(M, a - origin)
        if t > 0 and -1e-12 <= s <= 1 + 1e-12:
            best = min(best, t)
    return best


def test_gauge_square_point():
    assert gauge(square(1.0), np.array([0.5, 0.0])) == pytest.approx(0.5)


def test_gauge_center_is_zero():
    body = ConvexBody.from_vertices([[0, 0], [4, 0], [0, 3]])
    assert gauge(body, body.center) == 0.0


def test_gauge_disc_polygon_against_ray_oracle():
    body = regular_polygon(64)
    x = np.array([0.0, 2.0])
    r = ray_exit(body.vertices, body.center, x / np.linalg.norm(x))
    assert gauge(body, x) == pytest.approx(np.linalg.norm(x) / r, abs=1e-12)
    assert gauge(body, x) == pytest.approx(2.0, abs=1e-12)


def test_gauge_many_rays_against_oracle():
    body = ConvexBody.from_vertices([[0, 0], [4, 0], [3, 2], [1, 3], [-1, 1]], center=[1, 1])
    rng = np.random.default_rng(3)
    for _ in range(50):
        d = rng.normal(size=2)
        d /= np.linalg.norm(d)
        r = ray_exit(body.vertices, body.center, d)
        assert gauge(body, body.center + 1.7 * d) == pytest.approx(1.7 / r, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0, 5),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_gauge_homogeneity(t, x, y):
    body = ConvexBody.from_vertices([[0, 0], [4, 0], [3, 2], [1, 3], [-1, 1]], center=[1, 1])
    p = np.array([x, y])
    lhs = gauge(body, body.center + t * (p - body.center))
    assert lhs == pytest.approx(t * gauge(body, p), abs=1e-12)


def test_gauge_lipschitz_bound():
    body = ConvexBody.from_vertices([[0, 0], [4, 0], [3, 2], [1, 3], [-1, 1]], center=[1, 1])
    rng = np.random.default_rng(0)
    a = rng.uniform(-3, 5, size=(1000, 2))
    b = rng.uniform(-3, 5, size=(1000, 2))
    lip = 1.0 / body_metrics(body).inradius
    diff = np.abs(gauge(body, a) - gauge(body, b))
    assert np.all(diff <= lip * np.linalg.norm(a - b, axis=1) + 1e-12)


def test_metrics_disc_beta():
    assert body_metrics(regular_polygon(256)).beta == pytest.approx(0.5 / np.cos(np.pi / 256))


def test_metrics_square_beta():
    assert body_metrics(square(1.0)).beta == pytest.approx(np.sqrt(2) / 2)


def test_metrics_345_triangle():
    # centroid (4/3, 1): distances to the three lines are 1, 4/3 and 4/5;
    # the farthest vertex is (4, 0) at distance sqrt(73)/3
    body = ConvexBody.from_vertices([[0, 0], [4, 0], [0, 3]])
    m = body_metrics(body)
    assert m.diameter == pytest.approx(5.0)
    assert m.inradius == pytest.approx(0.8)
    assert m.beta == pytest.approx(0.5 * (np.sqrt(73) / 3) / 0.8)


def test_hausdorff_concentric_discs():
    a = regular_polygon(64, 1.0)
    b = regular_polygon(64, 1.1)
    assert hausdorff(a, b) == pytest.approx(0.1, abs=1e-12)


def test_hausdorff_identity_and_symmetry():
    a = square(1.0)
    b = regular_polygon(7, 1.3)
    assert hausdorff(a, a) == 0.0
    assert hausdorff(a, b) == pytest.approx(hausdorff(b, a))


@pytest.mark.parametrize("k", [1, 4, 10])
def test_hausdorff_square_offset_corners(k):
    inner = square(1.0)
    outer = square(1.0 + 1.0 / k)
    corner = np.array([1 + 1 / k, 1 + 1 / k])
    expected = np.linalg.norm(corner - np.array([1.0, 1.0]))
    assert hausdorff(inner, outer) == pytest.approx(expected)
    assert expected == pytest.approx(np.sqrt(2) / k)


def test_body_rejects_clockwise_and_bad_center():
    with pytest.raises(BscError, match="BAD_BODY"):
        ConvexBody.from_vertices([[0, 0], [0, 1], [1, 0]])
    with pytest.raises(BscError, match="BAD_BODY"):
        ConvexBody.from_vertices([[0, 0], [1, 0], [0, 1]], center=[2, 2])


def test_body_merges_duplicates_and_collinear():
    body = ConvexBody.from_vertices([[0, 0], [0.5, 0], [1, 0], [1, 0], [1, 1], [0, 1]])
    assert body.n_vertices == 4


def test_body_too_few_vertices():
    with pytest.raises(BscError, match="BAD_BODY"):
        ConvexBody.from_vertices([[0, 0], [1, 0], [2, 0]])


def test_body_json_roundtrip():
    body = ConvexBody.from_vertices([[0, 0], [4, 0], [0, 3]], center=[1, 1])
    again = ConvexBody.from_json(body.to_json())
    assert np.allclose(again.vertices, body.vertices)
    assert np.allclose(again.center, body.center)


def test_bump_quadrature_is_normalized_and_symmetric():
    pts, w = bump_quadrature()
    assert w.sum() == pytest.approx(1.0)
    assert np.allclose(w @ pts, 0.0, atol=1e-15)
    assert np.all(np.linalg.norm(pts, axis=1) < 1)


def test_mollify_affine_is_exact():
    fn = lambda p: p @ np.array([2.0, -1.0]) + 3.0  # noqa: E731
    x = np.array([[0.3, 0.1], [-1.0, 2.0]])
    assert np.allclose(mollify(fn, x, 0.2), fn(x))


def test_sample_boundary_includes_vertices():
    body = square(1.0)
    pts = body.sample_boundary(256)
    assert len(pts) == 256
    for v in body.vertices:
        assert np.min(np.linalg.norm(pts - v, axis=1)) == 0.0
    assert np.allclose(gauge(body, pts), 1.0)
