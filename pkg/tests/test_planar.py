import json
import random
from fractions import Fraction
from xml.dom import minidom

import numpy as np
import pytest

from oracles import central_diff, rel_err
from tropical_cw.bisector import IndexQuadruple, enumerate_components, sample_b
from tropical_cw.errors import DimensionMismatch, IoError
from tropical_cw.planar import (
    L2_PLUS_F,
    TROP_PLUS_F,
    bisector_pieces_2d,
    cw_gradient_2d,
    cw_gradient_field_2d,
    cw_objective_2d,
    hyperplane_segments_2d,
)
from tropical_cw.scene import SceneSpec, add_field, bisector_scene, render_svg, to_svg
from tropical_cw.tropical import trop_dist, trop_dist_grad

F = Fraction
ORIGIN = (0, 0, 0)


def lift(p):
    return (p[0], p[1], F(0))


def test_degenerate_line_example():
    pieces = bisector_pieces_2d(ORIGIN, (1, 2, 0))
    assert len(pieces) == 1
    (line,) = pieces
    assert line.kind == "line"
    assert line.direction[1] == 0 and line.point[1] == 1


def test_generic_example_has_five_pieces():
    pieces = bisector_pieces_2d(ORIGIN, (1, F(-3, 2), 0))
    assert len(pieces) == 5
    assert sorted(p.kind for p in pieces) == ["ray", "ray", "segment", "segment", "segment"]


def test_midpoint_on_self_paired_piece():
    b = (1, F(-3, 2), 0)
    pieces = bisector_pieces_2d(ORIGIN, b)
    (sp,) = [p for p in pieces if p.quadruple == IndexQuadruple(0, 1, 1, 0)]
    assert sp.contains((F(1, 2), F(-3, 4)))


def test_translation_moves_pieces():
    a = (F(1, 3), F(-2), F(1))
    b = (F(2), F(-1, 2), F(1))
    pieces = bisector_pieces_2d(a, b)
    for p in pieces:
        for t in p.sample_params(5):
            x = lift(p.at(t))
            assert trop_dist(x, a) == trop_dist(x, b)


def _random_planar(rng):
    def pt():
        return tuple(F(rng.randint(-40, 40), rng.choice([1, 2, 3, 4])) for _ in range(3))

    return pt(), pt()


def test_exact_points_on_random_instances():
    rng = random.Random(8)
    for _ in range(100):
        a, b = _random_planar(rng)
        for p in bisector_pieces_2d(a, b):
            for t in p.sample_params(10):
                x = lift(p.at(t))
                assert trop_dist(x, a) == trop_dist(x, b)


def test_piece_count_matches_enumeration():
    for t in range(30):
        b = sample_b(3, 17, t)
        assert len(bisector_pieces_2d(ORIGIN, b)) == enumerate_components(b).count == 5


def test_coverage_by_rejection_sampling():
    # the bisector has measure zero, so sample a fine rational lattice that it
    # passes through and keep only the exact equidistant hits
    b = (1, F(-3, 2), 0)
    pieces = bisector_pieces_2d(ORIGIN, b)
    rng = random.Random(4)
    hits = 0
    for _ in range(10_000):
        x = (F(rng.randint(-48, 48), 8), F(rng.randint(-48, 48), 8), F(0))
        if trop_dist(x, ORIGIN) == trop_dist(x, b):
            hits += 1
            assert any(p.contains(x[:2]) for p in pieces), x
    assert hits > 20


def test_equal_points_and_repeated_coordinates(caplog):
    assert bisector_pieces_2d((1, 1, 1), (2, 2, 2)) == []
    pieces = bisector_pieces_2d(ORIGIN, (1, 1, 0))
    assert "repeated" in caplog.text
    for p in pieces:
        for t in p.sample_params(4):
            x = lift(p.at(t))
            assert trop_dist(x, ORIGIN) == trop_dist(x, (1, 1, 0))


def test_wrong_dimension():
    with pytest.raises(DimensionMismatch):
        bisector_pieces_2d((0, 0), (1, 2))
    with pytest.raises(DimensionMismatch):
        hyperplane_segments_2d((0, 0, 0, 0))


def test_hyperplane_rays():
    rays = hyperplane_segments_2d(ORIGIN, "max")
    assert {r.direction for r in rays} == {(-1, 0), (0, -1), (1, 1)}
    assert {r.direction for r in hyperplane_segments_2d(ORIGIN, "min")} == {(1, 0), (0, 1), (-1, -1)}
    shifted = hyperplane_segments_2d((2, 3, 1), "max")
    assert all(r.origin == (1, 2) for r in shifted)
    assert [r.direction for r in shifted] == [r.direction for r in rays]
    # points on each ray tie for the maximum of u_i - apex_i
    for r in rays:
        u = (2 * r.direction[0], 2 * r.direction[1], 0)
        top = sorted(u)[-2:]
        assert top[0] == top[1]
    # pairwise the rays meet only at the apex: no two directions are parallel
    dirs = [r.direction for r in rays]
    for i in range(3):
        for j in range(i + 1, 3):
            assert dirs[i][0] * dirs[j][1] - dirs[i][1] * dirs[j][0] != 0


def _tie_free_nodes(field):
    for iy, y in enumerate(field.ys):
        for ix, x in enumerate(field.xs):
            if not np.isnan(field.vectors[iy, ix, 0]):
                yield x, y, field.vectors[iy, ix]


def _kink_distance(x, centers, tau):
    """Distance (in coordinate gaps) from the nearest non-smooth locus of the objective."""
    X = np.array([x[0], x[1], 0.0])
    a, b = np.array(centers[0]), np.array(centers[1])
    gaps = [abs(trop_dist(X, b) - trop_dist(X, a))]
    for c in centers:
        diff = X - np.array(c)
        gaps += [abs(diff[i] - diff[j]) for i in range(3) for j in range(i + 1, 3)]
        if tau is not None:
            gaps += list(np.abs(np.abs(diff) - tau))
    return min(gaps)


@pytest.mark.parametrize("objective", [L2_PLUS_F, TROP_PLUS_F])
@pytest.mark.parametrize("tau", [None, 0.3])
def test_field_matches_finite_differences(objective, tau):
    a, b = (0.0, 0.0, 0.0), (1.0, -1.5, 0.0)
    origin = (0.13, -0.21, 0.0)
    field = cw_gradient_field_2d(a, b, objective, viewport=(-2.9, 2.7, -3.1, 2.3), resolution=15, tau=tau, origin=origin, lam=2.0)
    checked = 0
    for x, y, v in _tie_free_nodes(field):
        if _kink_distance((x, y), (a, b, origin), tau) < 1e-4:
            continue
        num = central_diff(lambda p: cw_objective_2d(p, a, b, objective, origin, 2.0, tau), np.array([x, y]), h=1e-7)
        assert rel_err(-v, num) < 1e-5
        checked += 1
    assert checked > 150


def test_field_hinge_active_is_f_gradient():
    # f > 0 near a: the hinge term is grad d(x, b) - grad d(x, a)
    a, b = (0.0, 0.0, 0.0), (1.0, -1.5, 0.0)
    x = np.array([-0.3, 0.2])
    g, active = cw_gradient_2d(x, a, b, L2_PLUS_F, origin=(0.5, 0.7, 0.0), lam=1.0)
    assert active
    X = np.array([x[0], x[1], 0.0])
    fgrad = (trop_dist_grad(X, np.array(b)) - trop_dist_grad(X, np.array(a)))[:2]
    l2 = (x - np.array([0.5, 0.7])) / np.linalg.norm(x - np.array([0.5, 0.7]))
    np.testing.assert_allclose(-g, l2 + fgrad)


def test_field_past_boundary_is_distance_only():
    a, b = (0.0, 0.0, 0.0), (1.0, -1.5, 0.0)
    x = np.array([1.1, -1.3])  # next to b, so misclassified and f = 0
    g, active = cw_gradient_2d(x, a, b, L2_PLUS_F, origin=a)
    assert not active
    np.testing.assert_allclose(-g, x / np.linalg.norm(x))
    g, active = cw_gradient_2d(x, a, b, TROP_PLUS_F, origin=a)
    np.testing.assert_allclose(-g, trop_dist_grad(np.array([1.1, -1.3, 0.0]), np.zeros(3))[:2])


def test_field_points_toward_bisector_from_source_side():
    # pure hinge (tiny distance weight relative to lam) pushes toward b's region
    a, b = (0.0, 0.0, 0.0), (1.0, -1.5, 0.0)
    field = cw_gradient_field_2d(a, b, L2_PLUS_F, viewport=(-1, 1, -1, 1), resolution=9, lam=50.0, origin=(0.01, 0.02, 0.0))
    moved = strict = 0
    for x, y, v in _tie_free_nodes(field):
        X = np.array([x, y, 0.0])
        margin = trop_dist(X, np.array(b)) - trop_dist(X, np.zeros(3))
        if margin <= 0:
            continue
        step = np.array([x, y]) + 1e-3 * v
        S = np.array([step[0], step[1], 0.0])
        after = trop_dist(S, np.array(b)) - trop_dist(S, np.zeros(3))
        # the margin is piecewise linear, so on flat cells it may only stay level
        assert after <= margin + 1e-12
        moved += 1
        strict += after < margin - 1e-6
    assert moved > 10 and strict > moved // 2


def test_empty_scene_svg(tmp_path):
    path = render_svg(SceneSpec(), tmp_path / "empty.svg")
    doc = minidom.parse(str(path))
    root = doc.documentElement
    assert root.tagName == "svg" and root.getAttribute("version") == "1.1"
    assert not doc.getElementsByTagName("line")


def test_example_scene_colors_and_determinism(tmp_path):
    scene, pieces = bisector_scene((0, 0, 0), (1, 2, 0))
    svg = to_svg(scene)
    assert svg.count('stroke="#d62728"') == 1  # the single red bisector line
    assert svg.count('stroke="#1f77b4"') == 6  # two blue hyperplanes of three rays each
    p1 = render_svg(scene, tmp_path / "one.svg").read_bytes()
    p2 = render_svg(bisector_scene((0, 0, 0), (1, 2, 0))[0], tmp_path / "two.svg").read_bytes()
    assert p1 == p2
    minidom.parseString(p1)
    data = json.loads(scene.to_json())
    assert [s["role"] for s in data["segments"]].count("bisector") == 1


def test_viewport_contains_finite_geometry():
    scene, pieces = bisector_scene((0, 0, 0), (5, -7, 0), viewport=(-1, 1, -1, 1))
    x0, x1, y0, y1 = scene.viewport
    for _, x, y in scene.points:
        assert x0 <= x <= x1 and y0 <= y <= y1
    for p in pieces:
        for t in (p.t_lo, p.t_hi):
            if t is not None:
                x, y = map(float, p.at(t))
                assert x0 <= x <= x1 and y0 <= y <= y1


def test_field_overlay_and_unwritable_path(tmp_path):
    scene, _ = bisector_scene((0, 0, 0), (1, -1.5, 0))
    add_field(scene, cw_gradient_field_2d((0, 0, 0), (1, -1.5, 0), resolution=7))
    assert scene.arrows
    assert 'marker-end="url(#field)"' in to_svg(scene)
    with pytest.raises(IoError):
        render_svg(scene, tmp_path / "missing" / "x.svg")
