import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from exseq import refsimplex as rs


def test_reference_measures(rc3, rc2, rc1):
    assert rc3.measure == pytest.approx(1.0 / 6.0, rel=1e-14)
    assert rc2.measure == pytest.approx(0.5, rel=1e-14)
    assert rc1.measure == pytest.approx(2.0, rel=1e-14)


def test_default_vertices(rc3, rc2, rc1):
    assert np.allclose(
        rc3.vertices, [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    )
    assert np.allclose(rc2.vertices, [[0, 0], [1, 0], [0, 1]])
    assert np.allclose(rc1.vertices, [[-1], [1]])


def test_triangle_regularity_index(rc2):
    assert rc2.max_angle == pytest.approx(np.pi / 2)
    assert rc2.regularity_index == pytest.approx(2.0)


def test_face_angle_hypothesis(rc3):
    # every interior angle of every face below 2*pi/3
    assert rc3.max_angle < 2 * np.pi / 3


def test_face_normals_outward_unit(rc3):
    centroid = rc3.vertices.mean(axis=0)
    for face in rc3.faces:
        assert np.linalg.norm(face.normal) == pytest.approx(1.0, abs=1e-14)
        assert np.dot(face.normal, face.origin - centroid) > 0


def test_face_chart_is_congruence(rc3):
    for face in rc3.faces:
        J = face.frame
        assert np.allclose(J.T @ J, np.eye(2), atol=1e-14)
        # chart normal equals the face normal (right-hand rule)
        assert np.allclose(np.cross(J[:, 0], J[:, 1]), face.normal, atol=1e-14)
        # planar vertices reproduce the ambient ones
        verts = rc3.vertices[list(face.vertex_ids)]
        assert np.allclose(face.embed(face.cell.vertices), verts, atol=1e-14)


def test_bottom_face_chart_matches_reference_triangle(rc3):
    # the z=0 face is congruent to the unit right triangle
    for face in rc3.faces:
        if 3 not in face.vertex_ids:
            area = face.cell.measure
            assert area == pytest.approx(0.5, rel=1e-14)


def test_boundary_orientation_right_hand_rule(rc3):
    # traversing the face boundary with the stored signs must circle the
    # outward normal counterclockwise
    for face in rc3.faces:
        total = np.zeros(3)
        pieces = []
        for eid, sign in zip(face.edge_ids, face.edge_signs):
            edge = rc3.edges[eid]
            pieces.append(sign * edge.tangent * edge.length)
        # the polygon closes
        assert np.allclose(sum(pieces), 0.0, atol=1e-14)
        # each oriented edge runs counterclockwise about the normal
        centroid = rc3.vertices[list(face.vertex_ids)].mean(axis=0)
        for eid, sign in zip(face.edge_ids, face.edge_signs):
            edge = rc3.edges[eid]
            arm = edge.midpoint - centroid
            assert np.dot(np.cross(arm, sign * edge.tangent), face.normal) > 0


def test_pulled_back_edge_tangents_match(rc3):
    # 2D tangents induced by the chart equal the 3D ones mapped through it
    from exseq.polyspace import triangle_edges

    for face in rc3.faces:
        for ledge, _sign in triangle_edges(face.cell):
            t3 = face.frame @ ledge.tangent
            found = False
            for edge in rc3.edges:
                if np.allclose(t3, edge.tangent, atol=1e-13) or np.allclose(
                    t3, -edge.tangent, atol=1e-13
                ):
                    found = True
            assert found


def test_quadrature_basic_oracles(rc3, rc2):
    q = rs.quadrature(rc3.cell, 1)
    assert q.weights.sum() == pytest.approx(1 / 6, rel=1e-14)
    assert (q.weights * q.points[:, 0]).sum() == pytest.approx(1 / 24, rel=1e-13)
    q2 = rs.quadrature(rc2.cell, 2)
    assert (q2.weights * q2.points[:, 0] ** 2).sum() == pytest.approx(
        1 / 12, rel=1e-13
    )


@pytest.mark.parametrize("name,dim,degree", [("tet", 3, 10), ("tri", 2, 14),
                                             ("edge", 1, 19)])
def test_quadrature_exactness_exhaustive(name, dim, degree):
    from itertools import product

    rc = rs.make_reference_cell(dim)
    q = rs.quadrature(rc.cell, degree)
    for alpha in product(range(degree + 1), repeat=dim):
        if sum(alpha) > degree:
            continue
        val = (q.weights * np.prod(q.points ** np.array(alpha, float), axis=1)).sum()
        exact = float(rs.monomial_integral(name, alpha))
        if exact == 0.0:
            assert abs(val) < 1e-15
        else:
            assert abs(val - exact) <= 1e-12 * abs(exact)


@settings(max_examples=25, deadline=None)
@given(
    alpha=hst.tuples(
        hst.integers(0, 13), hst.integers(0, 13), hst.integers(0, 13)
    )
)
def test_quadrature_exactness_high_degree(alpha):
    rc = rs.make_reference_cell(3)
    degree = min(sum(alpha), 39)
    q = rs.quadrature(rc.cell, max(degree, 0))
    if sum(alpha) > q.exactness_degree:
        return
    val = (q.weights * np.prod(q.points ** np.array(alpha, float), axis=1)).sum()
    exact = float(rs.monomial_integral("tet", alpha))
    assert abs(val - exact) <= 1e-12 * abs(exact)


def test_quadrature_rejects_beyond_cap(rc3):
    with pytest.raises(ValueError, match="unsupported degree"):
        rs.quadrature(rc3.cell, rs.MAX_QUAD_DEGREE + 1)


def test_face_chart_invalid_id(rc3):
    with pytest.raises(ValueError):
        rs.face_chart(rc3, 7)
    with pytest.raises(ValueError):
        rs.face_chart(rs.make_reference_cell(2), 0)


def test_edge_orientation_lowest_vertex_first(rc3):
    for edge in rc3.edges:
        a, b = edge.vertex_ids
        assert a < b
        expect = rc3.vertices[b] - rc3.vertices[a]
        assert np.allclose(edge.tangent, expect / np.linalg.norm(expect))
