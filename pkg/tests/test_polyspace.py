import numpy as np
import pytest

from exseq import calculus as ca
from exseq import polyspace as ps
from exseq.refsimplex import quadrature


def test_closed_form_dimensions(rc3):
    # the H1 space at complex degree 2 has polynomial degree 3 and dim 20
    assert ps.build_space(rc3, "h1", 2).dim == 20
    assert ps.build_space(rc3, "hdiv", 1).dim == 15
    assert ps.build_space(rc3, "hcurl", 0).dim == 6
    for p in range(0, 9):
        assert ps.build_space(rc3, "h1", p).dim == ps.h1_dimension(p, 3)
        assert ps.build_space(rc3, "hdiv", p).dim == ps.hdiv_dimension(p)


def test_2d_nedelec_dimension(rc2):
    assert ps.build_space(rc2, "hcurl", 0).dim == 3
    for p in range(0, 7):
        assert ps.build_space(rc2, "hcurl", p).dim == (p + 1) * (p + 3)


def test_condition_count_identity():
    for p in range(0, 11):
        assert ps.h1_condition_count(p) == ps.h1_dimension(p, 3)
        bubbles = p * (p - 1) * (p - 2) // 6
        face = 4 * p * (p - 1) // 2
        assert ps.h1_condition_count(p) == bubbles + face + 6 * p + 4


def test_hdiv_condition_count(rc3):
    for p in range(0, 7):
        interior = ps.build_space(rc3, "hdiv_bubble", p).dim
        faces = 4 * (p + 1) * (p + 2) // 2
        assert interior + faces == ps.hdiv_dimension(p)


def test_basis_orthonormal_and_full_rank(rc3, rc2):
    for rc, kinds in ((rc3, ("h1", "hcurl", "hdiv", "hcurl_bubble")),
                      (rc2, ("hcurl", "h1_bubble"))):
        for kind in kinds:
            sp = ps.build_space(rc, kind, 3)
            if sp.dim:
                G = sp.basis @ sp.basis.T
                assert np.abs(G - np.eye(sp.dim)).max() < 1e-11


def test_bubble_spaces_annihilate_traces(rc3, rng):
    p = 3
    deg = p + 1
    cases = [
        ("h1_bubble", "restrict", 1),
        ("hcurl_bubble", "Pi_tau", 3),
        ("hdiv_bubble", "normal", 3),
    ]
    for kind, trace, vd in cases:
        sp = ps.build_space(rc3, kind, p)
        for face in rc3.faces:
            q = quadrature(face.cell, 2 * deg)
            amb = face.embed(q.points)
            vals = sp.evaluate(sp.basis, amb)
            if trace == "restrict":
                assert np.abs(vals).max() < 1e-10
            elif trace == "Pi_tau":
                tang = vals @ face.frame
                assert np.abs(tang).max() < 1e-10
            else:
                nr = vals @ face.normal
                assert np.abs(nr).max() < 1e-10


def test_zero_mean_spaces(rc3, rc2):
    # scalar space with zero average, one dimension below its parent
    zm = ps.build_space(rc3, "h1_zero_mean", 2)
    assert zm.dim == ps.h1_dimension(2, 3) - 1
    means = zm.basis @ ps.mean_row(rc3.cell, 1, 3).T
    assert np.abs(means).max() < 1e-12
    vz = ps.build_space(rc2, "hdiv_bubble", 2)  # zero-mean scalars on faces
    assert vz.dim == (2 + 1) * (2 + 2) // 2 - 1


def test_triangle_bubble_dims(rc2):
    assert ps.build_space(rc2, "h1_bubble", 1).dim == 0
    assert ps.build_space(rc2, "h1_bubble", 2).dim == 1
    for p in range(0, 7):
        assert ps.build_space(rc2, "hcurl_bubble", p).dim == p * (p + 1)


def test_3d_bubble_dims(rc3):
    assert ps.build_space(rc3, "hdiv_bubble", 0).dim == 0
    for p in range(0, 7):
        assert ps.build_space(rc3, "h1_bubble", p).dim == max(
            p * (p - 1) * (p - 2) // 6, 0
        )
        assert ps.build_space(rc3, "hcurl_bubble", p).dim == p * (p + 1) * (p - 1) // 2
        assert ps.build_space(rc3, "hdiv_bubble", p).dim == p * (p + 1) * (p + 2) // 2


def test_trace_space_dimensions(rc3):
    W3 = ps.build_space(rc3, "h1", 2)  # polynomial degree 3
    tr = ca.trace_space(W3, rc3.faces[0], "h1", rc3)
    assert tr.dim == 10
    V1 = ps.build_space(rc3, "hdiv", 1)
    trn = ca.trace_space(V1, rc3.faces[1], "hdiv", rc3)
    assert trn.dim == 3
    Q0 = ps.build_space(rc3, "hcurl", 0)
    tre = ca.trace_space(Q0, rc3.edges[0], "hcurl", rc3)
    assert tre.dim == 1


def test_face_tangential_trace_is_2d_nedelec(rc3, rc2):
    p = 2
    Q = ps.build_space(rc3, "hcurl", p)
    tr = ca.trace_space(Q, rc3.faces[0], "hcurl", rc3)
    assert tr.dim == (p + 1) * (p + 3)
    # same span as the intrinsically-built edge elements on the planar face
    Q2 = ps.nedelec_space(rc3.faces[0].cell, p)
    assert Q2.dim == tr.dim
    assert ca.subspace_distance(tr.basis, Q2.basis) < 1e-10


def test_grad_orthogonal_subspace(rc3):
    p = 2
    perp = ps.build_space(rc3, "hcurl_orth", p)
    full = ps.build_space(rc3, "hcurl", p)
    scalar = ps.build_space(rc3, "h1", p)
    assert perp.dim == full.dim - (scalar.dim - 1)
    rows = ps.gradient_rows(rc3.cell, scalar, full.degree)
    assert np.abs(rows @ perp.basis.T).max() < 1e-10


def test_invalid_inputs(rc3):
    with pytest.raises(ValueError):
        ps.build_space(rc3, "h1", -1)
    with pytest.raises(ValueError):
        ps.build_space(rc3, "nope", 2)


def test_monomial_export_reproduces_basis(rc3, rng):
    sp = ps.build_space(rc3, "hcurl", 1)
    expo, mono = ps.to_monomials(sp)
    pts = rng.random((40, 3)) * 0.25 + 0.2
    V = sp.evaluate(sp.basis, pts)
    P = np.stack([np.prod(pts ** np.array(a, float), axis=1) for a in expo])
    recon = np.einsum("ivm,mp->ipv", mono, P)
    scale = np.abs(V).max()
    assert np.abs(V - recon).max() <= 1e-12 * scale


def test_export_json_document(rc2):
    sp = ps.build_space(rc2, "hcurl", 0)
    doc = ps.export_json(sp)
    assert doc["value_dim"] == 2
    assert len(doc["basis"]) == sp.dim
    assert all(len(comp) == len(doc["monomial_exponents"])
               for row in doc["basis"] for comp in row)


def test_random_elements_deterministic(rc3):
    sp = ps.build_space(rc3, "h1", 2)
    a = sp.random_elements(3, np.random.default_rng(5))
    b = sp.random_elements(3, np.random.default_rng(5))
    assert np.array_equal(a, b)
