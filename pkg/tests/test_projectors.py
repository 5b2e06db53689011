import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from exseq import calculus as ca
from exseq import fields as fl
from exseq import polyspace as ps
from exseq import projectors as pj
from exseq.refsimplex import make_reference_cell, quadrature


def test_stage_condition_counts_grad3d():
    # p=1: interior 0, faces 0, edges 6, vertices 4 -> 10 = dim of the target
    plan = pj.build_plan("grad3d", 1)
    sc = plan.stage_conditions
    assert sc["vertices"] == 4
    assert sc["edges"] == 6
    assert sc["faces"] == 0
    assert sc["interior"] == 0
    assert sum(sc.values()) == plan.target.dim == 10
    for p in (0, 2, 4):
        plan = pj.build_plan("grad3d", p)
        assert sum(plan.stage_conditions.values()) == plan.target.dim


def test_stage_condition_counts_curl_div():
    for p in (0, 1, 3):
        plan = pj.build_plan("curl3d", p)
        assert sum(plan.stage_conditions.values()) == plan.target.dim
        plan = pj.build_plan("div3d", p)
        assert sum(plan.stage_conditions.values()) == plan.target.dim


@pytest.mark.parametrize("operator", pj.OPERATORS)
def test_projection_property(operator, rng):
    for p in (0, 2, 5):
        assert pj.projection_max_error(operator, p, 12, rng) <= 1e-9


def test_zero_input_gives_zero_output():
    for operator in pj.OPERATORS:
        plan = pj.build_plan(operator, 2)
        dim, vd = 3, 3
        if operator.endswith("2d"):
            dim, vd = 2, 2
        if operator.startswith(("grad", "l2")):
            vd = 1
        if operator == "grad1d":
            dim, vd = 1, 1
        zero = fl.AnalyticField(
            "zero", dim, vd,
            lambda pts, vd=vd: np.zeros(len(pts)) if vd == 1
            else np.zeros((len(pts), vd)),
        )
        slots = plan.apply(zero)
        assert np.abs(slots).max() == 0.0


def test_curl_edge_stage_is_l2_projection(rng):
    # the edge moments (mean + derivative moments) reproduce the plain
    # tangential L2 projection
    p = 4
    plan = pj.build_plan("curl3d", p)
    rc = make_reference_cell(3)
    f = [g for g in fl.suite("entire", 3) if g.value_dim == 3][0]
    slots = plan.apply(f)
    Q = plan.target
    for k, edge in enumerate(rc.edges):
        s, w = plan._d["edge_rules"][k]
        pts = edge.embed(s)
        data = np.asarray(f(pts)) @ edge.tangent
        ecell = edge.cell
        Vs = ecell.tabulate(p, s[:, None])
        proj = (Vs * w) @ data
        own = (Vs * w) @ (Q.evaluate(slots, pts) @ edge.tangent)
        assert np.abs(proj - own).max() < 1e-11 * max(1, np.abs(proj).max())


def test_div_face_stage_is_l2_projection():
    p = 3
    plan = pj.build_plan("div3d", p)
    rc = make_reference_cell(3)
    f = [g for g in fl.suite("entire", 3) if g.value_dim == 3][1]
    slots = plan.apply(f)
    V = plan.target
    for k, face in enumerate(rc.faces):
        q2 = plan._d["face_rules"][k]
        amb = face.embed(q2.points)
        data = np.asarray(f(amb)) @ face.normal
        V2 = face.cell.tabulate(p, q2.points)
        proj = (V2 * q2.weights) @ data
        own = (V2 * q2.weights) @ (V.evaluate(slots, amb) @ face.normal)
        assert np.abs(proj - own).max() < 1e-11 * max(1, np.abs(proj).max())


def test_commuting_identities_polynomials(rng):
    rc3, rc2 = make_reference_cell(3), make_reference_cell(2)
    for p in (0, 2, 3):
        deg = p + 3
        suite = {
            "grad3d": [fl.from_polynomial(
                "s", ps.scalar_space(rc3.cell, deg),
                ps.scalar_space(rc3.cell, deg).random_elements(1, rng)[0])],
            "curl3d": [fl.from_polynomial(
                "v", ps.vector_space(rc3.cell, deg, 3),
                ps.vector_space(rc3.cell, deg, 3).random_elements(1, rng)[0])],
            "div3d": [fl.from_polynomial(
                "w", ps.vector_space(rc3.cell, deg, 3),
                ps.vector_space(rc3.cell, deg, 3).random_elements(1, rng)[0])],
            "grad2d": [fl.from_polynomial(
                "s2", ps.scalar_space(rc2.cell, deg),
                ps.scalar_space(rc2.cell, deg).random_elements(1, rng)[0])],
            "curl2d": [fl.from_polynomial(
                "v2", ps.vector_space(rc2.cell, deg, 2),
                ps.vector_space(rc2.cell, deg, 2).random_elements(1, rng)[0])],
        }
        recs = pj.check_commuting(p, suite)
        assert max(r["rel_residual"] for r in recs) <= 1e-9


def test_commuting_specific_fields():
    import sympy as sp

    x, y, z = sp.symbols("x y z")
    p = 2
    suite = {
        "grad3d": [fl.from_sympy("x2yz", x**2 * y * z, 3)],
        "curl3d": [fl.from_sympy("u", [y**2, x * z, x + z], 3)],
    }
    recs = pj.check_commuting(p, suite)
    assert max(r["rel_residual"] for r in recs) <= 1e-9


def test_grad_of_potential_is_curl_interpolant():
    # the edge-element interpolant of a gradient equals the gradient of the
    # scalar interpolant, coefficientwise
    import sympy as sp

    x, y, z = sp.symbols("x y z")
    p = 2
    phi = fl.from_sympy("x2y", x**2 * y, 3)
    gplan = pj.build_plan("grad3d", p)
    cplan = pj.build_plan("curl3d", p)
    gi = gplan.apply(phi)
    rc3 = make_reference_cell(3)
    grad_gi = ca.diff_rows("grad", ps.PolySpace(rc3.cell, 1, p + 1,
                                                gi[None, :]))[0]
    ci = cplan.apply(fl.grad_field(phi))
    assert np.abs(grad_gi - ci).max() < 1e-11


def test_trace_locality_curl():
    # perturbing the field away from the boundary leaves the edge and face
    # stages unchanged
    import sympy as sp

    x, y, z = sp.symbols("x y z")
    p = 3
    plan = pj.build_plan("curl3d", p)
    rc = make_reference_cell(3)
    f = fl.from_sympy("base", [sp.sin(x + y), sp.exp(z) / 4, x * y], 3)
    bubble = x * y * z * (1 - x - y - z)
    delta = fl.from_sympy("delta", [bubble, -2 * bubble, bubble / 3], 3)
    a = plan.apply(f)
    b = plan.apply(fl.shifted(f, delta))
    Q = plan.target
    for face in rc.faces:
        q2 = quadrature(face.cell, 2 * (p + 1))
        amb = face.embed(q2.points)
        ta = Q.evaluate(a, amb) @ face.frame
        tb = Q.evaluate(b, amb) @ face.frame
        assert np.abs(ta - tb).max() < 1e-10


def test_trace_locality_div():
    import sympy as sp

    x, y, z = sp.symbols("x y z")
    p = 3
    plan = pj.build_plan("div3d", p)
    rc = make_reference_cell(3)
    f = fl.from_sympy("base", [sp.cos(y), x * z**2, sp.exp(x / 2)], 3)
    bubble = x * y * z * (1 - x - y - z)
    delta = fl.from_sympy("delta", [bubble, bubble, -bubble], 3)
    a = plan.apply(f)
    b = plan.apply(fl.shifted(f, delta))
    V = plan.target
    for face in rc.faces:
        q2 = quadrature(face.cell, 2 * (p + 1))
        amb = face.embed(q2.points)
        na = V.evaluate(a, amb) @ face.normal
        nb = V.evaluate(b, amb) @ face.normal
        assert np.abs(na - nb).max() < 1e-10


def test_lift_invariance_grad2d(rng):
    # shifting the trace lift by bubbles must not change the interpolant
    p = 4
    plan = pj.ProjectorPlan("grad2d", p)
    f = fl.suite("entire", 2)[0]
    base = plan.apply(f)
    st = plan._d["interior"]
    bub = st["bubbles"]
    pert = bub.T @ rng.standard_normal((bub.shape[0], st["lift"].shape[1]))
    st = dict(st)
    st["lift"] = st["lift"] + pert
    cell = plan._d["cell"]
    deg = plan.target.degree
    D = [ps.deriv_matrix(cell, deg, i) for i in range(2)]
    st["couple"] = sum((bub @ D[i].T) @ (st["lift"].T @ D[i].T).T for i in range(2))
    plan._d["interior"] = st
    shifted = plan.apply(f)
    assert np.abs(base - shifted).max() < 1e-10


def test_apply_1d_linear_and_endpoints():
    lin = fl.from_sympy("lin", "2*x + 1", 1)
    slots = pj.apply_1d(4, lin)
    t = pj.build_plan("grad1d", 4).target
    q = quadrature(t.cell, 8)
    vals = t.evaluate(slots, q.points)
    assert np.abs(vals - (2 * q.points[:, 0] + 1)).max() < 1e-12
    f = fl.suite("entire", 1)[0]
    slots = pj.apply_1d(6, f)
    ends = t.cell.vertices
    assert np.abs(pj.build_plan("grad1d", 6).target.evaluate(slots, ends)
                  - f(ends)).max() < 1e-12


@settings(max_examples=10, deadline=None)
@given(coef=hst.lists(hst.floats(-2, 2), min_size=3, max_size=5))
def test_apply_1d_reproduces_polynomials(coef):
    p = 6
    plan = pj.build_plan("grad1d", p)

    def fn(pts):
        return sum(c * pts[:, 0] ** k for k, c in enumerate(coef))

    f = fl.AnalyticField("poly", 1, 1, fn)
    slots = plan.apply(f)
    q = quadrature(plan.target.cell, 2 * p)
    vals = plan.target.evaluate(slots, q.points)
    assert np.abs(vals - fn(q.points)).max() < 1e-10 * max(
        1, np.abs(fn(q.points)).max()
    )


def test_apply_1d_seminorm_orthogonality():
    f = fl.suite("singular", 1)[0]
    p = 8
    plan = pj.build_plan("grad1d", p)
    slots = plan.apply(f)
    samples = {k: np.asarray(f(pts)).reshape(-1, 1)
               for k, pts in plan.sample_points.items()}
    assert plan.condition_residual(samples, slots) < 1e-10


def test_monotone_error_1d_singular():
    f = fl.suite("singular", 1)[0]
    errs = []
    pts, w = pj._graded_interval_rule()
    for p in (2, 5, 8, 12):
        plan = pj.build_plan("grad1d", p)
        slots = plan.apply(f)
        vals = plan.target.evaluate(slots, pts[:, None])
        errs.append(np.sqrt(np.sum(w * (vals - f(pts[:, None])) ** 2)))
    assert all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))


def test_condition_residual_check(rng):
    p = 3
    plan = pj.build_plan("curl3d", p)
    f = [g for g in fl.suite("entire", 3) if g.value_dim == 3][0]
    slots = plan.apply(f, check_tol=1e-9)
    assert np.all(np.isfinite(slots))


def test_nonfinite_samples_rejected():
    plan = pj.build_plan("l2_2d", 1)
    bad = fl.AnalyticField("bad", 2, 1, lambda pts: np.full(len(pts), np.nan))
    with pytest.raises(ValueError, match="non-finite"):
        plan.apply(bad)


def test_unknown_operator_rejected():
    with pytest.raises(ValueError):
        pj.build_plan("grad4d", 1)
    with pytest.raises(ValueError):
        pj.ProjectorPlan("grad3d", -1)
