"""Exact differential and trace operators between polynomial spaces.

Operators act on modal coefficients (integer-free but exact: the modal
derivative/trace matrices are computed with quadrature that is exact for the
polynomial integrands), never by numerical differentiation of point samples.
"""

from dataclasses import dataclass

import numpy as np

from . import polyspace as ps
from .refsimplex import quadrature


@dataclass
class LinearOpMatrix:
    """Coordinates of an operator's image: out_coords = in_coords @ matrix."""

    source: ps.PolySpace
    target: ps.PolySpace
    matrix: np.ndarray
    residual: float

    def __call__(self, coeffs):
        return np.asarray(coeffs) @ self.matrix


def _expand_in(target, rows, src_cell, src_vd, src_degree):
    """Expand slot rows into a target space's basis, reporting the residual."""
    deg = max(src_degree, target.degree)
    rows = ps.pad_slots(rows, src_cell, src_vd, src_degree, deg)
    B = ps.pad_slots(target.basis, target.cell, target.value_dim, target.degree, deg)
    coords = rows @ B.T
    resid = rows - coords @ B
    scale = np.linalg.norm(rows) or 1.0
    return coords, float(np.linalg.norm(resid) / scale)


def _grad_rows(space):
    cell = space.cell
    D = [ps.deriv_matrix(cell, space.degree, i) for i in range(cell.dim)]
    comps = [space.basis @ D[i].T for i in range(cell.dim)]
    return np.concatenate(comps, axis=1)


def _curl3d_rows(space):
    cell = space.cell
    nm = cell.n_modes(space.degree)
    D = [ps.deriv_matrix(cell, space.degree, i) for i in range(3)]
    c = space.components(space.basis)
    u1, u2, u3 = c[:, 0], c[:, 1], c[:, 2]
    w1 = u3 @ D[1].T - u2 @ D[2].T
    w2 = u1 @ D[2].T - u3 @ D[0].T
    w3 = u2 @ D[0].T - u1 @ D[1].T
    return np.concatenate([w1, w2, w3], axis=1)


def _curl2d_scalar_rows(space):
    cell = space.cell
    D = [ps.deriv_matrix(cell, space.degree, i) for i in range(2)]
    b = space.basis
    return np.concatenate([b @ D[1].T, -(b @ D[0].T)], axis=1)


def _curl2d_vector_rows(space):
    cell = space.cell
    D = [ps.deriv_matrix(cell, space.degree, i) for i in range(2)]
    c = space.components(space.basis)
    return c[:, 1] @ D[0].T - c[:, 0] @ D[1].T


def _div_rows(space):
    cell = space.cell
    D = [ps.deriv_matrix(cell, space.degree, i) for i in range(cell.dim)]
    c = space.components(space.basis)
    return sum(c[:, i] @ D[i].T for i in range(cell.dim))


_DIFF_TABLE = {
    "grad": (_grad_rows, lambda s: s.cell.dim),
    "curl3d": (_curl3d_rows, lambda s: 3),
    "curl2d_scalar": (_curl2d_scalar_rows, lambda s: 2),
    "curl2d_vector": (_curl2d_vector_rows, lambda s: 1),
    "div": (_div_rows, lambda s: 1),
}


def diff_op(name, source, target):
    """Exact differential operator from `source` expanded in `target`.

    Raises if the image does not embed in the declared target space.
    """
    if name not in _DIFF_TABLE:
        raise ValueError(f"unknown differential operator {name!r}")
    fn, out_vd = _DIFF_TABLE[name]
    if name == "grad" and source.value_dim != 1:
        raise ValueError("grad needs a scalar source")
    if name == "curl3d" and (source.cell.dim != 3 or source.value_dim != 3):
        raise ValueError("curl3d needs a 3-component source on the 3D cell")
    if name == "curl2d_scalar" and (source.cell.dim != 2 or source.value_dim != 1):
        raise ValueError("curl2d_scalar needs a scalar source on a 2D cell")
    if name == "curl2d_vector" and (source.cell.dim != 2 or source.value_dim != 2):
        raise ValueError("curl2d_vector needs a 2-component source on a 2D cell")
    if name == "div" and source.value_dim != source.cell.dim:
        raise ValueError("div needs a full vector source")
    rows = fn(source)
    coords, resid = _expand_in(target, rows, source.cell, out_vd(source), source.degree)
    if resid > 1e-11:
        raise ValueError(
            f"image of {name} does not lie in target {target.name}: residual {resid:.2e}"
        )
    return LinearOpMatrix(source, target, coords, resid)


def diff_rows(name, space):
    """Slot rows of the operator image, without expanding in a target space."""
    fn, _ = _DIFF_TABLE[name]
    return fn(space)


# ---------------------------------------------------------------------------
# trace operators


def _trace_rows(name, source, sub, refcell):
    cell = source.cell
    deg = source.degree
    if name == "Pi_tau":
        T, tcell = ps.tangential_trace_matrix(refcell, deg, sub)
        return source.basis @ T.T, tcell, 2
    if name == "gamma_tau":
        T, tcell = ps.tangential_trace_matrix(refcell, deg, sub)
        rows = source.basis @ T.T
        nm2 = tcell.n_modes(deg)
        rot = np.concatenate([-rows[:, nm2:], rows[:, :nm2]], axis=1)
        return rot, tcell, 2
    if name == "normal":
        T, tcell = ps.normal_trace_matrix(refcell, deg, sub)
        return source.basis @ T.T, tcell, 1
    if name == "edge_tangential":
        T, tcell = ps.edge_tangential_trace_matrix(cell, deg, sub, source.value_dim)
        return source.basis @ T.T, tcell, 1
    if name == "restrict":
        T, tcell = ps.scalar_trace_matrix(cell, deg, sub)
        return source.basis @ T.T, tcell, 1
    if name == "surf_grad":
        T, tcell = ps.scalar_trace_matrix(cell, deg, sub)
        traced = source.basis @ T.T
        D = [ps.deriv_matrix(tcell, deg, i) for i in range(2)]
        return (
            np.concatenate([traced @ D[0].T, traced @ D[1].T], axis=1),
            tcell,
            2,
        )
    if name == "surf_curl":
        T, tcell = ps.tangential_trace_matrix(refcell, deg, sub)
        traced = source.basis @ T.T
        nm2 = tcell.n_modes(deg)
        D = [ps.deriv_matrix(tcell, deg, i) for i in range(2)]
        return traced[:, nm2:] @ D[0].T - traced[:, :nm2] @ D[1].T, tcell, 1
    raise ValueError(f"unknown trace operator {name!r}")


def trace_op(name, source, sub, target, refcell=None):
    """Trace operator expanded in a target space living on the trace cell."""
    rows, tcell, vd = _trace_rows(name, source, sub, refcell)
    if target.cell is not tcell and target.cell.key != tcell.key:
        raise ValueError("target space does not live on the trace cell")
    coords, resid = _expand_in(target, rows, tcell, vd, source.degree)
    if resid > 1e-11:
        raise ValueError(f"trace image not contained in target: residual {resid:.2e}")
    return LinearOpMatrix(source, target, coords, resid)


def trace_space(space, sub, family, refcell=None):
    """Image space of a trace: restriction (h1), tangential (hcurl), normal (hdiv)."""
    deg = space.degree
    if family == "h1":
        rows, tcell, vd = _trace_rows("restrict", space, sub, refcell)
    elif family == "hcurl":
        if hasattr(sub, "normal"):
            rows, tcell, vd = _trace_rows("Pi_tau", space, sub, refcell)
        else:
            rows, tcell, vd = _trace_rows("edge_tangential", space, sub, refcell)
    elif family == "hdiv":
        rows, tcell, vd = _trace_rows("normal", space, sub, refcell)
    else:
        raise ValueError(f"unknown family {family!r}")
    basis = ps.span_from_rows(rows)
    return ps.PolySpace(tcell, vd, deg, basis, name=f"trace_{family}[{space.name}]")


# ---------------------------------------------------------------------------
# subspace relations and sequence checks


def subspace_distance(rows_a, basis_b):
    """Max relative distance of span(rows_a) members from span(basis_b)."""
    if rows_a.shape[0] == 0:
        return 0.0
    proj = rows_a @ basis_b.T @ basis_b
    num = np.linalg.norm(rows_a - proj, axis=1)
    den = np.linalg.norm(rows_a, axis=1)
    den[den == 0] = 1.0
    return float((num / den).max())


def _range_and_kernel(rows, source_dim):
    basis = ps.span_from_rows(rows)
    return basis, basis.shape[0], source_dim - basis.shape[0]


def check_exact_sequence(p, refcell3, refcell2, refcell1):
    """Rank/kernel report for the full and trace-free sequences, 3D and 2D.

    Every entry carries measured dimensions plus an `ok` flag against the
    expected identity.
    """
    rep = {"p": p, "checks": []}

    def record(label, ok, **data):
        rep["checks"].append({"label": label, "ok": bool(ok), **data})

    # --- 3D full sequence
    W = ps.build_space(refcell3, "h1", p)
    Q = ps.build_space(refcell3, "hcurl", p)
    V = ps.build_space(refcell3, "hdiv", p)
    L = ps.build_space(refcell3, "l2", p)
    g = diff_op("grad", W, Q)
    c = diff_op("curl3d", Q, V)
    d = diff_op("div", V, L)
    record("3d.grad.kernel", W.dim - np.linalg.matrix_rank(g.matrix, tol=1e-8) == 1,
           kernel=int(W.dim - np.linalg.matrix_rank(g.matrix, tol=1e-8)), expected=1)
    grad_range = ps.span_from_rows(g.matrix)
    curl_kernel = ps.null_space_of(c.matrix.T, n_cols=Q.dim)
    record(
        "3d.ker_curl_eq_range_grad",
        curl_kernel.shape[0] == grad_range.shape[0]
        and subspace_distance(grad_range, curl_kernel) < 1e-8,
        dim_kernel=int(curl_kernel.shape[0]),
        dim_range=int(grad_range.shape[0]),
    )
    curl_range = ps.span_from_rows(c.matrix)
    div_kernel = ps.null_space_of(d.matrix.T, n_cols=V.dim)
    record(
        "3d.ker_div_eq_range_curl",
        div_kernel.shape[0] == curl_range.shape[0]
        and subspace_distance(curl_range, div_kernel) < 1e-8,
        dim_kernel=int(div_kernel.shape[0]),
        dim_range=int(curl_range.shape[0]),
    )
    record(
        "3d.div_onto_l2",
        np.linalg.matrix_rank(d.matrix, tol=1e-8) == L.dim,
        rank=int(np.linalg.matrix_rank(d.matrix, tol=1e-8)),
        expected=int(L.dim),
    )

    # --- 3D trace-free sequence
    Wb = ps.build_space(refcell3, "h1_bubble", p)
    Qb = ps.build_space(refcell3, "hcurl_bubble", p)
    Vb = ps.build_space(refcell3, "hdiv_bubble", p)
    Lz = ps.build_space(refcell3, "l2_zero_mean", p)
    gb = ps.span_from_rows(diff_rows("grad", Wb)) if Wb.dim else np.zeros((0, 3 * Wb.n_modes))
    cb = ps.span_from_rows(diff_rows("curl3d", Qb)) if Qb.dim else np.zeros((0, 3 * Qb.n_modes))
    db = ps.span_from_rows(diff_rows("div", Vb)) if Vb.dim else np.zeros((0, Vb.n_modes))
    record(
        "3d.bubble.dim_split",
        Qb.dim == gb.shape[0] + cb.shape[0],
        dim_bubble_hcurl=int(Qb.dim),
        dim_grad=int(gb.shape[0]),
        dim_curl=int(cb.shape[0]),
    )
    Lz_deg = ps.pad_slots(Lz.basis, Lz.cell, 1, Lz.degree, Vb.degree)
    record(
        "3d.bubble.div_onto_zero_mean",
        db.shape[0] == Lz.dim and subspace_distance(db, Lz_deg) < 1e-8,
        dim_div=int(db.shape[0]),
        dim_zero_mean=int(Lz.dim),
    )

    # --- face trace-free sequence (2D on the reference triangle)
    W2b = ps.build_space(refcell2, "h1_bubble", p)
    Q2b = ps.build_space(refcell2, "hcurl_bubble", p)
    V2b = ps.build_space(refcell2, "hdiv_bubble", p)
    g2 = ps.span_from_rows(diff_rows("grad", W2b)) if W2b.dim else np.zeros((0, 2 * W2b.n_modes))
    c2 = ps.span_from_rows(diff_rows("curl2d_vector", Q2b)) if Q2b.dim else np.zeros((0, Q2b.n_modes))
    record(
        "2d.bubble.dim_split",
        Q2b.dim == g2.shape[0] + c2.shape[0],
        dim_bubble_hcurl=int(Q2b.dim),
        dim_grad=int(g2.shape[0]),
        dim_curl=int(c2.shape[0]),
    )
    V2b_deg = ps.pad_slots(V2b.basis, V2b.cell, 1, V2b.degree, Q2b.degree)
    record(
        "2d.bubble.curl_eq_zero_mean",
        c2.shape[0] == V2b.dim and subspace_distance(c2, V2b_deg) < 1e-8,
        dim_curl=int(c2.shape[0]),
        dim_zero_mean=int(V2b.dim),
    )

    # --- 2D full sequence
    W2 = ps.build_space(refcell2, "h1", p)
    Q2 = ps.build_space(refcell2, "hcurl", p)
    L2 = ps.build_space(refcell2, "l2", p)
    g2f = diff_op("grad", W2, Q2)
    c2f = diff_op("curl2d_vector", Q2, L2)
    kernel2 = ps.null_space_of(c2f.matrix.T, n_cols=Q2.dim)
    range2 = ps.span_from_rows(g2f.matrix)
    record(
        "2d.ker_curl_eq_range_grad",
        kernel2.shape[0] == range2.shape[0]
        and subspace_distance(range2, kernel2) < 1e-8,
        dim_kernel=int(kernel2.shape[0]),
        dim_range=int(range2.shape[0]),
    )
    record(
        "2d.curl_onto_l2",
        np.linalg.matrix_rank(c2f.matrix, tol=1e-8) == L2.dim,
        rank=int(np.linalg.matrix_rank(c2f.matrix, tol=1e-8)),
        expected=int(L2.dim),
    )

    # --- edge sequence
    W1b = ps.build_space(refcell1, "h1_bubble", p)
    Q1z = ps.build_space(refcell1, "hcurl_bubble", p)
    g1 = ps.span_from_rows(diff_rows("grad", W1b)) if W1b.dim else np.zeros((0, W1b.n_modes))
    Q1z_deg = ps.pad_slots(Q1z.basis, Q1z.cell, 1, Q1z.degree, W1b.degree)
    record(
        "1d.bubble.grad_eq_zero_mean",
        g1.shape[0] == Q1z.dim and subspace_distance(g1, Q1z_deg) < 1e-8,
        dim_grad=int(g1.shape[0]),
        dim_zero_mean=int(Q1z.dim),
    )
    rep["ok"] = all(c["ok"] for c in rep["checks"])
    return rep


def _composite_residual(a, b):
    """Entry residual of a zero composite, relative to its roundoff scale."""
    scale = max(
        np.abs(a).max() * np.abs(b).max() * np.sqrt(a.shape[1]), 1.0
    )
    return np.abs(a @ b).max() / scale


def complex_property_residual(refcell3, refcell2, p):
    """Max matrix residual of the composite identities curl o grad = 0 and
    div o curl = 0 (3D) and curl o grad = 0 (2D), relative to operator scale."""
    W = ps.build_space(refcell3, "h1", p)
    Q = ps.build_space(refcell3, "hcurl", p)
    V = ps.build_space(refcell3, "hdiv", p)
    L = ps.build_space(refcell3, "l2", p)
    g = diff_op("grad", W, Q)
    c = diff_op("curl3d", Q, V)
    d = diff_op("div", V, L)
    r1 = _composite_residual(g.matrix, c.matrix)
    r2 = _composite_residual(c.matrix, d.matrix)
    W2 = ps.build_space(refcell2, "h1", p)
    Q2 = ps.build_space(refcell2, "hcurl", p)
    L2 = ps.build_space(refcell2, "l2", p)
    g2 = diff_op("grad", W2, Q2)
    c2 = diff_op("curl2d_vector", Q2, L2)
    r3 = _composite_residual(g2.matrix, c2.matrix)
    return max(float(r1), float(r2), float(r3))


def integration_by_parts_residual(refcell, p, rng, n_samples=5):
    """Residual of (curl u, v) = (curl v, u) - (Pi_tau u, gamma_tau v)_boundary."""
    cell = refcell.cell
    Q = ps.build_space(refcell, "hcurl", p)
    V = ps.build_space(refcell, "hdiv", p)
    c = diff_op("curl3d", Q, V)
    q = quadrature(cell, 2 * Q.degree + 2)
    worst = 0.0
    for _ in range(n_samples):
        cu = Q.random_elements(1, rng)[0]
        cv = Q.random_elements(1, rng)[0]
        u_q = Q.evaluate(cu, q.points)
        v_q = Q.evaluate(cv, q.points)
        au = cu @ Q.basis.T
        av = cv @ Q.basis.T
        curl_u = V.evaluate((au @ c.matrix) @ V.basis, q.points)
        curl_v = V.evaluate((av @ c.matrix) @ V.basis, q.points)
        lhs = np.einsum("q,qi,qi->", q.weights, curl_u, v_q)
        rhs_vol = np.einsum("q,qi,qi->", q.weights, curl_v, u_q)
        bnd = 0.0
        for face in refcell.faces:
            fq = quadrature(face.cell, 2 * Q.degree + 2)
            amb = face.embed(fq.points)
            uf = Q.evaluate(cu, amb)
            vf = Q.evaluate(cv, amb)
            tu = uf @ face.frame  # tangential components (Pi_tau in chart frame)
            tv = vf @ face.frame
            gv = np.stack([-tv[:, 1], tv[:, 0]], axis=1)  # gamma_tau = n x u
            bnd += np.einsum("q,qi,qi->", fq.weights, tu, gv)
        scale = max(abs(lhs), abs(rhs_vol), abs(bnd), 1e-30)
        worst = max(worst, abs(lhs - (rhs_vol - bnd)) / scale)
    return worst


def stokes_2d_residual(refcell2, p, rng, n_samples=5):
    """Residual of the 2D formula: (curl v, F) = (v, curl F) - (v, F.t)_boundary."""
    cell = refcell2.cell
    W = ps.build_space(refcell2, "h1", p)
    F = ps.vector_space(cell, p + 1, 2)
    q = quadrature(cell, 2 * (p + 2))
    D = [ps.deriv_matrix(cell, W.degree, i) for i in range(2)]
    worst = 0.0
    for _ in range(n_samples):
        cv = W.random_elements(1, rng)[0]
        cf = F.random_elements(1, rng)[0]
        v_q = W.evaluate(cv, q.points)
        F_q = F.evaluate(cf, q.points)
        vc = W.components(cv)[0]
        curl_v = np.stack(
            [W.cell.tabulate(W.degree, q.points).T @ (D[1] @ vc),
             -(W.cell.tabulate(W.degree, q.points).T @ (D[0] @ vc))],
            axis=1,
        )
        fc = F.components(cf)
        DF = [ps.deriv_matrix(cell, F.degree, i) for i in range(2)]
        curl_F = F.cell.tabulate(F.degree, q.points).T @ (DF[0] @ fc[1] - DF[1] @ fc[0])
        lhs = np.einsum("q,qi,qi->", q.weights, curl_v, F_q)
        rhs = np.einsum("q,q,q->", q.weights, v_q, curl_F)
        bnd = 0.0
        for edge, sign in ps.triangle_edges(cell):
            eq = quadrature(edge.cell, 2 * (p + 2))
            amb = edge.embed(eq.points[:, 0])
            ve = W.evaluate(cv, amb)
            Fe = F.evaluate(cf, amb)
            bnd += sign * np.einsum("q,q,q->", eq.weights, ve, Fe @ edge.tangent)
        scale = max(abs(lhs), abs(rhs), abs(bnd), 1e-30)
        worst = max(worst, abs(lhs - (rhs - bnd)) / scale)
    return worst
