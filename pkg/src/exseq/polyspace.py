"""Polynomial spaces of the discrete de Rham complex on reference simplices.

A PolySpace stores an L2-orthonormal basis as coefficient rows over the
orthonormal modal backbone (component-major slots), so coefficient dot
products are L2 inner products and rank/null-space decisions reduce to
SVDs with a relative singular-value cutoff.

Degree convention: `p` is the complex degree. The H1-conforming scalar space
at complex degree p consists of polynomials of degree p+1; the edge (Nedelec)
and face (Raviart-Thomas) spaces and the L2 slot are of degree p.
"""

import numpy as np

from . import cache
from .refsimplex import quadrature

SVD_CUTOFF = 1e-10

KINDS = (
    "h1",
    "l2",
    "hcurl",
    "hdiv",
    "h1_bubble",
    "hcurl_bubble",
    "hdiv_bubble",
    "h1_zero_mean",
    "l2_zero_mean",
    "hcurl_orth",
    "hcurl_bubble_orth",
)


class PolySpace:
    """A finite-dimensional polynomial space on a simplex cell.

    basis: (dim, value_dim * n_modes(degree)) orthonormal coefficient rows.
    """

    def __init__(self, cell, value_dim, degree, basis, name=""):
        self.cell = cell
        self.value_dim = value_dim
        self.degree = degree
        self.basis = np.ascontiguousarray(basis, dtype=float)
        self.name = name

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def n_modes(self):
        return self.cell.n_modes(self.degree)

    def __repr__(self):
        return (
            f"PolySpace({self.name or '?'}, cell={self.cell.key}, "
            f"dim={self.dim}, vdim={self.value_dim}, degree={self.degree})"
        )

    def components(self, coeffs):
        coeffs = np.asarray(coeffs)
        return coeffs.reshape(coeffs.shape[:-1] + (self.value_dim, self.n_modes))

    def evaluate(self, coeffs, pts):
        """Point values; shape (..., n_pts) scalar or (..., n_pts, value_dim)."""
        V = self.cell.tabulate(self.degree, pts)
        comp = self.components(coeffs) @ V
        if self.value_dim == 1:
            return comp[..., 0, :]
        return np.moveaxis(comp, -2, -1)

    def evaluate_basis(self, pts):
        return self.evaluate(self.basis, pts)

    def random_elements(self, n, rng, unit=True):
        c = rng.standard_normal((n, self.dim))
        if unit:
            c /= np.linalg.norm(c, axis=1, keepdims=True)
        return c @ self.basis


def slot_count(cell, value_dim, degree):
    return value_dim * cell.n_modes(degree)


def pad_slots(coeffs, cell, value_dim, deg_from, deg_to):
    """Embed component-major slot vectors from one modal degree to a higher one."""
    if deg_from == deg_to:
        return np.asarray(coeffs, dtype=float)
    if deg_from > deg_to:
        raise ValueError("cannot pad downward")
    n1, n2 = cell.n_modes(deg_from), cell.n_modes(deg_to)
    coeffs = np.asarray(coeffs, dtype=float)
    shape = coeffs.shape[:-1]
    comp = coeffs.reshape(shape + (value_dim, n1))
    out = np.zeros(shape + (value_dim, n2))
    out[..., :n1] = comp
    return out.reshape(shape + (value_dim * n2,))


def common_degree(space_a, space_b):
    return max(space_a.degree, space_b.degree)


def span_from_rows(rows, cutoff=SVD_CUTOFF):
    """Orthonormal basis of the row span, rank decided by relative SVD cutoff."""
    rows = np.atleast_2d(rows)
    u, s, vt = np.linalg.svd(rows, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((0, rows.shape[1]))
    rank = int(np.sum(s > cutoff * s[0]))
    return vt[:rank]


def null_space_of(constraints, n_cols=None, cutoff=SVD_CUTOFF):
    """Orthonormal basis of {x : A x = 0} for a constraint matrix A."""
    A = np.atleast_2d(constraints)
    if A.shape[0] == 0:
        return np.eye(n_cols if n_cols is not None else A.shape[1])
    u, s, vt = np.linalg.svd(A, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(s > cutoff * s[0]))
    return vt[rank:]


# ---------------------------------------------------------------------------
# modal operator matrices

_op_registry = {}


def deriv_matrix(cell, degree, direction):
    """Apply-matrix of d/dx_i on modal coefficients (degree -> degree)."""
    key = (cell.key, "D", degree, direction)
    if key not in _op_registry:
        q = quadrature(cell, 2 * degree)
        V = cell.tabulate(degree, q.points)
        G = cell.tabulate_grad(degree, q.points)
        Vw = V * q.weights
        for i in range(cell.dim):
            Gi = np.ascontiguousarray(G[:, :, i])
            _op_registry[(cell.key, "D", degree, i)] = Vw @ Gi.T
    return _op_registry[key]


def coord_matrix(cell, degree, direction):
    """Apply-matrix of multiplication by x_i (degree -> degree+1)."""
    key = (cell.key, "X", degree, direction)
    if key not in _op_registry:
        q = quadrature(cell, 2 * degree + 2)
        V1 = cell.tabulate(degree, q.points)
        V2 = cell.tabulate(degree + 1, q.points)
        _op_registry[key] = (V2 * (q.weights * q.points[:, direction])) @ V1.T
    return _op_registry[key]


def mean_row(cell, value_dim, degree):
    """Rows of the integral functional(s), one per component."""
    rows = np.zeros((value_dim, slot_count(cell, value_dim, degree)))
    nm = cell.n_modes(degree)
    for c in range(value_dim):
        rows[c, c * nm] = np.sqrt(cell.measure)
    return rows


# ---------------------------------------------------------------------------
# trace matrices (into planar/interval trace cells)


def scalar_trace_matrix(cell, degree, sub):
    """Restriction of scalar modal coefficients to a Face or Edge sub-simplex.

    Returns (T, trace_cell): trace coefficients (same degree) are T @ coeffs.
    """
    key = (cell.key, "trace", degree, sub.cell.key)
    if key not in _op_registry:
        q = quadrature(sub.cell, 2 * degree)
        amb = sub.embed(q.points)
        V3 = cell.tabulate(degree, amb)
        V2 = sub.cell.tabulate(degree, q.points)
        _op_registry[key] = (V2 * q.weights) @ V3.T
    return _op_registry[key], sub.cell


def tangential_trace_matrix(refcell, degree, face):
    """Face tangential trace of a 3-component field, in the face chart frame.

    Maps slots (3*nm) to 2-component slots (2*nm2) on the planar face cell.
    """
    T, fcell = scalar_trace_matrix(refcell.cell, degree, face)
    nm = refcell.cell.n_modes(degree)
    nm2 = fcell.n_modes(degree)
    out = np.zeros((2 * nm2, 3 * nm))
    for l in range(2):
        for m in range(3):
            out[l * nm2 : (l + 1) * nm2, m * nm : (m + 1) * nm] = (
                face.frame[m, l] * T
            )
    return out, fcell


def normal_trace_matrix(refcell, degree, face):
    """Face normal trace n_f . u of a 3-component field (scalar on the face)."""
    T, fcell = scalar_trace_matrix(refcell.cell, degree, face)
    nm = refcell.cell.n_modes(degree)
    nm2 = fcell.n_modes(degree)
    out = np.zeros((nm2, 3 * nm))
    for m in range(3):
        out[:, m * nm : (m + 1) * nm] = face.normal[m] * T
    return out, fcell


def edge_tangential_trace_matrix(cell, degree, edge, value_dim):
    """Edge trace t_e . u of a vector field (scalar on the edge interval)."""
    T, ecell = scalar_trace_matrix(cell, degree, edge)
    nm = cell.n_modes(degree)
    nm1 = ecell.n_modes(degree)
    out = np.zeros((nm1, value_dim * nm))
    for m in range(value_dim):
        out[:, m * nm : (m + 1) * nm] = edge.tangent[m] * T
    return out, ecell


def triangle_edges(cell):
    """Oriented edge data for any 2D triangle cell.

    Returns a tuple of (Edge, ccw_sign); tangents run from the lower to the
    higher vertex index, ccw_sign relates that to counterclockwise traversal.
    """
    from .refsimplex import Edge

    key = (cell.key, "edges")
    if key not in _op_registry:
        v = cell.vertices
        d1, d2 = v[1] - v[0], v[2] - v[0]
        det = d1[0] * d2[1] - d1[1] * d2[0]
        ccw = (0, 1), (1, 2), (2, 0)
        if det < 0:
            ccw = (0, 2), (2, 1), (1, 0)
        edges = []
        for k, (a, b) in enumerate(ccw):
            lo, hi = min(a, b), max(a, b)
            sign = 1 if (a, b) == (lo, hi) else -1
            va, vb = v[lo], v[hi]
            length = float(np.linalg.norm(vb - va))
            from .refsimplex import Cell

            ecell = Cell(
                np.array([[-0.5 * length], [0.5 * length]]),
                f"{cell.key}.edge{lo}{hi}",
            )
            edges.append(
                (
                    Edge(
                        index=k,
                        vertex_ids=(lo, hi),
                        tangent=(vb - va) / length,
                        length=length,
                        midpoint=0.5 * (va + vb),
                        cell=ecell,
                    ),
                    sign,
                )
            )
        _op_registry[key] = tuple(edges)
    return _op_registry[key]


# ---------------------------------------------------------------------------
# space constructors


def scalar_space(cell, degree, name=""):
    if degree < 0:
        raise ValueError("polynomial degree must be >= 0")
    return PolySpace(cell, 1, degree, np.eye(cell.n_modes(degree)), name=name)


def vector_space(cell, degree, value_dim, name=""):
    nm = cell.n_modes(degree)
    return PolySpace(cell, value_dim, degree, np.eye(value_dim * nm), name=name)


def _component_rows(coeff_blocks, nm_out):
    """Stack per-component coefficient blocks into slot rows."""
    n_rows = coeff_blocks[0].shape[0]
    vd = len(coeff_blocks)
    out = np.zeros((n_rows, vd * nm_out))
    for c, blk in enumerate(coeff_blocks):
        out[:, c * nm_out : (c + 1) * nm_out] = blk
    return out


def nedelec_space(cell, p, name=""):
    """Edge elements of the first type at complex degree p (3D or 2D cell)."""
    if p < 0:
        raise ValueError("complex degree must be >= 0")
    nm_p = cell.n_modes(p)
    nm = cell.n_modes(p + 1)
    eye = np.eye(nm_p)
    pad = np.zeros((nm_p, nm))
    pad[:, :nm_p] = eye
    zero = np.zeros((nm_p, nm))
    X = [coord_matrix(cell, p, i).T for i in range(cell.dim)]  # (nm_p, nm) rows
    rows = []
    if cell.dim == 3:
        for c in range(3):
            blocks = [zero, zero, zero]
            blocks[c] = pad
            rows.append(_component_rows(blocks, nm))
        # x cross (phi e_c): e_1 -> (0, x3 phi, -x2 phi), cyclic
        rows.append(_component_rows([zero, X[2], -X[1]], nm))
        rows.append(_component_rows([-X[2], zero, X[0]], nm))
        rows.append(_component_rows([X[1], -X[0], zero], nm))
    elif cell.dim == 2:
        for c in range(2):
            blocks = [zero, zero]
            blocks[c] = pad
            rows.append(_component_rows(blocks, nm))
        rows.append(_component_rows([X[1], -X[0]], nm))
    else:
        return scalar_space(cell, p, name=name)
    basis = span_from_rows(np.vstack(rows))
    return PolySpace(cell, cell.dim, p + 1, basis, name=name)


def raviart_thomas_space(cell, p, name=""):
    """Face elements (normal-conforming) at complex degree p on a 3D cell."""
    if cell.dim == 2:
        return scalar_space(cell, p, name=name)
    if cell.dim == 1:
        raise ValueError("the face-element family is not defined on intervals")
    if p < 0:
        raise ValueError("complex degree must be >= 0")
    nm_p = cell.n_modes(p)
    nm = cell.n_modes(p + 1)
    eye = np.eye(nm_p)
    pad = np.zeros((nm_p, nm))
    pad[:, :nm_p] = eye
    zero = np.zeros((nm_p, nm))
    X = [coord_matrix(cell, p, i).T for i in range(3)]
    rows = []
    for c in range(3):
        blocks = [zero, zero, zero]
        blocks[c] = pad
        rows.append(_component_rows(blocks, nm))
    rows.append(_component_rows([X[0], X[1], X[2]], nm))
    basis = span_from_rows(np.vstack(rows))
    return PolySpace(cell, 3, p + 1, basis, name=name)


def subspace_from_constraints(space, constraint_rows, name=""):
    """Subspace of `space` annihilated by constraint functionals.

    constraint_rows are slot covectors (L2 pairings against given fields).
    """
    C = np.atleast_2d(constraint_rows) @ space.basis.T
    N = null_space_of(C, n_cols=space.dim)
    return PolySpace(
        space.cell, space.value_dim, space.degree, N @ space.basis, name=name
    )


def bubble_space(space, refcell=None, name=""):
    """Trace-free subspace of a space (full, tangential, or normal trace).

    Scalar spaces: vanishing boundary trace (endpoint values in 1D).
    Vector spaces: vanishing tangential trace (edge elements) where
    value_dim == cell.dim matches the edge family; normal trace for the
    face family is handled by `normal_bubble_space`.
    """
    cell = space.cell
    rows = []
    if cell.dim == 1:
        verts = cell.vertices
        V = cell.tabulate(space.degree, verts)
        rows.append(V.T)
    elif cell.dim == 2:
        for edge, _sign in triangle_edges(cell):
            if space.value_dim == 1:
                T, _ = scalar_trace_matrix(cell, space.degree, edge)
                rows.append(T)
            else:
                T, _ = edge_tangential_trace_matrix(
                    cell, space.degree, edge, space.value_dim
                )
                rows.append(T)
    else:
        assert refcell is not None, "3D bubbles need the reference cell"
        for face in refcell.faces:
            if space.value_dim == 1:
                T, _ = scalar_trace_matrix(cell, space.degree, face)
                rows.append(T)
            else:
                T, _ = tangential_trace_matrix(refcell, space.degree, face)
                rows.append(T)
    return subspace_from_constraints(space, np.vstack(rows), name=name)


def normal_bubble_space(space, refcell, name=""):
    rows = []
    for face in refcell.faces:
        T, _ = normal_trace_matrix(refcell, space.degree, face)
        rows.append(T)
    return subspace_from_constraints(space, np.vstack(rows), name=name)


def zero_mean_space(space, name=""):
    return subspace_from_constraints(
        space, mean_row(space.cell, space.value_dim, space.degree), name=name
    )


def gradient_rows(cell, scalar_space_obj, out_degree):
    """Slot rows of the gradients of a scalar space's basis, at out_degree."""
    deg = scalar_space_obj.degree
    D = [deriv_matrix(cell, deg, i) for i in range(cell.dim)]
    comps = [scalar_space_obj.basis @ D[i].T for i in range(cell.dim)]
    rows = _component_rows(comps, cell.n_modes(deg))
    return pad_slots(rows, cell, cell.dim, deg, out_degree)


def grad_orthogonal_subspace(space, scalar, name=""):
    """Elements of a vector `space` L2-orthogonal to gradients of `scalar`."""
    rows = gradient_rows(space.cell, scalar, space.degree)
    return subspace_from_constraints(space, rows, name=name)


# ---------------------------------------------------------------------------
# public dispatcher with caching


def build_space(cell_or_refcell, kind, p, refcell=None):
    """Build one of the complex's spaces at complex degree p.

    kind: one of KINDS. The H1 family ("h1*") has polynomial degree p+1;
    all others have degree p. On 2D cells the face family degenerates to the
    scalar L2 slot, per the trace-space identifications.
    """
    from .refsimplex import ReferenceCell

    if isinstance(cell_or_refcell, ReferenceCell):
        refcell = cell_or_refcell
        cell = refcell.cell
    else:
        cell = cell_or_refcell
    if kind not in KINDS:
        raise ValueError(f"unsupported kind {kind!r}")
    if p < 0:
        raise ValueError(f"complex degree must be >= 0, got {p}")
    key = (cell.key, kind, p)
    if key in _space_cache:
        return _space_cache[key]

    ckey = f"space-{cell.key}-{kind}-{p}"
    stored = cache.get(ckey)
    if stored is not None:
        sp = PolySpace(
            cell,
            int(stored["value_dim"]),
            int(stored["degree"]),
            stored["basis"],
            name=f"{kind}[p={p}]",
        )
        _space_cache[key] = sp
        return sp

    name = f"{kind}[p={p}]"
    if kind == "h1":
        sp = scalar_space(cell, p + 1, name=name)
    elif kind == "l2":
        sp = scalar_space(cell, p, name=name)
    elif kind == "hcurl":
        sp = nedelec_space(cell, p, name=name)
    elif kind == "hdiv":
        sp = raviart_thomas_space(cell, p, name=name)
    elif kind == "h1_bubble":
        sp = bubble_space(build_space(cell, "h1", p, refcell), refcell, name=name)
    elif kind == "hcurl_bubble":
        base = build_space(cell, "hcurl", p, refcell)
        if cell.dim == 1:
            sp = zero_mean_space(base, name=name)
        else:
            sp = bubble_space(base, refcell, name=name)
    elif kind == "hdiv_bubble":
        base = build_space(cell, "hdiv", p, refcell)
        if cell.dim == 3:
            sp = normal_bubble_space(base, refcell, name=name)
        else:
            sp = zero_mean_space(base, name=name)
    elif kind == "h1_zero_mean":
        sp = zero_mean_space(build_space(cell, "h1", p, refcell), name=name)
    elif kind == "l2_zero_mean":
        sp = zero_mean_space(build_space(cell, "l2", p, refcell), name=name)
    elif kind == "hcurl_orth":
        sp = grad_orthogonal_subspace(
            build_space(cell, "hcurl", p, refcell),
            build_space(cell, "h1", p, refcell),
            name=name,
        )
    elif kind == "hcurl_bubble_orth":
        sp = grad_orthogonal_subspace(
            build_space(cell, "hcurl_bubble", p, refcell),
            build_space(cell, "h1_bubble", p, refcell),
            name=name,
        )
    _space_cache[key] = sp
    cache.put(
        ckey,
        {
            "basis": sp.basis,
            "value_dim": np.array(sp.value_dim),
            "degree": np.array(sp.degree),
        },
    )
    return sp


_space_cache = {}


def h1_dimension(p, dim=3):
    """Closed-form dimension of the H1 space at complex degree p."""
    if dim == 3:
        return (p + 2) * (p + 3) * (p + 4) // 6
    if dim == 2:
        return (p + 2) * (p + 3) // 2
    return p + 2


def hdiv_dimension(p):
    """Closed-form dimension of the 3D face-element space at complex degree p."""
    return (p + 2) * (p + 1) * p // 2 + 4 * (p + 1) * (p + 2) // 2


def h1_condition_count(p):
    """Vertex + edge + face + interior condition count of the H1 interpolant."""
    return p * (p - 1) * (p - 2) // 6 + 4 * p * (p - 1) // 2 + 6 * p + 4


# ---------------------------------------------------------------------------
# monomial export


def monomial_exponents(dim, degree):
    from itertools import product

    out = []
    for total in range(degree + 1):
        for alpha in product(range(total + 1), repeat=dim):
            if sum(alpha) == total:
                out.append(alpha)
    return out


def to_monomials(space):
    """Monomial coefficients of each basis function, per component.

    Recovery solves a projection system whose conditioning grows quickly with
    degree; intended for external cross-checks at moderate p (accurate to
    ~1e-12 up to degree ~7, degrading beyond).
    """
    cell = space.cell
    deg = space.degree
    expo = monomial_exponents(cell.dim, deg)
    q = quadrature(cell, 2 * deg)
    V = cell.tabulate(deg, q.points)
    P = np.stack(
        [np.prod(q.points ** np.array(a, dtype=float), axis=1) for a in expo]
    )
    T = (P * q.weights) @ V.T  # <x^alpha, phi_k>
    comps = space.components(space.basis)
    mono = np.linalg.solve(T.T, np.moveaxis(comps, -1, 0).reshape(len(expo), -1))
    mono = mono.reshape(len(expo), space.dim, space.value_dim)
    return expo, np.moveaxis(mono, 0, -1)  # (n_basis, value_dim, n_monomials)


def export_json(space):
    """JSON document of the basis in monomial form, for external cross-checks."""
    expo, mono = to_monomials(space)
    return {
        "cell": space.cell.key,
        "name": space.name,
        "value_dim": space.value_dim,
        "degree": space.degree,
        "monomial_exponents": [list(a) for a in expo],
        "basis": [
            [[float(c) for c in mono[i, v]] for v in range(space.value_dim)]
            for i in range(space.dim)
        ],
    }
