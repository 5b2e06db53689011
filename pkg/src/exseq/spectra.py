"""Discrete Friedrichs constants, minimum-energy trace liftings with
orthogonality constraints, and the minimal-lifting trace norm.

The liftings apply the saddle-point correction to a minimum-coefficient
discrete lifting of the trace data; they reproduce traces and satisfy the
orthogonality constraints exactly, while uniformity of their norms in p is a
measured quantity, not an asserted one.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import polyspace as ps
from .calculus import diff_rows
from .refsimplex import make_reference_cell

FRIEDRICHS_CASES = (
    "curl2d_full",
    "curl2d_bubble",
    "curl3d_full",
    "curl3d_bubble",
    "div3d_full",
    "div3d_bubble",
)


@dataclass
class ConstrainedSubspace:
    case: str
    p: int
    parent: ps.PolySpace
    basis: np.ndarray  # orthonormal rows in parent slot space
    constraint_rows: np.ndarray

    @property
    def dim(self):
        return self.basis.shape[0]

    def max_constraint_residual(self):
        if self.dim == 0 or self.constraint_rows.shape[0] == 0:
            return 0.0
        r = self.constraint_rows @ self.basis.T
        return float(np.abs(r).max())


def constrained_subspace(case, p):
    """The orthogonality-constrained space of one Friedrichs inequality."""
    if case not in FRIEDRICHS_CASES:
        raise ValueError(f"unknown case {case!r}")
    dim = 2 if case.startswith("curl2d") else 3
    rc = make_reference_cell(dim)
    bubble = case.endswith("bubble")
    if case.startswith(("curl2d", "curl3d")):
        parent = ps.build_space(rc, "hcurl_bubble" if bubble else "hcurl", p)
        scalar = ps.build_space(rc, "h1_bubble" if bubble else "h1", p)
        rows = (
            diff_rows("grad", scalar)
            if scalar.dim
            else np.zeros((0, dim * parent.n_modes))
        )
    else:
        parent = ps.build_space(rc, "hdiv_bubble" if bubble else "hdiv", p)
        if bubble:
            vec = ps.build_space(rc, "hcurl_bubble_orth", p)
        else:
            vec = ps.build_space(rc, "hcurl", p)
        rows = (
            diff_rows("curl3d", vec)
            if vec.dim
            else np.zeros((0, 3 * parent.n_modes))
        )
        rows = ps.pad_slots(rows, rc.cell, 3, vec.degree, parent.degree)
    sub = ps.subspace_from_constraints(parent, rows)
    return ConstrainedSubspace(case, p, parent, sub.basis, rows)


def friedrichs_constant(case, p):
    """Best constant in ||u|| <= C ||D u|| over the constrained subspace.

    Returns (C, lam_min, dim); an empty subspace yields C = 0 flagged by
    dim = 0.
    """
    sub = constrained_subspace(case, p)
    if sub.dim == 0:
        return 0.0, np.inf, 0
    holder = ps.PolySpace(
        sub.parent.cell, sub.parent.value_dim, sub.parent.degree, sub.basis
    )
    if case.startswith("curl2d"):
        rows = diff_rows("curl2d_vector", holder)
    elif case.startswith("curl3d"):
        rows = diff_rows("curl3d", holder)
    else:
        rows = diff_rows("div", holder)
    A = rows @ rows.T
    lam = scipy.linalg.eigvalsh(A)
    lam_min = float(lam[0])
    if lam_min <= 0:
        return np.inf, lam_min, sub.dim
    return 1.0 / np.sqrt(lam_min), lam_min, sub.dim


# ---------------------------------------------------------------------------
# discrete liftings


def _tangential_trace_stack(rc, degree):
    rows = []
    for face in rc.faces:
        T, _ = ps.tangential_trace_matrix(rc, degree, face)
        rows.append(T)
    return np.vstack(rows)


def _normal_trace_stack(rc, degree, content_degree):
    rows = []
    for face in rc.faces:
        T, fc = ps.normal_trace_matrix(rc, degree, face)
        rows.append(T[: fc.n_modes(content_degree)])
    return np.vstack(rows)


@dataclass
class LiftingResult:
    space: ps.PolySpace
    slots: np.ndarray
    multiplier_norm: float
    trace_residual: float
    orthogonality_residual: float
    kkt_min_singular: float
    energy: float


def discrete_lifting_curl(p, w_slots):
    """Minimum-curl-energy lifting of the tangential trace of w.

    w is an edge-element field (slots at container degree p+1); only its
    tangential trace enters. The lifting reproduces the trace, is
    L2-orthogonal to gradients of interior scalar bubbles, and its saddle
    multiplier vanishes.
    """
    rc = make_reference_cell(3)
    Q = ps.build_space(rc, "hcurl", p)
    Qb = ps.build_space(rc, "hcurl_bubble", p)
    Wb = ps.build_space(rc, "h1_bubble", p)
    stack = _tangential_trace_stack(rc, p + 1) @ Q.basis.T
    data = _tangential_trace_stack(rc, p + 1) @ np.asarray(w_slots, dtype=float)
    w_E = Q.basis.T @ (np.linalg.pinv(stack, rcond=1e-10) @ data)
    if Qb.dim == 0:
        energy = float(np.linalg.norm(_curl_rows_of(Q, w_E)))
        return LiftingResult(
            Q, w_E, 0.0,
            float(np.abs(stack @ (Q.basis @ w_E) - data).max()),
            0.0, np.inf, energy,
        )
    curl_b = diff_rows("curl3d", Qb)
    A = curl_b @ curl_b.T
    grads = diff_rows("grad", Wb) if Wb.dim else np.zeros((0, Qb.basis.shape[1]))
    B = grads @ Qb.basis.T
    n, m = Qb.dim, B.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = A
    K[:n, n:] = B.T
    K[n:, :n] = B
    curl_E = _curl_rows_of(Q, w_E)
    rhs = np.concatenate([curl_b @ curl_E, grads @ w_E])
    sol = np.linalg.solve(K, rhs) if n + m else np.zeros(0)
    w0 = sol[:n] @ Qb.basis
    mult = sol[n:]
    out = w_E - w0
    trace_res = float(np.abs(stack @ (Q.basis @ out) - data).max())
    orth = float(np.abs(grads @ out).max()) if m else 0.0
    smin = float(np.linalg.svd(K, compute_uv=False)[-1]) if n + m else np.inf
    energy = float(np.linalg.norm(_curl_rows_of(Q, out)))
    return LiftingResult(Q, out, float(np.linalg.norm(mult)), trace_res, orth,
                         smin, energy)


def _curl_rows_of(space, slots):
    holder = ps.PolySpace(space.cell, space.value_dim, space.degree,
                          np.atleast_2d(slots))
    return diff_rows("curl3d", holder)[0]


def _div_rows_of(space, slots):
    holder = ps.PolySpace(space.cell, space.value_dim, space.degree,
                          np.atleast_2d(slots))
    return diff_rows("div", holder)[0]


def discrete_lifting_div(p, w_slots):
    """Minimum-div-energy lifting of the facewise normal trace of w."""
    rc = make_reference_cell(3)
    V = ps.build_space(rc, "hdiv", p)
    Vb = ps.build_space(rc, "hdiv_bubble", p)
    Qperp = ps.build_space(rc, "hcurl_bubble_orth", p)
    stack = _normal_trace_stack(rc, p + 1, p) @ V.basis.T
    data = _normal_trace_stack(rc, p + 1, p) @ np.asarray(w_slots, dtype=float)
    w_E = V.basis.T @ (np.linalg.pinv(stack, rcond=1e-10) @ data)
    if Vb.dim == 0:
        energy = float(np.linalg.norm(_div_rows_of(V, w_E)))
        return LiftingResult(
            V, w_E, 0.0,
            float(np.abs(stack @ (V.basis @ w_E) - data).max()),
            0.0, np.inf, energy,
        )
    div_b = diff_rows("div", Vb)
    A = div_b @ div_b.T
    curls = (
        ps.pad_slots(diff_rows("curl3d", Qperp), rc.cell, 3, Qperp.degree,
                     Vb.degree)
        if Qperp.dim
        else np.zeros((0, Vb.basis.shape[1]))
    )
    B = curls @ Vb.basis.T
    n, m = Vb.dim, B.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = A
    K[:n, n:] = B.T
    K[n:, :n] = B
    rhs = np.concatenate([div_b @ _div_rows_of(V, w_E), curls @ w_E])
    sol = np.linalg.solve(K, rhs) if n + m else np.zeros(0)
    w0 = sol[:n] @ Vb.basis
    mult = sol[n:]
    out = w_E - w0
    trace_res = float(np.abs(stack @ (V.basis @ out) - data).max())
    orth = float(np.abs(curls @ out).max()) if m else 0.0
    smin = float(np.linalg.svd(K, compute_uv=False)[-1]) if n + m else np.inf
    energy = float(np.linalg.norm(_div_rows_of(V, out)))
    return LiftingResult(V, out, float(np.linalg.norm(mult)), trace_res, orth,
                         smin, energy)


def x_minus_half_norm(p, w_slots, lift_degree=None):
    """Minimal H(curl) energy over discrete liftings of a tangential trace.

    The infimum runs over edge elements of complex degree `lift_degree`
    (default p); nonincreasing as the lifting degree grows.
    """
    rc = make_reference_cell(3)
    pl = lift_degree if lift_degree is not None else p
    if pl < p:
        raise ValueError("lifting degree must be at least the trace degree")
    Q = ps.build_space(rc, "hcurl", pl)
    Qb = ps.build_space(rc, "hcurl_bubble", pl)
    w_pad = ps.pad_slots(np.asarray(w_slots, dtype=float), rc.cell, 3, p + 1,
                         pl + 1)
    stack = _tangential_trace_stack(rc, pl + 1) @ Q.basis.T
    data = _tangential_trace_stack(rc, pl + 1) @ w_pad
    w_E = Q.basis.T @ (np.linalg.pinv(stack, rcond=1e-10) @ data)

    def energy_sq(slots):
        c = _curl_rows_of(Q, slots)
        return float(slots @ slots + c @ c)

    if Qb.dim == 0:
        return np.sqrt(energy_sq(w_E))
    curl_b = diff_rows("curl3d", Qb)
    A = Qb.basis @ Qb.basis.T + curl_b @ curl_b.T
    rhs = Qb.basis @ w_E + curl_b @ _curl_rows_of(Q, w_E)
    beta = np.linalg.solve(A, rhs)
    v = w_E - beta @ Qb.basis
    return np.sqrt(energy_sq(v))


def inf_sup_constant(p):
    """Measured inf-sup constant of the gradient coupling in the curl lifting."""
    rc = make_reference_cell(3)
    Qb = ps.build_space(rc, "hcurl_bubble", p)
    Wb = ps.build_space(rc, "h1_bubble", p)
    if Qb.dim == 0 or Wb.dim == 0:
        return np.inf
    grads = diff_rows("grad", Wb)
    B = grads @ Qb.basis.T
    curl_b = diff_rows("curl3d", Qb)
    Mq = np.eye(Qb.dim) + curl_b @ curl_b.T
    Mphi = Wb.basis @ Wb.basis.T + grads @ grads.T
    S = B @ np.linalg.solve(Mq, B.T)
    lam = scipy.linalg.eigvalsh(S, Mphi)
    return float(np.sqrt(max(lam[0], 0.0)))
