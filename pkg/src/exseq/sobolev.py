"""Inner products, integer and fractional Sobolev norms, dual norms, and
unconstrained best-approximation projectors.

Fractional orders are realized by spectral interpolation of the (mass,
H1-Gram) pencil (and (H1, H2) for orders in (1,2]); dual norms are inner
approximations over a rich polynomial test space. Both are the standard
computable surrogates; equivalence constants are never asserted, only
measured by the studies.
"""

import numpy as np
import scipy.linalg

from . import polyspace as ps
from .refsimplex import quadrature


class SobolevGram:
    """Spectral data of the scalar modal space of a given degree on a cell.

    In modal coordinates the mass matrix is the identity; A1 = I + stiffness
    and A2 adds the (multinomial-weighted) second-derivative Gram, so the
    generalized eigenvalues are >= 1 and fractional powers interpolate the
    integer-order norms exactly at s in {0, 1, 2}.
    """

    def __init__(self, cell, degree):
        self.cell = cell
        self.degree = degree
        self.n = cell.n_modes(degree)
        D = [ps.deriv_matrix(cell, degree, i) for i in range(cell.dim)]
        self._D = D
        S = sum(Di.T @ Di for Di in D)
        self.A1 = np.eye(self.n) + S
        lam, U = scipy.linalg.eigh(self.A1)
        self.lam1 = np.clip(lam, 1.0, None)
        self.U1 = U
        self._second = None

    @property
    def M(self):
        return np.eye(self.n)

    def _second_data(self):
        if self._second is None:
            d = self.cell.dim
            A2 = self.A1.copy()
            for i in range(d):
                for j in range(i, d):
                    w = 1.0 if i == j else 2.0
                    Mij = self._D[i] @ self._D[j]
                    A2 += w * (Mij.T @ Mij)
            mu, V = scipy.linalg.eigh(A2, self.A1)
            self._second = (A2, np.clip(mu, 1.0, None), V)
        return self._second

    @property
    def A2(self):
        return self._second_data()[0]

    def fractional_quadform(self, coeffs, s):
        """<H_s c, c> for scalar modal coefficients; exact at s in {0,1,2}."""
        if not 0.0 <= s <= 2.0:
            raise ValueError(f"fractional order s={s} outside [0, 2]")
        c = np.asarray(coeffs, dtype=float)
        if s <= 1.0:
            y = self.U1.T @ c
            return float(np.sum(self.lam1**s * y**2))
        _, mu, V = self._second_data()
        # V is A1-orthonormal: A1 = V^{-T} V^{-1}, H_s = V^{-T} mu^{s-1} V^{-1}
        y = np.linalg.solve(V, c)
        return float(np.sum(mu ** (s - 1.0) * y**2))

    def dual_quadform(self, b, s):
        """<H_s^{-1} b, b> for a covector b of L2 pairings against the modes."""
        if not 0.0 <= s <= 2.0:
            raise ValueError(f"fractional order s={s} outside [0, 2]")
        b = np.asarray(b, dtype=float)
        if s <= 1.0:
            y = self.U1.T @ b
            return float(np.sum(self.lam1 ** (-s) * y**2))
        _, mu, V = self._second_data()
        y = V.T @ b
        return float(np.sum(mu ** (1.0 - s) * y**2))


_gram_cache = {}


def gram(cell, degree):
    key = (cell.key, degree)
    if key not in _gram_cache:
        _gram_cache[key] = SobolevGram(cell, degree)
    return _gram_cache[key]


def fractional_norm(g, coeffs, s):
    """H^s norm of a scalar or component-stacked field from modal coefficients."""
    c = np.asarray(coeffs, dtype=float)
    if c.size % g.n:
        raise ValueError("coefficient length is not a multiple of the mode count")
    comps = c.reshape(-1, g.n)
    return float(np.sqrt(sum(g.fractional_quadform(ci, s) for ci in comps)))


def field_mode_pairings(cell, degree, quad, values):
    """L2 pairings of sampled field values with the modal basis.

    values: (n_pts,) or (n_pts, vd); returns (vd*nm,) slot covector.
    """
    V = cell.tabulate(degree, quad.points)
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    return np.concatenate([(V * quad.weights) @ vals[:, c] for c in range(vals.shape[1])])


def dual_norm(g, field_or_values, s, quad_degree=None):
    """Discrete dual norm sup_{v in P_degree} (e, v)/||v||_{H^s}.

    `field_or_values` is an evaluator pts -> values, a (pairings,) covector,
    or an array of sampled values matching the quadrature.
    """
    if callable(field_or_values):
        qd = quad_degree or (2 * g.degree + 10)
        q = quadrature(g.cell, min(qd, 40))
        vals = field_or_values(q.points)
        b = field_mode_pairings(g.cell, g.degree, q, vals)
    else:
        b = np.asarray(field_or_values, dtype=float)
    comps = b.reshape(-1, g.n)
    return float(np.sqrt(sum(g.dual_quadform(bi, s) for bi in comps)))


# ---------------------------------------------------------------------------
# best approximation


def _h1_gram_on(space):
    g = gram(space.cell, space.degree)
    comps = space.components(space.basis)
    return sum(comps[:, c] @ g.A1 @ comps[:, c].T for c in range(space.value_dim))


def _h2_gram_on(space):
    g = gram(space.cell, space.degree)
    comps = space.components(space.basis)
    return sum(comps[:, c] @ g.A2 @ comps[:, c].T for c in range(space.value_dim))


def _jet_pairings(space, field, quad, order_matrices):
    """Sum of L2 pairings of prescribed derivatives of the field against the
    corresponding derivatives of the basis, in space coordinates."""
    cell = space.cell
    nm = space.n_modes
    rhs = np.zeros(space.dim)
    comps = space.components(space.basis)
    for alpha, weight in order_matrices:
        vals = field.jet(quad.points, alpha)
        vals = np.asarray(vals, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        mat = np.eye(nm)
        for i, a in enumerate(alpha):
            for _ in range(a):
                mat = ps.deriv_matrix(cell, space.degree, i) @ mat
        V = cell.tabulate(space.degree, quad.points)
        for c in range(space.value_dim):
            b = (V * quad.weights) @ vals[:, c]
            rhs += weight * (comps[:, c] @ (mat.T @ b))
    return rhs


def _derivative_multiindices(dim, order):
    """(multi-index, multinomial weight) pairs defining the H^order norm."""
    out = [((0,) * dim, 1.0)]
    if order >= 1:
        for i in range(dim):
            a = [0] * dim
            a[i] = 1
            out.append((tuple(a), 1.0))
    if order >= 2:
        for i in range(dim):
            for j in range(i, dim):
                a = [0] * dim
                a[i] += 1
                a[j] += 1
                out.append((tuple(a), 1.0 if i == j else 2.0))
    return out


def _diff_values(space, slots, quad, alpha):
    """Values of d^alpha of a polynomial given by slot coefficients."""
    cell = space.cell
    mat = np.eye(space.n_modes)
    for i, a in enumerate(alpha):
        for _ in range(a):
            mat = ps.deriv_matrix(cell, space.degree, i) @ mat
    comp = space.components(slots) @ mat.T
    V = cell.tabulate(space.degree, quad.points)
    vals = comp @ V
    return vals[0] if space.value_dim == 1 else vals.T


def _l2sq(quad, diff):
    diff = np.asarray(diff, dtype=float)
    if diff.ndim == 1:
        return float(np.sum(quad.weights * diff**2))
    return float(np.einsum("q,qi->", quad.weights, diff**2))


def error_in_norm(space, field, slots, quad, norm):
    """Quadrature error ||field - polynomial|| in the requested norm.

    Derivative parts come from the field's jets; fractional norms are handled
    by their surrogate forms elsewhere.
    """
    cell = space.cell
    dim = cell.dim

    def jet_err_sq(alphas):
        total = 0.0
        for alpha, wgt in alphas:
            fv = field.jet(quad.points, alpha)
            pv = _diff_values(space, slots, quad, alpha)
            total += wgt * _l2sq(quad, np.asarray(fv, dtype=float) - pv)
        return total

    if norm == "L2":
        return float(np.sqrt(jet_err_sq([((0,) * dim, 1.0)])))
    if norm in ("H1", "H1full"):
        return float(np.sqrt(jet_err_sq(_derivative_multiindices(dim, 1))))
    if norm == "H2":
        return float(np.sqrt(jet_err_sq(_derivative_multiindices(dim, 2))))
    if norm in ("Hcurl", "Hdiv", "H1curl"):
        base_order = 1 if norm == "H1curl" else 0
        total = jet_err_sq(_derivative_multiindices(dim, base_order))
        from .calculus import diff_rows

        if norm in ("Hcurl", "H1curl"):
            dname = "curl3d" if dim == 3 else "curl2d_vector"
            out_vd = 3 if dim == 3 else 1
            du = _field_curl(field, quad.points, dim)
            dfield = _field_curl_jet(field, quad.points, dim) if norm == "H1curl" else None
        else:
            dname = "div"
            out_vd = 1
            du = sum(
                field.jet(quad.points, _unit(dim, i))[:, i] for i in range(dim)
            )
            dfield = None
        holder = ps.PolySpace(cell, space.value_dim, space.degree,
                              np.atleast_2d(slots))
        drows = diff_rows(dname, holder)[0]
        dspace = ps.PolySpace(cell, out_vd, space.degree, drows[None, :])
        pv = _diff_values(dspace, drows, quad, (0,) * dim)
        du = np.asarray(du, dtype=float)
        total += _l2sq(quad, du - pv)
        if norm == "H1curl":
            for i in range(dim):
                pv_i = _diff_values(dspace, drows, quad, _unit(dim, i))
                fv_i = dfield[i]
                if fv_i.ndim == 2 and out_vd == 1:
                    fv_i = fv_i[:, 0]
                total += _l2sq(quad, np.asarray(fv_i, dtype=float) - pv_i)
        return float(np.sqrt(total))
    raise ValueError(f"no direct error formula for norm {norm!r}")


def _error_norm(space, field, coeffs_slots, quad, kind):
    """Error of the approximation in its own norm (L2 for the plain kinds)."""
    direct = {
        "L2": "L2",
        "H1": "H1full",
        "H1full": "H1full",
        "H2": "H2",
        "Hcurl": "Hcurl",
        "Hdiv": "Hdiv",
        "H1curl": "H1curl",
    }
    return error_in_norm(space, field, coeffs_slots, quad, direct[kind])


def best_approx(space, field, norm="L2", rich_degree=None, quad_degree=None,
                s=0.5, quad=None):
    """Best approximation of an analytic field in `space`.

    norm:
      L2       plain L2 projection
      H1       gradient orthogonality plus zero-mean matching
      H1full   full H1-norm minimization
      H2       full H2-norm minimization
      Hcurl    curl-curl orthogonality plus orthogonality to gradients
      Hdiv     div-div orthogonality plus orthogonality to the curl range
      H1curl   full (H1, curl-H1) norm minimization
      Hhalf    fractional H^s minimization through a rich-space surrogate
      Hhalf_div, Hhalf_curl   graph-norm surrogates ||.||_{H^s}^2 + ||D.||_{H^s}^2

    Returns (slot coefficients, error) where the error is the L2-part
    quadrature error for integer norms and the surrogate-form error for the
    fractional ones.
    """
    cell = space.cell
    if quad is None:
        qd = quad_degree or min(2 * space.degree + 14, 40)
        q = quadrature(cell, qd)
    else:
        q = quad

    if norm == "L2":
        b = field_mode_pairings(cell, space.degree, q, field(q.points))
        coords = space.basis @ b
    elif norm == "H1":
        if space.value_dim != 1:
            raise ValueError("the gradient-orthogonal projector is scalar")
        grad_rows = calculus_grad_rows(space)
        A = grad_rows @ grad_rows.T
        gvals = np.stack(
            [field.jet(q.points, _unit(cell.dim, i)) for i in range(cell.dim)], axis=1
        )
        b = field_mode_pairings(cell, space.degree, q, gvals)
        rhs = grad_rows @ b
        mean = ps.mean_row(cell, 1, space.degree)[0] @ space.basis.T
        A = np.vstack([A, mean[None, :]])
        target_mean = float(np.sum(q.weights * field(q.points)))
        rhs = np.concatenate([rhs, [target_mean]])
        coords, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    elif norm == "H1full":
        A = _h1_gram_on(space)
        rhs = _jet_pairings(space, field, q, _derivative_multiindices(cell.dim, 1))
        coords = np.linalg.solve(A, rhs)
    elif norm == "H2":
        A = _h2_gram_on(space)
        rhs = _jet_pairings(space, field, q, _derivative_multiindices(cell.dim, 2))
        coords = np.linalg.solve(A, rhs)
    elif norm in ("Hcurl", "Hdiv"):
        coords = _two_block_projector(space, field, q, norm)
    elif norm == "H1curl":
        coords = _h1curl_minimizer(space, field, q)
    elif norm in ("Hhalf", "Hhalf_div", "Hhalf_curl"):
        return _fractional_best_approx(space, field, norm, s, rich_degree, q)
    else:
        raise ValueError(f"unknown norm {norm!r}")

    slots = coords @ space.basis
    return slots, _error_norm(space, field, slots, q, norm)


def _unit(dim, i):
    a = [0] * dim
    a[i] = 1
    return tuple(a)


def calculus_grad_rows(space):
    from .calculus import diff_rows

    return diff_rows("grad", space)


def _two_block_projector(space, field, q, norm):
    from .calculus import diff_rows

    cell = space.cell
    if norm == "Hcurl":
        dname = "curl3d" if cell.dim == 3 else "curl2d_vector"
        d_rows = diff_rows(dname, space)
        scalar = ps.scalar_space(cell, space.degree)
        g_rows = diff_rows("grad", scalar)
        g_basis = ps.span_from_rows(g_rows)
        # complement of gradients inside the space, to test the curl block
        compl = ps.subspace_from_constraints(space, g_basis)
        d_compl = diff_rows(dname, compl)
        rows_a = d_compl @ d_rows.T  # curl-curl conditions against complement
        rows_b = g_basis @ space.basis.T  # gradient orthogonality
        if field.value_dim != space.value_dim:
            raise ValueError("field/value-dim mismatch")
        curl_u = _field_curl(field, q.points, cell.dim)
        b_curl = field_mode_pairings(cell, space.degree, q, curl_u)
        rhs_a = d_compl @ b_curl
        b_val = field_mode_pairings(cell, space.degree, q, field(q.points))
        rhs_b = g_basis @ b_val
    else:
        d_rows = diff_rows("div", space)
        ned = ps.nedelec_space(cell, space.degree - 1)
        c_rows = diff_rows("curl3d", ned)
        c_basis = ps.span_from_rows(c_rows)
        c_basis = ps.pad_slots(c_basis, cell, 3, ned.degree, space.degree)
        compl = ps.subspace_from_constraints(space, c_basis)
        d_compl = diff_rows("div", compl)
        rows_a = d_compl @ d_rows.T
        rows_b = c_basis @ space.basis.T
        div_u = field.jet(q.points, (1, 0, 0))[:, 0] + field.jet(q.points, (0, 1, 0))[
            :, 1
        ] + field.jet(q.points, (0, 0, 1))[:, 2]
        b_div = field_mode_pairings(cell, space.degree, q, div_u)
        rhs_a = d_compl @ b_div
        b_val = field_mode_pairings(cell, space.degree, q, field(q.points))
        rhs_b = c_basis @ b_val
    A = np.vstack([rows_a, rows_b])
    rhs = np.concatenate([rhs_a, rhs_b])
    return np.linalg.solve(A, rhs)


def _field_curl(field, pts, dim):
    if dim == 3:
        j = {a: field.jet(pts, a) for a in ((1, 0, 0), (0, 1, 0), (0, 0, 1))}
        return np.stack(
            [
                j[(0, 1, 0)][:, 2] - j[(0, 0, 1)][:, 1],
                j[(0, 0, 1)][:, 0] - j[(1, 0, 0)][:, 2],
                j[(1, 0, 0)][:, 1] - j[(0, 1, 0)][:, 0],
            ],
            axis=1,
        )
    jx = field.jet(pts, (1, 0))
    jy = field.jet(pts, (0, 1))
    return jx[:, 1] - jy[:, 0]


_solver_cache = {}


def _h1curl_matrices(space):
    key = (space.cell.key, space.name, space.degree, space.dim, "H1curl")
    if key in _solver_cache:
        return _solver_cache[key]
    from .calculus import diff_rows

    cell = space.cell
    g = gram(cell, space.degree)
    comps = space.components(space.basis)
    A = sum(comps[:, c] @ g.A1 @ comps[:, c].T for c in range(space.value_dim))
    d_rows = diff_rows("curl3d" if cell.dim == 3 else "curl2d_vector", space)
    vd_curl = 3 if cell.dim == 3 else 1
    dcomp = d_rows.reshape(space.dim, vd_curl, space.n_modes)
    A = A + sum(dcomp[:, c] @ g.A1 @ dcomp[:, c].T for c in range(vd_curl))
    out = (scipy.linalg.cho_factor(A), dcomp, vd_curl)
    _solver_cache[key] = out
    return out


def _h1curl_minimizer(space, field, q):
    cell = space.cell
    comps = space.components(space.basis)
    cho, dcomp, vd_curl = _h1curl_matrices(space)
    # rhs: (u, phi)_{H1} + (curl u, curl phi)_{H1}
    rhs = np.zeros(space.dim)
    V = cell.tabulate(space.degree, q.points)
    uvals = np.asarray(field(q.points), dtype=float)
    du = [np.asarray(field.jet(q.points, _unit(cell.dim, i)), dtype=float)
          for i in range(cell.dim)]
    D = [ps.deriv_matrix(cell, space.degree, i) for i in range(cell.dim)]
    for c in range(space.value_dim):
        b = (V * q.weights) @ uvals[:, c]
        rhs += comps[:, c] @ b
        for i in range(cell.dim):
            bi = (V * q.weights) @ du[i][:, c]
            rhs += comps[:, c] @ (D[i].T @ bi)
    curl_u = _field_curl(field, q.points, cell.dim)
    curl_u = curl_u if curl_u.ndim == 2 else curl_u[:, None]
    dcurl = _field_curl_jet(field, q.points, cell.dim)
    for c in range(vd_curl):
        b = (V * q.weights) @ curl_u[:, c]
        rhs += dcomp[:, c] @ b
        for i in range(cell.dim):
            bi = (V * q.weights) @ dcurl[i][:, c]
            rhs += dcomp[:, c] @ (D[i].T @ bi)
    return scipy.linalg.cho_solve(cho, rhs)


def _field_curl_jet(field, pts, dim):
    """Spatial derivatives of the curl, from order-2 jets of the field."""
    out = []
    for i in range(dim):
        if dim == 3:
            def second(a, b):
                alpha = [0, 0, 0]
                alpha[a] += 1
                alpha[b] += 1
                return field.jet(pts, tuple(alpha))
            ji = [second(i, k) for k in range(3)]
            out.append(
                np.stack(
                    [
                        ji[1][:, 2] - ji[2][:, 1],
                        ji[2][:, 0] - ji[0][:, 2],
                        ji[0][:, 1] - ji[1][:, 0],
                    ],
                    axis=1,
                )
            )
        else:
            alpha_x = [0, 0]
            alpha_x[i] += 1
            ax = tuple(a + b for a, b in zip(alpha_x, (1, 0)))
            ay = tuple(a + b for a, b in zip(alpha_x, (0, 1)))
            out.append((field.jet(pts, ax)[:, 1] - field.jet(pts, ay)[:, 0])[:, None])
    return out


def _fractional_matrices(space, norm, s, P):
    """Field-independent structures of the rich-space fractional minimizer."""
    key = (space.cell.key, space.name, space.degree, space.dim, norm, s, P)
    if key in _solver_cache:
        return _solver_cache[key]
    from .calculus import diff_rows

    cell = space.cell
    g = gram(cell, P)
    nm_rich = cell.n_modes(P)
    B = ps.pad_slots(space.basis, cell, space.value_dim, space.degree, P)
    Bc = B.reshape(space.dim, space.value_dim, nm_rich)
    Hs_B = np.stack(
        [_apply_hs(g, Bc[:, c], s) for c in range(space.value_dim)], axis=1
    )
    A = sum(Hs_B[:, c] @ Bc[:, c].T for c in range(space.value_dim))
    dc = Hs_d = None
    out_vd = 0
    if norm in ("Hhalf_div", "Hhalf_curl"):
        if norm == "Hhalf_div":
            d_rows = diff_rows("div", space)
            out_vd = 1
        else:
            dname = "curl3d" if cell.dim == 3 else "curl2d_vector"
            d_rows = diff_rows(dname, space)
            out_vd = 3 if cell.dim == 3 else 1
        d_rows = ps.pad_slots(d_rows, cell, out_vd, space.degree, P)
        dc = d_rows.reshape(space.dim, out_vd, nm_rich)
        Hs_d = np.stack(
            [_apply_hs(g, dc[:, c], s) for c in range(out_vd)], axis=1
        )
        A = A + sum(Hs_d[:, c] @ dc[:, c].T for c in range(out_vd))
    out = (scipy.linalg.cho_factor(A), Bc, Hs_B, dc, Hs_d, out_vd)
    _solver_cache[key] = out
    return out


def _fractional_best_approx(space, field, norm, s, rich_degree, q):
    cell = space.cell
    P = rich_degree or (space.degree + 6)
    g = gram(cell, P)
    cho, Bc, Hs_B, dc, Hs_d, out_vd = _fractional_matrices(space, norm, s, P)
    uvals = np.asarray(field(q.points), dtype=float)
    if uvals.ndim == 1:
        uvals = uvals[:, None]
    u_rich = np.stack(
        [field_mode_pairings(cell, P, q, uvals[:, c]) for c in range(uvals.shape[1])]
    )
    rhs = sum(Hs_B[:, c] @ u_rich[c] for c in range(space.value_dim))
    du_rich = None
    if norm in ("Hhalf_div", "Hhalf_curl"):
        if norm == "Hhalf_div":
            du = sum(
                field.jet(q.points, _unit(cell.dim, i))[:, i]
                for i in range(cell.dim)
            )
        else:
            du = _field_curl(field, q.points, cell.dim)
        du = np.asarray(du)
        if du.ndim == 1:
            du = du[:, None]
        du_rich = np.stack(
            [field_mode_pairings(cell, P, q, du[:, c]) for c in range(out_vd)]
        )
        rhs = rhs + sum(Hs_d[:, c] @ du_rich[c] for c in range(out_vd))
    coords = scipy.linalg.cho_solve(cho, rhs)
    slots = coords @ space.basis
    # surrogate error: H_s distance inside the rich space
    diff = u_rich - np.tensordot(coords, Bc, axes=(0, 0))
    err2 = sum(
        g.fractional_quadform(diff[c], s) for c in range(diff.shape[0])
    )
    if du_rich is not None:
        ddiff = du_rich - np.tensordot(coords, dc, axes=(0, 0))
        err2 += sum(
            g.fractional_quadform(ddiff[c], s) for c in range(ddiff.shape[0])
        )
    return slots, float(np.sqrt(max(err2, 0.0)))


def _apply_hs(g, X, s):
    """Apply H_s to rows of X (n, nm)."""
    if s <= 1.0:
        Y = X @ g.U1
        return (Y * g.lam1**s) @ g.U1.T
    _, mu, V = g._second_data()
    Vi = np.linalg.inv(V)
    Y = X @ Vi.T
    return (Y * mu ** (s - 1.0)) @ Vi
