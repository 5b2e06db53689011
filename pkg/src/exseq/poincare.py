"""Regularized right inverses of grad, curl and div, and Helmholtz-type
splittings built only from them.

The operators average path integrals over a ball B interior to the cell with
a polynomial bump weight. For polynomial inputs everything is evaluated
exactly: the path parameter is integrated by Gauss quadrature of sufficient
order, the ball average reduces to closed-form bump moments via a finite
Taylor expansion, and compositions with the contraction x -> t x + (1-t) c
are exact modal projections. The bump is polynomial rather than C-infinity:
every identity checked here is algebraic and needs only supp(theta) in B
with unit mass; smoothness only enters the continuous mapping bounds, which
are out of numerical reach anyway.
"""

from fractions import Fraction
from functools import lru_cache
from itertools import product

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import polyspace as ps
from .refsimplex import quadrature

KINDS = ("grad3d", "curl3d", "div3d", "grad2d", "curl2d")

_T_POWER = {"grad3d": 0, "curl3d": 1, "div3d": 2, "grad2d": 0, "curl2d": 1}
_VDIMS = {
    "grad3d": (3, 1),
    "curl3d": (3, 3),
    "div3d": (1, 3),
    "grad2d": (2, 1),
    "curl2d": (1, 2),
}


class RegularizedInverse:
    """Averaged path-integral right inverse on a cell.

    kind selects the operator family; the bump is (1 - |x-c|^2/r^2)^m on the
    ball of radius `radius_factor * inradius` about the centroid, normalized
    to unit mass in closed form.
    """

    def __init__(self, refcell, kind, m=6, radius_factor=0.9):
        if kind not in KINDS:
            raise ValueError(f"unknown kind {kind!r}")
        want_dim = 3 if kind.endswith("3d") else 2
        if refcell.dim != want_dim:
            raise ValueError(f"{kind} needs a {want_dim}D cell")
        self.refcell = refcell
        self.cell = refcell.cell
        self.kind = kind
        self.m = m
        self.center = self.cell.centroid
        self.radius = radius_factor * self.cell.inradius
        self._matrices = {}

    @property
    def in_vdim(self):
        return _VDIMS[self.kind][0]

    @property
    def out_vdim(self):
        return _VDIMS[self.kind][1]

    def bump_mass(self):
        """Integral of the normalized bump; 1 by construction."""
        return float(self._moment((0,) * self.cell.dim))

    def _moment(self, alpha):
        return _bump_moment_scaled(self.cell.dim, self.m, tuple(alpha), self.radius)

    def matrix(self, degree):
        """Slot matrix (vd_in*nm_deg) -> (vd_out*nm_{deg+1}); rows act as
        out_slots = in_slots @ matrix."""
        if degree not in self._matrices:
            self._matrices[degree] = _build_matrix(
                self.cell, self.kind, degree, self.m, self.center, self.radius
            )
        return self._matrices[degree]

    def apply_slots(self, degree, slots):
        return np.asarray(slots) @ self.matrix(degree)

    def apply(self, space, slots):
        """Apply to an element given by slot coefficients of `space`.

        Returns (out_space, out_slots) with out_space a full polynomial space
        of the output value dimension at degree+1.
        """
        vd_in, vd_out = _VDIMS[self.kind]
        if space.value_dim != vd_in:
            raise ValueError(
                f"{self.kind} expects value dimension {vd_in}, got {space.value_dim}"
            )
        out = self.apply_slots(space.degree, slots)
        if vd_out == 1:
            out_space = ps.scalar_space(self.cell, space.degree + 1)
        else:
            out_space = ps.vector_space(self.cell, space.degree + 1, vd_out)
        return out_space, out


@lru_cache(maxsize=None)
def _bump_moment_scaled(dim, m, alpha, radius):
    """Centered moment of the unit-mass bump over the radius-r ball."""
    if any(a % 2 for a in alpha):
        return 0.0
    eta = [a // 2 for a in alpha]
    total = sum(eta)
    val = Fraction(1)
    for e in eta:
        for k in range(1, e + 1):
            val *= Fraction(2 * k - 1, 2)
    den = Fraction(1)
    for k in range(total):
        den *= Fraction(dim, 2) + m + 1 + k
    return float(val / den) * radius ** (2 * total)


_contract_cache = {}


def _contractions(cell, degree, center):
    """Gauss nodes t_j on [0,1] and modal matrices of P -> P(t x + (1-t)c)."""
    key = (cell.key, degree)
    if key not in _contract_cache:
        n = degree + 2
        xt, wt = leggauss(n)
        t_nodes = 0.5 * (xt + 1.0)
        t_weights = 0.5 * wt
        q = quadrature(cell, 2 * degree)
        V = cell.tabulate(degree, q.points)
        mats = []
        for t in t_nodes:
            pts = t * q.points + (1.0 - t) * center[None, :]
            Vt = cell.tabulate(degree, pts)
            mats.append((V * q.weights) @ Vt.T)  # C[k, j] = <phi_j(contract), phi_k>
        _contract_cache[key] = (t_nodes, t_weights, mats)
    return _contract_cache[key]


def _alpha_derivative(cell, degree, alpha):
    mat = np.eye(cell.n_modes(degree))
    for i, a in enumerate(alpha):
        D = ps.deriv_matrix(cell, degree, i)
        for _ in range(a):
            mat = D @ mat
    return mat


def _build_matrix(cell, kind, degree, m, center, radius):
    from math import factorial

    dim = cell.dim
    vd_in, vd_out = _VDIMS[kind]
    w_pow = _T_POWER[kind]
    nm = cell.n_modes(degree)
    nm1 = cell.n_modes(degree + 1)
    t_nodes, t_weights, C_t = _contractions(cell, degree, center)
    # shifted coordinate multiplication (x_i - c_i): degree -> degree+1
    W = []
    pad = np.zeros((nm, nm1))
    pad[:, : nm] = np.eye(nm)
    for i in range(dim):
        W.append(ps.coord_matrix(cell, degree, i) - center[i] * pad.T)

    # level-summed contraction matrices: C_hat[L] = sum_t w_t t^w (1-t)^L C_t
    C_hat = []
    for L in range(degree + 1):
        acc = np.zeros((nm, nm))
        for t, wt, C in zip(t_nodes, t_weights, C_t):
            acc += wt * t**w_pow * (1.0 - t) ** L * C
        C_hat.append(acc)

    R = np.zeros((vd_in * nm, vd_out * nm1))

    def moment(alpha):
        return _bump_moment_scaled(dim, m, tuple(alpha), radius)

    for alpha in product(range(degree + 1), repeat=dim):
        L = sum(alpha)
        if L > degree:
            continue
        mu = moment(alpha)
        nu = np.array(
            [moment(tuple(a + (1 if i == j else 0) for j, a in enumerate(alpha)))
             for i in range(dim)]
        )
        if mu == 0.0 and not nu.any():
            continue
        fa = 1.0
        for a in alpha:
            fa *= factorial(a)
        # modal transform of each input component for this alpha:
        # K = C_hat[L] @ D^alpha, applied as slots @ (K.T)
        K = (C_hat[L] @ _alpha_derivative(cell, degree, alpha)) / fa
        KT = K.T

        def add(in_comp, out_comp, op):
            R[in_comp * nm : (in_comp + 1) * nm,
              out_comp * nm1 : (out_comp + 1) * nm1] += KT @ op

        if kind in ("grad3d", "grad2d"):
            # v . [(x-c) mu - nu]
            for i in range(dim):
                Rblock = mu * W[i].T - nu[i] * pad
                R[i * nm : (i + 1) * nm, :nm1] += KT @ Rblock
        elif kind == "div3d":
            for i in range(dim):
                Rblock = mu * W[i].T - nu[i] * pad
                add(0, i, Rblock)
        elif kind == "curl2d":
            # scalar v times rotated (-(x2-a2), x1-a1)
            add(0, 0, -(mu * W[1].T - nu[1] * pad))
            add(0, 1, mu * W[0].T - nu[0] * pad)
        elif kind == "curl3d":
            # (v x w)_i with w = (x-c) mu - nu
            ops = [mu * W[i].T - nu[i] * pad for i in range(3)]
            add(1, 0, ops[2])
            add(2, 0, -ops[1])
            add(2, 1, ops[0])
            add(0, 1, -ops[2])
            add(0, 2, ops[1])
            add(1, 2, -ops[0])
    return R


# ---------------------------------------------------------------------------
# Helmholtz-type splittings


def regularized_inverse(refcell, kind, m=6, radius_factor=0.9):
    key = (refcell.dim, kind, m, radius_factor)
    if key not in _inverse_cache:
        _inverse_cache[key] = RegularizedInverse(refcell, kind, m, radius_factor)
    return _inverse_cache[key]


_inverse_cache = {}


def helmholtz_curl(refcell, space, slots, tol=1e-9):
    """Split u = grad(phi) + z with z built from the curl right inverse.

    u is a 3-vector (or 2-vector) polynomial given by slot coefficients.
    Returns (phi_space, phi, z_space, z, residual)."""
    cell = refcell.cell
    dim = cell.dim
    deg = space.degree
    if dim == 3:
        curl_slots = _apply_rows("curl3d", space, slots)
        rc = regularized_inverse(refcell, "curl3d")
        z_space, z = rc.apply(ps.vector_space(cell, deg, 3), curl_slots)
    else:
        curl_slots = _apply_rows("curl2d_vector", space, slots)
        rc = regularized_inverse(refcell, "curl2d")
        z_space, z = rc.apply(ps.scalar_space(cell, deg), curl_slots)
    deg1 = z_space.degree
    u_pad = ps.pad_slots(slots, cell, dim, deg, deg1)
    rg = regularized_inverse(refcell, "grad3d" if dim == 3 else "grad2d")
    phi_space, phi = rg.apply(ps.vector_space(cell, deg1, dim), u_pad - z)
    gphi = _apply_rows("grad", phi_space, phi)  # modal degree phi_space.degree
    lhs = ps.pad_slots(u_pad - z, cell, dim, deg1, phi_space.degree)
    resid_vec = lhs - gphi
    scale = np.linalg.norm(slots) or 1.0
    resid = float(np.linalg.norm(resid_vec) / scale)
    if resid > tol:
        raise ArithmeticError(f"splitting reconstruction residual {resid:.2e} > {tol}")
    return phi_space, phi, z_space, z, resid


def helmholtz_div(refcell, space, slots, tol=1e-9):
    """Split u = curl(psi) + z with z from the div right inverse (3D)."""
    cell = refcell.cell
    deg = space.degree
    div_slots = _apply_rows("div", space, slots)
    rd = regularized_inverse(refcell, "div3d")
    z_space, z = rd.apply(ps.scalar_space(cell, deg), div_slots)
    deg1 = z_space.degree
    u_pad = ps.pad_slots(slots, cell, 3, deg, deg1)
    rc = regularized_inverse(refcell, "curl3d")
    psi_space, psi = rc.apply(ps.vector_space(cell, deg1, 3), u_pad - z)
    cpsi = _apply_rows("curl3d", psi_space, psi)
    lhs = ps.pad_slots(u_pad - z, cell, 3, deg1, psi_space.degree)
    resid_vec = lhs - cpsi
    scale = np.linalg.norm(slots) or 1.0
    resid = float(np.linalg.norm(resid_vec) / scale)
    if resid > tol:
        raise ArithmeticError(f"splitting reconstruction residual {resid:.2e} > {tol}")
    return psi_space, psi, z_space, z, resid


def _apply_rows(name, space, slots):
    from .calculus import _DIFF_TABLE

    fn, _ = _DIFF_TABLE[name]
    holder = ps.PolySpace(space.cell, space.value_dim, space.degree,
                          np.atleast_2d(slots))
    rows = fn(holder)
    return rows[0] if np.asarray(slots).ndim == 1 else rows
