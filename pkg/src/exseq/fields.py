"""Analytic input fields: black-box evaluators with optional derivative jets.

Named suite fields are defined symbolically and compiled lazily, so strong
norms and best-approximation denominators pair against exact derivatives.
Polynomial
fields wrap modal coefficients and differentiate exactly.
"""

from functools import lru_cache

import numpy as np
import sympy as sp

from . import polyspace as ps


class AnalyticField:
    """A scalar or vector function on a cell, evaluable at quadrature points.

    `jets[alpha]` returns the derivative d^alpha of every component; fields
    built from symbolic expressions or polynomial coefficients provide jets
    of any order, sampled black boxes only order zero.
    """

    def __init__(self, name, dim, value_dim, func, jet_factory=None, smoothness="smooth"):
        self.name = name
        self.dim = dim
        self.value_dim = value_dim
        self._func = func
        self._jet_factory = jet_factory
        self._jet_cache = {}
        self.smoothness = smoothness

    def __call__(self, pts):
        vals = self._func(np.asarray(pts, dtype=float))
        return np.asarray(vals, dtype=float)

    def jet(self, pts, alpha):
        alpha = tuple(alpha)
        if sum(alpha) == 0:
            return self(pts)
        if self._jet_factory is None:
            raise ValueError(f"field {self.name!r} provides no derivatives")
        if alpha not in self._jet_cache:
            self._jet_cache[alpha] = self._jet_factory(alpha)
        return np.asarray(self._jet_cache[alpha](np.asarray(pts, dtype=float)), dtype=float)

    def __repr__(self):
        return f"AnalyticField({self.name}, dim={self.dim}, vdim={self.value_dim})"


_XYZ = sp.symbols("x y z")


def from_sympy(name, exprs, dim, smoothness="smooth"):
    """Field from sympy expressions in x, y(, z); exprs is a list per component."""
    if not isinstance(exprs, (list, tuple)):
        exprs = [exprs]
    exprs = [sp.sympify(e) for e in exprs]
    syms = _XYZ[:dim]
    vd = len(exprs)

    def compile_exprs(es):
        fns = [sp.lambdify(syms, e, modules="numpy") for e in es]

        def evaluate(pts):
            cols = [np.broadcast_to(np.asarray(f(*pts.T), dtype=float), (pts.shape[0],))
                    for f in fns]
            if vd == 1:
                return np.array(cols[0])
            return np.stack(cols, axis=1)

        return evaluate

    def jet_factory(alpha):
        des = [sp.diff(e, *[s for s, a in zip(syms, alpha) for _ in range(a)])
               for e in exprs]
        return compile_exprs(des)

    return AnalyticField(name, dim, vd, compile_exprs(exprs), jet_factory, smoothness)


def from_polynomial(name, space, slots, smoothness="entire"):
    """Field wrapping modal slot coefficients of a PolySpace element."""
    slots = np.asarray(slots, dtype=float)
    cell = space.cell

    def evaluate(pts):
        return space.evaluate(slots, pts)

    def jet_factory(alpha):
        mat = np.eye(space.n_modes)
        for i, a in enumerate(alpha):
            for _ in range(a):
                mat = ps.deriv_matrix(cell, space.degree, i) @ mat
        comp = space.components(slots)
        dslots = (comp @ mat.T).reshape(slots.shape)

        def evaluate_d(pts):
            return space.evaluate(dslots, pts)

        return evaluate_d

    return AnalyticField(name, cell.dim, space.value_dim, evaluate, jet_factory,
                         smoothness)


def _unit(dim, i):
    a = [0] * dim
    a[i] = 1
    return tuple(a)


def _raise_order(base_alpha, extra):
    return tuple(a + b for a, b in zip(base_alpha, extra))


def grad_field(f):
    """Gradient of a scalar field, as a vector field with shifted jets."""
    if f.value_dim != 1:
        raise ValueError("grad_field needs a scalar field")
    dim = f.dim

    def evaluate(pts):
        return np.stack([f.jet(pts, _unit(dim, i)) for i in range(dim)], axis=1)

    def jet_factory(alpha):
        def evaluate_d(pts):
            return np.stack(
                [f.jet(pts, _raise_order(alpha, _unit(dim, i))) for i in range(dim)],
                axis=1,
            )

        return evaluate_d

    return AnalyticField(f"grad({f.name})", dim, dim, evaluate, jet_factory,
                         f.smoothness)


def curl_field(f):
    """Curl of a vector field (3D vector or 2D scalar result)."""
    dim = f.dim

    def parts(pts, alpha):
        return [f.jet(pts, _raise_order(alpha, _unit(dim, i))) for i in range(dim)]

    if dim == 3:
        def evaluate_at(alpha):
            def evaluate(pts):
                d = parts(pts, alpha)
                return np.stack(
                    [
                        d[1][:, 2] - d[2][:, 1],
                        d[2][:, 0] - d[0][:, 2],
                        d[0][:, 1] - d[1][:, 0],
                    ],
                    axis=1,
                )

            return evaluate

        zero = (0, 0, 0)
        return AnalyticField(f"curl({f.name})", 3, 3, evaluate_at(zero),
                             evaluate_at, f.smoothness)

    def evaluate_at(alpha):
        def evaluate(pts):
            d = parts(pts, alpha)
            return d[0][:, 1] - d[1][:, 0]

        return evaluate

    return AnalyticField(f"curl({f.name})", 2, 1, evaluate_at((0, 0)),
                         evaluate_at, f.smoothness)


def div_field(f):
    dim = f.dim

    def evaluate_at(alpha):
        def evaluate(pts):
            return sum(
                f.jet(pts, _raise_order(alpha, _unit(dim, i)))[:, i]
                for i in range(dim)
            )

        return evaluate

    zero = (0,) * dim
    return AnalyticField(f"div({f.name})", dim, 1, evaluate_at(zero),
                         evaluate_at, f.smoothness)


def shifted(field, delta):
    """field + delta with a delta sharing the jet interface (for locality tests)."""

    def evaluate(pts):
        return field(pts) + delta(pts)

    def jet_factory(alpha):
        def evaluate_d(pts):
            return field.jet(pts, alpha) + delta.jet(pts, alpha)

        return evaluate_d

    return AnalyticField(f"{field.name}+{delta.name}", field.dim, field.value_dim,
                         evaluate, jet_factory, field.smoothness)


# ---------------------------------------------------------------------------
# named suites

x, y, z = _XYZ


def radial_power_field(alpha, dim, vector=False):
    """r^alpha centered at the origin vertex of the reference cell.

    The Sobolev index is controlled by alpha (k < alpha + dim/2 by the usual
    embedding; recorded per field, not proven). In 1D the singularity sits at
    the left endpoint of (-1, 1) instead.
    """
    alpha = sp.nsimplify(alpha)
    if dim == 1:
        base = (1 + x) ** alpha
        exprs = [base]
    else:
        r2 = sum(s**2 for s in _XYZ[:dim])
        base = r2 ** (alpha / 2)
        exprs = [base] if not vector else [base, x * r2 ** ((alpha - 1) / 2)] + (
            [0] if dim == 3 else []
        )
    tag = f"H^{{{float(alpha) + dim / 2:g}-eps}}"
    name = f"r_pow_{float(alpha):g}" + ("_vec" if vector else "")
    return from_sympy(name, exprs, dim, smoothness=tag)


@lru_cache(maxsize=None)
def suite(name, dim):
    """Named field suites for studies.

    "entire": exponential/trigonometric fields (superalgebraic decay)
    "singular": vertex-centered r^alpha families with finite Sobolev index
    "poly": fixed low-degree polynomial fields for exactness floors
    """
    fields = []
    if dim == 3:
        r2 = x**2 + y**2 + z**2
        if name == "entire":
            fields = [
                from_sympy("exp_sum", sp.exp(x + y / 2 + z / 3), 3),
                from_sympy("trig_mix", sp.sin(x) * sp.cos(y) * sp.exp(z / 2), 3),
                from_sympy(
                    "vec_entire",
                    [sp.exp(x + y / 2), sp.sin(x + z), sp.cos(y) * z],
                    3,
                ),
                from_sympy(
                    "vec_swirl",
                    [sp.sin(y + z), sp.exp(x / 2) * z, x * sp.cos(z)],
                    3,
                ),
            ]
        elif name == "singular":
            alpha = sp.Rational(5, 2)
            fields = [
                from_sympy("r_alpha", r2 ** (alpha / 2), 3, smoothness="H^{4-eps}"),
                from_sympy(
                    "vec_r_alpha",
                    [r2 ** (alpha / 2), x * r2 ** ((alpha - 1) / 2), 0],
                    3,
                    smoothness="H^{3-eps}",
                ),
            ]
        elif name == "poly":
            fields = [
                from_sympy("cubic", x**2 * y + z**3 / 3 + x * y * z, 3),
                from_sympy("vec_poly", [y**2, x * z, x + z], 3),
            ]
    elif dim == 2:
        r2 = x**2 + y**2
        if name == "entire":
            fields = [
                from_sympy("exp_sum", sp.exp(x + y / 2), 2),
                from_sympy("trig_mix", sp.sin(x) * sp.cos(y), 2),
                from_sympy("vec_entire", [sp.exp(x / 2 + y), sp.sin(x + y)], 2),
            ]
        elif name == "singular":
            alpha = sp.Rational(5, 2)
            fields = [
                from_sympy("r_alpha", r2 ** (alpha / 2), 2, smoothness="H^{3.5-eps}"),
                from_sympy(
                    "vec_r_alpha", [r2 ** (alpha / 2), x * y], 2, smoothness="H^{3.5-eps}"
                ),
            ]
        elif name == "poly":
            fields = [
                from_sympy("cubic", x**2 * y + y**3 / 3, 2),
                from_sympy("vec_poly", [y**2, x * y], 2),
            ]
    elif dim == 1:
        if name == "entire":
            fields = [
                from_sympy("exp", sp.exp(x), 1),
                from_sympy("cos", sp.cos(2 * x), 1),
            ]
        elif name == "singular":
            fields = [
                from_sympy("edge_pow_3_2", (1 + x) ** sp.Rational(3, 2), 1,
                           smoothness="H^{2-eps}"),
                from_sympy("edge_pow_5_2", (1 + x) ** sp.Rational(5, 2), 1,
                           smoothness="H^{3-eps}"),
            ]
        elif name == "poly":
            fields = [from_sympy("cubic", x**3 - x, 1)]
    if not fields and name == "mixed":
        return suite("entire", dim) + suite("singular", dim)
    if not fields:
        raise ValueError(f"unknown suite {name!r} in dimension {dim}")
    return tuple(fields)
