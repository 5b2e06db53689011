"""Experiment harness: verification report and p-convergence sweeps.

Rate sweeps measure the quasi-optimality ratio (interpolation error over the
matching best-approximation infimum) so unknown stability constants drop
out; slopes are fitted on the upper half of the degree range to skip
preasymptotics. Records are merged in a deterministic sort order so fixed
seeds give byte-identical output files.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from . import calculus as ca
from . import fields as fl
from . import poincare as pc
from . import polyspace as ps
from . import projectors as pj
from . import sobolev as sb
from . import spectra as spc
from .refsimplex import make_reference_cell, quadrature

OPERATOR_SHAPE = {
    "grad3d": (3, 1),
    "curl3d": (3, 3),
    "div3d": (3, 3),
    "l2_3d": (3, 1),
    "grad2d": (2, 1),
    "curl2d": (2, 2),
    "l2_2d": (2, 1),
    "grad1d": (1, 1),
}

P_CAP = {1: 20, 2: 10, 3: 10}

DENOMINATOR_NORM = {
    "grad3d": ("H2", None),
    "curl3d": ("H1curl", None),
    "div3d": ("Hhalf_div", 0.5),
    "grad2d": ("Hhalf", 1.5),
    "curl2d": ("Hhalf_curl", 0.5),
    "l2_3d": ("L2", None),
    "l2_2d": ("L2", None),
    "grad1d": ("H1full", None),
}


@dataclass
class StudyConfig:
    operators: tuple = ("curl3d",)
    p_min: int = 2
    p_max: int = 6
    suite: str = "entire"
    s_values: tuple = (0.0,)
    dual_offset: int = 6
    seed: int = 0

    def validate(self):
        for op in self.operators:
            if op not in OPERATOR_SHAPE:
                raise ValueError(f"unknown operator {op!r}")
            dim = OPERATOR_SHAPE[op][0]
            if self.p_max > P_CAP[dim]:
                raise ValueError(
                    f"p_max {self.p_max} beyond cap {P_CAP[dim]} for {op}"
                )
            smax = 1.0 if dim != 2 else make_reference_cell(2).regularity_index
            for s in self.s_values:
                if not 0.0 <= s <= smax + 1e-12:
                    raise ValueError(f"s={s} outside [0, {smax}] for {op}")
        if self.p_min < 0 or self.p_min > self.p_max:
            raise ValueError("invalid degree range")
        if self.dual_offset < 2:
            raise ValueError("dual-test offset must be at least 2")


@dataclass
class StudyRecord:
    operator: str
    p: int
    field: str
    s: float
    norm_id: str
    error: float
    denominator: float
    ratio: float
    pstab: float = float("nan")
    wall_time: float = 0.0

    def row(self, timing=False):
        out = {
            "operator": self.operator,
            "p": self.p,
            "field": self.field,
            "s": self.s,
            "norm": self.norm_id,
            "error": self.error,
            "denominator": self.denominator,
            "ratio": self.ratio,
            "pstab": self.pstab,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out


def fields_for(operator, suite_name):
    dim, vd = OPERATOR_SHAPE[operator]
    return tuple(f for f in fl.suite(suite_name, dim) if f.value_dim == vd)


def _error_l2_parts(plan, field, slots):
    """L2 norms of (e, De) for the operator's graph norm, by quadrature."""
    d = plan._d
    cell = d["cell"]
    op = plan.operator
    target = plan.target
    if op == "grad1d":
        pts, w = pj._graded_interval_rule()
        pts = pts[:, None]
    else:
        q = quadrature(cell, min(2 * target.degree + 14, 40))
        pts, w = q.points, q.weights
    uvals = np.asarray(field(pts), dtype=float)
    pvals = target.evaluate(slots, pts)
    e = uvals - pvals
    if e.ndim == 1:
        l2 = np.sqrt(np.sum(w * e**2))
    else:
        l2 = np.sqrt(np.einsum("q,qi->", w, e**2))

    if op.startswith("grad") or op.startswith("l2"):
        # gradient part for the H1-scale norms
        if op.startswith("l2"):
            return float(l2), None, (e, pts, w)
        dim = cell.dim
        du = np.stack(
            [field.jet(pts, fl._unit(dim, i)) for i in range(dim)], axis=1
        )
        D = [ps.deriv_matrix(cell, target.degree, i) for i in range(dim)]
        V = cell.tabulate(target.degree, pts)
        dp = np.stack([(D[i] @ slots) @ V for i in range(dim)], axis=1)
        ge = du - dp
        h1_part = np.sqrt(np.einsum("q,qi->", w, ge**2))
        return float(l2), float(h1_part), (e, ge, pts, w)
    if op.startswith("curl"):
        dim = cell.dim
        cu = fl.curl_field(field)(pts)
        holder = ps.PolySpace(cell, dim, target.degree, slots[None, :])
        crows = ca.diff_rows("curl3d" if dim == 3 else "curl2d_vector", holder)[0]
        vd = 3 if dim == 3 else 1
        cp = pj._eval_rows(cell, vd, target.degree, crows[None, :], pts)[0]
        ce = np.asarray(cu, dtype=float)
        if ce.ndim == 1:
            ce = ce[:, None]
        ce = ce - cp
        cl2 = np.sqrt(np.einsum("q,qi->", w, ce**2))
        return float(l2), float(cl2), (e, ce, pts, w)
    # div3d
    dv = fl.div_field(field)(pts)
    holder = ps.PolySpace(cell, 3, target.degree, slots[None, :])
    drows = ca.diff_rows("div", holder)[0]
    dp = pj._eval_rows(cell, 1, target.degree, drows[None, :], pts)[0][:, 0]
    de = np.asarray(dv, dtype=float) - dp
    dl2 = np.sqrt(np.sum(w * de**2))
    return float(l2), float(dl2), (e, de, pts, w)


def _dual_pair(cell, degree, pts, w, e):
    """Modal pairings of sampled error values against a test space."""
    V = cell.tabulate(degree, pts)
    e = np.asarray(e)
    if e.ndim == 1:
        e = e[:, None]
    return np.concatenate([(V * w) @ e[:, c] for c in range(e.shape[1])])


def _graph_dual_norm(cell, P, s, pts, w, e, de):
    g = sb.gram(cell, P)
    b1 = _dual_pair(cell, P, pts, w, e)
    val = sb.dual_norm(g, b1, s) ** 2
    if de is not None:
        b2 = _dual_pair(cell, P, pts, w, de)
        val += sb.dual_norm(g, b2, s) ** 2
    return float(np.sqrt(val))


def run_convergence(cfg):
    """Sweep (operator, field, s, p); returns (records, slopes).

    slopes: list of {operator, field, s, slope} fitted on log(ratio) against
    log(p) over the upper half of the degree range.
    """
    cfg.validate()
    records = []
    for op in sorted(cfg.operators):
        dim, vd = OPERATOR_SHAPE[op]
        cell = make_reference_cell(dim).cell
        flds = fields_for(op, cfg.suite)
        den_norm, den_s = DENOMINATOR_NORM[op]
        for f in flds:
            for p in range(cfg.p_min, cfg.p_max + 1):
                t0 = time.perf_counter()
                plan = pj.build_plan(op, p)
                target = plan.target
                slots = plan.apply(f)
                den_space = target
                kwargs = {}
                if den_s is not None:
                    kwargs["s"] = den_s
                    kwargs["rich_degree"] = target.degree + cfg.dual_offset
                _, den = sb.best_approx(den_space, f, den_norm, **kwargs)
                parts = _error_l2_parts(plan, f, slots)
                wall = time.perf_counter() - t0
                for s in cfg.s_values:
                    recs = _records_for(
                        op, p, f, s, parts, den, cfg.dual_offset, cell
                    )
                    for r in recs:
                        r.wall_time = wall
                        records.append(r)
    records.sort(key=lambda r: (r.operator, r.field, r.s, r.norm_id, r.p))
    slopes = fit_slopes(records, cfg)
    return records, slopes


def _records_for(op, p, f, s, parts, den, dual_offset, cell):
    out = []
    if op.startswith("l2"):
        l2, _, _ = parts
        err = l2
        out.append(
            StudyRecord(op, p, f.name, s, "L2", err, den,
                        err / den if den > 0 else float("inf"))
        )
        return out
    if op.startswith("grad"):
        l2, h1p, (e, ge, pts, w) = parts
        if s <= 0.0:
            err = float(np.sqrt(l2**2 + h1p**2))
            norm_id = "H1"
        elif s >= 1.0:
            err = l2
            norm_id = "L2"
        else:
            P = p + 1 + dual_offset
            g = sb.gram(cell, P)
            b = _dual_pair(cell, P, pts, w, e)
            err = sb.fractional_norm(g, b, 1.0 - s)
            norm_id = f"H{1 - s:g}"
        out.append(
            StudyRecord(op, p, f.name, s, norm_id, err, den,
                        err / den if den > 0 else float("inf"))
        )
        if op != "grad1d":
            P = p + 1 + dual_offset
            dn = _graph_dual_norm(cell, P, s, pts, w, ge, None)
            dn2 = _graph_dual_norm(cell, P + 2, s, pts, w, ge, None)
            rec = StudyRecord(
                op, p, f.name, s, "grad_dual", dn, den,
                dn / den if den > 0 else float("inf"),
            )
            rec.pstab = abs(dn2 - dn) / dn if dn > 0 else 0.0
            out.append(rec)
        return out
    # curl / div graph norms
    l2, dl2, (e, de, pts, w) = parts
    if s <= 0.0:
        err = float(np.sqrt(l2**2 + dl2**2))
        norm_id = "Hgraph"
    else:
        P = p + 1 + dual_offset
        err = _graph_dual_norm(cell, P, s, pts, w, e, de)
        norm_id = f"Hdual{s:g}"
    out.append(
        StudyRecord(op, p, f.name, s, norm_id, err, den,
                    err / den if den > 0 else float("inf"))
    )
    return out


def fit_slopes(records, cfg):
    """Least-squares slope of log(ratio) vs log(p) over the upper half range."""
    p_lo = max(cfg.p_min, (cfg.p_min + cfg.p_max) // 2)
    groups = {}
    for r in records:
        groups.setdefault((r.operator, r.field, r.s, r.norm_id), []).append(r)
    slopes = []
    for (op, fname, s, norm_id), rs in sorted(groups.items()):
        pts = [(r.p, r.ratio) for r in rs if r.p >= max(p_lo, 1) and r.ratio > 0
               and np.isfinite(r.ratio)]
        if len(pts) < 2:
            continue
        x = np.log([float(p) for p, _ in pts])
        y = np.log([rat for _, rat in pts])
        slope = float(np.polyfit(x, y, 1)[0])
        slopes.append(
            {"operator": op, "field": fname, "s": s, "norm": norm_id,
             "slope": slope}
        )
    return slopes


# ---------------------------------------------------------------------------
# consolidated verification


def _dims_table(p_max):
    rows = []
    rc3 = make_reference_cell(3)
    rc2 = make_reference_cell(2)
    for p in range(0, p_max + 1):
        entries = [
            ("h1_3d", ps.build_space(rc3, "h1", p).dim, ps.h1_dimension(p, 3)),
            ("hcurl_3d", ps.build_space(rc3, "hcurl", p).dim,
             (p + 1) * (p + 3) * (p + 4) // 2),
            ("hdiv_3d", ps.build_space(rc3, "hdiv", p).dim, ps.hdiv_dimension(p)),
            ("h1_conditions_3d", ps.h1_condition_count(p), ps.h1_dimension(p, 3)),
            ("hdiv_conditions_3d",
             ps.build_space(rc3, "hdiv_bubble", p).dim
             + 4 * ((p + 1) * (p + 2) // 2),
             ps.hdiv_dimension(p)),
            ("h1_2d", ps.build_space(rc2, "h1", p).dim, ps.h1_dimension(p, 2)),
            ("hcurl_2d", ps.build_space(rc2, "hcurl", p).dim, (p + 1) * (p + 3)),
        ]
        for name, dim, closed in entries:
            rows.append(
                {"p": p, "space": name, "dim": int(dim),
                 "closed_form": int(closed), "match": bool(dim == closed)}
            )
    return rows


def run_verification(p_max=6, seed=0, n_projection=40, n_poincare=6):
    """Dimension counts, sequence checks, projections, commuting, right
    inverses, splittings and the Friedrichs sweep; pass/fail plus residuals."""
    rng = np.random.default_rng(seed)
    rc3, rc2, rc1 = (make_reference_cell(d) for d in (3, 2, 1))
    report = {
        "p_max": p_max,
        "seed": seed,
        "geometry": {
            "max_face_angle_3d": float(rc3.max_angle),
            "face_angle_hypothesis_2pi3": bool(rc3.max_angle < 2 * np.pi / 3),
            "regularity_index_2d": float(rc2.regularity_index),
        },
        "sections": {},
    }

    dims = _dims_table(min(p_max + 2, 8))
    report["sections"]["dims"] = {
        "ok": all(r["match"] for r in dims),
        "rows": dims,
    }

    seq = [ca.check_exact_sequence(p, rc3, rc2, rc1) for p in range(p_max + 1)]
    complex_res = max(
        ca.complex_property_residual(rc3, rc2, p) for p in range(p_max + 1)
    )
    report["sections"]["sequences"] = {
        "ok": all(r["ok"] for r in seq) and complex_res <= 1e-12,
        "complex_residual": complex_res,
        "per_p": [{"p": r["p"], "ok": r["ok"]} for r in seq],
    }

    ibp = ca.integration_by_parts_residual(rc3, min(p_max, 4), rng)
    stokes = ca.stokes_2d_residual(rc2, min(p_max, 4), rng)
    report["sections"]["integration_by_parts"] = {
        "ok": ibp <= 1e-10 and stokes <= 1e-10,
        "residual_3d": ibp,
        "residual_2d": stokes,
    }

    proj = {}
    for op in pj.OPERATORS:
        if op == "grad1d":
            continue
        worst = 0.0
        for p in range(0, p_max + 1):
            n = max(2, n_projection // (p_max + 1))
            worst = max(worst, pj.projection_max_error(op, p, n, rng))
        proj[op] = worst
    report["sections"]["projection"] = {
        "ok": max(proj.values()) <= 1e-9,
        "worst": proj,
    }

    comm_rows = []
    for p in range(0, p_max + 1):
        suite = _commuting_suite(p, rng)
        comm_rows.extend(pj.check_commuting(p, suite))
    worst_comm = max(r["rel_residual"] for r in comm_rows)
    report["sections"]["commuting"] = {
        "ok": worst_comm <= 1e-9,
        "worst": worst_comm,
        "n_cases": len(comm_rows),
    }

    poin = _poincare_checks(min(p_max, 8), rng, n_poincare)
    report["sections"]["poincare"] = poin

    lift_rows = []
    ok_lift = True
    rngl = np.random.default_rng(seed + 1)
    for p in range(1, min(p_max, 6) + 1):
        Q = ps.build_space(rc3, "hcurl", p)
        V = ps.build_space(rc3, "hdiv", p)
        res_c = spc.discrete_lifting_curl(p, Q.random_elements(1, rngl)[0])
        res_d = spc.discrete_lifting_div(p, V.random_elements(1, rngl)[0])
        beta = spc.inf_sup_constant(p)
        ok_p = (
            res_c.trace_residual <= 1e-10
            and res_c.orthogonality_residual <= 1e-10
            and res_c.multiplier_norm <= 1e-9
            and res_d.trace_residual <= 1e-10
            and res_d.orthogonality_residual <= 1e-10
            and res_d.multiplier_norm <= 1e-9
        )
        ok_lift = ok_lift and bool(ok_p)
        lift_rows.append(
            {
                "p": p,
                "ok": bool(ok_p),
                "kkt_min_singular_curl": res_c.kkt_min_singular,
                "kkt_min_singular_div": res_d.kkt_min_singular,
                "inf_sup": beta,
            }
        )
    report["sections"]["liftings"] = {"ok": ok_lift, "per_p": lift_rows}

    fried = []
    ok_fried = True
    for case in spc.FRIEDRICHS_CASES:
        Cs = []
        for p in range(1, min(p_max, 8) + 1):
            C, lam, dim = spc.friedrichs_constant(case, p)
            if dim:
                Cs.append((p, C))
        if Cs:
            vals = [c for _, c in Cs]
            ratio = max(vals) / min(vals)
            ok = bool(ratio <= 2.0 and min(vals) > 0)
            empty = False
        else:
            # no degree in range populates the subspace; vacuously true
            ratio, ok, empty = float("nan"), True, True
        ok_fried = ok_fried and ok
        fried.append({"case": case, "ok": ok, "empty": empty, "ratio": ratio,
                      "constants": [[p, c] for p, c in Cs]})
    report["sections"]["friedrichs"] = {"ok": ok_fried, "cases": fried}

    report["ok"] = all(s["ok"] for s in report["sections"].values())
    return report


def _commuting_suite(p, rng):
    rc3, rc2 = make_reference_cell(3), make_reference_cell(2)
    deg = p + 3
    sc3 = ps.scalar_space(rc3.cell, deg)
    vec3 = ps.vector_space(rc3.cell, deg, 3)
    sc2 = ps.scalar_space(rc2.cell, deg)
    vec2 = ps.vector_space(rc2.cell, deg, 2)

    def polys(space, tag, n=2):
        return [
            fl.from_polynomial(f"{tag}{i}", space, s)
            for i, s in enumerate(space.random_elements(n, rng))
        ]

    ent3 = fl.suite("entire", 3)
    ent2 = fl.suite("entire", 2)
    return {
        "grad3d": polys(sc3, "poly_s3_") + [f for f in ent3 if f.value_dim == 1][:1],
        "curl3d": polys(vec3, "poly_v3_") + [f for f in ent3 if f.value_dim == 3][:1],
        "div3d": polys(vec3, "poly_w3_") + [f for f in ent3 if f.value_dim == 3][1:2],
        "grad2d": polys(sc2, "poly_s2_") + [f for f in ent2 if f.value_dim == 1][:1],
        "curl2d": polys(vec2, "poly_v2_") + [f for f in ent2 if f.value_dim == 2][:1],
    }


def _poincare_checks(p_max, rng, n_samples):
    rc3, rc2 = make_reference_cell(3), make_reference_cell(2)
    worst_identity = 0.0
    worst_member = 0.0
    worst_split = 0.0
    for p in range(1, p_max + 1, 2):
        cell = rc3.cell
        rg = pc.regularized_inverse(rc3, "grad3d")
        rcu = pc.regularized_inverse(rc3, "curl3d")
        rd = pc.regularized_inverse(rc3, "div3d")
        # (iii) div o R_div = id on scalars
        sc = ps.scalar_space(cell, p)
        for u in sc.random_elements(n_samples, rng):
            osp, o = rd.apply(sc, u)
            dv = pc._apply_rows("div", osp, o)
            res = np.abs(dv - ps.pad_slots(u, cell, 1, p, osp.degree)).max()
            worst_identity = max(worst_identity, res / max(np.abs(u).max(), 1e-30))
        # (ii) grad o R_grad = id on gradients
        scp = ps.scalar_space(cell, p + 1)
        for phi in scp.random_elements(n_samples, rng):
            g = ca.diff_rows("grad", ps.PolySpace(cell, 1, p + 1, phi[None, :]))[0]
            vs = ps.vector_space(cell, p + 1, 3)
            osp, o = rg.apply(vs, g)
            gg = pc._apply_rows("grad", osp, o)
            res = np.abs(gg - ps.pad_slots(g, cell, 3, p + 1, osp.degree)).max()
            worst_identity = max(worst_identity, res / max(np.abs(g).max(), 1e-30))
        # (i) curl o R_curl = id on divergence-free fields
        Q = ps.build_space(rc3, "hcurl", p)
        V = ps.build_space(rc3, "hdiv", p)
        cmat = ca.diff_op("curl3d", Q, V)
        for c in Q.random_elements(n_samples, rng):
            w = (Q.basis @ c) @ cmat.matrix @ V.basis  # divergence-free field
            vs = ps.vector_space(cell, p + 1, 3)
            osp, o = rcu.apply(vs, w)
            cw = pc._apply_rows("curl3d", osp, o)
            res = np.abs(cw - ps.pad_slots(w, cell, 3, p + 1, osp.degree)).max()
            worst_identity = max(worst_identity, res / max(np.abs(w).max(), 1e-30))
        # memberships (iv)-(vi)
        W = ps.build_space(rc3, "h1", p)
        for rows, op_, tgt, vd, din in (
            (Q.basis, rg, W, 3, p + 1),
            (V.basis, rcu, Q, 3, p + 1),
            (ps.scalar_space(cell, p).basis, rd, V, 1, p),
        ):
            img = rows @ op_.matrix(din)
            _, resid = ca._expand_in(tgt, img, cell, op_.out_vdim, din + 1)
            worst_member = max(worst_member, resid)
        # Helmholtz splittings
        vs = ps.vector_space(cell, p + 1, 3)
        for u in vs.random_elements(max(2, n_samples // 2), rng):
            *_, res = pc.helmholtz_curl(rc3, vs, u)
            worst_split = max(worst_split, res)
            *_, res = pc.helmholtz_div(rc3, vs, u)
            worst_split = max(worst_split, res)
        # 2D identities
        rg2 = pc.regularized_inverse(rc2, "grad2d")
        rc2u = pc.regularized_inverse(rc2, "curl2d")
        sc2 = ps.scalar_space(rc2.cell, p)
        for u in sc2.random_elements(n_samples, rng):
            osp, o = rc2u.apply(sc2, u)
            cr = pc._apply_rows("curl2d_vector", osp, o)
            res = np.abs(cr - ps.pad_slots(u, rc2.cell, 1, p, osp.degree)).max()
            worst_identity = max(worst_identity, res / max(np.abs(u).max(), 1e-30))
        sc2p = ps.scalar_space(rc2.cell, p + 1)
        for phi in sc2p.random_elements(n_samples, rng):
            g = ca.diff_rows("grad", ps.PolySpace(rc2.cell, 1, p + 1,
                                           phi[None, :]))[0]
            vs2 = ps.vector_space(rc2.cell, p + 1, 2)
            osp, o = rg2.apply(vs2, g)
            gg = pc._apply_rows("grad", osp, o)
            res = np.abs(gg - ps.pad_slots(g, rc2.cell, 2, p + 1, osp.degree)).max()
            worst_identity = max(worst_identity, res / max(np.abs(g).max(), 1e-30))
    return {
        "ok": worst_identity <= 1e-10 and worst_member <= 1e-10
        and worst_split <= 1e-9,
        "identity_residual": worst_identity,
        "membership_residual": worst_member,
        "splitting_residual": worst_split,
    }


# ---------------------------------------------------------------------------
# serialization


def records_to_rows(records, timing=False):
    return [r.row(timing=timing) for r in records]


def write_rows(rows, path, fmt):
    text = format_rows(rows, fmt)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def format_rows(rows, fmt):
    if fmt == "json":
        clean = [
            {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
             for k, v in r.items()}
            for r in rows
        ]
        return json.dumps(clean, indent=1) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    import csv
    import io

    buf = io.StringIO()
    if not rows:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()),
                            lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _fmt_value(v) for k, v in r.items()})
    return buf.getvalue()


def _fmt_value(v):
    if isinstance(v, float):
        return repr(v)
    return v


def format_report(report, fmt):
    if fmt == "json":
        return json.dumps(report, indent=1, default=_json_default) + "\n"
    lines = [f"verification p_max={report['p_max']} seed={report['seed']}"]
    for name, sec in report["sections"].items():
        lines.append(f"[{'PASS' if sec['ok'] else 'FAIL'}] {name}")
    lines.append(f"overall: {'PASS' if report['ok'] else 'FAIL'}")
    return "\n".join(lines) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o)}")
