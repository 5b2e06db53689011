import json
import os

import numpy as np
import pytest

from exseq import cli
from exseq import studies as st


def test_config_validation():
    cfg = st.StudyConfig(operators=("curl3d",), p_min=4, p_max=2)
    with pytest.raises(ValueError):
        cfg.validate()
    cfg = st.StudyConfig(operators=("nope",))
    with pytest.raises(ValueError):
        cfg.validate()
    cfg = st.StudyConfig(operators=("grad3d",), s_values=(1.5,))
    with pytest.raises(ValueError):
        cfg.validate()
    cfg = st.StudyConfig(operators=("grad2d",), s_values=(1.5,), p_max=4)
    cfg.validate()  # the 2D scale extends beyond 1
    cfg = st.StudyConfig(operators=("grad1d",), p_max=16)
    cfg.validate()


def test_records_sorted_and_complete():
    cfg = st.StudyConfig(operators=("grad1d",), p_min=2, p_max=6,
                         suite="mixed", s_values=(0.0,))
    records, slopes = st.run_convergence(cfg)
    keys = [(r.operator, r.field, r.s, r.norm_id, r.p) for r in records]
    assert keys == sorted(keys)
    assert all(np.isfinite(r.error) for r in records)
    assert all(r.denominator > 0 for r in records)
    assert all(abs(r.ratio - r.error / r.denominator) < 1e-12 for r in records)
    assert slopes


def test_superalgebraic_decay_smooth_1d():
    cfg = st.StudyConfig(operators=("grad1d",), p_min=2, p_max=10,
                         suite="entire", s_values=(0.0,))
    records, _ = st.run_convergence(cfg)
    errs = {}
    for r in records:
        if r.field == "exp":
            errs[r.p] = r.error
    # raw error: log err vs p curves downward faster than any fixed slope in
    # log p: successive log-reduction factors grow
    ps_ = sorted(errs)
    drops = [np.log(errs[ps_[i]] / errs[ps_[i + 1]])
             for i in range(len(ps_) - 1)]
    assert all(d > 0 for d in drops)
    assert drops[-1] > drops[0]


def test_dims_rows_contract():
    rows = st._dims_table(3)
    assert set(rows[0].keys()) == {"p", "space", "dim", "closed_form", "match"}
    assert all(r["match"] for r in rows)


def test_csv_format_roundtrip(tmp_path):
    rows = [{"a": 1, "b": 0.5, "c": "x,y"}, {"a": 2, "b": float("nan"), "c": "q"}]
    text = st.format_rows(rows, "csv")
    assert text.splitlines()[0] == "a,b,c"
    assert '"x,y"' in text  # RFC-4180 quoting of embedded commas


def test_verification_report_small():
    rep = st.run_verification(p_max=2, seed=1, n_projection=8, n_poincare=2)
    assert rep["ok"], {k: v["ok"] for k, v in rep["sections"].items()}
    text = st.format_report(rep, "json")
    parsed = json.loads(text)
    assert parsed["ok"] is True


def test_full_verification_p6():
    rep = st.run_verification(p_max=6, seed=0)
    assert rep["ok"], {k: v["ok"] for k, v in rep["sections"].items()}
    assert rep["sections"]["commuting"]["worst"] <= 1e-8
    assert max(rep["sections"]["projection"]["worst"].values()) <= 1e-9
    assert rep["geometry"]["face_angle_hypothesis_2pi3"] is True


def test_cli_dims(tmp_path, capsys):
    out = tmp_path / "dims.csv"
    code = cli.main(["dims", "--p-max", "3", "--format", "csv",
                     "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "p,space,dim,closed_form,match"
    assert len(lines) > 10


def test_cli_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["dims", "--bogus"])
    assert exc.value.code == 2


def test_cli_convergence_deterministic(tmp_path):
    args = ["convergence", "--operator", "grad1d", "--p-min", "2",
            "--p-max", "6", "--suite", "mixed", "--s", "0", "--seed", "11",
            "--format", "csv"]
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(args + ["--out", str(out1)]) == 0
    assert cli.main(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_cli_verify_deterministic(tmp_path):
    args = ["verify", "--p-max", "1", "--seed", "3", "--format", "json"]
    out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(args + ["--out", str(out1)]) == 0
    assert cli.main(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_cli_friedrichs(tmp_path):
    out = tmp_path / "fried.csv"
    code = cli.main(["friedrichs", "--p-min", "1", "--p-max", "3",
                     "--out", str(out), "--format", "csv"])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "case,p,constant,min_singular_value,dim"


def test_cli_project_json_and_csv(tmp_path):
    outj = tmp_path / "interp.json"
    code = cli.main(["project", "--operator", "grad2d", "--suite", "poly",
                     "--p-max", "3", "--format", "json", "--out", str(outj)])
    assert code == 0
    docs = json.loads(outj.read_text())
    assert docs and docs[0]["operator"] == "grad2d"
    outc = tmp_path / "interp.csv"
    code = cli.main(["project", "--operator", "l2_2d", "--suite", "poly",
                     "--p-max", "2", "--format", "csv", "--out", str(outc)])
    assert code == 0
    header = outc.read_text().splitlines()[0]
    assert header.startswith("field,x0,x1,value")


def test_cli_config_file(tmp_path):
    cfgf = tmp_path / "run.cfg"
    cfgf.write_text("p_max = 3\n# comment\nfmt = csv\n")
    out = tmp_path / "dims.csv"
    code = cli.main(["dims", "--config", str(cfgf), "--out", str(out)])
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[-1].startswith("3,")


def test_cache_roundtrip(tmp_path, monkeypatch):
    from exseq import cache
    from exseq import polyspace as ps
    from exseq.refsimplex import make_reference_cell

    monkeypatch.setenv("EXSEQ_CACHE_DIR", str(tmp_path))
    cache.clear_memory()
    rc2 = make_reference_cell(2)
    key = ("tri", "hcurl", 1)
    ps._space_cache.pop(key, None)
    sp1 = ps.build_space(rc2, "hcurl", 1)
    files = os.listdir(tmp_path)
    assert any("hcurl" in f for f in files)
    cache.clear_memory()
    ps._space_cache.pop(key, None)
    sp2 = ps.build_space(rc2, "hcurl", 1)
    assert np.array_equal(sp1.basis, sp2.basis)
