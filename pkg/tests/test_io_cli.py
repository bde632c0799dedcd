import json
import re

import numpy as np
import pytest

from xtherm import cli, io
from xtherm.circuit.scenario import METRIC_COLUMNS, ScenarioSpec, scenario_run
from xtherm.fosterfit import FosterNetwork, foster_eval
from xtherm.heatsolve import ThermalStepResponse
from xtherm.xnet import LADDERS

DATA = cli.DATA
ERROR_LINE = re.compile(r"^xtherm: error code=(\d) kind=\w+ msg=\S.*$")


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    err = capsys.readouterr().err
    return code, err


def assert_one_error_line(err, code):
    lines = err.strip().splitlines()
    assert len(lines) == 1, err
    m = ERROR_LINE.match(lines[0])
    assert m and int(m.group(1)) == code, lines[0]


# ------------------------------------------------------------------ io helpers


def test_staged_output_publishes_all_or_nothing(tmp_path):
    out = tmp_path / "out"
    with io.StagedOutput(out) as st:
        st.write("a.txt", "x")
        st.write("sub/b.bin", b"\x00\x01")
    assert (out / "a.txt").read_text() == "x" and (out / "sub" / "b.bin").read_bytes() == b"\x00\x01"
    assert not [p for p in out.iterdir() if p.name.startswith(".staging")]

    other = tmp_path / "other"
    with pytest.raises(RuntimeError):
        with io.StagedOutput(other) as st:
            st.write("a.txt", "x")
            raise RuntimeError("stage failed")
    assert not other.exists()


def test_staged_output_rejects_escaping_names(tmp_path):
    st = io.StagedOutput(tmp_path)
    for bad in ("../x", "/etc/x"):
        with pytest.raises(ValueError):
            st.write(bad, "x")


def test_out_dir_precedence(monkeypatch):
    monkeypatch.delenv(io.OUT_ENV, raising=False)
    assert io.resolve_out_dir(None) == io.Path("xtherm_out")
    assert io.resolve_out_dir(None, "cfg") == io.Path("cfg")
    monkeypatch.setenv(io.OUT_ENV, "env")
    assert io.resolve_out_dir(None, "cfg") == io.Path("env")
    assert io.resolve_out_dir("flag", "cfg") == io.Path("flag")


def test_config_hash_is_canonical():
    assert io.config_hash({"a": 1, "b": 2}) == io.config_hash({"b": 2, "a": 1})
    assert io.config_hash(b"x") != io.config_hash(b"y")


def test_zth_csv_round_trip(tmp_path):
    t = np.logspace(-12, -6, 7)
    resp = ThermalStepResponse(t, np.linspace(1.0, 7.0, 7), "p", "n", 1.0)
    path = tmp_path / io.zth_filename("p", "n")
    path.write_text(io.zth_csv(resp, io.provenance("abc", 1)))
    assert path.read_text().startswith("# config_sha256=abc seed=1 tool=xtherm ")
    back = io.read_zth_csv(path)
    assert (back.heater, back.monitor) == ("p", "n")
    assert np.array_equal(back.times, t) and np.array_equal(back.zth, resp.zth)
    bad = tmp_path / "bad.csv"
    bad.write_text("t,z\n1,2\n")
    with pytest.raises(ValueError):
        io.read_zth_csv(bad)


def test_dump_json_rejects_nan():
    with pytest.raises(ValueError):
        io.dump_json({"x": float("nan")})


# ------------------------------------------------------------------ exit codes


def test_missing_config_exits_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code, err = run(["--out", out, "pipeline", tmp_path / "nope.json"], capsys)
    assert code == 2
    assert_one_error_line(err, 2)
    assert not out.exists()


@pytest.mark.parametrize("text, needle", [("{not json", "invalid JSON"), ('{"geometry": {}, "colour": 1}', "unknown keys"),
                                          ('{"flavor": "nsfet"}', "missing 'geometry'")])
def test_bad_config_exits_2(tmp_path, capsys, text, needle):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(text)
    out = tmp_path / "out"
    code, err = run(["--out", out, "geom", "build", cfg], capsys)
    assert code == 2 and needle in err
    assert_one_error_line(err, 2)
    assert not out.exists()


def test_numerical_failure_exits_3(tmp_path, capsys):
    # an I-V file with no subthreshold rows cannot anchor the slope fit
    iv = tmp_path / "iv.csv"
    rows = "\n".join(f"{vg:.2f},0.7,300,{1e-5 * vg:.6e}" for vg in np.linspace(0.5, 0.7, 11))
    iv.write_text("v_gs,v_ds,temp_K,i_ds_A\n" + rows + "\n")
    code, err = run(["--out", tmp_path / "out", "extract", "iso", iv], capsys)
    assert code == 3
    assert_one_error_line(err, 3)
    assert not (tmp_path / "out").exists()


def test_invariant_violation_exits_4(tmp_path, capsys):
    t = np.logspace(-12, -4, 81)
    nets = {"nn": FosterNetwork.from_r_tau([1e6], [1e-8]), "np": FosterNetwork.from_r_tau([3e6], [1e-8]),
            "pn": FosterNetwork.from_r_tau([3e5], [1e-8]), "pp": FosterNetwork.from_r_tau([1e6], [1e-8])}
    paths = []
    for k in LADDERS:
        p = tmp_path / io.zth_filename(k[0], k[1])
        p.write_text(io.zth_csv(ThermalStepResponse(t, foster_eval(nets[k], t), k[0], k[1], 1.0)))
        paths.append(p)
    code, err = run(["--out", tmp_path / "out", "xnet", "assemble", *paths], capsys)
    assert code == 4 and "np" in err
    assert_one_error_line(err, 4)


def test_unknown_cell_is_config_error(tmp_path, capsys):
    spec = tmp_path / "cell.json"
    spec.write_text(json.dumps({"cell": "AOI21", "shmods": [0]}))
    code, err = run(["--out", tmp_path / "out", "sim", "cell", spec], capsys)
    assert code == 2
    assert_one_error_line(err, 2)


# ------------------------------------------------------------------ commands


def test_geom_build_with_env_out_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(io.OUT_ENV, str(tmp_path / "env_out"))
    code, err = run(["geom", "build", DATA / "nsfet.json"], capsys)
    assert code == 0, err
    grid = json.loads((tmp_path / "env_out" / "grid.json").read_text())
    raw = (DATA / "nsfet.json").read_bytes()
    assert grid["provenance"]["config_sha256"] == io.config_hash(raw)
    assert grid["provenance"]["tool"].startswith("xtherm ")
    assert (tmp_path / "env_out" / "scene.json").exists()


def test_xnet_rho_on_bundled_model(tmp_path, capsys):
    code, err = run(["--out", tmp_path, "xnet", "rho", DATA / "pair_nsfet.json", "--p-n", "5e-5", "--p-p", "5e-5"],
                    capsys)
    assert code == 0, err
    rep = json.loads((tmp_path / "crosstalk.json").read_text())
    assert 0 < rep["rho"] < 1
    assert rep["P_n"] == 5e-5 and "provenance" in rep


@pytest.mark.parametrize("role, polarity", [("n", "NFET"), ("p", "PFET")])
def test_extract_iso_then_she(tmp_path, capsys, role, polarity):
    iv = DATA / f"iv_reference_nsfet_{role}.csv"
    code, err = run(["--out", tmp_path, "extract", "iso", iv, "--polarity", polarity], capsys)
    assert code == 0, err
    card_path = tmp_path / f"card_iso_{iv.stem}.json"
    iso = json.loads(card_path.read_text())
    assert iso["shmod"] == 0 and iso["fit_rmse"] < 0.035
    code, err = run(["--out", tmp_path, "extract", "she", iv, "--polarity", polarity, "--card", card_path,
                     "--pair-model", DATA / "pair_nsfet.json"], capsys)
    assert code == 0, err
    she = json.loads((tmp_path / f"card_she_{iv.stem}.json").read_text())
    assert she["shmod"] == 1 and she["fit_rmse"] < 0.035
    assert she["vth0"] == iso["vth0"]


def test_extract_she_needs_pair_model(tmp_path, capsys):
    code, err = run(["--out", tmp_path / "o", "extract", "she", DATA / "iv_reference_nsfet_n.csv"], capsys)
    assert code == 2 and "--pair-model" in err


def test_sim_cell_writes_waveforms_and_metrics(tmp_path, capsys):
    spec = tmp_path / "inv.json"
    spec.write_text(json.dumps({"cell": "INV", "c_load_fF": 5.0, "flavor": "cfet", "seed": 3}))
    code, err = run(["--out", tmp_path / "o", "sim", "cell", spec], capsys)
    assert code == 0, err
    o = tmp_path / "o"
    assert {p.name for p in o.iterdir()} == {"netlist.json", "waveforms_shmod0.csv", "waveforms_shmod1.csv",
                                             "metrics.csv"}
    first = (o / "metrics.csv").read_text().splitlines()[0]
    assert first.startswith("# config_sha256=") and "seed=3" in first
    header, rows = io.read_csv_rows(o / "metrics.csv")
    assert tuple(header) == METRIC_COLUMNS and len(rows) == 2
    hot = dict(zip(header, rows[1]))
    assert float(hot["dT_n_K"]) > 0 and float(hot["t_p_s"]) > float(dict(zip(header, rows[0]))["t_p_s"])
    wave_header, _ = io.read_csv_rows(o / "waveforms_shmod1.csv")
    assert wave_header[0] == "t_s" and any(h.startswith("T_") for h in wave_header)


@pytest.mark.parametrize("svg", [False, True])
def test_report_compare_from_metrics_csv(tmp_path, capsys, bundled_models, svg):
    spec = ScenarioSpec(cells=("INV", "NAND2"), loads_fF=(2.0, 10.0), flavors=("nsfet",), ro_stages=())
    rows = scenario_run(spec, bundled_models)
    metrics = tmp_path / "metrics.csv"
    metrics.write_text(io.dump_csv(METRIC_COLUMNS, [[r.as_record()[c] for c in METRIC_COLUMNS] for r in rows]))
    out = tmp_path / "report"
    code, err = run(["--out", out, "report", "compare", "--metrics", metrics, *(["--svg"] if svg else [])], capsys)
    assert code == 0, err
    ext = "svg" if svg else "png"
    names = {p.name for p in out.iterdir()}
    assert names == {"compare.csv", f"inverter_delay.{ext}", f"edge_sensitivity.{ext}"}
    head = (out / f"inverter_delay.{ext}").read_bytes()[:64]
    assert (b"<?xml" in head or b"<svg" in head) if svg else head.startswith(b"\x89PNG")
    header, table = io.read_csv_rows(out / "compare.csv")
    assert tuple(header) == cli.COMPARE_COLUMNS
    inv = [dict(zip(header, r)) for r in table if r[0] == "INV" and r[3] == "t_p_s"]
    assert len(inv) == 2 and all(float(r["delta_pct"]) > 0 for r in inv)


def test_report_figures_are_reproducible(bundled_models):
    spec = ScenarioSpec(cells=("INV",), loads_fF=(2.0,), flavors=("nsfet",), ro_stages=())
    records = [r.as_record() for r in scenario_run(spec, bundled_models)]
    for fmt in ("png", "svg"):
        assert cli.render_figures(records, fmt) == cli.render_figures(records, fmt)


def test_metrics_csv_header_checked(tmp_path, capsys):
    bad = tmp_path / "m.csv"
    bad.write_text("a,b\n1,2\n")
    code, err = run(["--out", tmp_path / "o", "report", "compare", "--metrics", bad], capsys)
    assert code == 2 and "not a metrics CSV" in err
