"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 invariant violation.  Errors print one line on stderr::

    xtherm: error code=2 kind=ConfigError msg=...
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import compact, geometry, heatsolve, io, nid, xnet
from .circuit import cells as cellmod
from .circuit import engine, metrics, netlist, scenario
from .fosterfit import FitError, GaConfig, ga_fit

DATA = Path(__file__).parent / "data"
SEED_OFFSETS = {"fit": 101, "assemble": 202}
PROJECT_KEYS = {"flavor", "geometry", "materials", "voxel_size_nm", "powers_W", "solver", "deconv", "ga",
                "scenario", "seed", "output_dir", "cards", "pair_model"}
WAVEFORM_EVERY = 10  # keep 1 ps of the 0.1 ps samples in waveform CSVs


class ConfigError(ValueError):
    pass


EXIT_CODES = (
    (2, (ConfigError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError, geometry.GeometryError,
         scenario.ScenarioError, cellmod.CellError)),
    (4, (xnet.AssemblyError, xnet.CrosstalkError, netlist.NetlistError)),
    (3, (heatsolve.SolverError, engine.ConvergenceError, FitError, nid.NidError, compact.ExtractionError,
         metrics.MeasureError, np.linalg.LinAlgError, ArithmeticError)),
)


def exit_code(exc: BaseException) -> int:
    for code, kinds in EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return 2 if isinstance(exc, (ValueError, KeyError, TypeError)) else 3


# ------------------------------------------------------------------ config


def _read_json(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    try:
        return json.loads(raw), raw
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def load_project(path) -> tuple[dict, str]:
    cfg, raw = _read_json(path)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(cfg) - PROJECT_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    if "geometry" not in cfg:
        raise ConfigError(f"{path}: missing 'geometry'")
    return cfg, io.config_hash(raw)


def _build(cls, section: dict | None, what: str):
    try:
        return cls(**(section or {}))
    except TypeError as exc:
        raise ConfigError(f"bad {what} section: {exc}") from None


def _grid(cfg: dict):
    try:
        geom, materials, voxel = geometry.config_from_dict(cfg)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad geometry config: {exc}") from None
    scene = geometry.build_pair(geom, materials)
    return scene, geometry.voxelize(scene, voxel)


def _thermal_models(spec: dict, flavors) -> dict[str, xnet.DevicePairThermalModel]:
    paths = dict(spec.get("pair_models", {}))
    models = {}
    for f in flavors:
        path = paths.get(f, DATA / f"pair_{f}.json")
        models[f] = xnet.DevicePairThermalModel.load(path)
    return models


# ------------------------------------------------------------------ stages


def stage_geom(cfg, prov, st: io.StagedOutput):
    scene, grid = _grid(cfg)
    st.write("scene.json", io.dump_json(json.loads(scene.to_json()), prov))
    st.write("grid.json", io.dump_json(grid.summary(), prov))
    return grid


def stage_heat(cfg, grid, prov, st: io.StagedOutput) -> dict[str, heatsolve.ThermalStepResponse]:
    solver = _build(heatsolve.SolverConfig, cfg.get("solver"), "solver")
    powers = cfg.get("powers_W", {"n": 1e-5, "p": 1e-5})
    resp = heatsolve.pair_responses(grid, powers, solver)
    for key, r in resp.items():
        st.write(io.zth_filename(key[0], key[1]), io.zth_csv(r, prov))
    st.write("heat_summary.json", io.dump_json({"rth_K_per_W": {k: r.rth for k, r in resp.items()}}, prov))
    return resp


def stage_assemble(resp, cfg_ga: dict | None, deconv: dict | None, seed: int, prov, st: io.StagedOutput):
    dcfg = _build(nid.DeconvConfig, deconv, "deconv")
    ga = _build(GaConfig, {**(cfg_ga or {}), "seed": seed}, "ga")
    orders = {}
    for key, r in resp.items():
        spec, report = nid.spectrum_from_response(r, dcfg)
        orders[key] = max(report.order, 1)
        st.write(f"spectrum_{key}.csv", io.spectrum_csv(spec, prov))
        st.write(f"order_{key}.json", io.dump_json(report.to_dict(), prov))
    model = xnet.assemble(resp, orders, ga, dcfg)
    st.write("pair_model.json", io.dump_json(model.to_dict(), prov))
    return model


def _metrics_rows(rows):
    return [[r.as_record()[c] for c in scenario.METRIC_COLUMNS] for r in rows]


# ------------------------------------------------------------------ commands


def cmd_geom_build(a, out):
    cfg, h = load_project(a.config)
    prov = io.provenance(h, cfg.get("seed"))
    with io.StagedOutput(out) as st:
        stage_geom(cfg, prov, st)


def cmd_heat_respond(a, out):
    cfg, h = load_project(a.config)
    prov = io.provenance(h, cfg.get("seed"))
    _, grid = _grid(cfg)
    with io.StagedOutput(out) as st:
        stage_heat(cfg, grid, prov, st)


def cmd_nid_spectrum(a, out):
    raw = Path(a.zth).read_bytes()
    resp = io.read_zth_csv(a.zth)
    prov = io.provenance(io.config_hash(raw), None)
    spec, report = nid.spectrum_from_response(resp)
    stem = Path(a.zth).stem
    with io.StagedOutput(out) as st:
        st.write(f"spectrum_{stem}.csv", io.spectrum_csv(spec, prov))
        st.write(f"order_{stem}.json", io.dump_json(report.to_dict(), prov))


def cmd_fit_foster(a, out):
    raw = Path(a.zth).read_bytes()
    resp = io.read_zth_csv(a.zth)
    prov = io.provenance(io.config_hash(raw, {"order": a.order}), a.seed)
    order = a.order if a.order else max(nid.spectrum_from_response(resp)[1].order, 1)
    fit = ga_fit(resp, order, GaConfig(seed=a.seed))
    with io.StagedOutput(out) as st:
        st.write(f"foster_{Path(a.zth).stem}.json", io.dump_json(fit.to_dict(), prov))


def _responses_from_csvs(paths) -> dict[str, heatsolve.ThermalStepResponse]:
    if len(paths) != 4:
        raise ConfigError("xnet assemble needs exactly four Zth CSVs")
    resp = {}
    for pos, p in enumerate(paths):
        r = io.read_zth_csv(p)
        key = r.heater + r.monitor
        if key not in xnet.LADDERS or key in resp:
            key = xnet.LADDERS[pos]  # fall back to nn, np, pn, pp order
        resp[key] = r
    return resp


def cmd_xnet_assemble(a, out):
    raws = [Path(p).read_bytes() for p in a.zth]
    resp = _responses_from_csvs(a.zth)
    prov = io.provenance(io.config_hash(*raws), a.seed)
    with io.StagedOutput(out) as st:
        stage_assemble(resp, None, None, a.seed, prov, st)


def cmd_xnet_rho(a, out):
    d, raw = _read_json(a.model)
    model = xnet.DevicePairThermalModel.from_dict(d)
    p_n = a.p_n if a.p_n is not None else compact.TARGET_ON_POWER[(a.flavor, "n")]
    p_p = a.p_p if a.p_p is not None else compact.TARGET_ON_POWER[(a.flavor, "p")]
    rep = xnet.crosstalk_report(model.steady_rth(), p_n, p_p)
    prov = io.provenance(io.config_hash(raw, {"p_n": p_n, "p_p": p_p}), None)
    with io.StagedOutput(out) as st:
        st.write("crosstalk.json", io.dump_json(rep.to_dict(), prov))


def cmd_extract(a, out):
    raw = Path(a.iv).read_bytes()
    curves = compact.IvCurveSet.read_csv(a.iv)
    polarity = compact.Polarity(a.polarity)
    prov = io.provenance(io.config_hash(raw, vars_for_hash(a)), None)
    if a.mode == "iso":
        iso_rows = curves.isothermal()
        card = compact.extract_isothermal(iso_rows, polarity)
        rmse = compact.fit_rmse(card, iso_rows)
        shmod = 0
    else:
        if a.card:
            card, _ = compact.load_card(a.card)
        else:
            card = compact.extract_isothermal(curves.isothermal(), polarity)
        if not a.pair_model:
            raise ConfigError("extract she needs --pair-model for the self thermal resistance")
        model = xnet.DevicePairThermalModel.load(a.pair_model)
        rth = model.steady_rth()["nn" if polarity is compact.Polarity.NFET else "pp"]
        card = compact.extract_thermal(curves, card, rth)
        rmse = compact.fit_rmse(card, curves.she(), rth)
        shmod = 1
    payload = {**card.to_dict(shmod), "fit_rmse": rmse}
    with io.StagedOutput(out) as st:
        st.write(f"card_{a.mode}_{Path(a.iv).stem}.json", io.dump_json(payload, prov))


def vars_for_hash(a) -> dict:
    return {k: v for k, v in sorted(vars(a).items()) if k not in ("func", "out") and not callable(v)}


def _sim_net(kind: str, spec: dict):
    flavor = spec.get("flavor", "nsfet")
    cards = None
    if "cards" in spec:
        cards = {r: compact.load_card(p)[0] for r, p in spec["cards"].items()}
    c = float(spec.get("c_load_fF", 20.0)) * 1e-15
    if kind == "ro":
        net = cellmod.ring_oscillator(int(spec.get("stages", 9)), c, flavor, cards)
        t_stop = scenario.RO_PERIODS * scenario.estimated_ro_period(net.meta["stages"], c, flavor)
    else:
        drive = cellmod.Drive(period=spec.get("period", 10e-9), periods=spec.get("periods", 3),
                              toggle=spec.get("toggle", "a"), static=spec.get("static", {}))
        net = cellmod.cell(spec.get("cell", "INV"), c, drive, flavor, cards)
        t_stop = drive.t_stop
    return net, flavor, t_stop


def cmd_sim(a, out):
    spec, raw = _read_json(a.spec)
    prov = io.provenance(io.config_hash(raw), spec.get("seed"))
    if a.kind == "sweep":
        sweep = {k: v for k, v in spec.items() if k not in ("pair_models", "seed")}
        sspec = scenario.ScenarioSpec.from_dict(sweep)
        rows = scenario.scenario_run(sspec, _thermal_models(spec, sspec.flavors) if 1 in sspec.shmods else {})
        with io.StagedOutput(out) as st:
            st.write("metrics.csv", io.dump_csv(scenario.METRIC_COLUMNS, _metrics_rows(rows), prov))
        return
    net, flavor, t_stop = _sim_net(a.kind, spec)
    shmods = spec.get("shmods", [0, 1])
    thermal = _thermal_models(spec, [flavor]) if 1 in shmods else None
    dt = spec.get("dt", 1e-13)
    rows, results = [], {}
    for sh in shmods:
        res = engine.tran(net, engine.SimOptions(shmod=sh, t_stop=t_stop, dt=dt), thermal)
        results[sh] = res
        rows.append(scenario.MetricsRow(net.meta["cell"], flavor, float(spec.get("c_load_fF", 20.0)),
                                        net.meta.get("stages", 0), sh, metrics.measure(res)))
    cold = {r.shmod: r.metrics for r in rows}
    for r in rows:
        if r.shmod == 1 and 0 in cold:
            r.metrics.delta_pct = metrics.delta_pct(r.metrics, cold[0])
        elif r.shmod == 0:
            r.metrics.delta_pct = {k: 0.0 for k in r.metrics.values()}
    with io.StagedOutput(out) as st:
        st.write("netlist.json", io.dump_json(net.to_dict(), prov))
        for sh, res in results.items():
            st.write(f"waveforms_shmod{sh}.csv", io.waveforms_csv(res, prov, WAVEFORM_EVERY))
        st.write("metrics.csv", io.dump_csv(scenario.METRIC_COLUMNS, _metrics_rows(rows), prov))


# ------------------------------------------------------------------ report


def read_metrics_csv(path) -> list[dict]:
    header, rows = io.read_csv_rows(path)
    if tuple(header) != scenario.METRIC_COLUMNS:
        raise ConfigError(f"{path}: not a metrics CSV")
    out = []
    for r in rows:
        rec = dict(zip(header, r))
        for k in header:
            if k in ("cell", "flavor"):
                continue
            rec[k] = float(rec[k]) if rec[k] != "" else math.nan
        rec["stages"] = int(rec["stages"])
        rec["shmod"] = int(rec["shmod"])
        out.append(rec)
    return out


COMPARE_COLUMNS = ("cell", "c_load_fF", "stages", "metric", "flavor", "shmod0", "shmod1", "delta_pct")


def compare_table(records: list[dict]) -> list[list]:
    """Side-by-side shmod 0/1 values for every (cell, load, stages, flavor)."""
    index = {}
    for r in records:
        index[(r["cell"], r["c_load_fF"], r["stages"], r["flavor"], r["shmod"])] = r
    keys = sorted({k[:4] for k in index}, key=lambda k: (k[0], k[2], k[1], k[3]))
    rows = []
    for cell, load, stages, flavor in keys:
        cold = index.get((cell, load, stages, flavor, 0))
        hot = index.get((cell, load, stages, flavor, 1))
        metrics = ("ro_freq_Hz",) if cell == "RO" else ("t_p_s", "t_r_s", "t_f_s")
        for m in metrics:
            a = cold[m] if cold else math.nan
            b = hot[m] if hot else math.nan
            d = 100.0 * (b - a) / a if cold and hot and a else math.nan
            rows.append([cell, load, stages, m, flavor, a, b, d])
    return rows


def render_figures(records: list[dict], fmt: str) -> dict[str, bytes]:
    """Delay vs load, edge-time sensitivity and RO frequency change figures."""
    import io as _io

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "xtherm"
    meta = {"Date": None} if fmt == "svg" else {"Software": None}
    table = compare_table(records)
    figs = {}

    def save(fig, name):
        buf = _io.BytesIO()
        fig.savefig(buf, format=fmt, metadata=meta)
        plt.close(fig)
        figs[f"{name}.{fmt}"] = buf.getvalue()

    inv = [r for r in table if r[0] == "INV" and r[3] == "t_p_s"]
    if inv:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for flavor in sorted({r[4] for r in inv}):
            rs = sorted((r for r in inv if r[4] == flavor), key=lambda r: r[1])
            x = [r[1] for r in rs]
            ax.plot(x, [r[5] * 1e12 for r in rs], "o--", label=f"{flavor} SHE off")
            ax.plot(x, [r[6] * 1e12 for r in rs], "s-", label=f"{flavor} SHE on")
        ax.set_xlabel("C_L (fF)")
        ax.set_ylabel("t_p (ps)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        save(fig, "inverter_delay")

    edges = [r for r in table if r[0] in ("NAND2", "NOR2") and r[3] in ("t_r_s", "t_f_s")]
    if edges:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        groups = sorted({(r[0], r[4]) for r in edges})
        width = 0.38
        for k, metric in enumerate(("t_r_s", "t_f_s")):
            vals = []
            for cell, flavor in groups:
                d = [r[7] for r in edges if (r[0], r[4]) == (cell, flavor) and r[3] == metric]
                vals.append(float(np.nanmax(d)) if d else math.nan)
            ax.bar(np.arange(len(groups)) + (k - 0.5) * width, vals, width, label=metric[:3])
        ax.set_xticks(np.arange(len(groups)), [f"{c}\n{f}" for c, f in groups], fontsize=7)
        ax.set_ylabel("SHE change at largest C_L (%)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        save(fig, "edge_sensitivity")

    ro = [r for r in table if r[0] == "RO"]
    if ro:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for flavor in sorted({r[4] for r in ro}):
            rs = sorted((r for r in ro if r[4] == flavor), key=lambda r: r[2])
            ax.plot([r[2] for r in rs], [-r[7] for r in rs], "o-", label=flavor)
        ax.set_xlabel("stages")
        ax.set_ylabel("frequency drop under SHE (%)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        save(fig, "ro_frequency")
    return figs


def cmd_report_compare(a, out):
    if a.metrics:
        raw = Path(a.metrics).read_bytes()
        records = read_metrics_csv(a.metrics)
    else:
        spec_path = a.spec or DATA / "sweep_full.json"
        spec, raw = _read_json(spec_path)
        sweep = {k: v for k, v in spec.items() if k not in ("pair_models", "seed")}
        sspec = scenario.ScenarioSpec.from_dict(sweep)
        rows = scenario.scenario_run(sspec, _thermal_models(spec, sspec.flavors))
        records = [r.as_record() for r in rows]
    prov = io.provenance(io.config_hash(raw), None)
    fmt = "svg" if a.svg else "png"
    with io.StagedOutput(out) as st:
        if not a.metrics:
            st.write("metrics.csv", io.dump_csv(scenario.METRIC_COLUMNS,
                                                [[r[c] for c in scenario.METRIC_COLUMNS] for r in records], prov))
        st.write("compare.csv", io.dump_csv(COMPARE_COLUMNS, compare_table(records), prov))
        for name, data in render_figures(records, fmt).items():
            st.write(name, data)


# ------------------------------------------------------------------ pipeline


def cmd_pipeline(a, out):
    """geometry -> heat -> NID -> GA -> pair model -> crosstalk -> circuit sweep."""
    cfg, h = load_project(a.config)
    seed = int(cfg.get("seed", 0))
    prov = io.provenance(h, seed)
    flavor = cfg.get("flavor", "nsfet")
    with io.StagedOutput(out) as st:
        grid = stage_geom(cfg, prov, st)
        resp = stage_heat(cfg, grid, prov, st)
        model = stage_assemble(resp, cfg.get("ga"), cfg.get("deconv"), seed + SEED_OFFSETS["assemble"], prov, st)
        powers = cfg.get("powers_W", {"n": compact.TARGET_ON_POWER[(flavor, "n")],
                                      "p": compact.TARGET_ON_POWER[(flavor, "p")]})
        rep = xnet.crosstalk_report(model.steady_rth(), powers["n"], powers["p"])
        st.write("crosstalk.json", io.dump_json(rep.to_dict(), prov))
        sspec = scenario.ScenarioSpec.from_dict({"flavors": [flavor], **cfg.get("scenario", {})})
        rows = scenario.scenario_run(sspec, {flavor: model})
        st.write("metrics.csv", io.dump_csv(scenario.METRIC_COLUMNS, _metrics_rows(rows), prov))


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xtherm", description=__doc__.splitlines()[0])
    p.add_argument("--out", help=f"output directory (else ${io.OUT_ENV}, config output_dir, ./xtherm_out)")
    sub = p.add_subparsers(dest="group", required=True)

    g = sub.add_parser("geom").add_subparsers(dest="action", required=True)
    b = g.add_parser("build", help="scene and voxel-grid summary")
    b.add_argument("config")
    b.set_defaults(func=cmd_geom_build)

    h = sub.add_parser("heat").add_subparsers(dest="action", required=True)
    b = h.add_parser("respond", help="four Zth step-response CSVs")
    b.add_argument("config")
    b.set_defaults(func=cmd_heat_respond)

    n = sub.add_parser("nid").add_subparsers(dest="action", required=True)
    b = n.add_parser("spectrum", help="time-constant spectrum and order")
    b.add_argument("zth")
    b.set_defaults(func=cmd_nid_spectrum)

    f = sub.add_parser("fit").add_subparsers(dest="action", required=True)
    b = f.add_parser("foster", help="GA Foster fit of one Zth CSV")
    b.add_argument("zth")
    b.add_argument("--order", type=int, default=0, help="stages (default: spectrum peak count)")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_fit_foster)

    x = sub.add_parser("xnet").add_subparsers(dest="action", required=True)
    b = x.add_parser("assemble", help="pair model from nn, np, pn, pp Zth CSVs")
    b.add_argument("zth", nargs="+")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_xnet_assemble)
    b = x.add_parser("rho", help="steady crosstalk report of a pair model")
    b.add_argument("model")
    b.add_argument("--flavor", choices=compact.FLAVORS, default="nsfet", help="default powers")
    b.add_argument("--p-n", type=float, help="NFET power, W")
    b.add_argument("--p-p", type=float, help="PFET power, W")
    b.set_defaults(func=cmd_xnet_rho)

    e = sub.add_parser("extract")
    e.add_argument("mode", choices=("iso", "she"))
    e.add_argument("iv")
    e.add_argument("--polarity", choices=("NFET", "PFET"), default="NFET")
    e.add_argument("--card", help="isothermal card for the she phase")
    e.add_argument("--pair-model", help="pair model JSON supplying the self Rth")
    e.set_defaults(func=cmd_extract)

    s = sub.add_parser("sim")
    s.add_argument("kind", choices=("cell", "ro", "sweep"))
    s.add_argument("spec")
    s.set_defaults(func=cmd_sim)

    r = sub.add_parser("report").add_subparsers(dest="action", required=True)
    b = r.add_parser("compare", help="NSFET/CFET, SHE off/on comparison table and figures")
    b.add_argument("--metrics", help="existing metrics CSV (default: run the sweep)")
    b.add_argument("--spec", help="sweep spec JSON (default: bundled full sweep)")
    b.add_argument("--svg", action="store_true", help="write figures as SVG instead of PNG")
    b.set_defaults(func=cmd_report_compare)

    pl = sub.add_parser("pipeline", help="run every stage for one project config")
    pl.add_argument("config")
    pl.set_defaults(func=cmd_pipeline)
    return p


def _config_out_dir(args) -> str | None:
    path = getattr(args, "config", None)
    try:
        return json.loads(Path(path).read_text()).get("output_dir") if path else None
    except (OSError, ValueError, AttributeError):
        return None  # the command itself reports the bad config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = io.resolve_out_dir(args.out, _config_out_dir(args))
    try:
        args.func(args, out)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one stderr line
        code = exit_code(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"xtherm: error code={code} kind={type(exc).__name__} msg={msg}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
