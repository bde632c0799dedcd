import json
import math

import numpy as np
import pytest

from xtherm.circuit import (
    CELLS,
    Capacitor,
    CellError,
    ConvergenceError,
    Drive,
    MeasureError,
    Mosfet,
    Netlist,
    NetlistError,
    Resistor,
    ScenarioSpec,
    SimOptions,
    VSource,
    cell,
    dc_op,
    measure,
    ring_oscillator,
    scenario_run,
    static_cell,
    tran,
)
from xtherm.circuit.cells import _base, _inv
from xtherm.circuit.metrics import crossings, edge_time, oscillation_period, propagation
from xtherm.circuit.scenario import ScenarioError, estimated_ro_period
from xtherm.compact import V_DD, default_card
from xtherm.fosterfit import FosterNetwork
from xtherm.xnet import DevicePairThermalModel

TRUTH = {
    "INV": lambda a: not a,
    "TG": lambda a: not a,  # driving inverter, then the pass gate
    "NAND2": lambda a, b: not (a and b),
    "NOR2": lambda a, b: not (a or b),
    "XOR2": lambda a, b: a != b,
    "XNOR2": lambda a, b: a == b,
}
EMPTY = FosterNetwork(())
ZERO_MODEL = DevicePairThermalModel(EMPTY, EMPTY, EMPTY, EMPTY)


def inverter_chain(stages, c_load, flavor, drive):
    """Loaded inverter chain; stage k drives node n{k+1}."""
    net = _base("chain", flavor, None, drive.v_dd)
    net.sources.append(VSource("VA", "n0", drive.pwl()))
    for k in range(stages):
        _inv(net, f"s{k}", f"n{k}", f"n{k + 1}", f"s{k}", flavor)
        net.capacitors.append(Capacitor(f"C{k + 1}", f"n{k + 1}", "0", c_load))
    net.meta = {"cell": "chain", "flavor": flavor, "v_dd": drive.v_dd}
    net.validate()
    return net


# ------------------------------------------------------------------ engine


def test_rc_charging_matches_analytic():
    r, c, edge = 10e3, 10e-15, 1e-12
    net = Netlist("rc", resistors=[Resistor("R1", "in", "out", r)],
                  capacitors=[Capacitor("C1", "out", "0", c)],
                  sources=[VSource("V1", "in", ((0.0, 0.0), (edge, V_DD)))])
    res = tran(net, SimOptions(shmod=0, t_stop=5 * r * c, dt=1e-13))
    t = res.time
    tau = r * c
    # exact response to a ramp of length ``edge`` followed by a hold
    ramp = V_DD / edge * (t - tau * (1 - np.exp(-t / tau)))
    hold = V_DD * (1 - tau / edge * (np.exp(edge / tau) - 1) * np.exp(-t / tau))
    exact = np.where(t <= edge, ramp, hold)
    late = t > 0.05 * tau
    assert np.max(np.abs(res.v("out")[late] - exact[late]) / exact[late]) < 0.005


@pytest.mark.parametrize("name", CELLS)
@pytest.mark.parametrize("flavor", ["nsfet", "cfet"])
def test_truth_tables_at_dc(name, flavor):
    inputs = ["a"] if name in ("INV", "TG") else ["a", "b"]
    for bits in np.ndindex(*(2,) * len(inputs)):
        levels = dict(zip(inputs, (int(b) for b in bits)))
        v = dc_op(static_cell(name, levels, flavor))["out"]
        want = TRUTH[name](*(bool(b) for b in bits))
        assert (v > V_DD / 2) == want, (name, levels, v)
        assert (v > 0.9 * V_DD) if want else (v < 0.1 * V_DD)


def test_nand2_structure():
    net = cell("NAND2", 1e-15)
    pmos = [m for m in net.mosfets if m.role == "p"]
    nmos = [m for m in net.mosfets if m.role == "n"]
    # parallel pull-up: both PFETs between vdd and out
    assert all({m.s, m.d} == {"vdd", "out"} for m in pmos)
    # series pull-down: out -> internal node -> ground
    nodes = [{m.d, m.s} for m in nmos]
    assert {"out", "m"} in nodes and {"m", "0"} in nodes
    assert sorted(m.g for m in pmos) == sorted(m.g for m in nmos) == ["a", "b"]


@pytest.mark.parametrize("name, count", [("INV", 2), ("TG", 4), ("NAND2", 4), ("NOR2", 4),
                                         ("XOR2", 12), ("XNOR2", 12)])
def test_cell_transistor_counts(name, count):
    net = cell(name, 1e-15)
    assert len(net.mosfets) == count
    assert {m.card for m in net.mosfets} <= {"n", "p"}


def test_cell_drive_shape():
    net = cell("INV", 2e-15)
    src = {v.name: v for v in net.sources}["VA"]
    d = Drive()
    assert src.value(0.25 * d.period + d.edge) == pytest.approx(V_DD)
    assert src.value(0.75 * d.period + d.edge) == pytest.approx(0.0)
    assert d.edge == 1e-12 and d.period == 10e-9


def test_unknown_cell_rejected():
    with pytest.raises(CellError):
        cell("AOI21", 1e-15)
    with pytest.raises(CellError):
        cell("INV", 1e-15, Drive(toggle="b"))


def test_netlist_validation():
    cards = {"n": default_card("nsfet", "n")}
    with pytest.raises(NetlistError, match="unknown card"):
        Netlist("x", mosfets=[Mosfet("M1", "d", "g", "0", "zz")], cards=cards,
                sources=[VSource("V", "g", ((0, 0.7),))]).validate()
    with pytest.raises(NetlistError, match="not reachable"):
        Netlist("x", capacitors=[Capacitor("C", "a", "b", 1e-15)],
                sources=[VSource("V", "c", ((0, 0.7),))]).validate()
    with pytest.raises(NetlistError, match="thermal model"):
        Netlist("x", mosfets=[Mosfet("M1", "d", "g", "0", "n", "pair0")], cards=cards,
                sources=[VSource("V", "g", ((0, 0.7),))]).validate()
    with pytest.raises(NetlistError, match="PWL"):
        Netlist("x", sources=[VSource("V", "g", ((1.0, 0.7), (0.5, 0.0)))]).validate()


def test_netlist_json_round_trip():
    net = cell("NOR2", 5e-15, flavor="cfet")
    back = Netlist.from_dict(json.loads(net.to_json()))
    assert back.mosfets == net.mosfets and back.capacitors == net.capacitors
    assert back.cards == net.cards and back.pair_models == net.pair_models


def test_inverter_dc_endpoints():
    assert dc_op(static_cell("INV", {"a": 0}))["out"] == pytest.approx(V_DD, abs=1e-3)
    assert dc_op(static_cell("INV", {"a": 1}))["out"] == pytest.approx(0.0, abs=1e-3)


def test_newton_failure_reports_time():
    net = cell("INV", 20e-15)
    with pytest.raises(ConvergenceError) as err:
        tran(net, SimOptions(shmod=0, t_stop=5e-9, max_newton=1, newton_tol_v=1e-12,
                             newton_tol_i=1e-18))
    assert err.value.time > 0
    assert "t=" in str(err.value)


def test_she_requires_thermal_model():
    with pytest.raises((KeyError, ValueError)):
        tran(cell("INV", 2e-15), SimOptions(shmod=1, t_stop=1e-9), {})


@pytest.mark.parametrize("c_load", [2e-15, 20e-15])
def test_halving_dt_changes_tp_below_1pct(c_load):
    net = cell("INV", c_load)
    a = measure(tran(net, SimOptions(shmod=0, dt=1e-13)))
    b = measure(tran(net, SimOptions(shmod=0, dt=0.5e-13)))
    assert abs(b.t_p / a.t_p - 1) < 0.01


@pytest.mark.parametrize("name", ["INV", "NAND2"])
def test_zero_ladders_make_the_she_switch_a_no_op(name):
    net = cell(name, 10e-15)
    cold = tran(net, SimOptions(shmod=0))
    hot = tran(net, SimOptions(shmod=1), {"nsfet": ZERO_MODEL})
    for node in cold.voltages:
        assert np.array_equal(cold.v(node), hot.v(node))
    for dev in cold.temperatures:
        assert np.all(hot.temperatures[dev] == 300.0)


def test_charge_conservation_on_output_node():
    cards = {r: default_card("nsfet", r) for r in ("n", "p")}
    cards = {r: type(p)(**{**p.__dict__, "c_gs": 0.0, "c_gd": 0.0}) for r, p in cards.items()}
    c_load = 10e-15
    net = cell("INV", c_load, cards=cards)
    res = tran(net, SimOptions(shmod=0))
    t, v = res.time, res.v("out")
    into_out = -(res.currents["MN_a"] + res.currents["MP_a"])
    period = net.meta["period"]
    for start in np.arange(1, 3) * period:
        for lo, hi in ((start, start + 0.5 * period), (start + 0.5 * period, start + period)):
            k0, k1 = np.searchsorted(t, [lo, hi])
            q = np.trapezoid(into_out[k0:k1 + 1], t[k0:k1 + 1])
            dq = c_load * (v[k1] - v[k0])
            assert q == pytest.approx(dq, rel=0.01)


def test_inverter_heating_grows_with_load(bundled_models):
    rise = {}
    for c in (2e-15, 20e-15):
        res = tran(cell("INV", c), SimOptions(shmod=1), bundled_models)
        temps = np.concatenate(list(res.temperatures.values()))
        assert temps.min() >= 300.0
        rise[c] = max(res.peak_rise("n"), res.peak_rise("p"))
    assert 0 < rise[2e-15] < rise[20e-15]


def test_she_slows_inverter(bundled_models):
    net = cell("INV", 20e-15)
    cold = measure(tran(net, SimOptions(shmod=0)))
    hot = measure(tran(net, SimOptions(shmod=1), bundled_models))
    assert hot.t_p > cold.t_p


# ------------------------------------------------------------------ ring oscillators


def test_three_stage_ring_oscillates():
    c = 2e-15
    net = ring_oscillator(3, c)
    res = tran(net, SimOptions(shmod=0, t_stop=10 * estimated_ro_period(3, c, "nsfet")))
    rising = crossings(res.time, res.v("n1"), V_DD / 2, 1)
    assert rising.size >= 6  # five full periods
    assert measure(res).ro_period > 0


@pytest.mark.parametrize("stages", [2, 4, 1])
def test_even_or_short_ring_rejected(stages):
    with pytest.raises(CellError):
        ring_oscillator(stages, 1e-15)


@pytest.mark.parametrize("flavor", ["nsfet", "cfet"])
def test_nine_stage_period_is_sum_of_stage_delays(flavor):
    c = 20e-15
    drive = Drive(period=4e-9, periods=3)
    chain = tran(inverter_chain(4, c, flavor, drive), SimOptions(shmod=0, t_stop=drive.t_stop))
    t = chain.time
    # third stage: driven and loaded like a ring stage
    v_in, v_out = chain.v("n2"), chain.v("n3")
    t_p = 0.5 * (propagation(t, v_in, v_out, V_DD, -1, drive.period)
                 + propagation(t, v_in, v_out, V_DD, 1, drive.period))
    ro = tran(ring_oscillator(9, c, flavor),
              SimOptions(shmod=0, t_stop=20 * estimated_ro_period(9, c, flavor)))
    assert measure(ro).ro_period == pytest.approx(2 * 9 * t_p, rel=0.15)


def test_she_lengthens_ring_period(bundled_models):
    c = 20e-15
    net = ring_oscillator(5, c, "cfet")
    opts = dict(t_stop=30 * estimated_ro_period(5, c, "cfet"))
    cold = measure(tran(net, SimOptions(shmod=0, **opts)))
    hot = measure(tran(net, SimOptions(shmod=1, **opts), bundled_models))
    assert hot.ro_period > cold.ro_period
    assert hot.ro_freq <= cold.ro_freq


# ------------------------------------------------------------------ measurement


def test_linear_ramp_rise_time():
    t = np.linspace(0, 4e-9, 40001)
    v = np.clip((t - 1e-9) / 2e-9, 0, 1) * V_DD
    assert edge_time(t, v, V_DD, 1) == pytest.approx(1.6e-9, rel=1e-6)


def test_instant_edge_rise_time_within_one_sample():
    dt = 1e-13
    t = np.arange(0, 2e-9, dt)
    v = np.where(t >= 1e-9, V_DD, 0.0)
    assert edge_time(t, v, V_DD, 1) <= dt


def test_missing_edge_raises():
    t = np.linspace(0, 1e-9, 100)
    with pytest.raises(MeasureError):
        edge_time(t, np.zeros_like(t), V_DD, 1)
    with pytest.raises(MeasureError):
        propagation(t, np.zeros_like(t), np.zeros_like(t), V_DD, 1)
    with pytest.raises(MeasureError):
        oscillation_period(t, np.zeros_like(t), V_DD)


def test_propagation_of_shifted_copy():
    t = np.linspace(0, 10e-9, 10001)
    v_in = V_DD * (np.sin(2 * math.pi * t / 2e-9) > 0)
    delay = 0.123e-9
    v_out = V_DD * (np.sin(2 * math.pi * (t - delay) / 2e-9) <= 0)
    assert propagation(t, v_in, v_out, V_DD, -1, 1e-9) == pytest.approx(delay, abs=2e-12)


# ------------------------------------------------------------------ scenarios


def test_empty_sweep_gives_empty_table():
    assert scenario_run(ScenarioSpec(cells=(), ro_stages=()), {}) == []
    assert scenario_run(ScenarioSpec(flavors=()), {}) == []


def test_scenario_spec_validation():
    with pytest.raises(ScenarioError):
        ScenarioSpec(cells=("FOO",))
    with pytest.raises(ScenarioError):
        ScenarioSpec(ro_stages=(4,))
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict({"cells": ["INV"], "bogus": 1})
    with pytest.raises(ScenarioError, match="thermal model"):
        scenario_run(ScenarioSpec(loads_fF=(2.0,), flavors=("cfet",)), {})


def test_scenario_rows_ordered_and_paired(bundled_models):
    spec = ScenarioSpec(cells=("INV",), loads_fF=(2.0, 20.0), flavors=("nsfet",))
    rows = scenario_run(spec, bundled_models)
    assert [(r.c_load_fF, r.shmod) for r in rows] == [(2.0, 0), (2.0, 1), (20.0, 0), (20.0, 1)]
    for cold, hot in zip(rows[::2], rows[1::2]):
        assert cold.as_record()["delta_pct"] == 0.0
        assert hot.as_record()["delta_pct"] == pytest.approx(100 * (hot.metrics.t_p / cold.metrics.t_p - 1))
        assert hot.metrics.t_p >= cold.metrics.t_p
    dts = [r.metrics.dT_n for r in rows if r.shmod == 1]
    assert dts[0] < dts[1]
