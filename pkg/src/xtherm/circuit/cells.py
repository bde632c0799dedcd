"""Transistor-level standard cells and ring oscillators."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..compact import V_DD, CompactModelParams, default_card
from .netlist import GROUND, Capacitor, Mosfet, Netlist, VSource

CELLS = ("INV", "TG", "NAND2", "NOR2", "XOR2", "XNOR2")

# level of the held input that lets the toggled input through
_NON_CONTROLLING = {"NAND2": 1, "NOR2": 0, "XOR2": 0, "XNOR2": 0}


class CellError(ValueError):
    pass


@dataclass(frozen=True)
class Drive:
    """Square-wave stimulus on ``toggle``; other inputs held at logic ``static`` levels.

    Rising edges sit at a quarter period, falling edges at three quarters.
    """

    period: float = 10e-9
    edge: float = 1e-12
    periods: int = 3
    toggle: str = "a"
    static: dict[str, int] = field(default_factory=dict)
    v_dd: float = V_DD

    @property
    def t_stop(self) -> float:
        return self.periods * self.period

    def pwl(self) -> tuple[tuple[float, float], ...]:
        pts = [(0.0, 0.0)]
        for k in range(self.periods):
            t0 = k * self.period
            for start, lo, hi in ((0.25, 0.0, self.v_dd), (0.75, self.v_dd, 0.0)):
                ts = t0 + start * self.period
                pts += [(ts, lo), (ts + self.edge, hi)]
        return tuple(pts)


def _cards(flavor: str, cards: dict[str, CompactModelParams] | None) -> dict[str, CompactModelParams]:
    if cards is not None:
        return dict(cards)
    return {"n": default_card(flavor, "n"), "p": default_card(flavor, "p")}


def _base(name: str, flavor: str, cards, v_dd: float) -> Netlist:
    net = Netlist(name, cards=_cards(flavor, cards))
    net.sources.append(VSource("VDD", "vdd", ((0.0, v_dd),)))
    return net


def _inv(net: Netlist, tag: str, inp: str, out: str, pair: str, flavor: str) -> None:
    net.mosfets.append(Mosfet(f"MN_{tag}", out, inp, GROUND, "n", pair, "n"))
    net.mosfets.append(Mosfet(f"MP_{tag}", out, inp, "vdd", "p", pair, "p"))
    net.pair_models[pair] = flavor


def cell(name: str, c_load: float, drive: Drive | None = None, flavor: str = "nsfet",
         cards: dict[str, CompactModelParams] | None = None) -> Netlist:
    """Build a loaded cell driven by PWL inputs.

    Every N/P pair that shares gate inputs forms one thermal pair.  Series
    stacks keep one pair per input, all using the flavor's pair model.
    """
    if name not in CELLS:
        raise CellError(f"unknown cell {name!r}; choose from {', '.join(CELLS)}")
    drive = drive or Drive()
    v_dd = drive.v_dd
    net = _base(name, flavor, cards, v_dd)
    inputs = ["a"] if name in ("INV", "TG") else ["a", "b"]
    if drive.toggle not in inputs:
        raise CellError(f"cell {name} has no input {drive.toggle!r}")
    for inp in inputs:
        if inp == drive.toggle:
            net.sources.append(VSource(f"V{inp.upper()}", inp, drive.pwl()))
        else:
            level = drive.static.get(inp, _NON_CONTROLLING.get(name, 0))
            net.sources.append(VSource(f"V{inp.upper()}", inp, ((0.0, level * v_dd),)))

    M = net.mosfets.append
    if name == "INV":
        _inv(net, "a", "a", "out", "a", flavor)
    elif name == "TG":
        # driving inverter, then an always-on transmission gate
        _inv(net, "drv", "a", "x", "drv", flavor)
        net.sources.append(VSource("VEN", "en", ((0.0, v_dd),)))
        net.sources.append(VSource("VENB", "enb", ((0.0, 0.0),)))
        M(Mosfet("MN_tg", "out", "en", "x", "n", "tg", "n"))
        M(Mosfet("MP_tg", "out", "enb", "x", "p", "tg", "p"))
        net.pair_models["tg"] = flavor
    elif name == "NAND2":
        M(Mosfet("MN_a", "out", "a", "m", "n", "a", "n"))
        M(Mosfet("MN_b", "m", "b", GROUND, "n", "b", "n"))
        M(Mosfet("MP_a", "out", "a", "vdd", "p", "a", "p"))
        M(Mosfet("MP_b", "out", "b", "vdd", "p", "b", "p"))
        net.pair_models.update(a=flavor, b=flavor)
    elif name == "NOR2":
        M(Mosfet("MN_a", "out", "a", GROUND, "n", "a", "n"))
        M(Mosfet("MN_b", "out", "b", GROUND, "n", "b", "n"))
        M(Mosfet("MP_a", "out", "a", "m", "p", "a", "p"))
        M(Mosfet("MP_b", "m", "b", "vdd", "p", "b", "p"))
        net.pair_models.update(a=flavor, b=flavor)
    else:
        _inv(net, "ia", "a", "an", "ia", flavor)
        _inv(net, "ib", "b", "bn", "ib", flavor)
        if name == "XOR2":
            # pull-down conducts for a=b, pull-up for a!=b
            pdn = (("a", "b"), ("an", "bn"))
            pun = (("an", "b"), ("a", "bn"))
        else:
            pdn = (("a", "bn"), ("an", "b"))
            pun = (("a", "b"), ("an", "bn"))
        for k, (g1, g2) in enumerate(pdn):
            M(Mosfet(f"MN_{k}t", "out", g1, f"mn{k}", "n", f"c{k}", "n"))
            M(Mosfet(f"MN_{k}b", f"mn{k}", g2, GROUND, "n", f"c{k + 2}", "n"))
        for k, (g1, g2) in enumerate(pun):
            M(Mosfet(f"MP_{k}t", f"mp{k}", g1, "vdd", "p", f"c{k}", "p"))
            M(Mosfet(f"MP_{k}b", "out", g2, f"mp{k}", "p", f"c{k + 2}", "p"))
        for k in range(4):
            net.pair_models[f"c{k}"] = flavor
    net.capacitors.append(Capacitor("CL", "out", GROUND, c_load))
    net.meta = {"cell": name, "flavor": flavor, "input": drive.toggle, "output": "out",
                "v_dd": v_dd, "period": drive.period, "t_stop": drive.t_stop, "c_load": c_load}
    net.validate()
    return net


def static_cell(name: str, levels: dict[str, int], flavor: str = "nsfet",
                cards: dict[str, CompactModelParams] | None = None, v_dd: float = V_DD) -> Netlist:
    """Cell with every input held at a logic level, for DC truth tables."""
    inputs = ["a"] if name in ("INV", "TG") else ["a", "b"]
    drive = Drive(toggle=inputs[0], static=levels, v_dd=v_dd)
    net = cell(name, 1e-15, drive, flavor, cards)
    for k, v in enumerate(net.sources):
        if v.node in levels:
            net.sources[k] = VSource(v.name, v.node, ((0.0, levels[v.node] * v_dd),))
    return net


def ring_oscillator(stages: int, c_per_stage: float, flavor: str = "nsfet",
                    cards: dict[str, CompactModelParams] | None = None, v_dd: float = V_DD,
                    kick: float = 0.1) -> Netlist:
    """Odd ring of loaded inverters started by a voltage offset on node ``n1``."""
    if stages < 3 or stages % 2 == 0:
        raise CellError(f"ring oscillator needs an odd stage count >= 3, got {stages}")
    net = _base(f"RO{stages}", flavor, cards, v_dd)
    for k in range(1, stages + 1):
        nxt = k % stages + 1
        _inv(net, f"s{k}", f"n{k}", f"n{nxt}", f"s{k}", flavor)
        net.capacitors.append(Capacitor(f"C{nxt}", f"n{nxt}", GROUND, c_per_stage))
    net.initial = {"n1": kick * v_dd}
    net.meta = {"cell": "RO", "flavor": flavor, "stages": stages, "output": "n1", "v_dd": v_dd,
                "c_load": c_per_stage}
    net.validate()
    return net
