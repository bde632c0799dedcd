"""Electro-thermal transient circuit simulation."""

from .cells import CELLS, CellError, Drive, cell, ring_oscillator, static_cell
from .engine import ConvergenceError, SimOptions, TranResult, dc_op, tran
from .metrics import MeasureError, Metrics, delta_pct, measure
from .netlist import Capacitor, Mosfet, Netlist, NetlistError, Resistor, VSource
from .scenario import METRIC_COLUMNS, MetricsRow, ScenarioSpec, scenario_run

__all__ = [
    "CELLS", "CellError", "Drive", "cell", "ring_oscillator", "static_cell",
    "ConvergenceError", "SimOptions", "TranResult", "dc_op", "tran",
    "MeasureError", "Metrics", "delta_pct", "measure",
    "Capacitor", "Mosfet", "Netlist", "NetlistError", "Resistor", "VSource",
    "METRIC_COLUMNS", "MetricsRow", "ScenarioSpec", "scenario_run",
]
