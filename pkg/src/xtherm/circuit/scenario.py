"""Sweeps over cells, loads, flavors and the SHE switch."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

from ..compact import V_DD, default_card, ids
from ..xnet import DevicePairThermalModel
from .cells import CELLS, Drive, cell, ring_oscillator
from .engine import SimOptions, TranResult, tran
from .metrics import Metrics, delta_pct, measure

METRIC_COLUMNS = ("cell", "flavor", "c_load_fF", "stages", "shmod", "t_p_s", "t_r_s", "t_f_s",
                  "ro_freq_Hz", "dT_n_K", "dT_p_K", "delta_pct")
RO_PERIODS = 50


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    cells: tuple[str, ...] = ("INV",)
    loads_fF: tuple[float, ...] = (2.0, 5.0, 10.0, 20.0)
    flavors: tuple[str, ...] = ("nsfet", "cfet")
    shmods: tuple[int, ...] = (0, 1)
    ro_stages: tuple[int, ...] = ()
    ro_load_fF: float = 20.0
    dt: float = 1e-13
    period: float = 10e-9
    periods: int = 3

    def __post_init__(self):
        for name in self.cells:
            if name not in CELLS:
                raise ScenarioError(f"unknown cell {name!r}")
        for s in self.shmods:
            if s not in (0, 1):
                raise ScenarioError("shmod values must be 0 or 1")
        for n in self.ro_stages:
            if n < 3 or n % 2 == 0:
                raise ScenarioError(f"ring oscillator stage count must be odd and >= 3, got {n}")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def jobs(self) -> list[tuple]:
        out = []
        for flavor in self.flavors:
            for name in self.cells:
                for load in self.loads_fF:
                    for sh in self.shmods:
                        out.append((name, flavor, float(load), 0, sh))
            for n in self.ro_stages:
                for sh in self.shmods:
                    out.append(("RO", flavor, float(self.ro_load_fF), n, sh))
        return out


@dataclass
class MetricsRow:
    cell: str
    flavor: str
    c_load_fF: float
    stages: int
    shmod: int
    metrics: Metrics = field(repr=False)

    @property
    def key(self) -> tuple:
        return (self.cell, self.flavor, self.c_load_fF, self.stages)

    def as_record(self) -> dict:
        m = self.metrics
        primary = "ro_freq" if self.cell == "RO" else "t_p"
        return {
            "cell": self.cell,
            "flavor": self.flavor,
            "c_load_fF": self.c_load_fF,
            "stages": self.stages,
            "shmod": self.shmod,
            "t_p_s": m.t_p,
            "t_r_s": m.t_r,
            "t_f_s": m.t_f,
            "ro_freq_Hz": m.ro_freq,
            "dT_n_K": m.dT_n,
            "dT_p_K": m.dT_p,
            "delta_pct": m.delta_pct.get(primary, math.nan),
        }


def estimated_ro_period(stages: int, c_load: float, flavor: str, v_dd: float = V_DD) -> float:
    """Rough period ``2 N * 1.3 C V / I_on`` used only to size the run length."""
    i_on = 0.5 * sum(
        abs(ids(default_card(flavor, r), s * v_dd, s * v_dd, 300.0)) for r, s in (("n", 1), ("p", -1))
    )
    return 2 * stages * 1.3 * c_load * v_dd / i_on


def run_job(job: tuple, spec: ScenarioSpec, thermal: dict[str, DevicePairThermalModel],
            keep_waveforms: bool = False) -> tuple[MetricsRow, TranResult | None]:
    name, flavor, load, stages, sh = job
    c = load * 1e-15
    if name == "RO":
        net = ring_oscillator(stages, c, flavor)
        t_stop = RO_PERIODS * estimated_ro_period(stages, c, flavor)
    else:
        drive = Drive(period=spec.period, periods=spec.periods)
        net = cell(name, c, drive, flavor)
        t_stop = drive.t_stop
    res = tran(net, SimOptions(shmod=sh, t_stop=t_stop, dt=spec.dt), thermal)
    row = MetricsRow(name, flavor, load, stages, sh, measure(res))
    return row, (res if keep_waveforms else None)


def _worker(args):
    job, spec, thermal = args
    return run_job(job, spec, thermal)[0]


def scenario_run(spec: ScenarioSpec, thermal: dict[str, DevicePairThermalModel],
                 workers: int = 1) -> list[MetricsRow]:
    """Run every job of ``spec`` and attach SHE deltas to the shmod=1 rows.

    Rows come back in job order whatever the completion order.
    """
    jobs = spec.jobs()
    if not jobs:
        return []
    if 1 in spec.shmods:
        missing = sorted({f for f in spec.flavors if f not in thermal})
        if missing:
            raise ScenarioError(f"no thermal model for flavor(s) {missing}")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_worker, [(j, spec, thermal) for j in jobs]))
    else:
        rows = [run_job(j, spec, thermal)[0] for j in jobs]
    cold = {r.key: r.metrics for r in rows if r.shmod == 0}
    for r in rows:
        if r.shmod == 1 and r.key in cold:
            r.metrics.delta_pct = delta_pct(r.metrics, cold[r.key])
        elif r.shmod == 0:
            r.metrics.delta_pct = {k: 0.0 for k in r.metrics.values()}
    return rows


def load_spec(path) -> ScenarioSpec:
    with open(path) as fh:
        return ScenarioSpec.from_dict(json.load(fh))
