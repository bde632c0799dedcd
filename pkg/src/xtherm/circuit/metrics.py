"""Delay, edge-time and oscillation-period extraction from waveforms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeasureError(ValueError):
    pass


@dataclass
class Metrics:
    t_phl: float = float("nan")
    t_plh: float = float("nan")
    t_r: float = float("nan")
    t_f: float = float("nan")
    ro_period: float = float("nan")
    dT_n: float = 0.0  # peak NFET rise, K
    dT_p: float = 0.0
    delta_pct: dict[str, float] = field(default_factory=dict)

    @property
    def t_p(self) -> float:
        return 0.5 * (self.t_phl + self.t_plh)

    @property
    def ro_freq(self) -> float:
        return 1.0 / self.ro_period if self.ro_period > 0 else float("nan")

    def values(self) -> dict[str, float]:
        return {"t_phl": self.t_phl, "t_plh": self.t_plh, "t_p": self.t_p, "t_r": self.t_r,
                "t_f": self.t_f, "ro_period": self.ro_period, "ro_freq": self.ro_freq}


def crossings(t: np.ndarray, v: np.ndarray, level: float, direction: int) -> np.ndarray:
    """Linearly interpolated times where ``v`` crosses ``level`` (+1 rising, -1 falling)."""
    t = np.asarray(t, dtype=float)
    d = np.asarray(v, dtype=float) - level
    if direction > 0:
        k = np.nonzero((d[:-1] < 0) & (d[1:] >= 0))[0]
    else:
        k = np.nonzero((d[:-1] > 0) & (d[1:] <= 0))[0]
    frac = d[k] / (d[k] - d[k + 1])
    return t[k] + frac * (t[k + 1] - t[k])


def _edge_times(t, v, v_dd, direction, after):
    lo, hi = 0.1 * v_dd, 0.9 * v_dd
    first, second = (lo, hi) if direction > 0 else (hi, lo)
    starts = crossings(t, v, first, direction)
    ends = crossings(t, v, second, direction)
    out = []
    for s in starts[starts >= after]:
        later = ends[ends >= s]
        if later.size:
            out.append(later[0] - s)
    return np.array(out)


def edge_time(t, v, v_dd: float, direction: int, after: float = 0.0) -> float:
    """Mean 10%-90% rise (direction +1) or 90%-10% fall time of edges starting after ``after``."""
    e = _edge_times(t, v, v_dd, direction, after)
    if e.size == 0:
        raise MeasureError(f"no complete {'rising' if direction > 0 else 'falling'} edge found")
    return float(e.mean())


def propagation(t, v_in, v_out, v_dd: float, out_direction: int, after: float = 0.0) -> float:
    """Mean delay from each 50% input crossing to the next 50% output crossing in ``out_direction``."""
    half = 0.5 * v_dd
    t_in = np.sort(np.concatenate([crossings(t, v_in, half, 1), crossings(t, v_in, half, -1)]))
    t_out = crossings(t, v_out, half, out_direction)
    delays = []
    for to in t_out[t_out >= after]:
        prior = t_in[t_in <= to]
        if prior.size:
            delays.append(to - prior[-1])
    if not delays:
        raise MeasureError(f"no {'rising' if out_direction > 0 else 'falling'} output crossing found")
    return float(np.mean(delays))


def oscillation_period(t, v, v_dd: float, skip_frac: float = 0.3, min_cycles: int = 5) -> float:
    """Mean period from rising 50% crossings in the last ``1 - skip_frac`` of the run."""
    c = crossings(t, v, 0.5 * v_dd, 1)
    c = c[c >= t[0] + skip_frac * (t[-1] - t[0])]
    if c.size < min_cycles + 1:
        raise MeasureError(f"only {max(c.size - 1, 0)} oscillation periods detected")
    return float((c[-1] - c[0]) / (c.size - 1))


def measure(result, v_dd: float | None = None) -> Metrics:
    """Metrics of a cell or ring-oscillator run; cells skip their first period."""
    meta = result.netlist.meta
    v_dd = v_dd if v_dd is not None else meta.get("v_dd", 0.7)
    t = result.time
    out = result.v(meta["output"])
    m = Metrics(dT_n=result.peak_rise("n"), dT_p=result.peak_rise("p"))
    if meta.get("cell") == "RO":
        m.ro_period = oscillation_period(t, out, v_dd)
        return m
    after = meta.get("period", 0.0)
    v_in = result.v(meta["input"])
    m.t_phl = propagation(t, v_in, out, v_dd, -1, after)
    m.t_plh = propagation(t, v_in, out, v_dd, 1, after)
    m.t_r = edge_time(t, out, v_dd, 1, after)
    m.t_f = edge_time(t, out, v_dd, -1, after)
    return m


def delta_pct(hot: Metrics, cold: Metrics) -> dict[str, float]:
    """Percent change of every metric from the isothermal to the self-heated run."""
    a, b = hot.values(), cold.values()
    return {k: 100.0 * (a[k] - b[k]) / b[k] for k in a if np.isfinite(a[k]) and np.isfinite(b[k]) and b[k] != 0}
