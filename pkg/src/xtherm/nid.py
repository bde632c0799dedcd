"""Network identification by deconvolution.

A thermal step response ``Zth(t)`` is moved onto logarithmic time
``z = ln(t / 1 s)``.  Its derivative ``a(z) = dZth/dz`` is the convolution of
the time-constant spectrum ``R(zeta)`` with the kernel
``w(x) = exp(x - exp(x))``; iterative Bayes (Richardson-Lucy) updates recover
``R`` while keeping it non-negative.  Peaks of ``R`` fix the order of the
Foster network fitted afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.signal import find_peaks, savgol_filter

from .heatsolve import ThermalStepResponse


class NidError(ValueError):
    pass


@dataclass(frozen=True)
class DeconvConfig:
    grid_points_per_decade: int = 40
    iterations: int = 1000
    smoothing_window: int = 9
    peak_threshold_frac: float = 0.05
    min_peak_separation: float = 1.0
    monotone_tolerance: float = 1e-4  # fraction of max |Zth| tolerated as noise

    def __post_init__(self):
        if self.iterations < 1:
            raise NidError("iterations must be >= 1")
        if not 0 < self.peak_threshold_frac < 1:
            raise NidError("peak_threshold_frac must lie in (0, 1)")

    @property
    def dz(self) -> float:
        return np.log(10.0) / self.grid_points_per_decade


@dataclass
class LogDerivative:
    z: np.ndarray
    a: np.ndarray  # K/W per unit z

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])


@dataclass
class TimeConstantSpectrum:
    zeta: np.ndarray
    density: np.ndarray  # K/W per unit zeta
    bin_width: float

    @property
    def tau(self) -> np.ndarray:
        return np.exp(self.zeta)

    def total(self) -> float:
        return float(self.density.sum() * self.bin_width)


@dataclass
class Peak:
    zeta: float
    height: float

    @property
    def tau(self) -> float:
        return float(np.exp(self.zeta))


@dataclass
class OrderReport:
    order: int
    peaks: list[Peak]

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "peaks": [{"zeta": p.zeta, "tau_s": p.tau, "height": p.height} for p in self.peaks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def kernel(x):
    """Derivative kernel of a unit single-pole response on log time."""
    x = np.asarray(x, dtype=float)
    return np.exp(x - np.exp(np.minimum(x, 700.0)))


def log_derivative(resp: ThermalStepResponse, cfg: DeconvConfig | None = None) -> LogDerivative:
    cfg = cfg or DeconvConfig()
    t, zth = resp.times, resp.zth
    if np.any(t <= 0):
        raise NidError("times must be positive")
    decades = np.log10(t[-1] / t[0])
    if decades <= 0 or len(t) < 3 * decades:
        raise NidError("need at least 3 samples per decade")
    scale = max(np.max(np.abs(zth)), np.finfo(float).tiny)
    if np.any(np.diff(zth) < -cfg.monotone_tolerance * scale):
        raise NidError("step response is not monotone")
    zth = np.maximum.accumulate(zth)

    n = int(round(decades * cfg.grid_points_per_decade)) + 1
    z = np.linspace(np.log(t[0]), np.log(t[-1]), n)
    resampled = PchipInterpolator(np.log(t), zth)(z)
    win = cfg.smoothing_window
    if win > 2 and n > win:
        resampled = savgol_filter(resampled, win, 2, mode="interp")
    a = np.gradient(resampled, z)
    # smoothing leaves round-off ripple on plateaus; treat it as zero slope
    a[a < 1e-10 * scale] = 0.0
    return LogDerivative(z, a)


def _zeta_grid(z: np.ndarray, cfg: DeconvConfig) -> np.ndarray:
    dz = z[1] - z[0]
    pad = cfg.grid_points_per_decade
    return z[0] + dz * np.arange(-pad, len(z) + pad)


def bayes_deconvolve(
    deriv: LogDerivative,
    cfg: DeconvConfig | None = None,
    history: list | None = None,
) -> TimeConstantSpectrum:
    """Richardson-Lucy deconvolution of ``a(z)`` by the log-time kernel.

    If ``history`` is given, the RMS residual ``||a - R*w||`` of every
    iterate is appended to it.
    """
    cfg = cfg or DeconvConfig()
    z, a = deriv.z, deriv.a
    if np.any(a < 0):
        raise NidError("log-derivative must be non-negative")
    zeta = _zeta_grid(z, cfg)
    dzeta = float(z[1] - z[0])
    if not np.any(a > 0):
        return TimeConstantSpectrum(zeta, np.zeros_like(zeta), dzeta)

    w = kernel(z[:, None] - zeta[None, :])  # (nz, nzeta)
    norm = w.sum(axis=0)
    norm[norm == 0] = np.inf
    mass = a.sum() * dzeta
    r = np.full(zeta.shape, mass / (dzeta * len(zeta)))
    for _ in range(cfg.iterations):
        c = (w @ r) * dzeta
        if history is not None:
            history.append(float(np.sqrt(np.mean((a - c) ** 2))))
        ratio = np.divide(a, c, out=np.zeros_like(a), where=c > 0)
        r = r * (w.T @ ratio) / norm
    if history is not None:
        c = (w @ r) * dzeta
        history.append(float(np.sqrt(np.mean((a - c) ** 2))))
    return TimeConstantSpectrum(zeta, r, dzeta)


def detect_order(spec: TimeConstantSpectrum, cfg: DeconvConfig | None = None) -> OrderReport:
    """Count spectrum peaks above a height threshold, merging close neighbours."""
    cfg = cfg or DeconvConfig()
    d = np.asarray(spec.density, dtype=float)
    if d.size == 0 or not np.any(d > 0):
        return OrderReport(0, [])
    if np.any(d < 0):
        raise NidError("spectrum must be non-negative")
    # pad with zeros so maxima sitting on the grid edge are still candidates
    padded = np.concatenate(([0.0], d, [0.0]))
    distance = max(1.0, cfg.min_peak_separation / spec.bin_width)
    idx, _ = find_peaks(padded, height=cfg.peak_threshold_frac * d.max(), distance=distance)
    idx = idx - 1
    peaks = [Peak(float(spec.zeta[i]), float(d[i])) for i in sorted(idx)]
    return OrderReport(len(peaks), peaks)


def spectrum_from_response(
    resp: ThermalStepResponse, cfg: DeconvConfig | None = None
) -> tuple[TimeConstantSpectrum, OrderReport]:
    cfg = cfg or DeconvConfig()
    spec = bayes_deconvolve(log_derivative(resp, cfg), cfg)
    return spec, detect_order(spec, cfg)
