"""Temperature-dependent compact transistor model and its parameter extraction.

The drain current is a single smooth expression::

    v_t     = k_B T / q
    vth_eff = vth0 + alpha_vt (T - t0) - dibl * v_ds
    q_i     = n_ss v_t ln(1 + exp((v_gs - vth_eff) / (n_ss v_t)))
    v_dse   = v_ds / (1 + (v_ds / q_i)^4)^(1/4)
    i_ds    = k_g (T / t0)^(-beta_mu) q_i v_dse (1 + lam v_ds)

for ``v_ds >= 0``; negative ``v_ds`` swaps source and drain so the device is
symmetric.  PFETs are evaluated on mirrored biases and return negative
drain current.  The extraction routines reproduce a two-phase flow: electrical
parameters from isothermal curves first, then the temperature coefficients
from self-heated curves with the device temperature solved self-consistently.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

import numba
import numpy as np
from scipy.optimize import minimize

K_OVER_Q = 8.617333262e-5  # V/K


class ExtractionError(ValueError):
    pass


class Polarity(str, Enum):
    NFET = "NFET"
    PFET = "PFET"

    @property
    def sign(self) -> int:
        return 1 if self is Polarity.NFET else -1


@dataclass(frozen=True)
class CompactModelParams:
    polarity: Polarity = Polarity.NFET
    vth0: float = 0.25  # V, magnitude
    n_ss: float = 2.2
    k_g: float = 3.6e-4  # A/V^2 at t0
    dibl: float = 0.03  # V/V
    lam: float = 0.05  # 1/V
    alpha_vt: float = -5e-4  # V/K; threshold magnitude falls with T
    beta_mu: float = 1.5
    t0: float = 300.0
    c_gs: float = 5e-17  # F
    c_gd: float = 5e-17  # F

    def __post_init__(self):
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        if self.k_g <= 0:
            raise ValueError("k_g must be positive")
        if self.n_ss < 1:
            raise ValueError("n_ss must be >= 1")
        if self.beta_mu < 0:
            raise ValueError("beta_mu must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.polarity.sign, self.vth0, self.n_ss, self.k_g, self.dibl, self.lam,
             self.alpha_vt, self.beta_mu, self.t0]
        )

    def to_dict(self, shmod: int | None = None) -> dict:
        d = asdict(self)
        d["polarity"] = self.polarity.value
        if shmod is not None:
            d["shmod"] = int(shmod)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompactModelParams":
        d = {k: v for k, v in d.items() if k not in CARD_METADATA}
        return cls(**d)

    def to_json(self, shmod: int = 0) -> str:
        return json.dumps(self.to_dict(shmod), indent=2, sort_keys=True)


CARD_METADATA = ("shmod", "fit_rmse", "provenance")

# Default cards.  NSFET on-power targets at V_DD = 0.7 V: 56 uW (N), 50.5 uW (P);
# CFET: 95.4 uW (N), 86.6 uW (P).  ``scripts/calibrate_cards.py`` regenerates k_g.
V_DD = 0.7
TARGET_ON_POWER = {
    ("nsfet", "n"): 56e-6,
    ("nsfet", "p"): 50.5e-6,
    ("cfet", "n"): 95.4e-6,
    ("cfet", "p"): 86.6e-6,
}


@numba.njit(cache=True)
def _g(u):
    """Saturation blend u / (1 + u^4)^(1/4) and its derivative."""
    if u <= 1.0:
        s = 1.0 + u**4
        return u * s**-0.25, s**-1.25
    w = u**-4
    s = 1.0 + w
    return s**-0.25, u**-5 * s**-1.25


@numba.njit(cache=True)
def _forward(vth0, n_ss, k_g, dibl, lam, alpha, beta, t0, vgs, vds, temp):
    """NFET-frame current and partials for ``vds >= 0``."""
    vt = K_OVER_Q * temp
    nvt = n_ss * vt
    vth = vth0 + alpha * (temp - t0) - dibl * vds
    x = (vgs - vth) / nvt
    if x > 40.0:
        sp = x + math.log1p(math.exp(-x))
    else:
        sp = math.log1p(math.exp(x))
    sig = 1.0 / (1.0 + math.exp(-x)) if x > -700.0 else 0.0
    qi = nvt * sp
    mob = k_g * (temp / t0) ** (-beta)
    clm = 1.0 + lam * vds
    if qi <= 0.0:
        return 0.0, 0.0, 0.0
    u = vds / qi
    g, dg = _g(u)
    i = mob * clm * qi * qi * g
    di_dqi = mob * clm * qi * (2.0 * g - u * dg)
    gm = di_dqi * sig
    gds = di_dqi * sig * dibl + mob * clm * qi * dg + mob * lam * qi * qi * g
    return i, gm, gds


@numba.njit(cache=True)
def ids_scalar(p, vgs, vds, temp):
    """Signed drain current and (d/dvgs, d/dvds) for a parameter vector ``p``.

    ``p`` is ``CompactModelParams.as_array()``.
    """
    sign = p[0]
    vg = sign * vgs
    vd = sign * vds
    if vd >= 0.0:
        i, gm, gds = _forward(p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], vg, vd, temp)
    else:
        # source/drain swap: i(vgs, vds) = -i(vgs - vds, -vds)
        i2, gm2, gds2 = _forward(p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], vg - vd, -vd, temp)
        i = -i2
        gm = -gm2
        gds = gm2 + gds2
    # back to the device frame: the sign flips of current and both voltages cancel in the partials
    return sign * i, gm, gds


@numba.njit(cache=True)
def _ids_array(p, vgs, vds, temp, out_i, out_gm, out_gds):
    for k in range(vgs.size):
        out_i[k], out_gm[k], out_gds[k] = ids_scalar(p, vgs[k], vds[k], temp[k])


def ids(params: CompactModelParams, v_gs, v_ds, temp, derivatives: bool = False):
    """Drain current (A) for arrays or scalars of biases and temperature (K)."""
    vgs, vds, t = np.broadcast_arrays(
        np.asarray(v_gs, dtype=float), np.asarray(v_ds, dtype=float), np.asarray(temp, dtype=float)
    )
    if np.any(t <= 0):
        raise ValueError("temperature must be positive")
    shape = vgs.shape
    flat = [np.ascontiguousarray(a).ravel() for a in (vgs, vds, t)]
    out = [np.empty(flat[0].size) for _ in range(3)]
    _ids_array(params.as_array(), *flat, *out)
    i, gm, gds = (o.reshape(shape) for o in out)
    if shape == ():
        i, gm, gds = float(i), float(gm), float(gds)
    return (i, gm, gds) if derivatives else i


# --------------------------------------------------------------------- curves


@dataclass
class IvCurveSet:
    """Measured or simulated I-V points.

    ``temp`` holds kelvin for isothermal rows and NaN for self-heated rows.
    Currents are magnitudes; biases are in the device's own polarity frame
    (negative for PFETs).
    """

    v_gs: np.ndarray
    v_ds: np.ndarray
    temp: np.ndarray
    i_ds: np.ndarray
    device: str = ""
    v_dd: float = V_DD

    def __post_init__(self):
        self.v_gs, self.v_ds, self.temp, self.i_ds = (
            np.asarray(a, dtype=float) for a in (self.v_gs, self.v_ds, self.temp, self.i_ds)
        )
        if not (self.v_gs.shape == self.v_ds.shape == self.temp.shape == self.i_ds.shape):
            raise ValueError("IV columns must have equal length")
        if np.any(self.i_ds < 0):
            raise ValueError("currents are stored as magnitudes and must be >= 0")

    @property
    def self_heated(self) -> np.ndarray:
        return np.isnan(self.temp)

    def subset(self, mask) -> "IvCurveSet":
        return IvCurveSet(self.v_gs[mask], self.v_ds[mask], self.temp[mask], self.i_ds[mask],
                          self.device, self.v_dd)

    def isothermal(self) -> "IvCurveSet":
        return self.subset(~self.self_heated)

    def she(self) -> "IvCurveSet":
        return self.subset(self.self_heated)

    def __len__(self) -> int:
        return self.v_gs.size

    def write_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["v_gs", "v_ds", "temp_K", "i_ds_A"])
            for vg, vd, t, i in zip(self.v_gs, self.v_ds, self.temp, self.i_ds):
                w.writerow([repr(float(vg)), repr(float(vd)), "she" if np.isnan(t) else repr(float(t)),
                            repr(float(i))])

    @classmethod
    def read_csv(cls, path, device: str = "", v_dd: float = V_DD) -> "IvCurveSet":
        rows = []
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        reader = csv.DictReader(lines)
        need = {"v_gs", "v_ds", "temp_K", "i_ds_A"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ExtractionError(f"IV CSV must have columns {sorted(need)}")
        for r in reader:
            t = r["temp_K"].strip()
            rows.append((float(r["v_gs"]), float(r["v_ds"]),
                         math.nan if t.lower() == "she" else float(t), abs(float(r["i_ds_A"]))))
        if not rows:
            raise ExtractionError("IV CSV has no data rows")
        a = np.array(rows)
        return cls(a[:, 0], a[:, 1], a[:, 2], a[:, 3], device or Path(path).stem, v_dd)


def sweep_grid(v_dd: float = V_DD, polarity: Polarity = Polarity.NFET, n_vgs: int = 36,
               vds_values=(0.05, 0.35, 0.7)) -> tuple[np.ndarray, np.ndarray]:
    """Transfer-curve bias grid (v_gs swept at a few v_ds), device frame."""
    vg = np.linspace(0.0, v_dd, n_vgs)[1:]
    vds_values = np.asarray(vds_values) * v_dd / 0.7
    VG, VD = np.meshgrid(vg, vds_values)
    s = polarity.sign
    return s * VG.ravel(), s * VD.ravel()


def synthesize_curves(params: CompactModelParams, temp: float | None = None, rth: float = 0.0,
                      v_dd: float = V_DD, **grid_kw) -> IvCurveSet:
    """Curves from the model itself: isothermal at ``temp`` or self-heated via ``rth``."""
    vgs, vds = sweep_grid(v_dd, params.polarity, **grid_kw)
    if temp is not None:
        i = np.abs(ids(params, vgs, vds, temp))
        t = np.full(vgs.shape, float(temp))
    else:
        i = np.abs(self_consistent_current(params, vgs, vds, rth))
        t = np.full(vgs.shape, np.nan)
    return IvCurveSet(vgs, vds, t, i, params.polarity.value, v_dd)


# ----------------------------------------------------------------- extraction


def _rel_rms(model, data):
    return float(np.sqrt(np.mean(((model - data) / data) ** 2)))


def fit_rmse(params: CompactModelParams, curves: IvCurveSet, rth: float = 0.0) -> float:
    """RMS relative current error over all rows (self-heated rows use ``rth``)."""
    model = np.empty(len(curves))
    iso = ~curves.self_heated
    if iso.any():
        model[iso] = np.abs(ids(params, curves.v_gs[iso], curves.v_ds[iso], curves.temp[iso]))
    if (~iso).any():
        model[~iso] = np.abs(self_consistent_current(params, curves.v_gs[~iso], curves.v_ds[~iso], rth))
    return _rel_rms(model, curves.i_ds)


def extract_isothermal(curves: IvCurveSet, polarity: Polarity | str = Polarity.NFET,
                       template: CompactModelParams | None = None) -> CompactModelParams:
    """Staged extraction of vth0, n_ss, k_g, dibl and lam from one-temperature curves.

    1. n_ss from the subthreshold log-slope at the lowest v_ds;
    2. k_g and vth from the strong-inversion linear region at the lowest v_ds;
    3. dibl from the subthreshold shift between lowest and highest v_ds;
    4. lam from the saturation-region output slope;
    then a Nelder-Mead polish of all five on RMS relative error.
    """
    polarity = Polarity(polarity)
    template = template or CompactModelParams(polarity=polarity)
    if np.any(curves.self_heated):
        raise ExtractionError("isothermal extraction needs fixed-temperature rows only")
    temps = np.unique(curves.temp)
    if temps.size != 1:
        raise ExtractionError("isothermal extraction needs curves at a single temperature")
    temp = float(temps[0])
    s = polarity.sign
    vg = s * curves.v_gs
    vd = s * curves.v_ds
    i = curves.i_ds
    if np.any(vd <= 0):
        raise ExtractionError("v_ds must be non-zero and of the device polarity")
    vt = K_OVER_Q * temp
    imax = i.max()
    vd_lo, vd_hi = vd.min(), vd.max()
    lo = np.isclose(vd, vd_lo)
    hi = np.isclose(vd, vd_hi)

    # 1. subthreshold slope
    sub = lo & (i < 1e-3 * imax) & (i > 0)
    if sub.sum() < 3 or np.log10(i[sub].max() / i[sub].min()) < 1.0:
        raise ExtractionError("curves lack a subthreshold decade at low v_ds")
    slope, icpt = np.polyfit(vg[sub], np.log(i[sub]), 1)
    n_ss = max(1.0, 2.0 / (slope * vt))

    # 2. linear region: i ~ k (vgs - vth) vds (1 + lam vds)
    lin = lo & (vg >= vg[lo].max() - 0.25 * (vg[lo].max() - vg[lo].min()))
    a1, a0 = np.polyfit(vg[lin], i[lin] / vd[lin], 1)
    k_g = a1 * (temp / template.t0) ** template.beta_mu
    vth_lo = -a0 / a1
    # 3. DIBL from the subthreshold shift at equal current
    sub_hi = hi & (i < 1e-3 * imax) & (i > 0)
    dibl = template.dibl
    if sub_hi.sum() >= 3:
        s2, c2 = np.polyfit(vg[sub_hi], np.log(i[sub_hi]), 1)
        level = np.log(i[sub].min() * 3)
        shift = (level - icpt) / slope - (level - c2) / s2
        dibl = float(np.clip(shift / (vd_hi - vd_lo), 0.0, 0.5))
    vth_t = vth_lo + dibl * vd_lo  # at temp
    vth0 = vth_t - template.alpha_vt * (temp - template.t0)
    # 4. output slope in saturation at top gate bias
    sat = hi | (vd > 0.5 * vd_hi)
    top = sat & np.isclose(vg, vg.max())
    lam = template.lam
    if top.sum() >= 2:
        order = np.argsort(vd[top])
        ii, dd = i[top][order], vd[top][order]
        dlog = (np.log(ii[-1]) - np.log(ii[0])) / (dd[-1] - dd[0])
        qi = vg.max() - vth_t
        lam = float(np.clip(dlog - 2 * dibl / qi, 0.0, 1.0))

    staged = replace(template, polarity=polarity, vth0=vth0, n_ss=n_ss, k_g=k_g, dibl=dibl, lam=lam)

    def unpack(x):
        return replace(staged, vth0=x[0], n_ss=max(1.0, x[1]), k_g=math.exp(x[2]),
                       dibl=x[3], lam=x[4])

    def cost(x):
        p = unpack(x)
        return _rel_rms(np.abs(ids(p, curves.v_gs, curves.v_ds, curves.temp)), i)

    x0 = np.array([vth0, n_ss, math.log(k_g), dibl, lam])
    best = x0
    for _ in range(3):  # restarts shake Nelder-Mead out of a collapsed simplex
        res = minimize(cost, best, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-13, "maxiter": 6000, "maxfev": 12000,
                                "adaptive": True})
        if res.fun <= cost(best):
            best = res.x
    return unpack(best)


def self_consistent_current(params: CompactModelParams, v_gs, v_ds, rth: float,
                            t_amb: float | None = None, tol: float = 1e-3, max_iter: int = 100,
                            damping: float = 0.5) -> np.ndarray:
    """Self-heated DC current with T = t_amb + rth * |i v_ds| solved by damped fixed point."""
    t_amb = params.t0 if t_amb is None else t_amb
    vgs = np.atleast_1d(np.asarray(v_gs, dtype=float))
    vds = np.atleast_1d(np.asarray(v_ds, dtype=float))
    temp = np.full(vgs.shape, t_amb)
    for _ in range(max_iter):
        i = ids(params, vgs, vds, temp)
        target = t_amb + rth * np.abs(i * vds)
        step = target - temp
        temp = temp + damping * step
        if np.all(np.abs(step) < tol):
            return ids(params, vgs, vds, temp)
    bad = int(np.argmax(np.abs(step)))
    raise ExtractionError(
        f"self-heating fixed point did not converge at v_gs={vgs[bad]:.4g} V, v_ds={vds[bad]:.4g} V"
    )


def extract_thermal(curves: IvCurveSet, iso: CompactModelParams, rth: float) -> CompactModelParams:
    """Fit alpha_vt and beta_mu to self-heated curves with the isothermal card frozen.

    ``rth`` is the device's steady self thermal resistance (K/W), usually the
    plateau of its self ladder.
    """
    if not rth > 0:
        raise ExtractionError("zero thermal resistance: temperature coefficients are unidentifiable")
    she = curves.she() if np.any(curves.self_heated) else None
    if she is None or len(she) == 0:
        raise ExtractionError("no self-heated rows in the curve set")

    def unpack(x):
        return replace(iso, alpha_vt=x[0] * 1e-3, beta_mu=x[1])

    def cost(x):
        if x[1] < 0:
            return 1e3
        try:
            model = self_consistent_current(unpack(x), she.v_gs, she.v_ds, rth)
        except ExtractionError:
            return 1e3
        return _rel_rms(np.abs(model), she.i_ds)

    x0 = np.array([iso.alpha_vt * 1e3, iso.beta_mu])
    best = x0
    for _ in range(2):
        res = minimize(cost, best, method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-14, "maxiter": 3000, "adaptive": True})
        if res.fun <= cost(best):
            best = res.x
    out = unpack(best)
    self_consistent_current(out, she.v_gs, she.v_ds, rth)  # surfaces a non-converging bias
    return out


def ztc_point(params: CompactModelParams, v_ds: float | None = None, v_dd: float = V_DD,
              grid: int = 141) -> float:
    """Gate-bias magnitude where the drain current is first-order temperature independent."""
    s = params.polarity.sign
    vds = v_dd if v_ds is None else abs(v_ds)
    t0 = params.t0

    def dtemp(vg):
        hot = ids(params, s * vg, s * vds, t0 + 0.5)
        cold = ids(params, s * vg, s * vds, t0 - 0.5)
        return abs(hot) - abs(cold)

    vgs = np.linspace(0.0, v_dd, grid)
    vals = np.array([dtemp(v) for v in vgs])
    change = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    if change.size == 0:
        raise ExtractionError("no ZTC in range")
    a, b = vgs[change[0]], vgs[change[0] + 1]
    fa = vals[change[0]]
    for _ in range(60):
        m = 0.5 * (a + b)
        fm = dtemp(m)
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def load_card(path) -> tuple[CompactModelParams, int]:
    with open(path) as fh:
        d = json.load(fh)
    return CompactModelParams.from_dict(d), int(d.get("shmod", 0))


FLAVORS = ("nsfet", "cfet")


def default_card(flavor: str, role: str) -> CompactModelParams:
    """Bundled calibrated card for ``flavor`` ("nsfet"/"cfet") and ``role`` ("n"/"p")."""
    if flavor not in FLAVORS or role not in ("n", "p"):
        raise ValueError(f"no default card for flavor={flavor!r}, role={role!r}")
    path = Path(__file__).parent / "data" / f"card_{flavor}_{role}.json"
    return load_card(path)[0]
