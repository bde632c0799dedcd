"""Write reference I-V curve sets standing in for device-simulator output.

The curves come from a charge-sheet model with effects the compact surrogate
lacks: source series resistance and mobility degradation with overdrive.
Self-heated rows solve the device temperature against the bundled pair
model's self thermal resistance.
"""

from pathlib import Path

import numpy as np

from xtherm.compact import K_OVER_Q, V_DD, IvCurveSet, Polarity, sweep_grid
from xtherm.xnet import DevicePairThermalModel

DATA = Path(__file__).resolve().parents[1] / "src" / "xtherm" / "data"

REF = {
    "n": dict(vth0=0.24, n=2.3, k=5.2e-4, theta=0.4, r_s=300.0, knee=4.0, lam=0.06, dibl=0.035,
              alpha=-5e-4, beta=1.0),
    "p": dict(vth0=0.245, n=2.4, k=4.6e-4, theta=0.45, r_s=350.0, knee=4.0, lam=0.06, dibl=0.035,
              alpha=-4e-4, beta=1.1),
}


def _intrinsic(p: dict, vgs, vds, temp):
    vt = K_OVER_Q * temp
    vth = p["vth0"] + p["alpha"] * (temp - 300.0) - p["dibl"] * vds
    nvt = p["n"] * vt
    qi = nvt * np.logaddexp(0.0, (vgs - vth) / nvt)
    vdse = vds / (1 + (vds / qi) ** p["knee"]) ** (1 / p["knee"])
    mob = p["k"] * (temp / 300.0) ** -p["beta"] / (1 + p["theta"] * qi)
    return mob * qi * vdse * (1 + p["lam"] * vds)


def reference_current(p: dict, vgs, vds, temp):
    """Current with source degeneration, solved by damped fixed point on the IR drop."""
    i = np.zeros(np.broadcast(vgs, vds, temp).shape)
    for _ in range(500):
        drop = i * p["r_s"]
        new = _intrinsic(p, vgs - drop, vds - drop, temp)
        if np.max(np.abs(new - i) / np.maximum(new, 1e-30)) < 1e-12:
            return new
        i = 0.5 * (i + new)
    return i


def self_heated(p, vgs, vds, rth, t_amb=300.0):
    temp = np.full(vgs.shape, t_amb)
    for _ in range(200):
        i = reference_current(p, vgs, vds, temp)
        new = t_amb + rth * i * vds
        if np.max(np.abs(new - temp)) < 1e-6:
            break
        temp = 0.5 * (temp + new)
    return reference_current(p, vgs, vds, temp)


def main() -> None:
    model = DevicePairThermalModel.load(DATA / "pair_nsfet.json")
    for role, pol in (("n", Polarity.NFET), ("p", Polarity.PFET)):
        p = REF[role]
        vgs, vds = sweep_grid(V_DD, pol)
        mag_g, mag_d = np.abs(vgs), np.abs(vds)
        rth = model.steady_rth()["nn" if role == "n" else "pp"]
        i_iso = reference_current(p, mag_g, mag_d, 300.0)
        i_she = self_heated(p, mag_g, mag_d, rth)
        curves = IvCurveSet(
            np.concatenate([vgs, vgs]),
            np.concatenate([vds, vds]),
            np.concatenate([np.full(vgs.shape, 300.0), np.full(vgs.shape, np.nan)]),
            np.concatenate([i_iso, i_she]),
            device=pol.value,
        )
        path = DATA / f"iv_reference_nsfet_{role}.csv"
        curves.write_csv(path, comment="charge-sheet reference curves with R_s and mobility degradation, isothermal 300 K rows then self-heated rows")
        print(f"{path.name}: I_on = {i_iso.max():.3e} A")


if __name__ == "__main__":
    main()
