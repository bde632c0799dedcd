"""Cross-coupled thermal model of an N/P device pair.

Four Foster ladders realise the pair: ``z_ab`` is the temperature rise at
device ``b`` per watt dissipated in device ``a``.  Every ladder is driven by
the full power of its source device and device temperatures are the sum of
the ladders that end on them (superposition), which is how the balancing
"dummy" branch of a SPICE realisation is accounted for here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fosterfit import FitResult, FosterNetwork, FosterStage, GaConfig, ga_fit
from .heatsolve import ThermalStepResponse
from .nid import DeconvConfig, spectrum_from_response

LADDERS = ("nn", "np", "pn", "pp")
MAX_FIT_RMSE = 0.05


class AssemblyError(ValueError):
    def __init__(self, message: str, pair: str | None = None):
        super().__init__(message)
        self.pair = pair


class CrosstalkError(ValueError):
    pass


@dataclass(frozen=True)
class DevicePairThermalModel:
    z_nn: FosterNetwork
    z_np: FosterNetwork
    z_pn: FosterNetwork
    z_pp: FosterNetwork
    t0: float = 300.0
    fits: dict = field(default_factory=dict, compare=False, repr=False)

    def ladder(self, key: str) -> FosterNetwork:
        return getattr(self, "z_" + key)

    def steady_rth(self) -> dict[str, float]:
        return {k: self.ladder(k).rth for k in LADDERS}

    def validate(self) -> None:
        r = self.steady_rth()
        if r["np"] > r["nn"] * (1 + 1e-9) or r["pn"] > r["pp"] * (1 + 1e-9):
            raise AssemblyError("cross ladder exceeds the self ladder of its heater")

    def scaled(self, factor: float) -> "DevicePairThermalModel":
        """Model with all resistances scaled (time constants kept)."""
        def scale(net):
            return FosterNetwork(tuple(FosterStage(s.r * factor, s.c / factor) for s in net.stages))

        return DevicePairThermalModel(*(scale(self.ladder(k)) for k in LADDERS), t0=self.t0)

    def to_dict(self) -> dict:
        return {
            "t0_K": self.t0,
            "ladders": {
                k: [{"r": s.r, "c": s.c, "tau": s.tau} for s in self.ladder(k).stages]
                for k in LADDERS
            },
            "fit_rmse": {k: v for k, v in sorted(self.fits.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DevicePairThermalModel":
        ladders = {
            k: FosterNetwork(tuple(FosterStage(s["r"], s["c"]) for s in d["ladders"][k]))
            for k in LADDERS
        }
        return cls(**{"z_" + k: v for k, v in ladders.items()}, t0=d.get("t0_K", 300.0),
                   fits=dict(d.get("fit_rmse", {})))

    @classmethod
    def load(cls, path) -> "DevicePairThermalModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def assemble(
    responses: dict[str, ThermalStepResponse],
    orders: dict[str, int] | None = None,
    ga: GaConfig | None = None,
    deconv: DeconvConfig | None = None,
    t0: float = 300.0,
) -> DevicePairThermalModel:
    """Fit the four heater/monitor responses and bundle them into a pair model.

    ``orders`` defaults to the peak count of each response's time-constant
    spectrum.  Ladder ``i`` (in ``nn, np, pn, pp`` order) is fitted with seed
    ``ga.seed + i``.
    """
    ga = ga or GaConfig()
    missing = [k for k in LADDERS if k not in responses]
    if missing:
        raise AssemblyError(f"missing responses: {missing}")
    for cross, own in (("np", "nn"), ("pn", "pp")):
        if responses[cross].zth[-1] > responses[own].zth[-1]:
            raise AssemblyError(
                f"cross response {cross} exceeds self response {own} at t_end", pair=cross
            )
    fits: dict[str, FitResult] = {}
    for i, key in enumerate(LADDERS):
        resp = responses[key]
        n = orders[key] if orders and key in orders else spectrum_from_response(resp, deconv)[1].order
        n = max(n, 1)
        cfg = GaConfig(**{**ga.__dict__, "seed": ga.seed + i})
        fit = ga_fit(resp, n, cfg)
        if fit.rmse > MAX_FIT_RMSE:
            raise AssemblyError(f"fit of {key} has RMSE {fit.rmse:.3%} > 5%", pair=key)
        fits[key] = fit
    model = DevicePairThermalModel(
        *(fits[k].network for k in LADDERS), t0=t0, fits={k: f.rmse for k, f in fits.items()}
    )
    model.validate()
    return model


@dataclass
class ThermalState:
    """Stage temperatures (K above ambient) of every ladder."""

    theta: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, model: DevicePairThermalModel) -> "ThermalState":
        return cls({k: np.zeros(model.ladder(k).order) for k in LADDERS})

    def copy(self) -> "ThermalState":
        return ThermalState({k: v.copy() for k, v in self.theta.items()})


def _stage_update(theta, net: FosterNetwork, power: float, dt: float, exact: bool):
    if net.order == 0:
        return theta
    if exact:
        decay = np.exp(-dt / net.tau)
        return theta * decay + power * net.r * (1.0 - decay)
    # backward Euler on C dtheta/dt + theta/R = P
    return (theta + dt * power / net.c) / (1.0 + dt / net.tau)


def advance(
    state: ThermalState,
    model: DevicePairThermalModel,
    p_n: float,
    p_p: float,
    dt: float,
    exact: bool = True,
) -> tuple[ThermalState, tuple[float, float]]:
    """Advance all ladders by ``dt`` with powers held over the step.

    Returns the new state and the device temperatures ``(T_n, T_p)`` in K.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if p_n < 0 or p_p < 0:
        raise ValueError("powers must be non-negative")
    drive = {"nn": p_n, "np": p_n, "pn": p_p, "pp": p_p}
    new = ThermalState(
        {k: _stage_update(state.theta[k], model.ladder(k), drive[k], dt, exact) for k in LADDERS}
    )
    return new, temperatures(new, model)


def temperatures(state: ThermalState, model: DevicePairThermalModel) -> tuple[float, float]:
    th = state.theta
    t_n = model.t0 + th["nn"].sum() + th["pn"].sum()
    t_p = model.t0 + th["pp"].sum() + th["np"].sum()
    return float(t_n), float(t_p)


@dataclass(frozen=True)
class CrosstalkReport:
    dT_pn: float  # NFET rise caused by PFET power
    dT_np: float  # PFET rise caused by NFET power
    dT_jp: float  # PFET self rise
    dT_jn: float  # NFET self rise
    P_p: float
    P_n: float
    rho: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def crosstalk_coefficient(dT_pn, dT_np, dT_jp, dT_jn, P_p, P_n) -> float:
    """Ratio of summed cross impedances to summed self impedances."""
    if P_p <= 0 or P_n <= 0:
        raise CrosstalkError("powers must be positive")
    if dT_jp <= 0 or dT_jn <= 0:
        raise CrosstalkError("self-heating rises must be positive")
    return (dT_pn / P_p + dT_np / P_n) / (dT_jp / P_p + dT_jn / P_n)


def crosstalk_report(rth: dict[str, float], P_n: float, P_p: float) -> CrosstalkReport:
    """Steady crosstalk from per-watt impedances keyed ``nn, np, pn, pp``."""
    d = dict(
        dT_pn=rth["pn"] * P_p,
        dT_np=rth["np"] * P_n,
        dT_jp=rth["pp"] * P_p,
        dT_jn=rth["nn"] * P_n,
        P_p=P_p,
        P_n=P_n,
    )
    return CrosstalkReport(**d, rho=crosstalk_coefficient(**d))
