"""Foster-network evaluation and genetic-algorithm fitting of step responses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .heatsolve import ThermalStepResponse

MAX_ORDER = 8


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FosterStage:
    r: float  # K/W
    c: float  # J/K

    @property
    def tau(self) -> float:
        return self.r * self.c


@dataclass(frozen=True)
class FosterNetwork:
    stages: tuple[FosterStage, ...]

    def __post_init__(self):
        for s in self.stages:
            if not (s.r > 0 and s.c > 0):
                raise FitError(f"stage values must be positive, got r={s.r}, c={s.c}")
        object.__setattr__(self, "stages", tuple(sorted(self.stages, key=lambda s: (s.tau, s.r))))

    @classmethod
    def from_r_tau(cls, r, tau) -> "FosterNetwork":
        return cls(tuple(FosterStage(float(ri), float(ti / ri)) for ri, ti in zip(r, tau)))

    @property
    def order(self) -> int:
        return len(self.stages)

    @property
    def r(self) -> np.ndarray:
        return np.array([s.r for s in self.stages])

    @property
    def c(self) -> np.ndarray:
        return np.array([s.c for s in self.stages])

    @property
    def tau(self) -> np.ndarray:
        return np.array([s.tau for s in self.stages])

    @property
    def rth(self) -> float:
        return float(self.r.sum())

    def to_list(self) -> list[dict]:
        return [{"r_K_per_W": s.r, "c_J_per_K": s.c, "tau_s": s.tau} for s in self.stages]

    @classmethod
    def from_list(cls, stages: list[dict]) -> "FosterNetwork":
        return cls(tuple(FosterStage(s["r_K_per_W"], s["c_J_per_K"]) for s in stages))


def foster_eval(net: FosterNetwork, times) -> np.ndarray:
    """Step response ``sum r_i (1 - exp(-t / tau_i))``."""
    t = np.asarray(times, dtype=float)
    if np.any(t < 0):
        raise FitError("times must be non-negative")
    if net.order == 0:
        return np.zeros_like(t)
    return np.sum(net.r * -np.expm1(-t[..., None] / net.tau), axis=-1)


@dataclass(frozen=True)
class GaConfig:
    population: int = 100
    generations: int = 500
    tournament_size: int = 3
    blend_alpha: float = 0.5
    mutation_sigma_frac: float = 0.05
    mutation_rate: float = 0.2
    elitism: int = 2
    seed: int = 0
    stall_generations: int = 50
    refine: bool = True
    error_floor: float = 1.0  # relative-error denominator floor, fraction of the plateau

    def __post_init__(self):
        if self.population < 10:
            raise FitError("population must be >= 10")
        if not 0 <= self.elitism < self.population:
            raise FitError("elitism must be smaller than the population")
        if self.tournament_size < 1:
            raise FitError("tournament_size must be >= 1")


@dataclass
class FitResult:
    network: FosterNetwork
    rmse: float
    history: list[float] = field(default_factory=list, repr=False)
    generations_run: int = 0

    def to_dict(self) -> dict:
        return {
            "order": self.network.order,
            "stages": self.network.to_list(),
            "rmse": self.rmse,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class _Objective:
    """Vectorised RMS relative error of genomes ``[ln r_1.., ln tau_1..]``."""

    def __init__(self, times, target, floor):
        self.t = np.asarray(times, dtype=float)
        self.target = np.asarray(target, dtype=float)
        self.scale = np.maximum(np.abs(self.target), floor)

    def model(self, genes):
        genes = np.atleast_2d(genes)
        n = genes.shape[1] // 2
        r = np.exp(genes[:, :n])
        tau = np.exp(genes[:, n:])
        return np.einsum("pk,ptk->pt", r, -np.expm1(-self.t[None, :, None] / tau[:, None, :]))

    def __call__(self, genes):
        err = (self.model(genes) - self.target) / self.scale
        return np.sqrt(np.mean(err**2, axis=1))


def relative_rmse(net: FosterNetwork, target: ThermalStepResponse, floor_frac: float = 1.0) -> float:
    plateau = abs(target.zth[-1])
    scale = np.maximum(np.abs(target.zth), floor_frac * plateau)
    err = (foster_eval(net, target.times) - target.zth) / scale
    return float(np.sqrt(np.mean(err**2)))


def ga_fit(target: ThermalStepResponse, order: int, cfg: GaConfig | None = None) -> FitResult:
    """Fit an ``order``-stage Foster network to ``target`` by a real-coded GA.

    The search runs over log resistances and log time constants; the best
    individual is then polished with a bounded Nelder-Mead search.
    """
    cfg = cfg or GaConfig()
    if not 1 <= order <= MAX_ORDER:
        raise FitError(f"order must be within 1..{MAX_ORDER}, got {order}")
    t, z = target.times, target.zth
    if np.log10(t[-1] / t[0]) < 2:
        raise FitError("target spans fewer than two decades of time")
    rth = float(z[-1])
    if rth <= 0:
        raise FitError("target has no positive plateau")
    obj = _Objective(t, z, cfg.error_floor * rth)

    lo = np.concatenate([np.full(order, np.log(1e-3 * rth)), np.full(order, np.log(t[0]))])
    hi = np.concatenate([np.full(order, np.log(2.0 * rth)), np.full(order, np.log(t[-1]))])
    span = hi - lo
    rng = np.random.default_rng(cfg.seed)

    pop = lo + rng.random((cfg.population, 2 * order)) * span
    fit = obj(pop)
    history = [float(fit.min())]
    best_seen, stall, gen = history[0], 0, 0
    n_child = cfg.population - cfg.elitism
    for gen in range(1, cfg.generations + 1):
        order_idx = np.argsort(fit, kind="stable")
        elite = pop[order_idx[: cfg.elitism]]

        def tournament():
            entrants = rng.integers(0, cfg.population, size=(n_child, cfg.tournament_size))
            winners = np.argmin(fit[entrants], axis=1)
            return pop[entrants[np.arange(n_child), winners]]

        p1, p2 = tournament(), tournament()
        gmin, gmax = np.minimum(p1, p2), np.maximum(p1, p2)
        d = gmax - gmin
        children = gmin - cfg.blend_alpha * d + rng.random(p1.shape) * (1 + 2 * cfg.blend_alpha) * d
        mutate = rng.random(children.shape) < cfg.mutation_rate
        children += mutate * rng.normal(0.0, cfg.mutation_sigma_frac, children.shape) * span
        children = np.clip(children, lo, hi)

        pop = np.vstack([elite, children])
        fit = np.concatenate([fit[order_idx[: cfg.elitism]], obj(children)])
        best = float(fit.min())
        history.append(best)
        if best < best_seen * (1 - 1e-9):
            best_seen, stall = best, 0
        else:
            stall += 1
            if stall >= cfg.stall_generations:
                break

    genes = pop[int(np.argmin(fit))]
    if cfg.refine:
        res = minimize(
            lambda g: float(obj(g)[0]),
            genes,
            method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000 * order, "maxfev": 8000 * order},
        )
        if res.fun < obj(genes)[0]:
            genes = res.x
    net = FosterNetwork.from_r_tau(np.exp(genes[:order]), np.exp(genes[order:]))
    return FitResult(net, float(obj(genes)[0]), history, gen)
