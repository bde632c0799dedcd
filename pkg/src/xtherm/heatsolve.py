"""Finite-difference heat conduction on a voxel grid.

Steady and transient solves of ``div(k grad T) + q = 0`` (resp. ``rho c dT/dt``)
with the substrate bottom and BEOL top held at ambient and all other faces
adiabatic.  Face conductances between neighbouring voxels use the harmonic
mean of their conductivities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .geometry import VoxelGrid

log = logging.getLogger(__name__)

NM = 1e-9


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    t_start: float = 1e-13
    t_end: float = 1e-5
    steps_per_decade: int = 10
    ambient: float = 300.0
    picard_iters: int = 5
    picard_tol: float = 1e-3  # K
    linear_tol: float = 1e-8
    linear_maxiter: int = 2000

    def __post_init__(self):
        if not 0 < self.t_start < self.t_end:
            raise SolverError("need 0 < t_start < t_end")
        if self.steps_per_decade < 5:
            raise SolverError("steps_per_decade must be >= 5")

    def times(self) -> np.ndarray:
        decades = np.log10(self.t_end / self.t_start)
        n = int(round(decades * self.steps_per_decade))
        return self.t_start * 10.0 ** (np.arange(n + 1) / self.steps_per_decade)


@dataclass
class ThermalStepResponse:
    times: np.ndarray  # s
    zth: np.ndarray  # K/W
    heater: str
    monitor: str
    power: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.zth = np.asarray(self.zth, dtype=float)
        if self.times.shape != self.zth.shape or self.times.ndim != 1:
            raise ValueError("times and zth must be 1-D arrays of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def label(self) -> str:
        return f"{self.heater}{self.monitor}"

    @property
    def rth(self) -> float:
        """Late-time plateau of the step response."""
        return float(self.zth[-1])


@dataclass
class ThermalOperator:
    """Assembled conduction matrix for one conductivity field."""

    matrix: sp.csr_matrix
    boundary_g: np.ndarray  # conductance of every voxel to the ambient planes (W/K)
    capacity: np.ndarray  # J/K per voxel
    voxel_volume: float  # m^3


@dataclass
class SteadyResult:
    rise: np.ndarray  # K above ambient, grid-shaped
    power: float
    heater: str
    dt_max: float
    dt_monitor: dict[str, float]
    operator: ThermalOperator = field(repr=False)
    residual: float = 0.0  # relative linear residual reached

    @property
    def temperature(self) -> np.ndarray:
        return self.rise + self.ambient

    ambient: float = 300.0


def _face_conductance(k1: np.ndarray, k2: np.ndarray, area: float, length: float) -> np.ndarray:
    return 2.0 * area * k1 * k2 / (length * (k1 + k2))


def assemble(grid: VoxelGrid, k: np.ndarray | None = None) -> ThermalOperator:
    """Build the SPD conduction matrix with Dirichlet planes at z-min and z-max."""
    if k is None:
        k = grid.material_array("k300")
    nx, ny, nz = grid.shape
    hx, hy, hz = (v * NM for v in grid.voxel_size)
    idx = np.arange(nx * ny * nz).reshape(grid.shape)
    rows, cols, vals = [], [], []
    diag = np.zeros(idx.size)
    for axis, (area, length) in enumerate(((hy * hz, hx), (hx * hz, hy), (hx * hy, hz))):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        g = _face_conductance(k[tuple(lo)], k[tuple(hi)], area, length).ravel()
        a = idx[tuple(lo)].ravel()
        b = idx[tuple(hi)].ravel()
        rows += [a, b]
        cols += [b, a]
        vals += [-g, -g]
        np.add.at(diag, a, g)
        np.add.at(diag, b, g)
    area_z = hx * hy
    boundary = np.zeros(grid.shape)
    boundary[:, :, 0] += 2.0 * area_z * k[:, :, 0] / hz
    boundary[:, :, -1] += 2.0 * area_z * k[:, :, -1] / hz
    boundary = boundary.ravel()
    diag += boundary
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag)
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(idx.size, idx.size),
    )
    vol = hx * hy * hz
    capacity = grid.material_array("volumetric_heat_capacity").ravel() * vol
    return ThermalOperator(mat, boundary, capacity, vol)


def _heat_vector(grid: VoxelGrid, heater: str, power: float) -> np.ndarray:
    if heater not in grid.heater_mask:
        raise SolverError(f"unknown heater device {heater!r}")
    mask = grid.heater_mask[heater].ravel()
    q = np.zeros(mask.size)
    q[mask] = power / mask.sum()
    return q


def _conductivity(grid: VoxelGrid, temperature: np.ndarray | None) -> np.ndarray:
    if temperature is None:
        return grid.material_array("k300")
    k = np.empty(grid.shape)
    for i, name in enumerate(grid.material_names):
        sel = grid.region_id == i
        k[sel] = grid.materials[name].conductivity(temperature[sel])
    return k


def _is_nonlinear(grid: VoxelGrid) -> bool:
    return any(m.k_exponent != 0.0 for m in grid.materials.values())


def _amg(mat):
    return pyamg.ruge_stuben_solver(mat).aspreconditioner()


def _solve(mat, rhs, x0, tol, maxiter, precond=None, strict=True):
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0.0
    if precond is None:
        precond = _amg(mat)
    x, info = cg(mat, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=precond)
    res = float(np.linalg.norm(rhs - mat @ x) / bnorm)
    if strict and (info != 0 or not np.isfinite(res) or res > 10 * tol):
        raise SolverError(f"linear solve did not converge: relative residual {res:.3e}")
    return x, res


def steady_state(
    grid: VoxelGrid,
    heater: str,
    power: float,
    cfg: SolverConfig | None = None,
    *,
    maxiter: int | None = None,
    strict: bool = True,
) -> SteadyResult:
    """Steady temperature rise for ``power`` watts spread over ``heater``'s channel."""
    cfg = cfg or SolverConfig()
    if power < 0:
        raise SolverError("power must be non-negative")
    q = _heat_vector(grid, heater, power)
    op = assemble(grid)
    if op.boundary_g.sum() <= 0:
        raise SolverError("no Dirichlet face: conduction matrix is singular")
    maxiter = cfg.linear_maxiter if maxiter is None else maxiter
    x, res = _solve(op.matrix, q, None, cfg.linear_tol, maxiter, strict=strict)
    if _is_nonlinear(grid) and power > 0:
        for _ in range(cfg.picard_iters):
            k = _conductivity(grid, x.reshape(grid.shape) + cfg.ambient)
            op = assemble(grid, k)
            x_new, res = _solve(op.matrix, q, x, cfg.linear_tol, maxiter, strict=strict)
            change = np.max(np.abs(x_new - x))
            x = x_new
            if change < cfg.picard_tol:
                break
    rise = x.reshape(grid.shape)
    monitors = {d: float(rise[m].mean()) for d, m in grid.monitor_mask.items()}
    return SteadyResult(
        rise=rise,
        power=power,
        heater=heater,
        dt_max=float(rise.max()) if power > 0 else 0.0,
        dt_monitor=monitors,
        operator=op,
        residual=res,
        ambient=cfg.ambient,
    )


def energy_balance(result: SteadyResult) -> float:
    """Relative mismatch between heat leaving through the sink planes and input power."""
    if result.power == 0:
        return 0.0
    outflow = float(np.dot(result.operator.boundary_g, result.rise.ravel()))
    return (outflow - result.power) / result.power


def step_response(
    grid: VoxelGrid,
    heater: str,
    power: float,
    cfg: SolverConfig | None = None,
) -> dict[str, ThermalStepResponse]:
    """Backward-Euler power-step response sampled on log-spaced times.

    Returns one response per monitored device (self and cross), keyed by
    monitor id.  The AMG preconditioner is rebuilt once per decade of step
    size; within a decade the operator changes by at most a factor of ten in
    its diagonal, which CG absorbs in a few extra iterations.
    """
    cfg = cfg or SolverConfig()
    if power < 0:
        raise SolverError("power must be non-negative")
    times = cfg.times()
    decades = np.log10(cfg.t_end / cfg.t_start)
    if len(times) - 1 < cfg.steps_per_decade * max(decades, 1.0) - 1e-9:
        raise SolverError("time grid has fewer samples than steps_per_decade requires")
    monitors = {d: m.ravel() for d, m in grid.monitor_mask.items()}
    zth = {d: np.zeros(len(times)) for d in monitors}
    if power == 0:
        return {
            d: ThermalStepResponse(times, zth[d], heater, d, power) for d in monitors
        }
    q = _heat_vector(grid, heater, power)
    nonlinear = _is_nonlinear(grid)
    op = assemble(grid)
    theta = np.zeros(q.size)
    t_prev = 0.0
    precond, precond_dt = None, None
    for step, t in enumerate(times):
        dt = t - t_prev
        iters = cfg.picard_iters if nonlinear else 0
        guess = theta
        for it in range(iters + 1):
            if it > 0:
                k = _conductivity(grid, guess.reshape(grid.shape) + cfg.ambient)
                op = assemble(grid, k)
                precond = None
            mat = (op.matrix + sp.diags(op.capacity / dt)).tocsr()
            rhs = q + op.capacity / dt * theta
            # small steps are diagonally dominant: try Jacobi-CG before paying for AMG
            new, info = cg(
                mat, rhs, x0=guess, rtol=cfg.linear_tol, atol=0.0, maxiter=40,
                M=sp.diags(1.0 / mat.diagonal()),
            )
            if info != 0:
                if precond is None or dt > 3 * precond_dt:
                    precond = _amg(mat)
                    precond_dt = dt
                new, _ = _solve(mat, rhs, new, cfg.linear_tol, cfg.linear_maxiter, precond)
            change = np.max(np.abs(new - guess))
            guess = new
            if it > 0 and change < cfg.picard_tol:
                break
        theta = guess
        t_prev = t
        for d, m in monitors.items():
            zth[d][step] = theta[m].mean() / power
    return {d: ThermalStepResponse(times, zth[d], heater, d, power) for d in monitors}


def pair_responses(
    grid: VoxelGrid,
    powers: dict[str, float],
    cfg: SolverConfig | None = None,
) -> dict[str, ThermalStepResponse]:
    """All four heater/monitor responses keyed ``nn``, ``np``, ``pn``, ``pp``.

    Key ``ab`` is the response at device ``b`` per watt dissipated in ``a``.
    """
    out = {}
    for heater in ("n", "p"):
        for monitor, resp in step_response(grid, heater, powers[heater], cfg).items():
            out[heater + monitor] = resp
    return out
