"""Modified nodal analysis transient engine with loose electro-thermal coupling.

Unknowns are the non-ground node voltages followed by one branch current per
voltage source.  Capacitors use trapezoidal companions (backward Euler on the
first step); MOSFETs contribute their analytic conductances.  Device
temperatures are frozen during a step's Newton loop; afterwards every thermal
pair advances its four Foster ladders with the step-averaged device powers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from ..compact import ids_scalar
from ..xnet import LADDERS, DevicePairThermalModel
from .netlist import GROUND, Netlist

MAX_STAGES = 8
MAX_HALVINGS = 3
DC_GMIN_MAX = 1e-9  # S; coarsest gmin accepted for an operating point


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class SimOptions:
    shmod: int = 1
    t_stop: float = 30e-9
    dt: float = 1e-13
    newton_tol_v: float = 1e-6
    newton_tol_i: float = 1e-8
    max_newton: int = 30
    ambient: float = 300.0
    gmin: float = 1e-12  # S to ground at every node
    max_step_v: float = 0.2  # Newton voltage damping limit
    save_every: int = 1

    def __post_init__(self):
        if self.shmod not in (0, 1):
            raise ValueError("shmod must be 0 or 1")
        if not self.dt > 0 or not self.t_stop > 0:
            raise ValueError("dt and t_stop must be positive")
        if not (self.newton_tol_v > 0 and self.newton_tol_i > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")


@dataclass
class TranResult:
    time: np.ndarray
    voltages: dict[str, np.ndarray]
    temperatures: dict[str, np.ndarray]  # per mosfet, K
    powers: dict[str, np.ndarray]  # per mosfet, W
    currents: dict[str, np.ndarray] = field(repr=False)  # channel current into drain, A
    netlist: Netlist = field(repr=False, default=None)
    options: SimOptions = field(repr=False, default=None)

    def v(self, node: str) -> np.ndarray:
        if node == GROUND:
            return np.zeros_like(self.time)
        return self.voltages[node]

    def peak_rise(self, role: str) -> float:
        """Largest temperature rise over all mosfets of a pair role ("n" or "p")."""
        amb = self.options.ambient if self.options else 300.0
        rises = [self.temperatures[m.name].max() - amb for m in self.netlist.mosfets if m.role == role]
        return float(max(rises)) if rises else 0.0


# ------------------------------------------------------------------ kernels


@numba.njit(cache=True)
def _pwl(t, k, pwl_t, pwl_v, off):
    a, b = off[k], off[k + 1]
    if t <= pwl_t[a]:
        return pwl_v[a]
    for j in range(a, b - 1):
        if t <= pwl_t[j + 1]:
            return pwl_v[j] + (pwl_v[j + 1] - pwl_v[j]) * (t - pwl_t[j]) / (pwl_t[j + 1] - pwl_t[j])
    return pwl_v[b - 1]


@numba.njit(cache=True)
def _lu_solve(A, b, piv):
    """In-place Gaussian elimination with partial pivoting; ``b`` becomes the solution."""
    n = b.size
    for k in range(n):
        p = k
        big = abs(A[k, k])
        for i in range(k + 1, n):
            if abs(A[i, k]) > big:
                big = abs(A[i, k])
                p = i
        if big == 0.0:
            return False
        if p != k:
            for j in range(n):
                A[k, j], A[p, j] = A[p, j], A[k, j]
            b[k], b[p] = b[p], b[k]
        inv = 1.0 / A[k, k]
        for i in range(k + 1, n):
            f = A[i, k] * inv
            if f != 0.0:
                for j in range(k + 1, n):
                    A[i, j] -= f * A[k, j]
                b[i] -= f * b[k]
    for k in range(n - 1, -1, -1):
        acc = b[k]
        for j in range(k + 1, n):
            acc -= A[k, j] * b[j]
        b[k] = acc / A[k, k]
    return True


@numba.njit(cache=True)
def _volt(x, node):
    return 0.0 if node < 0 else x[node]


@numba.njit(cache=True)
def _newton(x, xprev, icap_prev, t, h, mode, gmin, n_nodes, mos, cards, temps, caps, capv,
            res, resg, src, pwl_t, pwl_v, pwl_off, tol_v, tol_i, max_newton, max_step):
    """Solve the step in place.  ``mode``: 0 dc, 1 backward Euler, 2 trapezoidal."""
    n = x.size
    J = np.zeros((n, n))
    F = np.zeros(n)
    dx = np.zeros(n)
    piv = np.zeros(n, dtype=np.int64)
    for it in range(max_newton):
        J[:, :] = 0.0
        F[:] = 0.0
        for k in range(n_nodes):
            J[k, k] += gmin
            F[k] += gmin * x[k]
        for k in range(res.shape[0]):
            a, b = res[k, 0], res[k, 1]
            g = resg[k]
            i = g * (_volt(x, a) - _volt(x, b))
            if a >= 0:
                F[a] += i
                J[a, a] += g
                if b >= 0:
                    J[a, b] -= g
            if b >= 0:
                F[b] -= i
                J[b, b] += g
                if a >= 0:
                    J[b, a] -= g
        if mode > 0:
            for k in range(caps.shape[0]):
                a, b = caps[k, 0], caps[k, 1]
                if mode == 2:
                    geq = 2.0 * capv[k] / h
                    i = geq * (_volt(x, a) - _volt(x, b) - _volt(xprev, a) + _volt(xprev, b)) - icap_prev[k]
                else:
                    geq = capv[k] / h
                    i = geq * (_volt(x, a) - _volt(x, b) - _volt(xprev, a) + _volt(xprev, b))
                if a >= 0:
                    F[a] += i
                    J[a, a] += geq
                    if b >= 0:
                        J[a, b] -= geq
                if b >= 0:
                    F[b] -= i
                    J[b, b] += geq
                    if a >= 0:
                        J[b, a] -= geq
        for k in range(mos.shape[0]):
            d, g_, s = mos[k, 0], mos[k, 1], mos[k, 2]
            vd, vg, vs = _volt(x, d), _volt(x, g_), _volt(x, s)
            i, gm, gds = ids_scalar(cards[mos[k, 3]], vg - vs, vd - vs, temps[k])
            gss = -gm - gds
            if d >= 0:
                F[d] += i
                J[d, d] += gds
                if g_ >= 0:
                    J[d, g_] += gm
                if s >= 0:
                    J[d, s] += gss
            if s >= 0:
                F[s] -= i
                J[s, s] -= gss
                if g_ >= 0:
                    J[s, g_] -= gm
                if d >= 0:
                    J[s, d] -= gds
        for m in range(src.size):
            node = src[m]
            row = n_nodes + m
            F[node] += x[row]
            J[node, row] += 1.0
            F[row] = x[node] - _pwl(t, m, pwl_t, pwl_v, pwl_off)
            J[row, node] = 1.0
        for k in range(n):
            dx[k] = -F[k]
        fmax = 0.0
        for k in range(n_nodes):
            fmax = max(fmax, abs(F[k]))
        if not _lu_solve(J, dx, piv):
            return False, it + 1
        dv = 0.0
        for k in range(n_nodes):
            dv = max(dv, abs(dx[k]))
        scale = 1.0 if dv <= max_step else max_step / dv
        for k in range(n):
            x[k] += scale * dx[k]
        if dv < tol_v and fmax < tol_i:
            return True, it + 1
    return False, max_newton


@numba.njit(cache=True)
def _cap_currents(x, xprev, icap_prev, h, mode, caps, capv, out):
    for k in range(caps.shape[0]):
        a, b = caps[k, 0], caps[k, 1]
        dv = _volt(x, a) - _volt(x, b) - _volt(xprev, a) + _volt(xprev, b)
        if mode == 2:
            out[k] = 2.0 * capv[k] / h * dv - icap_prev[k]
        else:
            out[k] = capv[k] / h * dv


@numba.njit(cache=True)
def _device_state(x, mos, cards, temps, cur, pw):
    for k in range(mos.shape[0]):
        vd, vg, vs = _volt(x, mos[k, 0]), _volt(x, mos[k, 1]), _volt(x, mos[k, 2])
        i, _, _ = ids_scalar(cards[mos[k, 3]], vg - vs, vd - vs, temps[k])
        cur[k] = i
        pw[k] = abs(i * (vd - vs))


@numba.njit(cache=True)
def _dc(x, n_nodes, mos, cards, temps, caps, capv, res, resg, src, pwl_t, pwl_v, pwl_off,
        tol_v, tol_i, max_step):
    """DC operating point at t = 0 by gmin stepping.

    Returns the smallest gmin that converged (inf if none); ``x`` holds that
    solution.  Nodes isolated by off devices are fixed only by leakage and may
    stop converging below about 1e-10 S.
    """
    dummy = np.zeros(caps.shape[0])
    best = np.inf
    saved = x.copy()
    for e in range(2, 13):
        g = 10.0 ** -e
        ok, _ = _newton(x, x, dummy, 0.0, 1.0, 0, g, n_nodes, mos, cards, temps, caps, capv,
                        res, resg, src, pwl_t, pwl_v, pwl_off, tol_v, tol_i, 200, max_step)
        if not ok:
            break
        best = g
        saved[:] = x
    x[:] = saved
    return best


@numba.njit(cache=True)
def _tran(x0, n_steps, dt, save_every, n_nodes, mos, role, cards, caps, capv, res, resg,
          src, pwl_t, pwl_v, pwl_off, th_r, th_decay, th_n, shmod, ambient, gmin, tol_v, tol_i,
          max_newton, max_step, max_halvings):
    n_dev = mos.shape[0]
    n_pair = th_r.shape[0]
    n_save = n_steps // save_every + 1
    t_out = np.empty(n_save)
    v_out = np.empty((n_save, n_nodes))
    temp_out = np.empty((n_save, n_dev))
    p_out = np.empty((n_save, n_dev))
    i_out = np.empty((n_save, n_dev))

    x = x0.copy()
    xprev = x0.copy()
    xprev2 = x0.copy()
    xs = x0.copy()
    icap_try = np.zeros(caps.shape[0])
    icap = np.zeros(caps.shape[0])
    icap_new = np.zeros(caps.shape[0])
    temps = np.full(n_dev, ambient)
    theta = np.zeros((n_pair, 4, MAX_STAGES))
    cur = np.zeros(n_dev)
    pw = np.zeros(n_dev)
    pw_prev = np.zeros(n_dev)
    _device_state(x, mos, cards, temps, cur, pw_prev)

    t_out[0] = 0.0
    v_out[0, :] = x[:n_nodes]
    temp_out[0, :] = temps
    p_out[0, :] = pw_prev
    _device_state(x, mos, cards, temps, i_out[0], pw)
    save_k = 1
    t = 0.0
    for step in range(1, n_steps + 1):
        t_target = step * dt
        ok = False
        for halving in range(max_halvings + 1):
            n_sub = 1 << halving
            h = dt / n_sub
            xs[:] = xprev
            icap_try[:] = icap
            ok = True
            for sub in range(n_sub):
                mode = 1 if (step == 1 and sub == 0) else 2
                # linear predictor from the last two accepted points
                for k in range(x.size):
                    x[k] = xs[k] + (xprev[k] - xprev2[k]) * (h / dt) if step > 1 else xs[k]
                conv, _ = _newton(x, xs, icap_try, t + (sub + 1) * h, h, mode, gmin, n_nodes, mos,
                                  cards, temps, caps, capv, res, resg, src, pwl_t, pwl_v, pwl_off,
                                  tol_v, tol_i, max_newton, max_step)
                if not conv:
                    ok = False
                    break
                _cap_currents(x, xs, icap_try, h, mode, caps, capv, icap_new)
                icap_try[:] = icap_new
                xs[:] = x
            if ok:
                icap[:] = icap_try
                break
        if not ok:
            return t_out[:save_k], v_out[:save_k], temp_out[:save_k], p_out[:save_k], i_out[:save_k], t_target
        t = t_target
        xprev2[:] = xprev
        xprev[:] = x
        _device_state(x, mos, cards, temps, cur, pw)
        if shmod == 1:
            for p in range(n_pair):
                pn = 0.0
                pp = 0.0
                for k in range(n_dev):
                    if mos[k, 4] == p:
                        avg = 0.5 * (pw[k] + pw_prev[k])
                        if role[k] == 0:
                            pn += avg
                        else:
                            pp += avg
                # ladder order nn, np, pn, pp: the first two are driven by the NFET
                for l in range(4):
                    drive = pn if l < 2 else pp
                    for s in range(th_n[p, l]):
                        dcy = th_decay[p, l, s]
                        theta[p, l, s] = theta[p, l, s] * dcy + drive * th_r[p, l, s] * (1.0 - dcy)
            for k in range(n_dev):
                p = mos[k, 4]
                if p < 0:
                    continue
                rise = 0.0
                # NFET sits at the end of nn and pn; PFET at the end of np and pp
                la, lb = (0, 2) if role[k] == 0 else (1, 3)
                for s in range(th_n[p, la]):
                    rise += theta[p, la, s]
                for s in range(th_n[p, lb]):
                    rise += theta[p, lb, s]
                temps[k] = ambient + rise
        pw_prev[:] = pw
        if step % save_every == 0:
            t_out[save_k] = t
            v_out[save_k, :] = x[:n_nodes]
            temp_out[save_k, :] = temps
            p_out[save_k, :] = pw
            i_out[save_k, :] = cur
            save_k += 1
    return t_out[:save_k], v_out[:save_k], temp_out[:save_k], p_out[:save_k], i_out[:save_k], -1.0


# ------------------------------------------------------------------ front end


@dataclass
class _Compiled:
    nodes: list[str]
    mos: np.ndarray
    role: np.ndarray
    cards: np.ndarray
    caps: np.ndarray
    capv: np.ndarray
    res: np.ndarray
    resg: np.ndarray
    src: np.ndarray
    pwl_t: np.ndarray
    pwl_v: np.ndarray
    pwl_off: np.ndarray
    pairs: list[str]


def _compile(net: Netlist) -> _Compiled:
    net.validate()
    nodes = net.nodes
    index = {n: i for i, n in enumerate(nodes)}
    index[GROUND] = -1
    card_keys = sorted(net.cards)
    card_idx = {k: i for i, k in enumerate(card_keys)}
    pairs = net.pairs
    pair_idx = {p: i for i, p in enumerate(pairs)}
    mos = np.array(
        [[index[m.d], index[m.g], index[m.s], card_idx[m.card], pair_idx.get(m.pair, -1)]
         for m in net.mosfets],
        dtype=np.int64,
    ).reshape(-1, 5)
    role = np.array([0 if m.role == "n" else 1 for m in net.mosfets], dtype=np.int64)
    cards = np.array([net.cards[k].as_array() for k in card_keys]).reshape(-1, 9)
    # lumped gate capacitances become ordinary capacitors
    cap_list = [(c.a, c.b, c.value) for c in net.capacitors]
    for m in net.mosfets:
        p = net.cards[m.card]
        if p.c_gs > 0:
            cap_list.append((m.g, m.s, p.c_gs))
        if p.c_gd > 0:
            cap_list.append((m.g, m.d, p.c_gd))
    cap_list = [c for c in cap_list if c[0] != c[1]]
    caps = np.array([[index[a], index[b]] for a, b, _ in cap_list], dtype=np.int64).reshape(-1, 2)
    capv = np.array([v for *_, v in cap_list], dtype=float)
    res = np.array([[index[r.a], index[r.b]] for r in net.resistors], dtype=np.int64).reshape(-1, 2)
    resg = np.array([1.0 / r.value for r in net.resistors], dtype=float)
    src = np.array([index[v.node] for v in net.sources], dtype=np.int64)
    pwl_t = np.array([p[0] for v in net.sources for p in v.pwl], dtype=float)
    pwl_v = np.array([p[1] for v in net.sources for p in v.pwl], dtype=float)
    pwl_off = np.cumsum([0] + [len(v.pwl) for v in net.sources]).astype(np.int64)
    return _Compiled(nodes, mos, role, cards, caps, capv, res, resg, src, pwl_t, pwl_v, pwl_off, pairs)


def _thermal_arrays(net: Netlist, pairs: list[str], models: dict[str, DevicePairThermalModel] | None,
                    dt: float, shmod: int):
    n = len(pairs)
    r = np.zeros((n, 4, MAX_STAGES))
    decay = np.ones((n, 4, MAX_STAGES))
    order = np.zeros((n, 4), dtype=np.int64)
    if shmod == 0:
        return r, decay, order
    for i, p in enumerate(pairs):
        key = net.pair_models[p]
        if models is None or key not in models:
            raise ValueError(f"no thermal model {key!r} for pair {p!r} with shmod=1")
        model = models[key]
        for l, lad in enumerate(LADDERS):
            net_l = model.ladder(lad)
            if net_l.order > MAX_STAGES:
                raise ValueError(f"ladder {lad} of {key} has more than {MAX_STAGES} stages")
            order[i, l] = net_l.order
            r[i, l, : net_l.order] = net_l.r
            decay[i, l, : net_l.order] = np.exp(-dt / net_l.tau)
    return r, decay, order


def _initial_guess(c: _Compiled, net: Netlist) -> np.ndarray:
    x = np.zeros(len(c.nodes) + c.src.size)
    for v in net.sources:
        x[c.nodes.index(v.node)] = v.value(0.0)
    return x


def dc_op(net: Netlist, temp: float = 300.0, options: SimOptions | None = None) -> dict[str, float]:
    """Operating point with sources at their t = 0 values and all devices at ``temp``."""
    opt = options or SimOptions()
    c = _compile(net)
    x = _initial_guess(c, net)
    temps = np.full(c.mos.shape[0], temp)
    g = _dc(x, len(c.nodes), c.mos, c.cards, temps, c.caps, c.capv, c.res, c.resg, c.src,
            c.pwl_t, c.pwl_v, c.pwl_off, opt.newton_tol_v, opt.newton_tol_i, opt.max_step_v)
    if g > DC_GMIN_MAX:
        raise ConvergenceError("DC operating point did not converge", 0.0)
    return {n: float(x[i]) for i, n in enumerate(c.nodes)}


def tran(net: Netlist, options: SimOptions | None = None,
         thermal: dict[str, DevicePairThermalModel] | None = None) -> TranResult:
    """Fixed-step transient from the DC operating point (plus ``net.initial`` offsets)."""
    opt = options or SimOptions()
    c = _compile(net)
    n_nodes = len(c.nodes)
    x = _initial_guess(c, net)
    temps = np.full(c.mos.shape[0], opt.ambient)
    if _dc(x, n_nodes, c.mos, c.cards, temps, c.caps, c.capv, c.res, c.resg, c.src,
           c.pwl_t, c.pwl_v, c.pwl_off, opt.newton_tol_v, opt.newton_tol_i, opt.max_step_v) > DC_GMIN_MAX:
        raise ConvergenceError("DC operating point did not converge", 0.0)
    for node, dv in net.initial.items():
        x[c.nodes.index(node)] += dv
    th_r, th_decay, th_n = _thermal_arrays(net, c.pairs, thermal, opt.dt, opt.shmod)
    n_steps = int(round(opt.t_stop / opt.dt))
    t, v, temp, p, i, fail = _tran(
        x, n_steps, opt.dt, opt.save_every, n_nodes, c.mos, c.role, c.cards, c.caps, c.capv, c.res,
        c.resg, c.src, c.pwl_t, c.pwl_v, c.pwl_off, th_r, th_decay, th_n, opt.shmod, opt.ambient,
        opt.gmin, opt.newton_tol_v, opt.newton_tol_i, opt.max_newton, opt.max_step_v, MAX_HALVINGS,
    )
    if fail >= 0:
        raise ConvergenceError(f"Newton failed to converge at t={fail:.6e} s after {MAX_HALVINGS} dt halvings",
                               float(fail))
    names = [m.name for m in net.mosfets]
    return TranResult(
        time=t,
        voltages={n: v[:, k].copy() for k, n in enumerate(c.nodes)},
        temperatures={n: temp[:, k].copy() for k, n in enumerate(names)},
        powers={n: p[:, k].copy() for k, n in enumerate(names)},
        currents={n: i[:, k].copy() for k, n in enumerate(names)},
        netlist=net,
        options=opt,
    )
