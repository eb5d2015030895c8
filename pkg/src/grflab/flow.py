"""Generalized Ricci flow, its -grad f gauge-fixed variant, and an adaptive integrator.

    d/dt g = -2 Rc + H^2 / 2,            d/dt b = -d*H
    gauged:  d/dt g = -2 (Rc - H^2/4 + Hess f),  d/dt b = -(d*H + i_{grad f} H)

The integrator is the Dormand-Prince 5(4) pair with a PI step-size
controller. lambda is recomputed at snapshots and checked for monotonicity.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import calculus as calc
from .curvature import dstar_H, levi_civita_pack, ricci, soliton_residual
from .errors import InputError
from .spectral import compute_lambda
from .tensors import h_square, sym

log = logging.getLogger(__name__)

POSITIVITY_FLOOR = 1e-8


class Tangent(NamedTuple):
    dg: np.ndarray
    db: np.ndarray


def grf_rhs(state) -> Tangent:
    H = state.H
    return Tangent(-2.0 * ricci(state) + 0.5 * sym(h_square(H, state.ginv)), -dstar_H(state))


def gauged_rhs(state, f) -> Tangent:
    pack = levi_civita_pack(state)
    _, gradf = calc.grad(state, f)
    dg = -2.0 * (pack.Rc - 0.25 * pack.Hsq + calc.hessian(state, f))
    db = -(pack.dstarH + calc.interior(gradf, state.H, 3))
    return Tangent(dg, db)


def grad_norm_sq(state, f):
    """int (2 |Rc - H^2/4 + Hess f|^2 + |d*H + i_{grad f} H|^2 / 2) e^{-f} dV."""
    res = soliton_residual(state, f)
    return 2.0 * res.metric_l2 ** 2 + 0.5 * res.form_l2 ** 2


@dataclass
class FlowConfig:
    t_end: float = 1.0
    dt_init: float = 1e-3
    dt_min: float = 1e-10
    dt_max: float = 0.1
    tol: float = 1e-8
    gauge: str = "none"
    snapshot_every: int = 5
    max_steps: int = 100000
    stationary_tol: float = 1e-12
    stop_residual: float = None

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise InputError("need 0 < dt_min <= dt_init <= dt_max")
        if self.tol <= 0:
            raise InputError("tol must be positive")
        if self.t_end <= 0:
            raise InputError("t_end must be positive")
        if self.gauge not in ("none", "gradient_f"):
            raise InputError(f"unknown gauge {self.gauge!r}")
        if self.snapshot_every < 1:
            raise InputError("snapshot_every must be >= 1")

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        extra = set(d) - set(known)
        if extra:
            raise InputError(f"unknown flow config keys: {sorted(extra)}")
        return cls(**known)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class FlowTrajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    min_eigs: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    step_stats: dict = field(default_factory=lambda: {"accepted": 0, "rejected": 0, "dt": []})
    reason: str = "t_end"
    stationary: bool = False
    monotone_violations: list = field(default_factory=list)
    last_good: object = None

    @property
    def final_state(self):
        return self.states[-1]

    def rows(self):
        """(t, lambda, grad_norm_sq, min_eig_g, dt) per snapshot."""
        return list(zip(self.times, self.lambdas, self.grad_norms, self.min_eigs, self.dts))

    def dlambda_dt(self):
        """Three-point derivative of lambda(t) at interior snapshots (nonuniform spacing)."""
        t = np.asarray(self.times)
        lam = np.asarray(self.lambdas)
        out = []
        for i in range(1, len(t) - 1):
            h1, h2 = t[i] - t[i - 1], t[i + 1] - t[i]
            d = (-h2 / (h1 * (h1 + h2)) * lam[i - 1] + (h2 - h1) / (h1 * h2) * lam[i]
                 + h1 / (h2 * (h1 + h2)) * lam[i + 1])
            out.append((t[i], d, self.grad_norms[i]))
        return out

    def empirical_rate(self):
        """Least-squares slope of log(residual) against t over the second half of the run."""
        t = np.asarray(self.times)
        r = np.asarray(self.residuals)
        ok = r > 0
        t, r = t[ok], r[ok]
        if len(t) < 4:
            return None
        half = len(t) // 2
        A = np.vstack([t[half:], np.ones(len(t) - half)]).T
        slope, _ = np.linalg.lstsq(A, np.log(r[half:]), rcond=None)[0]
        return float(-slope)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class _Breakdown(Exception):
    pass


class _Stepper:
    def __init__(self, state0, cfg: FlowConfig):
        self.base = state0
        self.cfg = cfg
        self.frame = state0.backend.grid_shape == ()
        self.gshape = np.shape(state0.g)
        self.ng = int(np.prod(self.gshape))

    def pack(self, state):
        return np.concatenate([np.ravel(state.g), np.ravel(state.b)])

    def unpack(self, y):
        g = y[: self.ng].reshape(self.gshape)
        b = y[self.ng:].reshape(self.gshape)
        g = 0.5 * (g + np.swapaxes(g, -1, -2))
        b = 0.5 * (b - np.swapaxes(b, -1, -2))
        eig = np.linalg.eigvalsh(g)
        if np.min(eig) < POSITIVITY_FLOOR:
            raise _Breakdown(f"metric eigenvalue {np.min(eig):.3e} below {POSITIVITY_FLOOR:.0e}")
        return self.base.replace(g=g, b=b)

    def rhs(self, y):
        st = self.unpack(y)
        if self.cfg.gauge == "gradient_f":
            f = compute_lambda(st).f
            tg = gauged_rhs(st, f)
        else:
            tg = grf_rhs(st)
        return np.concatenate([np.ravel(tg.dg), np.ravel(tg.db)])

    def step(self, y, k1, dt):
        ks = [k1]
        for s in range(1, 7):
            ys = y + dt * sum(a * k for a, k in zip(_A[s], ks))
            ks.append(self.rhs(ys))
        y5 = y + dt * sum(b * k for b, k in zip(_B5, ks))
        err = dt * sum((b5 - b4) * k for b5, b4, k in zip(_B5, _B4, ks))
        scale = self.cfg.tol + self.cfg.tol * np.maximum(np.abs(y), np.abs(y5))
        enorm = float(np.sqrt(np.mean((err / scale) ** 2)))
        return y5, ks[-1], enorm


def _observe(state, traj: FlowTrajectory, t, dt):
    res = compute_lambda(state)
    sres = soliton_residual(state, res.f)
    traj.times.append(float(t))
    traj.states.append(state)
    traj.lambdas.append(res.lam)
    traj.grad_norms.append(2.0 * sres.metric_l2 ** 2 + 0.5 * sres.form_l2 ** 2)
    traj.residuals.append(sres.total)
    traj.min_eigs.append(state.min_metric_eigenvalue())
    traj.dts.append(float(dt))


def integrate(state0, cfg: FlowConfig = None, callback=None) -> FlowTrajectory:
    """Adaptive Dormand-Prince integration with lambda snapshots.

    Stops cleanly at t_end, on metric degeneration ('breakdown'), on step-size
    underflow ('dt_underflow'), or once the soliton residual drops below
    ``cfg.stop_residual`` ('converged').
    """
    cfg = cfg or FlowConfig()
    stepper = _Stepper(state0, cfg)
    traj = FlowTrajectory()
    wall = time.perf_counter()
    y = stepper.pack(state0)
    k1 = stepper.rhs(y)
    _observe(state0, traj, 0.0, 0.0)
    traj.last_good = state0
    if float(np.max(np.abs(k1))) <= cfg.stationary_tol:
        traj.stationary = True
        traj.reason = "stationary"
        return traj
    t, dt = 0.0, cfg.dt_init
    err_prev = 1.0
    accepted = 0
    mono_tol = lambda lam: 1e-9 * (1.0 + abs(lam))
    while t < cfg.t_end * (1 - 1e-14):
        if accepted >= cfg.max_steps:
            traj.reason = "max_steps"
            break
        dt = min(dt, cfg.t_end - t, cfg.dt_max)
        try:
            y_new, k_last, enorm = stepper.step(y, k1, dt)
            st_new = stepper.unpack(y_new) if enorm <= 1.0 else None
        except _Breakdown as exc:
            if dt <= cfg.dt_min * (1 + 1e-12):
                traj.reason = f"breakdown: {exc}"
                break
            dt = max(cfg.dt_min, 0.25 * dt)
            traj.step_stats["rejected"] += 1
            continue
        if enorm <= 1.0:
            t += dt
            y, k1 = y_new, k_last
            accepted += 1
            traj.step_stats["accepted"] += 1
            traj.step_stats["dt"].append(dt)
            traj.last_good = st_new
            if accepted % cfg.snapshot_every == 0 or t >= cfg.t_end * (1 - 1e-14):
                _observe(st_new, traj, t, dt)
                lam0, lam1 = traj.lambdas[-2], traj.lambdas[-1]
                if lam1 < lam0 - mono_tol(lam0):
                    traj.monotone_violations.append((traj.times[-2], t, lam1 - lam0))
                if callback is not None:
                    callback(traj)
                if cfg.stop_residual is not None and traj.residuals[-1] < cfg.stop_residual:
                    traj.reason = "converged"
                    break
            # PI controller (Gustafsson): exponents 0.7/5 and 0.4/5
            e = max(enorm, 1e-10)
            fac = 0.9 * e ** (-0.7 / 5) * err_prev ** (0.4 / 5)
            dt = dt * min(5.0, max(0.2, fac))
            err_prev = e
        else:
            traj.step_stats["rejected"] += 1
            dt = dt * max(0.2, 0.9 * enorm ** (-1 / 5))
        if dt < cfg.dt_min:
            traj.reason = "dt_underflow"
            break
    if not traj.times or traj.times[-1] < t:
        _observe(traj.last_good, traj, t, dt)
    traj.step_stats["wall_time"] = time.perf_counter() - wall
    log.info("flow finished: %s after %d steps", traj.reason, accepted)
    return traj
