"""Crank-Nicolson time stepping of the DANSE with absorbers.

Each step solves

    (1 + i dt/2 H) c(t+dt) = (1 - i dt/2 H) c(t),

where the nonlinear diagonal of ``H`` is ``g (|c_n(t)|^2 + |c_n(t+dt)|^2) / 2``,
found by fixed-point iteration on ``c(t+dt)``. The same matrix on both
sides keeps the step exactly norm-conserving without absorbers and
conserves the lattice energy; with absorbers the norm can only decrease.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import GeometryError, ParameterError, StepError
from .kernels import get_kernel
from .model import DisorderRealization, LatticeParams, WaveState, absorber_rates

__all__ = [
    "IntegratorConfig",
    "RecordingSchedule",
    "Evolution",
    "step",
    "evolve",
    "energy",
    "suggest_dt",
]


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.05
    nl_iters: int = 10
    nl_tol: float = 1e-10
    max_halvings: int = 8  # evolve() retries a failed step as two half steps, this deep

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt!r}")
        if int(self.nl_iters) < 1:
            raise ParameterError(f"nl_iters must be >= 1, got {self.nl_iters!r}")
        if not self.nl_tol > 0:
            raise ParameterError(f"nl_tol must be positive, got {self.nl_tol!r}")
        if int(self.max_halvings) < 0:
            raise ParameterError("max_halvings must be >= 0")


@dataclass(frozen=True)
class RecordingSchedule:
    times: tuple = ()

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        if any(x <= 0 or not math.isfinite(x) for x in t):
            raise ParameterError("sample times must be positive and finite")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ParameterError("sample times must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return iter(self.times)

    @classmethod
    def log_spaced(cls, t_max: float, per_decade: int = 64, t_min: float = 0.1,
                   cap: int = 400) -> RecordingSchedule:
        """Logarithmic sampling from ``t_min`` to ``t_max``, at most ``cap`` points."""
        if not t_max > t_min > 0:
            raise ParameterError("need 0 < t_min < t_max")
        decades = math.log10(t_max / t_min)
        n = int(round(decades * per_decade)) + 1
        n = max(2, min(n, cap))
        t = np.geomspace(t_min, t_max, n)
        t[-1] = t_max
        return cls(tuple(np.unique(t)))

    @classmethod
    def linear(cls, t_max: float, n: int) -> RecordingSchedule:
        return cls(tuple(np.linspace(t_max / n, t_max, n)))


@dataclass
class Evolution:
    state: WaveState
    times: np.ndarray
    records: dict = field(default_factory=dict)
    halvings: int = 0


def suggest_dt(g: float, max_density: float, dt_max: float = 0.05, kappa: float = 0.25) -> float:
    """Time step keeping ``|g| max|c|^2 dt <= kappa`` (and never above ``dt_max``)."""
    load = abs(g) * max_density
    if load == 0:
        return dt_max
    return min(dt_max, kappa / load)


class _Stepper:
    """Binds the static parts of the problem and the kernel for repeated advances."""

    def __init__(self, dis, params, cfg, backend=None):
        if dis.v.size != params.n_sites:
            raise GeometryError(f"disorder has {dis.v.size} sites, grid has {params.n_sites}")
        self.v = np.ascontiguousarray(dis.v, dtype=float)
        self.gamma = np.ascontiguousarray(absorber_rates(params))
        self.g = float(params.g)
        self.cfg = cfg
        self.kernel = get_kernel(backend)
        self.halvings = 0

    def advance(self, c, dt, nsteps, t0, depth=0):
        """Advance ``c`` in place by ``nsteps * dt``, halving failed steps."""
        cfg = self.cfg
        done = 0
        while done < nsteps:
            k, res, _ = self.kernel(c, self.v, self.gamma, self.g, dt, nsteps - done,
                                    cfg.nl_iters, cfg.nl_tol)
            done += k
            if done < nsteps:
                t_fail = t0 + done * dt
                if depth >= cfg.max_halvings:
                    raise StepError(
                        f"fixed-point iteration failed at t={t_fail:.6g} (dt={dt:.3g}, "
                        f"residual={res:.3g}) after {depth} halvings",
                        t=t_fail, residual=res, dt=dt)
                self.halvings += 1
                self.advance(c, 0.5 * dt, 2, t_fail, depth + 1)
                done += 1


def step(state: WaveState, dis: DisorderRealization, params: LatticeParams,
         cfg: IntegratorConfig = IntegratorConfig(), backend=None) -> WaveState:
    """One Crank-Nicolson step of size ``cfg.dt``; raises StepError on non-convergence."""
    stepper = _Stepper(dis, params, cfg, backend)
    c = np.array(state.c, dtype=complex)
    k, res, _ = stepper.kernel(c, stepper.v, stepper.gamma, stepper.g, cfg.dt, 1,
                               cfg.nl_iters, cfg.nl_tol)
    if k < 1:
        raise StepError(f"fixed-point iteration did not reach {cfg.nl_tol:g} in "
                        f"{cfg.nl_iters} iterations (residual {res:.3g})",
                        t=state.t, residual=res, dt=cfg.dt)
    return WaveState(c, state.t + cfg.dt)


Observer = Callable[[WaveState], object]


def evolve(state: WaveState, dis: DisorderRealization, params: LatticeParams,
           cfg: IntegratorConfig = IntegratorConfig(),
           schedule: RecordingSchedule | None = None,
           observers: Mapping[str, Observer] | None = None,
           t_end: float | None = None, backend=None) -> Evolution:
    """Evolve ``state`` and call every observer at every schedule time.

    Steps of ``cfg.dt`` are taken between sample times, with a shortened last
    step so each sample time is hit exactly. ``t_end`` (default: last sample
    time) may extend the run past the schedule.
    """
    times = tuple(schedule.times) if schedule is not None else ()
    observers = dict(observers or {})
    if times and times[0] <= state.t:
        raise ParameterError(f"first sample time {times[0]} not after state time {state.t}")
    stops = list(times)
    if t_end is not None and (not stops or t_end > stops[-1]):
        stops.append(float(t_end))
    stepper = _Stepper(dis, params, cfg, backend)
    c = np.array(state.c, dtype=complex)
    t = float(state.t)
    dt = cfg.dt
    records = {name: [] for name in observers}
    n_times = len(times)
    for i, target in enumerate(stops):
        span = target - t
        nsteps = int(math.floor(span / dt + 1e-9))
        try:
            if nsteps:
                stepper.advance(c, dt, nsteps, t)
            rem = span - nsteps * dt
            if rem > 1e-12 * max(1.0, target):
                stepper.advance(c, rem, 1, t + nsteps * dt)
        except StepError as exc:
            raise StepError(f"{exc} (evolving from t={state.t:g} towards t={target:g})",
                            t=exc.t, residual=exc.residual, dt=exc.dt) from exc
        t = target
        if i < n_times:
            snap = WaveState(c.copy(), t)
            for name, fn in observers.items():
                records[name].append(fn(snap))
    out = {name: np.asarray(vals) for name, vals in records.items()}
    return Evolution(WaveState(c, t), np.asarray(times, dtype=float), out, stepper.halvings)


def energy(state: WaveState, dis: DisorderRealization, params: LatticeParams) -> float:
    """Hermitian lattice energy ``sum v|c|^2 - 2 Re sum c*_n c_{n+1} + g/2 sum |c|^4``."""
    c = np.asarray(state.c)
    if c.size != dis.v.size:
        raise GeometryError("state and disorder sizes differ")
    dens = np.abs(c) ** 2
    hop = 2.0 * np.vdot(c[:-1], c[1:]).real
    return float(np.dot(dis.v, dens) - hop + 0.5 * params.g * np.dot(dens, dens))
