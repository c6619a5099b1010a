"""Scalar diagnostics of a wave state.

Each function takes the lattice parameters so it can restrict itself to
the box; with ``params=None`` the whole vector counts as the box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .model import LatticeParams, WaveState

__all__ = [
    "ObservableRecord",
    "survival_probability",
    "participation_number",
    "second_moment",
    "first_moment",
    "box_profile",
    "observe",
    "RECORD_COLUMNS",
]

RECORD_COLUMNS = ("t", "p", "pr", "m2")


def _box(state, params):
    c = np.asarray(state.c)
    if params is None:
        n = np.arange(c.size) - (c.size - 1) / 2
        return c, n
    if c.size != params.n_sites:
        raise ParameterError(f"state has {c.size} sites, grid has {params.n_sites}")
    n = np.arange(-params.half_box, params.half_box + 1)
    return c[params.box], n


def box_profile(state: WaveState, params: LatticeParams | None = None) -> np.ndarray:
    """``|c_n|^2`` over the box sites."""
    c, _ = _box(state, params)
    return np.abs(c) ** 2


def survival_probability(state: WaveState, params: LatticeParams | None = None) -> float:
    """Norm left inside the box (absorber sites excluded)."""
    return float(box_profile(state, params).sum())


def participation_number(state: WaveState, params: LatticeParams | None = None) -> float:
    """``1 / sum |c_n|^4`` of the in-box amplitudes renormalized to unit norm."""
    dens = box_profile(state, params)
    total = dens.sum()
    if total <= 0:
        raise ParameterError("participation number undefined for a zero state")
    dens = dens / total
    return float(1.0 / np.dot(dens, dens))


def _moment(state, params, power):
    c, n = _box(state, params)
    dens = np.abs(c) ** 2
    total = dens.sum()
    if total <= 0:
        raise ParameterError("moments undefined for zero in-box norm")
    return float(np.dot(n.astype(float) ** power, dens) / total)


def second_moment(state: WaveState, params: LatticeParams | None = None) -> float:
    """Norm-weighted ``sum n^2 |c_n|^2 / sum |c_n|^2`` over the box."""
    return _moment(state, params, 2)


def first_moment(state: WaveState, params: LatticeParams | None = None) -> float:
    return _moment(state, params, 1)


@dataclass(frozen=True)
class ObservableRecord:
    t: float
    p: float
    pr: float
    m2: float
    profile: np.ndarray | None = None

    def row(self) -> tuple:
        return (self.t, self.p, self.pr, self.m2)


def observe(state: WaveState, params: LatticeParams | None = None,
            with_profile: bool = False) -> ObservableRecord:
    p = survival_probability(state, params)
    if p > 0:
        pr, m2 = participation_number(state, params), second_moment(state, params)
    else:
        pr, m2 = float("nan"), float("nan")
    prof = box_profile(state, params) if with_profile else None
    return ObservableRecord(state.t, p, pr, m2, prof)
