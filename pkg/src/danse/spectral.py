"""Linear (g = 0) Anderson diagnostics on the box.

Exact diagonalization, per-state localization lengths, disorder-averaged
eigenstate profiles, and the decay of single eigenstates under the
absorbing potential together with the law relating their decay times to
their localization lengths.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import FitError, NoStatesError, ParameterError
from .integrator import IntegratorConfig, RecordingSchedule, evolve
from .model import DisorderRealization, LatticeParams, WaveState, sample_disorder

__all__ = [
    "EigenPair",
    "DecayFit",
    "LocalizationProfile",
    "NO_DECAY",
    "box_hamiltonian_spectrum",
    "diagonalize_anderson",
    "localization_length_estimate",
    "band_index",
    "mean_localization_profile",
    "eigenstate_decay_trace",
    "decay_fit",
    "fit_decay_time",
    "fit_tnu_law",
    "tnu_law_regression",
    "DecayBin",
    "binned_decay",
    "write_spectrum_csv",
]

NO_DECAY = math.inf
PSI2_FLOOR = 1e-12


@dataclass(frozen=True)
class EigenPair:
    E: float
    psi: np.ndarray
    n_center: float
    ell: float


@dataclass(frozen=True)
class DecayFit:
    t_nu: float
    ell_nu: float
    t2: float
    ell_a: float


@dataclass
class DecayBin:
    """Decay of band-centre-nearest eigenstates from one energy bin, pooled over disorder.

    ``alpha`` is the geometric mean of the per-state traces, ``t_nu`` and
    ``r2`` its exponential fit, ``ell_nu`` the median per-state
    localization length and ``ell_a`` the mean distance from the state
    centres to the nearer box edge. ``states`` holds per-state tuples
    ``(seed, E, n_center, ell, t_nu, r2, alpha_end)``.
    """

    E: float
    t: np.ndarray
    alpha: np.ndarray
    t_nu: float
    r2: float
    ell_nu: float
    ell_a: float
    states: list


def box_hamiltonian_spectrum(dis: DisorderRealization, params: LatticeParams):
    """Eigenvalues (ascending) and eigenvectors (columns) of the Hermitian box Hamiltonian."""
    v = np.asarray(dis.v)[params.box]
    return eigh_tridiagonal(v, -np.ones(v.size - 1))


def localization_length_estimate(psi: np.ndarray, sites: np.ndarray, center: float) -> float:
    """``-1/slope`` of ``log|psi|`` against ``|n - center|`` (both wings pooled).

    Only sites with ``|psi|^2 > 1e-12`` enter. Returns ``inf`` when the
    envelope does not decay.
    """
    dens = psi**2 if np.isrealobj(psi) else np.abs(psi) ** 2
    keep = dens > PSI2_FLOOR
    if keep.sum() < 3:
        return NO_DECAY
    d = np.abs(sites[keep] - center)
    y = 0.5 * np.log(dens[keep])
    d0 = d - d.mean()
    denom = float(d0 @ d0)
    if denom == 0:
        return NO_DECAY
    slope = float(d0 @ (y - y.mean())) / denom
    return -1.0 / slope if slope < 0 else NO_DECAY


def diagonalize_anderson(dis: DisorderRealization, params: LatticeParams) -> list[EigenPair]:
    """Full spectrum of the box Hamiltonian (no absorber, no nonlinearity), sorted by E."""
    E, vecs = box_hamiltonian_spectrum(dis, params)
    sites = np.arange(-params.half_box, params.half_box + 1, dtype=float)
    dens = vecs**2
    centers = sites @ dens
    out = []
    for k in range(E.size):
        psi = vecs[:, k].copy()
        psi.setflags(write=False)
        out.append(EigenPair(float(E[k]), psi, float(centers[k]),
                             localization_length_estimate(psi, sites, centers[k])))
    return out


def band_index(E):
    """Band position ``nu = q - pi/2`` with ``E = -2 cos q``; clamped outside [-2, 2]."""
    q = np.arccos(np.clip(-np.asarray(E, float) / 2.0, -1.0, 1.0))
    nu = q - np.pi / 2
    return nu if np.ndim(nu) else float(nu)


@dataclass
class LocalizationProfile:
    distance: np.ndarray
    profile: np.ndarray
    counts: np.ndarray
    ell: float
    n_states: int
    fit_range: tuple


def mean_localization_profile(realizations, params: LatticeParams, window: tuple,
                              fit_range: tuple | None = None,
                              average: str = "log") -> LocalizationProfile:
    """Average ``|psi|^2`` of eigenstates with ``E`` in ``window`` aligned on their centres.

    The decay rate of the averaged profile ``~ exp(-2|d|/ell)`` over
    ``fit_range`` (default ``2 <= |d| <= L/4``) gives ``ell``. The default
    ``average="log"`` takes the geometric mean (typical profile), which
    tracks the Lyapunov exponent; ``"arithmetic"`` is dominated by the few
    most extended states and overestimates ``ell`` at stronger disorder.
    """
    if average not in ("arithmetic", "log"):
        raise ParameterError("average must be 'arithmetic' or 'log'")
    e_lo, e_hi = window
    L = params.L
    size = 2 * L - 1
    acc = np.zeros(size)
    counts = np.zeros(size)
    n_states = 0
    idx = np.arange(L)
    for dis in realizations:
        E, vecs = box_hamiltonian_spectrum(dis, params)
        sel = np.nonzero((E >= e_lo) & (E < e_hi))[0]
        if not sel.size:
            continue
        dens = vecs[:, sel] ** 2
        centers = np.rint((idx @ dens)).astype(int)
        for j, c0 in enumerate(centers):
            pos = idx - c0 + (L - 1)
            col = dens[:, j]
            if average == "log":
                col = np.log(np.maximum(col, 1e-300))
            acc[pos] += col
            counts[pos] += 1
        n_states += sel.size
    if n_states == 0:
        raise NoStatesError(f"no eigenstates with {e_lo} <= E < {e_hi}")
    d = np.arange(size) - (L - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        prof = acc / counts
    if average == "log":
        prof = np.exp(prof)
    if fit_range is None:
        fit_range = (2, L // 4)
    ad = np.abs(d)
    use = (ad >= fit_range[0]) & (ad <= fit_range[1]) & (counts > 0) & (prof > 0)
    x = ad[use].astype(float)
    y = np.log(prof[use])
    slope = np.polyfit(x, y, 1)[0]
    ell = -2.0 / slope if slope < 0 else NO_DECAY
    return LocalizationProfile(d, prof, counts, ell, n_states, tuple(fit_range))


def eigenstate_decay_trace(pair: EigenPair, dis: DisorderRealization, params: LatticeParams,
                           cfg: IntegratorConfig, schedule: RecordingSchedule, backend=None):
    """``|<nu|psi(t)>|`` for an eigenstate evolved with the absorbers switched on.

    Returns ``(times, alpha)`` on the schedule.
    """
    if params.g != 0:
        raise ParameterError("eigenstate decay is defined for g = 0")
    c = np.zeros(params.n_sites, dtype=complex)
    c[params.box] = pair.psi
    psi = np.asarray(pair.psi, float)
    box = params.box
    ev = evolve(WaveState(c, 0.0), dis, params, cfg, schedule,
                {"alpha": lambda s: abs(np.dot(psi, s.c[box]))}, backend=backend)
    return ev.times, ev.records["alpha"]


def binned_decay(params: LatticeParams, energies, n_states: int, cfg: IntegratorConfig,
                 schedule: RecordingSchedule, master_seed: int = 0, half_width: float = 0.15,
                 backend=None) -> list[DecayBin]:
    """Disorder-averaged eigenstate decay for each energy in ``energies``.

    Realization ``i`` (disorder seeds shared across bins) contributes the
    eigenstate with ``abs(|E| - E_bin) < half_width`` whose centre lies
    closest to the middle of the box.
    """
    from .ensemble import realization_seeds

    seeds = [realization_seeds(master_seed, i)[0] for i in range(n_states)]
    disorder = [sample_disorder(params, s) for s in seeds]
    spectra = [diagonalize_anderson(d, params) for d in disorder]
    edge = params.L / 2.0
    out = []
    for e_bin in energies:
        logs, states = [], []
        t = None
        for seed, dis, pairs in zip(seeds, disorder, spectra):
            cand = [p for p in pairs if abs(abs(p.E) - e_bin) < half_width]
            if not cand:
                continue
            pair = min(cand, key=lambda p: abs(p.n_center))
            t, a = eigenstate_decay_trace(pair, dis, params, cfg, schedule, backend)
            t_nu, r2, _ = decay_fit(t, a)
            logs.append(np.log(a))
            states.append((seed, pair.E, pair.n_center, pair.ell, t_nu, r2, float(a[-1])))
        if not states:
            raise NoStatesError(f"no eigenstates near |E| = {e_bin}")
        alpha = np.exp(np.mean(logs, axis=0))
        t_nu, r2, _ = decay_fit(t, alpha)
        ells = np.array([s[3] for s in states])
        dist = edge - np.abs([s[2] for s in states])
        out.append(DecayBin(float(e_bin), t, alpha, t_nu, r2, float(np.median(ells)),
                            float(np.mean(dist)), states))
    return out


def _linfit(x, y):
    x0 = x - x.mean()
    sxx = float(x0 @ x0)
    slope = float(x0 @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, r2


def decay_fit(t, alpha, window=(0.1, 0.9)):
    """Exponential fit ``alpha ~ exp(-t / 2 t_nu)``; returns ``(t_nu, r2, n_points)``.

    Uses the samples with ``alpha`` inside ``window``; if fewer than three,
    the last decade of the trace. A non-decaying trace gives ``t_nu = inf``.
    """
    t = np.asarray(t, float)
    a = np.asarray(alpha, float)
    if np.any(a <= 0):
        raise ParameterError("decay trace must be strictly positive")
    use = (a >= window[0]) & (a <= window[1])
    if use.sum() < 3:
        use = t >= t[-1] / 10.0
    if use.sum() < 2:
        return NO_DECAY, math.nan, int(use.sum())
    x, y = t[use], np.log(a[use])
    if np.ptp(y) == 0:
        return NO_DECAY, 1.0, int(use.sum())
    slope, _, r2 = _linfit(x, y)
    if slope >= 0:
        return NO_DECAY, r2, int(use.sum())
    return -1.0 / (2.0 * slope), r2, int(use.sum())


def fit_decay_time(t, alpha, window=(0.1, 0.9)) -> float:
    """Attenuation time ``t_nu`` of an eigenstate decay trace (``inf`` if no decay)."""
    return decay_fit(t, alpha, window)[0]


def _pairs_array(pairs):
    arr = np.array([(float(a), float(b)) for a, b in pairs], dtype=float).reshape(-1, 2)
    ok = np.isfinite(arr).all(axis=1) & (arr > 0).all(axis=1)
    return arr[ok]


def fit_tnu_law(pairs, ell_a: float, ell_0: float) -> float:
    """``t2`` of ``t_nu = t2 exp[2 ell_a (1/ell_nu - 1/ell_0)]`` by log-space least squares.

    ``pairs`` holds ``(t_nu, ell_nu)``; non-finite entries are dropped.
    """
    arr = _pairs_array(pairs)
    if arr.shape[0] < 5:
        raise FitError(f"need at least 5 finite (t_nu, ell_nu) pairs, got {arr.shape[0]}")
    if np.ptp(arr[:, 1]) == 0:
        raise FitError("all pairs share the same localization length")
    log_t2 = np.log(arr[:, 0]) - 2.0 * ell_a * (1.0 / arr[:, 1] - 1.0 / ell_0)
    return float(math.exp(log_t2.mean()))


def tnu_law_regression(pairs):
    """Unconstrained fit ``log t_nu = a + b / ell_nu``; returns ``(b, a, r2)``."""
    arr = _pairs_array(pairs)
    if arr.shape[0] < 3 or np.ptp(arr[:, 1]) == 0:
        raise FitError("degenerate (t_nu, ell_nu) set")
    return _linfit(1.0 / arr[:, 1], np.log(arr[:, 0]))


def write_spectrum_csv(path, rows) -> Path:
    """Write ``(seed, index, E, n_center, ell)`` rows with a header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "index", "E", "n_center", "ell"])
        for row in rows:
            w.writerow(row)
    return path
