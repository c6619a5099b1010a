"""Analytic survival-probability models, their least-squares fit, and the
scaling analysis of the fitted effective wavepacket length.

The loss model counts the eigenstates that are still inside the box at
time ``t``: a state of localization length ``ell`` is absorbed after a time
growing like ``exp(2 ell_a / ell)``, and with a flat density of states in
quasimomentum the surviving fraction is ``2 q_m / pi`` where
``sin^2 q_m = ell(t) / ell_0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, GeometryError, ParameterError, WindowError

__all__ = [
    "FitResult",
    "ScaledPoint",
    "CollapseReport",
    "Crossovers",
    "effective_absorber_distance",
    "model_p_nonlinear",
    "model_p_linear",
    "surviving_length",
    "max_quasimomentum",
    "survival_objective",
    "fit_survival",
    "scale_point",
    "unscale_point",
    "collapse_quality",
    "detect_crossovers",
]

P_HIGH = 0.98
P_LOW = 0.02
MIN_POINTS = 10


def effective_absorber_distance(L: float, L0: float, ell_0: float) -> float:
    """Effective distance from the initial packet to the absorbers, in sites."""
    ell_a = 0.5 * (L / 2.0 - L0 / 4.0 - ell_0 / 5.0)
    if not ell_a > 0:
        raise GeometryError(f"box too small: ell_a = {ell_a:g} for L={L}, L0={L0}, ell_0={ell_0:g}")
    return ell_a


def _check_positive(**kw):
    for k, v in kw.items():
        if not np.all(np.asarray(v) > 0):
            raise ParameterError(f"{k} must be positive, got {v!r}")


def model_p_nonlinear(t, ell_eff, t2, ell_a):
    """Survival probability with effective length ``ell_eff`` (1 for ``t <= t2``)."""
    _check_positive(ell_eff=ell_eff, t2=t2, ell_a=ell_a)
    t = np.asarray(t, dtype=float)
    y = np.log(np.maximum(t, t2) / t2)
    x = 2.0 * ell_a / (ell_eff * y + 2.0 * ell_a)
    p = (2.0 / np.pi) * np.arcsin(np.sqrt(x))
    p = np.clip(p, 0.0, 1.0)
    return p if p.ndim else float(p)


def surviving_length(t, ell_0, t2, ell_a):
    """Largest localization length still surviving at time ``t``."""
    t = np.asarray(t, dtype=float)
    return 2.0 * ell_a / (np.log(np.maximum(t, t2) / t2) + 2.0 * ell_a / ell_0)


def max_quasimomentum(t, ell_0, t2, ell_a):
    """``q_m`` in ``[0, pi/2]`` with ``ell_0 sin^2 q_m = ell(t)``."""
    t = np.asarray(t, dtype=float)
    y = np.log(np.maximum(t, t2) / t2)
    ratio = np.minimum(2.0 * ell_a / (ell_0 * y + 2.0 * ell_a), 1.0)
    return np.arcsin(np.sqrt(ratio))


def model_p_linear(t, ell_0, t2, ell_a):
    """Linear-regime survival probability ``2 q_m / pi``."""
    _check_positive(ell_0=ell_0, t2=t2, ell_a=ell_a)
    p = np.clip(2.0 * max_quasimomentum(t, ell_0, t2, ell_a) / np.pi, 0.0, 1.0)
    return p if np.ndim(p) else float(p)


def _model_and_jac(t, log_ell, log_t2, ell_a):
    ell = math.exp(log_ell)
    t2 = math.exp(log_t2)
    y = np.log(t / t2)
    active = y > 0
    y = np.where(active, y, 0.0)
    den = ell * y + 2.0 * ell_a
    x = 2.0 * ell_a / den
    p = (2.0 / np.pi) * np.arcsin(np.sqrt(x))
    # dp/dx = 1 / (pi sqrt(x (1 - x))); guard x -> 1 at y -> 0
    dpdx = np.where(active, 1.0 / (np.pi * np.sqrt(np.maximum(x * (1.0 - x), 1e-300))), 0.0)
    common = dpdx * 2.0 * ell_a * ell / den**2
    jac = np.column_stack([-common * y, common])
    return p, jac


def survival_objective(t, p, sigma, ell_eff, t2, ell_a) -> float:
    """Weighted sum of squared residuals of the nonlinear model."""
    r = (np.asarray(p) - model_p_nonlinear(t, ell_eff, t2, ell_a)) / sigma
    return float(np.dot(r, r))


@dataclass
class FitResult:
    ell_eff: float
    t2: float
    ell_a: float
    rms: float
    t_min: float
    t_max: float
    converged: bool
    n_points: int = 0
    cost: float = float("nan")
    grid_min_cost: float = float("nan")
    flags: tuple = ()
    window_passes: int = 0

    def as_row(self) -> dict:
        return {"ell_eff": self.ell_eff, "t2": self.t2, "ell_a": self.ell_a,
                "residual": self.rms, "t_min": self.t_min, "t_max": self.t_max,
                "converged": self.converged, "n_points": self.n_points,
                "flags": "|".join(self.flags)}


def _unpack(trace):
    if hasattr(trace, "p_mean"):
        return np.asarray(trace.t, float), np.asarray(trace.p_mean, float), np.asarray(trace.p_stderr, float)
    t, p, *rest = trace
    s = rest[0] if rest else np.zeros_like(np.asarray(p, float))
    return np.asarray(t, float), np.asarray(p, float), np.asarray(s, float)


def _sigmas(stderr):
    if not np.any(stderr > 0):
        return np.ones_like(stderr)
    floor = stderr[stderr > 0].min()
    return np.where(stderr > 0, stderr, floor)


def _lm(t, p, sigma, theta0, ell_a, free, max_iter=300):
    """Damped Gauss-Newton (Levenberg-Marquardt) in (log ell, log t2)."""
    theta = np.array(theta0, float)

    def resid(th):
        m, jac = _model_and_jac(t, th[0], th[1], ell_a)
        return (p - m) / sigma, -jac[:, free] / sigma[:, None]

    r, J = resid(theta)
    cost = float(r @ r)
    grad = J.T @ r
    g0 = float(np.linalg.norm(grad))
    lam = 1e-3
    converged = g0 == 0.0
    for _ in range(max_iter):
        if converged:
            break
        A = J.T @ J
        D = np.diag(np.maximum(np.diag(A), 1e-300))
        try:
            delta = np.linalg.solve(A + lam * D, -grad)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        trial = theta.copy()
        trial[free] += delta
        r_new, J_new = resid(trial)
        new_cost = float(r_new @ r_new)
        if new_cost <= cost:
            step_small = np.all(np.abs(delta) < 1e-15 * (1 + np.abs(theta[free])))
            theta, r, J, cost = trial, r_new, J_new, new_cost
            grad = J.T @ r
            lam = max(lam / 3.0, 1e-12)
            if np.linalg.norm(grad) <= 1e-8 * g0 or cost == 0.0:
                converged = True
            elif step_small:
                break
        else:
            lam *= 4.0
            if lam > 1e16:
                break
    return theta, cost, converged or float(np.linalg.norm(grad)) <= 1e-8 * g0


def _grid_search(t, p, sigma, ell_a, fixed_ell=None, n=61):
    log_t = np.log(t)
    t2_grid = np.exp(np.linspace(log_t[0] - math.log(1e4), log_t[-1], n))
    ell_grid = np.array([fixed_ell]) if fixed_ell is not None else np.geomspace(0.1, 1e4, n)
    best = (math.inf, None, None)
    for t2 in t2_grid:
        y = np.log(np.maximum(t, t2) / t2)
        x = 2.0 * ell_a / (np.outer(ell_grid, y) + 2.0 * ell_a)
        m = (2.0 / np.pi) * np.arcsin(np.sqrt(x))
        costs = (((p - m) / sigma) ** 2).sum(axis=1)
        i = int(np.argmin(costs))
        if costs[i] < best[0]:
            best = (float(costs[i]), ell_grid[i], t2)
    return best


def _fit_window(t, p, sigma, ell_a, fixed_ell):
    grid_cost, ell0, t20 = _grid_search(t, p, sigma, ell_a, fixed_ell)
    free = np.array([fixed_ell is None, True])
    theta, cost, conv = _lm(t, p, sigma, [math.log(ell0), math.log(t20)], ell_a, free)
    ell = fixed_ell if fixed_ell is not None else math.exp(theta[0])
    return ell, math.exp(theta[1]), cost, grid_cost, conv


def fit_survival(trace, ell_a: float, ell_0: float | None = None,
                 fixed_ell: float | None = None, max_passes: int = 20) -> FitResult:
    """Fit ``(ell_eff, t2)`` of the nonlinear survival model to a survival trace.

    ``trace`` is a :class:`~danse.ensemble.SurvivalTrace` or a ``(t, p[, stderr])``
    tuple. Points with ``0.02 < p < 0.98`` are used; the window is then
    narrowed to ``t > 10 t2`` and refit until ``t2`` moves by less than 5%.
    With ``fixed_ell`` only ``t2`` is fitted (the linear model with
    ``ell_0 = fixed_ell``). A trace that never drops below 0.98 yields a
    no-loss result with ``ell_eff = ell_0`` and ``t2 = inf``.
    """
    _check_positive(ell_a=ell_a)
    t, p, s = _unpack(trace)
    valid = (t > 0) & np.isfinite(p)
    t, p, s = t[valid], p[valid], s[valid]
    if t.size == 0:
        raise WindowError("empty trace")
    if np.min(p) >= P_HIGH:
        if ell_0 is None and fixed_ell is None:
            raise FitError("trace shows no losses and no ell_0 was given")
        ell = fixed_ell if fixed_ell is not None else ell_0
        return FitResult(ell, math.inf, ell_a, 0.0, float(t[0]), float(t[-1]), False,
                         flags=("no-loss",))
    base = (p > P_LOW) & (p < P_HIGH)
    if base.sum() < MIN_POINTS:
        raise WindowError(f"only {int(base.sum())} points with {P_LOW} < p < {P_HIGH}; need {MIN_POINTS}")
    sigma_all = _sigmas(s)
    flags = []
    mask = base
    prev_t2 = None
    result = None
    passes = 0
    for passes in range(1, max_passes + 1):
        ell, t2, cost, grid_cost, conv = _fit_window(t[mask], p[mask], sigma_all[mask], ell_a, fixed_ell)
        n = int(mask.sum())
        result = FitResult(ell, t2, ell_a, math.sqrt(cost / n), float(t[mask][0]), float(t[mask][-1]),
                           conv, n, cost, grid_cost)
        if prev_t2 is not None and abs(t2 - prev_t2) < 0.05 * prev_t2:
            break
        new_mask = base & (t > 10.0 * t2)
        if new_mask.sum() < MIN_POINTS:
            flags.append("short-window")
            break
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
        prev_t2 = t2
    else:
        flags.append("window-not-settled")
    if not result.converged:
        flags.append("unconverged")
    result.flags = tuple(flags)
    result.window_passes = passes
    return result


# scaling ------------------------------------------------------------------

SCALING_EXPONENT = 0.75


@dataclass(frozen=True)
class ScaledPoint:
    g_tilde: float
    ell_tilde: float
    g: float
    W: float
    L0: int
    ell_eff: float


def scale_point(g: float, W: float, L0: int, ell_eff: float) -> ScaledPoint:
    """``g L0^-3/4`` and ``ell_eff L0^-3/4``."""
    if L0 < 1:
        raise ParameterError("L0 must be >= 1")
    f = float(L0) ** -SCALING_EXPONENT
    return ScaledPoint(g * f, ell_eff * f, g, W, int(L0), ell_eff)


def unscale_point(pt: ScaledPoint) -> tuple[float, float]:
    f = float(pt.L0) ** SCALING_EXPONENT
    return pt.g_tilde * f, pt.ell_tilde * f


@dataclass
class CollapseReport:
    bins: np.ndarray
    cv_scaled: np.ndarray
    cv_unscaled: np.ndarray
    g_matched: np.ndarray
    n_groups: np.ndarray
    skipped: np.ndarray
    groups: tuple = ()

    def populated(self) -> np.ndarray:
        return ~self.skipped


def _curves(points, scaled):
    groups = {}
    for pt in points:
        x, y = (pt.g_tilde, pt.ell_tilde) if scaled else (pt.g, pt.ell_eff)
        if x > 0 and y > 0:
            groups.setdefault(pt.L0, []).append((x, y))
    out = {}
    for L0, xy in groups.items():
        xy = sorted(xy)
        xs = np.log([a for a, _ in xy])
        ys = np.log([b for _, b in xy])
        out[L0] = (xs, ys)
    return out


def _interp_all(curves, x):
    vals = []
    lx = math.log(x)
    for xs, ys in curves.values():
        if xs.size and xs[0] - 1e-12 <= lx <= xs[-1] + 1e-12:
            vals.append(math.exp(np.interp(lx, xs, ys)))
    return np.array(vals)


def _cv(vals):
    return float(np.std(vals) / np.mean(vals))


def collapse_quality(points, bins=None, g_range=(1.0, 5.0), n_bins=5) -> CollapseReport:
    """Cross-L0 coefficient of variation of ``ell_tilde`` per ``g_tilde`` bin.

    Each L0 group is interpolated linearly in (log g, log ell). The unscaled
    contrast compares ``ell_eff`` across groups at the raw ``g`` matching the
    bin through the geometric-mean L0. Bins covered by fewer than two groups
    are skipped.
    """
    points = list(points)
    L0s = sorted({pt.L0 for pt in points})
    if len(L0s) < 2:
        raise ParameterError("need at least two L0 groups")
    if bins is None:
        bins = np.geomspace(g_range[0], g_range[1], n_bins)
    bins = np.asarray(bins, float)
    L_ref = math.exp(np.mean(np.log(L0s)))
    g_matched = bins * L_ref**SCALING_EXPONENT
    scaled = _curves(points, True)
    raw = _curves(points, False)
    cv_s, cv_u, ng, skipped = [], [], [], []
    for b, gm in zip(bins, g_matched):
        vs = _interp_all(scaled, b)
        vu = _interp_all(raw, gm)
        ok = vs.size >= 2 and vu.size >= 2
        ng.append(vs.size)
        skipped.append(not ok)
        cv_s.append(_cv(vs) if ok else math.nan)
        cv_u.append(_cv(vu) if ok else math.nan)
    return CollapseReport(bins, np.array(cv_s), np.array(cv_u), g_matched, np.array(ng),
                          np.array(skipped), tuple(L0s))


@dataclass
class Crossovers:
    g_c: float | None
    g_c_bounds: tuple | None
    g_st: float | None
    g_st_bounds: tuple | None
    plateau: float
    flags: tuple = field(default_factory=tuple)


def detect_crossovers(g_tilde, ell_tilde, plateau: float | None = None,
                      rise: float = 0.2) -> Crossovers:
    """Locate the chaotic (``g_c``) and self-trapping (``g_st``) crossovers.

    ``g_c`` is the smallest ``g_tilde`` whose ``ell_tilde`` exceeds the
    small-g plateau by ``rise`` (20%); ``g_st`` is the position of the
    maximum of ``ell_tilde``. Bounds are the neighbouring grid values.
    The plateau defaults to the value at the smallest ``g_tilde`` (which may
    be a g = 0 point).
    """
    g = np.asarray(g_tilde, float)
    ell = np.asarray(ell_tilde, float)
    order = np.argsort(g)
    g, ell = g[order], ell[order]
    flags = []
    if g.size == 0:
        raise ParameterError("empty curve")
    if plateau is None:
        plateau = float(ell[0])
    positive = g[g > 0]
    if positive.size == 0 or positive[0] > 0.01 or positive[-1] < 50:
        flags.append("narrow-span")

    def bounds(i):
        lo = g[i - 1] if i > 0 else g[i]
        hi = g[i + 1] if i + 1 < g.size else g[i]
        return (float(lo), float(hi))

    above = np.nonzero(ell > (1.0 + rise) * plateau)[0]
    if above.size:
        i = int(above[0])
        g_c, g_c_b = float(g[i]), bounds(i)
    else:
        g_c, g_c_b = None, None
        flags.append("no-rise")
    i = int(np.argmax(ell))
    if g.size < 3 or i == g.size - 1 or i == 0:
        g_st, g_st_b = None, None
        flags.append("no-maximum")
    else:
        g_st, g_st_b = float(g[i]), bounds(i)
    return Crossovers(g_c, g_c_b, g_st, g_st_b, float(plateau), tuple(flags))
