import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from danse.errors import FitError, GeometryError, ParameterError, WindowError
from danse.fit import (
    collapse_quality,
    detect_crossovers,
    effective_absorber_distance,
    fit_survival,
    max_quasimomentum,
    model_p_linear,
    model_p_nonlinear,
    scale_point,
    surviving_length,
    survival_objective,
    unscale_point,
    _grid_search,
)

T = np.geomspace(0.1, 1e4, 321)


def test_absorber_distance_examples():
    assert effective_absorber_distance(100, 31, 24.0) == pytest.approx(18.725)
    assert effective_absorber_distance(100, 0, 0.0) == pytest.approx(25.0)
    assert effective_absorber_distance(100, 31, 96.0) == pytest.approx(11.525)
    with pytest.raises(GeometryError):
        effective_absorber_distance(20, 41, 24.0)


def test_model_limits():
    assert model_p_nonlinear(5.0, 24, 10, 18.725) == 1.0
    assert model_p_nonlinear(10.0 * (1 + 1e-12), 24, 10, 18.725) == pytest.approx(1.0, abs=1e-5)
    assert model_p_nonlinear(1e300, 24, 10, 18.725) < 0.15
    with pytest.raises(ParameterError):
        model_p_nonlinear(100.0, -1, 10, 18.7)
    with pytest.raises(ParameterError):
        model_p_linear(100.0, 24, 0, 18.7)


def test_half_point():
    ell_0, t2, ell_a = 24.0, 10.0, 18.725
    t = t2 * math.exp(2 * ell_a / ell_0)
    assert model_p_linear(t, ell_0, t2, ell_a) == pytest.approx(0.5, abs=1e-14)


def test_quasimomentum_construction():
    ell_0, t2, ell_a = 24.0, 10.0, 18.725
    for t in (20.0, 1e3, 1e6):
        qm = max_quasimomentum(t, ell_0, t2, ell_a)
        assert math.sin(qm) ** 2 == pytest.approx(surviving_length(t, ell_0, t2, ell_a) / ell_0)
        assert model_p_linear(t, ell_0, t2, ell_a) == pytest.approx(2 * qm / math.pi)


@given(ell=st.floats(0.5, 200), t2=st.floats(0.1, 1e4), ell_a=st.floats(1, 60),
       x=st.floats(1e-6, 30))
def test_linear_nonlinear_identity(ell, t2, ell_a, x):
    t = t2 * math.exp(x)
    assert abs(model_p_nonlinear(t, ell, t2, ell_a) - model_p_linear(t, ell, t2, ell_a)) < 1e-14


@given(ell=st.floats(0.5, 200), t2=st.floats(0.1, 1e3), ell_a=st.floats(1, 60))
def test_monotonicity(ell, t2, ell_a):
    t = t2 * np.geomspace(1.001, 1e8, 200)
    p = model_p_nonlinear(t, ell, t2, ell_a)
    assert np.all(np.diff(p) < 0)
    tt = t2 * math.e * 1.5
    assert model_p_nonlinear(tt, ell * 1.1, t2, ell_a) < model_p_nonlinear(tt, ell, t2, ell_a)
    assert np.all((p >= 0) & (p <= 1))


def test_noiseless_recovery_reference():
    p = model_p_nonlinear(T, 24.0, 10.0, 18.725)
    r = fit_survival((T, p), 18.725)
    assert r.ell_eff == pytest.approx(24.0, rel=1e-6)
    assert r.t2 == pytest.approx(10.0, rel=1e-6)
    assert r.converged and r.rms < 1e-6 and r.n_points >= 10
    assert r.t_min > 10 * r.t2 * 0.99


def test_fixed_ell_fit():
    p = model_p_linear(T, 24.0, 30.0, 18.725)
    r = fit_survival((T, p), 18.725, fixed_ell=24.0)
    assert r.ell_eff == 24.0 and r.t2 == pytest.approx(30.0, rel=1e-6)


def test_no_loss_trace():
    r = fit_survival((T, np.ones_like(T)), 18.7, ell_0=24.0)
    assert r.ell_eff == 24.0 and math.isinf(r.t2) and "no-loss" in r.flags
    with pytest.raises(FitError):
        fit_survival((T, np.ones_like(T)), 18.7)


def test_window_error():
    p = np.where(T < 1e4, 0.99, 0.5)
    with pytest.raises(WindowError):
        fit_survival((T, p), 18.7)
    with pytest.raises(WindowError):
        fit_survival((np.array([]), np.array([])), 18.7)


def test_weighted_fit_uses_stderr():
    p = model_p_nonlinear(T, 15.0, 50.0, 18.725)
    noise = np.random.default_rng(0).normal(0, 0.003, T.size)
    r = fit_survival((T, p + noise, np.full(T.size, 0.003)), 18.725)
    assert r.ell_eff == pytest.approx(15.0, rel=0.1)
    assert 0.5 < r.rms < 1.5


def test_grid_soundness():
    p = model_p_nonlinear(T, 40.0, 3.0, 18.725) + 0.002 * np.sin(np.arange(T.size))
    r = fit_survival((T, p), 18.725)
    assert r.cost <= r.grid_min_cost + 1e-12
    m = (T >= r.t_min) & (T <= r.t_max)
    assert r.cost == pytest.approx(survival_objective(T[m], p[m], 1.0, r.ell_eff, r.t2, 18.725))
    cost, _, _ = _grid_search(T[m], p[m], np.ones(m.sum()), 18.725)
    assert r.cost <= cost + 1e-12


def test_as_row_columns():
    r = fit_survival((T, model_p_nonlinear(T, 24.0, 10.0, 18.725)), 18.725)
    row = r.as_row()
    assert set(row) >= {"ell_eff", "t2", "ell_a", "residual", "t_min", "t_max", "converged", "flags"}


def test_scale_examples():
    assert scale_point(100, 2, 1, 5.0).g_tilde == 100 and scale_point(100, 2, 1, 5.0).ell_tilde == 5
    assert scale_point(100, 2, 21, 5.0).g_tilde == pytest.approx(100 / 21**0.75, rel=1e-12)
    assert scale_point(100, 2, 41, 5.0).g_tilde == pytest.approx(100 / 41**0.75, rel=1e-12)
    with pytest.raises(ParameterError):
        scale_point(1, 2, 0, 1)


@given(g=st.floats(1e-3, 1e4), ell=st.floats(1e-2, 1e3), L0=st.integers(1, 201))
def test_scale_round_trip(g, ell, L0):
    pt = scale_point(g, 2.0, L0, ell)
    g2, ell2 = unscale_point(pt)
    assert g2 == pytest.approx(g, rel=1e-14) and ell2 == pytest.approx(ell, rel=1e-14)


def _collapsed_points(L0s=(13, 21, 41), g_tilde=np.geomspace(0.05, 50, 25)):
    pts = []
    for L0 in L0s:
        f = L0**0.75
        for gt in g_tilde:
            pts.append(scale_point(gt * f, 2.0, L0, (1 + gt) * f))
    return pts


def test_collapse_identical_curves():
    rep = collapse_quality(_collapsed_points())
    assert np.all(rep.cv_scaled < 1e-12)
    assert np.all(rep.cv_unscaled > 0.05)
    assert not rep.skipped.any()


def test_collapse_needs_two_groups():
    with pytest.raises(ParameterError):
        collapse_quality(_collapsed_points(L0s=(21,)))


def test_collapse_skips_uncovered_bins():
    rep = collapse_quality(_collapsed_points(g_tilde=np.geomspace(0.05, 2, 10)), bins=[1.0, 100.0])
    assert not rep.skipped[0] and rep.skipped[1] and math.isnan(rep.cv_scaled[1])


def _knee_peak_curve(g, knee=0.1, peak=5.0):
    rise = 1 + 2 * np.log10(np.clip(g, knee, peak) / knee)
    return rise - np.log10(np.maximum(g, peak) / peak)


def test_crossovers_on_constructed_curve():
    g = np.geomspace(0.01, 100, 41)
    ell = _knee_peak_curve(g)
    c = detect_crossovers(g, ell)
    i_c = int(np.nonzero(ell > 1.2)[0][0])
    assert c.g_c == g[i_c] and c.g_c_bounds == (g[i_c - 1], g[i_c + 1])
    assert g[i_c - 1] <= 0.1 * 10**0.1 <= g[i_c]
    i_st = int(np.argmax(ell))
    assert c.g_st == g[i_st] and abs(math.log10(c.g_st / 5.0)) <= 0.05
    assert c.plateau == 1.0 and c.flags == ()


def test_crossovers_flat_and_monotone():
    flat = detect_crossovers([0.0], [1.0])
    assert flat.g_st is None and "no-maximum" in flat.flags and "no-rise" in flat.flags
    mono = detect_crossovers(np.geomspace(0.01, 100, 10), np.geomspace(1, 10, 10))
    assert mono.g_st is None and mono.g_c is not None
    narrow = detect_crossovers([0.5, 1, 2], [1, 2, 1])
    assert "narrow-span" in narrow.flags and narrow.g_st == 1
