import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.special import jv

from danse.errors import ParameterError, StepError
from danse.integrator import (
    IntegratorConfig,
    RecordingSchedule,
    energy,
    evolve,
    step,
    suggest_dt,
)
from danse.model import (
    InitialStateSpec,
    LatticeParams,
    WaveState,
    absorber_rates,
    make_initial_state,
    sample_disorder,
)
from danse.observables import survival_probability


def _dense_h(dis, params):
    n = params.n_sites
    H = np.diag(dis.v - 1j * absorber_rates(params)).astype(complex)
    H -= np.eye(n, k=1) + np.eye(n, k=-1)
    return H


def _random_state(params, seed, L0=None):
    L0 = L0 or min(21, params.L)
    return make_initial_state(InitialStateSpec(L0=L0, seed=seed), params)


@pytest.mark.parametrize("kw", [{"dt": 0}, {"dt": -1}, {"nl_iters": 0}, {"nl_tol": 0},
                                {"max_halvings": -1}])
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        IntegratorConfig(**kw)


def test_schedule_validation():
    with pytest.raises(ParameterError):
        RecordingSchedule((1.0, 1.0))
    with pytest.raises(ParameterError):
        RecordingSchedule((0.0, 1.0))
    with pytest.raises(ParameterError):
        RecordingSchedule((2.0, 1.0))
    s = RecordingSchedule.log_spaced(1e4)
    assert len(s) == 321 and s.times[0] == pytest.approx(0.1) and s.times[-1] == 1e4
    assert len(RecordingSchedule.log_spaced(1e5, per_decade=200)) == 400
    lin = RecordingSchedule.linear(10.0, 5)
    assert lin.times == (2.0, 4.0, 6.0, 8.0, 10.0)


def test_unitarity_single_step(backend):
    p = LatticeParams(W=3.0, eta_a=0.0)
    dis = sample_disorder(p, 1)
    s = _random_state(p, 2)
    for dt in (0.5, 0.05, 0.001):
        out = step(s, dis, p, IntegratorConfig(dt=dt), backend=backend)
        assert abs(out.norm - s.norm) < 1e-12
        assert out.t == pytest.approx(dt)


def test_step_matches_cayley_oracle(backend):
    p = LatticeParams(L=9, L_a=3, W=2.0)
    dis = sample_disorder(p, 4)
    s = _random_state(p, 5, L0=5)
    dt = 0.1
    H = _dense_h(dis, p)
    I = np.eye(p.n_sites)
    want = np.linalg.solve(I + 0.5j * dt * H, (I - 0.5j * dt * H) @ s.c)
    got = step(s, dis, p, IntegratorConfig(dt=dt), backend=backend).c
    assert np.max(np.abs(got - want)) < 1e-13


def test_nonlinear_step_is_self_consistent(backend):
    p = LatticeParams(L=15, L_a=3, W=2.0, g=7.0)
    dis = sample_disorder(p, 4)
    s = _random_state(p, 5, L0=7)
    dt = 0.05
    new = step(s, dis, p, IntegratorConfig(dt=dt, nl_tol=1e-13, nl_iters=50), backend=backend).c
    u = 0.5 * (np.abs(s.c) ** 2 + np.abs(new) ** 2)
    H = _dense_h(dis, p) + np.diag(p.g * u)
    I = np.eye(p.n_sites)
    resid = (I + 0.5j * dt * H) @ new - (I - 0.5j * dt * H) @ s.c
    assert np.max(np.abs(resid)) < 1e-11


def test_step_error_carries_residual(backend):
    p = LatticeParams(L=11, L_a=2, g=1e4)
    dis = sample_disorder(p, 0)
    s = _random_state(p, 1, L0=3)
    with pytest.raises(StepError) as exc:
        step(s, dis, p, IntegratorConfig(dt=0.5, nl_iters=1), backend=backend)
    assert exc.value.residual > 0 and exc.value.dt == 0.5
    assert exc.value.t == 0.0


def test_evolve_halves_failed_steps(backend):
    p = LatticeParams(L=11, L_a=2, g=200.0)
    dis = sample_disorder(p, 0)
    s = _random_state(p, 1, L0=3)
    cfg = IntegratorConfig(dt=0.5, nl_iters=4)
    ev = evolve(s, dis, p, cfg, RecordingSchedule((1.0, 2.0)), backend=backend)
    assert ev.halvings > 0
    assert ev.state.t == pytest.approx(2.0)
    assert ev.state.norm <= s.norm + 1e-12


def test_evolve_gives_up_after_max_halvings(backend):
    p = LatticeParams(L=11, L_a=2, g=200.0)
    dis = sample_disorder(p, 0)
    s = _random_state(p, 1, L0=3)
    with pytest.raises(StepError, match="evolving from"):
        evolve(s, dis, p, IntegratorConfig(dt=0.5, nl_iters=2, max_halvings=1),
               RecordingSchedule((1.0,)), backend=backend)


def test_empty_schedule_returns_final_state():
    p = LatticeParams(L=11, L_a=2)
    dis = sample_disorder(p, 0)
    s = _random_state(p, 1, L0=3)
    ev = evolve(s, dis, p, IntegratorConfig(), None, {"p": survival_probability}, t_end=1.0)
    assert ev.state.t == 1.0 and ev.records["p"].size == 0 and ev.times.size == 0
    ev2 = evolve(s, dis, p, IntegratorConfig(), RecordingSchedule(()))
    assert ev2.state.t == 0.0


def test_schedule_must_follow_state_time():
    p = LatticeParams(L=11, L_a=2)
    dis = sample_disorder(p, 0)
    s = WaveState(_random_state(p, 1, L0=3).c, 5.0)
    with pytest.raises(ParameterError):
        evolve(s, dis, p, IntegratorConfig(), RecordingSchedule((1.0,)))


def test_sample_times_hit_exactly(backend):
    p = LatticeParams(L=11, L_a=2, W=1.0)
    dis = sample_disorder(p, 0)
    s = _random_state(p, 1, L0=3)
    seen = []
    sched = RecordingSchedule((0.013, 0.1, 0.37, 1.0))
    evolve(s, dis, p, IntegratorConfig(dt=0.05), sched, {"t": lambda st_: seen.append(st_.t)},
           backend=backend)
    assert seen == list(sched.times)
    # splitting a run at a sample time does not change the result beyond rounding
    a = evolve(s, dis, p, IntegratorConfig(dt=0.05), RecordingSchedule((1.0,)), backend=backend).state
    b = evolve(s, dis, p, IntegratorConfig(dt=0.05), RecordingSchedule((0.5, 1.0)), backend=backend).state
    assert np.allclose(a.c, b.c, atol=1e-13)


def test_backends_agree():
    from danse.kernels import available
    if len(available) < 2:
        pytest.skip("compiled kernel not built")
    p = LatticeParams(L=31, L_a=5, W=2.0, g=20.0)
    dis = sample_disorder(p, 3)
    s = _random_state(p, 4, L0=7)
    cfg = IntegratorConfig(dt=0.05)
    res = [evolve(s, dis, p, cfg, RecordingSchedule((5.0,)), backend=b).state.c for b in available]
    assert np.max(np.abs(res[0] - res[1])) < 1e-12


def test_free_propagator_bessel_oracle(backend):
    if backend == "python":
        pytest.skip("long run; the compiled backend covers it and the kernels agree")
    p = LatticeParams(L=401, L_a=10, W=0.0)
    c = np.zeros(p.n_sites, complex)
    c[p.index_of(0)] = 1.0
    ev = evolve(WaveState(c), sample_disorder(p, 0), p, IntegratorConfig(dt=1e-3),
                RecordingSchedule((10.0,)), backend=backend)
    n = p.sites()
    oracle = np.abs(jv(n, 20.0))
    assert np.max(np.abs(np.abs(ev.state.c) - oracle)) < 1e-4


def test_small_lattice_expm_oracle(backend):
    p = LatticeParams(L=5, L_a=1, W=3.0, eta_a=0.0)
    dis = sample_disorder(p, 11)
    s = _random_state(p, 12, L0=5)
    H = _dense_h(dis, p)
    want = expm(-1j * H) @ s.c
    dt = 1e-4 if backend == "cython" else 1e-3
    got = evolve(s, dis, p, IntegratorConfig(dt=dt), RecordingSchedule((1.0,)), backend=backend).state.c
    assert np.max(np.abs(got - want)) < 1e-6


def test_second_order_convergence():
    p = LatticeParams(L=31, L_a=5, W=2.0, g=5.0)
    dis = sample_disorder(p, 3)
    s = _random_state(p, 4, L0=7)
    sched = RecordingSchedule((2.0,))
    sol = {dt: evolve(s, dis, p, IntegratorConfig(dt=dt, nl_tol=1e-13, nl_iters=50), sched).state.c
           for dt in (0.04, 0.02, 0.01)}
    e1 = np.max(np.abs(sol[0.04] - sol[0.02]))
    e2 = np.max(np.abs(sol[0.02] - sol[0.01]))
    assert 3.5 < e1 / e2 < 4.5


def test_energy_examples():
    p = LatticeParams(L=5, L_a=1, W=0.0)
    dis = sample_disorder(p, 0)
    c = np.zeros(p.n_sites, complex)
    c[3] = 1.0
    assert energy(WaveState(c), dis, p) == 0.0
    v = np.zeros(p.n_sites)
    v[3] = 1.0
    dis1 = type(dis)(v, 0, 0.0)
    assert energy(WaveState(c), dis1, p.replace(g=2.0)) == pytest.approx(2.0)


def test_conservation_with_nonlinearity(backend):
    p = LatticeParams(W=3.0, g=10.0, eta_a=0.0)
    dis = sample_disorder(p, 21)
    s = _random_state(p, 22)
    t_end = 100.0 if backend == "cython" else 5.0
    e0 = energy(s, dis, p)
    ev = evolve(s, dis, p, IntegratorConfig(dt=0.01), RecordingSchedule((t_end,)), backend=backend)
    assert abs(energy(ev.state, dis, p) - e0) / abs(e0) < 1e-4
    assert abs(ev.state.norm - 1.0) < 1e-9


@given(seed=st.integers(0, 2**31), g=st.floats(-50, 50), W=st.floats(0, 5))
def test_norm_never_increases(seed, g, W):
    p = LatticeParams(L=21, L_a=5, W=W, g=g)
    dis = sample_disorder(p, seed)
    s = _random_state(p, seed + 1, L0=5)
    norms = evolve(s, dis, p, IntegratorConfig(dt=0.05), RecordingSchedule.linear(20.0, 40),
                   {"n": lambda st_: st_.norm}).records["n"]
    assert np.all(np.diff(np.concatenate([[1.0], norms])) <= 1e-13)


@given(seed=st.integers(0, 2**31), g=st.floats(-20, 20), dt=st.floats(0.001, 0.2))
def test_unitary_without_absorbers(seed, g, dt):
    p = LatticeParams(L=21, L_a=2, W=2.0, g=g, eta_a=0.0)
    dis = sample_disorder(p, seed)
    s = _random_state(p, seed + 1, L0=5)
    out = evolve(s, dis, p, IntegratorConfig(dt=dt, nl_iters=30), RecordingSchedule((1.0,))).state
    assert abs(out.norm - 1.0) < 1e-11


def test_suggest_dt():
    assert suggest_dt(0.0, 1.0) == 0.05
    assert suggest_dt(100.0, 1 / 3) == pytest.approx(0.0075)
    assert suggest_dt(-100.0, 1 / 3) == suggest_dt(100.0, 1 / 3)
    assert math.isclose(suggest_dt(1.0, 0.1), 0.05)
