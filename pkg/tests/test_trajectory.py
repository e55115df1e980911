import warnings

import numpy as np
import pytest
from scipy.integrate import cumulative_simpson

from colddamp import markov, spectral, trajectory
from colddamp.collective import build_basis
from colddamp.errors import FitFailed
from colddamp.model import Regime, rates
from colddamp.trajectory import (SimConfig, export_ensemble_csv, feedback_force, initial_state,
                                 run_ensemble, simulate_deterministic, step, transient_occupancy)

from conftest import degenerate_spec, single_mode_spec, two_mode_spec


def _mode_energy(run, j=0):
    return 0.5 * (run.states[:, 2 * j] ** 2 + run.states[:, 2 * j + 1] ** 2)


def test_energy_conserved_without_damping():
    # the model requires gamma > 0; 1e-15 loses 1e-13 of the energy over the run
    spec = single_mode_spec(g_cd=0.0, gamma=1e-15)
    run = simulate_deterministic(spec, [1.0, 0.0, 0.0, 0.0], t_end=100.0, dt=1e-3)
    assert len(run.times) == 100001
    e = _mode_energy(run)
    assert np.max(np.abs(e - 0.5)) / 0.5 < 1e-8


def test_envelope_decay_at_fast_cavity():
    k = 100.0
    spec = single_mode_spec(kappa=k, omega_fb=k, G=0.05 * k)
    gam = rates(spec, Regime.SFFLC).gamma_fb[0, 0]
    assert gam == pytest.approx(0.03, rel=1e-12)
    run = simulate_deterministic(spec, [1.0, 0.0, 0.0, 0.0], t_end=100.0, dt=1e-3)
    sel = run.times > 5.0
    slope = np.polyfit(run.times[sel], np.log(_mode_energy(run)[sel]), 1)[0]
    assert -slope / 2 == pytest.approx((4e-5 + gam) / 2, rel=0.05)


def test_filter_removes_constant_input():
    # G = 0 and a very slow cavity hold y at its initial value
    spec = single_mode_spec(G=0.0, kappa=1e-12)
    run = simulate_deterministic(spec, [0.0, 0.0, 2.0, 0.0], t_end=10.0, dt=1e-3)
    assert run.states[-1, 3] == pytest.approx(2.0, rel=1e-9)
    force = feedback_force(spec, run)
    assert abs(force[-1, 0]) < 1e-9 * 0.6 * 4.5 * 2.0


def test_filter_matches_direct_convolution():
    spec = two_mode_spec(g_cd=0.6).with_tau(0.5)
    run = simulate_deterministic(spec, [3.0, -1.0, 2.0, 0.5, 0.0, 0.0], t_end=20.0, dt=1e-3)
    wf = spec.omega_fb
    t = run.times
    u = run.delayed_input
    # w(t) = int_0^t wf exp(-wf (t - s)) u(s) ds
    w_direct = wf * np.exp(-wf * t) * cumulative_simpson(np.exp(wf * t) * u, x=t, initial=0.0)
    force_direct = -spec.g_cd[None, :] * (wf * (u - w_direct))[:, None]
    force = feedback_force(spec, run)
    rng = np.random.default_rng(5)
    idx = rng.integers(1000, len(t), 10)
    scale = np.sqrt(np.mean(force**2))
    assert np.max(np.abs(force[idx] - force_direct[idx])) < 1e-6 * scale


def test_step_matches_batched_integrator():
    spec = single_mode_spec().with_tau(0.3)
    dt = 1e-2
    x0 = [1.0, 0.5, 0.2, 0.0]
    run = simulate_deterministic(spec, x0, t_end=5.0, dt=dt)
    st = initial_state(spec, dt, x0)
    for _ in range(500):
        step(st, spec, dt)
    assert np.allclose(st.x, run.states[-1], rtol=1e-12, atol=1e-14)


def _single_mode_short(**kw):
    args = dict(dt=2e-3, t_end=20.0, n_traj=600, seed=7, record_stride=50)
    args.update(kw)
    return SimConfig(**args)


def test_ensemble_independent_of_threads(tmp_path):
    spec = single_mode_spec()
    a = run_ensemble(spec, _single_mode_short(threads=1))
    b = run_ensemble(spec, _single_mode_short(threads=3))
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.stderr, b.stderr)
    export_ensemble_csv(tmp_path / "a.csv", a)
    export_ensemble_csv(tmp_path / "b.csv", b)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a.metadata["rng"] == trajectory.RNG_ALGORITHM


def test_ensemble_depends_on_seed():
    spec = single_mode_spec()
    a = run_ensemble(spec, _single_mode_short(n_traj=20))
    b = run_ensemble(spec, _single_mode_short(n_traj=20, seed=8))
    assert not np.array_equal(a.mean, b.mean)


def test_trajectory_streams_are_prefix_stable():
    # trajectory i sees the same noise whatever the ensemble size
    spec = single_mode_spec()
    small = run_ensemble(spec, _single_mode_short(n_traj=1, t_end=2.0, record_stride=1))
    big = run_ensemble(spec, _single_mode_short(n_traj=3, t_end=2.0, record_stride=1))
    assert small.mean[-1, 0] != big.mean[-1, 0]
    single = run_ensemble(spec, _single_mode_short(n_traj=1, t_end=2.0, record_stride=1, seed=7))
    assert np.array_equal(small.mean, single.mean)


def test_dt_convergence():
    spec = single_mode_spec()
    base = dict(t_end=200.0, n_traj=60, seed=3, burn_in=0.3, record_stride=25)
    coarse = run_ensemble(spec, SimConfig(dt=4e-3, noise_substeps=2, **base))
    fine = run_ensemble(spec, SimConfig(dt=2e-3, **base))
    diff = abs(coarse.steady[0] - fine.steady[0])
    assert diff < fine.steady_stderr[0]


def test_single_mode_monte_carlo_matches_fourier():
    spec = single_mode_spec()
    ens = run_ensemble(spec, SimConfig(dt=2e-3, t_end=1000.0, n_traj=200, seed=1, burn_in=0.3,
                                       record_stride=50))
    ref = spectral.occupancy_fourier(spec, 0.0)[0]
    assert abs(ens.steady[0] - ref) < 3 * ens.steady_stderr[0]
    assert not ens.diverged


def test_thermal_equilibrium_without_feedback():
    spec = single_mode_spec(g_cd=0.0, G=0.0, gamma=1e-2, nbar=100.0)
    ens = run_ensemble(spec, SimConfig(dt=1e-2, t_end=500.0, n_traj=100, seed=2, burn_in=0.2))
    assert abs(ens.steady[0] - 100.5) < 3 * ens.steady_stderr[0]


def test_divergence_flag_and_growth_rate():
    tau = np.pi
    spec = single_mode_spec().with_tau(tau)
    cfg = SimConfig(dt=tau / 500, t_end=600.0, n_traj=8, seed=4, record_stride=50, burn_in=0.0)
    x0 = np.array([1e6, 0.0, 0.0, 0.0])
    ens = run_ensemble(spec, cfg, initial_state=x0)
    assert ens.diverged
    assert ens.n_diverged == 8
    assert ens.first_divergence_time is not None
    sel = (ens.times > 50) & (ens.times < 300)
    rate = np.polyfit(ens.times[sel], np.log(ens.mean[sel, 0]), 1)[0]
    sfflc = rates(spec, Regime.SFFLC).gamma_fb[0, 0]
    assert rate == pytest.approx(sfflc - 4e-5, rel=0.2)


def test_transient_single_mode_rate():
    spec = single_mode_spec()
    cfg = SimConfig(dt=1e-2, t_end=300.0, n_traj=20, seed=9, record_stride=10)
    ens = run_ensemble(spec, cfg, initial_state=np.array([1e3, 0.0, 0.0, 0.0]))
    fit = transient_occupancy(ens, steady_value=markov.closed_form_single(spec))
    expected = 4e-5 + rates(spec, Regime.WFFLC).gamma_fb[0, 0]
    assert fit.rate == pytest.approx(expected, rel=0.10)
    assert fit.n_points >= 10


def test_transient_bright_mode_rate():
    n = 4
    spec = degenerate_spec(n)
    basis = build_basis(spec.G)
    x0 = np.zeros(2 * n + 2)
    x0[0:2 * n:2] = 1e3
    cfg = SimConfig(dt=1e-2, t_end=100.0, n_traj=10, seed=10, record_stride=10)
    ens = run_ensemble(spec, cfg, projection=basis, initial_state=x0)
    fit = transient_occupancy(ens, mode=0, steady_value=0.0)
    expected = 4e-5 + n * rates(single_mode_spec(), Regime.WFFLC).gamma_fb[0, 0]
    assert fit.rate == pytest.approx(expected, rel=0.10)


def test_transient_dark_mode_rate():
    n = 2
    spec = degenerate_spec(n, gamma=1e-2, nbar=100.0)
    basis = build_basis(spec.G)
    x0 = np.array([1e3, 0.0, -1e3, 0.0, 0.0, 0.0])
    cfg = SimConfig(dt=2e-2, t_end=500.0, n_traj=10, seed=11, record_stride=10)
    ens = run_ensemble(spec, cfg, projection=basis, initial_state=x0)
    fit = transient_occupancy(ens, mode=1, steady_value=100.5)
    assert fit.rate == pytest.approx(1e-2, rel=0.20)


def test_dark_mode_stays_thermal():
    spec = degenerate_spec(2)
    ens = run_ensemble(spec, SimConfig(dt=1e-2, t_end=100.0, n_traj=200, seed=0, burn_in=0.2),
                       projection=build_basis(spec.G))
    assert abs(ens.steady[1] - (1e5 + 0.5)) < 3 * ens.steady_stderr[1]
    assert ens.mean[-1, 0] < 0.1 * ens.mean[-1, 1]


def test_fit_failures():
    spec = single_mode_spec()
    ens = run_ensemble(spec, SimConfig(dt=1e-2, t_end=5.0, n_traj=4, record_stride=100))
    with pytest.raises(FitFailed):
        transient_occupancy(ens)
    ens = run_ensemble(spec, SimConfig(dt=1e-2, t_end=50.0, n_traj=4, record_stride=10))
    with pytest.raises(FitFailed):
        transient_occupancy(ens, steady_value=1e9)


def test_config_validation():
    spec = single_mode_spec().with_tau(0.105)
    with pytest.raises(ValueError, match="not an integer"):
        SimConfig(dt=1e-2).validate(spec)
    SimConfig(dt=1e-2, interpolate=True).validate(spec)
    with pytest.raises(ValueError):
        SimConfig(dt=1.0).validate(single_mode_spec().with_tau(0.5))
    for bad in (dict(dt=-1.0), dict(n_traj=0), dict(burn_in=1.0), dict(t_end=0.0),
                dict(record_stride=0)):
        with pytest.raises(ValueError):
            SimConfig(**bad).validate(single_mode_spec())


def test_interpolated_delay_close_to_integer_delay():
    spec_a = single_mode_spec().with_tau(0.1)
    spec_b = single_mode_spec().with_tau(0.1 + 3e-4)
    x0 = [1.0, 0.0, 0.0, 0.0]
    a = simulate_deterministic(spec_a, x0, 20.0, dt=1e-3)
    b = simulate_deterministic(spec_b, x0, 20.0, dt=1e-3, interpolate=True)
    assert np.max(np.abs(a.states[:, 0] - b.states[:, 0])) < 1e-4


def test_low_occupancy_warning():
    spec = single_mode_spec(nbar=5.0)
    with pytest.warns(RuntimeWarning, match="classically"):
        run_ensemble(spec, SimConfig(dt=1e-2, t_end=1.0, n_traj=2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run_ensemble(single_mode_spec(), SimConfig(dt=1e-2, t_end=1.0, n_traj=2))


def test_default_dt():
    assert trajectory.default_dt(single_mode_spec()) == pytest.approx(1 / 4.5 / 50)


def test_ensemble_csv_layout(tmp_path):
    ens = run_ensemble(two_mode_spec(), SimConfig(dt=1e-2, t_end=1.0, n_traj=3, record_stride=10))
    export_ensemble_csv(tmp_path / "t.csv", ens)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,n_1,n_2,stderr_1,stderr_2"
    assert len(lines) == 11
