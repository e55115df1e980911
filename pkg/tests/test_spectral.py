import numpy as np
import pytest

from colddamp import markov, spectral
from colddamp.errors import QuadratureDiverged
from colddamp.model import Regime
from colddamp.spectral import (QuadratureConfig, bright_residual, effective_response,
                               noise_spectrum, noise_spectrum_direct, occupancy_fourier,
                               position_spectra, residual_occupancy, residual_quadrature,
                               spectrum_single, susceptibility, susceptibility_inverse)

from conftest import single_mode_spec, two_mode_spec, ladder_spec

GT_RES = 0.54 * 17 / 361.25        # frequency-resolved damping at resonance
DW_RES = 0.54 * 8.5 / 361.25       # frequency-resolved shift at resonance


def test_effective_response_at_zero_delay(single_mode):
    Om = np.array([0.5, 1.0, 2.0])
    r = effective_response(single_mode, Om, 0.0)
    gt, dw = spectral._frequency_rates(single_mode, Om)
    assert np.allclose(r.gamma_eff[:, 0], 4e-5 + gt[:, 0, 0], rtol=1e-14)
    assert np.allclose(r.omega_eff_sq[:, 0], 1 + Om * dw[:, 0, 0], rtol=1e-14)
    assert r.gamma_eff[1, 0] - 4e-5 == pytest.approx(GT_RES, rel=1e-12)
    assert (r.omega_eff_sq[1, 0] - 1) == pytest.approx(DW_RES, rel=1e-12)


def test_bare_susceptibility_without_feedback():
    spec = two_mode_spec(g_cd=0.0)
    for Om in (0.3, 0.9, 1.7):
        inv = susceptibility_inverse(spec, Om, 0.4)
        w, gam = spec.omega, spec.gamma
        assert np.allclose(np.diag(inv), (w**2 - Om**2 + 1j * gam * Om) / w, rtol=1e-14)
        assert inv[0, 1] == 0 and inv[1, 0] == 0


def test_inverse_susceptibility_at_resonance(single_mode):
    inv = susceptibility_inverse(single_mode, 1.0, 0.0)
    assert inv.shape == (1, 1)
    assert inv[0, 0].real == pytest.approx(DW_RES, rel=1e-12)
    assert inv[0, 0].imag == pytest.approx(4e-5 + GT_RES, rel=1e-12)
    assert GT_RES == pytest.approx(0.025412, abs=1e-6)


def test_off_diagonal_identity():
    rng = np.random.default_rng(3)
    spec = ladder_spec(g_cd=[0.6, 0.5, 0.7, 0.4])
    for _ in range(10):
        Om, tau = rng.uniform(0.1, 3.0), rng.uniform(0, 6)
        inv = susceptibility_inverse(spec, Om, tau)
        r = effective_response(spec, Om, tau)
        w, gam, g = spec.omega, spec.gamma, spec.g_cd
        for j in range(4):
            for k in range(4):
                if j == k:
                    continue
                num = (r.omega_eff_sq[0, k] - w[k] ** 2) + 1j * Om * (r.gamma_eff[0, k] - gam[k])
                den = (r.omega_eff_sq[0, k] - Om**2) + 1j * Om * r.gamma_eff[0, k]
                ratio = inv[j, k] / inv[k, k] * (g[k] / g[j])
                assert ratio == pytest.approx(num / den, rel=1e-10)


def test_susceptibility_shapes(two_mode):
    assert susceptibility(two_mode, 1.0).shape == (2, 2)
    assert susceptibility(two_mode, np.linspace(0, 2, 5)).shape == (5, 2, 2)


def test_white_thermal_noise(single_mode):
    S = noise_spectrum(single_mode, 0.7, model="white-thermal")
    assert S[0, 0] == pytest.approx(4e-5 * (2e5 + 1), rel=1e-14)
    assert S[0, 0].real == pytest.approx(8.00004, rel=1e-12)


def test_full_noise_without_coupling_is_thermal():
    spec = two_mode_spec(G=0.0, g_cd=0.0)
    Om = np.linspace(0, 3, 7)
    assert np.allclose(noise_spectrum(spec, Om, 1.0, "full"),
                       noise_spectrum(spec, Om, 1.0, "white-thermal"), rtol=0, atol=0)


def test_interference_identity_two_assemblies(single_mode):
    Om = np.array([1.0])
    for tau in (0.0, 0.7, 2.5):
        a = noise_spectrum(single_mode, Om, tau, "full")
        b = noise_spectrum_direct(single_mode, Om, tau)
        assert np.allclose(a, b, rtol=1e-12, atol=0)
    # at tau = 0 the cross term is -Omega (gamma_eff - gamma) / omega
    parts = spectral.single_mode_components(single_mode, 1.0, 0.0)
    assert parts["interference"][0] == pytest.approx(-GT_RES, rel=1e-12)
    spec = ladder_spec(g_cd=[0.6, 0.5, 0.7, 0.4])
    Om = np.linspace(0.0, 5.0, 23)
    assert np.allclose(noise_spectrum(spec, Om, 1.3, "full"), noise_spectrum_direct(spec, Om, 1.3),
                       rtol=1e-12, atol=1e-15)


def test_exact_thermal_high_temperature_limit(single_mode):
    S = noise_spectrum(single_mode, np.array([0.0, 1.0]), model="exact-thermal")
    assert S[1, 0, 0].real == pytest.approx(4e-5 * (2e5 + 1), rel=1e-9)
    assert S[0, 0, 0].real == pytest.approx(4e-5 * (2e5 + 1), rel=1e-5)


def test_hermiticity_and_positivity():
    spec = ladder_spec()
    Om = np.linspace(0.0, 4.0, 41)
    S = noise_spectrum(spec, Om, 0.8, "full")
    assert np.max(np.abs(S - np.conj(np.swapaxes(S, 1, 2)))) < 1e-12
    P = position_spectra(spec, Om, 0.8, "full", full_matrix=True)
    herm = P - np.conj(np.swapaxes(P, 1, 2))
    assert np.max(np.abs(herm)) < 1e-12 * np.max(np.abs(P))
    diag = np.diagonal(P, axis1=1, axis2=2)
    assert np.max(np.abs(diag.imag)) < 1e-12 * np.max(np.abs(diag))
    assert np.all(diag.real >= 0)


def test_evenness_spot_check(single_mode):
    Om = np.array([0.3, 1.0, 2.2])
    for tau in (0.0, 1.1):
        pos = spectral.single_mode_components(single_mode, Om, tau)
        neg = spectral.single_mode_components(single_mode, -Om, tau)
        for name in ("chi2", "thermal", "radiation_pressure", "feedback"):
            assert np.allclose(pos[name], neg[name], rtol=1e-13)
        assert np.allclose(pos["interference"], -neg["interference"], rtol=1e-13)


def test_fourier_matches_wfflc_closed_form(single_mode):
    n = occupancy_fourier(single_mode, 0.0)[0]
    ref = markov.closed_form_single(single_mode, 0.0, Regime.WFFLC)
    assert n == pytest.approx(ref, rel=0.02)
    assert np.isrealobj(occupancy_fourier(single_mode, 0.0))


def test_long_delay_departs_from_wfflc(single_mode):
    tau = 16 * np.pi
    n = occupancy_fourier(single_mode, tau)[0]
    ref = markov.closed_form_single(single_mode, tau, Regime.WFFLC)
    assert abs(n - ref) / ref > 0.10


def test_no_feedback_gives_thermal_occupancy():
    spec = single_mode_spec(G=0.0, g_cd=0.0, nbar=1e3, gamma=1e-3)
    assert occupancy_fourier(spec, 0.0)[0] == pytest.approx(1e3 + 0.5, rel=1e-3)


def test_quadrature_density_doubling():
    for spec, tau in ((single_mode_spec(), 0.0), (single_mode_spec(), 1.0), (two_mode_spec(), 0.5)):
        a = occupancy_fourier(spec, tau, QuadratureConfig(rtol=1e-4))
        b = occupancy_fourier(spec, tau, QuadratureConfig(rtol=1e-4, density=2.0))
        assert np.allclose(a, b, rtol=1e-3)


def test_fourier_unstable_raises(single_mode):
    with pytest.raises(QuadratureDiverged):
        occupancy_fourier(single_mode, np.pi)
    assert not spectral.is_stable_exact(single_mode, np.pi)
    assert spectral.is_stable_exact(single_mode, 0.0)


def test_wfflc_consistency(single_mode):
    for tau in (0.0, 0.5, 1.0, 5.5):
        r = effective_response(single_mode, 1.0, tau)
        we2, ge = r.omega_eff_sq[0, 0], r.gamma_eff[0, 0]
        n = 0.5 * 4e-5 * (1e5 + 0.5) / ge * (1 + 1.0 / we2)
        assert n == pytest.approx(markov.closed_form_single(single_mode, tau, Regime.WFFLC), rel=1e-12)


def test_decomposition_sums_to_total(single_mode):
    sg = spectrum_single(single_mode, 0.3)
    total = sum(sg.components[k] for k in spectral.COMPONENTS)
    assert np.allclose(total, sg.spectra[:, 0], rtol=1e-10, atol=0)


def test_spectrum_peak_and_width(single_mode):
    grid = np.linspace(0.9, 1.1, 200001)
    sg = spectrum_single(single_mode, 0.0, grid)
    s = sg.spectra[:, 0]
    i = int(np.argmax(s))
    r = effective_response(single_mode, 1.0, 0.0)
    assert grid[i] == pytest.approx(np.sqrt(r.omega_eff_sq[0, 0]), rel=1e-3)
    above = grid[s >= s[i] / 2]
    width = above[-1] - above[0]
    assert width == pytest.approx(r.gamma_eff[0, 0], rel=0.05)
    assert width == pytest.approx(0.0254, rel=0.05)


def _ratio_maxima(spec, tau, grid):
    # exact spectrum over the Lorentzian with the response frozen at resonance
    s = spectrum_single(spec, tau, grid).spectra[:, 0]
    p = spectral.single_mode_components(spec, grid, tau, frozen_at=spec.omega[0])
    r = s / (p["chi2"] * sum(p[k] for k in spectral.COMPONENTS))
    return grid[np.flatnonzero((r[1:-1] > r[:-2]) & (r[1:-1] > r[2:])) + 1]


def test_long_delay_spectrum_oscillates(single_mode):
    grid = np.linspace(0.5, 1.5, 4001)
    assert _ratio_maxima(single_mode, 4 * np.pi, grid).size >= 2
    tau = 16 * np.pi
    peaks = _ratio_maxima(single_mode, tau, grid)
    wings = np.diff(peaks[peaks > 1.1])
    assert np.allclose(wings, 2 * np.pi / tau, rtol=0.05)


def test_no_feedback_gain_kills_feedback_terms(single_mode):
    spec = single_mode_spec(g_cd=0.0)
    sg = spectrum_single(spec, 0.0)
    assert np.all(sg.components["feedback"] == 0)
    assert np.all(sg.components["interference"] == 0)


def test_spectrum_csv(tmp_path, single_mode):
    sg = spectrum_single(single_mode, 0.0, np.linspace(0, 2, 5))
    sg.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "Omega,S_q1,S_thermal,S_radiation_pressure,S_feedback,S_interference"
    assert len(lines) == 6
    back = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 1], sg.spectra[:, 0])


def test_residual_minimum_at_matched_gain():
    spec = single_mode_spec(g_cd=0.4, G=0.2, kappa=4.0, omega_fb=4.5)
    r = residual_occupancy(spec, 0.0)
    assert r.sfflc == pytest.approx(4.5 * 0.16 / 64, rel=1e-12)


def test_residual_formula_vs_quadrature(single_mode):
    formula = residual_occupancy(single_mode, 0.0).full
    quad = residual_quadrature(single_mode, 0.0, frozen=True, config=QuadratureConfig(rtol=1e-5))
    assert quad["total"] == pytest.approx(formula, rel=0.05)
    assert quad["total"] == pytest.approx(sum(quad[k] for k in
                                              ("radiation_pressure", "feedback", "interference")))


def test_residual_argmin_near_matched_gain():
    gains = np.linspace(0.1, 1.0, 181)
    vals = [residual_occupancy(single_mode_spec(g_cd=g), 0.0).full for g in gains]
    best = gains[int(np.argmin(vals))]
    assert best == pytest.approx(0.4, rel=0.10)


def test_bright_residual_single_mode_is_residual(single_mode):
    b = bright_residual(single_mode, 1, 0.0, quadrature=False)
    r = residual_occupancy(single_mode, 0.0)
    assert b.formula == pytest.approx(r.full, rel=1e-14)
    assert b.sfflc == pytest.approx(r.sfflc, rel=1e-14)


def test_bright_residual_sfflc_affine(single_mode):
    slope = spectral.residual_sfflc_slope(single_mode)
    one = bright_residual(single_mode, 1, quadrature=False).sfflc
    for n in (2, 5, 10):
        assert bright_residual(single_mode, n, quadrature=False).sfflc - one == pytest.approx(
            (n - 1) * slope, rel=1e-12)
    assert slope == pytest.approx((0.36 / 4 - 0.04) * 8.5 / (4 * 16 * 4.5) + 4.5 * 0.36 / 64,
                                  rel=1e-12)


def test_bright_residual_slope_ordering():
    def slope(g):
        spec = single_mode_spec(g_cd=g)
        a = bright_residual(spec, 1, frozen=True).quadrature
        b = bright_residual(spec, 6, frozen=True).quadrature
        return (b - a) / 5

    assert slope(0.4) < slope(0.6)


def test_bright_residual_validation(single_mode, two_mode):
    with pytest.raises(ValueError):
        bright_residual(two_mode, 2)
    with pytest.raises(ValueError):
        bright_residual(single_mode, 0)
