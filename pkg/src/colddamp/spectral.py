"""Exact steady state in the Fourier domain.

Frequencies are real, Omega >= 0 unless stated. The feedback loop enters the
mechanical susceptibility through the frequency-resolved rates
Gt_jk(Omega) and dw_jk(Omega); with them

    (chi^-1)_jk = delta_jk [(w_j^2 - Omega^2) + i gamma_j Omega]/w_j
                  + Omega (dw_jk + i Gt_jk) exp(-i Omega tau) / w_k.

Occupancies follow the half-line convention used for the residual
occupancy: n_j = (1/2 pi) int_0^inf (chi S chi^+)_jj (1 + Omega^2/w_j^2).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import QuadratureDiverged
from .model import Regime, SystemSpec
from .markov import build_drift
from .quadrature import adaptive_simpson, tail_integral

NOISE_MODELS = ("white-thermal", "exact-thermal", "full")


def _frequency_rates(spec: SystemSpec, Omega):
    """Frequency-resolved damping and shift matrices, shape (M, N, N)."""
    Omega = np.atleast_1d(np.asarray(Omega, dtype=float))
    k, wf = spec.kappa, spec.omega_fb
    den = (k**2 + Omega**2) * (wf**2 + Omega**2)
    base = np.outer(spec.g_cd, spec.G * spec.omega) * wf
    gt = base[None] * ((k * wf - Omega**2) / den)[:, None, None]
    dw = base[None] * (Omega * (wf + k) / den)[:, None, None]
    return gt, dw


@dataclass(frozen=True)
class EffectiveResponse:
    """Per-mode effective stiffness and damping on a frequency grid, shape (M, N)."""

    Omega: np.ndarray
    omega_eff_sq: np.ndarray
    gamma_eff: np.ndarray


def effective_response(spec: SystemSpec, Omega, tau: Optional[float] = None,
                       scale: float = 1.0) -> EffectiveResponse:
    """Diagonal effective response; ``scale`` multiplies the feedback part
    (scale = N gives the bright mode of N identical modes)."""
    tau = spec.tau if tau is None else float(tau)
    Omega = np.atleast_1d(np.asarray(Omega, dtype=float))
    gt, dw = _frequency_rates(spec, Omega)
    gt = np.diagonal(gt, axis1=1, axis2=2)
    dw = np.diagonal(dw, axis1=1, axis2=2)
    c = np.cos(Omega * tau)[:, None]
    s = np.sin(Omega * tau)[:, None]
    w2 = spec.omega**2
    om = Omega[:, None]
    return EffectiveResponse(
        Omega=Omega,
        omega_eff_sq=w2[None, :] + scale * om * (dw * c + gt * s),
        gamma_eff=spec.gamma[None, :] + scale * (gt * c - dw * s),
    )


def susceptibility_inverse(spec: SystemSpec, Omega, tau: Optional[float] = None) -> np.ndarray:
    """Inverse mechanical susceptibility. Scalar Omega gives (N, N), arrays (M, N, N)."""
    tau = spec.tau if tau is None else float(tau)
    scalar = np.ndim(Omega) == 0
    Om = np.atleast_1d(np.asarray(Omega, dtype=float))
    gt, dw = _frequency_rates(spec, Om)
    w = spec.omega
    phase = np.exp(-1j * Om * tau)[:, None, None]
    out = Om[:, None, None] * (dw + 1j * gt) * phase / w[None, None, :]
    bare = ((w**2)[None, :] - Om[:, None] ** 2 + 1j * spec.gamma[None, :] * Om[:, None]) / w[None, :]
    idx = np.arange(spec.n_modes)
    out[:, idx, idx] += bare
    return out[0] if scalar else out


def susceptibility(spec: SystemSpec, Omega, tau: Optional[float] = None) -> np.ndarray:
    inv = susceptibility_inverse(spec, Omega, tau)
    return np.linalg.inv(inv)


def thermal_temperature(spec: SystemSpec) -> np.ndarray:
    """Per-mode dimensionless temperature reproducing nbar at omega_j."""
    nb = spec.nbar
    with np.errstate(divide="ignore"):
        return np.where(nb > 0, spec.omega / np.log1p(1.0 / np.where(nb > 0, nb, 1.0)), 0.0)


def _thermal_diag(spec: SystemSpec, Om, model, temperature=None):
    if model == "exact-thermal":
        T = thermal_temperature(spec) if temperature is None else np.broadcast_to(
            np.asarray(temperature, dtype=float), (spec.n_modes,))
        x = np.abs(Om)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            coth = np.where(T[None, :] > 0, 1.0 / np.tanh(x / (2.0 * np.where(T > 0, T, 1.0))[None, :]),
                            1.0)
            val = (spec.gamma / spec.omega)[None, :] * x * coth
            # Omega -> 0 limit of Omega coth(Omega/2T)
            zero = (x == 0) & (T[None, :] > 0)
            val = np.where(zero, (2.0 * spec.gamma * T / spec.omega)[None, :], val)
        return val
    return np.broadcast_to(((2.0 * spec.nbar + 1.0) * spec.gamma)[None, :], (len(Om), spec.n_modes))


def noise_spectrum(spec: SystemSpec, Omega, tau: Optional[float] = None,
                   model: str = "full", temperature=None) -> np.ndarray:
    """Noise spectral matrix S(Omega); scalar Omega gives (N, N), arrays (M, N, N).

    ``full`` adds to the thermal diagonal the feedback (shot) noise, the
    radiation-pressure noise and the feedback/radiation-pressure
    interference -(Omega/2)[conj(b_jk) + b_kj] with
    b_jk = (Gt_jk + i dw_jk) exp(i Omega tau) / w_k.
    """
    if model not in NOISE_MODELS:
        raise ValueError(f"unknown noise model {model!r}; choose from {NOISE_MODELS}")
    tau = spec.tau if tau is None else float(tau)
    scalar = np.ndim(Omega) == 0
    Om = np.atleast_1d(np.asarray(Omega, dtype=float))
    n = spec.n_modes
    S = np.zeros((len(Om), n, n), dtype=complex)
    idx = np.arange(n)
    S[:, idx, idx] = _thermal_diag(spec, Om, "white-thermal" if model == "full" else model,
                                   temperature)
    if model == "full":
        k, wf, eta = spec.kappa, spec.omega_fb, spec.cavity.eta
        g, G = spec.g_cd, spec.G
        fb = Om**2 * wf**2 / (4.0 * k * eta * (wf**2 + Om**2))
        rp = k / (Om**2 + k**2)
        S += fb[:, None, None] * np.outer(g, g)[None] + rp[:, None, None] * np.outer(G, G)[None]
        gt, dw = _frequency_rates(spec, Om)
        b = (gt + 1j * dw) * np.exp(1j * Om * tau)[:, None, None] / spec.omega[None, None, :]
        S += -0.5 * Om[:, None, None] * (np.conj(b) + np.swapaxes(b, 1, 2))
    return S[0] if scalar else S


def noise_spectrum_direct(spec: SystemSpec, Omega, tau: Optional[float] = None) -> np.ndarray:
    """Full noise matrix assembled from the filtered feedback gain g0(Omega).

    Independent assembly used to cross-check ``noise_spectrum``:
    g0_j = i Omega w_fb g_j/(w_fb + i Omega), interference
    i g0_j G_k e^{-i Omega tau}/(2(kappa + i Omega)) + h.c.
    """
    tau = spec.tau if tau is None else float(tau)
    Om = np.atleast_1d(np.asarray(Omega, dtype=float))
    k, wf, eta = spec.kappa, spec.omega_fb, spec.cavity.eta
    g0 = 1j * Om[:, None] * wf * spec.g_cd[None, :] / (wf + 1j * Om[:, None])
    G = spec.G
    n = spec.n_modes
    S = np.zeros((len(Om), n, n), dtype=complex)
    idx = np.arange(n)
    S[:, idx, idx] = (2.0 * spec.nbar + 1.0) * spec.gamma
    S += g0[:, :, None] * np.conj(g0)[:, None, :] / (4.0 * k * eta)
    S += (k / (Om**2 + k**2))[:, None, None] * np.outer(G, G)[None]
    cross = 1j * g0[:, :, None] * G[None, None, :] * (
        np.exp(-1j * Om * tau) / (2.0 * (k + 1j * Om)))[:, None, None]
    S += cross + np.conj(np.swapaxes(cross, 1, 2))
    return S


def position_spectra(spec: SystemSpec, Omega, tau: Optional[float] = None,
                     model: str = "white-thermal", temperature=None,
                     full_matrix: bool = False) -> np.ndarray:
    """chi S chi^+ on a grid: diagonal (M, N) or the full matrix (M, N, N)."""
    Om = np.atleast_1d(np.asarray(Omega, dtype=float))
    chi = susceptibility(spec, Om, tau)
    if model == "full":
        S = noise_spectrum(spec, Om, tau, model)
        out = np.einsum("mjk,mkl,mil->mji", chi, S, np.conj(chi))
        return out if full_matrix else np.real(np.diagonal(out, axis1=1, axis2=2))
    diag = _thermal_diag(spec, Om, model, temperature)
    if full_matrix:
        return np.einsum("mjk,mk,mik->mji", chi, diag, np.conj(chi))
    return np.einsum("mjk,mk->mj", np.abs(chi) ** 2, diag)


def loop_gain(spec: SystemSpec, Omega, tau: Optional[float] = None) -> np.ndarray:
    """Scalar open-loop gain of the rank-one feedback loop on the imaginary axis.

    det(chi^-1) = prod_j d_j(Omega) * (1 + L(Omega)), so the closed loop is
    stable iff 1 + L has no zeros in the right half-plane.
    """
    tau = spec.tau if tau is None else float(tau)
    Om = np.atleast_1d(np.asarray(Omega, dtype=float))
    k, wf = spec.kappa, spec.omega_fb
    F = 1j * Om * wf * np.exp(-1j * Om * tau) / ((wf + 1j * Om) * (k + 1j * Om))
    w = spec.omega
    d = ((w**2)[None, :] - Om[:, None] ** 2 + 1j * spec.gamma[None, :] * Om[:, None]) / w[None, :]
    return F * np.sum((spec.g_cd * spec.G)[None, :] / d, axis=1)


def unstable_root_count(spec: SystemSpec, tau: Optional[float] = None, nodes=None,
                        max_rounds: int = 40) -> int:
    """Right half-plane zeros of 1 + L from the phase winding along Omega >= 0.

    The open loop is stable (damped oscillators and first-order filters), so
    the count equals -(total phase change of 1 + L over [0, inf)) / pi.
    """
    tau = spec.tau if tau is None else float(tau)
    omax = _omega_max(spec)
    if nodes is None:
        nodes = _base_edges(spec, tau, QuadratureConfig())
    x = np.unique(np.concatenate([np.asarray(nodes, dtype=float), [0.0],
                                  np.geomspace(omax, 1e3 * omax, 60)]))
    for _ in range(max_rounds):
        z = 1.0 + loop_gain(spec, x, tau)
        step = np.angle(z[1:] / z[:-1])
        bad = np.abs(step) > np.pi / 8
        if not np.any(bad):
            break
        mids = 0.5 * (x[:-1][bad] + x[1:][bad])
        x = np.unique(np.concatenate([x, mids]))
    else:
        raise QuadratureDiverged("could not resolve the loop phase")
    return int(round(-step.sum() / np.pi))


@dataclass
class QuadratureConfig:
    rtol: float = 1e-3
    atol: float = 0.0
    window_halfwidth: float = 50.0     # in units of the local linewidth
    window_points: int = 200
    points_per_decade: int = 25
    density: float = 1.0               # multiplies every base-grid count
    max_depth: int = 20
    include_tail: bool = True
    check_stability: bool = True


def _omega_max(spec: SystemSpec) -> float:
    return max(10 * spec.kappa, 10 * spec.omega_fb, float(np.max(spec.omega)) + 10 * spec.kappa)


def _peak_windows(spec: SystemSpec, tau: float):
    """(center, linewidth) pairs: bare modes plus wFFLC normal modes."""
    resp = effective_response(spec, spec.omega, tau)
    out = []
    for j, w in enumerate(spec.omega):
        width = max(abs(resp.gamma_eff[j, j]), spec.gamma[j])
        out.append((w, width))
        wsq = resp.omega_eff_sq[j, j]
        if wsq > 0:
            out.append((np.sqrt(wsq), width))
    try:
        ev = np.linalg.eigvals(build_drift(spec.with_regime(Regime.WFFLC), tau=tau).M)
        for lam in ev:
            if lam.imag > 0:
                out.append((lam.imag, max(2.0 * abs(lam.real), float(np.min(spec.gamma)))))
    except np.linalg.LinAlgError:
        pass
    return out


def _base_edges(spec: SystemSpec, tau: float, cfg: QuadratureConfig) -> np.ndarray:
    omax = _omega_max(spec)
    wmin, wmax = float(np.min(spec.omega)), float(np.max(spec.omega))
    dens = cfg.density
    lo = 1e-3 * wmin
    n_log = int(np.ceil(cfg.points_per_decade * dens * np.log10(omax / lo))) + 1
    parts = [np.array([0.0]), np.geomspace(lo, omax, n_log),
             np.linspace(0.0, 2.0 * wmax, int(np.ceil(80 * dens)) + 1)]
    npts = max(int(np.ceil(cfg.window_points * dens)), 3)
    for center, width in _peak_windows(spec, tau):
        half = cfg.window_halfwidth * width
        a, b = max(center - half, 0.0), min(center + half, omax)
        if b > a:
            parts.append(np.linspace(a, b, npts))
        # a coarser apron catches peaks pulled away from the estimate
        a2, b2 = max(center - 10 * half, 0.0), min(center + 10 * half, omax)
        if b2 > a2:
            parts.append(np.linspace(a2, b2, max(npts // 4, 3)))
    edges = np.unique(np.concatenate(parts))
    edges = edges[edges <= omax]
    if tau > 0:
        cap = (2.0 * np.pi / tau) / 16.0 / dens
        refined = [edges[:1]]
        for a, b in zip(edges[:-1], edges[1:]):
            m = int(np.ceil((b - a) / cap))
            refined.append(np.linspace(a, b, m + 1)[1:])
        edges = np.concatenate(refined)
    return edges


def _integrate_modes(spec, integrand, tau, cfg: QuadratureConfig):
    """Half-line integral of integrand(Omega) -> (M, K), divided by 2 pi."""
    edges = _base_edges(spec, tau, cfg)
    res = adaptive_simpson(integrand, edges, rtol=0.25 * cfg.rtol, atol=cfg.atol,
                           max_depth=cfg.max_depth)
    total = res.value
    if cfg.include_tail:
        total = total + tail_integral(integrand, edges[-1])
    return total / (2.0 * np.pi), res


def occupancy_fourier(spec: SystemSpec, tau: Optional[float] = None,
                      config: Optional[QuadratureConfig] = None,
                      model: str = "white-thermal", temperature=None) -> np.ndarray:
    """Exact steady-state occupancies (<q^2> + <p^2>)/2 by spectral quadrature.

    Raises QuadratureDiverged when the closed loop has unstable roots or the
    quadrature cannot converge.
    """
    cfg = config or QuadratureConfig()
    tau = spec.tau if tau is None else float(tau)
    w2 = spec.omega**2

    def integrand(Om):
        diag = position_spectra(spec, Om, tau, model, temperature)
        return diag * (1.0 + Om[:, None] ** 2 / w2[None, :])

    if cfg.check_stability:
        z = unstable_root_count(spec, tau)
        if z > 0:
            raise QuadratureDiverged(
                f"closed loop has {z} right half-plane roots at tau={tau:g}; no steady state")
    n, _ = _integrate_modes(spec, integrand, tau, cfg)
    return np.real(n)


def is_stable_exact(spec: SystemSpec, tau: Optional[float] = None) -> bool:
    return unstable_root_count(spec, tau) == 0


# --- single-mode decomposition ------------------------------------------------

COMPONENTS = ("thermal", "radiation_pressure", "feedback", "interference")


@dataclass
class SpectrumGrid:
    Omega: np.ndarray
    spectra: np.ndarray                     # (M, N) position spectra
    components: Optional[dict] = None       # name -> (M,) for N = 1
    tau: float = 0.0
    prefix: str = "S_q"                     # "S_Q" for collective coordinates

    def to_csv(self, path) -> None:
        n = self.spectra.shape[1]
        cols = ["Omega"] + [f"{self.prefix}{j + 1}" for j in range(n)]
        data = [self.Omega] + [self.spectra[:, j] for j in range(n)]
        if self.components:
            for name in COMPONENTS:
                cols.append(f"S_{name}")
                data.append(self.components[name])
        write_csv(path, cols, np.column_stack(data))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in (rows if isinstance(rows, list) else np.atleast_2d(rows)):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    v = float(v)
    if np.isnan(v):
        return ""
    return format(v, ".17g")


def single_mode_components(spec: SystemSpec, Omega, tau: Optional[float] = None,
                           scale: float = 1.0, frozen_at: Optional[float] = None) -> dict:
    """Noise components of one mode (or the bright mode for scale = N) and |chi|^2.

    The non-thermal components are multiplied by ``scale``. ``frozen_at``
    evaluates the susceptibility with the effective response fixed at that
    frequency (the near-resonance approximation).
    """
    if spec.n_modes != 1:
        raise ValueError("single-mode decomposition needs N = 1")
    tau = spec.tau if tau is None else float(tau)
    Om = np.atleast_1d(np.asarray(Omega, dtype=float))
    w, gam = spec.omega[0], spec.gamma[0]
    k, wf, eta = spec.kappa, spec.omega_fb, spec.cavity.eta
    g, G = spec.g_cd[0], spec.G[0]
    resp = effective_response(spec, Om, tau, scale)
    if frozen_at is None:
        wsq, ge = resp.omega_eff_sq[:, 0], resp.gamma_eff[:, 0]
    else:
        fr = effective_response(spec, frozen_at, tau, scale)
        wsq = np.full_like(Om, fr.omega_eff_sq[0, 0])
        ge = np.full_like(Om, fr.gamma_eff[0, 0])
    chi2 = w**2 / ((wsq - Om**2) ** 2 + Om**2 * ge**2)
    single = effective_response(spec, Om, tau, 1.0)
    return {
        "chi2": chi2,
        "thermal": np.full_like(Om, gam * (2.0 * spec.nbar[0] + 1.0)),
        "radiation_pressure": scale * k * G**2 / (k**2 + Om**2),
        "feedback": scale * Om**2 * wf**2 * g**2 / (4.0 * k * eta * (wf**2 + Om**2)),
        "interference": -scale * Om * (single.gamma_eff[:, 0] - gam) / w,
    }


def spectrum_single(spec: SystemSpec, tau: Optional[float] = None, grid=None) -> SpectrumGrid:
    """Position spectrum of one mode with its four noise contributions."""
    tau = spec.tau if tau is None else float(tau)
    if grid is None:
        grid = np.linspace(0.0, 2.0 * spec.omega[0], 2001)
    Om = np.asarray(grid, dtype=float)
    parts = single_mode_components(spec, Om, tau)
    comps = {name: parts["chi2"] * parts[name] for name in COMPONENTS}
    total = sum(comps[name] for name in COMPONENTS)
    return SpectrumGrid(Omega=Om, spectra=total[:, None], components=comps, tau=tau)


def spectrum(spec: SystemSpec, tau: Optional[float] = None, grid=None,
             model: str = "full") -> SpectrumGrid:
    """Per-mode diagonal position spectra; N = 1 also carries the decomposition."""
    tau = spec.tau if tau is None else float(tau)
    if grid is None:
        grid = np.linspace(0.0, 2.0 * float(np.max(spec.omega)), 2001)
    Om = np.asarray(grid, dtype=float)
    if spec.n_modes == 1 and model == "full":
        return spectrum_single(spec, tau, Om)
    return SpectrumGrid(Omega=Om, spectra=position_spectra(spec, Om, tau, model), tau=tau)


# --- residual occupancy -------------------------------------------------------

@dataclass(frozen=True)
class ResidualOccupancy:
    full: float          # closed form with the effective response at Omega = omega
    sfflc: float         # fast-cavity, fast-filter approximation


def _residual_formula(spec: SystemSpec, tau: float, scale: float) -> float:
    w = spec.omega[0]
    k, wf, eta = spec.kappa, spec.omega_fb, spec.cavity.eta
    g, G = spec.g_cd[0], spec.G[0]
    r = effective_response(spec, w, tau, scale)
    we2, ge = r.omega_eff_sq[0, 0], r.gamma_eff[0, 0]
    G2 = scale * G**2
    g2 = scale * g**2
    rp = G2 / (4.0 * we2 * ge) * (
        k - (k**2 - w**2) * (k + ge) * (we2 + k**2 - k * ge) / ((we2 + k**2) ** 2 - ge**2 * k**2))
    fb = wf**2 * g2 / (16.0 * k * eta * we2 * ge) * (
        w**2 + ((we2 + wf**2) * (we2**2 - w**2 * wf**2) + wf * (wf**2 - w**2) * we2 * ge)
        / ((we2 + wf**2) ** 2 - ge**2 * wf**2))
    return float(rp + fb - 0.5)


def residual_sfflc_slope(spec: SystemSpec) -> float:
    """Per-mode increase of the bright-mode residual in the sFFLC limit."""
    w = spec.omega[0]
    k, wf, eta = spec.kappa, spec.omega_fb, spec.cavity.eta
    g, G = spec.g_cd[0], spec.G[0]
    return float((g**2 * w**2 / (4 * eta) - G**2) * (k + wf) / (4 * k**2 * wf)
                 + wf * g**2 / (16 * k * eta))


def _residual_sfflc(spec: SystemSpec, n_modes: int = 1) -> float:
    w = spec.omega[0]
    k, eta = spec.kappa, spec.cavity.eta
    g, G = spec.g_cd[0], spec.G[0]
    gam = w * g * G / k
    se = np.sqrt(eta)
    return float((g * w / (2 * se) - G) ** 2 / (2 * k * gam) + (1 - se) / (2 * se)
                 + n_modes * residual_sfflc_slope(spec))


def residual_occupancy(spec: SystemSpec, tau: Optional[float] = None) -> ResidualOccupancy:
    """Ground-state floor from feedback and radiation-pressure noise (-1/2 subtracted)."""
    if spec.n_modes != 1:
        raise ValueError("residual_occupancy needs N = 1")
    tau = spec.tau if tau is None else float(tau)
    return ResidualOccupancy(full=_residual_formula(spec, tau, 1.0), sfflc=_residual_sfflc(spec))


def residual_quadrature(spec: SystemSpec, tau: Optional[float] = None, n_modes: int = 1,
                        frozen: bool = False, config: Optional[QuadratureConfig] = None) -> dict:
    """Quadrature of the non-thermal noise against the (bright) susceptibility.

    Returns the radiation-pressure, feedback and interference contributions
    and their sum. The interference part carries the vacuum offset, so no
    extra 1/2 is subtracted.
    """
    cfg = config or QuadratureConfig()
    tau = spec.tau if tau is None else float(tau)
    w = spec.omega[0]
    names = ("radiation_pressure", "feedback", "interference")

    def integrand(Om):
        p = single_mode_components(spec, Om, tau, float(n_modes),
                                   frozen_at=w if frozen else None)
        weight = p["chi2"] * (1.0 + Om**2 / w**2)
        return np.column_stack([weight * p[nm] for nm in names])

    bright = spec.with_modes(g_cd=spec.g_cd * np.sqrt(n_modes), G=spec.G * np.sqrt(n_modes))
    # the quadrature grid must resolve the bright linewidth
    vals, _ = _integrate_modes(bright, integrand, tau, cfg)
    vals = np.real(vals)
    out = dict(zip(names, (float(v) for v in vals)))
    out["total"] = float(np.sum(vals))
    return out


@dataclass(frozen=True)
class BrightResidual:
    formula: float       # closed form with N-fold rates and noise
    sfflc: float         # affine-in-N approximation
    quadrature: Optional[float] = None


def bright_residual(spec: SystemSpec, n_modes: int, tau: Optional[float] = None,
                    quadrature: bool = True, frozen: bool = False,
                    config: Optional[QuadratureConfig] = None) -> BrightResidual:
    """Residual occupancy of the bright mode of ``n_modes`` identical modes.

    ``spec`` describes one representative mode.
    """
    if spec.n_modes != 1:
        raise ValueError("pass a single representative mode")
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    tau = spec.tau if tau is None else float(tau)
    q = None
    if quadrature:
        q = residual_quadrature(spec, tau, n_modes, frozen=frozen, config=config)["total"]
    return BrightResidual(formula=_residual_formula(spec, tau, float(n_modes)),
                          sfflc=_residual_sfflc(spec, n_modes),
                          quadrature=q)
