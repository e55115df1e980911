"""Bright/dark collective modes.

The bright mode is the superposition Q_1 = sum_k G_k q_k / |G| read out by the
cavity; the dark modes complete an orthonormal basis.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import AllZeroCouplings, Degenerate, QuadratureDiverged, Unstable
from .markov import CovarianceMatrix
from .model import Regime, SystemSpec, rates
from .quadrature import adaptive_simpson, tail_integral
from . import spectral

_DEGENERATE_TOL = 1e-9


@dataclass(frozen=True)
class CollectiveBasis:
    """Orthonormal rows; row 0 is the bright mode."""

    alpha: np.ndarray

    @property
    def bright(self) -> np.ndarray:
        return self.alpha[0]

    @property
    def dark(self) -> np.ndarray:
        return self.alpha[1:]

    def phase_space(self) -> np.ndarray:
        """Transformation acting on interleaved (q, p) vectors."""
        return np.kron(self.alpha, np.eye(2))

    def to_csv(self, path) -> None:
        spectral.write_csv(path, [f"mode_{j + 1}" for j in range(self.alpha.shape[1])], self.alpha)


def _fix_sign(v):
    nz = np.flatnonzero(np.abs(v) > 1e-14)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def build_basis(G) -> CollectiveBasis:
    """Bright row G/|G| completed by modified Gram-Schmidt on e_1, e_2, ...

    Each candidate is orthogonalized twice; candidates that are (numerically)
    in the span of previous rows are skipped.
    """
    G = np.asarray(G, dtype=float)
    norm = np.linalg.norm(G)
    if norm == 0.0:
        raise AllZeroCouplings("at least one coupling G_k must be nonzero")
    n = G.size
    rows = [_fix_sign(G / norm)]
    for i in range(n):
        if len(rows) == n:
            break
        v = np.zeros(n)
        v[i] = 1.0
        for _ in range(2):
            for r in rows:
                v = v - np.dot(r, v) * r
        nv = np.linalg.norm(v)
        if nv < 1e-10:
            continue
        rows.append(_fix_sign(v / nv))
    return CollectiveBasis(alpha=np.array(rows))


def transform_cov(cov, basis: CollectiveBasis) -> CovarianceMatrix:
    """Covariance in collective coordinates (Q_l, P_l) = sum_j alpha_lj (q_j, p_j)."""
    V = cov.V if isinstance(cov, CovarianceMatrix) else np.asarray(cov, dtype=float)
    T = basis.phase_space()
    if T.shape[1] != V.shape[0]:
        raise ValueError(f"basis of size {basis.alpha.shape[0]} does not match covariance "
                         f"of dimension {V.shape[0]}")
    W = T @ V @ T.T
    return CovarianceMatrix(V=0.5 * (W + W.T))


def transform_drift(M, basis: CollectiveBasis) -> np.ndarray:
    M = M.M if hasattr(M, "M") else np.asarray(M, dtype=float)
    T = basis.phase_space()
    return T @ M @ T.T


def is_degenerate(spec: SystemSpec) -> bool:
    """All modes share frequency, damping, occupancy and couplings."""
    w = spec.omega
    if np.max(w) - np.min(w) >= _DEGENERATE_TOL * np.mean(w):
        return False
    for arr in (spec.gamma, spec.nbar, spec.G, spec.g_cd):
        if np.max(arr) - np.min(arr) > _DEGENERATE_TOL * max(np.max(np.abs(arr)), 1e-300):
            return False
    return True


@dataclass(frozen=True)
class DegenerateOccupancy:
    bright: float
    dark: float            # nbar + 1/2
    dark_high_t: float     # nbar, the large-nbar shorthand


def degenerate_bright_occupancy(spec: SystemSpec, tau: Optional[float] = None) -> DegenerateOccupancy:
    """Bright and dark occupancies for N identical modes (thermal noise only).

    The bright mode carries N times the single-mode feedback rates evaluated
    at the mode frequency; the dark modes are decoupled from the feedback.
    """
    if not is_degenerate(spec):
        raise Degenerate("degenerate_bright_occupancy requires identical modes")
    tau = spec.tau if tau is None else float(tau)
    n = spec.n_modes
    single = _first_mode(spec)
    r = rates(single, Regime.WFFLC)
    w, g, nb = spec.omega[0], spec.gamma[0], spec.nbar[0]
    gt, dw = r.gamma_fb[0, 0], r.delta_omega[0, 0]
    c, s = np.cos(w * tau), np.sin(w * tau)
    damping = g + n * (gt * c - dw * s)
    stiff = w + n * (dw * c + gt * s)
    if damping <= 0 or stiff <= 0:
        raise Unstable(f"bright-mode effective damping {damping:.6g}", damping=damping)
    nb_bright = 0.5 * g * (nb + 0.5) / damping * (1.0 + w / stiff)
    return DegenerateOccupancy(bright=float(nb_bright), dark=float(nb + 0.5), dark_high_t=float(nb))


def _first_mode(spec: SystemSpec) -> SystemSpec:
    return replace(spec, modes=spec.modes[:1])


def bright_damping_from_drift(M, basis: CollectiveBasis) -> float:
    """Energy damping rate of the bright block of a collective drift matrix."""
    Mc = transform_drift(M, basis)
    block = Mc[:2, :2]
    ev = np.linalg.eigvals(block)
    return float(-2.0 * np.mean(ev.real))


# --- Fourier-domain collective response --------------------------------------

@dataclass(frozen=True)
class DarkResponse:
    """Linear maps from the mode noises zeta_j to collective amplitudes.

    bright: (M, N) with Q_1 = bright @ zeta.
    coupling: (M, N-1) bright-to-dark coefficients c_k.
    dark: (M, N-1, N) with Q_k = dark @ zeta = free_k - c_k Q_1.
    """

    Omega: np.ndarray
    bright: np.ndarray
    coupling: np.ndarray
    dark: np.ndarray


def dark_mode_response(spec: SystemSpec, Omega, tau: Optional[float] = None,
                       basis: Optional[CollectiveBasis] = None) -> DarkResponse:
    """Bright amplitude from the noises and the dark amplitudes given the bright one.

    With d_j = (w_j^2 - Omega^2) + i Omega gamma_j and the loop transfer
    F(Omega) = i Omega w_fb e^{-i Omega tau}/((w_fb + i Omega)(kappa + i Omega)):
      Q_1 (1 + L) = sum_j alpha_1j w_j zeta_j / d_j,  L = |G| F sum_j alpha_1j w_j g_j / d_j
      Q_k + c_k Q_1 = sum_j alpha_kj w_j zeta_j / d_j, c_k = |G| F sum_j alpha_kj w_j g_j / d_j
    """
    tau = spec.tau if tau is None else float(tau)
    basis = basis or build_basis(spec.G)
    Om = np.atleast_1d(np.asarray(Omega, dtype=float))
    w, g = spec.omega, spec.g_cd
    Gn = np.linalg.norm(spec.G)
    k, wf = spec.kappa, spec.omega_fb
    d = (w**2)[None, :] - Om[:, None] ** 2 + 1j * spec.gamma[None, :] * Om[:, None]
    F = 1j * Om * wf * np.exp(-1j * Om * tau) / ((wf + 1j * Om) * (k + 1j * Om))
    free = basis.alpha[None, :, :] * (w[None, None, :] / d[:, None, :])   # (M, N, N)
    coup = Gn * F[:, None] * np.einsum("lj,mj->ml", basis.alpha, w[None, :] * g[None, :] / d)
    bright = free[:, 0, :] / (1.0 + coup[:, 0])[:, None]
    dark = free[:, 1:, :] - coup[:, 1:, None] * bright[:, None, :]
    return DarkResponse(Omega=Om, bright=bright, coupling=coup[:, 1:], dark=dark)


def collective_transfer(spec: SystemSpec, Omega, tau: Optional[float] = None,
                        basis: Optional[CollectiveBasis] = None):
    """Noise-to-collective maps for positions and momenta, each (M, N, N)."""
    basis = basis or build_basis(spec.G)
    r = dark_mode_response(spec, Omega, tau, basis)
    A = np.concatenate([r.bright[:, None, :], r.dark], axis=1)
    # q = alpha^T Q, p_j = (i Omega / w_j) q_j, P = alpha p
    q = np.einsum("lj,mln->mjn", basis.alpha, A)
    p = (1j * r.Omega[:, None, None] / spec.omega[None, :, None]) * q
    P = np.einsum("lj,mjn->mln", basis.alpha, p)
    return A, P


def collective_spectra(spec: SystemSpec, Omega, tau: Optional[float] = None,
                       basis: Optional[CollectiveBasis] = None,
                       model: str = "full") -> np.ndarray:
    """Position spectra of the collective modes Q_l, shape (M, N)."""
    basis = basis or build_basis(spec.G)
    Om = np.atleast_1d(np.asarray(Omega, dtype=float))
    A, _ = collective_transfer(spec, Om, tau, basis)
    S = spectral.noise_spectrum(spec, Om, tau, model)
    return np.real(np.einsum("mln,mnk,mlk->ml", A, S, np.conj(A)))


def collective_occupancy_fourier(spec: SystemSpec, tau: Optional[float] = None,
                                 basis: Optional[CollectiveBasis] = None,
                                 model: str = "white-thermal",
                                 config: Optional[spectral.QuadratureConfig] = None) -> np.ndarray:
    """Occupancies (<Q_l^2> + <P_l^2>)/2 of the collective modes by quadrature."""
    tau = spec.tau if tau is None else float(tau)
    basis = basis or build_basis(spec.G)
    cfg = config or spectral.QuadratureConfig()
    if cfg.check_stability and spectral.unstable_root_count(spec, tau) > 0:
        raise QuadratureDiverged(f"closed loop unstable at tau={tau:g}")

    def integrand(Om):
        A, P = collective_transfer(spec, Om, tau, basis)
        S = spectral.noise_spectrum(spec, Om, tau, model)
        sq = np.einsum("mln,mnk,mlk->ml", A, S, np.conj(A))
        sp = np.einsum("mln,mnk,mlk->ml", P, S, np.conj(P))
        return np.real(sq + sp)

    edges = spectral._base_edges(spec, tau, cfg)
    res = adaptive_simpson(integrand, edges, rtol=0.25 * cfg.rtol, atol=cfg.atol,
                           max_depth=cfg.max_depth)
    total = res.value
    if cfg.include_tail:
        total = total + tail_integral(integrand, edges[-1])
    return np.real(total) / (2.0 * np.pi)
