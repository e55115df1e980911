"""Markovian steady state: drift/diffusion matrices, Lyapunov solve, closed forms.

Phase-space ordering is interleaved, (q_1, p_1, ..., q_N, p_N).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import Degenerate, EigenFailure, NotStable, SolveFailed, Unstable
from .model import RateSet, Regime, SystemSpec, rates as compute_rates

# above this phase-space dimension the Kronecker system gets too large
_KRON_MAX_DIM = 32
_DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class DriftMatrix:
    M: np.ndarray
    regime: Regime
    tau: float


@dataclass(frozen=True)
class DiffusionMatrix:
    D: np.ndarray


@dataclass(frozen=True)
class CovarianceMatrix:
    """Steady-state single-operator second moments V_ab = <x_a x_b>."""

    V: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.V.shape[0] // 2

    @property
    def X(self) -> np.ndarray:
        """Symmetrized momentum moments <p_i p_j + p_j p_i>."""
        return 2.0 * self.V[1::2, 1::2]

    @property
    def Z(self) -> np.ndarray:
        """Symmetrized position moments <q_i q_j + q_j q_i>."""
        return 2.0 * self.V[0::2, 0::2]

    @property
    def Y(self) -> np.ndarray:
        """Mixed moments <q_i p_j + p_j q_i>."""
        return 2.0 * self.V[0::2, 1::2]


def _as_array(M):
    return M.M if isinstance(M, DriftMatrix) else np.asarray(M, dtype=float)


def build_drift(spec: SystemSpec, rate_set: Optional[RateSet] = None,
                tau: Optional[float] = None,
                include_intrinsic_damping: bool = True) -> DriftMatrix:
    """Drift matrix of the delay-reduced Langevin equations.

    With c_k = cos(omega_k tau), s_k = sin(omega_k tau) the momentum row reads
    dp_j/dt = -omega_j q_j - gamma_j p_j - sum_k [dO_jk q_k + dG_jk p_k],
    dG_jk = Gam_jk c_k - dw_jk s_k and dO_jk = Gam_jk s_k + dw_jk c_k.

    ``include_intrinsic_damping=False`` drops gamma_j from the drift (the
    gamma << Gamma limit assumed by the two-mode and N-mode closed forms);
    the diffusion matrix is unaffected.
    """
    if rate_set is None:
        rate_set = compute_rates(spec)
    tau = spec.tau if tau is None else float(tau)
    n = spec.n_modes
    w = spec.omega
    c = np.cos(w * tau)
    s = np.sin(w * tau)
    gam, dw = rate_set.gamma_fb, rate_set.delta_omega
    d_damp = gam * c[None, :] - dw * s[None, :]
    d_freq = gam * s[None, :] + dw * c[None, :]

    M = np.zeros((2 * n, 2 * n))
    iq = 2 * np.arange(n)
    ip = iq + 1
    M[iq, ip] = w
    M[np.ix_(ip, iq)] -= d_freq
    M[np.ix_(ip, ip)] -= d_damp
    M[ip, iq] -= w
    if include_intrinsic_damping:
        M[ip, ip] -= spec.gamma
    return DriftMatrix(M=M, regime=rate_set.regime, tau=tau)


def build_diffusion(spec: SystemSpec, optical_noise: Optional[bool] = None) -> DiffusionMatrix:
    """Momentum diffusion (2 nbar_i + 1) gamma_i delta_ij + G_i G_j / kappa.

    ``optical_noise`` controls the measurement back-action term G_i G_j/kappa.
    By default it is included in the sFFLC regime and left out in the wFFLC
    regime, whose reduction keeps only the delta-correlated thermal noise.
    """
    if optical_noise is None:
        optical_noise = spec.regime is not Regime.WFFLC
    n = spec.n_modes
    Dp = np.diag((2.0 * spec.nbar + 1.0) * spec.gamma)
    if optical_noise:
        Dp = Dp + np.outer(spec.G, spec.G) / spec.kappa
    D = np.zeros((2 * n, 2 * n))
    D[1::2, 1::2] = Dp
    return DiffusionMatrix(D=D)


def stability_margin(M) -> float:
    """Largest real part among the drift eigenvalues (negative means stable)."""
    M = _as_array(M)
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    if not np.all(np.isfinite(ev)):
        raise EigenFailure("eigenvalue solver returned non-finite values")
    return float(np.max(ev.real))


def _solve_kron(M, D):
    dim = M.shape[0]
    eye = np.eye(dim)
    # column-major vec: vec(M V + V M^T) = (I kron M + M kron I) vec(V)
    A = np.kron(eye, M) + np.kron(M, eye)
    b = -D.reshape(-1, order="F")
    try:
        lu = sla.lu_factor(A, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolveFailed(str(exc)) from exc
    if np.any(np.abs(np.diag(lu[0])) == 0.0):
        raise SolveFailed("Lyapunov system is singular")
    x = sla.lu_solve(lu, b)
    # one step of iterative refinement
    x = x + sla.lu_solve(lu, b - A @ x)
    return x.reshape(dim, dim, order="F")


def solve_lyapunov(M, D, check_stability: bool = True) -> CovarianceMatrix:
    """Solve M V + V M^T = -D for the steady-state covariance."""
    M = _as_array(M)
    D = D.D if isinstance(D, DiffusionMatrix) else np.asarray(D, dtype=float)
    if check_stability:
        margin = stability_margin(M)
        if margin >= 0.0:
            raise NotStable(margin)
    if M.shape[0] <= _KRON_MAX_DIM:
        V = _solve_kron(M, D)
    else:
        V = sla.solve_continuous_lyapunov(M, -D)
    if not np.all(np.isfinite(V)):
        raise SolveFailed("non-finite covariance")
    V = 0.5 * (V + V.T)
    scale = np.max(np.abs(D))
    resid = np.max(np.abs(M @ V + V @ M.T + D))
    if scale > 0 and resid > 1e-10 * scale:
        raise SolveFailed(f"Lyapunov residual {resid:.3e} exceeds tolerance")
    return CovarianceMatrix(V=V)


def occupancy_from_cov(cov: CovarianceMatrix, spec: Optional[SystemSpec] = None) -> np.ndarray:
    """Per-mode n_eff = (<q^2> + <p^2>)/2 (no -1/2 offset)."""
    V = cov.V if isinstance(cov, CovarianceMatrix) else np.asarray(cov)
    d = np.diag(V)
    return 0.5 * (d[0::2] + d[1::2])


def steady_state(spec: SystemSpec, regime=None, tau: Optional[float] = None,
                 optical_noise: Optional[bool] = None,
                 include_intrinsic_damping: bool = True) -> CovarianceMatrix:
    """Convenience wrapper: rates, drift, diffusion and Lyapunov solve."""
    if regime is not None:
        spec = spec.with_regime(regime)
    if spec.regime is Regime.EXACT:
        raise ValueError("the Lyapunov route needs the sFFLC or wFFLC regime")
    drift = build_drift(spec, tau=tau, include_intrinsic_damping=include_intrinsic_damping)
    return solve_lyapunov(drift, build_diffusion(spec, optical_noise=optical_noise))


# --- closed forms -------------------------------------------------------------

def closed_form_single(spec: SystemSpec, tau: Optional[float] = None, regime=None) -> float:
    """Single-mode occupancy of the Markovian model.

    sFFLC keeps the back-action term C/2 with C = G^2/(kappa gamma); wFFLC
    uses the thermal noise only.
    """
    if spec.n_modes != 1:
        raise ValueError("closed_form_single needs exactly one mode")
    regime = spec.regime if regime is None else Regime.parse(regime)
    tau = spec.tau if tau is None else float(tau)
    r = compute_rates(spec, regime)
    w, g, nb = spec.omega[0], spec.gamma[0], spec.nbar[0]
    gam, dw = r.gamma_fb[0, 0], r.delta_omega[0, 0]
    c, s = np.cos(w * tau), np.sin(w * tau)
    damping = g + gam * c - dw * s
    stiff = w + dw * c + gam * s
    if damping <= 0 or stiff <= 0:
        raise Unstable(f"effective damping {damping:.6g} (stiffness {stiff:.6g}) at tau={tau:g}",
                       damping=damping)
    noise = nb + 0.5
    if regime is Regime.SFFLC:
        noise += 0.5 * spec.G[0] ** 2 / (spec.kappa * g)
    return float(0.5 * g * noise / damping * (1.0 + w / stiff))


def _check_distinct(w):
    w2 = np.asarray(w) ** 2
    scale = np.max(w2)
    for i in range(len(w2)):
        for j in range(i + 1, len(w2)):
            if abs(w2[i] - w2[j]) < _DEGENERACY_TOL * scale:
                raise Degenerate(f"modes {i} and {j} are frequency-degenerate")


def _lambda_matrix(spec: SystemSpec) -> np.ndarray:
    """Pairwise noise combination entering the multimode closed forms."""
    g, G, k = spec.g_cd, spec.G, spec.kappa
    th = (2.0 * spec.nbar + 1.0) * spec.gamma
    n = spec.n_modes
    lam = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            lam[i, j] = (g[j] / g[i]) * th[i] + (g[i] / g[j]) * th[j] \
                + (g[j] * G[i] - g[i] * G[j]) ** 2 / (k * g[i] * g[j])
    return lam


def closed_form_two(spec: SystemSpec, tau: Optional[float] = None):
    """Two-mode sFFLC occupancies in the gamma << Gamma limit."""
    if spec.n_modes != 2:
        raise ValueError("closed_form_two needs exactly two modes")
    _check_distinct(spec.omega)
    tau = spec.tau if tau is None else float(tau)
    w = spec.omega
    Gm = compute_rates(spec, Regime.SFFLC).gamma_fb
    c, s, t = np.cos(w * tau), np.sin(w * tau), np.tan(w * tau)
    noise = (2.0 * spec.nbar + 1.0) * spec.gamma + spec.G**2 / spec.kappa
    lam = _lambda_matrix(spec)[0, 1]
    w1, w2 = w
    g11, g22, g12, g21 = Gm[0, 0], Gm[1, 1], Gm[0, 1], Gm[1, 0]
    dw2 = w1**2 - w2**2

    den = dw2 + w1 * g11 * s[0] - w2 * g22 * s[1] + w1 * g22 * t[0] * c[1] - w2 * g11 * t[1] * c[0]
    src1 = (g21 / g11) * w1 * t[0] * noise[0]
    src2 = (g12 / g22) * w2 * t[1] * noise[1]
    x12 = (src1 - src2) / den - lam / dw2 * (
        g22 * t[0] * s[1] * w1 * w2 + g11 * t[1] * s[0] * w1 * w2
        + g22 * c[1] * w1**2 + g11 * c[0] * w2**2) / den
    k22 = (w2 + g22 * s[1]) * w2 + w2 * g11 * t[1] * c[0]
    k11 = (w1 + g11 * s[0]) * w1 + w1 * g22 * t[0] * c[1]
    pre = w1 * w2 + w1 * g22 * s[1] + w2 * g11 * s[0]
    z12 = (k22 * src1 - k11 * src2) / (pre * den) - lam / dw2 * (
        k22 * (g22 * t[0] * s[1] * w1 * w2 + g22 * c[1] * w1**2)
        + k11 * (g11 * t[1] * s[0] * w1 * w2 + g11 * c[0] * w2**2)) / (pre * den)

    out = []
    for i, j in ((0, 1), (1, 0)):
        gii, gij = Gm[i, i], Gm[i, j]
        stiff = w[i] + gii * s[i]
        xii = noise[i] / (gii * c[i]) \
            + (gij / gii) * s[j] * w[j] / (c[i] * (w[j]**2 - w[i]**2)) * lam \
            - (gij / gii) * c[j] / c[i] * x12
        zii = w[i] / stiff * xii - gij * s[j] / stiff * z12 \
            + gij * c[j] * w[i] / (stiff * (w[i]**2 - w[j]**2)) * lam
        out.append(0.25 * (xii + zii))
    return float(out[0]), float(out[1])


def closed_form_multi_tau0(spec: SystemSpec) -> np.ndarray:
    """N-mode sFFLC occupancies at zero delay in the gamma << Gamma limit."""
    _check_distinct(spec.omega)
    n = spec.n_modes
    w2 = spec.omega**2
    Gm = compute_rates(spec, Regime.SFFLC).gamma_fb
    lam = _lambda_matrix(spec)
    out = np.empty(n)
    for i in range(n):
        gii = Gm[i, i]
        total = (spec.nbar[i] + 0.5) * spec.gamma[i] / gii \
            + spec.G[i] ** 2 / (2.0 * gii * spec.kappa)
        for j in range(n):
            if j == i:
                continue
            dij = w2[i] - w2[j]
            inner = (w2[i] * Gm[j, j] + w2[j] * gii) * lam[i, j] / dij**2
            for k in range(n):
                if k in (i, j):
                    continue
                inner += (w2[i] * Gm[j, k] * lam[i, k] / (w2[i] - w2[k])
                          - w2[j] * Gm[i, k] * lam[j, k] / (w2[j] - w2[k])) / dij
            total += Gm[i, j] / (2.0 * gii) * inner + Gm[i, j] * lam[i, j] / (4.0 * dij)
        out[i] = total
    return out


def export_matrix_csv(path, matrix) -> None:
    """Row-major full-matrix dump with 17 significant digits."""
    matrix = _as_array(matrix) if not isinstance(matrix, CovarianceMatrix) else matrix.V
    with open(path, "w", newline="\n") as fh:
        for row in np.atleast_2d(matrix):
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")
