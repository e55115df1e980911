"""Delay scans, two-parameter stability maps and delay optimization."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import markov, spectral
from .errors import NoStableDelay, NotStable, QuadratureDiverged
from .model import Regime, SystemSpec

STABLE, UNSTABLE, QUAD_FAILED = "stable", "unstable", "quadrature-failed"
METHODS = ("lyapunov", "fourier")
OBJECTIVES = ("total-occupancy", "max-mode-occupancy")
COMMENSURATE_TOL = 0.05


@dataclass
class ScanResult:
    """Per-cell total occupancy, stability margin and status.

    Arrays have shape (len(axis2), len(axis1)); a 1-D scan has a single row
    and ``axis2`` is None. Unstable cells hold NaN occupancy.
    """

    axis1: np.ndarray
    total: np.ndarray
    margin: np.ndarray
    status: np.ndarray
    modes: np.ndarray                    # (len(axis2), len(axis1), N)
    axis2: Optional[np.ndarray] = None
    axis1_name: str = "tau"
    axis2_name: str = ""
    method: str = "lyapunov"
    metadata: dict = field(default_factory=dict)

    @property
    def unstable_count(self) -> int:
        return int(np.count_nonzero(self.status == UNSTABLE))

    @property
    def stable_mask(self) -> np.ndarray:
        return self.status == STABLE

    def to_csv(self, path) -> None:
        rows = []
        a2 = self.axis2 if self.axis2 is not None else [np.nan]
        for i, y in enumerate(a2):
            for k, x in enumerate(self.axis1):
                rows.append([x, y, self.total[i, k], self.margin[i, k], str(self.status[i, k])])
        spectral.write_csv(path, [self.axis1_name, self.axis2_name or "axis2",
                                  "total_occupancy", "margin", "status"], rows)


def _resolve_threads(threads):
    if threads is None:
        threads = int(os.environ.get("COLDDAMP_THREADS", "1") or 1)
    return max(1, int(threads))


def _parallel_map(fn: Callable, items: Sequence, threads):
    threads = _resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def evaluate_cell(spec: SystemSpec, tau: float, method: str = "lyapunov",
                  optical_noise: Optional[bool] = None,
                  config: Optional[spectral.QuadratureConfig] = None):
    """(per-mode occupancies or None, drift margin, status) for one delay."""
    if method not in METHODS:
        raise ValueError(f"unknown scan method {method!r}; expected one of {METHODS}")
    markov_spec = spec if spec.regime is not Regime.EXACT else spec.with_regime(Regime.WFFLC)
    drift = markov.build_drift(markov_spec, tau=tau)
    margin = markov.stability_margin(drift)
    if method == "lyapunov":
        if margin >= 0:
            return None, margin, UNSTABLE
        try:
            cov = markov.solve_lyapunov(drift, markov.build_diffusion(markov_spec, optical_noise))
        except NotStable:
            return None, margin, UNSTABLE
        return markov.occupancy_from_cov(cov), margin, STABLE
    try:
        occ = spectral.occupancy_fourier(spec, tau, config)
    except QuadratureDiverged:
        if spectral.unstable_root_count(spec, tau) > 0:
            return None, margin, UNSTABLE
        return None, margin, QUAD_FAILED
    return occ, margin, STABLE


def scan_tau(spec: SystemSpec, tau_grid, method: str = "lyapunov",
             optical_noise: Optional[bool] = None,
             config: Optional[spectral.QuadratureConfig] = None,
             threads: Optional[int] = None) -> ScanResult:
    """Evaluate every delay in ``tau_grid`` independently."""
    taus = np.asarray(tau_grid, dtype=float).ravel()
    if taus.size == 0:
        raise ValueError("tau grid is empty")
    if taus.size > 1 and np.any(np.diff(taus) <= 0):
        raise ValueError("tau grid must be strictly increasing")
    cells = _parallel_map(lambda t: evaluate_cell(spec, t, method, optical_noise, config),
                          list(taus), threads)
    return _assemble(cells, taus, None, spec.n_modes, method)


def _assemble(cells, axis1, axis2, n_modes, method, axis2_name=""):
    rows = 1 if axis2 is None else len(axis2)
    shape = (rows, len(axis1))
    total = np.full(shape, np.nan)
    margin = np.full(shape, np.nan)
    status = np.empty(shape, dtype=object)
    modes = np.full(shape + (n_modes,), np.nan)
    for idx, (occ, m, st) in enumerate(cells):
        i, k = divmod(idx, len(axis1))
        margin[i, k] = m
        status[i, k] = st
        if occ is not None:
            modes[i, k] = occ
            total[i, k] = float(np.sum(occ))
    return ScanResult(axis1=np.asarray(axis1), total=total, margin=margin, status=status,
                      modes=modes, axis2=None if axis2 is None else np.asarray(axis2),
                      axis2_name=axis2_name, method=method)


def linear_dispersion(template: SystemSpec, spacing: float, scale_nbar: bool = True) -> SystemSpec:
    """omega_{k+1} = omega_1 + k spacing, optionally nbar_k = nbar_1 omega_1 / omega_k."""
    w1 = template.omega[0]
    omega = w1 + spacing * np.arange(template.n_modes)
    if np.any(omega <= 0):
        raise ValueError("linear dispersion produced a non-positive frequency")
    kw = {"omega": omega}
    if scale_nbar:
        kw["nbar"] = template.nbar[0] * w1 / omega
    return template.with_modes(**kw)


def scan_2d(spec_template: SystemSpec, tau_grid, spacing_grid, method: str = "lyapunov",
            scale_nbar: bool = True, optical_noise: Optional[bool] = None,
            config: Optional[spectral.QuadratureConfig] = None,
            threads: Optional[int] = None) -> ScanResult:
    """Delay versus inter-mode spacing map under a linear dispersion."""
    taus = np.asarray(tau_grid, dtype=float).ravel()
    spacings = np.asarray(spacing_grid, dtype=float).ravel()
    for name, ax in (("tau", taus), ("spacing", spacings)):
        if ax.size == 0:
            raise ValueError(f"{name} grid is empty")
        if ax.size > 1 and np.any(np.diff(ax) <= 0):
            raise ValueError(f"{name} grid must be strictly increasing")
    specs = [linear_dispersion(spec_template, d, scale_nbar) for d in spacings]
    jobs = [(s, t) for s in specs for t in taus]
    cells = _parallel_map(lambda job: evaluate_cell(job[0], job[1], method, optical_noise, config),
                          jobs, threads)
    return _assemble(cells, taus, spacings, spec_template.n_modes, method, "spacing")


# --- optimization -------------------------------------------------------------

@dataclass(frozen=True)
class DelayOptimum:
    tau: float
    objective: float
    margin: float
    method: str
    source: str


def _objective_value(occ, objective):
    return float(np.sum(occ)) if objective == "total-occupancy" else float(np.max(occ))


def commensurate_delays(omega, bounds, tol: float = COMMENSURATE_TOL) -> np.ndarray:
    """Positive delays in ``bounds`` with every omega_j tau within tol of a multiple of 2 pi."""
    lo, hi = float(bounds[0]), float(bounds[1])
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    cands = []
    for w in omega:
        n_max = int(np.floor(hi * w / (2 * np.pi)))
        cands.extend(2 * np.pi * n / w for n in range(1, n_max + 1))
    out = []
    for t in sorted(cands):
        if t < lo or t > hi:
            continue
        ph = np.angle(np.exp(1j * omega * t))
        if np.all(np.abs(ph) < tol):
            out.append(t)
    return np.array(out)


def optimize_delay(spec: SystemSpec, tau_bounds, objective: str = "total-occupancy",
                   method: str = "lyapunov", n_coarse: int = 400, n_guard: int = 32,
                   xtol: Optional[float] = None, optical_noise: Optional[bool] = None,
                   config: Optional[spectral.QuadratureConfig] = None,
                   threads: Optional[int] = None) -> DelayOptimum:
    """Delay minimizing the chosen occupancy objective among stable delays.

    Coarse grid, golden-section refinement on the best bracket, a local
    guard grid against narrow side minima and the commensurate delays;
    the best stable candidate wins.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    lo, hi = float(tau_bounds[0]), float(tau_bounds[1])
    if not (0 <= lo < hi):
        raise ValueError("tau bounds must satisfy 0 <= lower < upper")
    cache = {}

    def evaluate(t):
        t = float(t)
        if t not in cache:
            occ, m, st = evaluate_cell(spec, t, method, optical_noise, config)
            cache[t] = (np.inf if st != STABLE else _objective_value(occ, objective), m)
        return cache[t]

    grid = np.linspace(lo, hi, n_coarse)
    coarse = scan_tau(spec, grid, method, optical_noise, config, threads)
    for t, occ, m, st in zip(grid, coarse.modes[0], coarse.margin[0], coarse.status[0]):
        cache[float(t)] = (np.inf if st != STABLE else _objective_value(occ, objective), m)
    vals = np.array([cache[float(t)][0] for t in grid])
    if not np.any(np.isfinite(vals)):
        raise NoStableDelay(f"no stable delay found on a {n_coarse}-point grid in [{lo:g}, {hi:g}]")

    candidates = {}
    i = int(np.argmin(vals))
    candidates["grid"] = float(grid[i])
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_coarse - 1)]
    xtol = xtol if xtol is not None else 1e-9 * max(hi, 1.0)
    candidates["golden"] = _golden(lambda t: evaluate(t)[0], a, b, xtol)
    guard = np.linspace(a, b, n_guard)
    gv = [evaluate(t)[0] for t in guard]
    candidates["guard"] = float(guard[int(np.argmin(gv))])
    comm = commensurate_delays(spec.omega, (lo, hi))
    if comm.size:
        candidates["commensurate"] = float(comm[0])

    best = None
    for source, t in candidates.items():
        val, m = evaluate(t)
        if np.isfinite(val) and (best is None or val < best[1]):
            best = (t, val, m, source)
    t, val, m, source = best
    return DelayOptimum(tau=t, objective=val, margin=float(m), method=method, source=source)


def _golden(f, a, b, xtol, max_iter=200):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) < xtol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return float(c if fc < fd else d)


def objective_at(spec: SystemSpec, tau: float, objective: str = "total-occupancy",
                 method: str = "lyapunov", optical_noise: Optional[bool] = None,
                 config: Optional[spectral.QuadratureConfig] = None) -> float:
    """Objective at a single delay; inf when unstable."""
    occ, _, st = evaluate_cell(spec, tau, method, optical_noise, config)
    return np.inf if st != STABLE else _objective_value(occ, objective)


__all__ = [
    "ScanResult", "scan_tau", "scan_2d", "optimize_delay", "DelayOptimum", "linear_dispersion",
    "commensurate_delays", "evaluate_cell", "objective_at",
]
