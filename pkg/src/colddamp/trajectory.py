"""Monte-Carlo integration of the delayed classical Langevin equations.

State per trajectory: (q_1, p_1, ..., q_N, p_N, y, w) with
    dq_j = w_j p_j dt
    dp_j = [-w_j q_j - gamma_j p_j - g_j u] dt + sqrt((2 nbar_j + 1) gamma_j) dW_j
    dy   = [-kappa y + sum_k G_k q_k] dt
    dw   = u dt,  u = -w_fb w + w_fb y(t - tau)
The filter state w realizes the delayed derivative kernel exactly, so
g_j u is the convolution of the feedback kernel with the delayed read-out.
Optical input noise is left out unless ``cavity_noise`` is enabled.
"""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import FitFailed
from .model import SystemSpec

RNG_ALGORITHM = "numpy.random.PCG64 seeded by SeedSequence(entropy=seed, spawn_key=(trajectory,))"
DIVERGENCE_THRESHOLD = 1e8
BLOCK_SIZE = 256          # fixed partition keeps results independent of threads
NOISE_CHUNK = 2048


def default_dt(spec: SystemSpec) -> float:
    return min(2 * np.pi / float(np.max(spec.omega)), 1.0 / spec.kappa, 1.0 / spec.omega_fb) / 50.0


@dataclass
class SimConfig:
    dt: Optional[float] = None
    t_end: float = 100.0
    n_traj: int = 100
    seed: int = 0
    burn_in: float = 0.5
    record_stride: int = 10
    interpolate: bool = False
    noise: bool = True
    cavity_noise: bool = False
    noise_substeps: int = 1
    threads: Optional[int] = None

    def resolved_dt(self, spec: SystemSpec) -> float:
        return default_dt(spec) if self.dt is None else float(self.dt)

    def validate(self, spec: SystemSpec) -> None:
        dt = self.resolved_dt(spec)
        if not dt > 0:
            raise ValueError("dt must be > 0")
        if not (0 <= self.burn_in < 1):
            raise ValueError("burn_in must lie in [0, 1)")
        if not self.t_end > 0:
            raise ValueError("t_end must be > 0")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.noise_substeps < 1:
            raise ValueError("noise_substeps must be >= 1")
        tau = spec.tau
        if tau > 0:
            ratio = tau / dt
            if ratio < 1.0 - 1e-9:
                raise ValueError("a nonzero delay must span at least one time step")
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) and not self.interpolate:
                raise ValueError(f"tau/dt = {ratio:.12g} is not an integer; "
                                 "enable interpolation or adjust dt")


@dataclass
class TrajectoryEnsemble:
    times: np.ndarray
    mean: np.ndarray                 # (T, N) ensemble-mean occupancy
    stderr: np.ndarray               # (T, N)
    steady: np.ndarray               # (N,)
    steady_stderr: np.ndarray        # (N,)
    diverged: bool = False
    first_divergence_time: Optional[float] = None
    n_diverged: int = 0
    metadata: dict = field(default_factory=dict)


# --- linear RK4 maps -----------------------------------------------------------

@dataclass(frozen=True)
class _System:
    A: np.ndarray          # deterministic drift (d x d)
    b: np.ndarray          # delayed-input column (d,)
    ydot: np.ndarray       # dy/dt = x . ydot
    n_modes: int
    delayed: bool
    noise_amp: np.ndarray  # per-mode sqrt((2 nbar + 1) gamma)


def _build_system(spec: SystemSpec) -> _System:
    n = spec.n_modes
    d = 2 * n + 2
    iy, iw = 2 * n, 2 * n + 1
    A = np.zeros((d, d))
    b = np.zeros(d)
    wf = spec.omega_fb
    for j in range(n):
        q, p = 2 * j, 2 * j + 1
        A[q, p] = spec.omega[j]
        A[p, q] = -spec.omega[j]
        A[p, p] = -spec.gamma[j]
        A[p, iw] = spec.g_cd[j] * wf
        b[p] = -spec.g_cd[j] * wf
        A[iy, q] = spec.G[j]
    A[iy, iy] = -spec.kappa
    A[iw, iw] = -wf
    b[iw] = wf
    delayed = spec.tau > 0
    if not delayed:
        A[:, iy] += b
        b = np.zeros(d)
    return _System(A=A, b=b, ydot=A[iy].copy(), n_modes=n, delayed=delayed,
                   noise_amp=np.sqrt((2.0 * spec.nbar + 1.0) * spec.gamma))


def _rk4_maps(A, b, h):
    """x_new = R x + c0 u(t) + cm u(t + h/2) + c1 u(t + h) for dx/dt = A x + b u."""
    d = A.shape[0]
    hA = h * A
    eye = np.eye(d)
    R = eye + hA @ (eye + hA @ (eye / 2 + hA @ (eye / 6 + hA / 24)))
    Ab = A @ b
    AAb = A @ Ab
    AAAb = A @ AAb
    c0 = h / 6.0 * (b + h * Ab + h**2 / 2 * AAb + h**3 / 4 * AAAb)
    cm = h / 6.0 * (4 * b + 2 * h * Ab + h**2 / 2 * AAb)
    c1 = h / 6.0 * b
    return R, c0, cm, c1


def _hermite(y0, y1, d0, d1, h, s):
    """Cubic Hermite interpolation at fraction s in [0, 1]."""
    s2, s3 = s * s, s * s * s
    return ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * d0
            + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * d1)


class _DelayLine:
    """Ring buffer of y and dy/dt at the step times, zero for t < 0."""

    def __init__(self, delay_steps: float, batch: int, h: float):
        self.m = float(delay_steps)
        self.L = int(np.ceil(self.m)) + 3
        self.y = np.zeros((self.L, batch))
        self.dy = np.zeros((self.L, batch))
        self.h = h

    def push(self, n, y, dy):
        k = n % self.L
        self.y[k] = y
        self.dy[k] = dy

    def at(self, pos):
        """Delayed value at fractional step index ``pos``."""
        i = int(np.floor(pos + 1e-12))
        s = pos - i
        if i < 0:
            if i + 1 < 0 or s == 0.0:
                return np.zeros(self.y.shape[1])
            # history before t = 0 is zero
            y0 = np.zeros(self.y.shape[1])
            d0 = y0
        else:
            y0, d0 = self.y[i % self.L], self.dy[i % self.L]
        if s < 1e-12:
            return y0.copy()
        y1, d1 = self.y[(i + 1) % self.L], self.dy[(i + 1) % self.L]
        return _hermite(y0, y1, d0, d1, self.h, s)


def _trajectory_rng(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def _initial_state(spec: SystemSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.n_modes
    x = np.zeros(2 * n + 2)
    sd = np.sqrt(spec.nbar + 0.5)
    qp = rng.standard_normal(2 * n)
    x[0:2 * n:2] = sd * qp[0::2]
    x[1:2 * n:2] = sd * qp[1::2]
    return x


def _run_block(spec, sysm, maps, cfg, dt, n_steps, indices, projection, x0=None):
    """Integrate one block of trajectories; returns per-record occupancies.

    Trajectories are stored column-wise. With delayed feedback the state is
    augmented by the three delayed inputs so each step is one matrix product.
    """
    R, c0, cm, c1 = maps
    n = sysm.n_modes
    d = 2 * n + 2
    iy = 2 * n
    B = len(indices)
    rngs = [_trajectory_rng(cfg.seed, i) for i in indices]
    z = np.zeros((d + 3, B))
    if x0 is None:
        z[:d] = np.stack([_initial_state(spec, r) for r in rngs], axis=1)
    else:
        z[:d] = np.asarray(x0, dtype=float)[:, None]
    n_noise = n + (1 if cfg.cavity_noise else 0)
    sub = cfg.noise_substeps
    amp = (np.concatenate([sysm.noise_amp, [np.sqrt(spec.kappa)]])[:n_noise] * np.sqrt(dt))

    delayed = sysm.delayed
    if delayed:
        K = np.hstack([R, c0[:, None], cm[:, None], c1[:, None]])
        line = _DelayLine(spec.tau / dt, B, dt)
        m_int = int(round(line.m))
        integer = abs(line.m - m_int) <= 1e-9 * max(1.0, line.m)
        L = line.L
        line.push(0, z[iy], sysm.ydot @ z[:d])
    else:
        K = R

    n_rec = n_steps // cfg.record_stride
    occ = np.full((n_rec, B, n), np.nan)
    alive = np.ones(B, dtype=bool)
    died_at = np.full(B, np.inf)
    noise = None
    rec = 0
    for step in range(n_steps):
        if cfg.noise and step % NOISE_CHUNK == 0:
            chunk = min(NOISE_CHUNK, n_steps - step)
            raw = np.stack([r.standard_normal((chunk * sub, n_noise)) for r in rngs], axis=2)
            if sub > 1:
                raw = raw.reshape(chunk, sub, n_noise, B).sum(axis=1) / np.sqrt(sub)
            noise = raw * amp[None, :, None]
        if delayed:
            if integer:
                a = (step - m_int) % L
                b = (a + 1) % L
                ya, yb = line.y[a], line.y[b]
                z[d] = ya
                z[d + 1] = 0.5 * (ya + yb) + (dt / 8.0) * (line.dy[a] - line.dy[b])
                z[d + 2] = yb
            else:
                base = step - line.m
                z[d] = line.at(base)
                z[d + 1] = line.at(base + 0.5)
                z[d + 2] = line.at(base + 1.0)
            x = K @ z
        else:
            x = K @ z[:d]
        if cfg.noise:
            xi = noise[step % NOISE_CHUNK]
            x[1:2 * n:2] += xi[:n]
            if cfg.cavity_noise:
                x[iy] += xi[n]
        z[:d] = x
        if delayed:
            k = (step + 1) % L
            line.y[k] = x[iy]
            line.dy[k] = sysm.ydot @ x
        if (step + 1) % cfg.record_stride == 0:
            bad = alive & ~np.all(np.abs(x) < DIVERGENCE_THRESHOLD, axis=0)
            if np.any(bad):
                died_at[bad] = (step + 1) * dt
                alive &= ~bad
                z[:, bad] = 0.0
                if delayed:
                    line.y[:, bad] = 0.0
                    line.dy[:, bad] = 0.0
            q = z[0:2 * n:2]
            p = z[1:2 * n:2]
            if projection is not None:
                q = projection @ q
                p = projection @ p
            vals = 0.5 * (q * q + p * p).T
            vals[~alive] = np.nan
            occ[rec] = vals
            rec += 1
            if not np.any(alive):
                break
    return occ, died_at


@dataclass
class TrajectoryState:
    """Single-trajectory state: (q_1, p_1, ..., y, w) plus the y history."""

    x: np.ndarray
    n: int = 0
    line: Optional[_DelayLine] = None


@lru_cache(maxsize=32)
def _cached_system(spec: SystemSpec, dt: float):
    sysm = _build_system(spec)
    return sysm, _rk4_maps(sysm.A, sysm.b, dt)


def initial_state(spec: SystemSpec, dt: float, x0=None,
                  rng: Optional[np.random.Generator] = None) -> TrajectoryState:
    """Fixed ``x0`` or a thermal draw from ``rng``; zero filter and history."""
    if x0 is None:
        x = _initial_state(spec, rng if rng is not None else np.random.default_rng())
    else:
        x = np.array(x0, dtype=float)
    line = None
    if spec.tau > 0:
        sysm, _ = _cached_system(spec, float(dt))
        line = _DelayLine(spec.tau / dt, 1, dt)
        line.push(0, x[2 * spec.n_modes:2 * spec.n_modes + 1], x @ sysm.ydot)
    return TrajectoryState(x=x, n=0, line=line)


def step(state: TrajectoryState, spec: SystemSpec, dt: float,
         rng: Optional[np.random.Generator] = None) -> TrajectoryState:
    """Advance one RK4 step in place; thermal kicks on p_j when ``rng`` is given."""
    sysm, (R, c0, cm, c1) = _cached_system(spec, float(dt))
    n = spec.n_modes
    x = R @ state.x
    if sysm.delayed:
        base = state.n - state.line.m
        x += (state.line.at(base)[0] * c0 + state.line.at(base + 0.5)[0] * cm
              + state.line.at(base + 1.0)[0] * c1)
    if rng is not None:
        x[1:2 * n:2] += sysm.noise_amp * np.sqrt(dt) * rng.standard_normal(n)
    state.x = x
    state.n += 1
    if sysm.delayed:
        state.line.push(state.n, x[2 * n:2 * n + 1], np.atleast_1d(x @ sysm.ydot))
    return state


def _resolve_threads(threads):
    if threads is None:
        threads = int(os.environ.get("COLDDAMP_THREADS", "1") or 1)
    return max(1, int(threads))


def run_ensemble(spec: SystemSpec, config: Optional[SimConfig] = None,
                 projection=None, initial_state=None) -> TrajectoryEnsemble:
    """Integrate ``n_traj`` independent trajectories and collect statistics.

    ``projection`` (N x N, e.g. a collective basis) records occupancies of
    the rotated coordinates instead of the bare modes. ``initial_state``
    overrides the thermal initial draw with a fixed (2N + 2)-vector.
    """
    cfg = config or SimConfig()
    cfg.validate(spec)
    if np.any(spec.nbar < 10):
        warnings.warn("trajectory integration treats the modes classically; "
                      "nbar < 10 is outside its validity", RuntimeWarning, stacklevel=2)
    dt = cfg.resolved_dt(spec)
    n_steps = int(round(cfg.t_end / dt))
    sysm = _build_system(spec)
    maps = _rk4_maps(sysm.A, sysm.b, dt)
    proj = None if projection is None else np.asarray(getattr(projection, "alpha", projection),
                                                       dtype=float)
    blocks = [list(range(s, min(s + BLOCK_SIZE, cfg.n_traj)))
              for s in range(0, cfg.n_traj, BLOCK_SIZE)]
    threads = _resolve_threads(cfg.threads)

    def work(idx):
        return _run_block(spec, sysm, maps, cfg, dt, n_steps, idx, proj, initial_state)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]

    occ = np.concatenate([r[0] for r in results], axis=1)      # (T, n_traj, N)
    died = np.concatenate([r[1] for r in results])
    n_rec = occ.shape[0]
    times = dt * cfg.record_stride * np.arange(1, n_rec + 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(occ, axis=1)
        count = np.sum(~np.isnan(occ), axis=1)
        sd = np.nanstd(occ, axis=1, ddof=1) if cfg.n_traj > 1 else np.full_like(mean, np.nan)
        stderr = sd / np.sqrt(np.maximum(count, 1))
        steady, steady_err = _steady_estimate(occ, times, cfg)
    diverged = bool(np.any(np.isfinite(died)))
    meta = {
        "seed": int(cfg.seed),
        "rng": RNG_ALGORITHM,
        "dt": dt,
        "n_steps": n_steps,
        "n_traj": cfg.n_traj,
        "burn_in": cfg.burn_in,
        "record_stride": cfg.record_stride,
        "interpolate": cfg.interpolate,
        "cavity_noise": cfg.cavity_noise,
        "noise_substeps": cfg.noise_substeps,
    }
    return TrajectoryEnsemble(
        times=times, mean=mean, stderr=stderr, steady=steady, steady_stderr=steady_err,
        diverged=diverged,
        first_divergence_time=float(np.min(died)) if diverged else None,
        n_diverged=int(np.sum(np.isfinite(died))), metadata=meta)


def _steady_estimate(occ, times, cfg):
    """Time average after burn-in; error from the spread of per-trajectory means.

    Per-trajectory time averages are independent, so their spread already
    accounts for autocorrelation within a trajectory. A single trajectory
    falls back to ten batch means.
    """
    t0 = cfg.burn_in * cfg.t_end
    sel = times >= t0
    if not np.any(sel):
        n = occ.shape[2]
        return np.full(n, np.nan), np.full(n, np.nan)
    tail = occ[sel]                          # (T', n_traj, N)
    per_traj = np.nanmean(tail, axis=0)      # (n_traj, N)
    good = np.all(np.isfinite(per_traj), axis=1)
    per_traj = per_traj[good]
    if per_traj.shape[0] >= 2:
        return per_traj.mean(axis=0), per_traj.std(axis=0, ddof=1) / np.sqrt(per_traj.shape[0])
    if per_traj.shape[0] == 1:
        series = tail[:, good, :][:, 0, :]
        batches = np.array_split(series, 10)
        bm = np.array([b.mean(axis=0) for b in batches if len(b)])
        return per_traj[0], bm.std(axis=0, ddof=1) / np.sqrt(len(bm))
    n = occ.shape[2]
    return np.full(n, np.nan), np.full(n, np.nan)


@dataclass
class DeterministicRun:
    times: np.ndarray
    states: np.ndarray      # (T, 2N + 2)
    delayed_input: np.ndarray
    dt: float


def simulate_deterministic(spec: SystemSpec, x0, t_end: float, dt: Optional[float] = None,
                           interpolate: bool = False) -> DeterministicRun:
    """Noise-free single trajectory with the full state history."""
    cfg = SimConfig(dt=dt, t_end=t_end, n_traj=1, interpolate=interpolate, noise=False)
    cfg.validate(spec)
    dt = cfg.resolved_dt(spec)
    n_steps = int(round(t_end / dt))
    sysm = _build_system(spec)
    R, c0, cm, c1 = _rk4_maps(sysm.A, sysm.b, dt)
    n = sysm.n_modes
    x = np.asarray(x0, dtype=float)[None, :].copy()
    out = np.empty((n_steps + 1, x.shape[1]))
    u_hist = np.zeros(n_steps + 1)
    out[0] = x[0]
    line = None
    if sysm.delayed:
        line = _DelayLine(spec.tau / dt, 1, dt)
        line.push(0, x[:, 2 * n], x @ sysm.ydot)
        u_hist[0] = line.at(-line.m)[0]
    else:
        u_hist[0] = x[0, 2 * n]
    for step in range(n_steps):
        x_new = x @ R.T
        if sysm.delayed:
            base = step - line.m
            x_new += (line.at(base)[:, None] * c0 + line.at(base + 0.5)[:, None] * cm
                      + line.at(base + 1.0)[:, None] * c1)
        x = x_new
        out[step + 1] = x[0]
        if sysm.delayed:
            line.push(step + 1, x[:, 2 * n], x @ sysm.ydot)
            u_hist[step + 1] = line.at(step + 1 - line.m)[0]
        else:
            u_hist[step + 1] = x[0, 2 * n]
    return DeterministicRun(times=dt * np.arange(n_steps + 1), states=out,
                            delayed_input=u_hist, dt=dt)


def feedback_force(spec: SystemSpec, run: DeterministicRun) -> np.ndarray:
    """Force on each mode from the filter state, shape (T, N)."""
    n = spec.n_modes
    w = run.states[:, 2 * n + 1]
    u = -spec.omega_fb * w + spec.omega_fb * run.delayed_input
    return -u[:, None] * spec.g_cd[None, :]


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    residual: float
    n_points: int


def transient_occupancy(ensemble: TrajectoryEnsemble, mode: int = 0,
                        steady_value: Optional[float] = None,
                        t_relax: Optional[float] = None,
                        window=(0.1, 0.5)) -> DecayFit:
    """Exponential fit of the excess occupancy n(t) - n_inf.

    The fit window is [window[0], window[1]] * t_relax (default: the last
    recorded time).
    """
    t = ensemble.times
    n = ensemble.mean[:, mode]
    n_inf = ensemble.steady[mode] if steady_value is None else float(steady_value)
    t_relax = t[-1] if t_relax is None else float(t_relax)
    sel = (t >= window[0] * t_relax) & (t <= window[1] * t_relax) & np.isfinite(n)
    if np.count_nonzero(sel) < 10:
        raise FitFailed(f"only {np.count_nonzero(sel)} points in the fit window")
    excess = n[sel] - n_inf
    if np.any(excess <= 0):
        raise FitFailed("excess occupancy is not positive throughout the fit window")
    coef, res, *_ = np.polyfit(t[sel], np.log(excess), 1, full=True)
    resid = float(np.sqrt(res[0] / np.count_nonzero(sel))) if len(res) else 0.0
    return DecayFit(rate=float(-coef[0]), intercept=float(coef[1]), residual=resid,
                    n_points=int(np.count_nonzero(sel)))


def export_ensemble_csv(path, ensemble: TrajectoryEnsemble) -> None:
    from .spectral import write_csv
    n = ensemble.mean.shape[1]
    cols = ["t"] + [f"n_{j + 1}" for j in range(n)] + [f"stderr_{j + 1}" for j in range(n)]
    write_csv(path, cols, np.column_stack([ensemble.times, ensemble.mean, ensemble.stderr]))
