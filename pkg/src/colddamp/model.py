"""Physical parameters, mean-field linearization and feedback rate coefficients.

All quantities are dimensionless: frequencies and rates are measured in units
of a reference mechanical frequency (typically the first mode, omega_1 = 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .errors import NoConvergence


class Regime(str, Enum):
    """Which approximation of the feedback loop downstream solvers use."""

    SFFLC = "sfflc"   # cavity and feedback filter infinitely fast compared to the modes
    WFFLC = "wfflc"   # finite bandwidths, rates frozen at the mode frequencies
    EXACT = "exact"   # full frequency-dependent response (Fourier route)

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, Regime):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"sfflc": cls.SFFLC, "wfflc": cls.WFFLC, "exact": cls.EXACT,
                   "exactfourier": cls.EXACT, "fourier": cls.EXACT}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown regime {value!r}") from None


@dataclass(frozen=True)
class MechanicalMode:
    """One mechanical resonance.

    ``G`` is the linearized optomechanical coupling. It is either given
    directly (the usual case) or derived from ``g_om`` and the cavity drive,
    in which case ``coupling_from_drive`` must be True.
    """

    omega: float
    gamma: float
    nbar: float
    G: float = 0.0
    g_cd: float = 0.0
    g_om: Optional[float] = None
    coupling_from_drive: bool = False

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.nbar >= 0:
            raise ValueError(f"nbar must be >= 0, got {self.nbar}")
        if not self.G >= 0:
            raise ValueError(f"G must be >= 0, got {self.G}")
        if not self.g_cd >= 0:
            raise ValueError(f"g_cd must be >= 0, got {self.g_cd}")
        if self.coupling_from_drive and self.g_om is None:
            raise ValueError("coupling_from_drive requires g_om")


@dataclass(frozen=True)
class CavitySpec:
    kappa: float
    eta: float = 1.0
    delta0: float = 0.0
    epsilon: Optional[float] = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if not (0 < self.eta <= 1):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")


@dataclass(frozen=True)
class FeedbackSpec:
    omega_fb: float
    tau: float = 0.0
    regime: Regime = Regime.SFFLC

    def __post_init__(self):
        if not self.omega_fb > 0:
            raise ValueError(f"omega_fb must be > 0, got {self.omega_fb}")
        if not self.tau >= 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        object.__setattr__(self, "regime", Regime.parse(self.regime))


@dataclass(frozen=True)
class SystemSpec:
    """N mechanical modes, one cavity and one delayed feedback loop."""

    modes: tuple
    cavity: CavitySpec
    feedback: FeedbackSpec
    linearized: bool = True
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        modes = tuple(self.modes)
        if len(modes) < 1:
            raise ValueError("at least one mechanical mode is required")
        object.__setattr__(self, "modes", modes)
        if any(m.coupling_from_drive for m in modes) and self.linearized:
            # G still has to be derived from the drive
            object.__setattr__(self, "linearized", False)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def _array(self, name):
        if name not in self._cache:
            arr = np.array([getattr(m, name) for m in self.modes], dtype=float)
            arr.setflags(write=False)
            self._cache[name] = arr
        return self._cache[name]

    @property
    def omega(self) -> np.ndarray:
        return self._array("omega")

    @property
    def gamma(self) -> np.ndarray:
        return self._array("gamma")

    @property
    def nbar(self) -> np.ndarray:
        return self._array("nbar")

    @property
    def G(self) -> np.ndarray:
        return self._array("G")

    @property
    def g_cd(self) -> np.ndarray:
        return self._array("g_cd")

    @property
    def kappa(self) -> float:
        return self.cavity.kappa

    @property
    def omega_fb(self) -> float:
        return self.feedback.omega_fb

    @property
    def tau(self) -> float:
        return self.feedback.tau

    @property
    def regime(self) -> Regime:
        return self.feedback.regime

    def with_tau(self, tau: float) -> "SystemSpec":
        return replace(self, feedback=replace(self.feedback, tau=float(tau)))

    def with_regime(self, regime) -> "SystemSpec":
        return replace(self, feedback=replace(self.feedback, regime=Regime.parse(regime)))

    def with_modes(self, **arrays) -> "SystemSpec":
        """Return a copy with per-mode fields replaced from arrays of length N."""
        modes = []
        for j, m in enumerate(self.modes):
            updates = {k: float(np.asarray(v)[j]) for k, v in arrays.items()}
            modes.append(replace(m, **updates))
        return replace(self, modes=tuple(modes))

    def with_cavity(self, **kw) -> "SystemSpec":
        return replace(self, cavity=replace(self.cavity, **kw))

    def with_feedback(self, **kw) -> "SystemSpec":
        return replace(self, feedback=replace(self.feedback, **kw))


def make_spec(omega, gamma, nbar, G, g_cd, kappa, omega_fb, tau=0.0,
              regime=Regime.SFFLC, eta=1.0) -> SystemSpec:
    """Build a directly-coupled spec from per-mode arrays (scalars broadcast)."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    n = omega.size
    cols = [np.broadcast_to(np.asarray(x, dtype=float), (n,))
            for x in (gamma, nbar, G, g_cd)]
    modes = tuple(
        MechanicalMode(omega=float(omega[j]), gamma=float(cols[0][j]),
                       nbar=float(cols[1][j]), G=float(cols[2][j]),
                       g_cd=float(cols[3][j]))
        for j in range(n)
    )
    return SystemSpec(modes=modes, cavity=CavitySpec(kappa=kappa, eta=eta),
                      feedback=FeedbackSpec(omega_fb=omega_fb, tau=tau, regime=regime))


# --- mean-field steady state -------------------------------------------------

@dataclass(frozen=True)
class ClassicalSteadyState:
    amplitude: complex
    detuning: float
    displacements: np.ndarray
    iterations: int
    residual: float


def solve_classical_amplitude(spec: SystemSpec, damping: float = 0.5,
                              max_iter: int = 10_000) -> ClassicalSteadyState:
    """Damped fixed-point solve of the intensity-dependent cavity amplitude.

    Starts from the empty-cavity value eps/kappa, so the branch reached in a
    bistable regime is the one connected to that starting point.
    """
    eps = spec.cavity.epsilon
    if eps is None:
        raise ValueError("cavity.epsilon is required for the mean-field solve")
    kappa, delta0 = spec.kappa, spec.cavity.delta0
    g_om = np.array([m.g_om or 0.0 for m in spec.modes])
    shift_per_photon = float(np.sum(g_om**2 / spec.omega))

    def rhs(a):
        return eps / (kappa + 1j * (delta0 - shift_per_photon * abs(a) ** 2))

    a = complex(eps / kappa)
    residual = np.inf
    for it in range(1, max_iter + 1):
        target = rhs(a)
        a = (1.0 - damping) * a + damping * target
        scale = abs(a) if a != 0 else 1.0
        residual = abs(a - rhs(a)) / scale
        if residual < 1e-12 or a == 0:
            n_photon = abs(a) ** 2
            return ClassicalSteadyState(
                amplitude=a,
                detuning=delta0 - shift_per_photon * n_photon,
                displacements=g_om / spec.omega * n_photon,
                iterations=it,
                residual=residual,
            )
    raise NoConvergence(
        f"mean-field iteration did not converge in {max_iter} steps "
        f"(last relative residual {residual:.3e})", residual=residual)


def linearize(spec: SystemSpec, amplitude: Optional[complex] = None) -> SystemSpec:
    """Populate G_j = sqrt(2) g_om |A| for drive-derived modes.

    Modes whose coupling was given directly keep their G untouched. The
    effective detuning of the fluctuation dynamics is taken to be zero.
    """
    if amplitude is None and any(m.coupling_from_drive for m in spec.modes):
        amplitude = solve_classical_amplitude(spec).amplitude
    modes = []
    for m in spec.modes:
        if m.coupling_from_drive:
            m = replace(m, G=float(np.sqrt(2.0) * m.g_om * abs(amplitude)),
                        coupling_from_drive=False)
        modes.append(m)
    return replace(spec, modes=tuple(modes), linearized=True)


# --- feedback rates ----------------------------------------------------------

@dataclass(frozen=True)
class RateSet:
    """Feedback damping matrix and frequency-shift matrix.

    Entry (j, k) describes the force on mode j generated by the read-out of
    mode k. ``omega_eval`` holds the frequency each column was evaluated at.
    """

    gamma_fb: np.ndarray
    delta_omega: np.ndarray
    regime: Regime
    omega_eval: np.ndarray


def _filter_denominator(kappa, omega_fb, Omega):
    return (kappa**2 + Omega**2) * (omega_fb**2 + Omega**2)


def wfflc_damping(spec: SystemSpec, Omega) -> np.ndarray:
    """Frequency-resolved damping matrix at a common frequency Omega (N x N)."""
    k, wf = spec.kappa, spec.omega_fb
    Omega = float(Omega)
    col = spec.G * spec.omega * wf * (k * wf - Omega**2) / _filter_denominator(k, wf, Omega)
    return np.outer(spec.g_cd, col)


def wfflc_shift(spec: SystemSpec, Omega) -> np.ndarray:
    """Frequency-resolved frequency-shift matrix at a common frequency Omega."""
    k, wf = spec.kappa, spec.omega_fb
    Omega = float(Omega)
    col = spec.G * spec.omega * wf * Omega * (wf + k) / _filter_denominator(k, wf, Omega)
    return np.outer(spec.g_cd, col)


def rates(spec: SystemSpec, regime=None, Omega=None) -> RateSet:
    """Feedback rates in the chosen Markovian regime.

    sFFLC ignores Omega. wFFLC evaluates at the common frequency Omega if
    given, otherwise column k is evaluated at omega_k (the Lyapunov path).
    """
    regime = spec.regime if regime is None else Regime.parse(regime)
    n = spec.n_modes
    if regime is Regime.SFFLC:
        gam = np.outer(spec.g_cd, spec.G * spec.omega) / spec.kappa
        return RateSet(gam, np.zeros((n, n)), regime, spec.omega.copy())
    if regime is not Regime.WFFLC:
        raise ValueError("Markovian rates exist only for the sFFLC and wFFLC regimes")
    if Omega is not None:
        om = np.full(n, float(Omega))
    else:
        om = spec.omega.copy()
    k, wf = spec.kappa, spec.omega_fb
    den = _filter_denominator(k, wf, om)
    col_gam = spec.G * spec.omega * wf * (k * wf - om**2) / den
    col_dw = spec.G * spec.omega * wf * om * (wf + k) / den
    return RateSet(np.outer(spec.g_cd, col_gam), np.outer(spec.g_cd, col_dw), regime, om)
