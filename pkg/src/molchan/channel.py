"""Diffusion physics, CIR synthesis and the Poisson superposition channel.

The channel keeps only the expected counts of every tap: a release ``l - 1``
symbol intervals ago contributes ``Poisson(c_l)`` molecules to the current
count, and background noise contributes ``Poisson(c_n)``.  Sums of independent
Poisson variables are Poisson, so every observation is drawn as a single
``Poisson(S @ c)`` variate.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import integrate, optimize

from .errors import ConfigurationError, DomainError

__all__ = [
    "PhysicalScenario",
    "Cir",
    "TrainingSequence",
    "ObservationVector",
    "DEFAULT_SCENARIO",
    "concentration_at",
    "peak_sample_time",
    "receiver_volume",
    "synthesize_cir",
    "integrate_over_receiver",
    "choose_symbol_params",
    "draw_distance",
    "trial_rng",
    "draw_observations",
    "simulate_observations",
    "mean_observations",
    "design_matrix",
]


@dataclass(frozen=True)
class PhysicalScenario:
    """Physical inputs used to synthesize ground-truth CIRs (SI units).

    ``symbol_duration`` and ``num_taps`` may be left unset and filled in by
    :func:`choose_symbol_params`.
    """

    n_tx: int = 100_000
    diffusion_coeff: float = 4.365e-10
    mean_distance: float = 500e-9
    distance_halfwidth: float = 0.0
    receiver_radius: float = 45e-9
    symbol_duration: Optional[float] = None
    num_taps: Optional[int] = None

    def __post_init__(self):
        if self.n_tx <= 0:
            raise ConfigurationError(f"n_tx must be positive, got {self.n_tx}")
        if self.diffusion_coeff <= 0:
            raise ConfigurationError("diffusion_coeff must be positive")
        if self.mean_distance <= 0:
            raise ConfigurationError("mean_distance must be positive")
        if self.receiver_radius <= 0:
            raise ConfigurationError("receiver_radius must be positive")
        if not 0 <= self.distance_halfwidth < self.mean_distance:
            raise ConfigurationError(
                "distance_halfwidth must satisfy 0 <= halfwidth < mean_distance"
            )
        if self.symbol_duration is not None and self.symbol_duration <= 0:
            raise ConfigurationError("symbol_duration must be positive")
        if self.num_taps is not None and self.num_taps < 1:
            raise ConfigurationError("num_taps must be >= 1")

    def replace(self, **changes) -> "PhysicalScenario":
        return dataclasses.replace(self, **changes)


DEFAULT_SCENARIO = PhysicalScenario()


@dataclass(frozen=True)
class Cir:
    """Expected counts per tap plus the expected noise count."""

    taps: np.ndarray
    noise_mean: float

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float).reshape(-1)
        if taps.size == 0:
            raise DomainError("a CIR needs at least one tap")
        if np.any(taps < 0) or self.noise_mean < 0:
            raise DomainError("CIR entries must be non-negative")
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "noise_mean", float(self.noise_mean))

    @property
    def num_taps(self) -> int:
        return self.taps.size

    def as_vector(self) -> np.ndarray:
        """Return ``[c_1, ..., c_L, c_n]``."""
        return np.append(self.taps, self.noise_mean)

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "Cir":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:-1], float(vec[-1]))

    def scaled(self, factor: float) -> "Cir":
        return Cir(self.taps * factor, self.noise_mean * factor)


@dataclass(frozen=True)
class TrainingSequence:
    """Binary ON-OFF training symbols ``s[1..K]``."""

    symbols: np.ndarray

    def __post_init__(self):
        sym = np.asarray(self.symbols).reshape(-1)
        if sym.size == 0:
            raise DomainError("empty training sequence")
        if not np.all((sym == 0) | (sym == 1)):
            raise DomainError("training symbols must be 0 or 1")
        sym = sym.astype(np.int8)
        sym.setflags(write=False)
        object.__setattr__(self, "symbols", sym)

    @property
    def length(self) -> int:
        return self.symbols.size

    def __len__(self) -> int:
        return self.symbols.size

    def design_matrix(self, num_taps: int) -> np.ndarray:
        return design_matrix(self, num_taps)

    def repeated(self, times: int) -> "TrainingSequence":
        return TrainingSequence(np.tile(self.symbols, times))

    def bits(self) -> str:
        return "".join(str(int(b)) for b in self.symbols)

    @classmethod
    def from_bits(cls, text: str) -> "TrainingSequence":
        cleaned = [ch for ch in text if ch not in " ,[]\t\n"]
        if not cleaned or any(ch not in "01" for ch in cleaned):
            raise DomainError(f"not a binary sequence: {text!r}")
        return cls(np.array([int(ch) for ch in cleaned]))


@dataclass(frozen=True)
class ObservationVector:
    """Molecule counts ``r[L..K]`` used for estimation."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts).reshape(-1)
        if np.any(counts < 0):
            raise DomainError("molecule counts must be non-negative")
        if counts.size and not np.all(counts == np.round(counts)):
            raise DomainError("molecule counts must be integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    def __len__(self) -> int:
        return self.counts.size


def design_matrix(seq: TrainingSequence, num_taps: int) -> np.ndarray:
    """Rows ``s_k = [s[k], s[k-1], ..., s[k-L+1], 1]`` for ``k = L..K``.

    Returns a float array of shape ``(K - L + 1, L + 1)``.
    """
    L = int(num_taps)
    K = seq.length
    if L < 1:
        raise DomainError("num_taps must be >= 1")
    if K < L:
        raise DomainError(f"sequence length {K} shorter than channel memory {L}")
    windows = sliding_window_view(seq.symbols, L)[:, ::-1]
    out = np.ones((K - L + 1, L + 1))
    out[:, :L] = windows
    return out


def concentration_at(scenario: PhysicalScenario, distance: float, t: float) -> float:
    """Point-source concentration in molecules/m^3 at ``distance`` after ``t`` seconds."""
    if t <= 0 or distance <= 0:
        raise DomainError("concentration needs t > 0 and distance > 0")
    D = scenario.diffusion_coeff
    return scenario.n_tx * (4 * math.pi * D * t) ** -1.5 * math.exp(
        -(distance**2) / (4 * D * t)
    )


def _concentration_array(scenario, distance, t):
    D = scenario.diffusion_coeff
    t = np.asarray(t, dtype=float)
    distance = np.asarray(distance, dtype=float)
    return scenario.n_tx * (4 * np.pi * D * t) ** -1.5 * np.exp(-(distance**2) / (4 * D * t))


def peak_sample_time(scenario: PhysicalScenario) -> float:
    """Time of maximum concentration at the mean distance, ``d^2 / (6 D)``."""
    return scenario.mean_distance**2 / (6 * scenario.diffusion_coeff)


def receiver_volume(scenario: PhysicalScenario) -> float:
    return 4.0 / 3.0 * math.pi * scenario.receiver_radius**3


def synthesize_cir(scenario: PhysicalScenario, distance: Optional[float] = None) -> Cir:
    """Expected counts of a transparent receiver centred ``distance`` from the source.

    Tap ``l`` is sampled ``(l - 1) * T_sym + T_smp`` after the release, with the
    concentration taken as uniform over the receiver volume.  The noise mean is
    half of the peak count at the mean distance.
    """
    if scenario.symbol_duration is None or scenario.num_taps is None:
        raise ConfigurationError("scenario needs symbol_duration and num_taps")
    if distance is None:
        distance = scenario.mean_distance
    if distance <= 0:
        raise DomainError("distance must be positive")
    t_smp = peak_sample_time(scenario)
    vol = receiver_volume(scenario)
    times = np.arange(scenario.num_taps) * scenario.symbol_duration + t_smp
    taps = vol * _concentration_array(scenario, distance, times)
    noise = 0.5 * vol * concentration_at(scenario, scenario.mean_distance, t_smp)
    return Cir(taps, noise)


def integrate_over_receiver(scenario: PhysicalScenario, distance: float, t: float) -> float:
    """Exact expected count: concentration integrated over the spherical receiver.

    Direct 2-D quadrature (radius, polar angle) around the receiver centre.
    """
    R = scenario.receiver_radius
    if distance <= R:
        raise DomainError("receiver must not contain the source")

    def integrand(theta, rho):
        d2 = distance**2 + rho**2 + 2 * distance * rho * math.cos(theta)
        return concentration_at(scenario, math.sqrt(d2), t) * 2 * math.pi * rho**2 * math.sin(theta)

    value, _ = integrate.dblquad(integrand, 0.0, R, 0.0, math.pi, epsrel=1e-10)
    return value


def choose_symbol_params(
    scenario: PhysicalScenario,
    num_taps: Optional[int] = None,
    symbol_duration: Optional[float] = None,
    threshold: float = 0.1,
    max_taps: int = 64,
) -> tuple[float, int]:
    """Pick ``(symbol_duration, num_taps)`` so that ``c_{L+1} < threshold * c_1``.

    Exactly one of ``num_taps`` (tune the symbol duration) or ``symbol_duration``
    (find the smallest tap count) must be given.
    """
    if (num_taps is None) == (symbol_duration is None):
        raise ConfigurationError("give exactly one of num_taps or symbol_duration")
    if threshold <= 0:
        raise ConfigurationError("threshold must be positive")
    t_smp = peak_sample_time(scenario)
    d = scenario.mean_distance
    peak = concentration_at(scenario, d, t_smp)

    if symbol_duration is not None:
        if symbol_duration <= 0:
            raise ConfigurationError("symbol_duration must be positive")
        for L in range(1, max_taps + 1):
            if concentration_at(scenario, d, L * symbol_duration + t_smp) < threshold * peak:
                return float(symbol_duration), L
        raise ConfigurationError(
            f"no tap count <= {max_taps} meets the decay criterion for T_sym={symbol_duration}"
        )

    L = int(num_taps)
    if L < 1:
        raise ConfigurationError("num_taps must be >= 1")
    if threshold >= 1:
        raise ConfigurationError("threshold >= 1 does not constrain the symbol duration")

    def excess(t):
        return concentration_at(scenario, d, t) - threshold * peak

    hi = 2 * t_smp
    for _ in range(200):
        if excess(hi) < 0:
            break
        hi *= 2
    else:
        raise ConfigurationError("decay criterion unreachable")
    t_cross = optimize.brentq(excess, t_smp, hi, xtol=1e-30, rtol=1e-14)
    # strictly past the crossing so that tap L+1 falls below the threshold
    return (t_cross - t_smp) / L * (1 + 1e-9), L


def draw_distance(scenario: PhysicalScenario, rng: np.random.Generator) -> float:
    """``|a| = |a_mean| + U[-halfwidth, halfwidth]``; no draw when the halfwidth is 0."""
    if scenario.distance_halfwidth == 0:
        return scenario.mean_distance
    h = scenario.distance_halfwidth
    return scenario.mean_distance + rng.uniform(-h, h)


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Independent counter-based stream keyed by ``(seed, trial_index)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trial_index),))
    return np.random.Generator(np.random.Philox(ss))


def draw_observations(cir: Cir, seq: TrainingSequence, rng: np.random.Generator) -> ObservationVector:
    S = design_matrix(seq, cir.num_taps)
    return ObservationVector(rng.poisson(S @ cir.as_vector()))


def simulate_observations(
    cir: Cir, seq: TrainingSequence, rng_seed: int, trial_index: int = 0
) -> ObservationVector:
    """Draw ``r[k] ~ Poisson(c^T s_k)`` for ``k = L..K``; deterministic in its arguments."""
    return draw_observations(cir, seq, trial_rng(rng_seed, trial_index))


def mean_observations(cir: Cir, seq: TrainingSequence) -> np.ndarray:
    return design_matrix(seq, cir.num_taps) @ cir.as_vector()
