"""Fisher information, CR lower bound, LSSE error bound and error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import linalg

from .channel import (
    Cir,
    PhysicalScenario,
    TrainingSequence,
    _concentration_array,
    design_matrix,
    peak_sample_time,
    receiver_volume,
    synthesize_cir,
)
from .errors import DomainError, SingularDesignError

__all__ = [
    "ErrorStats",
    "fisher_matrix",
    "cr_bound",
    "lsse_error_upper_bound",
    "prior_mean_cir",
    "error_stats",
    "to_db",
]

COND_LIMIT = 1e12


def fisher_matrix(cir: Cir, seq: TrainingSequence) -> np.ndarray:
    """``sum_k s_k s_k^T / (c^T s_k)`` over the observation window."""
    S = design_matrix(seq, cir.num_taps)
    mean = S @ cir.as_vector()
    if np.any(mean <= 0):
        raise DomainError("Fisher information undefined: an observation has zero mean")
    return (S / mean[:, None]).T @ S


def _trace_inverse(M: np.ndarray, what: str) -> float:
    eig = np.linalg.eigvalsh(M)
    if not eig[-1] > 0 or eig[0] <= eig[-1] / COND_LIMIT:
        raise SingularDesignError(
            f"singular {what} (smallest eigenvalue {eig[0]:.3g}, largest {eig[-1]:.3g})"
        )
    factor = linalg.cho_factor(M)
    return float(np.trace(linalg.cho_solve(factor, np.eye(M.shape[0]))))


def cr_bound(cir: Cir, seq: TrainingSequence) -> float:
    """Trace of the inverse Fisher matrix: a floor on ``E||e||^2`` for unbiased estimators."""
    return _trace_inverse(fisher_matrix(cir, seq), "Fisher matrix")


def lsse_error_upper_bound(seq: TrainingSequence, mean_cir: Union[Cir, Sequence[float]]) -> float:
    """Expected squared error of unconstrained least squares, averaged over counts and CIR.

    Computed as ``sum_k [S (S^T S)^-2 S^T]_kk (S mu)_k``; only the prior mean of
    the CIR enters because the Poisson covariance is linear in the CIR.
    """
    mu = mean_cir.as_vector() if isinstance(mean_cir, Cir) else np.asarray(mean_cir, float)
    if np.any(mu < 0):
        raise DomainError("mean CIR must be non-negative")
    S = design_matrix(seq, mu.size - 1)
    G = S.T @ S
    eig = np.linalg.eigvalsh(G)
    if not eig[-1] > 0 or eig[0] <= eig[-1] / COND_LIMIT:
        raise SingularDesignError("S^T S is singular")
    return _bound_from_design(S, G, mu)


def _bound_from_design(S, G, mu):
    Ginv = np.linalg.inv(G)
    weights = np.einsum("ki,ij,kj->k", S, Ginv @ Ginv, S)
    return float(weights @ (S @ mu))


def prior_mean_cir(scenario: PhysicalScenario, seed: int, draws: int = 10_000) -> Cir:
    """Average CIR over uniformly drawn distances on a reserved sub-stream of ``seed``."""
    if scenario.distance_halfwidth == 0:
        return synthesize_cir(scenario)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(0, 1))
    rng = np.random.Generator(np.random.Philox(ss))
    h = scenario.distance_halfwidth
    d = scenario.mean_distance + rng.uniform(-h, h, size=draws)
    times = np.arange(scenario.num_taps) * scenario.symbol_duration + peak_sample_time(scenario)
    taps = receiver_volume(scenario) * _concentration_array(scenario, d[:, None], times[None, :])
    noise = synthesize_cir(scenario).noise_mean
    return Cir(np.array([math.fsum(col) / draws for col in taps.T]), noise)


@dataclass(frozen=True)
class ErrorStats:
    normalized_mean: float
    normalized_var: float
    num_trials: int
    mean_sq_error: float = float("nan")

    @property
    def mean_db(self) -> float:
        return to_db(self.normalized_mean)

    @property
    def var_db(self) -> float:
        return to_db(self.normalized_var)


def to_db(x: float) -> float:
    return 10 * math.log10(x) if x > 0 else -math.inf


def _as_matrix(items) -> np.ndarray:
    if isinstance(items, np.ndarray):
        return np.atleast_2d(np.asarray(items, dtype=float))
    return np.array([c.as_vector() if isinstance(c, Cir) else np.asarray(c, float) for c in items])


def error_stats(estimates: Iterable, truths: Iterable) -> ErrorStats:
    """Normalized error mean and variance over trials, with exactly rounded sums.

    ``estimates`` and ``truths`` are sequences of :class:`Cir` or arrays of shape
    ``(trials, L + 1)``.
    """
    est = _as_matrix(estimates)
    tru = _as_matrix(truths)
    if est.shape != tru.shape:
        raise DomainError(f"shape mismatch: {est.shape} vs {tru.shape}")
    n = est.shape[0]
    if n < 1:
        raise DomainError("need at least one trial")
    err = est - tru
    mean_err = np.array([math.fsum(col) / n for col in err.T])
    mean_truth = np.array([math.fsum(col) / n for col in tru.T])
    mean_sq = sum(math.fsum(col) / n for col in (err * err).T)
    truth_norm = float(mean_truth @ mean_truth)
    if truth_norm == 0:
        raise DomainError("mean true CIR has zero norm")
    bias_sq = sum(float(x) * float(x) for x in mean_err)
    return ErrorStats(
        normalized_mean=bias_sq / truth_norm,
        normalized_var=max(mean_sq - bias_sq, 0.0) / truth_norm,
        num_trials=n,
        mean_sq_error=mean_sq,
    )
