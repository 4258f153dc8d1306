"""Training sequence design: ISI-free construction and exhaustive LSSE-bound search."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bounds import _bound_from_design
from .channel import Cir, TrainingSequence, design_matrix
from .errors import DomainError, SearchFailure
from .parallel import resolve_workers

__all__ = [
    "DesignCriterionValue",
    "DEFAULT_EPSILON",
    "MAX_SEARCH_LENGTH",
    "isi_free_sequence",
    "is_isi_free",
    "isi_free_offset",
    "design_objective",
    "search_optimal_sequence",
]

DEFAULT_EPSILON = 1e-9
MAX_SEARCH_LENGTH = 24
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class DesignCriterionValue:
    objective: float
    min_abs_eigenvalue: float
    admissible: bool


def isi_free_sequence(K: int, L: int, k0: int = 1) -> TrainingSequence:
    """One release every ``L + 1`` intervals, the first at interval ``k0``."""
    if L < 1:
        raise DomainError("L must be >= 1")
    if not 1 <= k0 <= L + 1:
        raise DomainError(f"k0 must lie in 1..{L + 1}, got {k0}")
    if K < 2 * L:
        raise DomainError(f"need K >= 2L, got K={K}, L={L}")
    k = np.arange(1, K + 1)
    return TrainingSequence(((k - k0) % (L + 1) == 0).astype(np.int8))


def is_isi_free(seq: TrainingSequence, L: int, k0: int) -> bool:
    k = np.arange(1, seq.length + 1)
    return bool(np.array_equal(seq.symbols, ((k - k0) % (L + 1) == 0).astype(np.int8)))


def isi_free_offset(seq: TrainingSequence, L: int) -> Optional[int]:
    """The ``k0`` for which ``seq`` is ISI-free, or ``None``."""
    for k0 in range(1, L + 2):
        if is_isi_free(seq, L, k0):
            return k0
    return None


def _mean_vector(mean_cir) -> np.ndarray:
    mu = mean_cir.as_vector() if isinstance(mean_cir, Cir) else np.asarray(mean_cir, float)
    if np.any(mu < 0):
        raise DomainError("mean CIR must be non-negative")
    return mu


def design_objective(
    seq: TrainingSequence,
    mean_cir: Union[Cir, Sequence[float]],
    epsilon: float = DEFAULT_EPSILON,
) -> DesignCriterionValue:
    """LSSE error bound of ``seq``, or an inadmissible marker when ``S^T S`` is near singular."""
    mu = _mean_vector(mean_cir)
    S = design_matrix(seq, mu.size - 1)
    G = S.T @ S
    min_abs = float(np.min(np.abs(np.linalg.eigvalsh(G))))
    if min_abs <= epsilon:
        return DesignCriterionValue(math.inf, min_abs, False)
    return DesignCriterionValue(_bound_from_design(S, G, mu), min_abs, True)


def _codes_to_bits(codes: np.ndarray, K: int) -> np.ndarray:
    # s[1] is the most significant bit, so numeric order is lexicographic order
    shifts = np.arange(K - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(float)


def _scan_block(args):
    """Best ``(objective, code)`` within ``[start, stop)``; ties go to the smallest code."""
    start, stop, K, L, mu, epsilon = args
    codes = np.arange(start, stop, dtype=np.int64)
    bits = _codes_to_bits(codes, K)
    # all-zero design columns are structurally singular; reject before the eigen-solve
    windows = sliding_window_view(bits, L, axis=1)[:, :, ::-1]
    live = np.all(windows.any(axis=1), axis=1)
    if not live.any():
        return math.inf, -1
    windows = windows[live]
    codes = codes[live]
    n_obs = K - L + 1
    S = np.ones((codes.size, n_obs, L + 1))
    S[:, :, :L] = windows
    G = np.einsum("bki,bkj->bij", S, S)
    eig = np.linalg.eigvalsh(G)
    ok = np.min(np.abs(eig), axis=1) > epsilon
    if not ok.any():
        return math.inf, -1
    S, G, codes = S[ok], G[ok], codes[ok]
    Ginv = np.linalg.inv(G)
    weights = np.einsum("bki,bij,bkj->bk", S, Ginv @ Ginv, S)
    obj = np.einsum("bk,bk->b", weights, S @ mu)
    best = obj.min()
    near = obj <= best * (1 + TIE_RTOL)
    return float(best), int(codes[near].min())


def search_optimal_sequence(
    K: int,
    L: int,
    mean_cir: Union[Cir, Sequence[float]],
    epsilon: float = DEFAULT_EPSILON,
    workers: Optional[int] = None,
) -> tuple[TrainingSequence, DesignCriterionValue]:
    """Exhaustive search over all ``2^K`` binary sequences for the smallest LSSE bound.

    The candidate space is split into fixed prefix blocks independent of the
    worker count; among near-equal minima (relative ``1e-12``) the
    lexicographically smallest sequence wins.
    """
    if K > MAX_SEARCH_LENGTH:
        raise DomainError(f"exhaustive search limited to K <= {MAX_SEARCH_LENGTH}, got {K}")
    if L < 1 or K < 2 * L:
        raise DomainError(f"need L >= 1 and K >= 2L, got K={K}, L={L}")
    mu = _mean_vector(mean_cir)
    if mu.size != L + 1:
        raise DomainError(f"mean CIR has {mu.size} entries, expected {L + 1}")

    total = 1 << K
    block = 1 << min(K, 14)
    jobs = [(lo, min(lo + block, total), K, L, mu, epsilon) for lo in range(0, total, block)]
    n_workers = resolve_workers(workers)
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_scan_block, jobs))
    else:
        results = [_scan_block(job) for job in jobs]

    finite = [r for r in results if r[1] >= 0]
    if not finite:
        raise SearchFailure(f"no admissible sequence for K={K}, L={L}, epsilon={epsilon}")
    overall = min(obj for obj, _ in finite)
    code = min(c for obj, c in finite if obj <= overall * (1 + TIE_RTOL))
    seq = TrainingSequence(_codes_to_bits(np.array([code], dtype=np.int64), K)[0].astype(np.int8))
    return seq, design_objective(seq, mu, epsilon)
