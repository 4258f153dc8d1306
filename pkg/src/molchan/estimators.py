"""ML, LSSE and ISI-free CIR estimators.

ML and LSSE both enumerate active sets (the indices allowed to be non-zero):
the full set is solved first and accepted when non-negative; otherwise every
other non-empty subset is solved and the best non-negative candidate wins.

Each estimator has a batched form (``*_batch``) that processes many
observation vectors for one training sequence at once; the single-instance
functions are thin wrappers around it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .channel import Cir, ObservationVector, TrainingSequence, design_matrix
from .errors import (
    DomainError,
    EstimationFailure,
    InsufficientDataError,
    NoConvergenceError,
    SingularDesignError,
)

__all__ = [
    "ActiveSet",
    "EstimateReport",
    "active_sets",
    "infer_num_taps",
    "ml_loglikelihood",
    "solve_ml_stationary",
    "estimate_ml",
    "estimate_ml_batch",
    "estimate_lsse",
    "estimate_lsse_batch",
    "lsse_filter_matrix",
    "estimate_lsse_unconstrained_batch",
    "estimate_isifree",
    "estimate_isifree_batch",
    "isifree_index_sets",
]

MAX_NEWTON_ITER = 200
GRAD_TOL = 1e-9
DOMAIN_FLOOR = 1e-12
COND_LIMIT = 1e12

ActiveSet = tuple  # sorted column indices; index L is the noise mean


@lru_cache(maxsize=None)
def active_sets(num_taps: int) -> tuple[ActiveSet, ...]:
    """All ``2^(L+1) - 1`` non-empty subsets, largest first, then lexicographic."""
    cols = range(num_taps + 1)
    return tuple(
        combo
        for size in range(num_taps + 1, 0, -1)
        for combo in itertools.combinations(cols, size)
    )


def active_set_label(active: ActiveSet, num_taps: int) -> str:
    return "{" + ",".join("n" if i == num_taps else str(i + 1) for i in active) + "}"


@dataclass(frozen=True)
class EstimateReport:
    estimator: str
    cir_hat: Cir
    active_set: ActiveSet
    objective: float
    solver_iterations: int = 0
    candidates_evaluated: int = 0
    singular_skipped: int = 0

    @property
    def active_mask(self) -> int:
        return sum(1 << i for i in self.active_set)

    def to_record(self) -> dict:
        vec = self.cir_hat.as_vector()
        L = vec.size - 1
        rec = {"estimator": self.estimator}
        rec.update({f"c{i + 1}": float(v) for i, v in enumerate(vec[:-1])})
        rec["cn"] = float(vec[-1])
        rec["active_set"] = active_set_label(self.active_set, L)
        rec["active_mask"] = self.active_mask
        rec["objective"] = float(self.objective)
        rec["iterations"] = self.solver_iterations
        rec["candidates"] = self.candidates_evaluated
        return rec


def infer_num_taps(seq: TrainingSequence, obs: ObservationVector) -> int:
    L = seq.length - len(obs) + 1
    if L < 1:
        raise DomainError(
            f"{len(obs)} observations do not fit a length-{seq.length} sequence"
        )
    return L


def _check_lengths(seq, obs):
    L = infer_num_taps(seq, obs)
    if seq.length < 2 * L:
        raise DomainError(f"need K >= 2L for estimation, got K={seq.length}, L={L}")
    return L


def _loglik_rows(C, S, R):
    """Row-wise ``sum_k [-mu_k + r_k ln mu_k]`` with ``0 ln 0 = 0``."""
    mu = C @ S.T
    pos = R > 0
    bad = np.any(pos & (mu <= 0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(pos, R * np.log(np.where(pos, mu, 1.0)), 0.0)
    g = np.sum(logs - mu, axis=1)
    g[bad] = -np.inf
    return g


def ml_loglikelihood(cir: Cir, seq: TrainingSequence, obs: ObservationVector) -> float:
    """Poisson log-likelihood up to the ``-ln r!`` constant."""
    L = cir.num_taps
    S = design_matrix(seq, L)
    if S.shape[0] != len(obs):
        raise DomainError(
            f"expected {S.shape[0]} observations for K={seq.length}, L={L}, got {len(obs)}"
        )
    c = cir.as_vector()[None, :]
    return float(_loglik_rows(c, S, obs.counts[None, :].astype(float))[0])


def _gram_singular(G):
    """Batched rank test on symmetric PSD Gram matrices."""
    eig = np.linalg.eigvalsh(G)
    top = eig[..., -1]
    return ~(eig[..., 0] > top / COND_LIMIT) | ~(top > 0)


def _newton_batch(SA, R, c0):
    """Damped Newton for the stationary point of ``g`` restricted to the columns of ``SA``.

    Returns ``(c, converged, iterations)``.  Unconverged rows hold the last iterate.
    """
    T, m = c0.shape
    pos = R > 0
    tol = GRAD_TOL * (1.0 + np.max(R, axis=1))
    c = c0.copy()
    iters = np.zeros(T, dtype=int)
    converged = np.zeros(T, dtype=bool)
    failed = np.zeros(T, dtype=bool)
    g = _loglik_rows(c, SA, R)
    limit = 1e8 * (1.0 + np.max(R, axis=1))

    for _ in range(MAX_NEWTON_ITER + 1):
        mu = c @ SA.T
        ratio = np.where(pos, R / np.where(pos, mu, 1.0), 0.0)
        grad = (ratio - 1.0) @ SA
        converged |= np.max(np.abs(grad), axis=1) <= tol
        work = np.flatnonzero(~converged & ~failed & (iters < MAX_NEWTON_ITER))
        if work.size == 0:
            break
        w = np.where(pos[work], ratio[work] / np.where(pos[work], mu[work], 1.0), 0.0)
        neg_hess = np.einsum("tk,ki,kj->tij", w, SA, SA)
        # iterates heading off to the boundary can flatten the curvature
        flat = _gram_singular(neg_hess)
        if flat.any():
            failed[work[flat]] = True
            work, neg_hess = work[~flat], neg_hess[~flat]
            if work.size == 0:
                break
        step = np.linalg.solve(neg_hess, grad[work][..., None])[..., 0]

        t = np.ones(work.size)
        accepted = np.zeros(work.size, dtype=bool)
        c_new = c[work].copy()
        g_new = g[work].copy()
        for _ in range(60):
            todo = ~accepted
            if not todo.any():
                break
            idx = np.flatnonzero(todo)
            trial = c[work[idx]] + t[idx, None] * step[idx]
            g_try = _loglik_rows(trial, SA, R[work[idx]])
            mu_try = trial @ SA.T
            inside = ~np.any(pos[work[idx]] & (mu_try < DOMAIN_FLOOR), axis=1)
            g_ref = g[work[idx]]
            ok = inside & (g_try >= g_ref - 1e-13 * (1.0 + np.abs(g_ref)))
            c_new[idx[ok]] = trial[ok]
            g_new[idx[ok]] = g_try[ok]
            accepted[idx[ok]] = True
            t[idx[~ok]] *= 0.5
        c[work] = c_new
        g[work] = g_new
        iters[work] += 1
        failed[work[~accepted]] = True
        failed |= np.any(np.abs(c) > limit[:, None], axis=1)

    converged &= ~failed
    return c, converged, iters


def _subset_precheck(SA, R):
    """Per-row classification of a subset before solving.

    Returns ``(possible, unique)``: ``possible`` is False when some ``r_k > 0``
    has an all-zero design row (likelihood is -inf everywhere); ``unique`` is
    False when the rows with ``r_k > 0`` do not determine a unique stationary
    point.
    """
    pos = R > 0
    zero_rows = ~np.any(SA != 0, axis=1)
    possible = ~np.any(pos & zero_rows[None, :], axis=1)
    G = np.einsum("tk,ki,kj->tij", pos.astype(float), SA, SA)
    unique = ~_gram_singular(G)
    return possible, unique


def _ml_subset(SA, R):
    """Solve the stationary system on one subset for every row of ``R``.

    Returns ``(c, ok, iters)`` where ``ok`` marks rows with a finite solution.
    Rows whose counts are all zero get the zero vector.
    """
    T = R.shape[0]
    m = SA.shape[1]
    out = np.zeros((T, m))
    ok = np.zeros(T, dtype=bool)
    iters = np.zeros(T, dtype=int)
    all_zero = ~np.any(R > 0, axis=1)
    ok[all_zero] = True

    possible, unique = _subset_precheck(SA, R)
    rows = np.flatnonzero(~all_zero & possible & unique)
    if rows.size == 0:
        return out, ok, iters
    F = np.linalg.solve(SA.T @ SA, SA.T)
    c0 = np.maximum(R[rows] @ F.T, 1e-3)
    mu0 = c0 @ SA.T
    bad0 = np.any((R[rows] > 0) & (mu0 <= 0), axis=1)
    if bad0.any():
        c0[bad0] = (np.mean(R[rows][bad0], axis=1) / m)[:, None]
    c, conv, it = _newton_batch(SA, R[rows], c0)
    out[rows] = c
    ok[rows] = conv
    iters[rows] = it
    return out, ok, iters


def solve_ml_stationary(
    active: ActiveSet, seq: TrainingSequence, obs: ObservationVector
) -> np.ndarray:
    """Stationary point of the log-likelihood over the columns in ``active``.

    The result may contain negative entries; feasibility is left to the caller.
    """
    L = infer_num_taps(seq, obs)
    S = design_matrix(seq, L)
    SA = S[:, list(active)]
    if _gram_singular(SA.T @ SA):
        raise SingularDesignError(f"design restricted to {active} is rank deficient")
    R = obs.counts[None, :].astype(float)
    c, ok, _ = _ml_subset(SA, R)
    if not ok[0]:
        raise NoConvergenceError(f"no finite stationary point found for active set {active}")
    return c[0]


@dataclass
class _BatchResult:
    estimates: np.ndarray
    active_index: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    candidates: np.ndarray
    singular: np.ndarray = field(default=None)


def estimate_ml_batch(S: np.ndarray, R: np.ndarray) -> _BatchResult:
    """Active-set ML estimation for every row of ``R`` (shape ``(T, K - L + 1)``)."""
    R = np.asarray(R, dtype=float)
    T = R.shape[0]
    m = S.shape[1]
    subsets = active_sets(m - 1)
    est = np.zeros((T, m))
    best = np.full(T, -np.inf)
    chosen = np.full(T, -1)
    iters = np.zeros(T, dtype=int)
    cands = np.zeros(T, dtype=int)
    singular = np.zeros(T, dtype=int)

    pending = np.arange(T)
    for n, active in enumerate(subsets):
        if pending.size == 0:
            break
        SA = S[:, list(active)]
        if _gram_singular(SA.T @ SA):
            singular[pending] += 1
            continue
        c, ok, it = _ml_subset(SA, R[pending])
        cands[pending] += 1
        iters[pending] += it
        singular[pending[~ok]] += 1
        feasible = ok & np.all(c >= 0, axis=1)
        full = np.zeros((pending.size, m))
        full[:, list(active)] = c
        if n == 0:
            done = pending[feasible]
            est[done] = full[feasible]
            chosen[done] = 0
            best[done] = _loglik_rows(full[feasible], S, R[done])
            pending = pending[~feasible]
            continue
        g = np.full(pending.size, -np.inf)
        if feasible.any():
            g[feasible] = _loglik_rows(full[feasible], S, R[pending[feasible]])
        better = feasible & ((g > best[pending]) | (chosen[pending] < 0))
        upd = pending[better]
        est[upd] = full[better]
        best[upd] = g[better]
        chosen[upd] = n

    if np.any(chosen < 0):
        raise EstimationFailure("every active set was infeasible or singular")
    return _BatchResult(est, chosen, best, iters, cands, singular)


def _report(name, batch, i, L):
    active = active_sets(L)[batch.active_index[i]]
    return EstimateReport(
        estimator=name,
        cir_hat=Cir.from_vector(batch.estimates[i]),
        active_set=active,
        objective=float(batch.objective[i]),
        solver_iterations=int(batch.iterations[i]),
        candidates_evaluated=int(batch.candidates[i]),
        singular_skipped=int(batch.singular[i]),
    )


def estimate_ml(seq: TrainingSequence, obs: ObservationVector) -> EstimateReport:
    """Maximum-likelihood CIR estimate under ``c >= 0``."""
    L = _check_lengths(seq, obs)
    S = design_matrix(seq, L)
    batch = estimate_ml_batch(S, obs.counts[None, :])
    return _report("ml", batch, 0, L)


@lru_cache(maxsize=256)
def _filters(S_bytes, shape):
    """Per-subset LSSE filters for one design matrix, ``None`` where singular."""
    S = np.frombuffer(S_bytes).reshape(shape)
    out = []
    for active in active_sets(shape[1] - 1):
        SA = S[:, list(active)]
        G = SA.T @ SA
        out.append(None if _gram_singular(G) else np.linalg.solve(G, SA.T))
    return tuple(out)


def lsse_filter_matrix(active: ActiveSet, seq: TrainingSequence, num_taps: int) -> np.ndarray:
    """``(S_A^T S_A)^{-1} S_A^T``: the linear map from counts to the subset solution."""
    S = design_matrix(seq, num_taps)
    SA = S[:, list(active)]
    G = SA.T @ SA
    if _gram_singular(G):
        raise SingularDesignError(f"design restricted to {active} is rank deficient")
    return np.linalg.solve(G, SA.T)


def estimate_lsse_batch(S: np.ndarray, R: np.ndarray) -> _BatchResult:
    R = np.asarray(R, dtype=float)
    T = R.shape[0]
    m = S.shape[1]
    subsets = active_sets(m - 1)
    filters = _filters(np.ascontiguousarray(S, dtype=float).tobytes(), S.shape)
    est = np.zeros((T, m))
    best = np.full(T, np.inf)
    chosen = np.full(T, -1)
    cands = np.zeros(T, dtype=int)
    singular = np.zeros(T, dtype=int)

    pending = np.arange(T)
    for n, (active, F) in enumerate(zip(subsets, filters)):
        if pending.size == 0:
            break
        if F is None:
            singular[pending] += 1
            continue
        cands[pending] += 1
        full = np.zeros((pending.size, m))
        full[:, list(active)] = R[pending] @ F.T
        feasible = np.all(full >= 0, axis=1)
        resid = R[pending] - full @ S.T
        obj = np.sum(resid * resid, axis=1)
        if n == 0:
            done = pending[feasible]
            est[done] = full[feasible]
            best[done] = obj[feasible]
            chosen[done] = 0
            pending = pending[~feasible]
            continue
        better = feasible & ((obj < best[pending]) | (chosen[pending] < 0))
        upd = pending[better]
        est[upd] = full[better]
        best[upd] = obj[better]
        chosen[upd] = n

    if np.any(chosen < 0):
        raise EstimationFailure("every active set was infeasible or singular")
    return _BatchResult(est, chosen, best, np.zeros(T, dtype=int), cands, singular)


def estimate_lsse(seq: TrainingSequence, obs: ObservationVector) -> EstimateReport:
    """Least sum of squared errors CIR estimate under ``c >= 0``."""
    L = _check_lengths(seq, obs)
    S = design_matrix(seq, L)
    batch = estimate_lsse_batch(S, obs.counts[None, :])
    return _report("lsse", batch, 0, L)


def estimate_lsse_unconstrained_batch(S: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Plain least squares ``(S^T S)^{-1} S^T r`` without the sign constraint."""
    G = S.T @ S
    if _gram_singular(G):
        raise SingularDesignError("S^T S is singular")
    F = np.linalg.solve(G, S.T)
    return np.asarray(R, dtype=float) @ F.T


def isifree_index_sets(K: int, L: int, k0: int) -> tuple[list[np.ndarray], np.ndarray]:
    """1-based sample indices ``k >= L`` attributed to each tap and to the noise."""
    k = np.arange(L, K + 1)
    taps = [k[(k - k0 - l + 1) % (L + 1) == 0] for l in range(1, L + 1)]
    noise = k[(k - k0 - L) % (L + 1) == 0]
    return taps, noise


def _isifree_check(seq, L, k0):
    from .design import is_isi_free

    if not 1 <= k0 <= L + 1:
        raise DomainError(f"k0 must lie in 1..{L + 1}, got {k0}")
    if not is_isi_free(seq, L, k0):
        raise DomainError(f"sequence {seq.bits()} is not ISI-free for L={L}, k0={k0}")
    taps, noise = isifree_index_sets(seq.length, L, k0)
    if noise.size == 0 or any(t.size == 0 for t in taps):
        raise InsufficientDataError("an index set is empty; sequence too short")
    return taps, noise


def estimate_isifree_batch(
    seq: TrainingSequence, R: np.ndarray, num_taps: int, k0: int = 1
) -> np.ndarray:
    L = num_taps
    taps, noise = _isifree_check(seq, L, k0)
    R = np.asarray(R, dtype=float)
    cn = R[:, noise - L].mean(axis=1)
    out = np.empty((R.shape[0], L + 1))
    for l, idx in enumerate(taps):
        out[:, l] = np.maximum(R[:, idx - L].mean(axis=1) - cn, 0.0)
    out[:, L] = cn
    return out


def estimate_isifree(
    seq: TrainingSequence, obs: ObservationVector, k0: int = 1, num_taps: Optional[int] = None
) -> EstimateReport:
    """Closed-form estimate for an ISI-free sequence: group means minus the noise mean."""
    L = infer_num_taps(seq, obs) if num_taps is None else num_taps
    if len(obs) != seq.length - L + 1:
        raise DomainError("observation length does not match K - L + 1")
    vec = estimate_isifree_batch(seq, obs.counts[None, :], L, k0)[0]
    S = design_matrix(seq, L)
    resid = obs.counts - S @ vec
    active = tuple(int(i) for i in np.flatnonzero(vec > 0)) or (L,)
    return EstimateReport(
        estimator="isi-free",
        cir_hat=Cir.from_vector(vec),
        active_set=active,
        objective=float(resid @ resid),
    )
