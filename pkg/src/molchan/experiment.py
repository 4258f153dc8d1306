"""Monte Carlo harness: sweeps over (K, L), simulates, estimates and aggregates.

Trial ``i`` of every cell draws from the stream keyed by ``(master_seed, i)``:
first the distance offset (when the halfwidth is non-zero), then the counts.
Trials are processed in fixed-size chunks whose composition does not depend
on the worker count, and aggregates use exactly rounded sums, so outputs are
bit-identical for any ``MOLCHAN_THREADS``.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bounds import cr_bound, error_stats, lsse_error_upper_bound, prior_mean_cir, to_db
from .channel import (
    PhysicalScenario,
    TrainingSequence,
    _concentration_array,
    choose_symbol_params,
    design_matrix,
    peak_sample_time,
    receiver_volume,
    synthesize_cir,
    trial_rng,
)
from .design import (
    DEFAULT_EPSILON,
    isi_free_offset,
    isi_free_sequence,
    search_optimal_sequence,
)
from .errors import ConfigurationError, MolchanError
from .estimators import (
    estimate_isifree_batch,
    estimate_lsse_batch,
    estimate_lsse_unconstrained_batch,
    estimate_ml_batch,
)
from .parallel import resolve_workers

logger = logging.getLogger(__name__)

__all__ = [
    "PRESET_SEQUENCES",
    "ESTIMATORS",
    "SEQUENCE_SOURCES",
    "ExperimentSpec",
    "ResultRow",
    "build_sequence",
    "scenario_for_taps",
    "run_experiment",
    "emit_results",
    "format_results",
    "load_spec",
    "PRESETS",
]

PRESET_SEQUENCES = {"fig1-base": "1100100101"}
ESTIMATORS = ("ml", "lsse", "isi-free", "lsse-unconstrained")
SEQUENCE_SOURCES = ("repeated-base", "isi-free", "optimal-search", "explicit")
CSV_HEADER = ("estimator", "K", "L", "mean_db", "var_db", "cr_db", "bound_db", "trials", "seconds")
CHUNK = 2048
PRIOR_DRAWS = 10_000


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: PhysicalScenario = field(default_factory=PhysicalScenario)
    sequence_source: str = "repeated-base"
    base: str = "fig1-base"
    k0: int = 1
    bits: str = ""
    estimators: tuple = ("ml", "lsse")
    taps_list: tuple = (1,)
    lengths_list: tuple = (10,)
    num_trials: int = 100_000
    master_seed: int = 1
    report_bound: bool = False
    epsilon: float = DEFAULT_EPSILON
    prior_draws: int = PRIOR_DRAWS

    def __post_init__(self):
        if self.num_trials < 1:
            raise ConfigurationError("num_trials must be >= 1")
        if self.sequence_source not in SEQUENCE_SOURCES:
            raise ConfigurationError(
                f"unknown sequence source {self.sequence_source!r}; choose from {SEQUENCE_SOURCES}"
            )
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ConfigurationError(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATORS}")
        if not self.taps_list or any(L < 1 for L in self.taps_list):
            raise ConfigurationError("taps_list must hold positive integers")
        if self.sequence_source == "explicit":
            if not self.bits:
                raise ConfigurationError("explicit sequence source needs bits")
        elif not self.lengths_list:
            raise ConfigurationError("lengths_list is empty")

    def lengths(self) -> tuple:
        if self.sequence_source == "explicit" and not self.lengths_list:
            return (len(TrainingSequence.from_bits(self.bits)),)
        return tuple(self.lengths_list)


@dataclass
class ResultRow:
    estimator: str
    K: int
    L: int
    normalized_mean_db: Optional[float] = None
    normalized_var_db: Optional[float] = None
    cr_bound_db: Optional[float] = None
    lsse_upper_bound_db: Optional[float] = None
    num_trials: int = 0
    wall_time_s: Optional[float] = None
    skip_reason: Optional[str] = None
    notes: tuple = ()

    @property
    def skipped(self) -> bool:
        return self.skip_reason is not None


def scenario_for_taps(scenario: PhysicalScenario, L: int) -> PhysicalScenario:
    """Fix ``num_taps = L`` and, unless pinned, the symbol duration meeting the decay rule."""
    if scenario.symbol_duration is None:
        T_sym, _ = choose_symbol_params(scenario, num_taps=L)
        return scenario.replace(symbol_duration=T_sym, num_taps=L)
    return scenario.replace(num_taps=L)


def build_sequence(spec: ExperimentSpec, K: int, L: int, mean_cir=None) -> tuple[TrainingSequence, Optional[int]]:
    """Training sequence for one cell plus its ISI-free offset when it has one."""
    src = spec.sequence_source
    if src == "repeated-base":
        base = TrainingSequence.from_bits(PRESET_SEQUENCES.get(spec.base, spec.base))
        reps = -(-K // base.length)
        seq = TrainingSequence(base.repeated(reps).symbols[:K])
    elif src == "isi-free":
        seq = isi_free_sequence(K, L, spec.k0)
    elif src == "optimal-search":
        if mean_cir is None:
            raise ConfigurationError("optimal-search needs the prior mean CIR")
        seq, _ = search_optimal_sequence(K, L, mean_cir, spec.epsilon)
    else:
        seq = TrainingSequence.from_bits(spec.bits)
        if seq.length != K:
            raise ConfigurationError(f"explicit sequence has length {seq.length}, not {K}")
    return seq, isi_free_offset(seq, L)


@dataclass(frozen=True)
class _Cell:
    scenario: PhysicalScenario
    seq_bits: str
    L: int
    k0: Optional[int]
    estimators: tuple
    seed: int


def _simulate_chunk(cell: _Cell, start: int, stop: int):
    sc = cell.scenario
    seq = TrainingSequence.from_bits(cell.seq_bits)
    S = design_matrix(seq, cell.L)
    n = stop - start
    rngs = [trial_rng(cell.seed, i) for i in range(start, stop)]
    base = synthesize_cir(sc).as_vector()
    truths = np.tile(base, (n, 1))
    if sc.distance_halfwidth > 0:
        h = sc.distance_halfwidth
        d = np.array([sc.mean_distance + g.uniform(-h, h) for g in rngs])
        times = np.arange(cell.L) * sc.symbol_duration + peak_sample_time(sc)
        truths[:, : cell.L] = receiver_volume(sc) * _concentration_array(sc, d[:, None], times[None, :])
    means = truths @ S.T
    R = np.array([g.poisson(m) for g, m in zip(rngs, means)], dtype=float)
    return S, seq, truths, R


def _run_chunk(args):
    cell, start, stop = args
    S, seq, truths, R = _simulate_chunk(cell, start, stop)
    out = {}
    timing = {}
    for name in cell.estimators:
        t0 = time.perf_counter()
        if name == "ml":
            est = estimate_ml_batch(S, R).estimates
        elif name == "lsse":
            est = estimate_lsse_batch(S, R).estimates
        elif name == "lsse-unconstrained":
            est = estimate_lsse_unconstrained_batch(S, R)
        else:
            est = estimate_isifree_batch(seq, R, cell.L, cell.k0)
        out[name] = est
        timing[name] = time.perf_counter() - t0
    return truths, out, timing


def _chunks(n):
    return [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]


def _run_cell(spec, K, L, pool, notes):
    rows = []
    sc = scenario_for_taps(spec.scenario, L)
    if K < 2 * L:
        reason = f"K={K} < 2L={2 * L}: fewer observations than unknowns"
        return [ResultRow(e, K, L, skip_reason=reason) for e in spec.estimators]

    random_cir = sc.distance_halfwidth > 0
    prior = prior_mean_cir(sc, spec.master_seed, spec.prior_draws) if random_cir else synthesize_cir(sc)
    try:
        seq, k0 = build_sequence(spec, K, L, prior)
    except MolchanError as exc:
        return [ResultRow(e, K, L, skip_reason=str(exc)) for e in spec.estimators]

    runnable = []
    for name in spec.estimators:
        if name == "isi-free" and k0 is None:
            rows.append(ResultRow(name, K, L, skip_reason=f"sequence {seq.bits()} is not ISI-free for L={L}"))
        elif name == "lsse-unconstrained" and np.linalg.matrix_rank(design_matrix(seq, L)) < L + 1:
            rows.append(ResultRow(name, K, L, skip_reason="S^T S is singular"))
        else:
            runnable.append(name)
    if not runnable:
        return rows

    cell = _Cell(sc, seq.bits(), L, k0, tuple(runnable), spec.master_seed)
    jobs = [(cell, lo, hi) for lo, hi in _chunks(spec.num_trials)]
    results = list(pool.map(_run_chunk, jobs)) if pool is not None else [_run_chunk(j) for j in jobs]
    truths = np.concatenate([r[0] for r in results])

    cr_value = None
    cr_note = None
    try:
        cr_value = cr_bound(synthesize_cir(sc), seq)
    except MolchanError as exc:
        cr_note = f"K={K} L={L}: CR bound not computable ({exc})"
        notes.append(cr_note)
    bound_value = None
    if spec.report_bound:
        try:
            bound_value = lsse_error_upper_bound(seq, prior)
        except MolchanError as exc:
            notes.append(f"K={K} L={L}: LSSE bound not computable ({exc})")

    mean_truth = np.array([math.fsum(col) / truths.shape[0] for col in truths.T])
    norm = float(mean_truth @ mean_truth)
    cell_notes = (cr_note,) if cr_note else ()
    for name in runnable:
        est = np.concatenate([r[1][name] for r in results])
        stats = error_stats(est, truths)
        rows.append(
            ResultRow(
                estimator=name,
                K=K,
                L=L,
                normalized_mean_db=stats.mean_db,
                normalized_var_db=stats.var_db,
                cr_bound_db=None if cr_value is None else to_db(cr_value / norm),
                lsse_upper_bound_db=None if bound_value is None else to_db(bound_value / norm),
                num_trials=stats.num_trials,
                wall_time_s=math.fsum(r[2][name] for r in results),
                notes=cell_notes,
            )
        )
    order = {e: i for i, e in enumerate(spec.estimators)}
    rows.sort(key=lambda r: order[r.estimator])
    return rows


def run_experiment(
    spec: ExperimentSpec, workers: Optional[int] = None, notes: Optional[list] = None
) -> list[ResultRow]:
    """Run every ``(L, K)`` cell and return one row per ``(estimator, K, L)``.

    ``notes`` (when given) collects human-readable remarks about skipped
    bounds and the averaging conventions in force.
    """
    notes = [] if notes is None else notes
    if spec.scenario.distance_halfwidth > 0:
        notes.append("distance offset redrawn per trial; CR bound evaluated at the mean-distance CIR")
    n_workers = resolve_workers(workers)
    rows: list[ResultRow] = []
    pool = ProcessPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        for L in spec.taps_list:
            for K in spec.lengths():
                cell_rows = _run_cell(spec, K, L, pool, notes)
                for row in cell_rows:
                    if row.skipped:
                        logger.warning("skipped %s K=%d L=%d: %s", row.estimator, K, L, row.skip_reason)
                        notes.append(f"skipped {row.estimator} K={K} L={L}: {row.skip_reason}")
                rows.extend(cell_rows)
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _row_record(row: ResultRow, timing: bool) -> dict:
    return {
        "estimator": row.estimator,
        "K": row.K,
        "L": row.L,
        "mean_db": row.normalized_mean_db,
        "var_db": row.normalized_var_db,
        "cr_db": row.cr_bound_db,
        "bound_db": row.lsse_upper_bound_db,
        "trials": row.num_trials,
        "seconds": row.wall_time_s if timing else None,
    }


def format_results(rows: Sequence[ResultRow], fmt: str = "csv", timing: bool = False) -> str:
    """Serialize rows; wall-clock seconds are blank unless ``timing`` is set."""
    if not rows:
        raise ValueError("no rows to emit")
    records = [_row_record(r, timing) for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(
                [rec["estimator"], rec["K"], rec["L"]]
                + [_fmt(rec[k]) for k in ("mean_db", "var_db", "cr_db", "bound_db")]
                + [rec["trials"], _fmt(rec["seconds"])]
            )
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(records, indent=1) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit_results(rows: Sequence[ResultRow], fmt: str, path, timing: bool = False) -> Path:
    path = Path(path)
    text = format_results(rows, fmt, timing)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _float(section, key, default):
    raw = section.get(key, "")
    if raw.strip() == "":
        return default
    return float(raw)


def _int_list(raw: str) -> tuple:
    out = []
    for part in raw.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            lo, hi, *step = (int(x) for x in part.split(":"))
            out.extend(range(lo, hi + 1, step[0] if step else 1))
        else:
            out.append(int(part))
    return tuple(out)


def spec_from_config(cfg: configparser.ConfigParser) -> ExperimentSpec:
    for name in ("scenario", "sequence", "experiment"):
        if not cfg.has_section(name):
            cfg.add_section(name)
    sc, seq, ex = cfg["scenario"], cfg["sequence"], cfg["experiment"]
    defaults = PhysicalScenario()
    t_raw = sc.get("symbol_duration", "auto").strip()
    try:
        scenario = PhysicalScenario(
            n_tx=int(_float(sc, "n_tx", defaults.n_tx)),
            diffusion_coeff=_float(sc, "diffusion_coeff", defaults.diffusion_coeff),
            mean_distance=_float(sc, "mean_distance", defaults.mean_distance),
            distance_halfwidth=_float(sc, "distance_halfwidth", defaults.distance_halfwidth),
            receiver_radius=_float(sc, "receiver_radius", defaults.receiver_radius),
            symbol_duration=None if t_raw in ("", "auto") else float(t_raw),
        )
        return ExperimentSpec(
            scenario=scenario,
            sequence_source=seq.get("source", "repeated-base").strip(),
            base=seq.get("base", "fig1-base").strip(),
            k0=int(seq.get("k0", "1")),
            bits=seq.get("bits", "").strip(),
            estimators=tuple(e.strip() for e in ex.get("estimators", "ml,lsse").split(",") if e.strip()),
            taps_list=_int_list(ex.get("taps", "1")),
            lengths_list=_int_list(ex.get("lengths", "10")),
            num_trials=int(float(ex.get("trials", "100000"))),
            master_seed=int(ex.get("seed", "1")),
            report_bound=ex.getboolean("report_bound", False),
            epsilon=_float(ex, "epsilon", DEFAULT_EPSILON),
            prior_draws=int(_float(ex, "prior_draws", PRIOR_DRAWS)),
        )
    except MolchanError:
        raise
    except ValueError as exc:
        raise ConfigurationError(f"bad configuration value: {exc}") from exc


def load_spec(path) -> ExperimentSpec:
    """Read an INI-style configuration with ``[scenario]``, ``[sequence]`` and ``[experiment]``."""
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path, encoding="utf-8") as fh:
        cfg.read_file(fh)
    return spec_from_config(cfg)


PRESETS = {
    "fig1": ExperimentSpec(
        estimators=("ml", "lsse"),
        taps_list=(1, 3, 5),
        lengths_list=tuple(range(10, 101, 10)),
    ),
    "fig2": ExperimentSpec(
        estimators=("ml", "lsse"),
        taps_list=(1, 3, 5),
        lengths_list=tuple(range(10, 101, 10)),
    ),
    "fig3-optimal": ExperimentSpec(
        scenario=PhysicalScenario(distance_halfwidth=100e-9),
        sequence_source="optimal-search",
        estimators=("lsse", "lsse-unconstrained"),
        taps_list=(1, 2, 3, 5),
        lengths_list=tuple(range(10, 21, 2)),
        report_bound=True,
    ),
    "fig3-isi-free": ExperimentSpec(
        scenario=PhysicalScenario(distance_halfwidth=100e-9),
        sequence_source="isi-free",
        estimators=("lsse", "lsse-unconstrained", "isi-free"),
        taps_list=(1, 2, 3, 5),
        lengths_list=tuple(range(10, 21, 2)),
        report_bound=True,
    ),
}


def spec_metadata(spec: ExperimentSpec, notes: Sequence[str]) -> dict:
    data = asdict(spec)
    data["scenario"] = asdict(spec.scenario)
    data["estimators"] = list(spec.estimators)
    data["taps_list"] = list(spec.taps_list)
    data["lengths_list"] = list(spec.lengths_list)
    data["notes"] = list(notes)
    return data
