"""Command-line front end: ``molchan <subcommand> ...``."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bounds import cr_bound, prior_mean_cir
from .channel import (
    Cir,
    ObservationVector,
    PhysicalScenario,
    TrainingSequence,
    draw_distance,
    draw_observations,
    synthesize_cir,
    trial_rng,
)
from .design import DEFAULT_EPSILON, design_objective, isi_free_sequence, search_optimal_sequence
from .errors import MolchanError
from .estimators import estimate_isifree, estimate_lsse, estimate_ml
from .experiment import (
    PRESET_SEQUENCES,
    PRESETS,
    emit_results,
    format_results,
    load_spec,
    scenario_for_taps,
    spec_from_config,
    spec_metadata,
    run_experiment,
)

log = logging.getLogger("molchan")


def _load_scenario(path: Optional[str]) -> PhysicalScenario:
    if path is None:
        return PhysicalScenario()
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path, encoding="utf-8") as fh:
        cfg.read_file(fh)
    return spec_from_config(cfg).scenario


def _sequence(args) -> TrainingSequence:
    text = args.seq
    if text in PRESET_SEQUENCES:
        text = PRESET_SEQUENCES[text]
    seq = TrainingSequence.from_bits(text)
    if args.K is not None:
        reps = -(-args.K // seq.length)
        seq = TrainingSequence(seq.repeated(reps).symbols[: args.K])
    return seq


def _cir_for(args, L: int) -> Cir:
    if args.cir:
        vec = [float(x) for x in args.cir.replace(",", " ").split()]
        return Cir.from_vector(vec)
    sc = scenario_for_taps(_load_scenario(args.config), L)
    if getattr(args, "distance", None):
        return synthesize_cir(sc, args.distance)
    return synthesize_cir(sc)


def cmd_synth_cir(args) -> int:
    sc = scenario_for_taps(_load_scenario(args.config), args.L)
    if args.symbol_duration:
        sc = sc.replace(symbol_duration=args.symbol_duration)
    cir = synthesize_cir(sc, args.distance)
    print(json.dumps({
        "symbol_duration": sc.symbol_duration,
        "num_taps": sc.num_taps,
        "taps": cir.taps.tolist(),
        "noise_mean": cir.noise_mean,
    }))
    return 0


def cmd_simulate(args) -> int:
    seq = _sequence(args)
    rng = trial_rng(args.seed, args.trial)
    if args.cir:
        cir = _cir_for(args, args.L)
    else:
        sc = scenario_for_taps(_load_scenario(args.config), args.L)
        cir = synthesize_cir(sc, draw_distance(sc, rng))
    print(" ".join(str(int(x)) for x in draw_observations(cir, seq, rng).counts))
    return 0


def cmd_estimate(args) -> int:
    seq = _sequence(args)
    raw = args.obs if args.obs is not None else sys.stdin.read()
    counts = [int(float(x)) for x in raw.replace(",", " ").split()]
    obs = ObservationVector(np.array(counts, dtype=np.int64))
    if args.estimator == "ml":
        rep = estimate_ml(seq, obs)
    elif args.estimator == "lsse":
        rep = estimate_lsse(seq, obs)
    else:
        rep = estimate_isifree(seq, obs, args.k0)
    print(json.dumps(rep.to_record()))
    return 0


def cmd_crbound(args) -> int:
    seq = _sequence(args)
    cir = _cir_for(args, args.L)
    value = cr_bound(cir, seq)
    print(repr(value))
    return 0


def cmd_design_seq(args) -> int:
    sc = scenario_for_taps(_load_scenario(args.config), args.L)
    if args.halfwidth is not None:
        sc = sc.replace(distance_halfwidth=args.halfwidth)
    mu = prior_mean_cir(sc, args.seed)
    if args.method == "isi-free":
        seq = isi_free_sequence(args.K, args.L, args.k0)
        value = design_objective(seq, mu, args.epsilon)
    else:
        seq, value = search_optimal_sequence(args.K, args.L, mu, args.epsilon)
    print(json.dumps({
        "sequence": seq.bits(),
        "objective": value.objective,
        "min_abs_eigenvalue": value.min_abs_eigenvalue,
        "admissible": value.admissible,
    }))
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        spec = load_spec(args.config)
    else:
        spec = PRESETS[args.preset]
    if args.seed is not None:
        spec = replace(spec, master_seed=args.seed)
    if args.trials is not None:
        spec = replace(spec, num_trials=args.trials)
    notes: list[str] = []
    rows = run_experiment(spec, notes=notes)
    if args.out:
        emit_results(rows, args.format, args.out, timing=args.timing)
        meta = Path(str(args.out) + ".meta.json")
        meta.write_text(json.dumps(spec_metadata(spec, notes), indent=1, sort_keys=True) + "\n")
    else:
        sys.stdout.write(format_results(rows, args.format, timing=args.timing))
    for note in notes:
        log.info("%s", note)
    return 0


def _add_seq_args(p):
    p.add_argument("--seq", default="fig1-base",
                   help="training bits such as 1100100101, or a preset name (fig1-base)")
    p.add_argument("--K", type=int, help="tile the sequence to this length")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molchan", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-cir", help="print the CIR synthesized from the diffusion model")
    p.add_argument("--config")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--symbol-duration", type=float)
    p.add_argument("--distance", type=float)
    p.set_defaults(func=cmd_synth_cir)

    p = sub.add_parser("simulate", help="print one simulated observation vector")
    p.add_argument("--config")
    p.add_argument("--L", type=int, default=1)
    p.add_argument("--cir", help="explicit CIR 'c1,...,cL,cn' (overrides the scenario)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--trial", type=int, default=0)
    _add_seq_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the CIR from counts on stdin or --obs")
    p.add_argument("--estimator", choices=("ml", "lsse", "isi-free"), default="ml")
    p.add_argument("--obs", help="counts r[L..K]; read from stdin when omitted")
    p.add_argument("--k0", type=int, default=1)
    _add_seq_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("crbound", help="print the CR lower bound for a CIR and sequence")
    p.add_argument("--config")
    p.add_argument("--L", type=int, default=1)
    p.add_argument("--cir", help="explicit CIR 'c1,...,cL,cn' (overrides the scenario)")
    p.add_argument("--distance", type=float)
    _add_seq_args(p)
    p.set_defaults(func=cmd_crbound)

    p = sub.add_parser("design-seq", help="optimal search or ISI-free construction")
    p.add_argument("--config")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--method", choices=("optimal", "isi-free"), default="optimal")
    p.add_argument("--k0", type=int, default=1)
    p.add_argument("--halfwidth", type=float, default=100e-9,
                   help="distance halfwidth of the CIR prior in metres (default 100e-9)")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_design_seq)

    p = sub.add_parser("experiment", help="run a Monte Carlo campaign")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.add_argument("--timing", action="store_true", help="fill the seconds column")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except MolchanError as exc:
        print(f"molchan {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"molchan {args.command}: I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
