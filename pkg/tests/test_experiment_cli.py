import io
import json
import math

import pytest

from molchan import ExperimentSpec, run_experiment
from molchan.cli import main
from molchan.errors import ConfigurationError
from molchan.experiment import CSV_HEADER, PRESETS, build_sequence, format_results, load_spec


def small_spec(**kw):
    base = dict(taps_list=(1, 5), lengths_list=(10, 20), num_trials=300, estimators=("ml", "lsse"))
    base.update(kw)
    return ExperimentSpec(**base)


def test_csv_layout():
    rows = run_experiment(small_spec())
    text = format_results(rows, "csv")
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 1 + 2 * 2 * 2
    k10_l5 = [l for l in lines if l.startswith("ml,10,5,")][0].split(",")
    assert k10_l5[5] == ""  # CR bound undefined there
    assert all(l.endswith(",") for l in lines[1:])  # seconds blank unless timing


def test_json_layout():
    rows = run_experiment(small_spec(taps_list=(1,), lengths_list=(10,)))
    records = json.loads(format_results(rows, "json", timing=True))
    assert {r["estimator"] for r in records} == {"ml", "lsse"}
    assert all(r["seconds"] is not None for r in records)
    assert set(records[0]) == set(CSV_HEADER)


def test_single_trial_has_no_variance():
    rows = run_experiment(small_spec(taps_list=(1,), lengths_list=(10,), num_trials=1))
    assert all(r.normalized_var_db == -math.inf for r in rows)


def test_skip_rows():
    notes = []
    spec = small_spec(taps_list=(3,), lengths_list=(4,), estimators=("ml", "isi-free"))
    rows = run_experiment(spec, notes=notes)
    assert all(r.skipped for r in rows)
    assert any("K=4 < 2L=6" in n for n in notes)
    rows = run_experiment(small_spec(taps_list=(2,), lengths_list=(10,), estimators=("isi-free",)))
    assert "not ISI-free" in rows[0].skip_reason


def test_isi_free_source():
    spec = small_spec(sequence_source="isi-free", taps_list=(2,), lengths_list=(9,),
                      estimators=("ml", "isi-free", "lsse-unconstrained"))
    seq, k0 = build_sequence(spec, 9, 2)
    assert (seq.bits(), k0) == ("100100100", 1)
    rows = run_experiment(spec)
    assert not any(r.skipped for r in rows)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        ExperimentSpec(estimators=("nope",))
    with pytest.raises(ConfigurationError):
        ExperimentSpec(num_trials=0)
    with pytest.raises(ConfigurationError):
        ExperimentSpec(sequence_source="explicit")


def test_config_file(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        "[scenario]\ndistance_halfwidth = 100e-9\n"
        "[sequence]\nsource = isi-free\n"
        "[experiment]\nestimators = ml, lsse\ntaps = 1,2\nlengths = 8:12:2\ntrials = 50\nseed = 9\n"
    )
    spec = load_spec(cfg)
    assert spec.lengths_list == (8, 10, 12)
    assert spec.taps_list == (1, 2)
    assert spec.master_seed == 9
    assert spec.scenario.distance_halfwidth == 100e-9


def test_presets_exist():
    assert {"fig1", "fig2", "fig3-optimal", "fig3-isi-free"} <= set(PRESETS)


def test_determinism_across_threads(monkeypatch, tmp_path):
    spec = small_spec(num_trials=5000, taps_list=(2,), lengths_list=(20,))
    outputs = []
    for threads in ("1", "2"):
        monkeypatch.setenv("MOLCHAN_THREADS", threads)
        outputs.append(format_results(run_experiment(spec), "csv"))
    assert outputs[0] == outputs[1]


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_synth_cir(capsys):
    code, out, _ = run_cli(capsys, "synth-cir", "--L", "2")
    rec = json.loads(out)
    assert code == 0 and len(rec["taps"]) == 2
    assert rec["taps"][0] == pytest.approx(22.48, rel=1e-3)


def test_cli_simulate(capsys):
    code, out, _ = run_cli(capsys, "simulate", "--cir", "9,2", "--seq", "1010", "--seed", "4")
    assert code == 0 and len(out.split()) == 4
    assert run_cli(capsys, "simulate", "--cir", "9,2", "--seq", "1010", "--seed", "4")[1] == out


def test_cli_estimate(capsys, monkeypatch):
    code, out, _ = run_cli(capsys, "estimate", "--seq", "1010", "--obs", "12 3 10 1")
    rec = json.loads(out)
    assert code == 0
    assert rec["c1"] == pytest.approx(9) and rec["cn"] == pytest.approx(2)
    assert rec["active_set"] == "{1,n}"

    monkeypatch.setattr("sys.stdin", io.StringIO("7,2,12,6,3\n"))
    code, out, _ = run_cli(capsys, "estimate", "--seq", "100100", "--estimator", "isi-free")
    rec = json.loads(out)
    assert (rec["c1"], rec["c2"], rec["cn"]) == (9.5, 4.0, 2.5)


def test_cli_crbound(capsys):
    code, out, _ = run_cli(capsys, "crbound", "--cir", "9,2", "--seq", "10" * 50)
    assert code == 0 and abs(float(out) - 0.30) < 1e-12
    code, out, err = run_cli(capsys, "crbound", "--L", "5", "--K", "10")
    assert code == 1 and out == "" and "singular Fisher matrix" in err


def test_cli_design_seq(capsys):
    code, out, _ = run_cli(capsys, "design-seq", "--K", "10", "--L", "1", "--method", "isi-free")
    rec = json.loads(out)
    assert code == 0 and rec["sequence"] == "1010101010" and rec["admissible"]


def test_cli_experiment(capsys, tmp_path):
    out_path = tmp_path / "res.csv"
    code, _, _ = run_cli(capsys, "experiment", "--preset", "fig1", "--trials", "20", "--out", str(out_path))
    assert code == 0
    assert out_path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    meta = json.loads((tmp_path / "res.csv.meta.json").read_text())
    assert meta["num_trials"] == 20


def test_cli_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    code, _, err = run_cli(capsys, "estimate", "--seq", "10", "--obs", "1 2 3")
    assert code == 1 and "error" in err
    code, _, err = run_cli(capsys, "experiment", "--config", "/nonexistent/x.ini")
    assert code == 1
