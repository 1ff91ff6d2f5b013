import json
import os
import subprocess
import sys

import numpy as np
import pytest

from bayesdiff import cli, io
from bayesdiff.errors import InputError
from bayesdiff.mcmc import SamplerConfig
from bayesdiff.model import Dataset
from bayesdiff.simulate import SimSpec, simulate_dataset

FAST = ["--iters", "60", "--burnin", "30", "--thin", "3"]


def _tiny(p=6, seed=0):
    data, truth = simulate_dataset(SimSpec(p=p, T=3, n_per_treatment=2), np.random.default_rng(seed))
    return data, truth


# ------------------------------------------------------------ file formats

def test_dataset_round_trip_bit_exact(tmp_path):
    data, _ = _tiny()
    io.write_dataset(data, tmp_path / "d.tsv", "abc", 4)
    back = io.read_dataset(tmp_path / "d.tsv", transform="identity")
    assert np.array_equal(back.x, data.x)
    assert np.array_equal(back.positions, data.positions)
    # gaps are re-derived from stored positions, so only rounding separates them from the raw gaps
    assert np.allclose(back.e, data.e, rtol=1e-13, atol=0)
    io.write_dataset(back, tmp_path / "d2.tsv", "abc", 4)
    again = io.read_dataset(tmp_path / "d2.tsv", transform="identity")
    assert np.array_equal(again.x, back.x) and np.array_equal(again.e, back.e)
    assert (tmp_path / "d.tsv").read_bytes() == (tmp_path / "d2.tsv").read_bytes()
    assert io.parse_header(tmp_path / "d.tsv") == ("abc", "4")


def test_dataset_offsets_round_trip(tmp_path):
    x = np.arange(12.0).reshape(4, 3) / 7
    data = Dataset.from_positions(x, np.array([1, 1, 2, 2]), np.array([10.0, 15.0, 40.0]),
                                  b=np.array([0.1, -0.2, 0.0, 0.3]))
    io.write_dataset(data, tmp_path / "o.tsv")
    back = io.read_dataset(tmp_path / "o.tsv", transform="identity")
    assert np.array_equal(back.b, data.b)


def test_parse_error_names_line_and_column(tmp_path):
    data, _ = _tiny()
    io.write_dataset(data, tmp_path / "d.tsv")
    lines = (tmp_path / "d.tsv").read_text().splitlines()
    tok = lines[3].split("\t")
    tok[4] = "oops"
    lines[3] = "\t".join(tok)
    (tmp_path / "d.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(InputError, match="line 4, column 5"):
        io.read_dataset(tmp_path / "d.tsv")
    tok[4] = "nan"
    lines[3] = "\t".join(tok)
    (tmp_path / "d.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(InputError, match="non-finite"):
        io.read_dataset(tmp_path / "d.tsv")


def test_missing_positions_and_mismatched_ids(tmp_path):
    data, _ = _tiny()
    io.write_dataset(data, tmp_path / "d.tsv")
    pos = tmp_path / "d.positions.tsv"
    pos.write_text(pos.read_text().replace("probe1\t", "probeX\t"))
    with pytest.raises(InputError, match="probe ids"):
        io.read_dataset(tmp_path / "d.tsv")
    pos.unlink()
    with pytest.raises(InputError, match="positions"):
        io.read_dataset(tmp_path / "d.tsv")


def test_transform_detection():
    assert io.detect_transform(np.array([[0.2, 0.9]])) == "logit"
    assert io.detect_transform(np.array([[0.0, 3.0]])) == "log1p"
    assert io.detect_transform(np.array([[-1.0, 3.5]])) == "identity"


def test_truth_round_trip(tmp_path):
    _, truth = _tiny()
    io.write_truth(truth, tmp_path / "t.truth.csv")
    back = io.read_truth(tmp_path / "t.truth.csv")
    for k in ("g", "s", "allocation", "theta", "eps", "pool_values", "pool_weights", "raw_gaps"):
        assert np.array_equal(getattr(back, k), getattr(truth, k)), k


def test_run_config_json_round_trip():
    cfg = cli.RunConfig(seed=7, chains=3, q0=0.1, sampler=SamplerConfig(n_iter=99, burn_in=9, thin=3),
                        sim=SimSpec(p=12))
    back = cli.RunConfig.from_json(cfg.to_json())
    assert back.to_dict() == cfg.to_dict()
    assert back.hash() == cfg.hash()
    moved = cli.RunConfig.from_json(cfg.to_json())
    moved.out_dir, moved.jobs = "/elsewhere", 8
    assert moved.hash() == cfg.hash()
    moved.seed = 8
    assert moved.hash() != cfg.hash()


def test_config_precedence(tmp_path):
    cfgfile = tmp_path / "c.json"
    base = cli.RunConfig(q0=0.2, chains=2)
    cfgfile.write_text(base.to_json())
    args = cli.build_parser().parse_args(["fit", "--config", str(cfgfile), "--chains", "4", "x.tsv"])
    cfg = cli.resolve_config(args, environ={"BAYESDIFF_Q0": "0.3", "BAYESDIFF_CHAINS": "5"})
    assert cfg.chains == 4  # flag beats environment and file
    assert cfg.q0 == 0.3  # environment beats file
    args = cli.build_parser().parse_args(["fit", "--config", str(cfgfile), "x.tsv"])
    assert cli.resolve_config(args, environ={}).q0 == 0.2


def test_chain_seeds_distinct():
    s = cli.chain_seeds(1, 4)
    assert len(set(s)) == 4 and s == cli.chain_seeds(1, 4)


# ------------------------------------------------------------ end to end

def test_exit_codes(tmp_path):
    assert cli.main(["bogus"]) == 2
    assert cli.main(["fit", "--q0", "1.5", "x.tsv"]) == 2
    assert cli.main(["fit", str(tmp_path / "missing.tsv")]) == 3
    (tmp_path / "bad.tsv").write_text("not a dataset\n")
    assert cli.main(["fit", str(tmp_path / "bad.tsv"), "--out-dir", str(tmp_path / "o")]) == 3
    assert cli.main(["detect", str(tmp_path)]) == 3


def test_numerical_abort_exit_code(tmp_path, monkeypatch):
    data, _ = _tiny()
    io.write_dataset(data, tmp_path / "d.tsv")
    from bayesdiff import mcmc

    def broken(state, data, params, rng, update_tau=True):
        state.eps[:] = np.inf

    monkeypatch.setattr(mcmc, "update_subject_effects", broken)
    assert cli.main(["fit", str(tmp_path / "d.tsv"), "--out-dir", str(tmp_path / "o")] + FAST) == 4


def test_simulate_deterministic(tmp_path):
    args = ["simulate", "--replicates", "2", "--p", "15", "--seed", "3"]
    assert cli.main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    names = sorted(f.name for f in (tmp_path / "a").iterdir())
    assert "rep_002.tsv" in names and "manifest.json" in names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n


def test_simulate_uniform_single(tmp_path):
    out = tmp_path / "u"
    assert cli.main(["simulate", "--replicates", "1", "--p", "8", "--distance-model", "uniform",
                     "--out-dir", str(out)]) == 0
    data = io.read_dataset(out / "rep_001.tsv", transform="identity")
    assert np.allclose(np.diff(data.positions), data.positions[1] - data.positions[0])
    assert data.n == 20 and data.T == 5


def test_minimal_fit_and_detect(tmp_path):
    x = np.array([[0.1, 1.0], [0.2, 1.1], [1.5, 0.9], [1.6, 1.2]])
    data = Dataset.from_positions(x, np.array([1, 1, 2, 2]), np.array([100.0, 130.0]))
    io.write_dataset(data, tmp_path / "d.tsv")
    out = tmp_path / "fit"
    assert cli.main(["fit", str(tmp_path / "d.tsv"), "--out-dir", str(out)] + FAST) == 0
    rows = [r for r in (out / "summary.csv").read_text().splitlines() if not r.startswith("#")]
    assert len(rows) == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["n_draws"] == 10
    assert cli.main(["detect", str(out), "--q0", "0.5"]) == 0


def test_fit_multichain_diagnostics_and_determinism(tmp_path):
    data, _ = _tiny(p=10)
    io.write_dataset(data, tmp_path / "d.tsv")
    for name in ("a", "b"):
        assert cli.main(["fit", str(tmp_path / "d.tsv"), "--chains", "2", "--seed", "5",
                         "--out-dir", str(tmp_path / name)] + FAST) == 0
    for f in ("chain1.trace.csv", "chain2.trace.csv", "chain1.theta.csv", "summary.csv", "diagnostics.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    assert (tmp_path / "a" / "chain1.trace.csv").read_bytes() != (tmp_path / "a" / "chain2.trace.csv").read_bytes()
    h, seed = io.parse_header(tmp_path / "a" / "chain1.trace.csv")
    assert seed == "5" and h == json.loads((tmp_path / "a" / "fit.json").read_text())["config_hash"]


def test_fit_parallel_matches_serial(tmp_path):
    data, _ = _tiny(p=10)
    io.write_dataset(data, tmp_path / "d.tsv")
    base = ["fit", str(tmp_path / "d.tsv"), "--chains", "2"] + FAST
    assert cli.main(base + ["--out-dir", str(tmp_path / "s")]) == 0
    assert cli.main(base + ["--out-dir", str(tmp_path / "p"), "--jobs", "2"]) == 0
    for f in ("chain1.trace.csv", "chain2.trace.csv"):
        assert (tmp_path / "s" / f).read_bytes() == (tmp_path / "p" / f).read_bytes()


def test_resume_continues_identically(tmp_path):
    data, _ = _tiny(p=10)
    io.write_dataset(data, tmp_path / "d.tsv")
    full = tmp_path / "full"
    part = tmp_path / "part"
    common = ["fit", str(tmp_path / "d.tsv"), "--burnin", "30", "--thin", "3"]
    assert cli.main(common + ["--iters", "90", "--out-dir", str(full)]) == 0
    assert cli.main(common + ["--iters", "60", "--out-dir", str(part)]) == 0
    assert cli.main(common + ["--iters", "90", "--out-dir", str(part), "--resume"]) == 0
    a = io.read_trace(full / "chain1.trace.csv")
    b = io.read_trace(part / "chain1.trace.csv")
    assert a.equals(b)


def test_evaluate_pipeline(tmp_path):
    sim, fit, ev = tmp_path / "sim", tmp_path / "fit", tmp_path / "ev"
    assert cli.main(["simulate", "--replicates", "2", "--p", "40", "--out-dir", str(sim)]) == 0
    assert cli.main(["fit", str(sim), "--out-dir", str(fit)] + FAST) == 0
    assert cli.main(["evaluate", str(fit), "--truth-dir", str(sim), "--out-dir", str(ev)]) == 0
    report = [r for r in (ev / "scenario_report.csv").read_text().splitlines() if not r.startswith("#")]
    assert report[0] == "method,scenario,n_datasets,auc,auc20,auc10"
    assert {r.split(",")[0] for r in report[1:]} == {"BayesDiff", "ANOVA", "Kruskal-Wallis"}
    assert (ev / "roc_anova.dat").exists()
    (fit / "rep_002" / "summary.csv").unlink()
    assert cli.main(["evaluate", str(fit), "--truth-dir", str(sim), "--out-dir", str(ev)]) == 3


def test_console_script_runs():
    r = subprocess.run([sys.executable, "-m", "bayesdiff.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
