"""Command-line interface: simulate -> fit -> detect -> evaluate.

Option precedence is: command-line flag, then ``BAYESDIFF_<NAME>``
environment variable (e.g. ``BAYESDIFF_SEED``, ``BAYESDIFF_ITERS``), then the
``--config`` JSON file, then built-in defaults.

Exit codes: 0 success, 2 usage error, 3 input error, 4 numerical abort.
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import hashlib
import json
import os
from pathlib import Path
import sys

import numpy as np

from . import io
from .baselines import probe_pvalues, roc_and_auc, vertical_average
from .errors import BayesDiffError, NumericalError
from .inference import (
    bayes_fdr_select,
    logbf_lower_bound,
    pairwise_effect_summary,
    posterior_diff_prob,
    split_rhat,
)
from .mcmc import Sampler, SamplerConfig, Trace, TRACE_SCALARS
from .simulate import SCENARIOS, SimSpec, reference_params, replicate_rngs, simulate_dataset

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3, 4
ENV_PREFIX = "BAYESDIFF_"


@dataclass
class RunConfig:
    command: str = "fit"
    inputs: list = field(default_factory=list)
    out_dir: str = "bayesdiff_out"
    seed: int = 0
    chains: int = 1
    jobs: int = 1
    q0: float = 0.05
    transform: str = "auto"
    min_probes: int = 2
    resume: bool = False
    checkpoint_every: int = 1000
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    sim: SimSpec = None
    scenario: str = "low_noise_high_corr"
    replicates: int = 20
    truth_dir: str = None

    def validate(self):
        if not 0.0 < self.q0 < 1.0:
            raise BayesDiffError(f"q0 must lie in (0, 1), got {self.q0}")
        if self.chains < 1 or self.jobs < 1:
            raise BayesDiffError("chains and jobs must be >= 1")
        self.sampler.validate()
        return self

    def to_dict(self):
        d = asdict(self)
        d["sampler"] = self.sampler.to_dict()
        d["sim"] = None if self.sim is None else self.sim.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "sampler" in d:
            d["sampler"] = SamplerConfig.from_dict(d["sampler"])
        if d.get("sim") is not None:
            d["sim"] = SimSpec.from_dict(d["sim"])
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def hash(self):
        """Digest of everything that affects results (paths and worker count excluded)."""
        d = self.to_dict()
        for k in ("inputs", "out_dir", "jobs", "resume", "truth_dir", "checkpoint_every"):
            d.pop(k)
        d["sampler"].pop("backend", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON RunConfig file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--jobs", type=int)

    fitopts = argparse.ArgumentParser(add_help=False)
    fitopts.add_argument("--chains", type=int)
    fitopts.add_argument("--iters", type=int)
    fitopts.add_argument("--burnin", type=int)
    fitopts.add_argument("--thin", type=int)
    fitopts.add_argument("--q0", type=float)
    fitopts.add_argument("--transform", choices=("auto", "identity", "logit", "log1p"))
    fitopts.add_argument("--min-probes", type=int)
    fitopts.add_argument("--resume", action="store_true", default=None)

    ap = argparse.ArgumentParser(prog="bayesdiff", description="Differential probe detection with a Sticky PDP mixture.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", parents=[common], help="generate replicate datasets")
    sp.add_argument("--scenario", choices=sorted(SCENARIOS))
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--p", type=int)
    sp.add_argument("--T", type=int)
    sp.add_argument("--per-treatment", type=int)
    sp.add_argument("--distance-model", choices=("lognormal_mimic", "uniform", "from_file"))
    sp.add_argument("--distances", help="file with one gap per line (from_file model)")
    sp.add_argument("--transform", choices=("identity", "logit", "log1p"))

    fp = sub.add_parser("fit", parents=[common, fitopts], help="run MCMC on datasets")
    fp.add_argument("inputs", nargs="*", help="dataset TSV files or directories of per-gene TSVs")

    dp = sub.add_parser("detect", parents=[common], help="Bayesian FDR detection from fitted traces")
    dp.add_argument("inputs", nargs="*", help="fit output directories")
    dp.add_argument("--q0", type=float)

    ep = sub.add_parser("evaluate", parents=[common], help="ROC/AUC of BayesDiff and baselines against truth")
    ep.add_argument("inputs", nargs="*", help="fit output directory")
    ep.add_argument("--truth-dir", help="directory written by 'simulate'")
    ep.add_argument("--scenario")
    return ap


_ENV_KEYS = {
    "seed": int, "out_dir": str, "jobs": int, "chains": int, "iters": int, "burnin": int,
    "thin": int, "q0": float, "transform": str, "min_probes": int,
}


def resolve_config(args, environ=None):
    environ = os.environ if environ is None else environ
    if getattr(args, "config", None):
        try:
            cfg = RunConfig.from_json(Path(args.config).read_text())
        except (OSError, ValueError, TypeError) as exc:
            raise BayesDiffError(f"cannot load config {args.config}: {exc}") from exc
    else:
        cfg = RunConfig()
    cfg.command = args.command
    vals = {}
    for key, typ in _ENV_KEYS.items():
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            vals[key] = typ(env)
        cli = getattr(args, key, None)
        if cli is not None:
            vals[key] = cli
    for key in ("seed", "out_dir", "jobs", "chains", "q0", "transform", "min_probes"):
        if key in vals:
            setattr(cfg, key, vals[key])
    s = cfg.sampler.to_dict()
    for key, name in (("iters", "n_iter"), ("burnin", "burn_in"), ("thin", "thin")):
        if key in vals:
            s[name] = vals[key]
    if "iters" in vals and "burnin" not in vals and s["burn_in"] >= s["n_iter"]:
        s["burn_in"] = s["n_iter"] // 2
    cfg.sampler = SamplerConfig.from_dict(s)
    if getattr(args, "resume", None):
        cfg.resume = True
    if getattr(args, "inputs", None):
        cfg.inputs = list(args.inputs)
    if getattr(args, "truth_dir", None):
        cfg.truth_dir = args.truth_dir
    if args.command == "simulate":
        _resolve_sim(cfg, args)
    if getattr(args, "scenario", None):
        cfg.scenario = args.scenario
    return cfg.validate()


def _resolve_sim(cfg, args):
    if args.scenario:
        cfg.scenario = args.scenario
    if args.replicates is not None:
        cfg.replicates = args.replicates
    base = cfg.sim.to_dict() if cfg.sim is not None else SimSpec.scenario(cfg.scenario).to_dict()
    if args.scenario:
        base["params"] = reference_params(*SCENARIOS[args.scenario]).to_dict()
    for key, name in (("p", "p"), ("T", "T"), ("per_treatment", "n_per_treatment"),
                      ("distance_model", "distance_model"), ("transform", "transform")):
        v = getattr(args, key, None)
        if v is not None:
            base[name] = v
    if args.distances:
        base["distances"] = np.loadtxt(args.distances, ndmin=1).tolist()
    cfg.sim = SimSpec.from_dict(base)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg):
    out = Path(cfg.out_dir)
    h = cfg.hash()
    rngs = replicate_rngs(cfg.seed, cfg.replicates)
    files = []
    for r, rng in enumerate(rngs, start=1):
        data, truth = simulate_dataset(cfg.sim, rng)
        stem = f"rep_{r:03d}"
        io.write_dataset(data, out / f"{stem}.tsv", h, cfg.seed)
        io.write_truth(truth, out / f"{stem}.truth.csv", data.probe_ids, h, cfg.seed)
        files.append(stem)
    io.write_json(cfg.sim.to_dict(), out / "simspec.json")
    io.write_json({"command": "simulate", "config_hash": h, "seed": cfg.seed, "scenario": cfg.scenario,
                   "replicates": files, "seed_rule": "numpy SeedSequence(seed).spawn(replicates)"},
                  out / "manifest.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


def dataset_files(inputs):
    files = []
    for inp in inputs:
        p = Path(inp)
        if p.is_dir():
            files += sorted(f for f in p.glob("*.tsv") if not f.name.endswith(".positions.tsv"))
        elif p.exists():
            files.append(p)
        else:
            raise BayesDiffError(f"input {inp} does not exist")
    if not files:
        raise BayesDiffError("no dataset files given")
    return files


def chain_seeds(seed, chains):
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(chains)]


def _fit_job(job):
    path, out_dir, cfg_json, chain, seed = job
    cfg = RunConfig.from_json(cfg_json)
    data = io.read_dataset(path, transform=cfg.transform)
    sc = SamplerConfig.from_dict({**cfg.sampler.to_dict(), "seed": seed})
    out_dir = Path(out_dir)
    ckpt = out_dir / f"chain{chain}.ckpt"
    if cfg.resume and ckpt.exists():
        sm = Sampler.from_checkpoint(ckpt.read_bytes(), data, n_iter=sc.n_iter)
    else:
        sm = Sampler(data, sc)
    out_dir.mkdir(parents=True, exist_ok=True)
    every = max(int(cfg.checkpoint_every), 1)
    while sm.iteration < sc.n_iter:
        sm.run(until=min(sc.n_iter, (sm.iteration // every + 1) * every))
        ckpt.write_bytes(sm.checkpoint())
    h = cfg.hash()
    io.write_trace(sm.trace, out_dir / f"chain{chain}.trace.csv", h, cfg.seed)
    io.write_theta_sums(sm.trace, out_dir / f"chain{chain}.theta.csv", data.probe_ids, h, cfg.seed)
    return str(out_dir), chain


def _out_dir_for(cfg, path, n_files):
    return Path(cfg.out_dir) if n_files == 1 else Path(cfg.out_dir) / Path(path).stem


def cmd_fit(cfg):
    files = dataset_files(cfg.inputs)
    keep = []
    for f in files:
        data = io.read_dataset(f, transform=cfg.transform)
        if data.p >= cfg.min_probes:
            keep.append(f)
    jobs = []
    seeds = chain_seeds(cfg.seed, cfg.chains)
    cfg_json = cfg.to_json()
    for f in keep:
        od = _out_dir_for(cfg, f, len(files))
        for c in range(cfg.chains):
            jobs.append((str(f), str(od), cfg_json, c + 1, seeds[c]))
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            list(ex.map(_fit_job, jobs))
    else:
        for j in jobs:
            _fit_job(j)
    for f in keep:
        od = _out_dir_for(cfg, f, len(files))
        data = io.read_dataset(f, transform=cfg.transform)
        io.write_json({"dataset_path": str(Path(f).resolve()), "transform": data.transform_kind,
                       "chains": cfg.chains, "config_hash": cfg.hash(), "seed": cfg.seed}, od / "fit.json")
        _detect_dir(cfg, od, data)
    return EXIT_OK


# ---------------------------------------------------------------------------
# detect


def merge_traces(traces):
    out = Trace(traces[0].p, traces[0].T)
    for tr in traces:
        out.iters += tr.iters
        for k in TRACE_SCALARS:
            out.scalars[k] += tr.scalars[k]
        out.s_bits += tr.s_bits
        out.theta_sum = out.theta_sum + tr.theta_sum
        out.theta_count = out.theta_count + tr.theta_count
    return out


def load_chains(fit_dir):
    fit_dir = Path(fit_dir)
    paths = sorted(fit_dir.glob("chain*.trace.csv"), key=lambda p: int(p.name[5:].split(".")[0]))
    if not paths:
        raise BayesDiffError(f"no traces found in {fit_dir}")
    return [io.read_trace(p, p.with_name(p.name.replace(".trace.csv", ".theta.csv"))) for p in paths]


def _detect_dir(cfg, fit_dir, data):
    fit_dir = Path(fit_dir)
    chains = load_chains(fit_dir)
    tr = merge_traces(chains)
    omega = posterior_diff_prob(tr)
    sel = bayes_fdr_select(omega, cfg.q0)
    lo = tr.column("eta_log_odds")
    bound = logbf_lower_bound(tr, "eta_positive" if lo.mean() >= 0 else "eta_zero")
    pairs = pairwise_effect_summary(tr.theta_sum, tr.theta_count, sel.selected)
    h = cfg.hash()
    io.write_summary(fit_dir / "summary.csv", data, omega, sel.selected, pairs, h, cfg.seed)
    manifest = {
        "config_hash": h,
        "seed": cfg.seed,
        "q0": cfg.q0,
        "b_star": sel.n_selected,
        "estimated_fdr": sel.estimated_fdr,
        "logbf_bound": {"favored": bound.favored, "value": bound.value, "ci95": list(bound.ci),
                        "interval_method": bound.interval_method, "n_clipped": bound.n_clipped},
        "n_draws": len(tr),
        "chains": len(chains),
    }
    if len(chains) > 1:
        diag = {
            "sigma2": split_rhat([c.column("sigma2") for c in chains]),
            "eta_positive": split_rhat([(c.column("eta") > 0).astype(float) for c in chains]),
            "loglik": split_rhat([c.column("loglik") for c in chains]),
        }
        manifest["rhat"] = diag
        text = io.header_line(h, cfg.seed) + "quantity,split_rhat\n"
        text += "".join(f"{k},{io.fmt(v)}\n" for k, v in diag.items())
        (fit_dir / "diagnostics.csv").write_text(text)
    io.write_json(manifest, fit_dir / "manifest.json")
    return manifest


def cmd_detect(cfg):
    if not cfg.inputs:
        raise BayesDiffError("detect needs at least one fit directory")
    for d in cfg.inputs:
        d = Path(d)
        if not (d / "fit.json").exists():
            raise BayesDiffError(f"{d} is not a fit output directory (missing fit.json)")
        meta = io.read_json(d / "fit.json")
        src = Path(meta.get("dataset_path", ""))
        if not src.exists():
            raise BayesDiffError(f"dataset {src} recorded in {d / 'fit.json'} not found")
        _detect_dir(cfg, d, io.read_dataset(src, transform=meta.get("transform", "auto")))
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(cfg):
    if not cfg.truth_dir or not cfg.inputs:
        raise BayesDiffError("evaluate needs a fit directory and --truth-dir")
    truth_dir = Path(cfg.truth_dir)
    fit_root = Path(cfg.inputs[0])
    reps = sorted(p.stem for p in truth_dir.glob("rep_*.tsv") if not p.name.endswith(".positions.tsv"))
    if not reps:
        raise BayesDiffError(f"no replicate datasets in {truth_dir}")
    rocs = {"BayesDiff": [], "ANOVA": [], "Kruskal-Wallis": []}
    for stem in reps:
        fit_dir = fit_root / stem
        summ = fit_dir / "summary.csv"
        if not summ.exists():
            raise BayesDiffError(f"missing fit summary {summ} for replicate {stem}")
        truth = io.read_truth(truth_dir / f"{stem}.truth.csv")
        data = io.read_dataset(truth_dir / f"{stem}.tsv", transform="identity")
        omega = io.read_summary_omega(summ)
        if omega.size != truth.s.size or data.p != truth.s.size:
            raise BayesDiffError(f"replicate {stem}: fit, dataset and truth sizes disagree")
        rocs["BayesDiff"].append(roc_and_auc(omega, truth.s))
        rocs["ANOVA"].append(roc_and_auc(1.0 - probe_pvalues(data.z, data.t, "anova"), truth.s))
        rocs["Kruskal-Wallis"].append(roc_and_auc(1.0 - probe_pvalues(data.z, data.t, "kruskal"), truth.s))
    h = cfg.hash()
    out = Path(cfg.out_dir)
    rows = []
    for m, rs in rocs.items():
        rows.append((m, cfg.scenario, len(rs), np.mean([r.auc for r in rs]),
                     np.mean([r.auc20 for r in rs]), np.mean([r.auc10 for r in rs])))
        grid, tpr = vertical_average(rs)
        io.write_roc_points(out / f"roc_{m.replace('-', '_').lower()}.dat", grid, tpr, h, cfg.seed)
    io.write_scenario_report(out / "scenario_report.csv", rows, h, cfg.seed)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "detect": cmd_detect, "evaluate": cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = resolve_config(args)
    except (BayesDiffError, ValueError) as exc:
        print(f"bayesdiff: invalid options: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[cfg.command](cfg)
    except NumericalError as exc:
        print(f"bayesdiff: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (BayesDiffError, OSError, ValueError) as exc:
        print(f"bayesdiff: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
