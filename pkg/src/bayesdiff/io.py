"""Text file formats: datasets, positions, truths, traces and reports.

Every text file starts with a ``# bayesdiff config_hash=<h> seed=<s>`` comment
line.  Floats are written with 17 significant digits so they read back
bit-exactly.  Nothing time-dependent is written, so equal inputs give
byte-identical files.
"""
import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .errors import InputError
from .mcmc import TRACE_SCALARS, Trace
from .model import Dataset, TRANSFORMS
from .simulate import SimTruth

FLOAT_FMT = "%.17g"


def fmt(x):
    return FLOAT_FMT % x


def header_line(config_hash, seed):
    return f"# bayesdiff config_hash={config_hash} seed={seed}\n"


def parse_header(path):
    """(config_hash, seed) from a file's leading comment, or (None, None)."""
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("# bayesdiff"):
        return None, None
    kv = dict(tok.split("=", 1) for tok in first.split()[2:] if "=" in tok)
    return kv.get("config_hash"), kv.get("seed")


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _data_lines(path):
    """Non-comment lines with their 1-based file line numbers."""
    try:
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.startswith("#")]


def _float(tok, path, line, col):
    try:
        v = float(tok)
    except ValueError:
        raise InputError(f"{path}: line {line}, column {col}: cannot parse {tok!r} as a number") from None
    if not math.isfinite(v):
        raise InputError(f"{path}: line {line}, column {col}: non-finite value {tok!r}")
    return v


# ---------------------------------------------------------------------------
# datasets


def positions_path_for(path):
    path = Path(path)
    return path.with_name(path.stem + ".positions.tsv")


def detect_transform(x):
    """logit for proportions in (0, 1), log1p for non-negative counts, identity otherwise."""
    x = np.asarray(x)
    if np.all((x > 0) & (x < 1)):
        return "logit"
    if np.all(x >= 0) and np.all(x == np.round(x)):
        return "log1p"
    return "identity"


def write_dataset(data, path, config_hash="none", seed="none"):
    """Dataset TSV plus its ``.positions.tsv`` sidecar."""
    buf = _io.StringIO()
    buf.write(header_line(config_hash, seed))
    cols = ["sample_id", "treatment"]
    offsets = np.any(data.b != 0)
    if offsets:
        cols.append("offset")
    buf.write("\t".join(cols + list(data.probe_ids)) + "\n")
    for i in range(data.n):
        row = [data.sample_ids[i], str(int(data.t[i]))]
        if offsets:
            row.append(fmt(data.b[i]))
        row += [fmt(v) for v in data.x[i]]
        buf.write("\t".join(row) + "\n")
    _write(path, buf.getvalue())
    pos = _io.StringIO()
    pos.write(header_line(config_hash, seed))
    pos.write("probe_id\tposition\n")
    for pid, v in zip(data.probe_ids, data.positions):
        pos.write(f"{pid}\t{fmt(v)}\n")
    _write(positions_path_for(path), pos.getvalue())


def read_positions(path):
    rows = _data_lines(path)
    if not rows or rows[0][1].split("\t")[:2] != ["probe_id", "position"]:
        raise InputError(f"{path}: expected header 'probe_id<TAB>position'")
    ids, pos = [], []
    for line, text in rows[1:]:
        tok = text.split("\t")
        if len(tok) != 2:
            raise InputError(f"{path}: line {line}: expected 2 columns, found {len(tok)}")
        ids.append(tok[0])
        pos.append(_float(tok[1], path, line, 2))
    return ids, np.asarray(pos)


def read_dataset(path, positions=None, transform="auto"):
    """Parse a dataset TSV; distances come from the positions sidecar."""
    rows = _data_lines(path)
    if len(rows) < 2:
        raise InputError(f"{path}: needs a header and at least one sample row")
    header = rows[0][1].split("\t")
    if header[:2] != ["sample_id", "treatment"]:
        raise InputError(f"{path}: header must start with 'sample_id<TAB>treatment'")
    has_offset = len(header) > 2 and header[2] == "offset"
    first = 3 if has_offset else 2
    probe_ids = header[first:]
    if len(probe_ids) < 2:
        raise InputError(f"{path}: need at least 2 probe columns")
    sample_ids, t, b, x = [], [], [], []
    for line, text in rows[1:]:
        tok = text.split("\t")
        if len(tok) != len(header):
            raise InputError(f"{path}: line {line}: expected {len(header)} columns, found {len(tok)}")
        sample_ids.append(tok[0])
        try:
            t.append(int(tok[1]))
        except ValueError:
            raise InputError(f"{path}: line {line}, column 2: treatment {tok[1]!r} is not an integer") from None
        if has_offset:
            b.append(_float(tok[2], path, line, 3))
        x.append([_float(v, path, line, first + c + 1) for c, v in enumerate(tok[first:])])
    x = np.asarray(x)
    pos_path = Path(positions) if positions is not None else positions_path_for(path)
    if not pos_path.exists():
        raise InputError(f"{path}: positions file {pos_path} not found")
    pids, pos = read_positions(pos_path)
    if pids != probe_ids:
        raise InputError(f"{pos_path}: probe ids do not match the dataset header")
    if transform == "auto":
        transform = detect_transform(x)
    if transform not in TRANSFORMS:
        raise InputError(f"unknown transform {transform!r}")
    return Dataset.from_positions(
        x, np.asarray(t), pos, b=np.asarray(b) if has_offset else None,
        transform_kind=transform, probe_ids=probe_ids, sample_ids=sample_ids,
    )


# ---------------------------------------------------------------------------
# simulation truth


def write_truth(truth, path, probe_ids=None, config_hash="none", seed="none"):
    """Probe-level truth CSV, with ``.samples.csv`` and ``.pool.csv`` siblings."""
    path = Path(path)
    T, p = truth.theta.shape
    probe_ids = probe_ids or [f"probe{j + 1}" for j in range(p)]
    buf = _io.StringIO()
    buf.write(header_line(config_hash, seed))
    buf.write(",".join(["probe_id", "g", "s", "allocation", "gap_to_next"]
                       + [f"theta_{t + 1}" for t in range(T)]) + "\n")
    for j in range(p):
        gap = fmt(truth.raw_gaps[j]) if j < p - 1 else ""
        row = [probe_ids[j], str(truth.g[j]), str(truth.s[j]), str(truth.allocation[j]), gap]
        buf.write(",".join(row + [fmt(v) for v in truth.theta[:, j]]) + "\n")
    _write(path, buf.getvalue())
    sm = header_line(config_hash, seed) + "sample,eps\n"
    sm += "".join(f"{i + 1},{fmt(v)}\n" for i, v in enumerate(truth.eps))
    _write(path.with_suffix(".samples.csv"), sm)
    pl = header_line(config_hash, seed) + "value,weight\n"
    pl += "".join(f"{fmt(v)},{fmt(w)}\n" for v, w in zip(truth.pool_values, truth.pool_weights))
    _write(path.with_suffix(".pool.csv"), pl)


def _csv_rows(path):
    rows = [text for _, text in _data_lines(path)]
    return list(csv.reader(rows))


def read_truth(path):
    path = Path(path)
    rows = _csv_rows(path)
    head, body = rows[0], rows[1:]
    T = len(head) - 5
    g = np.array([int(r[1]) for r in body])
    s = np.array([int(r[2]) for r in body])
    alloc = np.array([int(r[3]) for r in body])
    gaps = np.array([float(r[4]) for r in body[:-1]])
    theta = np.array([[float(v) for v in r[5:5 + T]] for r in body]).T
    eps = np.array([float(r[1]) for r in _csv_rows(path.with_suffix(".samples.csv"))[1:]])
    pool = np.array([[float(v) for v in r] for r in _csv_rows(path.with_suffix(".pool.csv"))[1:]])
    return SimTruth(g=g, s=s, allocation=alloc, theta=theta, eps=eps,
                    pool_values=pool[:, 0].copy(), pool_weights=pool[:, 1].copy(), raw_gaps=gaps)


def read_truth_states(path):
    return read_truth(path).s


# ---------------------------------------------------------------------------
# JSON


def write_json(obj, path):
    _write(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read JSON {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# traces


TRACE_COLUMNS = ("iter",) + TRACE_SCALARS + ("p_eta_pos", "s_hex")


def write_trace(trace, path, config_hash="none", seed="none"):
    """One row per kept iteration; ``s_hex`` packs the s_j == 2 flags."""
    buf = _io.StringIO()
    buf.write(header_line(config_hash, seed))
    buf.write(f"# p={trace.p} T={trace.T}\n")
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    cols = [trace.scalars[k] for k in TRACE_SCALARS]
    lo = trace.scalars["eta_log_odds"]
    for r, it in enumerate(trace.iters):
        vals = [str(it)] + [fmt(c[r]) for c in cols]
        vals.append(fmt(_expit(lo[r])))
        vals.append(trace.s_bits[r].tobytes().hex())
        buf.write(",".join(vals) + "\n")
    _write(path, buf.getvalue())


def _expit(x):
    if math.isnan(x):
        return x
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def read_trace(path, theta_path=None):
    """Rebuild a Trace from its CSV (and optional theta-sum file)."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read trace {path}: {exc}") from exc
    dims = next((ln for ln in lines if ln.startswith("# p=")), None)
    if dims is None:
        raise InputError(f"{path}: missing '# p=.. T=..' line")
    kv = dict(tok.split("=") for tok in dims[2:].split())
    tr = Trace(int(kv["p"]), int(kv["T"]))
    rows = list(csv.reader(ln for ln in lines if ln and not ln.startswith("#")))
    if tuple(rows[0]) != TRACE_COLUMNS:
        raise InputError(f"{path}: unexpected trace columns")
    for r in rows[1:]:
        tr.iters.append(int(r[0]))
        for k, v in zip(TRACE_SCALARS, r[1:]):
            tr.scalars[k].append(float(v))
        tr.s_bits.append(np.frombuffer(bytes.fromhex(r[-1]), dtype=np.uint8).copy())
    if theta_path is not None and Path(theta_path).exists():
        tr.theta_sum, tr.theta_count = read_theta_sums(theta_path)
    return tr


def write_theta_sums(trace, path, probe_ids=None, config_hash="none", seed="none"):
    probe_ids = probe_ids or [f"probe{j + 1}" for j in range(trace.p)]
    buf = _io.StringIO()
    buf.write(header_line(config_hash, seed))
    buf.write(",".join(["probe_id", "n_diff"] + [f"sum_theta_{t + 1}" for t in range(trace.T)]) + "\n")
    for j in range(trace.p):
        row = [probe_ids[j], str(int(trace.theta_count[j]))] + [fmt(v) for v in trace.theta_sum[:, j]]
        buf.write(",".join(row) + "\n")
    _write(path, buf.getvalue())


def read_theta_sums(path):
    rows = _csv_rows(path)[1:]
    count = np.array([int(r[1]) for r in rows], dtype=np.int64)
    sums = np.array([[float(v) for v in r[2:]] for r in rows]).T
    return np.ascontiguousarray(sums), count


# ---------------------------------------------------------------------------
# reports


def write_summary(path, data, omega, detected, contrasts, config_hash="none", seed="none"):
    buf = _io.StringIO()
    buf.write(header_line(config_hash, seed))
    buf.write("probe_id,position,omega,detected,top_pair,difference\n")
    for j in range(data.p):
        c = contrasts.get(j)
        pair = f"{c.pair[0]}-{c.pair[1]}" if c is not None and not c.degenerate else ""
        diff = fmt(c.difference) if c is not None and not c.degenerate else ""
        buf.write(f"{data.probe_ids[j]},{fmt(data.positions[j])},{fmt(omega[j])},{int(detected[j])},{pair},{diff}\n")
    _write(path, buf.getvalue())


def read_summary_omega(path):
    return np.array([float(r[2]) for r in _csv_rows(path)[1:]])


def write_scenario_report(path, rows, config_hash="none", seed="none"):
    """``rows`` of (method, scenario, n_datasets, auc, auc20, auc10)."""
    buf = _io.StringIO()
    buf.write(header_line(config_hash, seed))
    buf.write("# ROC averaging: vertical, 201-point FPR grid\n")
    buf.write("method,scenario,n_datasets,auc,auc20,auc10\n")
    for m, sc, n, a, a20, a10 in rows:
        buf.write(f"{m},{sc},{n},{fmt(a)},{fmt(a20)},{fmt(a10)}\n")
    _write(path, buf.getvalue())


def write_roc_points(path, fpr, tpr, config_hash="none", seed="none"):
    """Whitespace-separated FPR/TPR pairs (gnuplot friendly)."""
    buf = _io.StringIO()
    buf.write(header_line(config_hash, seed))
    buf.write("# fpr tpr\n")
    for a, b in zip(fpr, tpr):
        buf.write(f"{fmt(a)} {fmt(b)}\n")
    _write(path, buf.getvalue())
