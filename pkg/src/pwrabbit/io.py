"""File formats: header-commented CSV for numeric products, JSON records, manifest.

Every writer goes through :func:`atomic_write`, so readers never see a
partially written file.  Floats are written with 17 significant digits and
therefore round-trip exactly.
"""
import csv
import hashlib
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DomainError
from .fit import FitResult
from .model import WAVES
from .synth import TraceGrid

TRACE_FORMAT = "pwrabbit-trace/1"


def atomic_write(path, data):
    """Write bytes or text to ``path`` via a temp file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _num(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no inf/nan; keep them readable and reversible
        return v if np.isfinite(v) else repr(v)
    return obj


def dumps_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n"


def write_json(path, obj):
    return atomic_write(path, dumps_json(obj))


def _restore_special(obj):
    if isinstance(obj, dict):
        return {k: _restore_special(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore_special(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def read_json(path):
    try:
        return _restore_special(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"{path}: unreadable JSON ({exc})") from exc


def write_table(path, columns, rows, header=None):
    """Comma-separated table with ``# key: value`` comment lines on top."""
    buf = _io.StringIO()
    for key, value in (header or {}).items():
        buf.write(f"# {key}: {value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_num(row[c]) if not isinstance(row[c], str) else row[c] for c in columns])
    return atomic_write(path, buf.getvalue())


def read_table(path):
    """Return (header dict, column names, list of row dicts as strings)."""
    header, body = {}, []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DomainError(f"{path}: {exc}") from exc
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise DomainError(f"{path}: no table body")
    cols = rows[0]
    return header, cols, [dict(zip(cols, r)) for r in rows[1:]]


def trace_filename(order, geometry):
    return f"sb{int(order)}_{geometry}.csv"


def write_trace(path, trace):
    """Trace grid: JSON-valued header, then one CSV row of counts per theta bin."""
    header = {
        "format": TRACE_FORMAT,
        "geometry": trace.geometry.value,
        "sideband_order": str(int(trace.sideband_order)),
        "sideband_energy_ev": json.dumps(float(trace.sideband_energy_ev)),
        "omega_ev": json.dumps(float(trace.omega_ev)),
        "theta_edges_rad": json.dumps([float(x) for x in trace.theta_edges]),
        "tau_samples_as": json.dumps([float(x) for x in trace.tau_samples]),
        "meta": json.dumps(_jsonable(trace.meta), sort_keys=True),
    }
    buf = _io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}: {v}\n")
    for row in trace.counts:
        buf.write(",".join(_num(x) for x in row) + "\n")
    return atomic_write(path, buf.getvalue())


def read_trace(path):
    """Parse a trace file; any structural problem raises DomainError naming the file."""
    header, lines = {}, []
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise DomainError(f"{path}: {exc}") from exc
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
        elif line.strip():
            lines.append(line)
    try:
        if header.get("format") != TRACE_FORMAT:
            raise ValueError(f"not a {TRACE_FORMAT} file")
        counts = np.array([[float(x) for x in ln.split(",")] for ln in lines], dtype=float)
        return TraceGrid(
            geometry=header["geometry"],
            sideband_order=int(header["sideband_order"]),
            sideband_energy_ev=json.loads(header["sideband_energy_ev"]),
            omega_ev=json.loads(header["omega_ev"]),
            theta_edges=np.array(json.loads(header["theta_edges_rad"]), dtype=float),
            tau_samples=np.array(json.loads(header["tau_samples_as"]), dtype=float),
            counts=counts,
            meta=json.loads(header.get("meta", "{}")),
        )
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise DomainError(f"{path}: malformed trace ({exc})") from exc


def write_main_peaks(path, lines):
    rows = [{"harmonic": q, "energy_ev": e, "yield": y} for q, e, y in lines]
    return write_table(path, ["harmonic", "energy_ev", "yield"], rows,
                       {"content": "geometry-independent harmonic lines (model yield units)"})


def read_main_peaks(path):
    _, _, rows = read_table(path)
    return [(int(r["harmonic"]), float(r["energy_ev"]), float(r["yield"])) for r in rows]


PROFILE_COLUMNS = ["theta_rad", "phase_rad", "sigma_phase_rad", "amplitude_2w", "offset_dc", "flagged", "low_snr"]


def write_profile(path, profile):
    rows = [dict(zip(PROFILE_COLUMNS, vals)) for vals in zip(
        profile.theta_centers, profile.phase, profile.sigma_phase, profile.amplitude_2w, profile.offset_dc,
        profile.flagged, profile.low_snr)]
    header = {"geometry": profile.geometry, "sideband_order": profile.sideband_order, "method": profile.method,
              "phase_convention": "counts = offset + 2*amp*cos(2*omega*tau + phase)"}
    return write_table(path, PROFILE_COLUMNS, rows, header)


def write_cd(path, rows):
    cols = ["order", "energy_ev", "yield_co", "yield_counter", "norm_co", "norm_counter", "cd", "flagged"]
    return write_table(path, cols, rows, {"cd": "(Y_co - Y_counter) / (Y_co + Y_counter), each normalised "
                                                "to its own spectrum total including main peaks"})


def write_fit(json_path, result):
    write_json(json_path, result.to_dict())
    return atomic_write(Path(json_path).with_suffix(".txt"), fit_summary(result))


def read_fit(path):
    d = read_json(path)
    if d.get("format") != "pwrabbit-fit/1":
        raise DomainError(f"{path}: not a fit record")
    return FitResult.from_dict(d)


def fit_summary(result):
    lines = [f"SB{result.sideband_order}  E = {result.sideband_energy_ev:.6f} eV  omega = {result.omega_ev:.6f} eV",
             f"converged: {result.converged}  starts: {result.n_starts_used}  "
             f"reduced chi2: {result.goodness['reduced_chi2']:.6g}  weighting: {result.goodness['weighting']}",
             f"amplitude units: {result.amplitude_units}"]
    for g in ("co", "counter"):
        gauge = result.gauge[g]
        ref = f"{gauge.get('reference_wave')}={gauge.get('reference_phase')}" if gauge.get("calibrated") else "free"
        lines.append(f"[{g}] gauge: {ref}")
        for w in WAVES:
            ci_phi = result.ci95.get(f"{g}.phi_{w}")
            ci_txt = "(gauge reference)" if ci_phi is None else f"+/- {ci_phi:.3g}"
            lines.append(f"  {w:>2}  A = {result.amplitudes[g][w]:.10g} +/- {result.ci95[f'{g}.A_{w}']:.3g}  "
                         f"phi = {result.phases[g][w]:+.10f} {ci_txt}"
                         f"{'' if result.identifiable[g][w] else '  (not identifiable)'}")
    lines += [f"warning: {w}" for w in result.warnings]
    return "\n".join(lines) + "\n"


def write_delay_table(out_dir, table):
    """delays_sidebands.csv, delays_midpoints.csv and delays.json."""
    out_dir = Path(out_dir)
    sb_rows = table.sideband_rows()
    mid_rows = table.midpoint_rows()
    header = {"omega_ev": _num(table.omega), "pathway": "d2=absorption, d0=emission, s=emission",
              "units": "phases rad, delays as"}
    paths = []
    if sb_rows:
        paths.append(write_table(out_dir / "delays_sidebands.csv", list(sb_rows[0]), sb_rows, header))
    mid_cols = list(mid_rows[0]) if mid_rows else ["energy_ev"]
    paths.append(write_table(out_dir / "delays_midpoints.csv", mid_cols, mid_rows, header))
    paths.append(write_json(out_dir / "delays.json", table.to_dict()))
    return paths


def write_manifest(path, config_sha, seed, version, stages):
    """Run manifest: config hash, seed, version and every output with its sha256."""
    return write_json(path, {"format": "pwrabbit-manifest/1", "config_sha256": config_sha, "seed": seed,
                             "version": version, "stages": stages})
