"""Batch pipeline: generate -> extract -> fit -> separate -> report.

All stages read and write under one output directory::

    truth.json, main_peaks.csv, traces/sb18_co.csv ...      generate
    profiles/*.csv, cd.csv                                   extract
    fits/sb18.json (+ .txt)                                  fit
    delays_sidebands.csv, delays_midpoints.csv, delays.json  separate
    report.md                                                report
    plots/*.svg                                              (unless --no-plots)
    manifest.json                                            every stage

Exit codes: 0 success, 1 usage, 2 data error, 3 non-convergence.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as pio
from .config import load_config, with_overrides
from .errors import DomainError, GaugeError, NonConvergenceError
from .extract import cd_spectrum, extract_profile, sideband_spectrum
from .fit import WEIGHTINGS, fix_gauge, global_fit, sidecar_calibration
from .model import GEOMETRIES, WAVES
from .separate import separate
from .synth import expected_counts, generate_campaign, main_peak_lines

log = logging.getLogger("pwrabbit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONV = 0, 1, 2, 3


class StageFailure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Run:
    """Resolved configuration plus the manifest being accumulated."""

    def __init__(self, config):
        self.config = config
        self.out = Path(config.out)
        self.plots = config.plots
        self.manifest_path = self.out / "manifest.json"
        self.stages = {}
        if self.manifest_path.is_file():
            try:
                old = pio.read_json(self.manifest_path)
                if old.get("config_sha256") == config.sha256():
                    self.stages = old.get("stages", {})
            except DomainError:
                pass
        self.errors = []

    def record(self, stage, paths, errors=()):
        outputs = {str(Path(p).relative_to(self.out)): pio.sha256_file(p) for p in sorted(set(map(str, paths)))}
        self.stages[stage] = {"outputs": outputs, "errors": list(errors)}
        pio.write_manifest(self.manifest_path, self.config.sha256(), self.config.seed, __version__, self.stages)

    def sidecar(self):
        path = self.out / "truth.json"
        return pio.read_json(path) if path.is_file() else None


def cmd_generate(run):
    cfg = run.config
    truth = cfg.ground_truth()
    traces, sidecar = generate_campaign(truth, cfg.grid(), cfg.noise(), cfg.workers)
    paths = [pio.write_trace(run.out / "traces" / pio.trace_filename(t.sideband_order, t.geometry.value), t)
             for t in traces]
    paths.append(pio.write_json(run.out / "truth.json", sidecar))
    paths.append(pio.write_main_peaks(run.out / "main_peaks.csv", main_peak_lines(truth)))
    run.record("generate", paths)
    print(f"generate: {len(traces)} traces, sidecar with {len(sidecar['sidebands'])} sidebands")
    return EXIT_OK


def _load_traces(run):
    files = sorted((run.out / "traces").glob("*.csv"))
    if not files:
        raise StageFailure(EXIT_DATA, f"no trace files under {run.out / 'traces'}")
    traces, errors = [], []
    for f in files:
        try:
            traces.append(pio.read_trace(f))
        except DomainError as exc:
            errors.append(str(exc))
            log.error("%s", exc)
    return traces, errors


def cmd_extract(run):
    traces, errors = _load_traces(run)
    paths = []
    profiles = {}
    for t in traces:
        try:
            p = extract_profile(t)
        except DomainError as exc:
            errors.append(f"SB{t.sideband_order} {t.geometry.value}: {exc}")
            log.error("%s", errors[-1])
            continue
        profiles[(t.sideband_order, t.geometry.value)] = p
        paths.append(pio.write_profile(run.out / "profiles" / pio.trace_filename(t.sideband_order,
                                                                                  t.geometry.value), p))
        if run.plots:
            stem = f"trace_sb{t.sideband_order}_{t.geometry.value}.svg"
            from .plotting import plot_trace_heatmap
            plot_trace_heatmap(t, run.out / "plots" / stem)
            paths.append(run.out / "plots" / stem)
    if run.plots:
        from .plotting import plot_phase_profiles
        for n in sorted({k[0] for k in profiles}):
            group = [profiles[(n, g.value)] for g in GEOMETRIES if (n, g.value) in profiles]
            path = run.out / "plots" / f"profile_sb{n}.svg"
            plot_phase_profiles(group, path)
            paths.append(path)

    by_geom = {g.value: [t for t in traces if t.geometry is g and (t.sideband_order, g.value) in profiles]
               for g in GEOMETRIES}
    paired = sorted({t.sideband_order for t in by_geom["co"]} & {t.sideband_order for t in by_geom["counter"]})
    if paired:
        try:
            paths += _write_cd(run, {g: [t for t in v if t.sideband_order in paired] for g, v in by_geom.items()})
        except DomainError as exc:
            errors.append(f"CD: {exc}")
            log.error("%s", errors[-1])
    run.record("extract", paths, errors)
    print(f"extract: {len(profiles)} profiles, {len(errors)} errors")
    return EXIT_DATA if errors else EXIT_OK


def _write_cd(run, by_geom):
    e_co, n_co, y_co = sideband_spectrum(by_geom["co"])
    e_ctr, _, y_ctr = sideband_spectrum(by_geom["counter"])
    peaks_path = run.out / "main_peaks.csv"
    peaks = pio.read_main_peaks(peaks_path) if peaks_path.is_file() else []
    peak_y = np.array([p[2] for p in peaks])
    peak_e = np.array([p[1] for p in peaks])
    res = cd_spectrum(np.concatenate([y_co, peak_y]), np.concatenate([y_ctr, peak_y]),
                      np.concatenate([e_co, peak_e]), np.concatenate([e_ctr, peak_e]))
    k = len(y_co)
    rows = [{"order": int(n), "energy_ev": e, "yield_co": a, "yield_counter": b, "norm_co": res.norm_co[i],
             "norm_counter": res.norm_counter[i], "cd": res.cd[i], "flagged": bool(res.flagged[i])}
            for i, (n, e, a, b) in enumerate(zip(n_co, e_co, y_co, y_ctr))]
    paths = [pio.write_cd(run.out / "cd.csv", rows)]
    if run.plots:
        from .plotting import plot_cd
        plot_cd(e_co, res.cd[:k], run.out / "plots" / "cd.svg", orders=n_co)
        paths.append(run.out / "plots" / "cd.svg")
    return paths


def _calibration_for(run, order):
    cfg = run.config
    if cfg.calibration_source == "none":
        return None
    if cfg.calibration_source == "sidecar":
        side = run.sidecar()
        return None if side is None else sidecar_calibration(side, order, cfg.calibration_wave)
    path = Path(cfg.calibration_file)
    if not path.is_absolute():
        path = run.out / path
    table = pio.read_json(path)
    entry = table.get(str(order))
    if entry is None:
        raise GaugeError(f"calibration file {path} has no entry for SB{order}")
    return {g: (v[0], float(v[1])) for g, v in entry.items()}


def cmd_fit(run):
    traces, errors = _load_traces(run)
    opts = run.config.fit_options()
    pairs = {}
    for t in traces:
        pairs.setdefault(t.sideband_order, {})[t.geometry.value] = t
    paths, nonconv = [], []
    for n in sorted(pairs):
        pair = pairs[n]
        missing = [g.value for g in GEOMETRIES if g.value not in pair]
        if missing:
            errors.append(f"SB{n}: unmatched pair, missing {', '.join(missing)} trace; skipped")
            log.error("%s", errors[-1])
            continue
        try:
            result = global_fit(pair["co"], pair["counter"], opts)
        except NonConvergenceError as exc:
            nonconv.append(f"SB{n}: {exc}")
            log.error("%s", nonconv[-1])
            continue
        except DomainError as exc:
            errors.append(f"SB{n}: {exc}")
            log.error("%s", errors[-1])
            continue
        try:
            calib = _calibration_for(run, n)
        except (DomainError, KeyError) as exc:
            errors.append(f"SB{n}: calibration unavailable ({exc})")
            calib = None
        if calib is not None:
            result = fix_gauge(result, calib, source=run.config.calibration_source)
        else:
            log.warning("SB%d: no calibration available, phases written in the free gauge", n)
        path = run.out / "fits" / f"sb{n}.json"
        paths += [pio.write_fit(path, result), path]
        if run.plots:
            from .plotting import plot_fit_residuals
            models = []
            for g in GEOMETRIES:
                t = pair[g.value]
                scale = t.meta.get("intensity_scale") if result.amplitude_units == "model" else 1.0
                models.append(expected_counts(result.model(g), t.theta_edges, t.tau_samples) * scale)
            plot_path = run.out / "plots" / f"fit_residuals_sb{n}.svg"
            plot_fit_residuals([pair["co"], pair["counter"]], models, plot_path)
            paths.append(plot_path)
    run.record("fit", paths, errors + nonconv)
    n_fits = sum(1 for p in paths if str(p).endswith(".json"))
    print(f"fit: {n_fits} fits, "
          f"{len(errors)} data errors, {len(nonconv)} non-converged")
    if nonconv:
        return EXIT_NONCONV
    return EXIT_DATA if errors else EXIT_OK


def cmd_separate(run):
    files = sorted((run.out / "fits").glob("sb*.json"))
    if not files:
        raise StageFailure(EXIT_DATA, f"no fit results under {run.out / 'fits'}")
    fits, errors = [], []
    for f in files:
        try:
            fits.append(pio.read_fit(f))
        except DomainError as exc:
            errors.append(str(exc))
    calibrated = []
    for r in fits:
        if not r.calibrated:
            calib = _calibration_for(run, r.sideband_order)
            if calib is None:
                raise GaugeError(f"SB{r.sideband_order}: no calibration source; the co and counter phase "
                                 "constants are unfixed, so Wigner/CC separation is undefined")
            r = fix_gauge(r, calib, source=run.config.calibration_source)
        calibrated.append(r)
    sidecar = run.sidecar()
    table = separate(calibrated, sidecar, near_threshold_floor_ev=run.config.near_threshold_floor_ev)
    paths = pio.write_delay_table(run.out, table)
    if run.plots:
        from .plotting import plot_separation
        p1, p2 = run.out / "plots" / "separation_phases.svg", run.out / "plots" / "separation_delays.svg"
        plot_separation(table, p1, p2, sidecar)
        paths += [p1, p2]
    run.record("separate", paths, errors + table.warnings)
    verdict = "" if table.scoring is None else (
        f", scoring: {'all within bounds' if table.scoring['all_within_bounds'] else 'OUT OF BOUNDS'}")
    print(f"separate: {len(table.orders)} sidebands, {table.mid_energies.size} midpoints{verdict}")
    return EXIT_DATA if errors else EXIT_OK


def _md_table(cols, rows):
    out = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    out += ["| " + " | ".join(str(r[c]) for c in cols) + " |" for r in rows]
    return out


def cmd_report(run):
    lines = ["# pwrabbit run report", "", f"- version: {__version__}", f"- seed: {run.config.seed}",
             f"- config sha256: `{run.config.sha256()}`", ""]
    fits = sorted((run.out / "fits").glob("sb*.json")) if (run.out / "fits").is_dir() else []
    if fits:
        rows = []
        for f in fits:
            r = pio.read_fit(f)
            rows.append({"SB": r.sideband_order, "E (eV)": f"{r.sideband_energy_ev:.4f}",
                         "red. chi2": f"{r.goodness['reduced_chi2']:.4f}", "converged": r.converged,
                         "calibrated": r.calibrated,
                         **{f"{g} phi_{w}": f"{r.phases[g][w]:+.4f}" for g in ("co", "counter")
                            for w in ("d0", "s")}})
        lines += ["## Global fits", ""] + _md_table(list(rows[0]), rows) + [""]
    cd_path = run.out / "cd.csv"
    if cd_path.is_file():
        _, _, rows = pio.read_table(cd_path)
        rows = [{"SB": r["order"], "E (eV)": f"{float(r['energy_ev']):.4f}", "CD": f"{float(r['cd']):+.4f}"}
                for r in rows]
        lines += ["## Circular dichroism", ""] + _md_table(["SB", "E (eV)", "CD"], rows) + [""]
    delays = run.out / "delays.json"
    if delays.is_file():
        d = pio.read_json(delays)
        rows = []
        for k, e in enumerate(d["mid_energies_ev"]):
            row = {"E mid (eV)": f"{e:.4f}"}
            for w in WAVES:
                row[f"tau_W {w} (as)"] = f"{d['wigner_delay_as'][w][k]:.2f} +/- {d['sigma']['wigner_delay'][w][k]:.2g}"
                row[f"tau_CC {w} (as)"] = f"{d['cc_delay_as'][w][k]:.2f} +/- {d['sigma']['cc_delay'][w][k]:.2g}"
            rows.append(row)
        if rows:
            lines += ["## Wigner and CC delays", ""] + _md_table(list(rows[0]), rows) + [""]
        sc = d.get("scoring")
        if sc:
            lines += ["## Scoring against ground truth", "",
                      f"all columns within oracle bounds: {sc['all_within_bounds']}", ""]
            rows = [{"E mid (eV)": f"{m['energy_ev']:.4f}", "analytic (as)": f"{m['analytic_wigner_delay_as']:.2f}",
                     "bound (as)": f"{m['bound_as']:.3g}",
                     "max error (as)": f"{max(m[f'error_as_{w}'] for w in WAVES):.3g}"} for m in sc["midpoints"]]
            if rows:
                lines += _md_table(list(rows[0]), rows) + [""]
    plots = sorted((run.out / "plots").glob("*.svg")) if (run.out / "plots").is_dir() else []
    if plots:
        lines += ["## Plots", ""] + [f"- [{p.name}](plots/{p.name})" for p in plots] + [""]
    path = pio.atomic_write(run.out / "report.md", "\n".join(lines))
    run.record("report", [path])
    print(f"report: {path}")
    return EXIT_OK


def cmd_run_all(run):
    code = EXIT_OK
    for stage in (cmd_generate, cmd_extract, cmd_fit, cmd_separate, cmd_report):
        code = max(code, stage(run))
    return code


COMMANDS = {"generate": cmd_generate, "extract": cmd_extract, "fit": cmd_fit, "separate": cmd_separate,
            "run-all": cmd_run_all, "report": cmd_report}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML pipeline configuration (built-in defaults if omitted)")
    common.add_argument("--seed", type=int, help="master seed for noise and fit starts")
    common.add_argument("--out", help="output directory")
    common.add_argument("--no-plots", action="store_true", help="skip SVG output")
    common.add_argument("--weighting", choices=WEIGHTINGS)
    common.add_argument("--starts", type=int, help="number of fit starts")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="pwrabbit", description="Partial-wave RABBIT pipeline.")
    parser.add_argument("--version", action="version", version=f"pwrabbit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="pwrabbit: %(levelname)s: %(message)s")
    if args.starts is not None and args.starts < 1:
        print("pwrabbit: error: --starts must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, seed=args.seed, out=args.out, weighting=args.weighting, starts=args.starts,
                             plots=False if args.no_plots else None)
        return COMMANDS[args.command](Run(cfg))
    except StageFailure as exc:
        print(f"pwrabbit: error: {exc}", file=sys.stderr)
        return exc.code
    except NonConvergenceError as exc:
        print(f"pwrabbit: error: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except (DomainError, OSError) as exc:
        print(f"pwrabbit: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
