"""Command-line front end: scenario runs, sweeps, calibration, stream analysis.

Exit codes: 0 success, 2 configuration/usage error, 3 simulation budget or
calibration non-convergence.  Every run writes a ``manifest.txt`` with the
resolved-config hash, the seed and artifact checksums; re-running with the
same config and seed reproduces each CSV byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis_io import (
    Channel,
    export_histogram_csv,
    export_table_csv,
    import_timetags,
    start_stop_histogram,
    windowed_coincidences,
)
from .calibration import Target, run_calibration
from .config import (
    RunConfig,
    SCHEMA,
    UNIT_TABLES,
    build_experiment,
    canonical_text,
    config_hash,
    default_config,
    load_config,
    schema_help,
)
from .errors import (
    CalibrationError,
    ConfigError,
    DlczError,
    MalformedLineError,
    RegionError,
    SimulationBudgetError,
)
from .fitting import fit_alpha_proportionality, gaussian_peak_fit, standard_decay_fit
from .photon_stats import snr_at_rephasing
from .sequencer import EfficiencyCurve, EtaTable

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3


# ---------------------------------------------------------------------------
# Curve execution (optionally across processes)
# ---------------------------------------------------------------------------

def _point_task(args):
    exp, label, table, t, index, target = args
    return index, exp.simulate_point(t, table, label, index, target_heralds=target)


def run_curve(exp, label, times, target, table_for, threads=1) -> EfficiencyCurve:
    """Simulate one curve; per-point seeds keep any thread count bit-identical."""
    times = np.asarray(times, dtype=float)
    tasks = [(exp, label, table_for(t), t, i, target) for i, t in enumerate(times)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(_point_task, tasks))
    else:
        results = dict(map(_point_task, tasks))
    stats = [results[i] for i in range(len(times))]
    eta = np.array([s.eta_ret if s.eta_ret_defined else math.nan for s in stats])
    err = np.array([s.eta_ret_err if s.eta_ret_defined else math.nan for s in stats])
    return EfficiencyCurve(
        times=times, eta=eta, err=err,
        n_w=np.array([s.n_w for s in stats]),
        n_wr=np.array([s.n_wr for s in stats]),
        trials=np.array([s.trials for s in stats]),
        stats=stats)


# ---------------------------------------------------------------------------
# Scenario runners
# ---------------------------------------------------------------------------

def _write_curve(path, curve: EfficiencyCurve):
    export_table_csv(path, EfficiencyCurve.CSV_COLUMNS, curve.rows())


def run_standard_scenario(cfg: RunConfig, outdir: Path, threads: int):
    exp = build_experiment(cfg, gradient=False)
    times = cfg.storage_times()
    exp._check_interrogation_fits(times.max())
    table = EtaTable(times, exp.physics_eta(times))
    curve = run_curve(exp, "standard", times, cfg.run_target_write_clicks,
                      lambda t: table, threads)
    _write_curve(outdir / "eta_vs_time.csv", curve)
    q = exp.noise.read_noise_prob(exp.expected_pw())
    omega0 = max(cfg.classes_beat_frequencies) or 2e5
    fit = standard_decay_fit(curve.times, curve.eta, sigma=curve.err, floor=q,
                             p0_omega=omega0)
    export_table_csv(outdir / "summary.csv",
                     ("decay_tau_s", "decay_tau_err_s", "beat_weight",
                      "beat_frequency_rad_s", "amplitude"),
                     [(fit.tau, fit.tau_err, fit.beat_weight,
                       fit.beat_frequency, fit.amplitude)])
    return {"eta_vs_time.csv": None, "summary.csv": None}, {
        "decay_tau": (fit.tau, fit.tau_err)}


def run_rephase_scenario(cfg: RunConfig, outdir: Path, threads: int):
    exp = build_experiment(cfg, gradient=True)
    echo = exp.rephasing_time()
    times = cfg.rephase_scan(echo)
    table = exp.eta_table(times.min(), times.max())
    curve = run_curve(exp, "rephase", times, cfg.run_target_write_clicks,
                      lambda t: table, threads)
    _write_curve(outdir / "eta_vs_time.csv", curve)
    bg_region = (cfg.scan_background_start, cfg.scan_background_stop)
    pk_region = (echo - cfg.scan_peak_window / 2, echo + cfg.scan_peak_window / 2)
    try:
        res = snr_at_rephasing(curve.times, curve.eta, bg_region, pk_region,
                               errs=curve.err)
        fit = res.peak_fit
        snr, background, peak_value = res.snr, res.background_mean, res.peak_value
    except RegionError:
        # not enough background counts at this statistics level
        fit = gaussian_peak_fit(curve.times, curve.eta, sigma=curve.err)
        snr, background, peak_value = math.nan, math.nan, fit.peak_value
    export_table_csv(outdir / "summary.csv",
                     ("echo_time_s", "peak_center_s", "peak_center_err_s",
                      "peak_fwhm_s", "peak_fwhm_err_s", "snr",
                      "background_mean", "peak_value"),
                     [(echo, fit.center, fit.center_err, fit.fwhm,
                       fit.fwhm_err, snr, background, peak_value)])
    return {"eta_vs_time.csv": None, "summary.csv": None}, {
        "snr": (snr, math.nan),
        "peak_center": (fit.center, fit.center_err),
        "peak_fwhm": (fit.fwhm, fit.fwhm_err)}


def run_multiplex_scenario(cfg: RunConfig, outdir: Path, threads: int):
    exp = build_experiment(cfg, gradient=True)
    peaks = [exp.rephasing_time(creation_time=off)
             for off in cfg.multiplex_write_offsets]
    scan = cfg.multiplex_scan(peaks)
    plan = cfg.multiplex_plan(readout_scan=scan)
    res = exp.run_multiplex(plan, target_heralds=cfg.run_target_write_clicks)

    columns = ["time_s", "eta_ret", "eta_err"]
    for j in range(len(plan.write_offsets)):
        columns += [f"pair{j}_prob", f"pair{j}_err"]
    rows = []
    for i, t in enumerate(res.scan_times):
        row = [t, res.combined_curve.eta[i], res.combined_curve.err[i]]
        for j in range(len(plan.write_offsets)):
            row += [res.combined_pairs[j, i], res.combined_pair_errs[j, i]]
        rows.append(row)
    export_table_csv(outdir / "combined.csv", columns, rows)
    for j, curve in enumerate(res.independent_curves):
        _write_curve(outdir / f"independent_{j}.csv", curve)

    sel_rows = [(i, res.peak_times[i],
                 *[res.selectivities[i, j] for j in range(len(plan.write_offsets))])
                for i in range(len(res.peak_times))]
    sel_cols = ["peak_index", "peak_time_s"] + [
        f"selectivity_{j}" for j in range(len(plan.write_offsets))]
    export_table_csv(outdir / "selectivity.csv", sel_cols, sel_rows)

    bg_mask = ((res.scan_times >= cfg.scan_background_start)
               & (res.scan_times <= cfg.scan_background_stop))
    comb = res.combined_curve
    single = res.independent_curves[0]
    bg_comb = comb.n_wr[bg_mask].sum() / comb.trials[bg_mask].sum()
    bg_single = single.n_wr[bg_mask].sum() / single.trials[bg_mask].sum()
    ratio = bg_comb / bg_single if bg_single > 0 else math.nan
    ratio_err = ratio * math.sqrt(
        1.0 / max(comb.n_wr[bg_mask].sum(), 1)
        + 1.0 / max(single.n_wr[bg_mask].sum(), 1)) if bg_single > 0 else math.nan
    export_table_csv(outdir / "summary.csv",
                     ("mean_selectivity", "selectivity_err",
                      "background_ratio", "background_ratio_err",
                      "peak_spacing_s"),
                     [(res.mean_selectivity, res.selectivity_err, ratio,
                       ratio_err, abs(res.peak_times[0] - res.peak_times[1])
                       if len(res.peak_times) > 1 else math.nan)])
    artifacts = {"combined.csv": None, "selectivity.csv": None, "summary.csv": None}
    for j in range(len(res.independent_curves)):
        artifacts[f"independent_{j}.csv"] = None
    return artifacts, {
        "mean_selectivity": (res.mean_selectivity, res.selectivity_err),
        "background_ratio": (ratio, ratio_err)}


def run_alpha_scenario(cfg: RunConfig, outdir: Path, threads: int):
    exp = build_experiment(cfg, gradient=True)
    pw_values = tuple(cfg.scan_pw_values)
    if not pw_values:
        # empty list: measure at the configured emission probability
        pw_values = (exp.tables.p_click,)
    points = exp.run_alpha_scan(pw_values,
                                budget_constant=cfg.scan_alpha_budget_constant,
                                min_trials=cfg.scan_alpha_min_trials)
    rows = []
    for pt in points:
        s = pt.stats
        rows.append((pt.target_pw, pt.excitation_probability, pt.alpha,
                     pt.alpha_err, s.trials, s.n_w, s.n_wr1, s.n_wr2, s.n_wr1r2))
    export_table_csv(outdir / "alpha_vs_pw.csv",
                     ("p_w", "excitation_probability", "alpha", "alpha_err",
                      "trials", "n_w", "n_wr1", "n_wr2", "n_wr1r2"), rows)
    summary_cols = ["n_points"]
    summary_row = [len(points)]
    if len(points) >= 2:
        c_fit, c_err = fit_alpha_proportionality(
            [pt.excitation_probability for pt in points],
            [pt.alpha for pt in points],
            [pt.alpha_err for pt in points])
        summary_cols += ["c_fit", "c_fit_err"]
        summary_row += [c_fit, c_err]
    export_table_csv(outdir / "summary.csv", summary_cols, [summary_row])
    metrics = {"alpha": (points[0].alpha, points[0].alpha_err)}
    return {"alpha_vs_pw.csv": None, "summary.csv": None}, metrics


SCENARIOS = {
    "standard": run_standard_scenario,
    "rephase": run_rephase_scenario,
    "multiplex": run_multiplex_scenario,
    "alpha-scan": run_alpha_scenario,
}


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(outdir: Path, cfg: RunConfig, artifact_names):
    lines = [
        f"tool = dlczsim {__version__}",
        f"scenario = {cfg.run_scenario}",
        f"config_sha256 = {config_hash(cfg)}",
        f"global_seed = {cfg.run_global_seed}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
    ]
    for name in sorted(artifact_names):
        lines.append(f"artifact {name} sha256 {_sha256(outdir / name)}")
    (outdir / "manifest.txt").write_text("\n".join(lines) + "\n",
                                         encoding="utf-8")


def execute_run(cfg: RunConfig, outdir: Path, threads: int = 1):
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "resolved_config.cfg").write_text(canonical_text(cfg),
                                                encoding="utf-8")
    runner = SCENARIOS[cfg.run_scenario]
    artifacts, metrics = runner(cfg, outdir, threads)
    artifacts["resolved_config.cfg"] = None
    write_manifest(outdir, cfg, artifacts.keys())
    return metrics


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _apply_common_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg = cfg.replace(run_global_seed=args.seed)
    if getattr(args, "format", "csv") != "csv":
        raise ConfigError(f"unsupported output format {args.format!r}",
                          field="--format")
    return cfg


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg = _apply_common_overrides(cfg, args)
    outdir = Path(args.out) if args.out else Path(cfg.run_output_dir)
    metrics = execute_run(cfg, outdir, threads=args.threads)
    for name, (value, err) in metrics.items():
        print(f"{name} = {value!r} +- {err!r}")
    print(f"artifacts written to {outdir}")
    return EXIT_OK


def _parse_axis_value(axis: str, text: str):
    try:
        section, key = axis.split(".", 1)
    except ValueError:
        raise ConfigError("axis must look like section.key", field=axis)
    from .config import _SCHEMA_BY_SECTION
    spec = _SCHEMA_BY_SECTION.get(section, {}).get(key)
    if spec is None:
        raise ConfigError("unknown sweep axis", field=axis)
    if spec.kind not in ("float", "int"):
        raise ConfigError("sweep axis must be numeric", field=axis)
    from .config import _parse_value
    return spec.attr, _parse_value(text.strip(), spec, 0)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    cfg = _apply_common_overrides(cfg, args)
    outdir = Path(args.out) if args.out else Path(cfg.run_output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    values = [v.strip() for v in args.values.split(";") if v.strip()]
    if not values:
        raise ConfigError("no sweep values given", field="--values")
    summary_rows = []
    metric_names = None
    for i, value_text in enumerate(values):
        attr, value = _parse_axis_value(args.axis, value_text)
        sub_cfg = cfg.replace(**{attr: value})
        sub_dir = outdir / f"value_{i}"
        metrics = execute_run(sub_cfg, sub_dir, threads=args.threads)
        if metric_names is None:
            metric_names = sorted(metrics)
        row = [value]
        for name in metric_names:
            v, e = metrics.get(name, (math.nan, math.nan))
            row += [v, e]
        summary_rows.append(row)
        print(f"{args.axis} = {value!r}: " + ", ".join(
            f"{k}={metrics[k][0]!r}" for k in sorted(metrics)))
    columns = ["value"]
    for name in metric_names:
        columns += [name, f"{name}_err"]
    export_table_csv(outdir / "summary.csv", columns, summary_rows)
    print(f"sweep summary written to {outdir / 'summary.csv'}")
    return EXIT_OK


_TARGET_DIMENSION = {
    "peak_time": "time", "decay_time": "time", "fwhm": "time",
    "relative_efficiency": None, "snr": None,
}


def _parse_target_scalar(text: str, dimension, line: int) -> float:
    parts = text.split()
    if dimension is None:
        if len(parts) != 1:
            raise ConfigError("dimensionless target takes a bare number", line=line)
        return float(parts[0])
    if len(parts) != 2 or parts[1] not in UNIT_TABLES[dimension]:
        raise ConfigError(
            f"expected '<value> <unit>' with unit in {sorted(UNIT_TABLES[dimension])}",
            line=line)
    return float(parts[0]) * UNIT_TABLES[dimension][parts[1]]


def parse_targets_file(path) -> dict[str, Target]:
    targets = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("expected 'name = value [unit] tol ...'",
                                  line=lineno)
            name, rest = (s.strip() for s in line.split("=", 1))
            if name not in _TARGET_DIMENSION:
                raise ConfigError(f"unknown target {name!r}", line=lineno,
                                  field=name)
            dimension = _TARGET_DIMENSION[name]
            if " tol " in rest:
                value_text, tol_text = rest.split(" tol ", 1)
            else:
                value_text, tol_text = rest, None
            value = _parse_target_scalar(value_text.strip(), dimension, lineno)
            if tol_text is None:
                tolerance = 0.05 * abs(value)
            elif tol_text.strip().endswith("%"):
                tolerance = abs(value) * float(tol_text.strip()[:-1]) / 100.0
            else:
                tolerance = _parse_target_scalar(tol_text.strip(), dimension,
                                                 lineno)
            targets[name] = Target(name, value, tolerance)
    if not targets:
        raise ConfigError("targets file is empty", line=1)
    return targets


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = cfg.replace(run_global_seed=args.seed)
    targets = parse_targets_file(args.targets)
    try:
        fitted, report = run_calibration(cfg, targets)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        if exc.report is not None:
            print("best-so-far:", file=sys.stderr)
            print(exc.report.text(), file=sys.stderr)
        return EXIT_BUDGET
    print(report.text(), end="")
    updates = {}
    name_map = {
        "temperature": "ensemble_temperature",
        "coil_tau": "gradient_coil_tau",
        "gamma_eff": "gradient_gamma_eff",
        "rephasing_time_jitter": "sequence_rephasing_time_jitter",
        "kappa": "noise_kappa",
    }
    for param, value in fitted.items():
        updates[name_map[param]] = value
    if updates:
        cfg = cfg.replace(**updates)
    if args.write_config:
        Path(args.write_config).write_text(canonical_text(cfg), encoding="utf-8")
        print(f"calibrated config written to {args.write_config}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    records = import_timetags(args.records, fmt=args.records_format)
    outdir = Path(args.out) if args.out else Path("out")
    outdir.mkdir(parents=True, exist_ok=True)
    counts = windowed_coincidences(records, window=args.window)
    export_table_csv(outdir / "coincidences.csv",
                     ("n_starts", "n_wr", "n_wr1", "n_wr2", "n_wr1r2"),
                     [(counts.n_starts, counts.n_wr, counts.n_wr1,
                       counts.n_wr2, counts.n_wr1r2)])
    if args.histogram_stop > args.histogram_start:
        hist = start_stop_histogram(
            records, Channel.WRITE, [Channel.READ1, Channel.READ2],
            bin_width=args.bin_width,
            time_range=(args.histogram_start, args.histogram_stop))
        export_histogram_csv(hist, outdir / "histogram.csv")
    print(f"analysis written to {outdir}")
    return EXIT_OK


def cmd_write_config(args) -> int:
    cfg = default_config()
    if args.scenario:
        cfg = cfg.replace(run_scenario=args.scenario)
    Path(args.path).write_text(canonical_text(cfg), encoding="utf-8")
    print(f"default configuration written to {args.path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dlczsim",
        description="Monte Carlo simulator for gradient-controlled dephasing "
                    "and rephasing of single spin-waves in a DLCZ memory.",
        epilog="configuration fields (env override prefix DLCZSIM_):\n"
               + schema_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="override [run] global_seed")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel workers for scan points")
        p.add_argument("--out", default=None, help="artifact directory")
        p.add_argument("--format", default="csv", help="output format (csv)")

    p_run = sub.add_parser("run", help="execute the scenario of a config file")
    p_run.add_argument("config")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="re-run a config over an axis of values")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--axis", required=True, help="config field, section.key")
    p_sweep.add_argument("--values", required=True,
                         help="semicolon-separated values, each in config syntax")
    common(p_sweep)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_cal = sub.add_parser("calibrate", help="fit model parameters to targets")
    p_cal.add_argument("targets")
    p_cal.add_argument("--config", default=None, help="base config file")
    p_cal.add_argument("--write-config", default=None,
                       help="write the calibrated config here")
    p_cal.add_argument("--seed", type=int, default=None)
    p_cal.set_defaults(fn=cmd_calibrate)

    p_an = sub.add_parser("analyze", help="histogram / coincidence analysis of "
                                          "a recorded timetag stream")
    p_an.add_argument("--records", required=True)
    p_an.add_argument("--records-format", default="binary",
                      choices=("binary", "csv"))
    p_an.add_argument("--window", type=float, default=200e-9,
                      help="coincidence window, seconds")
    p_an.add_argument("--bin-width", type=float, default=100e-9)
    p_an.add_argument("--histogram-start", type=float, default=0.0)
    p_an.add_argument("--histogram-stop", type=float, default=0.0)
    p_an.add_argument("--out", default=None)
    p_an.set_defaults(fn=cmd_analyze)

    p_wc = sub.add_parser("write-config", help="emit the calibrated default config")
    p_wc.add_argument("path")
    p_wc.add_argument("--scenario", default=None,
                      choices=("standard", "rephase", "multiplex", "alpha-scan"))
    p_wc.set_defaults(fn=cmd_write_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ConfigError, MalformedLineError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationBudgetError, CalibrationError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except DlczError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
