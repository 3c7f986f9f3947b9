"""Command-line entry point: ``gausscool {steady,sweep,compare,trajectories,report}``.

Exit status is 0 on success, 1 when a sweep row was flagged, 2 on
configuration or solver errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import replace

from . import harness
from .config import RunConfig, parse_config, parse_scheme_list, validate_sweep
from .dynamics import Estimator, Scheme, steady_sigma_c, steady_sigma_m
from .errors import GaussCoolError
from .trajectories import run_ensemble

EXIT_OK, EXIT_FLAGGED, EXIT_ERROR = 0, 1, 2


def _load(args) -> RunConfig:
    text = ""
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    config = parse_config(text)
    sweep = config.sweep
    if args.from_ is not None:
        sweep = replace(sweep, lo=args.from_)
    if args.to is not None:
        sweep = replace(sweep, hi=args.to)
    if args.points is not None:
        sweep = replace(sweep, points=args.points)
    if args.log is not None:
        sweep = replace(sweep, log=args.log)
    config = replace(config, sweep=validate_sweep(sweep))
    if args.scheme:
        schemes = parse_scheme_list("--scheme", args.scheme)
        config = replace(config, scheme=schemes[0], compare_schemes=schemes)
    if args.seed is not None:
        config = replace(config, sim=replace(config.sim, seed=args.seed))
    if args.workers is not None:
        config = replace(config, workers=args.workers)
    if args.out is not None:
        config = replace(config, output_path=args.out)
    return config


def _emit(text: str, path: str | None):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _flag_report(rows) -> int:
    flagged = [r for r in rows if r.flagged]
    for row in flagged:
        print(f"flagged row at {harness.fmt(row.x)}: {row.error}", file=sys.stderr)
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_steady(config: RunConfig) -> int:
    report = harness.steady_report(config)
    if config.output_path is not None and config.output_format == "csv":
        row = harness.Row(config.feedback.g, report)
        _emit(harness.write_rows([row]), config.output_path)
    sys.stdout.write(harness.report_text(report, config, config.scheme))
    return EXIT_OK


def cmd_sweep(config: RunConfig) -> int:
    rows = harness.sweep_rows(config)
    _emit(harness.write_rows(rows, config.sweep.param), config.output_path)
    return _flag_report(rows)


def cmd_compare(config: RunConfig) -> int:
    text, rows = harness.compare_csv(config, config.compare_schemes)
    _emit(text, config.output_path)
    return _flag_report(rows)


SUMMARY_COLUMNS = ("quantity", "sample", "se", "prediction", "z")


def cmd_trajectories(config: RunConfig) -> int:
    params, scheme = config.system(), config.scheme
    law = config.feedback.law(config.sim_g)
    cov_c = steady_sigma_c(params, scheme)
    dump_indices = range(min(config.dump_count, config.sim.n_traj)) if config.dump_dir else ()
    stats = run_ensemble(config.sim, law, params, scheme, workers=config.workers, cov_c=cov_c,
                         dump_dir=config.dump_dir, dump_indices=dump_indices)
    predicted = steady_sigma_m(cov_c, law, params, scheme)
    occ = 0.5 * (predicted.trace + cov_c.trace) - 0.5
    keta8 = 8 * params.k * params.eta
    entries = [
        ("sxx_m", stats.sigma_m.sxx, stats.sigma_m_se[0], predicted.sxx),
        ("spp_m", stats.sigma_m.spp, stats.sigma_m_se[1], predicted.spp),
        ("sxp_m", stats.sigma_m.sxp, stats.sigma_m_se[2], predicted.sxp),
        ("mean_x", stats.mean[0], stats.mean_se[0], 0.0),
        ("mean_p", stats.mean[1], stats.mean_se[1], 0.0),
        ("n_occ", stats.n_occ, stats.n_occ_se, occ),
        ("innovation_var", stats.innovation_var, stats.innovation_var_se, 1 / keta8 if keta8 else float("nan")),
    ]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for name, sample, se, pred in entries:
        z = (sample - pred) / se if se and se == se else float("nan")
        writer.writerow([name, harness.fmt(sample), harness.fmt(se), harness.fmt(pred), harness.fmt(z)])
    _emit(buf.getvalue(), config.output_path)
    if config.output_path is not None:
        print(f"{stats.n_traj} trajectories, {stats.samples_per_traj} samples each after "
              f"{stats.burn_in} burn-in steps", file=sys.stderr)
    return EXIT_OK


def cmd_report(config: RunConfig) -> int:
    """Write the standard sweep, comparison and summary files into a directory."""
    out = config.output_path or "report"
    os.makedirs(out, exist_ok=True)
    qnd = replace(config, scheme=Scheme.QND_POSITION)
    status = EXIT_OK
    sweeps = {}
    for name, estimator in (("kalman_xp", Estimator.KALMAN_XP), ("kalman_x_only", Estimator.KALMAN_X_ONLY),
                            ("direct", Estimator.DIRECT)):
        cfg = replace(qnd, feedback=replace(qnd.feedback, estimator=estimator, explicit={}))
        rows = harness.sweep_rows(cfg)
        sweeps[name] = rows
        _emit(harness.write_rows(rows, cfg.sweep.param), os.path.join(out, f"sweep_{name}.csv"))
        status = max(status, _flag_report(rows))
    xp = replace(config, feedback=replace(config.feedback, estimator=Estimator.KALMAN_XP, explicit={}))
    text, rows = harness.compare_csv(xp, config.compare_schemes)
    _emit(text, os.path.join(out, "compare_schemes.csv"))
    status = max(status, _flag_report(rows))
    _emit(_summary(config, sweeps), os.path.join(out, "summary.txt"))
    return status


def _summary(config: RunConfig, sweeps) -> str:
    params = config.system()
    lines = [
        "gausscool report",
        f"params: k/omega = {params.k:.6g}, eta = {params.eta:.6g}, gamma/omega = {params.gamma:.6g}, "
        f"nbar = {params.nbar:.6g}, nbar*gamma/omega = {params.nbar * params.gamma:.6g}",
        f"sweep: {config.sweep.param} in [{config.sweep.lo:g}, {config.sweep.hi:g}], "
        f"{config.sweep.points} points, log = {config.sweep.log}",
        "",
        "cooling limits <n>_min:",
    ]
    for scheme in config.compare_schemes:
        try:
            cov_c = steady_sigma_c(params, scheme)
            lines.append(f"  {scheme.value:10s} {0.5 * cov_c.trace - 0.5:.6g}")
        except GaussCoolError as exc:
            lines.append(f"  {scheme.value:10s} failed: {exc}")
    lines.append("")
    for name, rows in sweeps.items():
        good = [r for r in rows if r.report is not None]
        if not good:
            lines.append(f"{name}: all rows failed")
            continue
        last = good[-1].report
        best = harness.argmin(rows)
        worst_margin = min(
            (v for r in good for v in r.report.margins.values() if v is not None), default=float("nan")
        )
        lines += [
            f"{name}:",
            f"  ratio at largest gain     {last.ratio:.6g}",
            f"  max ratio                 {max(r.report.ratio for r in good):.6g}",
            f"  <n> at largest gain       {last.n_occ:.6g}",
            f"  min <n>                   {best.report.n_occ:.6g} at {config.sweep.param} = {best.x:.6g}",
            f"  smallest bound margin     {worst_margin:.3e}",
            f"  flagged rows              {len(rows) - len(good)}",
        ]
    return "\n".join(lines) + "\n"


COMMANDS = {
    "steady": cmd_steady,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "trajectories": cmd_trajectories,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gausscool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=func.__doc__.splitlines()[0] if func.__doc__ else None)
        p.add_argument("--config", metavar="PATH", help="flat key = value configuration file")
        p.add_argument("--out", metavar="PATH", help="output file (directory for report); stdout if omitted")
        p.add_argument("--scheme", metavar="NAME[,NAME...]", help="qnd, homodyne, dual or pure")
        p.add_argument("--seed", type=int, help="master seed for trajectory noise")
        p.add_argument("--points", type=int, help="number of sweep points")
        p.add_argument("--from", dest="from_", type=float, metavar="X", help="sweep start")
        p.add_argument("--to", type=float, metavar="X", help="sweep end")
        p.add_argument("--log", action=argparse.BooleanOptionalAction, default=None,
                       help="log-spaced sweep (default) or --no-log for linear")
        p.add_argument("--workers", type=int, help="worker processes for trajectory ensembles")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load(args)
        return COMMANDS[args.command](config)
    except (GaussCoolError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
