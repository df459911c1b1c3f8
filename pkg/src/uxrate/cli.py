"""Command line front end: run one cell, sweep a grid, validate a
config, or summarize an existing sweep directory."""

import argparse
import os
import sys

from .experiment import CELL_CSV, ExperimentConfig, load_config, run_single, \
    run_sweep
from .metrics import aggregate, read_cell_reports, ux_capacity, \
    write_cell_reports


def _load(args):
    if args.config:
        return load_config(args.config)
    return ExperimentConfig()


def _cmd_run(args):
    config = _load(args)
    scheme = args.scheme or config.schemes[0]
    events = [] if args.verbose else None
    report = run_single(config, scheme, args.n_ue, args.seed,
                        event_sink=events)
    print(f"{scheme} n_ue={args.n_ue} seed={args.seed} "
          f"satisfied={report.satisfaction_ratio:.3f} "
          f"min_psnr_p5={report.min_psnr_p5:.2f} "
          f"util={report.utilization:.3f} "
          f"mean_rate={report.mean_rate:.2f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_cell_reports(os.path.join(args.out, CELL_CSV), [report])
        if events is not None:
            with open(os.path.join(args.out, "events.log"), "w") as fh:
                for t_ms, ue, kind, payload in events:
                    fh.write(f"t={t_ms:.3f} ue={ue} {kind} {payload}\n")
    return 0


def _cmd_sweep(args):
    config = _load(args)
    log = None if args.quiet else print
    reports, rows = run_sweep(config, args.out, resume=args.resume, log=log)
    if not args.quiet:
        print(f"{len(reports)} cells -> {os.path.join(args.out, CELL_CSV)}")
    return 0


def _cmd_validate(args):
    try:
        config = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    cells = len(config.schemes) * len(config.n_ue_values) * len(config.seeds)
    print(f"config ok: {len(config.schemes)} scheme(s), "
          f"{len(config.n_ue_values)} load(s), {len(config.seeds)} seed(s), "
          f"{cells} cells")
    return 0


def _cmd_report(args):
    path = os.path.join(args.out, CELL_CSV)
    try:
        reports = read_cell_reports(path)
    except (OSError, ValueError) as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return 1
    if not reports:
        print(f"{path} holds no rows", file=sys.stderr)
        return 1
    rows = aggregate(reports)
    print("scheme               n_ue  mean_ratio  ci_lo   ci_hi")
    for row in rows:
        print(f"{row.scheme:20s} {row.n_ue:4d}  {row.mean_ratio:10.3f}  "
              f"{row.ci_lo:.3f}   {row.ci_hi:.3f}")
    by_scheme = {}
    for row in rows:
        by_scheme.setdefault(row.scheme, []).append(row)
    for scheme, scheme_rows in sorted(by_scheme.items()):
        scheme_rows.sort(key=lambda r: r.n_ue)
        cap = ux_capacity([r.mean_ratio for r in scheme_rows],
                          [r.n_ue for r in scheme_rows])
        print(f"ux capacity {scheme}: {cap}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="uxrate",
        description="Rate-control simulation for real-time video cells")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a single cell")
    p_run.add_argument("--config", help="YAML experiment config")
    p_run.add_argument("--scheme", help="scheme (default: first in config)")
    p_run.add_argument("--n-ue", type=int, default=4)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", help="directory for the report row")
    p_run.add_argument("--verbose", action="store_true",
                       help="also write a per-event log")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the full grid")
    p_sweep.add_argument("--config", help="YAML experiment config")
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.add_argument("--resume", action="store_true",
                         help="keep existing cells, run only missing ones")
    p_sweep.add_argument("--quiet", action="store_true")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=_cmd_validate)

    p_rep = sub.add_parser("report", help="summarize a sweep directory")
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
