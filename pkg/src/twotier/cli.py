"""Command line entry point: ``twotier {run,sweep,check,counters}``."""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import SCHEMES, SimConfig, load_config
from .errors import ConfigError, TwoTierError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

SWEEP_COLUMNS = ("scheme", "sweep_variable", "sweep_value", "mean_per_cell_rate_bps_hz", "stderr", "n_seeds")
DIAG_COLUMNS = ("superframe", "bs_index", "subspace_error", "gradient_norm", "compensation_norm", "degenerate_flag")
RESULT_COLUMNS = ("scheme", "power_db", "speed_kmh", "mean_per_cell_rate_bps_hz", "stderr", "n_seeds")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    parser = _Parser(prog="twotier", description="Two-timescale precoding simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value config file (defaults when omitted)")
        p.add_argument("--seed", type=_seed, help="override the config seed")
        p.add_argument("--out", help="output directory (stdout when omitted)")
        p.add_argument("--scheme", help=f"comma-separated subset of {','.join(SCHEMES)}")
        p.add_argument("--format", choices=("csv", "json"), default=None)

    p_run = sub.add_parser("run", help="simulate a config and write the report")
    common(p_run)

    p_sweep = sub.add_parser("sweep", help="vary power or speed, one CSV per scheme")
    common(p_sweep)
    p_sweep.add_argument("--vary", choices=("power", "speed"), required=True)
    p_sweep.add_argument("--points", type=_float_list, required=True, help="e.g. 0,5,10,15,20")

    p_check = sub.add_parser("check", help="run the acceptance suite")
    p_check.add_argument("--only", type=_int_list, help="criterion numbers, e.g. 1,2,6")

    p_count = sub.add_parser("counters", help="feedback and complexity counts")
    p_count.add_argument("--nt", type=int, required=True)
    p_count.add_argument("--k", type=int, required=True)
    p_count.add_argument("--nr", type=int, default=2)
    p_count.add_argument("--ts", type=int, default=100)
    p_count.add_argument("--m", type=int, help="outer dimension for the complexity counts")
    return parser


def _load(args):
    cfg = load_config(args.config) if args.config else SimConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.scheme:
        changes["schemes"] = [s.strip() for s in args.scheme.split(",") if s.strip()]
    try:
        return cfg.replace(**changes) if changes else cfg
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def _emit(out_dir, name, text):
    if out_dir is None:
        sys.stdout.write(text)
        return
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text)
    print(path / name)


def _cmd_run(args):
    from .sim import run_simulation

    cfg = _load(args)
    report = run_simulation(cfg)
    if (args.format or "json") == "json":
        _emit(args.out, "report.json", report.to_json() + "\n")
        return EXIT_OK
    _, rows = report.summary_rows()
    _emit(args.out, "results.csv", _csv_text(RESULT_COLUMNS, rows))
    for key, diag in sorted(report.diagnostics.items()):
        name = "diagnostics_" + key.replace("@", "_") + ".csv"
        _emit(args.out, name, _csv_text(DIAG_COLUMNS, [[r[c] for c in DIAG_COLUMNS] for r in diag]))
    return EXIT_OK


def _cmd_sweep(args):
    from .sim import sweep

    cfg = _load(args)
    table, _ = sweep(cfg, args.vary, args.points)
    variable = "power_db" if args.vary == "power" else "speed_kmh"
    if (args.format or "csv") == "json":
        doc = {label: [dict(zip(SWEEP_COLUMNS[2:], row)) for row in rows] for label, rows in table.items()}
        _emit(args.out, "sweep.json", json.dumps({"sweep_variable": variable, "schemes": doc},
                                                 sort_keys=True, indent=1) + "\n")
        return EXIT_OK
    per_scheme = {label: [(label, variable, *row) for row in rows] for label, rows in table.items()}
    if args.out is None:
        rows = [r for label in sorted(per_scheme) for r in per_scheme[label]]
        sys.stdout.write(_csv_text(SWEEP_COLUMNS, rows))
    else:
        for label, rows in sorted(per_scheme.items()):
            _emit(args.out, f"sweep_{label}.csv", _csv_text(SWEEP_COLUMNS, rows))
    return EXIT_OK


def _cmd_check(args):
    from .acceptance import run_all

    results = run_all(set(args.only) if args.only else None, echo=lambda s: print(s, flush=True))
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    return EXIT_OK if n_pass == len(results) else EXIT_NUMERIC


def _cmd_counters(args):
    from .counters import count_complexity, feedback_formula

    for name in ("nt", "k", "nr", "ts"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be positive")
    one = feedback_formula(args.nt, args.nr, args.k, args.ts, "one_tier")
    two = feedback_formula(args.nt, args.nr, args.k, args.ts, "proposed")
    print(f"N_t={args.nt} K={args.k} N_r={args.nr} T_s={args.ts}")
    print(f"feedback   one-tier {round(one.feedback)}  two-tier {round(two.feedback)}")
    print(f"signaling  one-tier {round(one.signaling)}  two-tier {round(two.signaling)}")
    if args.m is not None:
        if not 1 <= args.m <= args.nt:
            raise UsageError("--m must be between 1 and --nt")
        prop = count_complexity(args.nt, args.m, "proposed")
        svd = count_complexity(args.nt, args.m, "svd")
        bd = count_complexity(args.nt, args.m, "bd")
        print(f"complexity proposed {prop.mcma:.2f} MCMA (instrumented {prop.instrumented / 1e6:.2f})  "
              f"SVD {svd.mcma:.2f} MCMA  BD {bd.mcma:.2f} MCMA")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "check": _cmd_check, "counters": _cmd_counters}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TwoTierError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
