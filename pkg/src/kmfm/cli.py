"""Command line entry point.

    kmfm fetch <dataset>
    kmfm run <config> [--set section.key=value ...] [--out DIR]
    kmfm sweep-l <config> --values 5 15 30 [--out FILE]
    kmfm sweep-k <config> --values 2 3 4 [--out FILE]
    kmfm bench <datasets...> [--set ...] [--out FILE]
    kmfm curves <report.json> <out_dir>

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings

from .config import load_config
from .errors import ConfigError, KmfmError
from .pipeline import (
    BENCH_COLUMNS,
    RunReport,
    benchmark,
    emit_loss_curves,
    rows_to_csv,
    run_kmfm,
    save_run,
    sweep_clusters,
    sweep_feature_dim,
)
from .uci import DATASET_NAMES, fetch_uci


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kmfm", description="K-means on a learned feature map for mixed-type tables")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fetch", help="download and cache a benchmark table")
    f.add_argument("dataset", choices=DATASET_NAMES)
    f.add_argument("--cache-dir")

    def with_config(sp):
        sp.add_argument("config", help="TOML config file ('-' for defaults only)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set lpp.L=10")

    r = sub.add_parser("run", help="run the full pipeline once")
    with_config(r)
    r.add_argument("--out", help="output directory (default: run.out_dir, else print only)")

    for name, what in (("sweep-l", "feature dimensions"), ("sweep-k", "cluster counts")):
        s = sub.add_parser(name, help=f"RI/NMI over {what}")
        with_config(s)
        s.add_argument("--values", type=int, nargs="+", required=True)
        s.add_argument("--out", help="CSV path (default: stdout)")

    b = sub.add_parser("bench", help="per-dataset runs with the published defaults")
    b.add_argument("datasets", nargs="+", choices=DATASET_NAMES)
    b.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    b.add_argument("--out", help="CSV path (default: stdout)")

    c = sub.add_parser("curves", help="loss-curve CSVs from a saved report.json")
    c.add_argument("report")
    c.add_argument("out")
    return p


def _config(args):
    path = None if args.config == "-" else args.config
    return load_config(path, args.overrides)


def _emit(text, out):
    if out:
        from pathlib import Path

        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dispatch(args) -> int:
    if args.command == "fetch":
        path = fetch_uci(args.dataset, args.cache_dir)
        print(path)
    elif args.command == "run":
        cfg = _config(args)
        report = run_kmfm(cfg)
        out = args.out or cfg.run.out_dir
        if out:
            save_run(report, out)
        sys.stdout.write(rows_to_csv([report.metrics_row()]))
    elif args.command == "sweep-l":
        _emit(rows_to_csv(sweep_feature_dim(_config(args), args.values)), args.out)
    elif args.command == "sweep-k":
        _emit(rows_to_csv(sweep_clusters(_config(args), args.values)), args.out)
    elif args.command == "bench":
        rows, _ = benchmark(args.datasets, args.overrides)
        _emit(rows_to_csv(rows, columns=BENCH_COLUMNS), args.out)
    elif args.command == "curves":
        try:
            report = RunReport.load(args.report)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read report {args.report}: {exc}") from None
        for p in emit_loss_curves(report, args.out):
            print(p)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("default")
    try:
        return _dispatch(args)
    except KmfmError as exc:
        print(f"kmfm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
