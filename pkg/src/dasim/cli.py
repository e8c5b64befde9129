"""Command-line front end: run configs or presets, list and validate them."""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import ParseError, ValidationError, parse_config, serialize
from .experiments import run_experiment
from .presets import PRESETS, list_experiments, preset_text

EXIT_OK, EXIT_GENERIC, EXIT_CONFIG, EXIT_BLOWUP, EXIT_CHECK = 0, 1, 2, 3, 4


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _job(args):
    text, overrides, outdir, figures, check = args
    cfg = parse_config(text, overrides)
    return run_experiment(cfg, outdir, figures=figures, check=check)


def _run_many(texts, overrides, outdir, figures, check, jobs):
    parsed = []
    for label, text in texts:
        try:
            parsed.append((label, text, parse_config(text, overrides)))
        except (ParseError, ValidationError) as exc:
            print(f"{label}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if len(parsed) == 1:
        code, msg = run_experiment(parsed[0][2], outdir, figures=figures, check=check)
        print(msg)
        return code
    names = [c.name for _, _, c in parsed]
    if len(set(names)) != len(names):
        print("batch configs need distinct experiment names", file=sys.stderr)
        return EXIT_CONFIG
    tasks = [(text, overrides, os.path.join(outdir, cfg.name), figures, check) for _, text, cfg in parsed]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, tasks))
    else:
        results = [_job(t) for t in tasks]
    worst = EXIT_OK
    for code, msg in results:
        print(msg)
        worst = max(worst, code)
    return worst


def build_parser():
    ap = argparse.ArgumentParser(prog="dasim", description="Data assimilation twin experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def outputs(p):
        p.add_argument("-o", "--outdir", default=".", help="output directory")
        p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--check", action="store_true", help="evaluate embedded assertions (exit 4 on failure)")
        p.add_argument("--figures", action="store_true", help="also render PNG figures")
        p.add_argument("--jobs", type=int, default=1, help="parallel processes for batches")

    p_run = sub.add_parser("run", help="run one or more config files")
    p_run.add_argument("configs", nargs="+")
    outputs(p_run)
    p_pre = sub.add_parser("preset", help="run named presets")
    p_pre.add_argument("names", nargs="+")
    outputs(p_pre)
    p_pre.add_argument("--show", action="store_true", help="print the preset config and exit")
    sub.add_parser("list", help="list presets")
    p_val = sub.add_parser("validate", help="parse and validate a config, printing its normalized form")
    p_val.add_argument("config")
    p_val.add_argument("--override", action="append", default=[])
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name, src in list_experiments().items():
            print(f"{name}\t{src}")
        return EXIT_OK
    if args.command == "validate":
        try:
            cfg = parse_config(_read(args.config), args.override)
        except (ParseError, ValidationError) as exc:
            print(f"{args.config}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except OSError as exc:
            print(exc, file=sys.stderr)
            return EXIT_CONFIG
        sys.stdout.write(serialize(cfg))
        return EXIT_OK
    if args.command == "preset":
        unknown = [n for n in args.names if n not in PRESETS]
        if unknown:
            print(f"unknown preset(s): {', '.join(unknown)}", file=sys.stderr)
            return EXIT_CONFIG
        texts = [(n, preset_text(n)) for n in args.names]
        if args.show:
            for _, t in texts:
                sys.stdout.write(t)
            return EXIT_OK
    else:
        try:
            texts = [(c, _read(c)) for c in args.configs]
        except OSError as exc:
            print(exc, file=sys.stderr)
            return EXIT_CONFIG
    return _run_many(texts, args.override, args.outdir, args.figures, args.check, max(1, args.jobs))


if __name__ == "__main__":
    sys.exit(main())
