"""Command-line entry point: ``concealed {run,converge,demo}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import SCENARIOS, build_config, parse_config
from .errors import ConfigError, NumericalError
from .runner import converge, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="concealed", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run a scenario from a config file"),
                            ("converge", "refinement study for a config file")):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("config", type=Path)
        s.add_argument("--out-dir", type=Path, default=Path("out"))
        s.add_argument("--quiet", action="store_true")
    s = sub.add_parser("demo", help="run a built-in scenario with default settings")
    s.add_argument("scenario", choices=[n for n in SCENARIOS if n != "custom"])
    s.add_argument("--out-dir", type=Path, default=Path("out"))
    s.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "demo":
            cfg = build_config(args.scenario)
        else:
            try:
                text = args.config.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
            cfg = parse_config(text)
        if args.command == "converge":
            table = converge(cfg, args.out_dir, quiet=args.quiet)
            if not args.quiet:
                print(table.render(), end="")
            return EXIT_OK
        report = run(cfg, args.out_dir, quiet=True)
        if not args.quiet:
            print(report.render(), end="")
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
