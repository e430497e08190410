"""Command-line entry point: ``sim run | characterize | print-defaults``.

Exit codes: 0 success, 1 config rejected, 2 separation did not converge,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from rfbss import runner


def _parse_tests(text):
    tests = tuple(t.strip().lower() for t in text.split(",") if t.strip())
    bad = [t for t in tests if t not in runner.TESTS]
    if bad or not tests:
        raise argparse.ArgumentTypeError(
            f"expected a comma-separated subset of {','.join(runner.TESTS)}, got {text!r}"
        )
    return tests


def build_parser():
    p = argparse.ArgumentParser(prog="sim", description="RF blind source separation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a separation scenario")
    run.add_argument("--config", required=True, help="scenario INI file")
    run.add_argument("--out", help=f"output directory (else ${runner.OUTPUT_ENV}, else the config's)")
    run.add_argument("--seed", type=int, help="override scenario.global_seed")

    ch = sub.add_parser("characterize", help="run chip characterization tests")
    ch.add_argument("--config", required=True, help="scenario INI file")
    ch.add_argument("--tests", type=_parse_tests, help=f"subset of {','.join(runner.TESTS)}")
    ch.add_argument("--out", help="output directory")
    ch.add_argument("--seed", type=int, help="override scenario.global_seed")

    sub.add_parser("print-defaults", help="print every config field with its default")
    return p


def _err(msg):
    print(f"sim: {msg}", file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "print-defaults":
        sys.stdout.write(runner.default_config_text())
        return runner.EXIT_OK

    try:
        cfg = runner.load_config(args.config, seed_override=args.seed)
        if args.command == "characterize":
            tests = args.tests if args.tests is not None else cfg.characterization.tests
            cfg.kind = "characterization"
            cfg.characterization = dataclasses.replace(cfg.characterization, tests=tests)
            cfg.validate()
            report = runner.run_characterization(cfg)
        else:
            if cfg.kind == "characterization":
                report = runner.run_characterization(cfg)
            else:
                report = runner.run_scenario(cfg)
    except runner.ConfigError as exc:
        _err(f"config rejected: {exc}")
        return runner.EXIT_CONFIG
    except ValueError as exc:
        _err(f"rejected: {exc}")
        return runner.EXIT_CONFIG

    out_dir = runner.resolve_output_dir(args.out, cfg)
    try:
        files = runner.emit_report(report, out_dir)
    except OSError as exc:
        _err(f"cannot write outputs to {out_dir}: {exc}")
        return runner.EXIT_IO

    status = "PASS" if report.passed else "FAIL"
    print(f"{status}: wrote {len(files)} files to {out_dir}")
    if report.converged is False:
        _err("separation did not converge within ica.max_epochs")
        return runner.EXIT_NOT_CONVERGED
    return runner.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
