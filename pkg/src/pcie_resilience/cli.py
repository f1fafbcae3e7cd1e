"""Command-line entry point.

Exit status: 0 when the run holds every invariant, 1 when it does not,
2 for configuration or usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import re
import sys
from typing import Optional, Sequence

from .errors import TABLE_NAMES, ErrorKind, classify, expected_error_for
from .faults import FaultKind
from .harness import CampaignConfig, ConfigError, load_config, parse_fault, run_campaign

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2

_CYCLE = re.compile(r"^cycle=(\d+) ")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _summarize(report, out) -> int:
    t = report.totals()
    print(f"mode={report.mode} seed={report.seed} cycles={report.total_cycles}", file=out)
    print(f"injected={t.injected} detected={t.detected} "
          f"classified_correctly={t.classified_correctly} recovered={t.recovered}", file=out)
    print(f"corrupted_bytes_delivered={report.corrupted_bytes_delivered} "
          f"link_down_cycles={report.link_down_cycles_total}", file=out)
    problems = report.violations()
    for p in problems:
        print(f"violation: {p}", file=sys.stderr)
    return EXIT_VIOLATION if problems else EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    return _summarize(run_campaign(cfg), sys.stdout)


def cmd_inject(args) -> int:
    cfg = load_config(args.config) if args.config else CampaignConfig()
    spec = parse_fault(f"{args.kind},{args.cycle},{args.seed}")
    horizon = max(cfg.horizon_cycles, spec.cycle + 1)
    cfg = dataclasses.replace(cfg, count_per_kind=0, fault_kinds=None, faults=[spec],
                              horizon_cycles=horizon,
                              trace_path=args.trace or cfg.trace_path,
                              report_path=args.report or cfg.report_path)
    return _summarize(run_campaign(cfg), sys.stdout)


def cmd_trace(args) -> int:
    if args.to is not None and args.to < args.from_:
        raise ConfigError("--to must not be before --from")
    try:
        with open(args.input, encoding="ascii") as fh:
            for line in fh:
                m = _CYCLE.match(line)
                if m is None:
                    raise ConfigError(f"{args.input}: not a trace line: {line.strip()[:40]!r}")
                c = int(m.group(1))
                if c < args.from_:
                    continue
                if args.to is not None and c > args.to:
                    break
                sys.stdout.write(line)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.input}: {exc.strerror}") from None
    return EXIT_OK


def cmd_classify(args) -> int:
    try:
        kind = ErrorKind(args.kind)
    except ValueError:
        try:
            kind = expected_error_for(FaultKind(args.kind))
        except ValueError:
            raise ConfigError(f"unknown error kind {args.kind!r}") from None
    layer, severity = classify(kind)
    print(f"{kind.value}\t{TABLE_NAMES[kind]}\t{layer.value}\t{severity.value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pcie-resilience", description="Seeded fault campaigns on a simulated link.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a campaign from a config file")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("inject", help="run with a single fault")
    i.add_argument("--kind", required=True, choices=[k.value for k in FaultKind])
    i.add_argument("--cycle", required=True, type=int)
    i.add_argument("--seed", required=True, type=lambda s: int(s, 0))
    i.add_argument("--config", help="base config (defaults otherwise)")
    i.add_argument("--trace", help="write the trace here")
    i.add_argument("--report", help="write the JSON report here")
    i.set_defaults(func=cmd_inject)

    t = sub.add_parser("trace", help="print a window of a trace file")
    t.add_argument("--input", required=True)
    t.add_argument("--from", dest="from_", type=int, default=0)
    t.add_argument("--to", type=int)
    t.set_defaults(func=cmd_trace)

    c = sub.add_parser("classify", help="print the layer and severity of an error kind")
    c.add_argument("--kind", required=True)
    c.set_defaults(func=cmd_classify)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
