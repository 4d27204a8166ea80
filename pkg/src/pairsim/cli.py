"""Command-line interface.

Exit codes: 0 success / all requested properties pass, 1 a property or
verification failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import scenarios
from .asm import AsmError
from .fsm_verify import fsm_verify
from .harness import coverage
from .layout import LayoutError, d_pair_accounting, load_layout
from .ltl import check_all, render_reports
from .monitor import MonitorFault
from .trace import read_trace, write_trace

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

PROP_IDS = ("eq1", "eq2", "eq3", "eq4", "eq5", "eq6", "eq7", "eq8", "eq9",
            "def1a", "def1b", "def2")
LIVE_IDS = ("eq7_live", "def1b_live")


def _props(text: str) -> list[str] | None:
    if text == "all":
        return None
    props = [p.strip() for p in text.split(",") if p.strip()]
    unknown = [p for p in props if p not in PROP_IDS + LIVE_IDS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown properties: {', '.join(unknown)}")
    return props


def _fault(text: str) -> MonitorFault:
    for f in MonitorFault:
        if text in (f.name, f.name.lower(), f.value):
            return f
    raise argparse.ArgumentTypeError(
        f"unknown fault {text!r}; choose from {', '.join(f.value for f in MonitorFault)}")


def cmd_run(args) -> int:
    scenario = scenarios.get(args.scenario)
    result = scenario.run(cycles=args.cycles, program=args.program, layout=args.layout,
                          fault=args.fault)
    if args.trace:
        write_trace(args.trace, result.trace)
    text = result.report.render()
    if args.report:
        Path(args.report).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK if result.report.all_pass else EXIT_FAIL


def cmd_check(args) -> int:
    layout = load_layout(args.layout or scenarios.DEFAULT_LAYOUT)
    trace = read_trace(args.trace)
    if not trace:
        print(f"{args.trace}: empty trace", file=sys.stderr)
        return EXIT_USAGE
    reports = check_all(trace, layout, args.props)
    if args.machine:
        for r in reports:
            print(r.line())
    else:
        print(render_reports(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_fsm_verify(args) -> int:
    layout = load_layout(args.layout) if args.layout else None
    rep = fsm_verify(args.tasks, layout, fault=args.fault)
    print(rep.render())
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_list(args) -> int:
    for s in scenarios.catalog():
        revoked = ",".join(map(str, sorted(s.expected_revoked))) or "-"
        print(f"{s.name:28s} {s.cycles:7d} cycles  revoked={revoked:5s}"
              f" resets={s.expected_resets}  {s.description}")
    return EXIT_OK


def cmd_coverage(args) -> int:
    totals: dict[str, int] = {}
    for s in scenarios.catalog():
        cov = coverage(s.run().report.verdicts)
        row = " ".join(f"{k}={cov[k]}" for k in PROP_IDS[1:9])
        print(f"{s.name:28s} {row}")
        for k, v in cov.items():
            totals[k] = totals.get(k, 0) + v
    missing = [k for k in PROP_IDS[1:9] if not totals.get(k)]
    if missing:
        print("not exercised: " + ", ".join(missing))
        return EXIT_FAIL
    return EXIT_OK


def cmd_accounting(args) -> int:
    print(d_pair_accounting(load_layout(args.layout)).render())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario, write its trace and report")
    r.add_argument("--scenario", required=True)
    r.add_argument("--program", help="program file (default: the scenario's)")
    r.add_argument("--layout", help="layout file (default: the scenario's)")
    r.add_argument("--cycles", type=int)
    r.add_argument("--trace", help="trace CSV output")
    r.add_argument("--report", help="report output (default: stdout)")
    r.add_argument("--fault", type=_fault, help="seed a monitor fault (eq4..eq9)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="check builtin properties on a trace CSV")
    c.add_argument("--trace", required=True)
    c.add_argument("--props", type=_props, default=None,
                   help="'all' or a comma-separated list of " + ",".join(PROP_IDS))
    c.add_argument("--layout", help="layout the trace was produced with (default layout)")
    c.add_argument("--machine", action="store_true",
                   help="one line per formula: id,verdict,index,vacuous")
    c.set_defaults(func=cmd_check)

    f = sub.add_parser("fsm-verify", help="exhaustively verify the monitor FSMs")
    f.add_argument("--tasks", type=int, help="number of tasks (default: 3, or the layout's)")
    f.add_argument("--layout")
    f.add_argument("--fault", type=_fault)
    f.set_defaults(func=cmd_fsm_verify)

    sub.add_parser("list-scenarios", help="list the scenario catalog").set_defaults(func=cmd_list)
    sub.add_parser("coverage", help="per-scenario activation counts of eq2..eq9"
                   ).set_defaults(func=cmd_coverage)

    a = sub.add_parser("accounting", help="D_PAIR byte accounting for a layout")
    a.add_argument("--layout", required=True)
    a.set_defaults(func=cmd_accounting)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (KeyError, ValueError, OSError, AsmError, LayoutError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"pairsim: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
