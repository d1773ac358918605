"""Command line: ``sim run``, ``sim verify`` and ``sim dump-config``.

Exit codes: 0 ok, 1 a verification check failed, 2 the solver gave up,
3 input/output problems (unreadable files, invalid configs, bad arguments).
``SIM_LOG`` sets the log level (e.g. ``SIM_LOG=debug``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .checks import Check, scenario_checks
from .mncp import NotConverged
from .scenarios import (
    BUILTINS,
    ConfigError,
    ScenarioConfig,
    StepRecord,
    TrajectoryWriter,
    builtin,
    builtin_document,
    iterate,
    parse_config,
)

EXIT_OK, EXIT_VERIFY, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("ecpsim.cli")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def load(source: str) -> ScenarioConfig:
    """A builtin name or a path to a JSON scenario."""
    if source in BUILTINS:
        return builtin(source)
    with open(source, encoding="utf-8") as fh:
        return parse_config(fh.read())


@dataclass
class RunOutcome:
    status: int
    rows: int
    records: list[StepRecord] = field(default_factory=list)
    error: str = ""


def run_scenario(config: ScenarioConfig, out=None, steps: int | None = None, tolerance: float | None = None,
                 keep: bool = False) -> RunOutcome:
    """Step the scenario, streaming one CSV row per step to ``out`` (a text stream or None).
    Rows up to a solver failure are kept; the status is then ``EXIT_SOLVER``."""
    writer = TrajectoryWriter(out, config) if out is not None else None
    records = []
    rows = 0
    try:
        for record in iterate(config, steps, tolerance):
            if writer is not None:
                writer.write(record)
            if keep:
                records.append(record)
            rows += 1
    except NotConverged as exc:
        return RunOutcome(EXIT_SOLVER, rows, records, f"step {rows + 1}: {exc}")
    except OSError as exc:
        return RunOutcome(EXIT_IO, rows, records, str(exc))
    return RunOutcome(EXIT_OK, rows, records)


def verify(source: str, config: ScenarioConfig | None = None) -> tuple[int, list[Check], str]:
    config = config or load(source)
    outcome = run_scenario(config, keep=True)
    if outcome.status != EXIT_OK:
        return outcome.status, [], outcome.error
    checks = scenario_checks(config.name, config, outcome.records)
    status = EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY
    return status, checks, ""


def _cmd_run(args) -> int:
    try:
        config = load(args.scenario)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    path = args.out or config.output_path or f"{config.name}.csv"
    try:
        stream = sys.stdout if path == "-" else open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        print(f"error: cannot write {path}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        outcome = run_scenario(config, stream, args.steps, args.tol)
    finally:
        if stream is not sys.stdout:
            stream.close()
    if outcome.status != EXIT_OK:
        print(f"error: {outcome.error} ({outcome.rows} rows written to {path})", file=sys.stderr)
    else:
        log.info("wrote %d rows to %s", outcome.rows, path)
    return outcome.status


def _cmd_verify(args) -> int:
    configs = []
    for source in args.scenarios:
        try:
            configs.append((source, load(source)))
        except (ConfigError, OSError) as exc:
            print(f"{source}: error: {exc}", file=sys.stderr)
            return EXIT_IO
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(lambda item: verify(*item), configs))
    status = EXIT_OK
    for (source, _), (code, checks, error) in zip(configs, results):
        print(f"== {source}")
        for check in checks:
            print(check.line())
        if error:
            print(f"solver failure: {error}")
        status = max(status, code)
    return status


def _cmd_dump(args) -> int:
    try:
        doc = builtin_document(args.name)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sim", description="Rigid-body contact simulation with equivalent contact points.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="simulate a scenario and write its trajectory as CSV")
    run.add_argument("scenario", help="builtin name (scenario1..scenario4) or path to a JSON config")
    run.add_argument("--out", help="CSV path ('-' for stdout); defaults to the config's output path or <name>.csv")
    run.add_argument("--steps", type=int, help="number of steps instead of duration / h")
    run.add_argument("--tol", type=float, help="solver tolerance on the merit residual")
    run.set_defaults(func=_cmd_run)

    ver = sub.add_parser("verify", help="run scenarios and print pass/fail per check")
    ver.add_argument("scenarios", nargs="+", help="builtin names or config paths")
    ver.add_argument("--jobs", type=int, default=1, help="scenarios verified in parallel threads")
    ver.set_defaults(func=_cmd_verify)

    dump = sub.add_parser("dump-config", help="print a builtin scenario as JSON")
    dump.add_argument("name", help="builtin name")
    dump.set_defaults(func=_cmd_dump)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SIM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
