"""Command-line front end.

Verbs:
  plan         compile the migration plan and print the step order
  migrate      run the migration (resumes past completed steps)
  validate     check referential integrity of the target database
  gen-fixture  write the seeded demo databases, schemas, and config
  cleanup      drop the key-map and progress bookkeeping tables
  bench        compare offset and keyset pagination timings

Exit status: 0 on success, 1 when a migration aborted or an integrity
finding was reported, 2 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import fixtures, paging, runner
from .config import MigrationConfig, load_config
from .errors import MigrationError
from .plan import compile_plan

log = logging.getLogger("relmig")

_POLICY_BY_FLAG = {"reject": "rejectRow", "abort": "abort"}


def _load(path: str, policy_flag: str | None = None) -> MigrationConfig:
    config = load_config(Path(path))
    if policy_flag is not None:
        config = dataclasses.replace(config, policy=_POLICY_BY_FLAG[policy_flag])
    return config


def _cmd_plan(args) -> int:
    plan = compile_plan(_load(args.config))
    sys.stdout.write(plan.render_text())
    return 0


def _cmd_migrate(args) -> int:
    config = _load(args.config, args.policy)
    outcome = runner.run(config, jobs=args.jobs)
    sys.stdout.write(outcome.report.render_text())
    if args.report:
        report_path = Path(args.report)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(outcome.report.csv_text())
        rejects_path = report_path.with_name(report_path.stem + ".rejects.csv")
        rejects_path.write_text(outcome.report.rejects_csv_text())
        log.info("report written to %s and %s", report_path, rejects_path)
    if outcome.integrity is not None:
        sys.stdout.write(outcome.integrity.render_text())
    return 0 if outcome.ok else 1


def _cmd_validate(args) -> int:
    integrity = runner.validate(_load(args.config))
    sys.stdout.write(integrity.render_text())
    return 0 if integrity.clean else 1


def _cmd_gen_fixture(args) -> int:
    manifest = fixtures.gen_fixture(Path(args.out), args.seed, args.students_per_source)
    totals = manifest["totals"]
    sys.stdout.write(f"fixture written to {args.out}\n")
    sys.stdout.write(
        "sources=3 students={students} programmes={programmes} "
        "courses={courses} links={programmeCourses} "
        "dirty={dirtyStudents}\n".format(**totals)
    )
    return 0


def _cmd_cleanup(args) -> int:
    dropped = runner.cleanup(_load(args.config))
    for name in dropped:
        sys.stdout.write(f"dropped {name}\n")
    sys.stdout.write(f"{len(dropped)} tables dropped\n")
    return 0


def _cmd_bench(args) -> int:
    counts = tuple(int(part) for part in args.records.split(","))
    spec = paging.BenchSpec(
        record_counts=counts,
        page_size=args.page_size,
        reps=args.reps,
        seed=args.seed,
    )
    results = paging.bench(spec)
    text = paging.csv_text(results)
    if args.out:
        Path(args.out).write_text(text)
        log.info("timings written to %s", args.out)
    else:
        sys.stdout.write(text)
    trend = paging.check_trend(results, args.bound)
    sys.stdout.write(trend.render_text())
    return 0 if trend.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relmig",
        description="Consolidate structurally-identical databases into one target.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="path to the migration config")
        return p

    with_config(sub.add_parser("plan", help="print the compiled step order"))

    migrate = with_config(sub.add_parser("migrate", help="run the migration"))
    migrate.add_argument(
        "--policy", choices=sorted(_POLICY_BY_FLAG),
        help="override the configured bad-row policy",
    )
    migrate.add_argument("--report", help="write the per-table CSV report here")
    migrate.add_argument(
        "--jobs", type=int, default=1,
        help="run independent steps concurrently (default 1)",
    )

    with_config(sub.add_parser("validate", help="check target integrity"))
    with_config(sub.add_parser("cleanup", help="drop bookkeeping tables"))

    gen = sub.add_parser("gen-fixture", help="write the demo fixture set")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument(
        "--students-per-source", type=int, default=1000,
        help="students per source database",
    )

    bench = sub.add_parser("bench", help="compare pagination strategies")
    bench.add_argument(
        "--records", default="100000",
        help="comma-separated table sizes (default 100000)",
    )
    bench.add_argument("--page-size", type=int, default=10)
    bench.add_argument("--reps", type=int, default=30)
    bench.add_argument("--out", help="write the timings CSV here")
    bench.add_argument("--seed", type=int, default=7)
    bench.add_argument(
        "--bound", type=float, default=10.0,
        help="max slowest/fastest keyset mean ratio still counted as flat",
    )
    return parser


_COMMANDS = {
    "plan": _cmd_plan,
    "migrate": _cmd_migrate,
    "validate": _cmd_validate,
    "gen-fixture": _cmd_gen_fixture,
    "cleanup": _cmd_cleanup,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except MigrationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
