"""Command-line driver: ``cloudlens analyze|emit-pddl|validate|gen``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import jsonschema

from cloudlens import __version__
from cloudlens.actions import AssumeConstraint, Domain, FlowMode
from cloudlens.ingest import (
    Snapshot,
    SnapshotError,
    compile_snapshot,
    load_snapshot,
    partition,
    snapshot_to_dict,
)
from cloudlens.model import parse_attack
from cloudlens.pddl_emit import PddlError, PlanParseError, emit_domain, emit_problem, parse_plan_file
from cloudlens.planner import Limits, check_plan, plan_domain
from cloudlens.report import analyze, parse_goals, render_table, validate_report
from cloudlens.scenarios import SCENARIOS, GenParams, fixture_text, random_snapshot

log = logging.getLogger("cloudlens")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_EXHAUSTED = 2
EXIT_REJECTED = 3


class InputError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("CLOUDLENS_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _read_snapshot(path: str) -> Snapshot:
    try:
        return load_snapshot(path)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except (SnapshotError, jsonschema.ValidationError, json.JSONDecodeError, ValueError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        raise InputError(f"{path}: {msg}") from None


def _domain(args: argparse.Namespace) -> Domain:
    return Domain(mode=FlowMode(args.mode), constraint=AssumeConstraint(args.assume))


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise InputError(f"{path}: cannot write ({exc.strerror})") from None


# --------------------------------------------------------------------------- commands


def cmd_analyze(args: argparse.Namespace) -> int:
    snapshot = _read_snapshot(args.snapshot)
    try:
        goals = parse_goals(args.goal or ["all"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    limits = Limits(max_states=args.max_states, max_seconds=args.max_seconds)
    report = analyze(
        snapshot, goals, _domain(args), limits, partition_max=args.partition_max, jobs=args.jobs,
    )
    document = report.to_dict()
    validate_report(document)
    text = json.dumps(document, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(Path(args.out), text)
    sys.stdout.write(render_table(report))
    if report.partial:
        log.warning("%s: search limit reached, report is partial", args.snapshot)
        return EXIT_EXHAUSTED
    return EXIT_OK


def cmd_emit_pddl(args: argparse.Namespace) -> int:
    snapshot = _read_snapshot(args.snapshot)
    try:
        goal = parse_attack(args.goal)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    domain = _domain(args)
    out_dir = Path(args.out or ".")
    name = Path(args.snapshot).stem
    parts = [snapshot] if args.partition_max is None else partition(snapshot, args.partition_max)
    try:
        domain_doc = emit_domain(domain, goal)
        problems = []
        for i, part in enumerate(parts):
            state, _ = compile_snapshot(part)
            suffix = "" if len(parts) == 1 else f"-part{i}"
            problems.append((suffix, emit_problem(state, part, goal, domain, name + suffix)))
    except PddlError as exc:
        raise InputError(f"{args.snapshot}: {exc}") from None
    written = [out_dir / f"{name}.domain.pddl"]
    _write(written[0], domain_doc.text)
    for suffix, doc in problems:
        path = out_dir / f"{name}{suffix}.problem.pddl"
        _write(path, doc.text)
        written.append(path)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    snapshot = _read_snapshot(args.snapshot)
    try:
        goal = parse_attack(args.goal)
        text = Path(args.plan).read_text(encoding="utf-8")
    except ValueError as exc:
        raise InputError(str(exc)) from None
    except OSError as exc:
        raise InputError(f"{args.plan}: cannot read ({exc.strerror})") from None
    try:
        plan = parse_plan_file(text)
    except PlanParseError as exc:
        raise InputError(f"{args.plan}: {exc}") from None
    state, _ = compile_snapshot(snapshot)
    domain = plan_domain(plan) if args.mode is None else _domain(args)
    result = check_plan(state, plan, goal, domain)
    if result.ok:
        print(f"plan accepted: {len(plan)} actions, cost {plan.cost}")
        return EXIT_OK
    print(f"{args.plan}: plan rejected: {result.reason}", file=sys.stderr)
    return EXIT_REJECTED


def cmd_gen(args: argparse.Namespace) -> int:
    if args.kind == "scenario":
        if args.name not in SCENARIOS:
            raise InputError(f"unknown scenario {args.name!r}; choose from {', '.join(SCENARIOS)}")
        text = fixture_text(args.name)
    else:
        overrides = {
            f.name: getattr(args, f.name) for f in fields(GenParams)
            if getattr(args, f.name, None) is not None
        }
        try:
            params = GenParams(**overrides)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        text = json.dumps(snapshot_to_dict(random_snapshot(params)), indent=2) + "\n"
    if args.out:
        _write(Path(args.out), text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, *, mode_default: str | None = "per-tuple") -> None:
    p.add_argument("--mode", choices=[m.value for m in FlowMode], default=mode_default)
    p.add_argument("--assume", choices=[c.value for c in AssumeConstraint],
                   default=AssumeConstraint.UNRESTRICTED.value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudlens", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="enumerate compromisable users per attack")
    p.add_argument("snapshot")
    p.add_argument("--goal", action="append",
                   help="attack type, comma list or 'all' (repeatable; default all)")
    _common(p)
    p.add_argument("--jobs", type=_positive, default=1)
    p.add_argument("--max-states", type=_positive)
    p.add_argument("--max-seconds", type=float)
    p.add_argument("--partition-max", type=_positive)
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("emit-pddl", help="write domain and problem files")
    p.add_argument("snapshot")
    p.add_argument("--goal", required=True)
    _common(p)
    p.add_argument("--partition-max", type=_positive)
    p.add_argument("--out", help="output directory (default: current)")
    p.set_defaults(func=cmd_emit_pddl)

    p = sub.add_parser("validate", help="replay a plan file against a snapshot")
    p.add_argument("snapshot")
    p.add_argument("plan")
    p.add_argument("--goal", required=True)
    _common(p, mode_default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen", help="write a scenario fixture or a random snapshot")
    gen = p.add_subparsers(dest="kind", required=True)
    g = gen.add_parser("scenario")
    g.add_argument("name", help=", ".join(SCENARIOS))
    g.add_argument("--out")
    g = gen.add_parser("random")
    g.add_argument("--seed", type=int, default=0)
    for f in fields(GenParams):
        if f.name == "seed":
            continue
        kind = int if isinstance(f.default, int) else float
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind)
    g.add_argument("--out")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"cloudlens: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
