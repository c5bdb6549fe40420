"""Analysis reports: per-attack compromisable users, plan-length histogram, phase timing."""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import jsonschema

from cloudlens.actions import Domain
from cloudlens.ingest import Snapshot, admin_users, compile_snapshot, partition, without
from cloudlens.model import USER_PRED, AttackType, parse_attack
from cloudlens.planner import AttackPlan, Limits, Status, enumerate_users_detailed

REPORT_SCHEMA_VERSION = "cloudlens-report/1"
TIMING_KEYS = ("compile", "ground", "search")

_PLAN = {
    "type": "object",
    "required": ["user", "cost", "actions"],
    "additionalProperties": False,
    "properties": {
        "user": {"type": "string"},
        "cost": {"type": "integer", "minimum": 0},
        "actions": {"type": "array", "items": {"type": "string"}},
    },
}

REPORT_JSON_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "schema", "mode", "assume", "goals", "partitions", "admins_excluded",
        "per_attack", "path_length_histogram", "timing", "partial", "exhausted",
    ],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": REPORT_SCHEMA_VERSION},
        "mode": {"enum": ["bulk", "per-tuple"]},
        "assume": {"enum": ["single", "unrestricted"]},
        "goals": {"type": "array", "items": {"type": "string"}},
        "partitions": {"type": "integer", "minimum": 1},
        "admins_excluded": {"type": "array", "items": {"type": "string"}},
        "per_attack": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["compromisable_users", "plans"],
                "additionalProperties": False,
                "properties": {
                    "compromisable_users": {"type": "array", "items": {"type": "string"}},
                    "plans": {"type": "array", "items": _PLAN},
                },
            },
        },
        "path_length_histogram": {
            "type": "object",
            "patternProperties": {"^[0-9]+$": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "timing": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["partition", *TIMING_KEYS],
                "additionalProperties": False,
                "properties": {
                    "partition": {"type": "integer", "minimum": 0},
                    **{k: {"type": "number", "minimum": 0} for k in TIMING_KEYS},
                },
            },
        },
        "partial": {"type": "boolean"},
        "exhausted": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["attack", "user"],
                "properties": {"attack": {"type": "string"}, "user": {"type": "string"}},
            },
        },
    },
}


@dataclass
class PhaseTiming:
    partition: int
    compile: float = 0.0
    ground: float = 0.0
    search: float = 0.0


@dataclass
class AnalysisReport:
    mode: str
    assume: str
    goals: tuple[AttackType, ...]
    partitions: int = 1
    admins_excluded: tuple[str, ...] = ()
    plans: dict[AttackType, list[tuple[str, AttackPlan]]] = field(default_factory=dict)
    exhausted: list[tuple[AttackType, str]] = field(default_factory=list)
    timing: list[PhaseTiming] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.exhausted)

    def compromisable_users(self, attack: AttackType) -> list[str]:
        return sorted(u for u, _ in self.plans.get(attack, []))

    def histogram(self) -> dict[int, int]:
        counts = Counter(plan.cost for found in self.plans.values() for _, plan in found)
        return dict(sorted(counts.items()))

    def to_dict(self) -> dict[str, Any]:
        per_attack = {}
        for attack in self.goals:
            found = sorted(self.plans.get(attack, []), key=lambda item: item[0])
            per_attack[attack.label] = {
                "compromisable_users": [u for u, _ in found],
                "plans": [
                    {"user": u, "cost": p.cost, "actions": p.lines()} for u, p in found
                ],
            }
        return {
            "schema": REPORT_SCHEMA_VERSION,
            "mode": self.mode,
            "assume": self.assume,
            "goals": [g.label for g in self.goals],
            "partitions": self.partitions,
            "admins_excluded": sorted(self.admins_excluded),
            "per_attack": per_attack,
            "path_length_histogram": {str(k): v for k, v in self.histogram().items()},
            "timing": [
                {"partition": t.partition, "compile": round(t.compile, 6),
                 "ground": round(t.ground, 6), "search": round(t.search, 6)}
                for t in self.timing
            ],
            "partial": self.partial,
            "exhausted": [
                {"attack": a.label, "user": u}
                for a, u in sorted(self.exhausted, key=lambda x: (x[0].label, x[1]))
            ],
        }


def validate_report(document: dict[str, Any]) -> None:
    jsonschema.validate(document, REPORT_JSON_SCHEMA)


def strip_timing(document: dict[str, Any]) -> dict[str, Any]:
    """Copy of a report dict with timing values zeroed, for comparisons."""
    out = dict(document)
    out["timing"] = [{**t, **{k: 0 for k in TIMING_KEYS}} for t in document["timing"]]
    return out


def analyze(snapshot: Snapshot, goals: Sequence[AttackType], domain: Domain,
            limits: Limits = Limits(), *, partition_max: int | None = None,
            jobs: int = 1) -> AnalysisReport:
    """Per-user attack enumeration over each partition of a snapshot.

    Admin users are dropped before partitioning.  A user seen in more than
    one partition is searched only in the first.
    """
    t0 = time.perf_counter()
    full, _ = compile_snapshot(snapshot)
    admins = admin_users(full)
    trimmed = without(snapshot, admins)
    parts = [trimmed] if partition_max is None else partition(trimmed, partition_max)
    first_compile = time.perf_counter() - t0
    report = AnalysisReport(
        mode=domain.mode.value, assume=domain.constraint.value, goals=tuple(goals),
        partitions=len(parts), admins_excluded=tuple(sorted(admins)),
    )
    done: set[str] = set()
    for index, part in enumerate(parts):
        timing = PhaseTiming(index)
        t0 = time.perf_counter()
        state, _ = compile_snapshot(part)
        timing.compile = time.perf_counter() - t0 + (first_compile if index == 0 else 0.0)
        users = sorted(set(state.entities_with(USER_PRED)) - done - admins)
        done |= set(users)
        for goal in goals:
            outcomes = enumerate_users_detailed(state, goal, domain, limits, users=users, jobs=jobs)
            for o in outcomes:
                timing.ground += o.stats.ground_time
                timing.search += max(o.stats.wall_time - o.stats.ground_time, 0.0)
                if o.status is Status.EXHAUSTED:
                    report.exhausted.append((goal, o.user))
                elif o.plan is not None:
                    report.plans.setdefault(goal, []).append((o.user, o.plan))
        report.timing.append(timing)
    return report


def render_table(report: AnalysisReport) -> str:
    rows = [("attack", "users", "shortest", "longest")]
    for attack in report.goals:
        found = report.plans.get(attack, [])
        costs = [p.cost for _, p in found]
        rows.append((
            attack.label, str(len(found)),
            str(min(costs)) if costs else "-", str(max(costs)) if costs else "-",
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    hist = report.histogram()
    if hist:
        lines.append("")
        lines.append("path lengths: " + ", ".join(f"{k}:{v}" for k, v in hist.items()))
    if report.exhausted:
        lines.append(f"search limit hit for {len(report.exhausted)} user/attack pairs (partial)")
    return "\n".join(lines) + "\n"


def all_goals() -> tuple[AttackType, ...]:
    return tuple(AttackType)


def parse_goals(values: Iterable[str]) -> tuple[AttackType, ...]:
    chosen: list[AttackType] = []
    for value in values:
        for part in value.split(","):
            part = part.strip()
            if not part:
                continue
            if part.lower() == "all":
                chosen.extend(AttackType)
            else:
                chosen.append(parse_attack(part))
    return tuple(dict.fromkeys(chosen)) or all_goals()
