"""Snapshot parsing and policy compilation into relation tuples."""

from __future__ import annotations

import fnmatch
import json
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

import jsonschema

from cloudlens import vocab
from cloudlens.model import (
    DATASTORE_PRED,
    DUMMY_DS,
    DUMMY_USER,
    IDENTITY_PRED,
    KIND_PRED,
    MFA,
    POLICY_PRED,
    PUBLIC,
    SENSITIVE,
    VERSIONING,
    Datastore,
    Ds3,
    Ds4,
    EntityId,
    Fact,
    IamState,
    Id3,
    Id4,
    Identity,
    Kind,
    RelTuple,
)
from cloudlens.vocab import ApiEntry, Family

log = logging.getLogger(__name__)

SNAPSHOT_SCHEMA_VERSION = "cloudlens-snapshot/1"

_ENTITY_ID = {
    "oneOf": [
        {"type": "string", "minLength": 1},
        {
            "type": "object",
            "properties": {
                "name": {"type": "string", "minLength": 1},
                "account": {"type": "string"},
            },
            "required": ["name"],
            "additionalProperties": False,
        },
    ]
}


def _pair(a: str, b: str) -> dict[str, Any]:
    return {
        "type": "object",
        "properties": {a: {"type": "string", "minLength": 1}, b: {"type": "string", "minLength": 1}},
        "required": [a, b],
        "additionalProperties": False,
    }


_STRINGS = {"oneOf": [{"type": "string"}, {"type": "array", "items": {"type": "string"}, "minItems": 1}]}

SNAPSHOT_JSON_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "schema": {"const": SNAPSHOT_SCHEMA_VERSION},
        "notes": {},
        "identities": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": _ENTITY_ID,
                    "kind": {"enum": [k.value for k in Kind]},
                },
                "required": ["id", "kind"],
                "additionalProperties": False,
            },
        },
        "datastores": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": _ENTITY_ID,
                    "is_public": {"type": "boolean"},
                    "has_sensitive_data": {"type": "boolean"},
                    "versioning_enabled": {"type": "boolean"},
                    "mfa_delete_enabled": {"type": "boolean"},
                    "is_dummy": {"type": "boolean"},
                },
                "required": ["id"],
                "additionalProperties": False,
            },
        },
        "policies": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": _ENTITY_ID,
                    "statements": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "effect": {"enum": ["Allow", "Deny"]},
                                "actions": _STRINGS,
                                "resources": _STRINGS,
                                "condition": {"type": ["object", "null"]},
                            },
                            "required": ["effect", "actions", "resources"],
                            "additionalProperties": False,
                        },
                    },
                },
                "required": ["id", "statements"],
                "additionalProperties": False,
            },
        },
        "attachments": {"type": "array", "items": _pair("identity", "policy")},
        "memberships": {"type": "array", "items": _pair("user", "group")},
        "trust": {"type": "array", "items": _pair("principal", "role")},
    },
    "additionalProperties": False,
}


class SnapshotError(ValueError):
    """Schema violation, dangling reference or duplicate entity."""


class Effect(str, Enum):
    ALLOW = "Allow"
    DENY = "Deny"


@dataclass(frozen=True)
class PolicyStatement:
    effect: Effect
    actions: tuple[str, ...]
    resources: tuple[str, ...]
    condition: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        if not self.actions or not self.resources:
            raise SnapshotError("statement needs at least one action and one resource")


@dataclass(frozen=True)
class PolicyDocument:
    id: EntityId
    statements: tuple[PolicyStatement, ...]

    @property
    def name(self) -> str:
        return self.id.name


@dataclass(frozen=True)
class Snapshot:
    identities: tuple[Identity, ...] = ()
    datastores: tuple[Datastore, ...] = ()
    policies: tuple[PolicyDocument, ...] = ()
    attachments: tuple[tuple[str, str], ...] = ()
    memberships: tuple[tuple[str, str], ...] = ()
    trust: tuple[tuple[str, str], ...] = ()

    def entity_names(self) -> list[str]:
        names = [i.name for i in self.identities]
        names += [d.name for d in self.datastores]
        names += [p.name for p in self.policies]
        return names

    def kind_of(self) -> dict[str, Kind]:
        kinds = {i.name: i.kind for i in self.identities}
        kinds.update({p.name: Kind.POLICY for p in self.policies})
        return kinds

    def account_of(self) -> dict[str, str]:
        out = {i.name: i.id.account for i in self.identities}
        out.update({d.name: d.id.account for d in self.datastores})
        out.update({p.name: p.id.account for p in self.policies})
        return out

    def users(self) -> list[str]:
        return sorted(i.name for i in self.identities if i.kind is Kind.USER)

    def restrict(self, keep: Iterable[str]) -> Snapshot:
        """Sub-snapshot over ``keep``; relations with a dropped endpoint are dropped."""
        keep = set(keep)
        return Snapshot(
            identities=tuple(i for i in self.identities if i.name in keep),
            datastores=tuple(d for d in self.datastores if d.name in keep),
            policies=tuple(p for p in self.policies if p.name in keep),
            attachments=tuple(a for a in self.attachments if a[0] in keep and a[1] in keep),
            memberships=tuple(m for m in self.memberships if m[0] in keep and m[1] in keep),
            trust=tuple(
                t for t in self.trust if t[1] in keep and (t[0] in keep or _is_glob(t[0]))
            ),
        )


@dataclass
class CompilationReport:
    tuples_emitted: int = 0
    statements_skipped: list[tuple[str, str]] = field(default_factory=list)
    deny_subtractions: int = 0
    conditions_ignored: list[str] = field(default_factory=list)

    def skip(self, locator: str, reason: str) -> None:
        self.statements_skipped.append((locator, reason))


# --------------------------------------------------------------------------- parsing


def _entity_id(raw: Any) -> EntityId:
    if isinstance(raw, str):
        return EntityId(raw)
    return EntityId(raw["name"], raw.get("account", ""))


def _as_tuple(raw: str | list[str]) -> tuple[str, ...]:
    return (raw,) if isinstance(raw, str) else tuple(raw)


def parse_snapshot(document: str | bytes | dict[str, Any]) -> Snapshot:
    if not isinstance(document, dict):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SnapshotError(f"invalid JSON: {exc}") from exc
    try:
        jsonschema.validate(document, SNAPSHOT_JSON_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SnapshotError(f"schema violation at {where}: {exc.message}") from None

    identities = tuple(
        Identity(_entity_id(i["id"]), Kind(i["kind"])) for i in document.get("identities", [])
    )
    datastores = tuple(
        Datastore(
            _entity_id(d["id"]),
            is_public=d.get("is_public", False),
            has_sensitive_data=d.get("has_sensitive_data", False),
            versioning_enabled=d.get("versioning_enabled", False),
            mfa_delete_enabled=d.get("mfa_delete_enabled", False),
            is_dummy=d.get("is_dummy", False),
        )
        for d in document.get("datastores", [])
    )
    policies = tuple(
        PolicyDocument(
            _entity_id(p["id"]),
            tuple(
                PolicyStatement(
                    Effect(s["effect"]),
                    _as_tuple(s["actions"]),
                    _as_tuple(s["resources"]),
                    s.get("condition"),
                )
                for s in p["statements"]
            ),
        )
        for p in document.get("policies", [])
    )
    snap = Snapshot(
        identities=identities,
        datastores=datastores,
        policies=policies,
        attachments=tuple((a["identity"], a["policy"]) for a in document.get("attachments", [])),
        memberships=tuple((m["user"], m["group"]) for m in document.get("memberships", [])),
        trust=tuple((t["principal"], t["role"]) for t in document.get("trust", [])),
    )
    validate_snapshot(snap)
    return snap


def validate_snapshot(snap: Snapshot) -> None:
    for name in snap.entity_names():
        if name in vocab.RESERVED_NAMES:
            raise SnapshotError(f"entity name {name!r} is reserved")
    names = [i.name for i in snap.identities] + [d.name for d in snap.datastores]
    dupes = {n for n in names if names.count(n) > 1}
    policy_names = [p.name for p in snap.policies]
    dupes |= {n for n in policy_names if policy_names.count(n) > 1}
    for p in snap.policies:
        kind = next((i.kind for i in snap.identities if i.name == p.name), None)
        if kind is not None and kind is not Kind.POLICY:
            dupes.add(p.name)
        if any(d.name == p.name for d in snap.datastores):
            dupes.add(p.name)
    if dupes:
        raise SnapshotError(f"duplicate entity name(s): {', '.join(sorted(dupes))}")
    kinds = snap.kind_of()
    for ident, pol in snap.attachments:
        if ident not in kinds:
            raise SnapshotError(f"attachment references undeclared identity {ident!r}")
        if kinds.get(pol) is not Kind.POLICY:
            raise SnapshotError(f"attachment references undeclared policy {pol!r}")
    for user, group in snap.memberships:
        if kinds.get(user) is None:
            raise SnapshotError(f"membership references undeclared identity {user!r}")
        if kinds.get(group) is not Kind.GROUP:
            raise SnapshotError(f"membership references undeclared group {group!r}")
    for principal, role in snap.trust:
        if kinds.get(role) is not Kind.ROLE:
            raise SnapshotError(f"trust references undeclared role {role!r}")
        if not _is_glob(principal) and principal not in kinds:
            raise SnapshotError(f"trust references undeclared principal {principal!r}")


def load_snapshot(path: str | Path) -> Snapshot:
    return parse_snapshot(Path(path).read_text(encoding="utf-8"))


def _entity_json(eid: EntityId) -> Any:
    return {"name": eid.name, "account": eid.account} if eid.account else eid.name


def snapshot_to_dict(snap: Snapshot) -> dict[str, Any]:
    def ds(d: Datastore) -> dict[str, Any]:
        out: dict[str, Any] = {"id": _entity_json(d.id)}
        for flag in ("is_public", "has_sensitive_data", "versioning_enabled", "mfa_delete_enabled", "is_dummy"):
            if getattr(d, flag):
                out[flag] = True
        return out

    def stmt(s: PolicyStatement) -> dict[str, Any]:
        out: dict[str, Any] = {
            "effect": s.effect.value,
            "actions": list(s.actions),
            "resources": list(s.resources),
        }
        if s.condition is not None:
            out["condition"] = s.condition
        return out

    return {
        "schema": SNAPSHOT_SCHEMA_VERSION,
        "identities": [{"id": _entity_json(i.id), "kind": i.kind.value} for i in snap.identities],
        "datastores": [ds(d) for d in snap.datastores],
        "policies": [
            {"id": _entity_json(p.id), "statements": [stmt(s) for s in p.statements]}
            for p in snap.policies
        ],
        "attachments": [{"identity": a, "policy": b} for a, b in snap.attachments],
        "memberships": [{"user": a, "group": b} for a, b in snap.memberships],
        "trust": [{"principal": a, "role": b} for a, b in snap.trust],
    }


# --------------------------------------------------------------------------- expansion


def _is_glob(pattern: str) -> bool:
    return "*" in pattern or "?" in pattern


def expand_action_pattern(pattern: str, report: CompilationReport | None = None,
                          locator: str = "") -> frozenset[str]:
    """Permission tokens granted by one ``Action`` entry.

    A bare ``*`` becomes ``full_control`` rather than an enumeration.
    """
    if pattern.strip() == "*":
        return frozenset({vocab.FULL_CONTROL})
    matches = vocab.match_actions(pattern.strip())
    if not matches and report is not None:
        report.skip(locator, f"action {pattern!r} is outside the modeled API surface")
    return frozenset(e.token for e in matches)


def resource_name(pattern: str) -> str:
    """Last path component of an ARN-like resource string."""
    text = pattern.strip()
    if text.endswith("/*") and len(text) > 2:
        text = text[:-2]
    text = text.rsplit(":", 1)[-1]
    return text.rsplit("/", 1)[-1]


def _family_of(token: str) -> Family | None:
    if token == vocab.FULL_CONTROL:
        return None
    entry = vocab.BY_TOKEN.get(token)
    return entry.family if entry else Family.IDENTITY


def expand_resource_pattern(
    pattern: str, snapshot: Snapshot, perm: str | None = None,
    *, kinds: dict[str, Kind] | None = None,
) -> frozenset[str]:
    """Entities (or a sentinel) matched by one ``Resource`` entry for ``perm``.

    ``*`` maps to ``any_user`` for identity permissions and ``any_datastore``
    for datastore permissions (both for ``full_control`` or an unspecified perm).
    """
    family = _family_of(perm) if perm is not None else None
    entry = vocab.BY_TOKEN.get(perm) if perm else None
    if pattern.strip() == "*":
        if family is Family.DATASTORE:
            return frozenset({vocab.ANY_DATASTORE})
        if family is None:
            return frozenset({vocab.ANY_USER, vocab.ANY_DATASTORE})
        return frozenset({vocab.ANY_USER})
    if entry is not None and entry.target_kind == "*":
        return frozenset({vocab.ANY_USER})
    kinds = kinds if kinds is not None else snapshot.kind_of()
    if family is Family.DATASTORE:
        candidates = [d.name for d in snapshot.datastores]
    elif family is None:
        candidates = [d.name for d in snapshot.datastores] + list(kinds)
    else:
        wanted = Kind(entry.target_kind) if entry and entry.target_kind in Kind._value2member_map_ else None
        candidates = [n for n, k in kinds.items() if wanted is None or k is wanted]
    name = resource_name(pattern)
    if _is_glob(name):
        return frozenset(n for n in candidates if fnmatch.fnmatchcase(n, name))
    return frozenset({name}) if name in candidates else frozenset()


_POLICY_TAG_KEYS = ("aws:requesttag/policy-id", "aws:requesttag/policyid")


def _condition_policy(condition: dict[str, Any] | None) -> str | None:
    """Policy id pinned by a ``StringEquals aws:RequestTag/policy-id`` condition."""
    if not condition:
        return None
    for op, clauses in condition.items():
        if op.lower() != "stringequals" or not isinstance(clauses, dict):
            continue
        for key, value in clauses.items():
            if key.lower() in _POLICY_TAG_KEYS:
                return resource_name(value if isinstance(value, str) else value[0])
    return None


def expand_statement(
    holder: str, stmt: PolicyStatement, snapshot: Snapshot, report: CompilationReport,
    locator: str, kinds: dict[str, Kind],
) -> set[RelTuple]:
    """Tuples granted to ``holder`` by one statement (effect is ignored here)."""
    out: set[RelTuple] = set()
    tokens: set[str] = set()
    for pattern in stmt.actions:
        tokens |= expand_action_pattern(pattern, report, locator)
    if not tokens:
        return out
    pinned = _condition_policy(stmt.condition)
    if stmt.condition and pinned is None:
        report.conditions_ignored.append(locator)
    for token in sorted(tokens):
        entry = vocab.BY_TOKEN.get(token)
        for pattern in stmt.resources:
            if entry is not None and entry.family is Family.IDENTITY_4TUPLE:
                out |= _expand_4tuple(holder, entry, pattern, pinned, snapshot, kinds, report, locator)
                continue
            targets = expand_resource_pattern(pattern, snapshot, token, kinds=kinds)
            if not targets:
                report.skip(locator, f"resource {pattern!r} matches nothing for {token}")
            ds_names = {d.name for d in snapshot.datastores} | {vocab.ANY_DATASTORE}
            for target in targets:
                if target in ds_names:
                    out.add(Ds3(holder, token, target))
                else:
                    out.add(Id3(holder, token, target))
    return out


def _expand_4tuple(
    holder: str, entry: ApiEntry, pattern: str, pinned: str | None, snapshot: Snapshot,
    kinds: dict[str, Kind], report: CompilationReport, locator: str,
) -> set[RelTuple]:
    kind = Kind(entry.target_kind)
    if entry.relation == vocab.HAS_POLICY:
        # permission to attach a policy to the resource; unpinned means any policy
        policy = vocab.ADMIN_POLICY
        if pinned is not None:
            if kinds.get(pinned) is not Kind.POLICY:
                report.skip(locator, f"condition names undeclared policy {pinned!r}")
                return set()
            policy = pinned
        if pattern.strip() == "*":
            subjects = {vocab.ANY_USER}
        else:
            subjects = expand_resource_pattern(pattern, snapshot, entry.token, kinds=kinds)
        if not subjects:
            report.skip(locator, f"resource {pattern!r} matches no {kind.value}")
        return {Id4(holder, s, vocab.HAS_POLICY, policy) for s in subjects}
    # belongsTo / assumeRole: whoever holds the grant may add itself
    if pattern.strip() == "*":
        objects = {n for n, k in kinds.items() if k is kind}
    else:
        objects = set(expand_resource_pattern(pattern, snapshot, entry.token, kinds=kinds))
    if not objects:
        report.skip(locator, f"resource {pattern!r} matches no {kind.value}")
    return {Id4(holder, vocab.ANY_USER, entry.relation, o) for o in objects}


def _deny_covers(pattern: RelTuple, t: RelTuple) -> bool:
    if pattern.holder != t.holder or type(pattern) is not type(t):
        return False
    pf, tf = pattern.fields(), t.fields()
    perm_slot = len(pf) - 2
    for i, (p, v) in enumerate(zip(pf, tf)):
        if p == v:
            continue
        if i == perm_slot and p == vocab.FULL_CONTROL:
            continue
        if i == len(pf) - 1 and p in vocab.SENTINELS:
            continue
        return False
    return True


def apply_deny(tuples: Iterable[RelTuple], denied: Iterable[RelTuple]) -> set[RelTuple]:
    """Remove every tuple covered by an expanded Deny pattern.

    A pattern covers a tuple of the same form and holder when each slot is
    equal, or the pattern has ``full_control`` in the permission slot, or a
    sentinel in the target slot.
    """
    denied = list(denied)
    kept = set(tuples)
    if not denied:
        return kept
    return {t for t in kept if not any(_deny_covers(d, t) for d in denied)}


# --------------------------------------------------------------------------- compile


def compile_snapshot(
    snapshot: Snapshot, *, strict_trust: bool = False
) -> tuple[IamState, CompilationReport]:
    """Initial IAM state for a snapshot.

    With ``strict_trust`` an assumeRole tuple needs both a trust entry and an
    ``sts:AssumeRole`` grant; by default either one suffices.
    """
    report = CompilationReport()
    kinds = snapshot.kind_of()
    docs = {p.name: p for p in snapshot.policies}
    facts: set[Fact] = set()
    for name, kind in kinds.items():
        facts.add(Fact(KIND_PRED[kind], name))
        facts.add(Fact(IDENTITY_PRED, name))
    for d in snapshot.datastores:
        facts.add(Fact(DATASTORE_PRED, d.name))
        if d.has_sensitive_data:
            facts.add(Fact(SENSITIVE, d.name))
        if d.is_public:
            facts.add(Fact(PUBLIC, d.name))
        if d.versioning_enabled:
            facts.add(Fact(VERSIONING, d.name))
        if d.mfa_delete_enabled:
            facts.add(Fact(MFA, d.name))
        if d.is_dummy:
            facts.add(Fact(DUMMY_DS, d.name))
    facts |= {Fact(DATASTORE_PRED, vocab.DUMMY_DATASTORE), Fact(DUMMY_DS, vocab.DUMMY_DATASTORE),
              Fact(DUMMY_USER, vocab.DUMMY_USER)}

    tuples: set[RelTuple] = set()
    for user, group in snapshot.memberships:
        tuples.add(Id3(user, vocab.BELONGS_TO, group))
    for ident, pol in snapshot.attachments:
        tuples.add(Id3(ident, vocab.HAS_POLICY, pol))

    trusted: set[tuple[str, str]] = set()
    for principal, role in snapshot.trust:
        if principal.strip() == "*":
            trusted.add((vocab.ANY_USER, role))
        elif _is_glob(principal):
            trusted |= {(n, role) for n in kinds if fnmatch.fnmatchcase(n, principal)}
        else:
            trusted.add((principal, role))
    if not strict_trust:
        tuples |= {Id3(p, vocab.ASSUME_ROLE, r) for p, r in trusted}

    holders: dict[str, list[str]] = defaultdict(list)
    for ident, pol in snapshot.attachments:
        holders[ident].append(pol)

    def holder_tuples(holder: str, policies: Iterable[str]) -> set[RelTuple]:
        granted: set[RelTuple] = set()
        denied: list[RelTuple] = []
        for pname in policies:
            doc = docs[pname]
            for idx, stmt in enumerate(doc.statements):
                locator = f"{pname}[{idx}]"
                if stmt.effect is Effect.DENY and stmt.condition:
                    report.skip(locator, "conditional Deny not modeled; tuples retained")
                    continue
                expanded = expand_statement(holder, stmt, snapshot, report, locator, kinds)
                if stmt.effect is Effect.DENY:
                    denied.extend(expanded)
                else:
                    granted |= expanded
        kept = apply_deny(granted, denied)
        report.deny_subtractions += len(granted) - len(kept)
        return kept

    for holder in sorted(holders):
        tuples |= holder_tuples(holder, holders[holder])

    if strict_trust:
        kept = set()
        for t in tuples:
            if isinstance(t, Id3) and t.perm == vocab.ASSUME_ROLE and t.dst != vocab.ANY_USER:
                if (t.src, t.dst) not in trusted and (vocab.ANY_USER, t.dst) not in trusted:
                    continue
            kept.add(t)
        tuples = kept

    # policies that may be attached during an attack hold their own tuples
    attachable = {
        t.dst for t in tuples if isinstance(t, Id4) and t.perm == vocab.HAS_POLICY
    }
    for pname in sorted(attachable & set(docs)):
        tuples |= holder_tuples(pname, [pname])
    if vocab.ADMIN_POLICY in attachable:
        tuples.add(Id3(vocab.ADMIN_POLICY, vocab.FULL_CONTROL, vocab.ANY_USER))
        tuples.add(Ds3(vocab.ADMIN_POLICY, vocab.FULL_CONTROL, vocab.ANY_DATASTORE))
        facts.add(Fact(POLICY_PRED, vocab.ADMIN_POLICY))
        facts.add(Fact(IDENTITY_PRED, vocab.ADMIN_POLICY))

    # joint Get+Put on one store implies the copy permission
    for t in list(tuples):
        if isinstance(t, Ds3) and t.perm == vocab.S3_GET and Ds3(t.src, vocab.S3_PUT, t.ds) in tuples:
            tuples.add(Ds3(t.src, vocab.S3_COPY, t.ds))

    report.tuples_emitted = len(tuples)
    log.debug("compiled %d tuples, %d skipped statements", len(tuples), len(report.statements_skipped))
    return IamState(tuples=frozenset(tuples), facts=frozenset(facts)), report


def admin_users(state: IamState) -> set[str]:
    """Users directly holding full control over every identity or every datastore."""
    users = set(state.entities_with(KIND_PRED[Kind.USER]))
    out = set()
    for t in state.tuples:
        if t.holder in users and t.perm == vocab.FULL_CONTROL and t[-1] in vocab.SENTINELS:
            out.add(t.holder)
    return out


# --------------------------------------------------------------------------- partition


def _reach_graph(state: IamState) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = defaultdict(set)
    for t in state.tuples:
        for other in t.fields()[1:]:
            if other not in vocab.TUPLE_TOKENS and other not in vocab.STRUCTURAL:
                adj[t.holder].add(other)
    return adj


def _bfs(adj: dict[str, set[str]], sources: Iterable[str], blocked: set[str]) -> set[str]:
    seen = set(sources)
    queue = deque(sorted(seen))
    while queue:
        node = queue.popleft()
        for nxt in sorted(adj.get(node, ())):
            if nxt not in seen and nxt not in blocked:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def partition(snapshot: Snapshot, max_entities: int) -> list[Snapshot]:
    """Split a snapshot by account, then into reachability-closed user groups.

    Admin users are excluded from every partition.
    """
    if max_entities < 1:
        raise ValueError("max_entities must be >= 1")
    state, _ = compile_snapshot(snapshot)
    admins = admin_users(state)
    declared = set(snapshot.entity_names())
    accounts = snapshot.account_of()
    if not accounts:
        return [snapshot]
    adj = _reach_graph(state)
    kinds = snapshot.kind_of()
    parts: list[Snapshot] = []
    for account in sorted(set(accounts.values())):
        members = {n for n, a in accounts.items() if a == account} - admins
        users = sorted(n for n in members if kinds.get(n) is Kind.USER)
        closure = (members | _bfs(adj, users, admins)) & declared
        if len(closure) <= max_entities:
            parts.append(snapshot.restrict(closure))
            continue
        chunk: set[str] = set()
        chunk_users = 0
        for user in users:
            reach = _bfs(adj, [user], admins) & declared
            if chunk_users and len(chunk | reach) > max_entities:
                parts.append(snapshot.restrict(chunk))
                chunk, chunk_users = set(), 0
            chunk |= reach
            chunk_users += 1
        if chunk_users:
            parts.append(snapshot.restrict(chunk))
    return parts


def without(snapshot: Snapshot, names: Iterable[str]) -> Snapshot:
    drop = set(names)
    return snapshot.restrict(set(snapshot.entity_names()) - drop)
