"""PDDL domain/problem emission and external plan parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from cloudlens import vocab
from cloudlens.actions import (
    ARITY,
    AssumeConstraint,
    CustomGoal,
    Domain,
    FlowMode,
    Goal,
    GroundAction,
    Schema,
    as_domain,
    goal_flag,
)
from cloudlens.model import (
    DATASTORE_PRED,
    IDENTITY_PRED,
    AttackType,
    Ds3,
    Ds4,
    Fact,
    IamState,
    Id3,
    Id4,
)
from cloudlens.planner import AttackPlan
from cloudlens.vocab import Family

DOMAIN_NAME = "cloudlens"
REQUIREMENTS = (
    ":strips",
    ":negative-preconditions",
    ":disjunctive-preconditions",
    ":conditional-effects",
    ":equality",
)

_TUPLE_PRED = {Id3: "id_tpl", Ds3: "ds_tpl", Id4: "id_4tpl", Ds4: "ds_4tpl"}
# static classifications of permission tokens, asserted in every problem
_PERM_CLASSES = (
    ("delete_perm", vocab.IDENTITY_DELETE_TOKENS),
    ("login_perm", vocab.LOGIN_TOKENS),
    ("persistence_perm", vocab.PERSISTENCE_TOKENS),
)
_STATUS_PREDS = (
    "compromised_id", "user_pred", "group_pred", "role_pred", "policy_pred", "identity_pred",
    "datastore_pred", "has_sensitive_data", "is_public_datastore", "is_dummy_datastore",
    "is_dummy_user", "versioning_enabled", "mfa_enabled", "identity_perm", "datastore_perm",
    "delete_perm", "login_perm", "persistence_perm",
)


class PddlError(ValueError):
    pass


class DocKind(Enum):
    DOMAIN = "domain"
    PROBLEM = "problem"


@dataclass(frozen=True)
class PddlDocument:
    kind: DocKind
    text: str
    aliases: Mapping[str, str] = field(default_factory=dict)   # PDDL identifier -> original


_BAD_CHARS = re.compile(r"[^a-z0-9_\-]")


def sanitize(name: str) -> str:
    ident = _BAD_CHARS.sub("_", name.lower())
    if not ident or not ident[0].isalpha():
        ident = "e_" + ident
    return ident


def _all_tokens(domain: Domain) -> set[str]:
    tokens = set(vocab.VOCABULARY) | set(domain.flow_perms)
    tokens |= {t for t, _ in domain.extra_tokens}
    return tokens


def constant_names(domain: Domain = Domain(), goal: Goal | None = None) -> list[str]:
    """Original names that the domain file declares as constants."""
    names = _all_tokens(domain) | set(vocab.RESERVED_NAMES)
    if isinstance(goal, CustomGoal):
        names.add(goal.name)
        names |= {target for _, _, target in goal.requires}
    return sorted(names)


def alias_table(names: Iterable[str]) -> dict[str, str]:
    """Sanitized identifier -> original name; raises PddlError on a collision."""
    table: dict[str, str] = {}
    for name in sorted(set(names)):
        ident = sanitize(name)
        other = table.get(ident)
        if other is not None and other != name:
            raise PddlError(f"names {other!r} and {name!r} both map to PDDL identifier {ident!r}")
        table[ident] = name
    return table


# --------------------------------------------------------------------------- domain


def _c(name: str) -> str:
    return sanitize(name)


def _flow_or(id1: str, id2: str, domain: Domain) -> str:
    parts = " ".join(f"(id_tpl {id1} {_c(p)} {id2})" for p in domain.flow_perms)
    return f"(or {parts})"


def _not_sentinel(*vars_: str) -> list[str]:
    return [f"(not (= {v} {_c(s)}))" for v in vars_ for s in sorted(vocab.SENTINELS)]


def _action(name: str, params: str, pre: list[str], eff: list[str]) -> str:
    pre_text = "\n      ".join(pre)
    eff_text = "\n      ".join(eff)
    return (
        f"  (:action {name}\n"
        f"    :parameters ({params})\n"
        f"    :precondition (and\n      {pre_text})\n"
        f"    :effect (and\n      {eff_text}))\n"
    )


def _flow_actions(domain: Domain) -> list[str]:
    gate = "(compromise_selected)"
    if domain.mode is FlowMode.BULK:
        return [_action(
            Schema.PERM_FLOW_BULK.value, "?id2 ?id1",
            [gate, "(not (= ?id1 ?id2))", *_not_sentinel("?id1", "?id2"),
             _flow_or("?id1", "?id2", domain)],
            [
                "(forall (?p ?x) (when (id_tpl ?id2 ?p ?x) (id_tpl ?id1 ?p ?x)))",
                "(forall (?p ?x) (when (ds_tpl ?id2 ?p ?x) (ds_tpl ?id1 ?p ?x)))",
                "(forall (?a ?p ?x) (when (id_4tpl ?id2 ?a ?p ?x) (id_4tpl ?id1 ?a ?p ?x)))",
                "(forall (?a ?p ?x) (when (ds_4tpl ?id2 ?a ?p ?x) (ds_4tpl ?id1 ?a ?p ?x)))",
            ],
        )]
    out = []
    for schema, pred in ((Schema.PERM_FLOW_ID3, "id_tpl"), (Schema.PERM_FLOW_DS3, "ds_tpl")):
        out.append(_action(
            schema.value, "?id2 ?perm ?id ?id1",
            [gate, "(not (= ?id1 ?id2))", *_not_sentinel("?id1", "?id2"),
             _flow_or("?id1", "?id2", domain),
             f"({pred} ?id2 ?perm ?id)", f"(not ({pred} ?id1 ?perm ?id))"],
            [f"({pred} ?id1 ?perm ?id)"],
        ))
    for schema, pred in ((Schema.PERM_FLOW_ID4, "id_4tpl"), (Schema.PERM_FLOW_DS4, "ds_4tpl")):
        out.append(_action(
            schema.value, "?id1 ?id2 ?id3 ?perm ?id4",
            [gate, "(not (= ?id1 ?id2))", *_not_sentinel("?id1", "?id2"),
             f"({pred} ?id2 ?id3 ?perm ?id4)", _flow_or("?id1", "?id2", domain),
             f"(not ({pred} ?id1 ?id3 ?perm ?id4))"],
            [f"({pred} ?id1 ?id3 ?perm ?id4)"],
        ))
    return out


def _add_actions() -> list[str]:
    out = []
    au = _c(vocab.ANY_USER)
    for schema, p3, p4 in ((Schema.ADD_ID3, "id_tpl", "id_4tpl"), (Schema.ADD_DS3, "ds_tpl", "ds_4tpl")):
        out.append(_action(
            schema.value, "?id1 ?id2 ?perm ?id3",
            ["(compromise_selected)", "(compromised_id ?id1)", *_not_sentinel("?id2"),
             f"(or ({p4} ?id1 ?id2 ?perm ?id3) (and (= ?id1 ?id2) ({p4} ?id1 {au} ?perm ?id3)))",
             f"(not ({p3} ?id2 ?perm ?id3))"],
            [f"({p3} ?id2 ?perm ?id3)"],
        ))
    return out


def _activate_actions() -> list[str]:
    out = []
    fc = _c(vocab.FULL_CONTROL)
    for schema, pred, sentinel, kind, perm_class in (
        (Schema.ACTIVATE_ID3, "id_tpl", vocab.ANY_USER, IDENTITY_PRED, "identity_perm"),
        (Schema.ACTIVATE_DS3, "ds_tpl", vocab.ANY_DATASTORE, DATASTORE_PRED, "datastore_perm"),
    ):
        s = _c(sentinel)
        out.append(_action(
            schema.value, "?id1 ?perm ?id2",
            ["(compromise_selected)", "(compromised_id ?id1)", f"({perm_class} ?perm)",
             f"({kind} ?id2)", *_not_sentinel("?id2"),
             f"(not ({pred} ?id1 ?perm ?id2))",
             f"(or ({pred} ?id1 {fc} ?id2) ({pred} ?id1 {fc} {s}) ({pred} ?id1 ?perm {s}))"],
            [f"({pred} ?id1 ?perm ?id2)"],
        ))
    return out


def _attack_actions(goal: Goal | None) -> list[str]:
    base = ["(compromise_selected)", "(compromised_id ?id)"]
    get, put, dele = _c(vocab.S3_GET), _c(vocab.S3_PUT), _c(vocab.S3_DELETE_OBJECT)
    copy, kms = _c(vocab.S3_COPY), _c(vocab.KMS_CREATE_KEY)
    exfil = AttackType.SENSITIVE_DATA_EXFILTRATION.value
    out = [
        _action(Schema.COPY_OBJECT.value, "?id ?ds1 ?ds2", base + [
            "(has_sensitive_data ?ds1)", "(is_public_datastore ?ds2)",
            "(not (is_dummy_datastore ?ds1))", "(not (is_dummy_datastore ?ds2))",
            "(not (= ?ds1 ?ds2))",
            f"(or (ds_tpl ?id {get} ?ds1) (ds_tpl ?id {copy} ?ds1))",
            f"(ds_tpl ?id {put} ?ds2)",
        ], [f"({exfil})"]),
        _action(Schema.MOVE_OBJECT.value, "?id ?ds1 ?ds2", base + [
            "(has_sensitive_data ?ds1)",
            "(not (is_dummy_datastore ?ds1))", "(not (is_dummy_datastore ?ds2))",
            "(not (= ?ds1 ?ds2))",
            f"(ds_tpl ?id {get} ?ds1)", f"(ds_tpl ?id {dele} ?ds1)", f"(ds_tpl ?id {put} ?ds2)",
        ], [
            "(has_sensitive_data ?ds2)", "(not (has_sensitive_data ?ds1))",
            f"(when (is_public_datastore ?ds2) ({exfil}))",
        ]),
        _action(Schema.CREATE_PUBLIC_BUCKET.value, "?id ?ds", base + [
            "(is_dummy_datastore ?ds)",
            "(or " + " ".join(f"(ds_tpl ?id {_c(t)} ?ds)"
                              for t in sorted(vocab.CREATE_BUCKET_TOKENS)) + ")",
        ], ["(not (is_dummy_datastore ?ds))", "(is_public_datastore ?ds)",
            f"(ds_tpl ?id {put} ?ds)"]),
        _action(Schema.DELETE_BUCKET.value, "?id ?ds", base + [
            "(has_sensitive_data ?ds)", "(not (is_dummy_datastore ?ds))",
            f"(ds_tpl ?id {_c(vocab.DELETE_BUCKET)} ?ds)",
        ], [f"({AttackType.IMPACT.value})"]),
        _action(Schema.DELETE_IDENTITY.value, "?id ?perm ?tgt", base + [
            "(delete_perm ?perm)", "(id_tpl ?id ?perm ?tgt)",
            *[f"(not (= ?tgt {_c(n)}))" for n in sorted(vocab.RESERVED_NAMES)],
        ], [f"({AttackType.IMPACT.value})"]),
        _action(Schema.ENCRYPT_SENSITIVE_DATA.value, "?id ?ds ?key", base + [
            "(has_sensitive_data ?ds)", "(not (is_dummy_datastore ?ds))",
            "(not (versioning_enabled ?ds))", "(not (mfa_enabled ?ds))",
            f"(ds_tpl ?id {put} ?ds)", f"(ds_tpl ?id {kms} ?key)",
        ], [f"({AttackType.RANSOMWARE.value})"]),
        _action(Schema.GAIN_PERSISTENCE.value, "?id ?perm ?tgt", base + [
            "(persistence_perm ?perm)", "(id_tpl ?id ?perm ?tgt)",
        ], [f"({AttackType.PERSISTENCE.value})"]),
        _action(Schema.CHANGE_USER_LOGIN.value, "?id ?perm ?u", base + [
            "(login_perm ?perm)", "(user_pred ?u)", "(not (= ?id ?u))", "(id_tpl ?id ?perm ?u)",
        ], [f"({AttackType.LATERAL_MOVEMENT.value})"]),
        _action(Schema.REACH_ADMIN_POLICY.value, "?id", base + [
            f"(id_tpl ?id {_c(vocab.HAS_POLICY)} {_c(vocab.ADMIN_POLICY)})",
        ], [f"({AttackType.PRIVILEGE_ESCALATION.value})"]),
    ]
    if isinstance(goal, CustomGoal):
        pred = {"id3": "id_tpl", "ds3": "ds_tpl"}
        needs = [f"({pred[form]} ?id {_c(perm)} {_c(target)})" for form, perm, target in goal.requires]
        out.append(_action(Schema.ENABLE_ATTACK.value, "?id ?g",
                           base + [f"(= ?g {_c(goal.name)})", *needs], [f"({_c(goal.name)})"]))
    return out


def emit_domain(mode: FlowMode | Domain | None = None, goal: Goal | None = None) -> PddlDocument:
    """Domain file for one flow granularity (single-source binding is not encoded)."""
    domain = as_domain(mode)
    if domain.constraint is AssumeConstraint.SINGLE_SOURCE:
        raise PddlError("the single-source assume constraint has no PDDL encoding")
    constants = constant_names(domain, goal)
    aliases = alias_table(constants)
    goal_preds = [a.value for a in AttackType]
    if isinstance(goal, CustomGoal):
        goal_preds.append(_c(goal.name))
    lines = [
        f"(define (domain {DOMAIN_NAME})",
        f"  (:requirements {' '.join(REQUIREMENTS)})",
        "  (:constants " + " ".join(sorted(aliases)) + ")",
        "  (:predicates",
        "    (id_tpl ?a ?p ?b) (ds_tpl ?a ?p ?d) (id_4tpl ?a ?b ?p ?c) (ds_4tpl ?a ?b ?p ?d)",
        "    " + " ".join(f"({p} ?x)" for p in _STATUS_PREDS),
        "    (compromise_selected)",
        "    " + " ".join(f"({g})" for g in goal_preds) + ")",
        "",
    ]
    body = [_action(
        Schema.SELECT_COMPROMISED_USER.value, "?id",
        ["(user_pred ?id)", "(not (compromise_selected))"],
        ["(compromised_id ?id)", "(compromise_selected)"],
    )]
    body += _flow_actions(domain)
    body += _add_actions()
    body += _activate_actions()
    body += _attack_actions(goal)
    text = "\n".join(lines) + "\n".join(body) + ")\n"
    return PddlDocument(DocKind.DOMAIN, text, aliases)


# --------------------------------------------------------------------------- problem


def _problem_facts(state: IamState, domain: Domain) -> list[tuple[str, ...]]:
    facts: list[tuple[str, ...]] = []
    for t in state.tuples:
        facts.append((_TUPLE_PRED[type(t)], *t.fields()))
    for f in state.facts:
        facts.append((f.pred, f.arg))
    for c in state.compromised:
        facts.append(("compromised_id", c))
    if state.compromised:
        facts.append(("compromise_selected",))
    for flag in state.attack_flags:
        facts.append((flag,))
    for token in domain.tokens(Family.IDENTITY):
        facts.append(("identity_perm", token))
    for token in domain.tokens(Family.DATASTORE):
        facts.append(("datastore_perm", token))
    for pred, tokens in _PERM_CLASSES:
        facts.extend((pred, t) for t in tokens)
    return facts


def emit_problem(initial: IamState, snapshot: object | None, goal: Goal,
                 mode: FlowMode | Domain | None = None, name: str = "cloudlens-problem"
                 ) -> PddlDocument:
    """Problem file: every tuple and status fact of ``initial``; goal is the attack flag.

    ``snapshot`` (if given) contributes declared entities that appear in no fact.
    """
    domain = as_domain(mode)
    constants = set(constant_names(domain, goal))
    facts = _problem_facts(initial, domain)
    names = {arg for fact in facts for arg in fact[1:]}
    if snapshot is not None:
        names |= set(snapshot.entity_names())  # type: ignore[attr-defined]
    objects = sorted(names - constants)
    aliases = alias_table(set(objects) | constants)
    # objects must not collide with constants after sanitizing
    lines = [
        f"(define (problem {sanitize(name)})",
        f"  (:domain {DOMAIN_NAME})",
        "  (:objects" + ("".join(f"\n    {sanitize(o)}" for o in objects)) + ")",
        "  (:init",
    ]
    rendered = sorted({"(" + " ".join([f[0], *(sanitize(a) for a in f[1:])]) + ")" for f in facts})
    lines += [f"    {r}" for r in rendered]
    lines[-1] += ")"
    if not rendered:
        lines[-1] = "  (:init)"
    lines.append(f"  (:goal ({sanitize(goal_flag(goal))})))")
    return PddlDocument(DocKind.PROBLEM, "\n".join(lines) + "\n", aliases)


# --------------------------------------------------------------------------- plan files


class PlanParseError(ValueError):
    def __init__(self, lineno: int, message: str) -> None:
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


_SCHEMA_BY_NAME = {s.value.lower(): s for s in Schema}
# parameter positions holding permission tokens
_PERM_SLOTS = {
    Schema.PERM_FLOW_ID3: 1, Schema.PERM_FLOW_DS3: 1, Schema.PERM_FLOW_ID4: 3,
    Schema.PERM_FLOW_DS4: 3, Schema.ADD_ID3: 2, Schema.ADD_DS3: 2, Schema.ACTIVATE_ID3: 1,
    Schema.ACTIVATE_DS3: 1, Schema.DELETE_IDENTITY: 1, Schema.GAIN_PERSISTENCE: 1,
    Schema.CHANGE_USER_LOGIN: 1,
}
_RESERVED_LOWER = {n.lower(): n for n in vocab.RESERVED_NAMES}


def _top_level_forms(text: str) -> list[tuple[int, list]]:
    """Top-level s-expressions with their starting line; commas count as spaces."""
    forms: list[tuple[int, list]] = []
    stack: list[list] = []
    start = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0]
        for tok in re.findall(r"\(|\)|[^\s(),]+", line):
            if tok == "(":
                if not stack:
                    start = lineno
                stack.append([])
            elif tok == ")":
                if not stack:
                    raise PlanParseError(lineno, "unbalanced ')'")
                done = stack.pop()
                if stack:
                    stack[-1].append(done)
                else:
                    forms.append((start, done))
            else:
                if not stack:
                    raise PlanParseError(lineno, f"unexpected token {tok!r} outside parentheses")
                stack[-1].append(tok)
    if stack:
        raise PlanParseError(start, "unterminated parenthesis")
    return forms


def _flatten(form: list) -> tuple[str, list[str]] | None:
    """(name, args) for both ``(name a b)`` and ``(:action name :parameters (a b))``."""
    if not form:
        return None
    if isinstance(form[0], str) and form[0].lower() == ":action":
        if len(form) < 2 or not isinstance(form[1], str):
            return None
        args: list[str] = []
        rest = form[2:]
        if rest and isinstance(rest[0], str) and rest[0].lower() == ":parameters":
            rest = rest[1:]
        for item in rest:
            if isinstance(item, list):
                if any(isinstance(x, list) for x in item):
                    return None
                args.extend(item)
            else:
                args.append(item)
        return form[1], args
    if any(isinstance(x, list) for x in form) or not isinstance(form[0], str):
        return None
    return form[0], list(form[1:])


def _resolve_arg(arg: str, is_perm: bool, aliases: Mapping[str, str]) -> str:
    if arg in aliases:
        return aliases[arg]
    if arg.lower() in aliases:
        return aliases[arg.lower()]
    if is_perm:
        try:
            return vocab.canonical_token(arg)
        except KeyError:
            return arg
    return _RESERVED_LOWER.get(arg.lower(), arg)


def parse_plan_file(text: str, aliases: Mapping[str, str] | None = None,
                    extra_tokens: Iterable[str] = ()) -> AttackPlan:
    """Read a plan written as one action s-expression per entry.

    ``aliases`` maps PDDL identifiers back to original names (see
    ``PddlDocument.aliases``).  Without it, permission tokens are matched
    case-insensitively against the vocabulary and other names are kept.
    """
    table = dict(aliases or {})
    for t in extra_tokens:
        table.setdefault(t.lower(), t)
    actions = []
    for lineno, form in _top_level_forms(text):
        flat = _flatten(form)
        if flat is None:
            raise PlanParseError(lineno, "expected (action-name args...)")
        name, args = flat
        schema = _SCHEMA_BY_NAME.get(name.lower())
        if schema is None:
            raise PlanParseError(lineno, f"unknown action {name!r}")
        if len(args) != ARITY[schema]:
            raise PlanParseError(
                lineno, f"{schema.value} takes {ARITY[schema]} arguments, got {len(args)}"
            )
        perm_slot = _PERM_SLOTS.get(schema)
        params = tuple(_resolve_arg(a, i == perm_slot, table) for i, a in enumerate(args))
        actions.append(GroundAction(schema, params))
    return AttackPlan(tuple(actions))


def format_plan(plan: AttackPlan) -> str:
    return "".join(str(a) + "\n" for a in plan) + f"; cost = {plan.cost} (unit cost)\n"
