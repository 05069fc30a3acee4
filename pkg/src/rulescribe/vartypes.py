"""Variable entity-type assignment: schema-based majority vote over the KG,
id-prefix fallback, and LLM-based inference from sampled rule instances."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .engine import GroundedRule
from .rules import Rule, Variable, render_rule
from .store import TripleStore, TypeCatalog, infer_type_from_id

MAX_VOTE_OCCURRENCES = 10_000  # per predicate position; bounds cost on large predicates


class TypingError(ValueError):
    def __init__(self, message: str, raw_completion: str | None = None):
        super().__init__(message)
        self.raw_completion = raw_completion


@dataclass(frozen=True)
class TypedVariable:
    variable: str
    type_label: str
    method: str  # schema | id-prefix | llm-inferred
    confidence_note: str | None = None

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "type_label": self.type_label,
            "method": self.method,
            "confidence_note": self.confidence_note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TypedVariable":
        return cls(d["variable"], d["type_label"], d["method"], d.get("confidence_note"))


def _variable_positions(rule: Rule) -> dict[str, list[tuple[str, str]]]:
    """variable -> [(relation, 's'|'o'), ...] over every atom it occupies."""
    positions: dict[str, list[tuple[str, str]]] = {}
    for atom in rule.atoms():
        for term, pos in ((atom.subject, "s"), (atom.object, "o")):
            if isinstance(term, Variable):
                positions.setdefault(term.name, []).append((atom.relation, pos))
    return positions


def _position_votes(store: TripleStore, catalog: TypeCatalog | None, relation: str, pos: str) -> Counter:
    """Type frequencies over (up to MAX_VOTE_OCCURRENCES) entity occurrences
    in one predicate position. catalog None votes by id prefix instead."""
    votes: Counter = Counter()
    pid = store.predicate_id(relation)
    for s, o in store.pairs(pid)[:MAX_VOTE_OCCURRENCES]:
        eid = s if pos == "s" else o
        if catalog is not None:
            for t in catalog.types_of(eid):
                votes[t] += 1
        else:
            inferred = infer_type_from_id(store.entity_label(eid))
            if inferred:
                votes[inferred] += 1
    return votes


def _top(votes: Counter) -> str:
    return min(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def schema_variable_types(rule: Rule, store: TripleStore, catalog: TypeCatalog) -> list[TypedVariable]:
    """Per-variable majority type over the entities seen in each predicate
    position the variable occupies, intersected across positions; falls back
    to id-prefix voting when the catalog knows none of the entities.

    Raises TypingError("untypeable variable ...") when neither source yields
    a type. Deterministic: ties break lexicographically.
    """
    if catalog.empty:
        raise TypingError("empty type catalog")
    out: list[TypedVariable] = []
    for var, positions in _variable_positions(rule).items():
        per_pos = [_position_votes(store, catalog, rel, pos) for rel, pos in positions]
        non_empty = [v for v in per_pos if v]
        method = "schema"
        if not non_empty:
            per_pos = [_position_votes(store, None, rel, pos) for rel, pos in positions]
            non_empty = [v for v in per_pos if v]
            method = "id-prefix"
            if not non_empty:
                raise TypingError(f"untypeable variable {var}")
        tops = [_top(v) for v in non_empty]
        note = None
        if len(set(tops)) == 1:
            chosen = tops[0]
        else:
            combined: Counter = Counter()
            for v in non_empty:
                combined.update(v)
            chosen = _top(combined)
            note = "position types disagree: " + ", ".join(sorted(set(tops)))
        out.append(TypedVariable(var, chosen, method, note))
    return out


TYPING_PROMPT_VERSION = "typing-v1"

_TYPING_TEMPLATE = """You are given a logical rule mined from a knowledge graph and {n} concrete instance(s) of it.
Relation labels may follow the pattern /[domain]/[type]/[label]; the final label names the relationship.

Rule:
{rule}

Instances:
{instances}

For each variable of the rule, infer the type of entity that can instantiate it.
Answer with one line per variable, in exactly this format and nothing else:
?x = <type>
"""


def build_typing_prompt(rule: Rule, instances: Sequence[GroundedRule]) -> str:
    rendered = []
    for g in instances:
        parts = [" | ".join(atom) for atom in g.body] + ["=>", " | ".join(g.head)]
        rendered.append("  " + "  ".join(parts))
    return _TYPING_TEMPLATE.format(
        n=len(instances),
        rule=render_rule(rule, "machine"),
        instances="\n".join(rendered),
    )


def _parse_typing_completion(text: str, variables: Sequence[str]) -> dict[str, str]:
    assignments: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line or not line.startswith("?"):
            raise TypingError(f"line does not match '?var = <type>': {line!r}", text)
        name, _, value = line.partition("=")
        name, value = name.strip(), value.strip()
        if name not in variables:
            raise TypingError(f"unknown variable {name!r} in completion", text)
        if name in assignments:
            raise TypingError(f"duplicate assignment for {name!r}", text)
        if not value:
            raise TypingError(f"empty type for {name!r}", text)
        assignments[name] = value
    missing = [v for v in variables if v not in assignments]
    if missing:
        raise TypingError(f"completion missing variables: {', '.join(missing)}", text)
    return assignments


def llm_variable_types(
    rule: Rule,
    instances: Sequence[GroundedRule],
    gateway,
    config,
    max_retries: int = 2,
) -> list[TypedVariable]:
    """One typing prompt per rule; the completion must follow the rigid
    `?var = <type>` line grammar. Retries twice, then raises TypingError
    carrying the raw completion."""
    variables = rule.variables()
    if not variables:
        return []
    if not 1 <= len(instances) <= 5:
        raise ValueError("llm typing needs between 1 and 5 instances")
    prompt = build_typing_prompt(rule, instances)
    last_error: TypingError | None = None
    for _attempt in range(1 + max_retries):
        completion = gateway.complete(prompt, config)
        try:
            assignments = _parse_typing_completion(completion.text, variables)
        except TypingError as err:
            last_error = err
            continue
        return [TypedVariable(v, assignments[v], "llm-inferred") for v in variables]
    raise last_error  # type: ignore[misc]


def merge_type_opinions(
    schema: Sequence[TypedVariable],
    llm: Sequence[TypedVariable],
) -> list[TypedVariable]:
    """Schema answers win; an LLM disagreement (e.g. an overspecific subtype
    inferred from narrow instances) is surfaced in confidence_note."""
    llm_by_var = {tv.variable: tv for tv in llm}
    out: list[TypedVariable] = []
    for tv in schema:
        other = llm_by_var.pop(tv.variable, None)
        if other is not None and other.type_label != tv.type_label:
            extra = f"llm suggested '{other.type_label}'"
            note = f"{tv.confidence_note}; {extra}" if tv.confidence_note else extra
            out.append(TypedVariable(tv.variable, tv.type_label, tv.method, note))
        else:
            out.append(tv)
    out.extend(llm_by_var.values())
    return out
