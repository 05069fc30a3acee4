"""Horn rule model: terms, atoms, rules, parsing/rendering/validation in the
miner's textual format, and AMIE export reading."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .store import humanize_predicate

DEFAULT_MAX_ATOMS = 3

_VAR_RE = re.compile(r"^\?[A-Za-z][A-Za-z0-9_]*$")
_MULTISPACE = re.compile(r" {2,}")


class RuleParseError(ValueError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str  # includes the leading "?"

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Constant:
    label: str

    def __str__(self) -> str:
        return self.label


Term = Variable | Constant


@dataclass(frozen=True)
class Atom:
    subject: Term
    relation: str
    object: Term

    def variables(self) -> tuple[str, ...]:
        return tuple(t.name for t in (self.subject, self.object) if isinstance(t, Variable))


@dataclass(frozen=True)
class Rule:
    body: tuple[Atom, ...]
    head: Atom

    def atoms(self) -> tuple[Atom, ...]:
        return self.body + (self.head,)

    def variables(self) -> tuple[str, ...]:
        """Distinct variable names in first-occurrence order."""
        seen: dict[str, None] = {}
        for atom in self.atoms():
            for name in atom.variables():
                seen.setdefault(name)
        return tuple(seen)

    @property
    def rule_id(self) -> str:
        """Stable content hash of the canonical machine rendering."""
        text = render_rule(self, "machine")
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class RuleMetrics:
    support: int
    head_coverage: float
    std_confidence: float


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _parse_term(token: str) -> Term:
    if token.startswith("?"):
        if not _VAR_RE.match(token):
            raise RuleParseError(f"invalid variable name {token!r}")
        return Variable(token)
    if not token:
        raise RuleParseError("empty constant")
    return Constant(token)


def _atom_fields(chunk: str) -> list[str]:
    """Split one atom into its 3 fields: tab first, then 2+ spaces, then
    single spaces. Tab-delimited fields keep internal single spaces."""
    text = chunk.strip()
    if "\t" in text:
        fields = [f for f in (part.strip() for part in text.split("\t")) if f]
        if len(fields) != 3:
            raise RuleParseError(f"atom must have 3 tab-separated fields, got {len(fields)}: {text!r}")
        return fields
    tokens = text.split()
    if len(tokens) == 3:
        return tokens
    fields = [f for f in (part.strip() for part in _MULTISPACE.split(text)) if f]
    if len(fields) == 3:
        return fields
    raise RuleParseError(f"atom must have 3 fields, got {len(tokens)}: {text!r}")


def _parse_atom(chunk: str) -> Atom:
    s, r, o = _atom_fields(chunk)
    return Atom(_parse_term(s), r, _parse_term(o))


_AMP_SPLIT = re.compile(r"(?:^|(?<=\s))&(?=\s|$)")


def _parse_side(text: str, side: str) -> list[Atom]:
    text = text.strip()
    if not text:
        raise RuleParseError(f"empty {side}")
    if _AMP_SPLIT.search(text):
        return [_parse_atom(chunk) for chunk in _AMP_SPLIT.split(text)]
    if "\t" in text:
        return [_parse_atom(text)]
    tokens = text.split()
    if len(tokens) > 3 and len(tokens) % 3 == 0:
        # AMIE space format: body atoms concatenated without "&"
        return [_parse_atom(" ".join(tokens[i : i + 3])) for i in range(0, len(tokens), 3)]
    return [_parse_atom(text)]


def _connected(atoms: tuple[Atom, ...]) -> bool:
    """Single component in the graph whose nodes are atoms and whose edges
    link atoms sharing a variable."""
    if len(atoms) <= 1:
        return True
    reached = {0}
    frontier = [0]
    var_sets = [set(a.variables()) for a in atoms]
    while frontier:
        i = frontier.pop()
        for j in range(len(atoms)):
            if j not in reached and var_sets[i] & var_sets[j]:
                reached.add(j)
                frontier.append(j)
    return len(reached) == len(atoms)


def parse_rule(text: str, max_atoms: int = DEFAULT_MAX_ATOMS) -> Rule:
    """Parse `<atom> [& <atom>] => <atom>`.

    Atom fields are tab- or multispace-delimited (tab keeps spaces inside
    constant labels); terms starting with "?" are variables. Raises
    RuleParseError naming the defect for a missing "=>", malformed atoms,
    too many atoms, or a disconnected variable graph.
    """
    parts = text.split("=>")
    if len(parts) < 2:
        raise RuleParseError("missing '=>' separator")
    if len(parts) > 2:
        raise RuleParseError("multiple '=>' separators")
    body = _parse_side(parts[0], "body")
    head_atoms = _parse_side(parts[1], "head")
    if len(head_atoms) != 1:
        raise RuleParseError("head must be a single atom")
    rule = Rule(tuple(body), head_atoms[0])
    n = len(rule.atoms())
    if n > max_atoms:
        raise RuleParseError(f"rule has {n} atoms, maximum is {max_atoms}")
    if not _connected(rule.atoms()):
        raise RuleParseError("disconnected rule: atoms do not share variables")
    return rule


def _machine_atom(atom: Atom) -> str:
    return f"{atom.subject}\t{atom.relation}\t{atom.object}"


def _pretty_atom(atom: Atom) -> str:
    return f"{atom.subject} {humanize_predicate(atom.relation)} {atom.object}"


def render_rule(rule: Rule, style: str = "machine") -> str:
    """machine: canonical text that round-trips through parse_rule.
    pretty: `IF ... AND ... THEN ...` with humanized relation labels."""
    if style == "machine":
        return " & ".join(_machine_atom(a) for a in rule.body) + " => " + _machine_atom(rule.head)
    if style == "pretty":
        clauses = "IF " + " AND ".join(_pretty_atom(a) for a in rule.body)
        return f"{clauses} THEN {_pretty_atom(rule.head)}"
    raise ValueError(f"unknown style {style!r}")


def validate_rule(
    rule: Rule,
    closed_required: bool = False,
    max_atoms: int = DEFAULT_MAX_ATOMS,
) -> ValidationReport:
    """Collect policy violations (atom count, connectivity, closedness)
    without raising."""
    report = ValidationReport()
    atoms = rule.atoms()
    if len(atoms) > max_atoms:
        report.violations.append(f"atom count {len(atoms)} exceeds maximum {max_atoms}")
    if not _connected(atoms):
        report.violations.append("atoms do not form a single variable-connected component")
    if closed_required:
        for name in rule.variables():
            n_atoms = sum(1 for atom in atoms if name in atom.variables())
            if n_atoms < 2:
                report.violations.append(f"variable {name} occurs in only {n_atoms} atom(s); closed rules need 2")
    return report


# -- rule files ---------------------------------------------------------------

@dataclass(frozen=True)
class AmieColumns:
    """Column positions in an AMIE TSV export; versions differ, so remap as
    needed (rule text is column 0 in 3.x)."""

    rule: int = 0
    head_coverage: int = 1
    std_confidence: int = 2


def read_rules(lines: Iterable[str], max_atoms: int = DEFAULT_MAX_ATOMS) -> Iterator[Rule]:
    """One machine-format rule per line; blank lines and '#' comments skipped."""
    for line in lines:
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield parse_rule(line, max_atoms=max_atoms)


def read_amie_export(
    lines: Iterable[str],
    columns: AmieColumns = AmieColumns(),
    max_atoms: int = DEFAULT_MAX_ATOMS,
) -> Iterator[tuple[Rule, dict[str, float]]]:
    """Parse an AMIE TSV export; yields (rule, reported-metrics). Reported
    head coverage / confidence come from the export, not recomputation."""
    for line in lines:
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#") or line.startswith("Rule\t"):
            continue
        cells = line.split("\t")
        rule = parse_rule(cells[columns.rule], max_atoms=max_atoms)
        reported: dict[str, float] = {}
        for key, col in (("head_coverage", columns.head_coverage), ("std_confidence", columns.std_confidence)):
            if col < len(cells):
                try:
                    reported[key] = float(cells[col])
                except ValueError:
                    pass
        yield rule, reported
