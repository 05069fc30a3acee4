"""Rule instantiation, metrics, and desk-scale mining over a TripleStore.

Support counts distinct head (subject, object) entity pairs for which the
body and the head both hold in the store; head coverage divides support by
the head relation's fact count; standard confidence divides it by the number
of distinct head pairs for which the body alone holds. Semantics match an
exhaustive nested-loop enumeration of all variable bindings, including the
degenerate case of head variables the body does not bind (those range over
every interned entity).
"""

from __future__ import annotations

import itertools
import random
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator

from .rules import Atom, Constant, Rule, RuleMetrics, Variable, render_rule
from .store import TripleStore


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class Instantiation:
    """One satisfying assignment of the body variables, as (name, entity-id)
    pairs in first-occurrence order."""

    bindings: tuple[tuple[str, int], ...]

    def as_dict(self) -> dict[str, int]:
        return dict(self.bindings)


@dataclass(frozen=True)
class GroundedRule:
    rule_id: str
    bindings: tuple[tuple[str, str], ...]  # variable -> entity label
    body: tuple[tuple[str, str, str], ...]
    head: tuple[str, str, str]
    head_in_kg: bool

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "bindings": dict(self.bindings),
            "body": [list(a) for a in self.body],
            "head": list(self.head),
            "head_in_kg": self.head_in_kg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundedRule":
        return cls(
            rule_id=d["rule_id"],
            bindings=tuple(sorted(d["bindings"].items())),
            body=tuple(tuple(a) for a in d["body"]),
            head=tuple(d["head"]),
            head_in_kg=bool(d["head_in_kg"]),
        )


# -- compiled body join -------------------------------------------------------

_VAR = 0
_CONST = 1


def _compile_body(rule: Rule, store: TripleStore):
    """Body atoms as (pid, (kind, value) subject, (kind, value) object) with
    variables numbered in first-occurrence order. Unknown predicate -> pid
    None; unknown constant -> value None (both unsatisfiable)."""
    var_ids: dict[str, int] = {}
    atoms = []
    for atom in rule.body:
        slots = []
        for term in (atom.subject, atom.object):
            if isinstance(term, Variable):
                idx = var_ids.setdefault(term.name, len(var_ids))
                slots.append((_VAR, idx))
            else:
                slots.append((_CONST, store.entity_id(term.label)))
        atoms.append((store.predicate_id(atom.relation), slots[0], slots[1]))
    return list(var_ids), atoms


def _order_atoms(atoms, store: TripleStore):
    """Greedy join order: most-bound atoms first (constants count as bound),
    ties broken by ascending predicate fact count."""
    remaining = list(atoms)
    ordered = []
    bound: set[int] = set()

    def cost(atom):
        pid, s, o = atom
        unbound = sum(1 for kind, val in (s, o) if kind == _VAR and val not in bound)
        return (unbound, store.fact_count(pid))

    while remaining:
        best = min(remaining, key=cost)
        remaining.remove(best)
        ordered.append(best)
        for kind, val in (best[1], best[2]):
            if kind == _VAR:
                bound.add(val)
    return ordered


def _body_bindings(atoms, n_vars: int, store: TripleStore) -> Iterator[tuple[int, ...]]:
    """Backtracking enumeration of all satisfying variable assignments for the
    ordered body atoms. Each full assignment is produced exactly once."""
    binding: list[int | None] = [None] * n_vars

    def resolve(slot):
        kind, val = slot
        if kind == _CONST:
            return val if val is not None else -1  # unknown constant: unsatisfiable
        return binding[val]

    def rec(i: int) -> Iterator[tuple[int, ...]]:
        if i == len(atoms):
            yield tuple(binding)  # all body vars assigned
            return
        pid, s_slot, o_slot = atoms[i]
        if pid is None:
            return
        s_val = resolve(s_slot)
        o_val = resolve(o_slot)
        if s_val == -1 or o_val == -1:
            return
        if s_val is not None and o_val is not None:
            if store.has_fact(s_val, pid, o_val):
                yield from rec(i + 1)
            return
        if s_val is not None:
            for o in store.objects(pid, s_val):
                binding[o_slot[1]] = o
                yield from rec(i + 1)
            binding[o_slot[1]] = None
            return
        if o_val is not None:
            for s in store.subjects(pid, o_val):
                binding[s_slot[1]] = s
                yield from rec(i + 1)
            binding[s_slot[1]] = None
            return
        same_var = s_slot[1] == o_slot[1]
        for s, o in store.pairs(pid):
            if same_var:
                if s != o:
                    continue
                binding[s_slot[1]] = s
                yield from rec(i + 1)
                binding[s_slot[1]] = None
            else:
                binding[s_slot[1]] = s
                binding[o_slot[1]] = o
                yield from rec(i + 1)
                binding[s_slot[1]] = None
                binding[o_slot[1]] = None
        return

    if n_vars == 0 and not atoms:
        return
    yield from rec(0)


def instantiate(rule: Rule, store: TripleStore, limit: int | None = None) -> Iterator[Instantiation]:
    """Stream the distinct full body-variable bindings satisfying the body,
    joining atoms in ascending selectivity order. Terminates at `limit`."""
    var_names, atoms = _compile_body(rule, store)
    ordered = _order_atoms(atoms, store)
    stream = _body_bindings(ordered, len(var_names), store)
    if limit is not None:
        stream = itertools.islice(stream, limit)
    for values in stream:
        yield Instantiation(tuple(zip(var_names, values)))


# -- metrics ------------------------------------------------------------------

def _head_slot(term, var_names: list[str], store: TripleStore):
    """('b', var-index) body-bound variable; ('f', name) free head variable;
    ('c', eid-or-('?', label)) constant."""
    if isinstance(term, Variable):
        if term.name in var_names:
            return ("b", var_names.index(term.name))
        return ("f", term.name)
    eid = store.entity_id(term.label)
    return ("c", eid if eid is not None else ("?", term.label))


def compute_metrics(rule: Rule, store: TripleStore) -> RuleMetrics:
    """Support, head coverage, and standard confidence of a rule.

    Relations missing from the store yield all-zero metrics; an empty
    body-pair denominator yields confidence 0.
    """
    head_pid = store.predicate_id(rule.head.relation)
    head_pairs = store.pair_set(head_pid)
    head_n = store.fact_count(head_pid)

    var_names, atoms = _compile_body(rule, store)
    ordered = _order_atoms(atoms, store)
    hs = _head_slot(rule.head.subject, var_names, store)
    ho = _head_slot(rule.head.object, var_names, store)

    free = [slot for slot in (hs, ho) if slot[0] == "f"]
    if not free:
        def value(slot, binding):
            return binding[slot[1]] if slot[0] == "b" else slot[1]

        pairs: set = set()
        support = 0
        for binding in _body_bindings(ordered, len(var_names), store):
            pair = (value(hs, binding), value(ho, binding))
            if pair in pairs:
                continue
            pairs.add(pair)
            if pair in head_pairs:
                support += 1
        n_body = len(pairs)
    else:
        n_entities = store.n_entities
        bindings = _body_bindings(ordered, len(var_names), store)
        if len(free) == 2:
            satisfiable = next(bindings, None) is not None
            if not satisfiable:
                n_body = support = 0
            elif hs[1] == ho[1]:  # same free variable in both positions
                n_body = n_entities
                support = sum(1 for s, o in head_pairs if s == o)
            else:
                n_body = n_entities * n_entities
                support = len(head_pairs)
        else:
            bound_slot, free_is_object = (hs, True) if ho[0] == "f" else (ho, False)
            values: set = set()
            for binding in bindings:
                values.add(binding[bound_slot[1]] if bound_slot[0] == "b" else bound_slot[1])
            n_body = len(values) * n_entities
            if free_is_object:
                support = sum(1 for s, _o in head_pairs if s in values)
            else:
                support = sum(1 for _s, o in head_pairs if o in values)

    hc = support / head_n if head_n else 0.0
    conf = support / n_body if n_body else 0.0
    return RuleMetrics(support=support, head_coverage=hc, std_confidence=conf)


# -- grounded instances ---------------------------------------------------------

def _ground_atom(atom: Atom, binding: dict[str, int], store: TripleStore) -> tuple[str, str, str]:
    def label(term) -> str:
        if isinstance(term, Constant):
            return term.label
        if term.name not in binding:
            raise EngineError(f"cannot ground head variable {term.name}: not bound by the body")
        return store.entity_label(binding[term.name])

    return (label(atom.subject), atom.relation, label(atom.object))


def ground(rule: Rule, inst: Instantiation, store: TripleStore) -> GroundedRule:
    binding = inst.as_dict()
    body = tuple(_ground_atom(a, binding, store) for a in rule.body)
    head = _ground_atom(rule.head, binding, store)
    hs = store.entity_id(head[0])
    ho = store.entity_id(head[2])
    pid = store.predicate_id(head[1])
    in_kg = hs is not None and ho is not None and pid is not None and store.has_fact(hs, pid, ho)
    labels = tuple((name, store.entity_label(eid)) for name, eid in inst.bindings)
    return GroundedRule(rule.rule_id, labels, body, head, in_kg)


def sample_instances(rule: Rule, store: TripleStore, k: int, seed: int) -> list[GroundedRule]:
    """Up to k distinct groundings drawn uniformly from the instantiation
    stream (reservoir sampling); deterministic per seed."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = random.Random(seed)
    reservoir: list[Instantiation] = []
    for i, inst in enumerate(instantiate(rule, store)):
        if i < k:
            reservoir.append(inst)
        else:
            j = rng.randrange(i + 1)
            if j < k:
                reservoir[j] = inst
    return [ground(rule, inst, store) for inst in reservoir]


# -- mining ---------------------------------------------------------------------

_A, _B, _C = Variable("?a"), Variable("?b"), Variable("?c")


def _atom_sort_key(atom: Atom):
    return (atom.relation, str(atom.subject), str(atom.object))


def _top_entities(store: TripleStore, pid: int, position: str, k: int) -> list[int]:
    """Most frequent entities in a predicate position, count desc then label asc."""
    counts = Counter(s if position == "s" else o for s, o in store.pairs(pid))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], store.entity_label(kv[0])))
    return [eid for eid, _n in ranked[:k]]


def candidate_rules(
    store: TripleStore,
    max_atoms: int = 3,
    constant_budget: int = 0,
    constant_candidates: int = 3,
) -> Iterator[Rule]:
    """Canonical closed, connected candidate rules over the store's predicates.

    Variables are ?a/?b (head) plus ?c (chain); atoms never repeat a variable
    in both positions, duplicate body atoms are skipped, and the head atom
    never reappears in the body. With constant_budget >= 1 the 2-atom family
    with one constant in the body atom and one in the head atom is added,
    constants drawn from the top-`constant_candidates` entities per
    predicate position.
    """
    preds = sorted(store.predicate_labels())
    for hp in preds:
        head = Atom(_A, hp, _B)
        one_body = [Atom(u, bp, v) for bp in preds for (u, v) in ((_A, _B), (_B, _A))]
        one_body.sort(key=_atom_sort_key)
        for atom in one_body:
            if atom == head:
                continue
            yield Rule((atom,), head)
        if max_atoms >= 3:
            for i, b1 in enumerate(one_body):
                if b1 == head:
                    continue
                for b2 in one_body[i + 1 :]:
                    if b2 == head:
                        continue
                    yield Rule((b1, b2), head)
            a_side = [Atom(u, bp, v) for bp in preds for (u, v) in ((_A, _C), (_C, _A))]
            b_side = [Atom(u, bp, v) for bp in preds for (u, v) in ((_B, _C), (_C, _B))]
            for b1 in a_side:
                for b2 in b_side:
                    body = tuple(sorted((b1, b2), key=_atom_sort_key))
                    yield Rule(body, head)
    if constant_budget >= 1:
        yield from _constant_candidates(store, preds, constant_candidates)


def _constant_candidates(store: TripleStore, preds: list[str], k: int) -> Iterator[Rule]:
    tops: dict[tuple[int, str], list[int]] = {}

    def top(pid: int, pos: str) -> list[int]:
        key = (pid, pos)
        if key not in tops:
            tops[key] = _top_entities(store, pid, pos, k)
        return tops[key]

    for hp in preds:
        hpid = store.predicate_id(hp)
        for bp in preds:
            bpid = store.predicate_id(bp)
            for b_pos in ("o", "s"):
                for c1 in top(bpid, "o" if b_pos == "o" else "s"):
                    const1 = Constant(store.entity_label(c1))
                    b_atom = Atom(_A, bp, const1) if b_pos == "o" else Atom(const1, bp, _A)
                    for h_pos in ("o", "s"):
                        for c2 in top(hpid, "o" if h_pos == "o" else "s"):
                            const2 = Constant(store.entity_label(c2))
                            h_atom = Atom(_A, hp, const2) if h_pos == "o" else Atom(const2, hp, _A)
                            if b_atom == h_atom:
                                continue
                            yield Rule((b_atom,), h_atom)


def mine_rules(
    store: TripleStore,
    min_hc: float = 0.1,
    min_conf: float = 0.1,
    max_atoms: int = 3,
    constant_budget: int = 0,
    constant_candidates: int = 3,
) -> list[tuple[Rule, RuleMetrics]]:
    """Every candidate rule whose head coverage and standard confidence meet
    the thresholds, with metrics attached, ordered by head relation label then
    canonical text."""
    if not (0 < min_hc <= 1) or not (0 < min_conf <= 1):
        raise ValueError("thresholds must lie in (0, 1]")
    if max_atoms not in (2, 3):
        raise ValueError("max_atoms must be 2 or 3")
    out: list[tuple[Rule, RuleMetrics]] = []
    seen: set[str] = set()
    for rule in candidate_rules(store, max_atoms, constant_budget, constant_candidates):
        text = render_rule(rule, "machine")
        if text in seen:
            continue
        seen.add(text)
        metrics = compute_metrics(rule, store)
        if metrics.support > 0 and metrics.head_coverage >= min_hc and metrics.std_confidence >= min_conf:
            out.append((rule, metrics))
    out.sort(key=lambda rm: (rm[0].head.relation, render_rule(rm[0], "machine")))
    return out
