"""In-memory knowledge-graph triple store: TSV ingest, interned ids,
per-predicate join indexes, and predicate-label / entity-type utilities."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator


class IngestError(ValueError):
    """Malformed ingest input. Carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class Interner:
    """Append-only label <-> integer-id dictionary. Ids are dense from 0."""

    __slots__ = ("_ids", "_labels")

    def __init__(self) -> None:
        self._ids: dict[str, int] = {}
        self._labels: list[str] = []

    def intern(self, label: str) -> int:
        idx = self._ids.get(label)
        if idx is None:
            idx = len(self._labels)
            self._ids[label] = idx
            self._labels.append(label)
        return idx

    def get(self, label: str) -> int | None:
        return self._ids.get(label)

    def label(self, idx: int) -> str:
        return self._labels[idx]

    def labels(self) -> list[str]:
        return list(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._ids


def _iter_lines(source) -> Iterator[str]:
    """Yield text lines from a path, file object, bytes, or iterable of lines."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from fh
        return
    if isinstance(source, bytes):
        yield from io.StringIO(source.decode("utf-8"))
        return
    if isinstance(source, io.RawIOBase) or (hasattr(source, "read") and "b" in getattr(source, "mode", "")):
        yield from io.TextIOWrapper(source, encoding="utf-8")
        return
    if hasattr(source, "read"):  # text file object
        yield from source
        return
    yield from source  # iterable of str lines


def _tsv_rows(source, min_fields: int) -> Iterator[tuple[int, list[str]]]:
    """(line_no, fields) for data lines; blank lines and '#' comments skipped."""
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in line.split("\t")]
        if len(fields) < min_fields or any(not f for f in fields[:min_fields]):
            raise IngestError(line_no, f"expected at least {min_fields} tab-separated fields, got {line!r}")
        yield line_no, fields


class TripleStore:
    """Immutable fact set with per-predicate join indexes.

    Built once by :func:`ingest_triples`; the fact set and indexes never
    change afterwards and the store is safe to share across threads for
    concurrent reads. The entity dictionary alone may still grow while
    type files are ingested during the build phase (new entities carry no
    facts, so index/fact consistency is preserved).
    """

    def __init__(
        self,
        entities: Interner,
        predicates: Interner,
        pairs: list[tuple[tuple[int, int], ...]],
        sub_index: list[dict[int, tuple[int, ...]]],
        obj_index: list[dict[int, tuple[int, ...]]],
    ):
        self._entities = entities
        self._predicates = predicates
        self._pairs = pairs
        self._pair_sets = [frozenset(p) for p in pairs]
        self._sub_index = sub_index
        self._obj_index = obj_index

    # -- dictionaries ------------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self._entities)

    @property
    def n_predicates(self) -> int:
        return len(self._predicates)

    @property
    def n_facts(self) -> int:
        return sum(len(p) for p in self._pairs)

    def entity_id(self, label: str) -> int | None:
        return self._entities.get(label)

    def entity_label(self, eid: int) -> str:
        return self._entities.label(eid)

    def entity_labels(self) -> list[str]:
        return self._entities.labels()

    def predicate_id(self, label: str) -> int | None:
        return self._predicates.get(label)

    def predicate_label(self, pid: int) -> str:
        return self._predicates.label(pid)

    def predicate_labels(self) -> list[str]:
        return self._predicates.labels()

    def intern_entity(self, label: str) -> int:
        """Add an entity label to the dictionary (build phase only)."""
        return self._entities.intern(label)

    # -- facts and indexes -------------------------------------------------

    def fact_count(self, pid: int | None) -> int:
        if pid is None or pid >= len(self._pairs):
            return 0
        return len(self._pairs[pid])

    def pairs(self, pid: int | None) -> tuple[tuple[int, int], ...]:
        """All (subject, object) pairs under a predicate, sorted."""
        if pid is None or pid >= len(self._pairs):
            return ()
        return self._pairs[pid]

    def pair_set(self, pid: int | None) -> frozenset[tuple[int, int]]:
        if pid is None or pid >= len(self._pair_sets):
            return frozenset()
        return self._pair_sets[pid]

    def objects(self, pid: int, subject: int) -> tuple[int, ...]:
        return self._sub_index[pid].get(subject, ())

    def subjects(self, pid: int, obj: int) -> tuple[int, ...]:
        return self._obj_index[pid].get(obj, ())

    def has_fact(self, subject: int, pid: int, obj: int) -> bool:
        return (subject, obj) in self.pair_set(pid)


def ingest_triples(source) -> TripleStore:
    """Build a TripleStore from TSV lines `subject<TAB>predicate<TAB>object`.

    Extra fields are ignored, duplicate lines deduplicated, and ingest is
    streaming (one line in memory at a time). Raises IngestError with the
    line number for lines with fewer than 3 fields; empty input yields an
    empty, valid store.
    """
    entities = Interner()
    predicates = Interner()
    by_pred: list[dict[int, set[int]]] = []  # pid -> subject -> set(object)
    for _line_no, fields in _tsv_rows(source, 3):
        s = entities.intern(fields[0])
        p = predicates.intern(fields[1])
        o = entities.intern(fields[2])
        while len(by_pred) <= p:
            by_pred.append({})
        by_pred[p].setdefault(s, set()).add(o)

    pairs: list[tuple[tuple[int, int], ...]] = []
    sub_index: list[dict[int, tuple[int, ...]]] = []
    obj_index: list[dict[int, tuple[int, ...]]] = []
    for pred_map in by_pred:
        flat = sorted((s, o) for s, objs in pred_map.items() for o in objs)
        pairs.append(tuple(flat))
        sub_index.append({s: tuple(sorted(objs)) for s, objs in pred_map.items()})
        rev: dict[int, list[int]] = {}
        for s, o in flat:
            rev.setdefault(o, []).append(s)
        obj_index.append({o: tuple(sorted(subs)) for o, subs in rev.items()})
    return TripleStore(entities, predicates, pairs, sub_index, obj_index)


# -- predicate label anatomy ------------------------------------------------

@dataclass(frozen=True)
class LabelSegment:
    raw: str
    domain: str
    rel_type: str
    label: str


@dataclass(frozen=True)
class PredicateLabel:
    """Parsed predicate label: 1 segment for standard `/domain/type/label`
    relations, 2 for concatenated `domain1/type1/label1-/domain2/type2/label2`,
    0 (opaque) when the label does not match either pattern."""

    raw: str
    segments: tuple[LabelSegment, ...]

    @property
    def is_standard(self) -> bool:
        return bool(self.segments)

    @property
    def is_concatenated(self) -> bool:
        return len(self.segments) == 2

    @property
    def final_labels(self) -> tuple[str, ...]:
        """Last label component per segment; the raw string for opaque labels."""
        if self.segments:
            return tuple(seg.label for seg in self.segments)
        return (self.raw,)

    def rejoin(self) -> str:
        if self.segments:
            return "-/".join(seg.raw for seg in self.segments)
        return self.raw


def parse_predicate_label(raw: str) -> PredicateLabel:
    """Total parse; inputs that do not match the label grammar come back as a
    single opaque non-standard segment rather than an error. The concatenation
    split point is the "-/" sequence only, since plain hyphens occur inside
    ordinary labels."""
    pieces = raw.split("-/")
    if 1 <= len(pieces) <= 2:
        segments: list[LabelSegment] | None = []
        for piece in pieces:
            body = piece[1:] if piece.startswith("/") else piece
            comps = body.split("/")
            if len(comps) != 3 or not all(comps):
                segments = None
                break
            segments.append(LabelSegment(piece, comps[0], comps[1], comps[2]))
        if segments is not None and len(segments) == 2 and segments[0].label == segments[1].label:
            segments = None  # concatenated final labels are always distinct
        if segments:
            return PredicateLabel(raw, tuple(segments))
    return PredicateLabel(raw, ())


def humanize_predicate(raw: str) -> str:
    """Readable rendering of a relation: final label segment(s), underscores
    replaced by spaces, concatenated halves joined with ' / '."""
    parsed = parse_predicate_label(raw)
    return " / ".join(lbl.replace("_", " ") for lbl in parsed.final_labels)


_ID_SUFFIX = re.compile(r"^(.+)_([0-9]+)$")


def infer_type_from_id(entity_label: str) -> str | None:
    """Type prefix of ids shaped like `drug_742`; None when the label lacks a
    terminal `_<digits>` suffix."""
    m = _ID_SUFFIX.match(entity_label)
    return m.group(1) if m else None


# -- entity types ------------------------------------------------------------

class TypeCatalog:
    """Entity-id -> set of type labels."""

    def __init__(self) -> None:
        self._types: dict[int, set[str]] = {}

    def add(self, eid: int, type_label: str) -> None:
        self._types.setdefault(eid, set()).add(type_label)

    def types_of(self, eid: int) -> frozenset[str]:
        return frozenset(self._types.get(eid, ()))

    def typed_entities(self) -> list[int]:
        return sorted(self._types)

    @property
    def empty(self) -> bool:
        return not self._types

    def is_single_typed(self) -> bool:
        """True when every typed entity carries exactly one type (ogbl mode)."""
        return bool(self._types) and all(len(ts) == 1 for ts in self._types.values())

    def __len__(self) -> int:
        return len(self._types)


def ingest_entity_types(source, store: TripleStore) -> TypeCatalog:
    """Build a multi-valued TypeCatalog from TSV lines `entity<TAB>type`.

    Entities absent from the store's dictionary are interned; call during
    the build phase, before the store is shared.
    """
    catalog = TypeCatalog()
    for _line_no, fields in _tsv_rows(source, 2):
        eid = store.intern_entity(fields[0])
        catalog.add(eid, fields[1])
    return catalog


def catalog_from_id_prefixes(store: TripleStore) -> TypeCatalog:
    """Synthesize a catalog purely from `<type>_<digits>` entity ids."""
    catalog = TypeCatalog()
    for eid, label in enumerate(store.entity_labels()):
        inferred = infer_type_from_id(label)
        if inferred:
            catalog.add(eid, inferred)
    return catalog
