"""Ground-truth dataset curation: judge gating, the human review queue backed
by an append-only JSONL event log, split assembly, and fine-tuning export.

The event log is the source of truth; a CurationStore replays it at startup
and appends one event per state change (write-ahead: the event is on disk
before the mutating call returns). No database dependency."""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .judge import JudgeVerdict
from .prompts import PromptSpec, build_background, render_task_body
from .vartypes import TypedVariable

DEFAULT_GATE_THRESHOLD = 4.5  # over 3 runs: at least two perfect scores
DEFAULT_MAX_SPREAD = 1.0
DEFAULT_LEASE_SECONDS = 30 * 60

PROVENANCE = ("judge-accepted", "human-edited", "human-approved")
STATUSES = ("pending", "in-review", "resolved")


class CurationError(ValueError):
    pass


class AnnotationError(CurationError):
    pass


class ConflictError(CurationError):
    pass


class NotFoundError(CurationError):
    pass


class SplitError(CurationError):
    pass


@dataclass
class AnnotationRecord:
    item_id: str
    annotator_id: str
    correctness: int  # 1..5
    clarity: int  # 1..5
    logicalness: int  # 1..3
    missed_entities: int = 0
    missed_relations: int = 0
    hallucinated_entities: int = 0
    hallucinated_relations: int = 0
    edited_explanation: str | None = None

    def validate(self) -> None:
        if not 1 <= self.correctness <= 5:
            raise AnnotationError(f"correctness {self.correctness} outside scale 1..5")
        if not 1 <= self.clarity <= 5:
            raise AnnotationError(f"clarity {self.clarity} outside scale 1..5")
        if not 1 <= self.logicalness <= 3:
            raise AnnotationError(f"logicalness {self.logicalness} outside scale 1..3")
        for name in ("missed_entities", "missed_relations", "hallucinated_entities", "hallucinated_relations"):
            if getattr(self, name) < 0:
                raise AnnotationError(f"{name} must be >= 0")
        if self.correctness < 5 and not self.edited_explanation:
            raise AnnotationError("correctness below 5 requires an edited explanation")

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "annotator_id": self.annotator_id,
            "correctness": self.correctness,
            "clarity": self.clarity,
            "logicalness": self.logicalness,
            "missed_entities": self.missed_entities,
            "missed_relations": self.missed_relations,
            "hallucinated_entities": self.hallucinated_entities,
            "hallucinated_relations": self.hallucinated_relations,
            "edited_explanation": self.edited_explanation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        return cls(**{k: d.get(k) for k in (
            "item_id", "annotator_id", "correctness", "clarity", "logicalness",
            "missed_entities", "missed_relations", "hallucinated_entities",
            "hallucinated_relations", "edited_explanation",
        )})


@dataclass
class DatasetEntry:
    item_id: str
    rule_text: str
    variable_types: list[dict]
    sample_instance: dict | None
    explanation: str
    provenance: str
    judge_aggregate: float | None = None
    human_scores: dict | None = None
    annotator_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "rule_text": self.rule_text,
            "variable_types": self.variable_types,
            "sample_instance": self.sample_instance,
            "explanation": self.explanation,
            "provenance": self.provenance,
            "judge_aggregate": self.judge_aggregate,
            "human_scores": self.human_scores,
            "annotator_id": self.annotator_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetEntry":
        return cls(**{k: d.get(k) for k in (
            "item_id", "rule_text", "variable_types", "sample_instance", "explanation",
            "provenance", "judge_aggregate", "human_scores", "annotator_id",
        )})

    @property
    def is_human(self) -> bool:
        return self.provenance in ("human-edited", "human-approved")


@dataclass
class ReviewItem:
    item_id: str
    draft: DatasetEntry
    status: str = "pending"
    annotations: list[AnnotationRecord] = field(default_factory=list)
    judge_runs: list[dict] = field(default_factory=list)  # score + rationale per run, for the UI
    claimed_by: str | None = None
    claimed_at: float | None = None

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "draft": self.draft.to_dict(),
            "status": self.status,
            "annotations": [a.to_dict() for a in self.annotations],
            "judge_runs": self.judge_runs,
            "claimed_by": self.claimed_by,
            "claimed_at": self.claimed_at,
        }


def gate(verdict: JudgeVerdict, threshold: float = DEFAULT_GATE_THRESHOLD, max_spread: float = DEFAULT_MAX_SPREAD) -> str:
    """'accept' when the aggregate meets the threshold and the judge was
    consistent (spread within max_spread); otherwise 'review'."""
    if not 1 <= threshold <= 5:
        raise CurationError(f"gate threshold {threshold} outside [1, 5]")
    ok = verdict.aggregate_score >= threshold and verdict.consistency_spread <= max_spread
    return "accept" if ok else "review"


def apply_annotation(item: ReviewItem, annotation: AnnotationRecord, policy: str = "single") -> ReviewItem:
    """Append an annotation and resolve per policy.

    'single': one annotation resolves. 'triple': all three annotators must
    submit; their scores are averaged. The final explanation is the latest
    submitted edit, or the draft text when the explanation was approved as-is.
    """
    if policy not in ("single", "triple"):
        raise CurationError(f"unknown annotation policy {policy!r}")
    annotation.validate()
    if annotation.item_id != item.item_id:
        raise AnnotationError(f"annotation targets {annotation.item_id}, item is {item.item_id}")
    item.annotations.append(annotation)
    needed = 1 if policy == "single" else 3
    if len(item.annotations) >= needed:
        item.status = "resolved"
        edits = [a for a in item.annotations if a.edited_explanation]
        final = item.annotations[-1] if policy == "single" else item.annotations[needed - 1]
        entry = item.draft
        if edits:
            entry.explanation = edits[-1].edited_explanation
            entry.provenance = "human-edited"
            entry.annotator_id = edits[-1].annotator_id
        else:
            entry.provenance = "human-approved"
            entry.annotator_id = final.annotator_id
        n = len(item.annotations)
        entry.human_scores = {
            "correctness": sum(a.correctness for a in item.annotations) / n,
            "clarity": sum(a.clarity for a in item.annotations) / n,
            "logicalness": sum(a.logicalness for a in item.annotations) / n,
        }
    return item


class CurationLog:
    """Append-only JSONL event log; one writer, flush per event."""

    def __init__(self, path: str | Path, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self.clock = clock
        self._lock = threading.Lock()

    def append(self, event: str, payload: dict) -> None:
        line = json.dumps({"event": event, "ts": self.clock(), **payload}, ensure_ascii=False)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()

    def events(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    out.append(json.loads(line))
        return out


class CurationStore:
    """Replayable curation state: accepted entries plus the review queue.

    Single-writer appends to the event log before any mutating call returns;
    reads take the same lock, so claims are atomic. Lease-expired claims fall
    back to pending lazily on the next claim attempt.
    """

    def __init__(
        self,
        log_path: str | Path,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        policy: str = "single",
        clock: Callable[[], float] = time.time,
    ):
        self.log = CurationLog(log_path, clock)
        self.lease_seconds = lease_seconds
        self.policy = policy
        self.clock = clock
        self._lock = threading.RLock()
        self._items: dict[str, ReviewItem] = {}
        self._accepted: dict[str, DatasetEntry] = {}
        self._queue: list[str] = []  # pending item ids, FIFO
        self._resolved_order: list[str] = []
        for event in self.log.events():
            self._apply_event(event)

    # -- replay ----------------------------------------------------------------

    def _apply_event(self, event: dict) -> None:
        kind = event["event"]
        if kind == "entry_accepted":
            entry = DatasetEntry.from_dict(event["entry"])
            self._accepted[entry.item_id] = entry
        elif kind == "item_added":
            item = ReviewItem(
                item_id=event["item"]["item_id"],
                draft=DatasetEntry.from_dict(event["item"]["draft"]),
                judge_runs=event["item"].get("judge_runs", []),
            )
            self._items[item.item_id] = item
            self._queue.append(item.item_id)
        elif kind == "item_claimed":
            item = self._items[event["item_id"]]
            item.status = "in-review"
            item.claimed_by = event["annotator_id"]
            item.claimed_at = event["ts"]
            if event["item_id"] in self._queue:
                self._queue.remove(event["item_id"])
        elif kind == "item_released":
            item = self._items[event["item_id"]]
            item.status = "pending"
            item.claimed_by = None
            item.claimed_at = None
            self._queue.append(event["item_id"])
        elif kind == "annotation_added":
            item = self._items[event["item_id"]]
            apply_annotation(item, AnnotationRecord.from_dict(event["annotation"]), self.policy)
        elif kind == "item_resolved":
            self._resolved_order.append(event["item_id"])

    # -- ingestion ---------------------------------------------------------------

    def ingest(
        self,
        record_dict: dict,
        verdict: JudgeVerdict,
        threshold: float = DEFAULT_GATE_THRESHOLD,
        max_spread: float = DEFAULT_MAX_SPREAD,
    ) -> str:
        """Gate one (ExplanationRecord, JudgeVerdict) pair into either the
        accepted set or the review queue. Returns 'accept' or 'review'."""
        entry = DatasetEntry(
            item_id=record_dict["item_id"],
            rule_text=record_dict["rule_text"],
            variable_types=record_dict.get("variable_types", []),
            sample_instance=(record_dict.get("sample_instances") or [None])[0],
            explanation=record_dict["explanation_text"],
            provenance="judge-accepted",
            judge_aggregate=verdict.aggregate_score,
        )
        decision = gate(verdict, threshold, max_spread)
        with self._lock:
            if decision == "accept":
                self.log.append("entry_accepted", {"entry": entry.to_dict()})
                self._accepted[entry.item_id] = entry
            else:
                item = ReviewItem(
                    item_id=entry.item_id,
                    draft=entry,
                    judge_runs=[{"score": r.score, "rationale": r.rationale} for r in verdict.runs],
                )
                self.log.append("item_added", {"item": {
                    "item_id": item.item_id,
                    "draft": entry.to_dict(),
                    "judge_runs": item.judge_runs,
                }})
                self._items[item.item_id] = item
                self._queue.append(item.item_id)
        return decision

    # -- review loop ----------------------------------------------------------------

    def _release_expired(self) -> None:
        now = self.clock()
        for item in self._items.values():
            if (
                item.status == "in-review"
                and item.claimed_at is not None
                and now - item.claimed_at > self.lease_seconds
            ):
                self.log.append("item_released", {"item_id": item.item_id, "reason": "lease-expired"})
                item.status = "pending"
                item.claimed_by = None
                item.claimed_at = None
                self._queue.append(item.item_id)

    def claim_next(self, annotator_id: str) -> ReviewItem | None:
        """Claim one pending item (pending -> in-review) for this annotator.

        Idempotent: an annotator holding an unexpired claim gets that same
        item back instead of consuming another one.
        """
        if not annotator_id:
            raise CurationError("annotator_id is required")
        with self._lock:
            self._release_expired()
            for item in self._items.values():
                if item.status == "in-review" and item.claimed_by == annotator_id:
                    return item
            if not self._queue:
                return None
            item_id = self._queue.pop(0)
            item = self._items[item_id]
            self.log.append("item_claimed", {"item_id": item_id, "annotator_id": annotator_id})
            item.status = "in-review"
            item.claimed_by = annotator_id
            item.claimed_at = self.clock()
            return item

    def submit_annotation(self, item_id: str, annotation: AnnotationRecord, annotator_id: str) -> str:
        """Apply an annotation to an item claimed by this annotator; returns
        the new status. Wrong claimant or expired lease -> ConflictError."""
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                raise NotFoundError(f"no review item {item_id}")
            if item.status == "resolved":
                raise ConflictError(f"item {item_id} is already resolved")
            self._release_expired()
            if item.status != "in-review" or item.claimed_by != annotator_id:
                raise ConflictError(
                    f"item {item_id} is not claimed by {annotator_id!r} (lease expired or claimed elsewhere)"
                )
            annotation.validate()  # validate before logging anything
            self.log.append("annotation_added", {"item_id": item_id, "annotation": annotation.to_dict()})
            apply_annotation(item, annotation, self.policy)
            if item.status == "resolved":
                self.log.append("item_resolved", {"item_id": item_id, "entry": item.draft.to_dict()})
                self._resolved_order.append(item_id)
            return item.status

    # -- views --------------------------------------------------------------------

    def get_item(self, item_id: str) -> ReviewItem:
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                raise NotFoundError(f"no review item {item_id}")
            return item

    def items(self, status: str | None = None) -> list[ReviewItem]:
        with self._lock:
            out = list(self._items.values())
        if status is not None:
            out = [i for i in out if i.status == status]
        return out

    def entries(self) -> list[DatasetEntry]:
        """Accepted entries plus resolved review drafts, in curation order."""
        with self._lock:
            resolved = [self._items[i].draft for i in self._resolved_order]
            return list(self._accepted.values()) + resolved

    def stats(self) -> dict:
        with self._lock:
            by_status = {s: 0 for s in STATUSES}
            for item in self._items.values():
                by_status[item.status] += 1
            by_prov: dict[str, int] = {p: 0 for p in PROVENANCE}
            for entry in self.entries():
                by_prov[entry.provenance] += 1
            return {"items": by_status, "entries": by_prov, "total_entries": sum(by_prov.values())}


# -- splits -------------------------------------------------------------------------

@dataclass
class SplitSet:
    train: list[DatasetEntry]
    val: list[DatasetEntry]
    test: list[DatasetEntry]

    def split(self, name: str) -> list[DatasetEntry]:
        if name not in ("train", "val", "test"):
            raise SplitError(f"unknown split {name!r}")
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {name: [e.item_id for e in self.split(name)] for name in ("train", "val", "test")}


def build_splits(
    entries: Sequence[DatasetEntry],
    sizes: dict[str, int] | None = None,
    seed: int = 0,
    human_eval_only: bool = True,
) -> SplitSet:
    """Deterministic train/val/test assembly.

    Human-touched entries (human-edited/human-approved) go only to val/test;
    entries sharing a rule text always land in the same split. Errors state
    the shortfall when entries or capacity do not suffice.
    """
    sizes = sizes or {"train": 400, "val": 50, "test": 50}
    for name in ("train", "val", "test"):
        if name not in sizes or sizes[name] < 0:
            raise SplitError(f"sizes must define non-negative {name}")
    total = sizes["train"] + sizes["val"] + sizes["test"]
    if len(entries) < total:
        raise SplitError(f"need {total} entries for the requested sizes, have {len(entries)}")

    groups: dict[str, list[DatasetEntry]] = {}
    order: list[str] = []
    for entry in entries:
        if entry.rule_text not in groups:
            order.append(entry.rule_text)
        groups.setdefault(entry.rule_text, []).append(entry)

    rng = random.Random(seed)
    rng.shuffle(order)
    human_groups = [t for t in order if any(e.is_human for e in groups[t])]
    machine_groups = [t for t in order if t not in set(human_groups)]

    val: list[DatasetEntry] = []
    test: list[DatasetEntry] = []
    train: list[DatasetEntry] = []

    def place(rule_text: str, target: list[DatasetEntry], capacity: int) -> bool:
        group = groups[rule_text]
        if len(target) + len(group) <= capacity:
            target.extend(group)
            return True
        return False

    if human_eval_only:
        n_human = sum(len(groups[t]) for t in human_groups)
        capacity = sizes["val"] + sizes["test"]
        if n_human > capacity:
            raise SplitError(
                f"cannot confine {n_human} human-reviewed entries to val+test of size {capacity}"
            )
        for rule_text in human_groups:
            if not (place(rule_text, val, sizes["val"]) or place(rule_text, test, sizes["test"])):
                raise SplitError(f"human-reviewed group of {len(groups[rule_text])} entries does not fit val or test")
        pool = machine_groups
    else:
        pool = human_groups + machine_groups

    leftovers: list[str] = []
    for rule_text in pool:
        if place(rule_text, val, sizes["val"]) or place(rule_text, test, sizes["test"]):
            continue
        leftovers.append(rule_text)
    for rule_text in leftovers:
        place(rule_text, train, sizes["train"])  # groups beyond capacity stay unused

    got = {"train": len(train), "val": len(val), "test": len(test)}
    want = {k: sizes[k] for k in got}
    if got != want:
        raise SplitError(f"could not satisfy split sizes exactly: wanted {want}, packed {got}")
    return SplitSet(train, val, test)


# -- export -------------------------------------------------------------------------

def export_jsonl(entries: Sequence[DatasetEntry], profile: str) -> bytes:
    """Chat-format fine-tuning JSONL: system = dataset background, user = the
    generation prompt body for the rule, assistant = the final (possibly
    human-edited) explanation. Byte-stable for a given entry order + profile."""
    background = build_background(profile)
    lines = []
    for entry in entries:
        spec = PromptSpec(
            strategy="typed" if entry.variable_types else "zero_shot",
            background=background,
            rule_text=entry.rule_text,
            variable_types=tuple((t["variable"], t["type_label"]) for t in entry.variable_types or ()),
        )
        message = {
            "messages": [
                {"role": "system", "content": background},
                {"role": "user", "content": render_task_body(spec)},
                {"role": "assistant", "content": entry.explanation},
            ]
        }
        lines.append(json.dumps(message, ensure_ascii=False, separators=(",", ":")))
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")
