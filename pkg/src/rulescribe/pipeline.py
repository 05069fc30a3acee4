"""Orchestrates rule -> types -> instances -> prompt -> completion into
ExplanationRecords; batched, resumable, and tolerant of per-rule failures."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from .engine import GroundedRule, sample_instances
from .gateway import GatewayError, LlmGateway, ModelConfig
from .prompts import build_generation_prompt
from .rules import Rule, RuleParseError, parse_rule, render_rule
from .store import TripleStore, TypeCatalog
from .vartypes import TypedVariable, TypingError, llm_variable_types, schema_variable_types

logger = logging.getLogger(__name__)

DEFAULT_INSTANCE_COUNT = 3


class PipelineError(RuntimeError):
    pass


@dataclass
class ExplanationRecord:
    rule_id: str
    rule_text: str
    strategy: str
    model_name: str
    variable_types: list[TypedVariable]
    sample_instances: list[GroundedRule]
    explanation_text: str
    prompt: str  # exactly what the model saw, kept for audit
    created_at: str
    generation_mode: str

    @property
    def item_id(self) -> str:
        raw = f"{self.rule_id}\x1f{self.strategy}\x1f{self.model_name}"
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "item_id": self.item_id,
            "rule_text": self.rule_text,
            "strategy": self.strategy,
            "model_name": self.model_name,
            "variable_types": [tv.to_dict() for tv in self.variable_types],
            "sample_instances": [g.to_dict() for g in self.sample_instances],
            "explanation_text": self.explanation_text,
            "prompt": self.prompt,
            "created_at": self.created_at,
            "generation_mode": self.generation_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExplanationRecord":
        return cls(
            rule_id=d["rule_id"],
            rule_text=d["rule_text"],
            strategy=d["strategy"],
            model_name=d["model_name"],
            variable_types=[TypedVariable.from_dict(t) for t in d["variable_types"]],
            sample_instances=[GroundedRule.from_dict(g) for g in d["sample_instances"]],
            explanation_text=d["explanation_text"],
            prompt=d["prompt"],
            created_at=d["created_at"],
            generation_mode=d["generation_mode"],
        )


def _iso(clock: Callable[[], float]) -> str:
    return datetime.fromtimestamp(clock(), tz=timezone.utc).isoformat()


def resolve_types(
    rule: Rule,
    store: TripleStore,
    catalog: TypeCatalog | None,
    gateway: LlmGateway | None,
    typer_config: ModelConfig | None,
    instances: Sequence[GroundedRule],
) -> list[TypedVariable]:
    """Schema typing first; LLM typing as fallback when a catalog answer is
    unavailable and a typer model is configured."""
    schema_error: TypingError | None = None
    if catalog is not None and not catalog.empty:
        try:
            return schema_variable_types(rule, store, catalog)
        except TypingError as err:
            schema_error = err
    if gateway is not None and typer_config is not None and instances:
        return llm_variable_types(rule, list(instances)[:3], gateway, typer_config)
    raise schema_error or TypingError("no type source available (no catalog, no typer model)")


def explain_rule(
    rule: Rule,
    strategy: str,
    profile: str,
    store: TripleStore,
    gateway: LlmGateway,
    model_config: ModelConfig,
    seed: int,
    catalog: TypeCatalog | None = None,
    typer_config: ModelConfig | None = None,
    exemplars: Sequence[tuple[str, str]] | None = None,
    instance_count: int = DEFAULT_INSTANCE_COUNT,
    clock: Callable[[], float] = time.time,
) -> ExplanationRecord:
    """Generate one ExplanationRecord; the embedded prompt is the exact text
    sent to the model."""
    instances = sample_instances(rule, store, k=instance_count, seed=seed)
    types: list[TypedVariable] = []
    if strategy in ("typed", "cot"):
        types = resolve_types(rule, store, catalog, gateway, typer_config, instances)
    _spec, prompt = build_generation_prompt(rule, strategy, profile, types or None, exemplars)
    completion = gateway.complete(prompt, model_config)
    return ExplanationRecord(
        rule_id=rule.rule_id,
        rule_text=render_rule(rule, "machine"),
        strategy=strategy,
        model_name=model_config.model_name,
        variable_types=types,
        sample_instances=instances,
        explanation_text=completion.text,
        prompt=prompt,
        created_at=_iso(clock),
        generation_mode=gateway.mode,
    )


@dataclass
class BatchSummary:
    ok: int = 0
    failed: int = 0
    skipped: int = 0
    errors: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "failed": self.failed, "skipped": self.skipped}


def _existing_rule_ids(out_path: Path) -> set[str]:
    done: set[str] = set()
    if out_path.exists():
        with out_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    done.add(json.loads(line)["rule_id"])
    return done


def explain_batch(
    rules_path: str | Path,
    out_path: str | Path,
    run_log_path: str | Path | None = None,
    resume: bool = False,
    jobs: int = 1,
    max_atoms: int = 3,
    **explain_kwargs,
) -> BatchSummary:
    """Explain every rule in a machine-format rules file.

    Per-rule failures (parse, typing, gateway) are logged and counted but do
    not stop the batch; with resume=True, rule ids already present in the
    output file are skipped. Output and run log are JSONL, appended in input
    order.
    """
    rules_path = Path(rules_path)
    out_path = Path(out_path)
    try:
        lines = rules_path.read_text("utf-8").splitlines()
    except OSError as err:
        raise PipelineError(f"cannot read rules file {rules_path}: {err}") from err

    parsed: list[tuple[int, Rule | None, str | None]] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            parsed.append((line_no, parse_rule(line, max_atoms=max_atoms), None))
        except RuleParseError as err:
            parsed.append((line_no, None, str(err)))

    done = _existing_rule_ids(out_path) if resume else set()
    summary = BatchSummary()

    def run_one(entry):
        line_no, rule, parse_error = entry
        if parse_error is not None:
            return line_no, None, f"parse error: {parse_error}"
        if rule.rule_id in done:
            return line_no, "skipped", None
        try:
            return line_no, explain_rule(rule, **explain_kwargs), None
        except (TypingError, GatewayError, PipelineError, ValueError) as err:
            return line_no, None, f"{type(err).__name__}: {err}"

    with out_path.open("a", encoding="utf-8") as out:
        log_fh = Path(run_log_path).open("a", encoding="utf-8") if run_log_path else None
        try:
            if jobs > 1:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    results = list(pool.map(run_one, parsed))
            else:
                results = [run_one(entry) for entry in parsed]
            for line_no, result, error in results:
                if error is not None:
                    summary.failed += 1
                    entry = {"line": line_no, "error": error}
                    summary.errors.append(entry)
                    if log_fh:
                        log_fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
                elif result == "skipped":
                    summary.skipped += 1
                else:
                    summary.ok += 1
                    out.write(json.dumps(result.to_dict(), ensure_ascii=False) + "\n")
        finally:
            if log_fh:
                log_fh.close()
    return summary


def read_records(path: str | Path) -> list[ExplanationRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(ExplanationRecord.from_dict(json.loads(line)))
    return records
