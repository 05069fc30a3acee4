"""LLM-as-a-judge correctness scoring: structured verification questions, an
explicit 1-5 rubric, three scored exemplars, and triple scoring of each item
for consistency.

The judge prompt is blinded: it never names the model that generated the
explanation, and it carries the same information a human annotator sees (the
rule, one grounded instance, the variable types, the explanation).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from statistics import mean
from typing import Sequence

from .gateway import LlmGateway, ModelConfig
from .metrics import AgreementReport, MetricError, krippendorff_alpha, spearman

logger = logging.getLogger(__name__)

DEFAULT_RUNS = 3

ANTI_GENERATION_INSTRUCTION = (
    "You are evaluating an existing explanation of a logical rule. Your job is to "
    "assess the quality of the given explanation, not to regenerate it. Do not write "
    "your own explanation; compare the given one against the rule."
)

RUBRIC = """Scoring rubric (correctness):
5 - every atom, every constant, and the body-to-head direction are rendered correctly.
4 - a minor omission or wording slip that does not alter the logic.
3 - one atom is wrong or missing, or a constant is misstated.
2 - the implication direction is reversed or multiple atoms are wrong.
1 - the explanation is unrelated to the rule."""

VERIFICATION_QUESTIONS = (
    "Do all variable entities stated in the rule appear in the explanation?",
    "If your answer is no, which variable entities are missing from the explanation?",
    "Do all constant entities stated in the rule appear in the explanation?",
    "Do all relations stated in the rule appear in the explanation?",
    "Does the explanation preserve the direction of implication, from the body to the head?",
    "Does the explanation introduce any entity or relation that is absent from the rule?",
)

ANSWER_GRAMMAR = """Answer using exactly this format:
Q1: <yes/no>
Q2: <missing variable entities, or 'none'>
Q3: <yes/no>
Q4: <yes/no>
Q5: <yes/no>
Q6: <yes/no>
RATIONALE: <one or two sentences>
SCORE: <1-5>"""


class JudgeError(RuntimeError):
    pass


class JudgeParseError(JudgeError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass
class JudgeRun:
    score: int | None
    check_answers: dict[str, str] = field(default_factory=dict)
    rationale: str = ""
    raw: str | None = None  # kept for failed runs

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "check_answers": self.check_answers,
            "rationale": self.rationale,
            "raw": self.raw,
        }


@dataclass
class JudgeVerdict:
    item_id: str
    judge_model: str
    runs: list[JudgeRun]
    aggregate_score: float
    consistency_spread: float

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "judge_model": self.judge_model,
            "runs": [r.to_dict() for r in self.runs],
            "aggregate_score": self.aggregate_score,
            "consistency_spread": self.consistency_spread,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JudgeVerdict":
        runs = [JudgeRun(r["score"], r.get("check_answers", {}), r.get("rationale", ""), r.get("raw")) for r in d["runs"]]
        return cls(d["item_id"], d["judge_model"], runs, d["aggregate_score"], d["consistency_spread"])


def judge_exemplars() -> list[dict]:
    raw = resources.files("rulescribe.fixtures").joinpath("judge_exemplars.json").read_text("utf-8")
    return json.loads(raw)["exemplars"]


def build_judge_prompt(record, instance, types) -> str:
    """Assemble the judging prompt for one ExplanationRecord.

    Order: anti-generation instruction, rubric, three scored exemplars, the
    verification checklist, then the item under evaluation and the rigid
    answer grammar ending in `SCORE: <1-5>`.
    """
    parts = [ANTI_GENERATION_INSTRUCTION, RUBRIC]

    exemplar_lines = ["Scored examples:"]
    for i, ex in enumerate(judge_exemplars(), start=1):
        exemplar_lines.append(f"Example {i}:")
        exemplar_lines.append(f"Rule: {ex['rule']}")
        exemplar_lines.append(f"Explanation: {ex['explanation']}")
        exemplar_lines.append(f"SCORE: {ex['score']}  ({ex['rationale']})")
    parts.append("\n".join(exemplar_lines))

    checklist = ["Answer these verification questions before scoring:"]
    checklist.extend(f"Q{i}: {q}" for i, q in enumerate(VERIFICATION_QUESTIONS, start=1))
    parts.append("\n".join(checklist))

    item = [f"Rule: {record.rule_text}"]
    if instance is not None:
        atoms = [" | ".join(a) for a in instance.body] + ["=>", " | ".join(instance.head)]
        item.append("Instance of the rule: " + "  ".join(atoms))
    if types:
        item.append("Variable types: " + "; ".join(f"{t.variable} is a {t.type_label}" for t in types))
    item.append(f"Explanation to evaluate: {record.explanation_text}")
    parts.append("\n".join(item))

    parts.append(ANSWER_GRAMMAR)
    return "\n\n".join(parts)


def parse_judge_completion(text: str) -> JudgeRun:
    """Parse the rigid answer grammar; raises JudgeParseError when no valid
    `SCORE: <1-5>` line is present."""
    answers: dict[str, str] = {}
    rationale = ""
    score: int | None = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        upper = line.upper()
        if upper.startswith("SCORE:"):
            value = line.split(":", 1)[1].strip()
            try:
                parsed = int(value.split()[0]) if value else None
            except ValueError:
                parsed = None
            if parsed is not None and 1 <= parsed <= 5:
                score = parsed
        elif upper.startswith("RATIONALE:"):
            rationale = line.split(":", 1)[1].strip()
        elif line[:1] == "Q" and ":" in line:
            key, _, value = line.partition(":")
            if key[1:].isdigit():
                answers[key.strip()] = value.strip()
    if score is None:
        raise JudgeParseError("completion has no valid 'SCORE: <1-5>' line", text)
    return JudgeRun(score=score, check_answers=answers, rationale=rationale)


def judge_explanation(
    record,
    gateway: LlmGateway,
    judge_config: ModelConfig,
    runs: int = DEFAULT_RUNS,
) -> JudgeVerdict:
    """Score one explanation `runs` times with the same prompt and aggregate.

    Each unparseable run is retried once, then recorded as a failed run; the
    aggregate is the arithmetic mean of valid run scores and the spread is
    their max minus min. All runs unparseable -> JudgeError.
    """
    if judge_config.model_name == record.model_name:
        logger.warning(
            "judge model %s equals the generator model; self-enhancement bias is possible",
            judge_config.model_name,
        )
    instance = record.sample_instances[0] if record.sample_instances else None
    prompt = build_judge_prompt(record, instance, record.variable_types)

    results: list[JudgeRun] = []
    for _run in range(runs):
        run = None
        for _attempt in range(2):  # one retry per run
            completion = gateway.complete(prompt, judge_config)
            try:
                run = parse_judge_completion(completion.text)
                break
            except JudgeParseError as err:
                run = JudgeRun(score=None, raw=err.raw)
        results.append(run)

    scores = [r.score for r in results if r.score is not None]
    if not scores:
        raise JudgeError(f"all {runs} judge runs were unparseable for item {record.item_id}")
    return JudgeVerdict(
        item_id=record.item_id,
        judge_model=judge_config.model_name,
        runs=results,
        aggregate_score=mean(scores),
        consistency_spread=max(scores) - min(scores),
    )


def agreement(verdicts: Sequence[JudgeVerdict], human_means: dict[str, float]) -> AgreementReport:
    """Pair judge aggregates with per-item mean human correctness and report
    Spearman rho plus ordinal Krippendorff alpha. Needs >= 3 matched items."""
    matched = sorted(v.item_id for v in verdicts if v.item_id in human_means)
    if len(matched) < 3:
        raise MetricError(f"agreement needs at least 3 matched items, got {len(matched)}")
    by_id = {v.item_id: v for v in verdicts}
    judge_scores = [by_id[i].aggregate_score for i in matched]
    human_scores = [human_means[i] for i in matched]
    rho = spearman(judge_scores, human_scores)
    alpha = krippendorff_alpha([[j, h] for j, h in zip(judge_scores, human_scores)], level="ordinal")
    return AgreementReport(
        spearman_rho=rho,
        krippendorff_alpha=alpha,
        n_items=len(matched),
        method_notes="judge aggregate vs mean human correctness; spearman (tie-average ranks) and ordinal alpha",
    )
