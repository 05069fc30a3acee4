"""Generation prompts for the four strategies, with dataset background blocks.

Rendering is a pure function of the PromptSpec: identical specs always render
byte-identical text, and every rule constant and relation label appears
verbatim (the rule is embedded in machine format).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

from .rules import Rule, render_rule
from .vartypes import TypedVariable

PROMPT_VERSION = "gen-v1"

STRATEGIES = ("zero_shot", "few_shot", "typed", "cot")

COT_STEPS = (
    "Restate each body atom of the rule in plain words.",
    "Restate the head atom of the rule in plain words.",
    "Identify the type of entity each variable stands for.",
    "Describe the direction of the implication: when the body holds, the head follows.",
    "Compose one fluent sentence that expresses the whole rule.",
)

_PROFILES = ("freebase", "freebase_concat", "ogbl")

_FREEBASE_ANATOMY = (
    "Background: the rule comes from a Freebase-style knowledge graph. "
    "Relation labels follow the pattern /[domain]/[type]/[label]; the final [label] "
    "component names the relationship (for example, /music/artist/origin links an "
    "artist to their place of origin). Terms starting with '?' are variables; other "
    "terms are constant entities."
)

_CONCAT_EXTRA = (
    " Some relations are concatenated: the graph converts n-ary relationships that were "
    "centered on a CVT (mediator) node into binary edges by merging the two edges through "
    "the removed CVT node. Their labels take the long form "
    "domain1/type1/label1-/domain2/type2/label2, where label1 and label2 are always "
    "distinct; read them as a single relationship connecting the two endpoints."
)

_OGBL_BACKGROUND = (
    "Background: the rule comes from a biomedical knowledge graph with five types of "
    "entities: diseases, proteins, drugs, side effects, and protein functions. Entity ids "
    "begin with their type followed by an underscore and a number (for example, drug_742 "
    "is a drug). Relation labels name the biomedical relationship directly. Terms starting "
    "with '?' are variables; other terms are constant entities."
)


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptSpec:
    strategy: str
    background: str
    rule_text: str
    exemplars: tuple[tuple[str, str], ...] = ()
    variable_types: tuple[tuple[str, str], ...] = ()
    cot_steps: tuple[str, ...] = ()


def build_background(profile: str) -> str:
    """Dataset syntax block for a profile; unknown profiles are an error."""
    if profile == "freebase":
        return _FREEBASE_ANATOMY
    if profile == "freebase_concat":
        return _FREEBASE_ANATOMY + _CONCAT_EXTRA
    if profile == "ogbl":
        return _OGBL_BACKGROUND
    raise PromptError(f"unknown dataset profile {profile!r}; expected one of {_PROFILES}")


def default_exemplars() -> tuple[tuple[str, str], ...]:
    """The two seeded (rule, explanation) pairs shipped as an editable fixture."""
    raw = resources.files("rulescribe.fixtures").joinpath("exemplars_default.json").read_text("utf-8")
    data = json.loads(raw)
    return tuple((p["rule"], p["explanation"]) for p in data["pairs"])


def build_generation_prompt(
    rule: Rule,
    strategy: str,
    profile: str,
    types: Sequence[TypedVariable] | None = None,
    exemplars: Sequence[tuple[str, str]] | None = None,
) -> tuple[PromptSpec, str]:
    """Assemble and render the prompt for one rule.

    few_shot carries exactly two exemplar pairs; typed and cot require
    variable types; cot adds the five reasoning steps.
    """
    if strategy not in STRATEGIES:
        raise PromptError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    background = build_background(profile)
    rule_text = render_rule(rule, "machine")

    pairs: tuple[tuple[str, str], ...] = ()
    if strategy == "few_shot":
        pairs = tuple(exemplars) if exemplars is not None else default_exemplars()
        if len(pairs) != 2:
            raise PromptError(f"few_shot requires exactly 2 exemplars, got {len(pairs)}")

    type_lines: tuple[tuple[str, str], ...] = ()
    if strategy in ("typed", "cot"):
        if not types:
            raise PromptError(f"strategy {strategy!r} requires variable types")
        type_lines = tuple((tv.variable, tv.type_label) for tv in types)

    steps = COT_STEPS if strategy == "cot" else ()
    spec = PromptSpec(strategy, background, rule_text, pairs, type_lines, steps)
    return spec, render_prompt(spec)


def render_task_body(spec: PromptSpec) -> str:
    """Everything below the background block; used on its own for fine-tuning
    exports where the background travels as the system message."""
    parts: list[str] = []
    if spec.exemplars:
        lines = ["Examples:"]
        for rule_text, explanation in spec.exemplars:
            lines.append(f"Rule: {rule_text}")
            lines.append(f"Explanation: {explanation}")
        parts.append("\n".join(lines))
    if spec.variable_types:
        lines = ["Variable types:"]
        lines.extend(f"{var} is a {type_label}" for var, type_label in spec.variable_types)
        parts.append("\n".join(lines))
    if spec.cot_steps:
        lines = ["Follow these steps:"]
        lines.extend(f"{i}. {step}" for i, step in enumerate(spec.cot_steps, start=1))
        parts.append("\n".join(lines))
    parts.append(f"Rule: {spec.rule_text}")
    parts.append(
        "Your task: produce one natural-language explanation of the rule above. "
        "Respond with the explanation only."
    )
    return "\n\n".join(parts)


def render_prompt(spec: PromptSpec) -> str:
    return spec.background + "\n\n" + render_task_body(spec)
