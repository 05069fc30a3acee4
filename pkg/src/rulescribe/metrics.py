"""Automatic evaluation: faithfulness counts against the rule, BLEU /
ROUGE-L / METEOR text metrics, Spearman and Krippendorff agreement, and the
optional external perplexity hook.

All text metrics tokenize the same way: lowercase, split on
non-alphanumeric characters. METEOR is implemented without a synonym
dictionary (exact-then-stem unigram matching only); the reduction is
deliberate so no external lexical resources are needed.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import requests

from .rules import Constant, Rule
from .store import parse_predicate_label

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

STOP_WORDS = frozenset(
    "a an and are as at be by for from has have in is it of on or the to was were with".split()
)


class MetricError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


# -- faithfulness -------------------------------------------------------------

@dataclass
class FaithfulnessReport:
    missed_entities: list[str] = field(default_factory=list)
    missed_relations: list[str] = field(default_factory=list)
    hallucinated_entities: list[str] = field(default_factory=list)
    hallucinated_relations: list[str] = field(default_factory=list)

    @property
    def missed_entity_count(self) -> int:
        return len(self.missed_entities)

    @property
    def missed_relation_count(self) -> int:
        return len(self.missed_relations)

    @property
    def hallucinated_entity_count(self) -> int:
        return len(self.hallucinated_entities)

    @property
    def hallucinated_relation_count(self) -> int:
        return len(self.hallucinated_relations)

    def to_dict(self) -> dict:
        return {
            "missed_entities": self.missed_entities,
            "missed_relations": self.missed_relations,
            "hallucinated_entities": self.hallucinated_entities,
            "hallucinated_relations": self.hallucinated_relations,
        }


def _normalize_label(label: str) -> str:
    return " ".join(label.lower().replace("_", " ").split())


def _relation_content_tokens(relation: str) -> set[str]:
    tokens: set[str] = set()
    for final in parse_predicate_label(relation).final_labels:
        tokens.update(tokenize(final.replace("_", " ")))
    return tokens - STOP_WORDS


_CAP_SPAN = re.compile(r"\b[A-Z][\w'&.-]*(?:\s+[A-Z][\w'&.-]*)+\b")


def faithfulness(
    rule: Rule,
    explanation: str,
    relation_token_threshold: float = 0.5,
    known_entities: Sequence[str] | None = None,
    known_relations: Sequence[str] | None = None,
) -> FaithfulnessReport:
    """Count rule entities/relations missing from the explanation and flag
    likely hallucinations.

    An entity counts as present when its normalized label (lowercase,
    underscores to spaces) is a substring of the normalized explanation; a
    relation counts as present when at least `relation_token_threshold` of
    its final-label content tokens appear. Hallucination checks (capitalized
    multiword spans, plus known-entity/relation dictionary hits) are
    advisory. Missed counts are monotone: appending text never raises them.
    """
    report = FaithfulnessReport()
    norm_expl = " ".join(_normalize_label(explanation).split())
    expl_tokens = set(tokenize(explanation))

    constants: dict[str, None] = {}
    for atom in rule.atoms():
        for term in (atom.subject, atom.object):
            if isinstance(term, Constant):
                constants.setdefault(term.label)
    for label in constants:
        if _normalize_label(label) not in norm_expl:
            report.missed_entities.append(label)

    relations: dict[str, None] = {}
    for atom in rule.atoms():
        relations.setdefault(atom.relation)
    for relation in relations:
        content = _relation_content_tokens(relation)
        if not content:
            continue  # nothing checkable (all stop words)
        coverage = sum(1 for t in content if t in expl_tokens) / len(content)
        if coverage < relation_token_threshold:
            report.missed_relations.append(relation)

    rule_entity_norms = [_normalize_label(label) for label in constants]
    for span in _CAP_SPAN.findall(explanation):
        norm_span = _normalize_label(span)
        if not any(norm_span in ent or ent in norm_span for ent in rule_entity_norms):
            report.hallucinated_entities.append(span)
    for label in known_entities or ():
        norm = _normalize_label(label)
        if norm in norm_expl and not any(norm == ent for ent in rule_entity_norms):
            report.hallucinated_entities.append(label)
    for relation in known_relations or ():
        if relation in relations:
            continue
        content = _relation_content_tokens(relation)
        if content and all(t in expl_tokens for t in content):
            report.hallucinated_relations.append(relation)
    return report


# -- BLEU / ROUGE-L / METEOR ---------------------------------------------------

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: Sequence[str], max_n: int = 4) -> float:
    """BLEU with brevity penalty and add-one smoothing on zero n-gram counts.
    The effective order is capped at the candidate length so short candidates
    still score."""
    if not references:
        raise MetricError("bleu needs at least one reference")
    cand = tokenize(candidate)
    if not cand:
        return 0.0
    refs = [tokenize(r) for r in references]
    effective_n = min(max_n, len(cand))
    log_sum = 0.0
    for n in range(1, effective_n + 1):
        cand_counts = _ngrams(cand, n)
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, count in _ngrams(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        total = sum(cand_counts.values())
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        p = clipped / total if clipped > 0 else 1.0 / (total + 1)
        log_sum += math.log(p)
    precision = math.exp(log_sum / effective_n)
    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return bp * precision


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """LCS-based precision/recall/F1 over tokens; F1 defined as 0 when both
    sides are empty."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    lcs = _lcs_length(cand, ref)
    precision = lcs / len(cand) if cand else 0.0
    recall = lcs / len(ref) if ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return RougeScore(precision, recall, f1)


def _stem(word: str) -> str:
    """Minimal deterministic suffix stripper (plural/past/progressive)."""
    if len(word) > 4 and word.endswith("sses"):
        return word[:-2]
    if len(word) > 4 and word.endswith("ies"):
        return word[:-3] + "i"
    if len(word) > 5 and word.endswith("ing"):
        return word[:-3]
    if len(word) > 4 and word.endswith("ed"):
        return word[:-2]
    if len(word) > 2 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def _align(cand: list[str], ref: list[str]) -> list[tuple[int, int]]:
    """One-to-one unigram alignment, exact matches first then stem matches,
    each greedy leftmost; returns (candidate-index, reference-index) pairs
    sorted by candidate index."""
    matched_ref: set[int] = set()
    pairs: dict[int, int] = {}
    for key in (lambda w: w, _stem):
        ref_keyed: dict[str, list[int]] = {}
        for j, w in enumerate(ref):
            if j not in matched_ref:
                ref_keyed.setdefault(key(w), []).append(j)
        for i, w in enumerate(cand):
            if i in pairs:
                continue
            slots = ref_keyed.get(key(w))
            if slots:
                j = slots.pop(0)
                matched_ref.add(j)
                pairs[i] = j
    return sorted(pairs.items())


def meteor(candidate: str, reference: str) -> float:
    """Unigram METEOR: exact-then-stem alignment, F_mean = 10PR/(R+9P),
    fragmentation penalty 0.5*(chunks/matches)^3. No synonym stage."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    pairs = _align(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    precision = m / len(cand)
    recall = m / len(ref)
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    chunks = 1
    for (ci, ri), (cj, rj) in zip(pairs, pairs[1:]):
        if cj != ci + 1 or rj != ri + 1:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1 - penalty)


# -- agreement ------------------------------------------------------------------

def _ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1  # 1-based average rank for the tie group
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties. Constant input
    is an error rather than NaN."""
    if len(xs) != len(ys):
        raise MetricError("spearman needs paired inputs of equal length")
    if len(xs) < 3:
        raise MetricError("spearman needs at least 3 pairs")
    rx = _ranks(xs)
    ry = _ranks(ys)
    mx = sum(rx) / len(rx)
    my = sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    if vx == 0 or vy == 0:
        raise MetricError("spearman is undefined for constant input")
    return cov / math.sqrt(vx * vy)


def krippendorff_alpha(ratings: Sequence[Sequence[float | None]], level: str = "ordinal") -> float:
    """Krippendorff's alpha via the coincidence-matrix formulation.

    `ratings` is items x raters with None for missing cells; items with
    fewer than two ratings drop out pairwise. Ordinal (default) or interval
    distance. Unanimous data yields 1.0.
    """
    if level not in ("ordinal", "interval"):
        raise MetricError(f"unknown level {level!r}")
    if len(ratings) < 3:
        raise MetricError("krippendorff_alpha needs at least 3 items")
    units = [[v for v in row if v is not None] for row in ratings]
    pairable = [u for u in units if len(u) >= 2]
    if not pairable:
        raise MetricError("no item was rated by two or more raters")

    coincidence: Counter = Counter()
    for unit in pairable:
        m = len(unit)
        for i in range(m):
            for j in range(m):
                if i != j:
                    coincidence[(unit[i], unit[j])] += 1.0 / (m - 1)
    marginals: Counter = Counter()
    for (c, _k), weight in coincidence.items():
        marginals[c] += weight
    n = sum(marginals.values())
    values = sorted(marginals)

    if level == "interval":
        def delta2(c: float, k: float) -> float:
            return (c - k) ** 2
    else:
        def delta2(c: float, k: float) -> float:
            lo, hi = min(c, k), max(c, k)
            between = sum(marginals[g] for g in values if lo <= g <= hi)
            return (between - (marginals[c] + marginals[k]) / 2) ** 2

    d_o = sum(weight * delta2(c, k) for (c, k), weight in coincidence.items() if c != k)
    d_e = 0.0
    for c in values:
        for k in values:
            if c != k:
                d_e += marginals[c] * marginals[k] * delta2(c, k)
    d_e /= n - 1
    if d_e == 0:
        return 1.0  # every rating identical: perfect agreement
    return 1.0 - d_o / d_e


@dataclass(frozen=True)
class AgreementReport:
    spearman_rho: float
    krippendorff_alpha: float
    n_items: int
    method_notes: str

    def to_dict(self) -> dict:
        return {
            "spearman_rho": self.spearman_rho,
            "krippendorff_alpha": self.krippendorff_alpha,
            "n_items": self.n_items,
            "method_notes": self.method_notes,
        }


# -- external perplexity hook -----------------------------------------------------

def external_perplexity(explanation: str, scorer_endpoint: str | None, timeout: float = 10.0) -> float | None:
    """POST {"text": ...} to the scorer and pass its perplexity through.
    Returns None (skipped) when no endpoint is configured or the scorer is
    unreachable/malformed; skipping logs a warning."""
    if not scorer_endpoint:
        return None
    try:
        resp = requests.post(scorer_endpoint, json={"text": explanation}, timeout=timeout)
        resp.raise_for_status()
        return float(resp.json()["perplexity"])
    except (requests.RequestException, KeyError, TypeError, ValueError) as err:
        logger.warning("perplexity scorer skipped: %s", err)
        return None
