"""Acceptance suite: one test per criterion, each printing a PASS line with
its stated tolerance pinned. Run with `pytest tests/test_acceptance.py -v`.

The whole module exercises only the Python package; the browser frontend is
not imported anywhere here.
"""

from __future__ import annotations

import json
import math
import random
import re
import time
from pathlib import Path

import pytest
from click.testing import CliRunner

from rulescribe.cli import main as cli_main
from rulescribe.curation import CurationStore, build_splits, export_jsonl
from rulescribe.engine import compute_metrics, mine_rules
from rulescribe.gateway import LlmGateway, ModelConfig
from rulescribe.judge import JudgeVerdict, agreement, build_judge_prompt, judge_explanation
from rulescribe.metrics import bleu, krippendorff_alpha, meteor, rouge_l, spearman
from rulescribe.pipeline import explain_batch, read_records
from rulescribe.rules import Atom, Constant, Rule, Variable, parse_rule, render_rule
from rulescribe.store import ingest_triples

from conftest import FAMILY5_LINES, FAMILY5_RULE_TEXT
from oracles import (
    krippendorff_formula,
    naive_metrics,
    naive_mine,
    random_rule,
    random_store,
    spearman_formula,
)

REPO_ROOT = Path(__file__).resolve().parent.parent


def _report(cid: str, detail: str) -> None:
    print(f"ACCEPTANCE {cid} PASS — {detail}")


# -- C1: oracle equivalence --------------------------------------------------------

def test_c1_rule_metric_oracle_equivalence_1000_stores():
    """compute_metrics and mine_rules match the exhaustive nested-loop oracle
    on >= 1000 random stores (<= 200 facts, <= 6 predicates); support
    integer-equal, hc/conf within 1e-12."""
    rng = random.Random(20260808)
    n_stores = 1000
    checked_rules = 0
    for i in range(n_stores):
        if i % 10 == 9:  # push toward the caps regularly
            store = random_store(rng, max_entities=14, max_preds=6, max_facts=200)
        else:
            store = random_store(rng, max_entities=8, max_preds=3, max_facts=60)
        for _ in range(3):
            rule = random_rule(rng, store)
            m = compute_metrics(rule, store)
            support, hc, conf = naive_metrics(rule, store)
            assert m.support == support
            assert abs(m.head_coverage - hc) <= 1e-12
            assert abs(m.std_confidence - conf) <= 1e-12
            checked_rules += 1
        mined = {
            render_rule(r): (mm.support, mm.head_coverage, mm.std_confidence)
            for r, mm in mine_rules(store, 0.1, 0.1, max_atoms=3)
        }
        oracle = naive_mine(store, 0.1, 0.1, max_atoms=3)
        assert set(mined) == set(oracle)
        for text, (support, hc, conf) in oracle.items():
            got = mined[text]
            assert got[0] == support
            assert abs(got[1] - hc) <= 1e-12
            assert abs(got[2] - conf) <= 1e-12
    _report("C1", f"{n_stores} random stores, {checked_rules} spot-check rules + full mining equivalence")


# -- C2: family5 via the CLI ----------------------------------------------------------

def test_c2_family5_cli_bit_exact(tmp_path):
    triples = tmp_path / "kg.tsv"
    triples.write_text("".join(FAMILY5_LINES))
    rules_file = tmp_path / "rules.tsv"
    rules_file.write_text(FAMILY5_RULE_TEXT + "\n")
    result = CliRunner().invoke(
        cli_main, ["metrics", "--rules", str(rules_file), "--triples", str(triples)]
    )
    assert result.exit_code == 0
    assert result.output == f"{FAMILY5_RULE_TEXT}\t1\t1.0\t0.5\n"
    _report("C2", "family5 rule R -> support 1, head_coverage 1.0, std_confidence 0.5, bit-exact TSV")


# -- C3: FB15k-scale performance smoke --------------------------------------------------

def _generate_fb15k_scale(path: Path, n_facts=310_116, n_preds=237, n_entities=14_541, seed=42):
    rng = random.Random(seed)
    per = n_facts // n_preds
    extra = n_facts - per * n_preds
    with path.open("w") as fh:
        prev_pairs: list[tuple[int, int]] = []
        for p in range(n_preds):
            want = per + (1 if p < extra else 0)
            pairs: set[tuple[int, int]] = set()
            if p % 2 == 1:  # odd predicates share a third of the previous one's pairs
                pairs.update(prev_pairs[: want // 3])
            while len(pairs) < want:
                pairs.add((rng.randrange(n_entities), rng.randrange(n_entities)))
            pair_list = sorted(pairs)
            rel = f"/d{p % 10}/t{p % 40}/rel_{p}"
            for s, o in pair_list:
                fh.write(f"e{s}\t{rel}\te{o}\n")
            prev_pairs = pair_list


def _fb15k_rules(n=1000, n_preds=237, seed=7) -> list[Rule]:
    rng = random.Random(seed)

    def rel(i):
        return f"/d{i % 10}/t{i % 40}/rel_{i}"

    rules = []
    for k in range(n):
        i = rng.randrange(n_preds - 1)
        j = rng.randrange(n_preds)
        shape = k % 4
        if shape == 0:
            text = f"?a\t{rel(i)}\t?b => ?a\t{rel(i + 1)}\t?b"
        elif shape == 1:
            text = f"?a\t{rel(i)}\t?b => ?b\t{rel(j)}\t?a"
        elif shape == 2:
            text = f"?a\t{rel(i)}\t?b & ?b\t{rel(j)}\t?c => ?a\t{rel(i + 1)}\t?c"
        else:
            text = f"?a\t{rel(i)}\t?c & ?b\t{rel(j)}\t?c => ?a\t{rel(i + 1)}\t?b"
        rules.append(parse_rule(text))
    return rules


def test_c3_fb15k_scale_smoke(tmp_path):
    """Ingest 310,116 synthetic triples and evaluate metrics for 1,000 parsed
    rules in under 60 seconds (corpus generation excluded from the budget)."""
    path = tmp_path / "fb15k_scale.tsv"
    _generate_fb15k_scale(path)
    rules = _fb15k_rules()

    started = time.monotonic()
    store = ingest_triples(path)
    assert store.n_facts == 310_116
    with_support = 0
    for rule in rules:
        if compute_metrics(rule, store).support > 0:
            with_support += 1
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    assert with_support > 50  # the corpus correlations make the joins non-trivial
    _report("C3", f"310,116 triples ingested + 1,000 rule metrics in {elapsed:.1f}s (< 60s)")


# -- C4: parser round-trip ----------------------------------------------------------------

def _random_parser_rule(rng: random.Random) -> Rule:
    def relation():
        kind = rng.randrange(3)
        if kind == 0:
            return "/" + "/".join(_word(rng) for _ in range(3))
        if kind == 1:  # concatenated, distinct final labels
            first = [_word(rng) for _ in range(3)]
            second = [_word(rng) for _ in range(2)] + [_word(rng) + "x"]
            return "/" + "/".join(first) + "-/" + "/".join(second)
        return _word(rng)

    def constant():
        n = rng.randint(1, 3)
        return " ".join(_word(rng).capitalize() for _ in range(n))  # constants with spaces

    v1, v2, v3 = Variable("?a"), Variable("?b"), Variable("?c")
    body = [Atom(v1, relation(), v2)]
    if rng.random() < 0.5:
        tail = Constant(constant()) if rng.random() < 0.5 else v3
        body.append(Atom(v2, relation(), tail))
    head_obj = Constant(constant()) if rng.random() < 0.4 else v2
    return Rule(tuple(body), Atom(v1, relation(), head_obj))


def _word(rng: random.Random) -> str:
    return "".join(rng.choice("abcdefghijklmnopqrstuvwxyz_") for _ in range(rng.randint(2, 8))).strip("_") or "w"


def test_c4_parser_round_trip_10000():
    rng = random.Random(99)
    concatenated = 0
    spaced = 0
    for _ in range(10_000):
        rule = _random_parser_rule(rng)
        text = render_rule(rule, "machine")
        reparsed = parse_rule(text)
        assert reparsed == rule
        assert render_rule(reparsed, "machine") == text
        if "-/" in text:
            concatenated += 1
        if any(" " in t.label for a in rule.atoms() for t in (a.subject, a.object) if isinstance(t, Constant)):
            spaced += 1
    assert concatenated > 1000 and spaced > 1000
    _report("C4", f"10,000 generated rules round-tripped ({concatenated} concatenated labels, {spaced} spaced constants)")


# -- C5: metric sanity suite ------------------------------------------------------------------

def test_c5_metric_sanity_suite():
    # identity / disjoint
    assert bleu("a b c d e", ["a b c d e"]) == pytest.approx(1.0, abs=1e-12)
    assert rouge_l("a b c", "a b c").f1 == pytest.approx(1.0, abs=1e-12)
    long_a = " ".join(f"w{i}" for i in range(20))
    long_b = " ".join(f"v{i}" for i in range(20))
    assert bleu(long_a, [long_b]) < 0.1
    assert rouge_l(long_a, long_b).f1 == 0.0
    assert meteor(long_a, long_b) == 0.0
    for m in (1, 2, 3, 7, 20):
        sentence = " ".join(f"tok{i}" for i in range(m))
        assert meteor(sentence, sentence) == pytest.approx(1 - 0.5 * (1 / m) ** 3, abs=1e-9)
    # spearman on monotone / reversed inputs
    xs = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0]
    ys_up = [x * 2 + 1 for x in xs]
    assert spearman(xs, ys_up) == pytest.approx(1.0, abs=1e-12)
    assert spearman(xs, [-y for y in ys_up]) == pytest.approx(-1.0, abs=1e-12)
    # alpha: unanimous fixture
    assert krippendorff_alpha([[4, 4, 4], [1, 1, 1], [3, 3, 3]]) == pytest.approx(1.0, abs=1e-12)
    # alpha: 10,000-item independent uniform synthetic (Monte-Carlo oracle: alpha ~ 0)
    rng = random.Random(4242)
    rows = [[rng.randint(1, 5), rng.randint(1, 5)] for _ in range(10_000)]
    alpha = krippendorff_alpha(rows, level="ordinal")
    assert abs(alpha) < 0.05
    _report("C5", f"BLEU/ROUGE-L/METEOR identity+disjoint, METEOR formula to 1e-9, spearman ±1, alpha 1.0 and {alpha:+.4f} on uniform")


# -- C6: end-to-end replay pipeline -------------------------------------------------------------

GEN_CFG = ModelConfig(model_name="generator-model", endpoint="http://stub.local/v1")
JUDGE_CFG = ModelConfig(model_name="judge-model", endpoint="http://stub.local/v1")
FIXED_CLOCK = lambda: 1_760_000_000.0


def _corpus(workdir: Path, n_rules: int):
    lines = []
    rule_texts = []
    for i in range(n_rules):
        lines.append(f"s{i}\tbrel{i}\to{i}\n")
        lines.append(f"s{i}\threl{i}\to{i}\n")
        rule_texts.append(f"?x\tbrel{i}\t?y => ?x\threl{i}\t?y")
    triples = workdir / "kg.tsv"
    triples.write_text("".join(lines))
    rules_file = workdir / "rules.tsv"
    rules_file.write_text("\n".join(rule_texts) + "\n")
    return triples, rules_file


def _stub_transport(n_review: int):
    """Deterministic fake backend: explanations echo the rule; judge scores
    depend on the rule index (below n_review -> 3/review, else 5/accept)."""

    def transport(url, payload, headers, timeout):
        prompt = payload["messages"][0]["content"]
        is_judge = "Scoring rubric" in prompt
        match = re.search(r"brel(\d+)", prompt)
        idx = int(match.group(1)) if match else 0
        if not is_judge:
            text = f"Whenever something brel-{idx} links two things, the hrel-{idx} link follows."
        else:
            score = 3 if idx < n_review else 5
            text = (
                "Q1: yes\nQ2: none\nQ3: yes\nQ4: yes\nQ5: yes\nQ6: no\n"
                f"RATIONALE: deterministic stub\nSCORE: {score}"
            )
        return {"choices": [{"message": {"content": text}}]}

    return transport


def _record_fixtures(workdir: Path, rules_file, triples, n_review: int) -> Path:
    fixtures = workdir / "fixtures"
    fixtures.mkdir()
    store = ingest_triples(triples)
    recorder = LlmGateway(mode="record", fixture_dir=fixtures, transport=_stub_transport(n_review))
    summary = explain_batch(
        rules_file, workdir / "seed_records.jsonl", None,
        strategy="zero_shot", profile="freebase", store=store, gateway=recorder,
        model_config=GEN_CFG, seed=11, clock=FIXED_CLOCK,
    )
    assert summary.failed == 0
    for record in read_records(workdir / "seed_records.jsonl"):
        judge_explanation(record, recorder, JUDGE_CFG)  # records 3 runs per item
    return fixtures


def _run_replay_pipeline(workdir: Path, fixtures: Path, rules_file, triples, n_review: int, sizes) -> dict[str, bytes]:
    """explain -> judge -> gate -> annotate reviews -> splits -> export, all
    in replay mode with a fixed clock; returns every artifact's bytes."""
    from rulescribe.curation import AnnotationRecord

    store = ingest_triples(triples)
    gateway = LlmGateway(mode="replay", fixture_dir=fixtures)
    records_path = workdir / "records.jsonl"
    summary = explain_batch(
        rules_file, records_path, None,
        strategy="zero_shot", profile="freebase", store=store, gateway=gateway,
        model_config=GEN_CFG, seed=11, clock=FIXED_CLOCK,
    )
    assert summary.failed == 0 and summary.ok > 0

    verdicts_path = workdir / "verdicts.jsonl"
    records = read_records(records_path)
    with verdicts_path.open("w", encoding="utf-8") as fh:
        for record in records:
            verdict = judge_explanation(record, gateway, JUDGE_CFG)
            fh.write(json.dumps(verdict.to_dict(), ensure_ascii=False) + "\n")

    log_path = workdir / "events.jsonl"
    cur_store = CurationStore(log_path, clock=FIXED_CLOCK)
    verdicts = [JudgeVerdict.from_dict(json.loads(l)) for l in verdicts_path.read_text().splitlines()]
    by_item = {v.item_id: v for v in verdicts}
    for record in records:
        cur_store.ingest(record.to_dict(), by_item[record.item_id], threshold=4.5, max_spread=1.0)

    # human pass over everything the gate routed to review
    k = 0
    while True:
        item = cur_store.claim_next("annotator-1")
        if item is None:
            break
        if k % 2 == 0:
            ann = AnnotationRecord(item.item_id, "annotator-1", 5, 5, 3)
        else:
            ann = AnnotationRecord(
                item.item_id, "annotator-1", 3, 4, 3,
                edited_explanation=f"Edited: {item.draft.explanation}",
            )
        cur_store.submit_annotation(item.item_id, ann, "annotator-1")
        k += 1
    assert k == n_review

    entries = cur_store.entries()
    splits = build_splits(entries, sizes, seed=2026)
    artifacts = {
        "records": records_path.read_bytes(),
        "verdicts": verdicts_path.read_bytes(),
        "events": log_path.read_bytes(),
        "splits": json.dumps(splits.to_dict(), indent=2).encode(),
    }
    for name in ("train", "val", "test"):
        artifacts[f"export_{name}"] = export_jsonl(splits.split(name), "freebase")
    human_ids = {e.item_id for e in entries if e.is_human}
    eval_ids = {e.item_id for s in ("val", "test") for e in splits.split(s)}
    artifacts["_human_in_eval"] = json.dumps(sorted(human_ids)).encode() if human_ids <= eval_ids else b"VIOLATION"
    artifacts["_shape"] = json.dumps({k: len(splits.split(k)) for k in ("train", "val", "test")}).encode()
    return artifacts


def test_c6_end_to_end_replay_pipeline(tmp_path):
    # 20-rule fixture set: byte-reproducible across two replay runs
    seed_dir = tmp_path / "seed20"
    seed_dir.mkdir()
    triples, rules_file = _corpus(seed_dir, 20)
    fixtures = _record_fixtures(seed_dir, rules_file, triples, n_review=4)
    sizes = {"train": 12, "val": 4, "test": 4}
    run_a = _run_replay_pipeline(_mk(tmp_path / "runA"), fixtures, rules_file, triples, 4, sizes)
    run_b = _run_replay_pipeline(_mk(tmp_path / "runB"), fixtures, rules_file, triples, 4, sizes)
    assert set(run_a) == set(run_b)
    for name in run_a:
        assert run_a[name] == run_b[name], f"artifact {name} differs between runs"
    assert run_a["_human_in_eval"] != b"VIOLATION"

    # scaled to the 500-entry fixture: 400/50/50 with human entries confined to val/test
    big_dir = tmp_path / "seed500"
    big_dir.mkdir()
    triples500, rules500 = _corpus(big_dir, 500)
    fixtures500 = _record_fixtures(big_dir, rules500, triples500, n_review=100)
    run_big = _run_replay_pipeline(
        _mk(tmp_path / "run500"), fixtures500, rules500, triples500, 100,
        {"train": 400, "val": 50, "test": 50},
    )
    assert json.loads(run_big["_shape"]) == {"train": 400, "val": 50, "test": 50}
    assert run_big["_human_in_eval"] != b"VIOLATION"
    for name, want in (("export_train", 400), ("export_val", 50), ("export_test", 50)):
        assert len(run_big[name].decode().splitlines()) == want
    _report("C6", "20-rule replay byte-reproducible; 500-entry fixture exports 400/50/50 with human entries in val∪test")


def _mk(path: Path) -> Path:
    path.mkdir()
    return path


# -- C7: judge protocol conformance ------------------------------------------------------------------

def test_c7_judge_protocol_conformance(tmp_path):
    triples = tmp_path / "kg.tsv"
    triples.write_text("s0\tbrel0\to0\ns0\threl0\to0\n")
    rules_file = tmp_path / "rules.tsv"
    rules_file.write_text("?x\tbrel0\t?y => ?x\threl0\t?y\n")
    fixtures = tmp_path / "fixtures"
    fixtures.mkdir()
    store = ingest_triples(triples)
    scores = iter([4, 5, 3])

    def transport(url, payload, headers, timeout):
        prompt = payload["messages"][0]["content"]
        if "Scoring rubric" in prompt:
            text = f"Q1: yes\nQ2: none\nQ3: yes\nQ4: yes\nQ5: yes\nQ6: no\nRATIONALE: r\nSCORE: {next(scores)}"
        else:
            text = "brel0 implies hrel0."
        return {"choices": [{"message": {"content": text}}]}

    recorder = LlmGateway(mode="record", fixture_dir=fixtures, transport=transport)
    explain_batch(
        rules_file, tmp_path / "records.jsonl", None,
        strategy="zero_shot", profile="freebase", store=store, gateway=recorder,
        model_config=GEN_CFG, seed=1, clock=FIXED_CLOCK,
    )
    (record,) = read_records(tmp_path / "records.jsonl")

    prompt = build_judge_prompt(record, record.sample_instances[0], record.variable_types)
    assert "Do all variable entities stated in the rule appear in the explanation?" in prompt

    verdict = judge_explanation(record, recorder, JUDGE_CFG, runs=3)
    assert len(verdict.runs) == 3
    assert verdict.aggregate_score == pytest.approx(4.0, abs=1e-12)  # mean(4,5,3)
    assert verdict.consistency_spread == 2  # max - min
    _report("C7", "verbatim verification question present; 3 runs; {4,5,3} -> aggregate 4.0, spread 2")


# -- C8: agreement pipeline -----------------------------------------------------------------------------

def test_c8_agreement_pipeline():
    from rulescribe.judge import JudgeRun

    rng = random.Random(777)
    judge_scores = [round(rng.uniform(1, 5) * 3) / 3 for _ in range(100)]  # thirds, like mean-of-3 runs
    human_scores = [round(min(5, max(1, s + rng.gauss(0, 0.7))) * 3) / 3 for s in judge_scores]
    verdicts = [
        JudgeVerdict(f"item-{i}", "judge-model", [JudgeRun(max(1, min(5, round(s))))], s, 0)
        for i, s in enumerate(judge_scores)
    ]
    human = {f"item-{i}": h for i, h in enumerate(human_scores)}
    report = agreement(verdicts, human)
    assert report.n_items == 100
    assert report.spearman_rho == pytest.approx(spearman_formula(judge_scores, human_scores), abs=1e-9)
    expected_alpha = krippendorff_formula([[j, h] for j, h in zip(judge_scores, human_scores)], "ordinal")
    assert report.krippendorff_alpha == pytest.approx(expected_alpha, abs=1e-9)

    # known rank structure: a strictly monotone human transform gives rho exactly 1
    monotone_human = {f"item-{i}": s * 0.5 + 1 for i, s in enumerate(judge_scores)}
    assert agreement(verdicts, monotone_human).spearman_rho == pytest.approx(1.0, abs=1e-9)
    _report("C8", f"100-item synthetic agreement matches formula oracles to 1e-9 (rho={report.spearman_rho:+.3f}, alpha={report.krippendorff_alpha:+.3f})")


# -- C9: live-mode runbook (tables 2-5 are not desk-reproducible) -----------------------------------------

def test_c9_live_mode_runbook_documented():
    readme = (REPO_ROOT / "README.md").read_text("utf-8")
    assert "## Live-mode runbook" in readme
    for needle in ("record", "replay", "judge", "export", "API key"):
        assert needle in readme, f"runbook must mention {needle!r}"
    _report("C9", "replay determinism + metric oracles stand in for the human/closed-model tables; runbook documented in README")
