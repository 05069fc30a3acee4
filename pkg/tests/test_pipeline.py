import json

import pytest

from rulescribe.gateway import LlmGateway, ModelConfig
from rulescribe.pipeline import (
    ExplanationRecord,
    PipelineError,
    explain_batch,
    explain_rule,
    read_records,
    resolve_types,
)
from rulescribe.rules import parse_rule
from rulescribe.store import catalog_from_id_prefixes, ingest_entity_types, ingest_triples

from conftest import SPACEFLIGHT_LINES, SPACEFLIGHT_RULE_TEXT

GEN = ModelConfig(model_name="gen-model", endpoint="http://stub.local/v1/chat")
FIXED_CLOCK = lambda: 1_750_000_000.0


def scripted_transport(fn):
    def transport(url, payload, headers, timeout):
        text = fn(payload["messages"][0]["content"])
        return {"choices": [{"message": {"content": text}}]}

    return transport


@pytest.fixture
def spaceflight_setup(tmp_path):
    store = ingest_triples(SPACEFLIGHT_LINES)
    catalog = ingest_entity_types(
        [
            "RD-161P\trocket engine\n",
            "RD-0146\trocket engine\n",
            "Hydrogen peroxide\tchemical\n",
            "NPO Energomash\tmanufacturer\n",
            "Liquid oxygen\tchemical\n",
        ],
        store,
    )
    fixtures = tmp_path / "fixtures"
    fixtures.mkdir()
    recorder = LlmGateway(
        mode="record",
        fixture_dir=fixtures,
        transport=scripted_transport(lambda p: "Engines oxidized by hydrogen peroxide are made by NPO Energomash."),
    )
    return store, catalog, fixtures, recorder


def test_explain_rule_cot_replay(spaceflight_setup):
    store, catalog, fixtures, recorder = spaceflight_setup
    rule = parse_rule(SPACEFLIGHT_RULE_TEXT)
    record = explain_rule(
        rule, "cot", "freebase", store, recorder, GEN, seed=7, catalog=catalog, clock=FIXED_CLOCK
    )
    assert record.explanation_text
    assert record.variable_types[0].variable == "?a"
    assert record.variable_types[0].type_label == "rocket engine"
    assert record.prompt in recorder.mode or record.prompt  # prompt embedded
    assert record.rule_text == SPACEFLIGHT_RULE_TEXT
    assert record.generation_mode == "record"

    replayer = LlmGateway(mode="replay", fixture_dir=fixtures)
    replayed = explain_rule(
        rule, "cot", "freebase", store, replayer, GEN, seed=7, catalog=catalog, clock=FIXED_CLOCK
    )
    assert replayed.explanation_text == record.explanation_text
    assert replayed.generation_mode == "replay"
    # determinism: identical record apart from generation mode
    a, b = record.to_dict(), replayed.to_dict()
    a.pop("generation_mode"), b.pop("generation_mode")
    assert a == b


def test_record_serialization_roundtrip(spaceflight_setup):
    store, catalog, fixtures, recorder = spaceflight_setup
    rule = parse_rule(SPACEFLIGHT_RULE_TEXT)
    record = explain_rule(
        rule, "typed", "freebase", store, recorder, GEN, seed=1, catalog=catalog, clock=FIXED_CLOCK
    )
    assert ExplanationRecord.from_dict(record.to_dict()).to_dict() == record.to_dict()


def test_resolve_types_llm_fallback(spaceflight_setup, stub_gateway_cls):
    store, _catalog, _fixtures, _recorder = spaceflight_setup
    rule = parse_rule(SPACEFLIGHT_RULE_TEXT)
    from rulescribe.engine import sample_instances

    instances = sample_instances(rule, store, k=1, seed=0)
    gateway = stub_gateway_cls(["?a = rocket engine"])
    typed = resolve_types(rule, store, None, gateway, ModelConfig(model_name="typer"), instances)
    assert typed[0].method == "llm-inferred"


def test_resolve_types_no_source(spaceflight_setup):
    store, _catalog, _f, _r = spaceflight_setup
    rule = parse_rule(SPACEFLIGHT_RULE_TEXT)
    from rulescribe.vartypes import TypingError

    with pytest.raises(TypingError):
        resolve_types(rule, store, None, None, None, [])


def test_explain_batch(tmp_path, spaceflight_setup):
    store, catalog, fixtures, recorder = spaceflight_setup
    rules_file = tmp_path / "rules.tsv"
    rules_file.write_text(
        SPACEFLIGHT_RULE_TEXT + "\n"
        "?a\t/spaceflight/bipropellant_rocket_engine/oxidizer\tLiquid oxygen => "
        "?a\t/spaceflight/rocket_engine/manufactured_by\tNPO Energomash\n"
    )
    out = tmp_path / "records.jsonl"
    summary = explain_batch(
        rules_file, out, tmp_path / "run.log",
        strategy="zero_shot", profile="freebase", store=store, gateway=recorder,
        model_config=GEN, seed=3, catalog=catalog, clock=FIXED_CLOCK,
    )
    assert summary.to_dict() == {"ok": 2, "failed": 0, "skipped": 0}
    records = read_records(out)
    assert len(records) == 2
    assert all(r.explanation_text for r in records)

    # resume: everything already present
    replayer = LlmGateway(mode="replay", fixture_dir=fixtures)
    summary2 = explain_batch(
        rules_file, out, None, resume=True,
        strategy="zero_shot", profile="freebase", store=store, gateway=replayer,
        model_config=GEN, seed=3, catalog=catalog, clock=FIXED_CLOCK,
    )
    assert summary2.to_dict() == {"ok": 0, "failed": 0, "skipped": 2}
    assert len(read_records(out)) == 2  # unchanged


def test_explain_batch_poisoned_rule_continues(tmp_path, spaceflight_setup):
    store, catalog, fixtures, recorder = spaceflight_setup
    rules_file = tmp_path / "rules.tsv"
    lines = [SPACEFLIGHT_RULE_TEXT] * 9 + ["?a broken_atom => ?a r ?b"]
    rules_file.write_text("\n".join(lines) + "\n")
    log = tmp_path / "run.log"
    summary = explain_batch(
        rules_file, tmp_path / "out.jsonl", log,
        strategy="zero_shot", profile="freebase", store=store, gateway=recorder,
        model_config=GEN, seed=3, catalog=catalog, clock=FIXED_CLOCK,
    )
    # 9 duplicates of the same rule all succeed; the malformed line fails
    assert summary.ok == 9
    assert summary.failed == 1
    entries = [json.loads(l) for l in log.read_text().splitlines()]
    assert entries and "parse error" in entries[0]["error"]


def test_explain_batch_typing_failure_is_nonfatal(tmp_path):
    store = ingest_triples(["a\tr1\tb\n", "a\tr2\tb\n"])
    rules_file = tmp_path / "rules.tsv"
    rules_file.write_text("?x r1 ?y => ?x r2 ?y\n")
    fixtures = tmp_path / "fx"
    fixtures.mkdir()
    gateway = LlmGateway(mode="record", fixture_dir=fixtures, transport=scripted_transport(lambda p: "text"))
    summary = explain_batch(
        rules_file, tmp_path / "out.jsonl", None,
        strategy="typed", profile="freebase", store=store, gateway=gateway,
        model_config=GEN, seed=1, catalog=None, clock=FIXED_CLOCK,
    )
    assert summary.ok == 0
    assert summary.failed == 1


def test_explain_batch_unreadable_file_aborts(tmp_path, spaceflight_setup):
    store, catalog, _fixtures, recorder = spaceflight_setup
    with pytest.raises(PipelineError, match="cannot read"):
        explain_batch(
            tmp_path / "missing.tsv", tmp_path / "out.jsonl", None,
            strategy="zero_shot", profile="freebase", store=store, gateway=recorder,
            model_config=GEN, seed=1, catalog=catalog,
        )


def test_batch_output_line_count_matches_ok(tmp_path, spaceflight_setup):
    store, catalog, _fixtures, recorder = spaceflight_setup
    rules_file = tmp_path / "rules.tsv"
    rules_file.write_text(SPACEFLIGHT_RULE_TEXT + "\n")
    out = tmp_path / "out.jsonl"
    summary = explain_batch(
        rules_file, out, None,
        strategy="few_shot", profile="freebase", store=store, gateway=recorder,
        model_config=GEN, seed=1, catalog=catalog, clock=FIXED_CLOCK,
    )
    assert summary.ok == len(out.read_text().splitlines())
