"""Single entry point: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 operational error, 2 usage error. All randomness is
controlled by --seed; replay mode plus a fixed seed is bit-reproducible.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import curation as cur
from . import engine, judge as judge_mod, metrics as m, pipeline, prompts, rules, store as kg, vartypes
from .gateway import GatewayError, LlmGateway, ModelConfig

_KNOWN_CONFIG_KEYS = {
    "profile": None,
    "paths": {"triples", "types", "rules", "fixtures", "event_log", "out_dir"},
    "models": {"generator", "judge", "typer"},
    "gate": {"threshold", "max_spread"},
    "seeds": {"default"},
    "lease_seconds": None,
}
_MODEL_KEYS = {"name", "endpoint", "temperature", "max_tokens", "api_key_env", "min_interval_s"}


@dataclass
class RunConfig:
    profile: str = "freebase"
    paths: dict[str, str] = field(default_factory=dict)
    models: dict[str, dict] = field(default_factory=dict)
    gate_threshold: float = cur.DEFAULT_GATE_THRESHOLD
    gate_max_spread: float = cur.DEFAULT_MAX_SPREAD
    seed: int = 0
    lease_seconds: float = cur.DEFAULT_LEASE_SECONDS

    def model_config(self, role: str, **overrides) -> ModelConfig | None:
        base = dict(self.models.get(role, {}))
        base.update({k: v for k, v in overrides.items() if v is not None})
        if not base.get("name"):
            return None
        return ModelConfig(
            model_name=base["name"],
            endpoint=base.get("endpoint", ""),
            temperature=float(base.get("temperature", 0.0)),
            max_tokens=int(base.get("max_tokens", 512)),
            api_key_env=base.get("api_key_env", ""),
            min_interval_s=float(base.get("min_interval_s", 0.0)),
        )


def load_config(path: str | None) -> RunConfig:
    """Parse the TOML run config; unknown keys are rejected and referenced
    paths must exist."""
    cfg = RunConfig()
    if path is None:
        return cfg
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    for key, value in data.items():
        if key not in _KNOWN_CONFIG_KEYS:
            raise click.ClickException(f"unknown config key {key!r}")
        allowed = _KNOWN_CONFIG_KEYS[key]
        if allowed is not None:
            for sub in value:
                if sub not in allowed:
                    raise click.ClickException(f"unknown config key {key}.{sub}")
    cfg.profile = data.get("profile", cfg.profile)
    cfg.paths = dict(data.get("paths", {}))
    for name, p in cfg.paths.items():
        if name != "out_dir" and not Path(p).exists():
            raise click.ClickException(f"config path {name} = {p!r} does not exist")
    for role, table in data.get("models", {}).items():
        for sub in table:
            if sub not in _MODEL_KEYS:
                raise click.ClickException(f"unknown config key models.{role}.{sub}")
        cfg.models[role] = dict(table)
    gate_cfg = data.get("gate", {})
    cfg.gate_threshold = float(gate_cfg.get("threshold", cfg.gate_threshold))
    cfg.gate_max_spread = float(gate_cfg.get("max_spread", cfg.gate_max_spread))
    cfg.seed = int(data.get("seeds", {}).get("default", cfg.seed))
    cfg.lease_seconds = float(data.get("lease_seconds", cfg.lease_seconds))
    return cfg


def _load_store(triples: str) -> kg.TripleStore:
    try:
        return kg.ingest_triples(triples)
    except (kg.IngestError, OSError) as err:
        raise click.ClickException(str(err))


def _load_catalog(triple_store: kg.TripleStore, types: str | None, infer_ids: bool) -> kg.TypeCatalog | None:
    if types:
        try:
            return kg.ingest_entity_types(types, triple_store)
        except (kg.IngestError, OSError) as err:
            raise click.ClickException(str(err))
    if infer_ids:
        return kg.catalog_from_id_prefixes(triple_store)
    return None


def _read_rules(path: str, max_atoms: int = 3) -> list[rules.Rule]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return list(rules.read_rules(fh, max_atoms=max_atoms))
    except rules.RuleParseError as err:
        raise click.ClickException(f"{path}: {err}")
    except OSError as err:
        raise click.ClickException(str(err))


def _out(ctx_out: str | None):
    return open(ctx_out, "w", encoding="utf-8") if ctx_out else sys.stdout


def _gateway(mode: str, fixtures: str | None, jobs: int) -> LlmGateway:
    try:
        return LlmGateway(mode=mode, fixture_dir=fixtures, max_in_flight=max(jobs, 1))
    except ValueError as err:
        raise click.ClickException(str(err))


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="TOML run config.")
@click.pass_context
def main(ctx, config_path):
    """rulescribe: explain mined KG rules, judge the explanations, curate datasets."""
    ctx.obj = load_config(config_path)


@main.command()
@click.option("--triples", required=True, type=click.Path(exists=True))
@click.option("--types", type=click.Path(exists=True), default=None)
def ingest(triples, types):
    """Validate and summarize a triple dump (and optional type TSV)."""
    triple_store = _load_store(triples)
    click.echo(f"facts\t{triple_store.n_facts}")
    click.echo(f"entities\t{triple_store.n_entities}")
    click.echo(f"predicates\t{triple_store.n_predicates}")
    if types:
        catalog = _load_catalog(triple_store, types, False)
        click.echo(f"typed_entities\t{len(catalog)}")


@main.command()
@click.option("--rules", "rules_path", required=True, type=click.Path(exists=True))
@click.option("--triples", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path())
def metrics(rules_path, triples, out):
    """Support, head coverage, and std confidence per rule, as TSV."""
    triple_store = _load_store(triples)
    fh = _out(out)
    for rule in _read_rules(rules_path):
        rm = engine.compute_metrics(rule, triple_store)
        fh.write(f"{rules.render_rule(rule)}\t{rm.support}\t{rm.head_coverage}\t{rm.std_confidence}\n")
    if fh is not sys.stdout:
        fh.close()


@main.command()
@click.option("--triples", required=True, type=click.Path(exists=True))
@click.option("--min-hc", default=0.1, show_default=True)
@click.option("--min-conf", default=0.1, show_default=True)
@click.option("--max-atoms", default=3, show_default=True)
@click.option("--constants", "constant_budget", default=0, show_default=True, help="Constant budget for mined rules.")
@click.option("--out", default=None, type=click.Path())
def mine(triples, min_hc, min_conf, max_atoms, constant_budget, out):
    """Mine closed rules above the thresholds, as TSV."""
    triple_store = _load_store(triples)
    try:
        mined = engine.mine_rules(triple_store, min_hc, min_conf, max_atoms, constant_budget)
    except ValueError as err:
        raise click.ClickException(str(err))
    fh = _out(out)
    for rule, rm in mined:
        fh.write(f"{rules.render_rule(rule)}\t{rm.support}\t{rm.head_coverage}\t{rm.std_confidence}\n")
    if fh is not sys.stdout:
        fh.close()


@main.command()
@click.option("--rules", "rules_path", required=True, type=click.Path(exists=True))
@click.option("--triples", required=True, type=click.Path(exists=True))
@click.option("-k", "--count", default=3, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--out", default=None, type=click.Path())
@click.pass_obj
def instances(cfg, rules_path, triples, count, seed, out):
    """Sample grounded instances per rule, as JSONL."""
    triple_store = _load_store(triples)
    seed = cfg.seed if seed is None else seed
    fh = _out(out)
    for rule in _read_rules(rules_path):
        for grounded in engine.sample_instances(rule, triple_store, k=count, seed=seed):
            fh.write(json.dumps(grounded.to_dict(), ensure_ascii=False) + "\n")
    if fh is not sys.stdout:
        fh.close()


@main.command()
@click.option("--rules", "rules_path", required=True, type=click.Path(exists=True))
@click.option("--triples", required=True, type=click.Path(exists=True))
@click.option("--types", type=click.Path(exists=True), default=None)
@click.option("--infer-ids", is_flag=True, help="Synthesize the catalog from `type_123`-style entity ids.")
@click.option("--method", type=click.Choice(["schema", "llm", "both"]), default="schema", show_default=True)
@click.option("--mode", type=click.Choice(list("live record replay".split())), default="replay", show_default=True)
@click.option("--fixtures", type=click.Path(), default=None)
@click.option("--model", default=None, help="Typer model name (llm/both).")
@click.option("--endpoint", default=None)
@click.option("--seed", default=None, type=int)
@click.option("--out", default=None, type=click.Path())
@click.pass_obj
def typeof(cfg, rules_path, triples, types, infer_ids, method, mode, fixtures, model, endpoint, seed, out):
    """Variable types per rule, as TSV: rule-id, variable, type, method."""
    triple_store = _load_store(triples)
    catalog = _load_catalog(triple_store, types, infer_ids)
    seed = cfg.seed if seed is None else seed
    gateway = None
    typer_config = None
    if method in ("llm", "both"):
        typer_config = cfg.model_config("typer", name=model, endpoint=endpoint)
        if typer_config is None:
            raise click.ClickException("llm typing needs a typer model (--model or [models.typer])")
        gateway = _gateway(mode, fixtures or cfg.paths.get("fixtures"), 1)
    fh = _out(out)
    for rule in _read_rules(rules_path):
        try:
            typed: list[vartypes.TypedVariable]
            if method == "schema":
                if catalog is None:
                    raise click.ClickException("schema typing needs --types or --infer-ids")
                typed = vartypes.schema_variable_types(rule, triple_store, catalog)
            else:
                insts = engine.sample_instances(rule, triple_store, k=3, seed=seed)
                llm_typed = vartypes.llm_variable_types(rule, insts, gateway, typer_config)
                if method == "llm":
                    typed = llm_typed
                else:
                    if catalog is None:
                        raise click.ClickException("method=both needs --types or --infer-ids")
                    schema_typed = vartypes.schema_variable_types(rule, triple_store, catalog)
                    typed = vartypes.merge_type_opinions(schema_typed, llm_typed)
        except (vartypes.TypingError, GatewayError) as err:
            raise click.ClickException(str(err))
        for tv in typed:
            fh.write(f"{rule.rule_id}\t{tv.variable}\t{tv.type_label}\t{tv.method}\n")
    if fh is not sys.stdout:
        fh.close()


@main.command()
@click.option("--rules", "rules_path", required=True, type=click.Path(exists=True))
@click.option("--triples", required=True, type=click.Path(exists=True))
@click.option("--types", type=click.Path(exists=True), default=None)
@click.option("--infer-ids", is_flag=True)
@click.option("--strategy", type=click.Choice(list(prompts.STRATEGIES)), required=True)
@click.option("--profile", default=None)
@click.option("--mode", type=click.Choice(["live", "record", "replay"]), default="replay", show_default=True)
@click.option("--fixtures", type=click.Path(), default=None)
@click.option("--model", default=None)
@click.option("--endpoint", default=None)
@click.option("--temperature", default=None, type=float)
@click.option("--api-key-env", default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--run-log", default=None, type=click.Path())
@click.option("--resume", is_flag=True)
@click.option("--seed", default=None, type=int)
@click.option("--jobs", default=1, show_default=True)
@click.option("--dump-prompt", is_flag=True, help="Print the rendered prompt for the first rule and exit.")
@click.pass_obj
def explain(cfg, rules_path, triples, types, infer_ids, strategy, profile, mode, fixtures,
            model, endpoint, temperature, api_key_env, out, run_log, resume, seed, jobs, dump_prompt):
    """Generate explanations for a rules file into JSONL records."""
    triple_store = _load_store(triples)
    catalog = _load_catalog(triple_store, types, infer_ids)
    profile = profile or cfg.profile
    seed = cfg.seed if seed is None else seed
    model_config = cfg.model_config(
        "generator", name=model, endpoint=endpoint, temperature=temperature, api_key_env=api_key_env
    )
    if model_config is None:
        raise click.ClickException("no generator model configured (--model or [models.generator])")
    gateway = _gateway(mode, fixtures or cfg.paths.get("fixtures"), jobs)

    if dump_prompt:
        rule = _read_rules(rules_path)[0]
        insts = engine.sample_instances(rule, triple_store, k=3, seed=seed)
        typed = None
        if strategy in ("typed", "cot"):
            typed = pipeline.resolve_types(rule, triple_store, catalog, gateway, cfg.model_config("typer"), insts)
        _spec, text = prompts.build_generation_prompt(rule, strategy, profile, typed)
        click.echo(text)
        return

    try:
        summary = pipeline.explain_batch(
            rules_path, out, run_log, resume=resume, jobs=jobs,
            strategy=strategy, profile=profile, store=triple_store, gateway=gateway,
            model_config=model_config, seed=seed, catalog=catalog,
            typer_config=cfg.model_config("typer"),
        )
    except pipeline.PipelineError as err:
        raise click.ClickException(str(err))
    click.echo(json.dumps(summary.to_dict()))
    if summary.ok == 0 and summary.failed > 0:
        raise click.ClickException("every rule in the batch failed")


@main.command("judge")
@click.option("--records", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["live", "record", "replay"]), default="replay", show_default=True)
@click.option("--fixtures", type=click.Path(), default=None)
@click.option("--judge-model", default=None)
@click.option("--endpoint", default=None)
@click.option("--runs", default=judge_mod.DEFAULT_RUNS, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_obj
def judge_cmd(cfg, records, mode, fixtures, judge_model, endpoint, runs, out):
    """Score ExplanationRecord JSONL with the LLM judge into verdict JSONL."""
    judge_config = cfg.model_config("judge", name=judge_model, endpoint=endpoint)
    if judge_config is None:
        raise click.ClickException("no judge model configured (--judge-model or [models.judge])")
    gateway = _gateway(mode, fixtures or cfg.paths.get("fixtures"), 1)
    n = 0
    with open(out, "w", encoding="utf-8") as fh:
        for record in pipeline.read_records(records):
            try:
                verdict = judge_mod.judge_explanation(record, gateway, judge_config, runs=runs)
            except (judge_mod.JudgeError, GatewayError) as err:
                raise click.ClickException(f"item {record.item_id}: {err}")
            fh.write(json.dumps(verdict.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    click.echo(f"judged\t{n}")


@main.command("eval")
@click.option("--candidates", required=True, type=click.Path(exists=True),
              help="JSONL: ExplanationRecords or {item_id, text}.")
@click.option("--references", required=True, type=click.Path(exists=True), help="JSONL: {item_id, text}.")
@click.option("--perplexity-endpoint", default=None)
@click.option("--out", default=None, type=click.Path())
def eval_cmd(candidates, references, perplexity_endpoint, out):
    """BLEU / ROUGE-L / METEOR per item plus corpus means, as TSV."""
    refs: dict[str, str] = {}
    with open(references, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                refs[row["item_id"]] = row["text"]
    rows = []
    with open(candidates, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            item_id = row["item_id"]
            text = row.get("text") or row.get("explanation_text", "")
            rule_text = row.get("rule_text")
            if item_id not in refs:
                continue
            ref = refs[item_id]
            entry = {
                "item_id": item_id,
                "bleu": m.bleu(text, [ref]),
                "rouge_l_f1": m.rouge_l(text, ref).f1,
                "meteor": m.meteor(text, ref),
            }
            if rule_text:
                report = m.faithfulness(rules.parse_rule(rule_text), text)
                entry["missed_entities"] = report.missed_entity_count
                entry["missed_relations"] = report.missed_relation_count
                entry["hallucinated_entities"] = report.hallucinated_entity_count
                entry["hallucinated_relations"] = report.hallucinated_relation_count
            if perplexity_endpoint:
                ppl = m.external_perplexity(text, perplexity_endpoint)
                entry["perplexity"] = "" if ppl is None else ppl
            rows.append(entry)
    if not rows:
        raise click.ClickException("no candidate/reference pairs matched on item_id")
    fh = _out(out)
    columns = list(rows[0].keys())
    fh.write("\t".join(columns) + "\n")
    for entry in rows:
        fh.write("\t".join(str(entry.get(c, "")) for c in columns) + "\n")
    corpus = {c: sum(r[c] for r in rows) / len(rows) for c in columns if c not in ("item_id", "perplexity")}
    fh.write("# corpus\t" + "\t".join(f"{k}={v:.6f}" for k, v in corpus.items()) + "\n")
    if fh is not sys.stdout:
        fh.close()


@main.command()
@click.option("--verdicts", required=True, type=click.Path(exists=True))
@click.option("--annotations", required=True, type=click.Path(exists=True),
              help="JSONL of AnnotationRecords; correctness is averaged per item.")
@click.option("--out", default=None, type=click.Path())
def agree(verdicts, annotations, out):
    """Judge-vs-human AgreementReport (Spearman rho, Krippendorff alpha) as JSON."""
    verdict_list = []
    with open(verdicts, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                verdict_list.append(judge_mod.JudgeVerdict.from_dict(json.loads(line)))
    sums: dict[str, list[float]] = {}
    with open(annotations, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                sums.setdefault(row["item_id"], []).append(float(row["correctness"]))
    human_means = {k: sum(v) / len(v) for k, v in sums.items()}
    try:
        report = judge_mod.agreement(verdict_list, human_means)
    except m.MetricError as err:
        raise click.ClickException(str(err))
    text = json.dumps(report.to_dict(), indent=2)
    if out:
        Path(out).write_text(text + "\n", "utf-8")
    else:
        click.echo(text)


@main.group()
def dataset():
    """Ground-truth dataset curation: build, splits, export."""


@dataset.command("build")
@click.option("--records", required=True, type=click.Path(exists=True))
@click.option("--verdicts", required=True, type=click.Path(exists=True))
@click.option("--log", "log_path", required=True, type=click.Path())
@click.option("--threshold", default=None, type=float)
@click.option("--max-spread", default=None, type=float)
@click.pass_obj
def dataset_build(cfg, records, verdicts, log_path, threshold, max_spread):
    """Gate records by their verdicts into the event log."""
    threshold = cfg.gate_threshold if threshold is None else threshold
    max_spread = cfg.gate_max_spread if max_spread is None else max_spread
    verdict_by_item = {}
    with open(verdicts, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                v = judge_mod.JudgeVerdict.from_dict(json.loads(line))
                verdict_by_item[v.item_id] = v
    curation_store = cur.CurationStore(log_path, lease_seconds=cfg.lease_seconds)
    counts = {"accept": 0, "review": 0, "missing_verdict": 0}
    for record in pipeline.read_records(records):
        verdict = verdict_by_item.get(record.item_id)
        if verdict is None:
            counts["missing_verdict"] += 1
            continue
        counts[curation_store.ingest(record.to_dict(), verdict, threshold, max_spread)] += 1
    click.echo(json.dumps(counts))


@dataset.command("splits")
@click.option("--log", "log_path", required=True, type=click.Path(exists=True))
@click.option("--train", default=400, show_default=True)
@click.option("--val", default=50, show_default=True)
@click.option("--test", default=50, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--out", default=None, type=click.Path())
@click.pass_obj
def dataset_splits(cfg, log_path, train, val, test, seed, out):
    """Deterministic split membership (item ids per split) as JSON."""
    seed = cfg.seed if seed is None else seed
    curation_store = cur.CurationStore(log_path, lease_seconds=cfg.lease_seconds)
    try:
        splits = cur.build_splits(curation_store.entries(), {"train": train, "val": val, "test": test}, seed)
    except cur.SplitError as err:
        raise click.ClickException(str(err))
    text = json.dumps(splits.to_dict(), indent=2)
    if out:
        Path(out).write_text(text + "\n", "utf-8")
    else:
        click.echo(text)


@dataset.command("export")
@click.option("--log", "log_path", required=True, type=click.Path(exists=True))
@click.option("--split", type=click.Choice(["all", "train", "val", "test"]), required=True)
@click.option("--train", default=400, show_default=True)
@click.option("--val", default=50, show_default=True)
@click.option("--test", default=50, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--profile", default=None)
@click.option("--out", default=None, type=click.Path())
@click.pass_obj
def dataset_export(cfg, log_path, split, train, val, test, seed, profile, out):
    """Fine-tuning JSONL for one split (chat messages format)."""
    seed = cfg.seed if seed is None else seed
    profile = profile or cfg.profile
    curation_store = cur.CurationStore(log_path, lease_seconds=cfg.lease_seconds)
    entries = curation_store.entries()
    if not entries:
        raise click.ClickException("event log contains no dataset entries")
    if split == "all":
        selected = entries
    else:
        try:
            splits = cur.build_splits(entries, {"train": train, "val": val, "test": test}, seed)
        except cur.SplitError as err:
            raise click.ClickException(str(err))
        selected = splits.split(split)
    payload = cur.export_jsonl(selected, profile)
    if out:
        Path(out).write_bytes(payload)
    else:
        sys.stdout.write(payload.decode("utf-8"))


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--lease-seconds", default=None, type=float)
@click.option("--profile", default=None)
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None, help="Static UI bundle to serve at /.")
@click.pass_obj
def serve(cfg, log_path, host, port, lease_seconds, profile, ui_dir):
    """Run the annotation HTTP service."""
    import uvicorn

    from .api import create_app

    curation_store = cur.CurationStore(
        log_path,
        lease_seconds=lease_seconds if lease_seconds is not None else cfg.lease_seconds,
    )
    app = create_app(curation_store, export_profile=profile or cfg.profile, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
