from __future__ import annotations

import pytest

from rulescribe.engine import sample_instances
from rulescribe.rules import parse_rule
from rulescribe.store import catalog_from_id_prefixes, ingest_entity_types, ingest_triples

FAMILY5_LINES = [
    "alice\tmother_of\tcarol\n",
    "alice\tspouse_of\tbob\n",
    "bob\tfather_of\tcarol\n",
    "dana\tmother_of\terin\n",
    "dana\tspouse_of\tfrank\n",
]

FAMILY5_RULE_TEXT = "?x\tmother_of\t?z & ?x\tspouse_of\t?y => ?y\tfather_of\t?z"

SPACEFLIGHT_RULE_TEXT = (
    "?a\t/spaceflight/bipropellant_rocket_engine/oxidizer\tHydrogen peroxide"
    " => ?a\t/spaceflight/rocket_engine/manufactured_by\tNPO Energomash"
)

SPACEFLIGHT_LINES = [
    "RD-161P\t/spaceflight/bipropellant_rocket_engine/oxidizer\tHydrogen peroxide\n",
    "RD-161P\t/spaceflight/rocket_engine/manufactured_by\tNPO Energomash\n",
    "RD-0146\t/spaceflight/bipropellant_rocket_engine/oxidizer\tLiquid oxygen\n",
]

WORLD_SERIES_RULE_TEXT = (
    "?b\t/time/event/instance_of_recurring_event\tWorld Series"
    " => World Series\t/sports/sports_championship/events\t?b"
)

OGBL_LINES = [
    "drug_1\ttreats\tdisease_1\n",
    "drug_2\ttreats\tdisease_1\n",
    "drug_2\ttreats\tdisease_2\n",
    "drug_3\tside_effect_of\tside_effect_19\n",
]


@pytest.fixture
def family5_store():
    return ingest_triples(FAMILY5_LINES)


@pytest.fixture
def family5_rule():
    return parse_rule(FAMILY5_RULE_TEXT)


@pytest.fixture
def spaceflight_store():
    return ingest_triples(SPACEFLIGHT_LINES)


@pytest.fixture
def spaceflight_rule():
    return parse_rule(SPACEFLIGHT_RULE_TEXT)


@pytest.fixture
def ogbl_store():
    return ingest_triples(OGBL_LINES)


@pytest.fixture
def ogbl_catalog(ogbl_store):
    return catalog_from_id_prefixes(ogbl_store)


class StubGateway:
    """Duck-typed gateway returning scripted completion texts in order."""

    def __init__(self, texts, mode: str = "replay"):
        from rulescribe.gateway import Completion

        self._completion_cls = Completion
        self.texts = list(texts)
        self.mode = mode
        self.calls: list[str] = []

    def complete(self, prompt, config):
        self.calls.append(prompt)
        if not self.texts:
            raise AssertionError("StubGateway exhausted")
        text = self.texts.pop(0)
        return self._completion_cls(text=text, model_name=config.model_name, latency_s=0.0)


@pytest.fixture
def stub_gateway_cls():
    return StubGateway
