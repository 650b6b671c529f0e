"""Shared fixtures: the bundled toy world and a small generated corpus."""

from __future__ import annotations

import pytest

from usim.baselines import AgendaUserSimulator, RuleSystemAgent, build_db
from usim.corpus import generate_corpus
from usim.ontology import DomainSpec, Ontology, SlotSpec, make_toy_ontology


@pytest.fixture(scope="session")
def toy_ontology():
    return make_toy_ontology()


@pytest.fixture(scope="session")
def toy_db(toy_ontology):
    return build_db(toy_ontology, seed=11)


@pytest.fixture(scope="session")
def golden_ontology():
    """Two-domain fixture matching the worked feature-construction example."""
    hotel = DomainSpec(
        "hotel",
        (
            SlotSpec("area", ("north", "south", "centre")),
            SlotSpec("price", ("cheap", "expensive"), requestable=True),
            SlotSpec("name", requestable=True),
            SlotSpec("stars", ("2", "3")),
        ),
    )
    restaurant = DomainSpec(
        "restaurant",
        (
            SlotSpec("food", ("italian", "chinese")),
            SlotSpec("addr", requestable=True),
            SlotSpec("name", requestable=True),
        ),
    )
    return Ontology((hotel, restaurant))


@pytest.fixture(scope="session")
def small_corpus(toy_ontology, toy_db):
    user = AgendaUserSimulator(toy_ontology)
    system = RuleSystemAgent(toy_ontology, toy_db)
    dialogues, stats = generate_corpus(
        toy_ontology, user, system, 120, seed=42, db=toy_db
    )
    return dialogues, stats
