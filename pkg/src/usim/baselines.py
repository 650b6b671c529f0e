"""Agenda-based user simulator and a rule-based system agent with an
in-memory entity database. These are the counterparties for corpus
generation, policy training, and cross-model evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dialogue import UserGoal
from .ontology import (
    DONTCARE,
    DialogueAct,
    Ontology,
    OntologyError,
    key_slot,
)
from .util import make_rng, read_json, write_json

DB_SCHEMA = "db/1"


class EntityDb:
    """Per-domain entity tables; immutable after construction."""

    def __init__(self, ontology: Ontology, entities: dict[str, list[dict[str, str]]]):
        self.ontology = ontology
        self.entities = entities
        for domain, rows in entities.items():
            spec = ontology.domain(domain)
            for row in rows:
                for slot in spec.informable:
                    value = row.get(slot)
                    if value is not None and value not in spec.slot(slot).values:
                        raise OntologyError(
                            f"db entity in {domain!r}: value {value!r} not in inventory of {slot!r}"
                        )

    def match(self, domain: str, constraints: dict[str, str]) -> list[dict[str, str]]:
        rows = self.entities.get(domain, [])
        out = []
        for row in rows:
            ok = True
            for slot, value in constraints.items():
                if value == DONTCARE:
                    continue
                if row.get(slot) != value:
                    ok = False
                    break
            if ok:
                out.append(row)
        return out

    def lookup(self, domain: str, name: str) -> Optional[dict[str, str]]:
        ks = key_slot(self.ontology.domain(domain))
        for row in self.entities.get(domain, []):
            if row.get(ks) == name:
                return row
        return None

    def to_dict(self) -> dict:
        return {"schema": DB_SCHEMA, "domains": self.entities}

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path, ontology: Ontology) -> "EntityDb":
        data = read_json(path)
        if data.get("schema") != DB_SCHEMA:
            raise OntologyError(f"expected schema {DB_SCHEMA!r}, got {data.get('schema')!r}")
        return cls(ontology, data["domains"])


def build_db(ontology: Ontology, seed: int, entities_per_domain: int = 20) -> EntityDb:
    """Generate entities so every informable value occurs in at least one row."""
    rng = make_rng(seed, 0xDB)
    tables: dict[str, list[dict[str, str]]] = {}
    for spec in ontology.domains:
        ks = key_slot(spec)
        rows = []
        for i in range(entities_per_domain):
            row: dict[str, str] = {}
            for slot in spec.slots:
                if slot.name == ks:
                    row[slot.name] = f"{spec.name}-{i:02d}"
                elif slot.values:
                    # Round-robin guarantees coverage; rng offsets vary the mix.
                    values = slot.values
                    row[slot.name] = values[(i + int(rng.integers(0, len(values)))) % len(values)]
                else:
                    row[slot.name] = f"{slot.name}-{i:02d}"
            rows.append(row)
        tables[spec.name] = rows
    return EntityDb(ontology, tables)


@dataclass
class AgendaConfig:
    max_pop: int = 3
    pop_weights: Optional[tuple[float, ...]] = None  # over 1..max_pop; None = uniform
    thank_prob: float = 0.1  # chance of a thank-only turn (agenda stays put)
    order_jitter: float = 0.5  # chance a domain's constraint/request order is shuffled

    def __post_init__(self) -> None:
        if self.max_pop < 1:
            raise ValueError("max_pop must be >= 1")
        if self.pop_weights is not None:
            if len(self.pop_weights) != self.max_pop:
                raise ValueError(
                    f"pop_weights needs {self.max_pop} entries, got {len(self.pop_weights)}")
            if min(self.pop_weights) < 0 or sum(self.pop_weights) <= 0:
                raise ValueError("pop_weights must be non-negative and sum > 0")


class AgendaUserSimulator:
    """Stack-based user: constraints pop first, requests surface later.

    System requests push matching informs on top, system answers pop pending
    requests, and a nooffer relaxes the most recently informed constraint of
    that domain (a goal change). Between 1 and max_pop items pop per turn.
    """

    def __init__(self, ontology: Ontology, config: Optional[AgendaConfig] = None):
        self.ontology = ontology
        self.config = config or AgendaConfig()

    def start_dialogue(self, goal: UserGoal, seed: int) -> None:
        self.goal = goal.copy()
        self.rng = make_rng(seed, 0xA6)
        self.stack: list[DialogueAct] = []

        def maybe_shuffle(items: list) -> list:
            if len(items) > 1 and self.rng.random() < self.config.order_jitter:
                return [items[int(i)] for i in self.rng.permutation(len(items))]
            return items

        for domain in reversed(self.goal.domain_names()):
            dg = self.goal.domains[domain]
            for slot in reversed(maybe_shuffle(list(dg.requests))):
                self.stack.append(DialogueAct("request", domain, slot, "?"))
            for slot, value in reversed(maybe_shuffle(list(dg.constraints.items()))):
                self.stack.append(DialogueAct("inform", domain, slot, value))
        self.informed: list[tuple[str, str]] = []
        self.outstanding: list[tuple[str, str]] = []
        self.answered: set[tuple[str, str]] = set()
        self.turn = 0
        self.done = False

    def _push(self, act: DialogueAct) -> None:
        self.stack = [a for a in self.stack if (a.intent, a.domain, a.slot) !=
                      (act.intent, act.domain, act.slot)]
        self.stack.append(act)

    def _relax(self, domain: str) -> None:
        candidates = [sid for sid in reversed(self.informed) if sid[0] == domain]
        if not candidates:
            candidates = [
                (domain, s) for s in self.goal.domains.get(domain, None).constraints
            ] if domain in self.goal.domains else []
        if not candidates:
            return
        d, s = candidates[0]
        old = self.goal.value(d, s)
        pool = [v for v in self.ontology.values_for(d, s) if v != old]
        if not pool:
            return
        new = pool[int(self.rng.integers(len(pool)))]
        self.goal.change_value(d, s, new)
        self._push(DialogueAct("inform", d, s, new))

    def step(self, system_acts: Sequence[DialogueAct]) -> tuple[list[DialogueAct], bool]:
        if self.done:
            return [], True
        if any(a.is_general and a.intent == "bye" for a in system_acts):
            self.done = True
            return [DialogueAct("bye")], True

        for act in system_acts:
            if act.is_general:
                if act.intent == "reqmore" and self.outstanding:
                    for sid in self.outstanding:
                        self._push(DialogueAct("request", sid[0], sid[1], "?"))
                continue
            if act.slot is None:
                if act.intent == "nooffer":
                    self._relax(act.domain)
                continue
            sid = (act.domain, act.slot)
            if act.intent == "request":
                value = self.goal.value(*sid)
                if value is not None:
                    self._push(DialogueAct("inform", sid[0], sid[1], value))
                elif self.goal.is_request(*sid):
                    self._push(DialogueAct("request", sid[0], sid[1], "?"))
                else:
                    self._push(DialogueAct("inform", sid[0], sid[1], DONTCARE))
            elif act.intent == "nooffer":
                self._relax(act.domain)
            else:
                # Inform-style act: answers pending requests, conflicts trigger
                # a correcting re-inform of the goal value.
                if self.goal.is_request(*sid):
                    self.answered.add(sid)
                    self.outstanding = [x for x in self.outstanding if x != sid]
                    self.stack = [
                        a for a in self.stack
                        if not (a.intent == "request" and (a.domain, a.slot) == sid)
                    ]
                goal_value = self.goal.value(*sid)
                if goal_value is not None and act.value != goal_value:
                    self._push(DialogueAct("inform", sid[0], sid[1], goal_value))

        # Refresh stale informs (value changed since the act was pushed).
        for i, act in enumerate(self.stack):
            if act.intent == "inform":
                current = self.goal.value(act.domain, act.slot)
                if current is not None and act.value != current:
                    self.stack[i] = DialogueAct("inform", act.domain, act.slot, current)

        if not self.stack and self.outstanding:
            # Everything said but answers are missing: ask again.
            for sid in self.outstanding:
                self._push(DialogueAct("request", sid[0], sid[1], "?"))
        if not self.stack:
            self.done = True
            return [DialogueAct("bye")], True

        turn = self.turn
        self.turn += 1
        if turn > 0 and self.config.thank_prob > 0.0 \
                and self.rng.random() < self.config.thank_prob:
            return [DialogueAct("thank")], False

        weights = self.config.pop_weights
        max_pop = self.config.max_pop
        if weights is None:
            n = int(self.rng.integers(1, max_pop + 1))
        else:
            w = np.asarray(weights, dtype=np.float64)
            n = 1 + int(self.rng.choice(len(w), p=w / w.sum()))
        acts: list[DialogueAct] = []
        while self.stack and len(acts) < n:
            act = self.stack.pop()
            if act in acts:
                continue
            acts.append(act)
            sid = (act.domain, act.slot)
            if act.intent == "inform" and act.value != DONTCARE and self.goal.is_constraint(*sid):
                self.informed = [x for x in self.informed if x != sid] + [sid]
            if act.intent == "request":
                self.outstanding.append(sid)
        return acts, False


class RuleSystemAgent:
    """Deterministic system: narrow with requests, recommend on a unique or
    exhausted match, answer requests from the offered entity, nooffer on zero
    matches. Recommendations echo the entity's values for believed constraint
    slots so the user side can observe fulfillment.
    """

    def __init__(self, ontology: Ontology, db: EntityDb):
        self.ontology = ontology
        self.db = db

    def start_dialogue(self, seed: Optional[int] = None) -> None:
        self.belief: dict[str, dict[str, str]] = {}
        self.pending: dict[str, list[str]] = {}
        self.answered: dict[str, list[str]] = {}
        self.committed: dict[str, Optional[dict[str, str]]] = {}
        self.last_informed: dict[str, tuple[str, str]] = {}

    def _touch(self, domain: str) -> None:
        self.belief.setdefault(domain, {})
        self.pending.setdefault(domain, [])
        self.answered.setdefault(domain, [])
        self.committed.setdefault(domain, None)

    def _uncommit(self, domain: str) -> None:
        # A replaced offer voids earlier answers; queue them for re-answering.
        self.committed[domain] = None
        for slot in self.answered[domain]:
            if slot not in self.pending[domain]:
                self.pending[domain].append(slot)
        self.answered[domain] = []

    def _recommend_acts(self, domain: str, entity: dict[str, str]) -> list[DialogueAct]:
        ks = key_slot(self.ontology.domain(domain))
        acts = [DialogueAct("recommend", domain, ks, entity[ks])]
        for slot, value in self.belief[domain].items():
            if slot == ks or value == DONTCARE:
                continue
            if slot in entity:
                acts.append(DialogueAct("inform", domain, slot, entity[slot]))
        return acts

    def respond(self, user_acts: Sequence[DialogueAct]) -> list[DialogueAct]:
        if any(a.is_general and a.intent == "bye" for a in user_acts):
            return [DialogueAct("bye")]
        touched: list[str] = []
        for act in user_acts:
            if act.is_general or act.slot is None:
                continue
            self._touch(act.domain)
            if act.domain not in touched:
                touched.append(act.domain)
            sid = (act.domain, act.slot)
            if act.intent == "inform":
                self.belief[act.domain][act.slot] = act.value
                if act.value != DONTCARE:
                    self.last_informed[act.domain] = sid
                entity = self.committed.get(act.domain)
                if entity is not None and act.value != DONTCARE and entity.get(act.slot) != act.value:
                    self._uncommit(act.domain)
            elif act.intent == "request":
                if act.slot not in self.pending[act.domain]:
                    self.pending[act.domain].append(act.slot)

        acts: list[DialogueAct] = []
        for domain in touched:
            spec = self.ontology.domain(domain)
            constraints = {s: v for s, v in self.belief[domain].items()
                           if s in spec.informable or v == DONTCARE}
            matches = self.db.match(domain, constraints)
            entity = self.committed[domain]
            if entity is None:
                if not matches:
                    last = self.last_informed.get(domain)
                    if last is not None:
                        acts.append(DialogueAct(
                            "nooffer", domain, last[1], self.belief[domain].get(last[1])))
                    else:
                        acts.append(DialogueAct("nooffer", domain))
                    continue
                missing = [s for s in spec.informable if s not in self.belief[domain]]
                if len(matches) > 1 and missing and not self.pending[domain]:
                    acts.append(DialogueAct("request", domain, missing[0]))
                    continue
                entity = matches[0]
                self.committed[domain] = entity
                acts.extend(self._recommend_acts(domain, entity))
            if self.pending[domain]:
                for slot in self.pending[domain]:
                    value = entity.get(slot)
                    if value is not None:
                        acts.append(DialogueAct("inform", domain, slot, value))
                        if slot not in self.answered[domain]:
                            self.answered[domain].append(slot)
                self.pending[domain] = []
        if not acts:
            return [DialogueAct("reqmore")]
        return acts
