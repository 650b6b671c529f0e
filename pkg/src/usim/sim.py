"""Dialogue loop harness and the success judge.

One exchange = one (system acts, user acts) pair; the user opens against an
empty system turn. The judge inspects only the acts and the database, so it
works identically for rule-based and learned counterparties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from .baselines import EntityDb
from .dialogue import UserGoal
from .ontology import REQUESTED, DialogueAct, Ontology, key_slot

MAX_TURNS = 40

OFFER_INTENTS = ("recommend", "inform", "select", "book", "offerbook", "offerbooked")


class UserAgent(Protocol):
    goal: UserGoal

    def start_dialogue(self, goal: UserGoal, seed: int) -> None: ...
    def step(self, system_acts: Sequence[DialogueAct]) -> tuple[list[DialogueAct], bool]: ...


class SystemAgent(Protocol):
    def start_dialogue(self, seed: Optional[int] = None) -> None: ...
    def respond(self, user_acts: Sequence[DialogueAct]) -> list[DialogueAct]: ...


@dataclass
class Exchange:
    system_acts: list[DialogueAct]
    user_acts: list[DialogueAct]


@dataclass
class DialogueOutcome:
    goal_initial: UserGoal
    goal_final: UserGoal
    exchanges: list[Exchange]
    terminated: bool
    success: bool
    per_domain: dict[str, bool]

    @property
    def n_turns(self) -> int:
        return len(self.exchanges)

    def first_turn_act_count(self) -> int:
        if not self.exchanges:
            return 0
        return sum(1 for a in self.exchanges[0].user_acts if not a.is_general)


def judge_success(
    goal: UserGoal, exchanges: Sequence[Exchange], db: EntityDb, ontology: Ontology
) -> tuple[bool, dict[str, bool]]:
    """A goal domain succeeds when the system offered a real entity matching
    every current non-dontcare constraint, and answered every requested slot
    with that entity's true value. The dialogue succeeds when all do.
    """
    per_domain: dict[str, bool] = {}
    for domain, dg in goal.domains.items():
        ks = key_slot(ontology.domain(domain))
        offered: Optional[str] = None
        answers: dict[str, str] = {}
        for ex in exchanges:
            for act in ex.system_acts:
                if act.is_general or act.domain != domain or act.slot is None:
                    continue
                if act.intent in OFFER_INTENTS and act.value not in (None, REQUESTED):
                    if act.slot == ks and act.value != offered:
                        offered = act.value
                        answers = {}
                    answers[act.slot] = act.value
        entity = db.lookup(domain, offered) if offered is not None else None
        if entity is None:
            per_domain[domain] = False
            continue
        ok = True
        for slot, value in dg.constraints.items():
            if value != "dontcare" and entity.get(slot) != value:
                ok = False
                break
        if ok:
            for slot in dg.requests:
                if slot == ks:
                    continue
                if answers.get(slot) != entity.get(slot):
                    ok = False
                    break
        per_domain[domain] = ok
    return all(per_domain.values()) if per_domain else False, per_domain


def run_dialogue(
    user: UserAgent,
    system: SystemAgent,
    goal: UserGoal,
    seed: int,
    db: EntityDb,
    ontology: Ontology,
    max_turns: int = MAX_TURNS,
) -> DialogueOutcome:
    goal_initial = goal.copy()
    user.start_dialogue(goal, seed)
    system.start_dialogue(seed)
    exchanges: list[Exchange] = []
    system_acts: list[DialogueAct] = []
    terminated = False
    for _ in range(max_turns):
        user_acts, done = user.step(system_acts)
        exchanges.append(Exchange(list(system_acts), list(user_acts)))
        if done:
            terminated = True
            break
        system_acts = system.respond(user_acts)
    goal_final = user.goal.copy()
    success, per_domain = judge_success(goal_final, exchanges, db, ontology)
    if not terminated:
        success = False
    return DialogueOutcome(
        goal_initial=goal_initial,
        goal_final=goal_final,
        exchanges=exchanges,
        terminated=terminated,
        success=success,
        per_domain=per_domain,
    )
