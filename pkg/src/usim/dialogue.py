"""User goals and shared dialogue state.

A goal fixes a domain order and a per-domain slot order at sampling time;
those orders never change afterwards (goal changes replace values only) and
everything downstream that depends on positions keys off them.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ontology import REQUESTED, DialogueAct, Ontology

SYSTEM_PHASE = 0
USER_PHASE = 1

SlotId = tuple[str, str]


class GoalError(ValueError):
    pass


@dataclass
class DomainGoal:
    constraints: dict[str, str] = field(default_factory=dict)
    requests: list[str] = field(default_factory=list)

    def slot_names(self) -> list[str]:
        return list(self.constraints) + list(self.requests)


class UserGoal:
    """Constraints and requests grouped by domain, in a fixed sampled order."""

    def __init__(self, domains: dict[str, DomainGoal]):
        self.domains: dict[str, DomainGoal] = domains
        self.fulfilled: dict[SlotId, bool] = {sid: False for sid in self.slot_ids()}
        self.first_mentioned_turn: dict[SlotId, Optional[int]] = {
            sid: None for sid in self.slot_ids()
        }
        self.goal_changes: dict[SlotId, str] = {}
        for name, dg in domains.items():
            overlap = set(dg.constraints) & set(dg.requests)
            if overlap:
                raise GoalError(f"domain {name!r}: slots {sorted(overlap)} both constraint and request")

    def domain_names(self) -> list[str]:
        return list(self.domains)

    def slot_ids(self) -> list[SlotId]:
        return [(d, s) for d, dg in self.domains.items() for s in dg.slot_names()]

    def is_constraint(self, domain: str, slot: str) -> bool:
        return slot in self.domains.get(domain, DomainGoal()).constraints

    def is_request(self, domain: str, slot: str) -> bool:
        return slot in self.domains.get(domain, DomainGoal()).requests

    def value(self, domain: str, slot: str) -> Optional[str]:
        dg = self.domains.get(domain)
        return None if dg is None else dg.constraints.get(slot)

    def change_value(self, domain: str, slot: str, new_value: str) -> None:
        """Replace a constraint value in place; order and indices are untouched."""
        dg = self.domains.get(domain)
        if dg is None or slot not in dg.constraints:
            raise GoalError(f"cannot change non-constraint slot {domain}-{slot}")
        dg.constraints[slot] = new_value
        self.goal_changes[(domain, slot)] = new_value
        self.fulfilled[(domain, slot)] = False

    def copy(self) -> "UserGoal":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "domains": [
                [d, {"constraints": [[s, v] for s, v in dg.constraints.items()],
                     "requests": list(dg.requests)}]
                for d, dg in self.domains.items()
            ],
            "changes": [[d, s, v] for (d, s), v in self.goal_changes.items()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UserGoal":
        domains = {}
        for d, dg in data["domains"]:
            domains[d] = DomainGoal(dict((s, v) for s, v in dg["constraints"]), list(dg["requests"]))
        goal = cls(domains)
        for d, s, v in data.get("changes", []):
            goal.goal_changes[(d, s)] = v
        return goal

    def __repr__(self) -> str:
        parts = []
        for d, dg in self.domains.items():
            cons = ",".join(f"{s}={v}" for s, v in dg.constraints.items())
            reqs = ",".join(f"{s}=?" for s in dg.requests)
            parts.append(f"{d}:[{','.join(p for p in (cons, reqs) if p)}]")
        return "UserGoal(" + " ".join(parts) + ")"


@dataclass
class GoalConfig:
    min_domains: int = 1
    max_domains: int = 2
    min_constraints: int = 1
    max_constraints: int = 2
    min_requests: int = 1
    max_requests: int = 2


def sample_goal(ontology: Ontology, rng: np.random.Generator, config: GoalConfig,
                domains: Optional[Sequence[str]] = None) -> UserGoal:
    """Draw a goal with sampled domain and slot order; deterministic given rng state.

    `domains` restricts the candidate pool (used by leave-one-domain-out runs).
    """
    pool = list(domains) if domains is not None else list(ontology.domain_names())
    usable = []
    for name in pool:
        spec = ontology.domain(name)
        informable = [s for s in spec.informable]
        requestable = [s for s in spec.requestable]
        if len(informable) >= config.min_constraints:
            usable.append((name, informable, requestable))
    if config.min_domains < 1 or config.max_domains < config.min_domains:
        raise GoalError("invalid domain bounds")
    if len(usable) < config.min_domains:
        raise GoalError(
            f"ontology supports {len(usable)} domains with >= {config.min_constraints} "
            f"informables; config needs {config.min_domains}"
        )
    n_dom = int(rng.integers(config.min_domains, min(config.max_domains, len(usable)) + 1))
    order = rng.permutation(len(usable))[:n_dom]
    goal_domains: dict[str, DomainGoal] = {}
    for idx in order:
        name, informable, requestable = usable[int(idx)]
        n_con = int(rng.integers(config.min_constraints, min(config.max_constraints, len(informable)) + 1))
        con_slots = [informable[int(i)] for i in rng.permutation(len(informable))[:n_con]]
        constraints = {}
        for s in con_slots:
            values = ontology.values_for(name, s)
            constraints[s] = str(values[int(rng.integers(len(values)))])
        req_pool = [s for s in requestable if s not in constraints]
        if len(req_pool) < config.min_requests:
            raise GoalError(
                f"domain {name!r}: {len(req_pool)} requestable slots available, "
                f"config needs {config.min_requests}"
            )
        n_req = int(rng.integers(config.min_requests, min(config.max_requests, len(req_pool)) + 1))
        requests = [req_pool[int(i)] for i in rng.permutation(len(req_pool))[:n_req]]
        goal_domains[name] = DomainGoal(constraints, requests)
    return UserGoal(goal_domains)


@dataclass
class Turn:
    system_acts: list[DialogueAct] = field(default_factory=list)
    user_acts: list[DialogueAct] = field(default_factory=list)


class DialogueState:
    """Mutable per-dialogue record: system assertions, history, mention times.

    `t` counts opened exchanges; apply_system_acts opens exchange t (system
    phase), record_user_acts completes it (user phase).
    """

    def __init__(self, ontology: Ontology):
        self.ontology = ontology
        self.t = 0
        self.system_state: dict[SlotId, str] = {}
        self.history: list[Turn] = []
        self.first_mention: dict[SlotId, tuple[int, int]] = {}
        self.user_informed: dict[SlotId, str] = {}
        self.prev_user_output: dict[SlotId, int] = {}

    @property
    def current_turn(self) -> int:
        return self.t - 1

    def _mention(self, slot_id: SlotId, ts: tuple[int, int]) -> None:
        self.first_mention.setdefault(slot_id, ts)

    def apply_system_acts(self, acts: Sequence[DialogueAct]) -> "DialogueState":
        """Open the next exchange with the system's acts; rejects before mutating."""
        self.ontology.validate_acts(acts, "system")
        turn = self.t
        self.history.append(Turn(system_acts=list(acts)))
        self.t += 1
        for act in acts:
            if act.is_general or act.slot is None:
                continue
            sid = (act.domain, act.slot)
            self._mention(sid, (turn, SYSTEM_PHASE))
            if act.intent == "request":
                self.system_state[sid] = REQUESTED
            elif act.value is not None and act.intent not in ("nooffer", "nobook"):
                # Negative acts mention the slot but assert nothing about it.
                self.system_state[sid] = act.value
        return self

    def record_user_acts(self, acts: Sequence[DialogueAct]) -> "DialogueState":
        if not self.history:
            raise GoalError("no open exchange; apply_system_acts first")
        self.ontology.validate_acts(acts, "user")
        turn = self.current_turn
        self.history[-1].user_acts = list(acts)
        for act in acts:
            if act.is_general or act.slot is None:
                continue
            sid = (act.domain, act.slot)
            self._mention(sid, (turn, USER_PHASE))
            if act.intent == "inform" and act.value is not None:
                self.user_informed[sid] = act.value
        return self

    def first_mentioned_now(self, slot_id: SlotId) -> bool:
        """True iff the slot's first mention is in the newest exchange events.

        At encoding time of exchange t the newest events are the previous
        exchange's user acts and the current exchange's system acts.
        """
        ts = self.first_mention.get(slot_id)
        if ts is None:
            return False
        turn = self.current_turn
        return ts == (turn, SYSTEM_PHASE) or ts == (turn - 1, USER_PHASE)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "system_state": sorted([d, s, v] for (d, s), v in self.system_state.items()),
            "history": [
                {
                    "system": [a.to_list() for a in turn.system_acts],
                    "user": [a.to_list() for a in turn.user_acts],
                }
                for turn in self.history
            ],
        }


def mark_fulfilled(goal: UserGoal, state: DialogueState) -> UserGoal:
    """Refresh the goal's fulfillment flags from the dialogue state.

    A constraint is fulfilled once the user has informed it and the system's
    latest assertion for the slot matches the current goal value. A request is
    fulfilled once the system asserted any concrete value for it.
    """
    for d, dg in goal.domains.items():
        for s, v in dg.constraints.items():
            sid = (d, s)
            asserted = state.system_state.get(sid)
            goal.fulfilled[sid] = sid in state.user_informed and asserted == v
        for s in dg.requests:
            sid = (d, s)
            asserted = state.system_state.get(sid)
            goal.fulfilled[sid] = asserted is not None and asserted != REQUESTED
    for sid in goal.first_mentioned_turn:
        ts = state.first_mention.get(sid)
        goal.first_mentioned_turn[sid] = None if ts is None else ts[0]
    return goal


def all_fulfilled(goal: UserGoal) -> bool:
    return all(goal.fulfilled.values())
