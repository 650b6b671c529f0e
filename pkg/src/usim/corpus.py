"""Dialogue corpus: schema, target extraction, splitting, and generation.

Targets use the six-class output vocabulary. Extraction is a pure function of
(dialogue, ontology, layout): it replays the recorded acts through the same
state and encoder machinery the live simulator uses, labels every slot of
every turn, and keeps a working copy of the goal so detected goal changes
relabel later mentions correctly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .dialogue import GoalConfig, SlotId, UserGoal, sample_goal
from .features import (
    CLASS_DONTCARE,
    CLASS_GOAL,
    CLASS_NONE,
    CLASS_RANDOM,
    CLASS_REQUEST,
    CLASS_SYSTEM,
    DialogueEncoder,
    EncodingError,
    FeatureLayout,
    InputSequence,
)
from .ontology import DONTCARE, REQUESTED, DialogueAct, Ontology, OntologyError
from .sim import run_dialogue
from .util import make_rng, read_jsonl, stable_hash, write_jsonl

CORPUS_SCHEMA = "corpus/1"


class CorpusError(ValueError):
    pass


@dataclass
class CorpusDialogue:
    id: str
    goal: UserGoal
    turns: list[tuple[list[DialogueAct], list[DialogueAct]]]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "goal": self.goal.to_dict(),
            "turns": [
                [[a.to_list() for a in sys], [a.to_list() for a in usr]]
                for sys, usr in self.turns
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusDialogue":
        turns = [
            (
                [DialogueAct.from_list(a) for a in sys],
                [DialogueAct.from_list(a) for a in usr],
            )
            for sys, usr in data["turns"]
        ]
        return cls(id=data["id"], goal=UserGoal.from_dict(data["goal"]), turns=turns)

    def mentions_domain(self, domain: str) -> bool:
        if domain in self.goal.domains:
            return True
        for sys, usr in self.turns:
            for act in list(sys) + list(usr):
                if not act.is_general and act.domain == domain:
                    return True
        return False


@dataclass
class TurnExample:
    dialogue_id: str
    turn: int
    slot_ids: list[SlotId]
    targets: np.ndarray
    y_cls: np.ndarray
    sequence: InputSequence


@dataclass
class ExtractedDialogue:
    dialogue_id: str
    examples: list[TurnExample]


def _classify_user_act(
    act: DialogueAct,
    working_goal: UserGoal,
    system_value: Optional[str],
    ontology: Ontology,
) -> int:
    """Label one user act; precedence ? > dontcare > goal > system > changed."""
    sid = (act.domain, act.slot)
    if act.intent == "request":
        return CLASS_REQUEST
    if act.value == DONTCARE:
        return CLASS_DONTCARE
    if act.value == working_goal.value(*sid):
        return CLASS_GOAL
    if system_value not in (None, REQUESTED) and act.value == system_value:
        return CLASS_SYSTEM
    values = ontology.values_for(act.domain, act.slot)
    if act.value in values:
        return CLASS_RANDOM
    raise CorpusError(
        f"user act {act} value matches neither goal, system state, nor ontology"
    )


def extract_targets(
    dialogue: CorpusDialogue,
    ontology: Ontology,
    layout: FeatureLayout,
    window: int = 3,
) -> ExtractedDialogue:
    """Per-turn training examples with features, slot targets, and y_cls.

    Raises CorpusError (with the dialogue id and turn) for acts that cannot be
    labeled; the caller decides whether to skip or abort.
    """
    working_goal = dialogue.goal.copy()
    # The order tiebreak is keyed by the dialogue id, keeping extraction a
    # pure function of (dialogue, ontology, layout).
    enc = DialogueEncoder(ontology, working_goal, layout, window=window,
                          order_mode="corpus", rng=make_rng(stable_hash(dialogue.id)))
    examples: list[TurnExample] = []
    for t, (sys_acts, user_acts) in enumerate(dialogue.turns):
        try:
            seq = enc.begin_turn(sys_acts)
        except (EncodingError, OntologyError) as exc:
            raise CorpusError(f"dialogue {dialogue.id} turn {t}: {exc}") from exc
        in_turn = {sid: i for i, sid in enumerate(seq.slot_ids)}
        targets = np.zeros(len(seq.slot_ids), dtype=np.int64)
        per_slot_class: dict[SlotId, int] = {}
        y_cls = np.zeros(layout.l_d, dtype=np.float64)
        for act in user_acts:
            if act.is_general:
                continue
            sid = (act.domain, act.slot)
            if sid not in in_turn:
                raise CorpusError(
                    f"dialogue {dialogue.id} turn {t}: user act {act} on a slot "
                    f"outside the turn's input list"
                )
            try:
                cls = _classify_user_act(
                    act, working_goal, enc.state.system_state.get(sid), ontology
                )
            except (CorpusError, OntologyError) as exc:
                raise CorpusError(f"dialogue {dialogue.id} turn {t}: {exc}") from exc
            prev = per_slot_class.get(sid, CLASS_NONE)
            if _precedence(cls) > _precedence(prev):
                per_slot_class[sid] = cls
            if cls == CLASS_RANDOM and working_goal.is_constraint(*sid):
                working_goal.change_value(act.domain, act.slot, act.value)
            di = enc.index_map.domain_idx.get(act.domain)
            if di is not None and di < layout.l_d:
                y_cls[di] = 1.0
        for sid, cls in per_slot_class.items():
            targets[in_turn[sid]] = cls
        examples.append(
            TurnExample(
                dialogue_id=dialogue.id,
                turn=t,
                slot_ids=list(seq.slot_ids),
                targets=targets,
                y_cls=y_cls,
                sequence=seq,
            )
        )
        try:
            enc.end_turn(user_acts, per_slot_class)
        except (EncodingError, OntologyError) as exc:
            raise CorpusError(f"dialogue {dialogue.id} turn {t}: {exc}") from exc
    return ExtractedDialogue(dialogue_id=dialogue.id, examples=examples)


_PRECEDENCE = {
    CLASS_NONE: 0,
    CLASS_RANDOM: 1,
    CLASS_SYSTEM: 2,
    CLASS_GOAL: 3,
    CLASS_DONTCARE: 4,
    CLASS_REQUEST: 5,
}


def _precedence(cls: int) -> int:
    return _PRECEDENCE[cls]


def extract_corpus(
    dialogues: Sequence[CorpusDialogue],
    ontology: Ontology,
    layout: FeatureLayout,
    window: int = 3,
) -> tuple[list[ExtractedDialogue], list[str]]:
    """Extract every dialogue, skipping (and reporting) unlabelable ones."""
    out: list[ExtractedDialogue] = []
    skipped: list[str] = []
    for d in sorted(dialogues, key=lambda x: x.id):
        try:
            out.append(extract_targets(d, ontology, layout, window))
        except CorpusError as exc:
            skipped.append(str(exc))
    return out, skipped


# -- splits -------------------------------------------------------------------


@dataclass
class SplitSpec:
    held_out_domain: Optional[str]
    train_ids: list[str]
    dev_ids: list[str]
    test_ids: list[str]
    removed_fraction: float = 0.0

    def to_dict(self) -> dict:
        return {
            "held_out_domain": self.held_out_domain,
            "train": self.train_ids,
            "dev": self.dev_ids,
            "test": self.test_ids,
            "removed_fraction": self.removed_fraction,
        }


def make_split(dialogues: Sequence[CorpusDialogue], dev_every: int = 10) -> SplitSpec:
    """Deterministic split: every dev_every-th dialogue (by id) goes to dev."""
    ids = sorted(d.id for d in dialogues)
    dev = ids[::dev_every] if len(ids) >= dev_every else []
    dev_set = set(dev)
    train = [i for i in ids if i not in dev_set]
    return SplitSpec(None, train, dev, [])


def leave_one_out_split(
    dialogues: Sequence[CorpusDialogue], domain: str, ontology: Ontology,
    dev_every: int = 10,
) -> SplitSpec:
    """Drop every dialogue touching `domain` (goal or acts) from training."""
    if not ontology.has_domain(domain):
        raise CorpusError(f"unknown domain {domain!r}")
    ids = sorted(d.id for d in dialogues)
    touching = {d.id for d in dialogues if d.mentions_domain(domain)}
    kept = [i for i in ids if i not in touching]
    if not kept:
        raise CorpusError(f"removing domain {domain!r} empties the training set")
    dev = kept[::dev_every] if len(kept) >= dev_every else []
    dev_set = set(dev)
    train = [i for i in kept if i not in dev_set]
    removed = len(touching) / len(ids) if ids else 0.0
    return SplitSpec(domain, train, dev, sorted(touching), removed_fraction=removed)


def select(dialogues: Sequence[CorpusDialogue], ids: Iterable[str]) -> list[CorpusDialogue]:
    wanted = set(ids)
    return [d for d in sorted(dialogues, key=lambda x: x.id) if d.id in wanted]


# -- generation ---------------------------------------------------------------


def generate_corpus(
    ontology: Ontology,
    user_agent,
    system_agent,
    n_dialogues: int,
    seed: int,
    db,
    goal_config: Optional[GoalConfig] = None,
    max_turns: int = 40,
    goal_domains: Optional[Sequence[str]] = None,
) -> tuple[list[CorpusDialogue], dict]:
    """Simulate n deterministic dialogues and report corpus statistics."""
    goal_config = goal_config or GoalConfig()
    dialogues: list[CorpusDialogue] = []
    n_success = 0
    n_turns_total = 0
    first_turn_acts = 0
    for i in range(n_dialogues):
        goal = sample_goal(ontology, make_rng(seed, i, 0), goal_config, domains=goal_domains)
        outcome = run_dialogue(
            user_agent, system_agent, goal, seed=int(make_rng(seed, i, 1).integers(2**31)),
            db=db, ontology=ontology, max_turns=max_turns,
        )
        dialogues.append(
            CorpusDialogue(
                id=f"dlg{i:05d}",
                goal=outcome.goal_initial,
                turns=[(ex.system_acts, ex.user_acts) for ex in outcome.exchanges],
            )
        )
        n_success += outcome.success
        n_turns_total += outcome.n_turns
        first_turn_acts += outcome.first_turn_act_count()
    stats = {
        "n_dialogues": n_dialogues,
        "success_rate": (n_success / n_dialogues) if n_dialogues else None,
        "avg_turns": (n_turns_total / n_dialogues) if n_dialogues else None,
        "avg_first_turn_slots": (first_turn_acts / n_dialogues) if n_dialogues else None,
    }
    return dialogues, stats


# -- persistence --------------------------------------------------------------


def save_corpus(path: str | Path, dialogues: Sequence[CorpusDialogue]) -> None:
    rows = [{"schema": CORPUS_SCHEMA, **d.to_dict()} for d in dialogues]
    write_jsonl(path, rows)


def load_corpus(
    path: str | Path, ontology: Optional[Ontology] = None
) -> tuple[list[CorpusDialogue], list[str]]:
    """Read a corpus/1 JSONL file; validates acts when an ontology is given.

    Returns (dialogues, diagnostics); dialogues that fail validation are
    skipped and described in the diagnostics list.
    """
    dialogues: list[CorpusDialogue] = []
    diagnostics: list[str] = []
    for n, row in enumerate(read_jsonl(path)):
        if row.get("schema") != CORPUS_SCHEMA:
            raise CorpusError(
                f"{path}: line {n + 1}: expected schema {CORPUS_SCHEMA!r}, got {row.get('schema')!r}"
            )
        try:
            d = CorpusDialogue.from_dict(row)
        except (KeyError, ValueError, TypeError) as exc:
            raise CorpusError(f"{path}: line {n + 1}: malformed dialogue: {exc}") from exc
        if ontology is not None:
            try:
                for t, (sys_acts, usr_acts) in enumerate(d.turns):
                    ontology.validate_acts(sys_acts, "system")
                    ontology.validate_acts(usr_acts, "user")
                for domain, dg in d.goal.domains.items():
                    spec = ontology.domain(domain)
                    for slot in dg.slot_names():
                        spec.slot(slot)
            except OntologyError as exc:
                diagnostics.append(f"dialogue {d.id}: {exc}")
                continue
        dialogues.append(d)
    return dialogues, diagnostics


def ingest_multiwoz_like(path: str | Path, ontology: Ontology) -> tuple[list[CorpusDialogue], dict]:
    """Adapter for externally produced corpora in the corpus/1 schema.

    Unmappable dialogues (unknown intents, out-of-ontology slots) are counted
    and reported, never silently dropped.
    """
    dialogues, diagnostics = load_corpus(path, ontology)
    report = {"ingested": len(dialogues), "skipped": len(diagnostics), "diagnostics": diagnostics}
    return dialogues, report
