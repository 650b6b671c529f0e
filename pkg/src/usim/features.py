"""Domain-independent per-slot feature vectors and model input assembly.

Each slot in the input list gets one row of width D built from binary
sub-vectors: goal and system value categories, slot type, fulfillment and
first-mention bits, per-intent system action vectors, the previous user
output, and the dialogue-local domain/slot index one-hots. Rows from the
current and recent turns are stacked into one sequence with reserved
leading/separator positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dialogue import DialogueState, SlotId, UserGoal, mark_fulfilled
from .ontology import DONTCARE, REQUESTED, DialogueAct, Ontology

# Output class semantics shared by targets, decoding, and v_action_user.
CLASS_NONE = 0
CLASS_DONTCARE = 1
CLASS_REQUEST = 2
CLASS_GOAL = 3
CLASS_SYSTEM = 4
CLASS_RANDOM = 5
N_CLASSES = 6

# Value-category one-hots: none, "?", dontcare, other (in this order).
_CAT_NONE = 0
_CAT_REQUESTED = 1
_CAT_DONTCARE = 2
_CAT_OTHER = 3


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureLayout:
    """Widths and offsets of the per-slot feature row.

    The layout is a pure function of the ontology's intent inventories and the
    goal-size caps; a trained model is only compatible with the layout it was
    trained on. `include_index` zeroes the index block (ablation) without
    changing the width.
    """

    n_spec: int
    n_gen: int
    l_d: int = 6
    l_s: int = 10
    include_index: bool = True

    @property
    def basic_width(self) -> int:
        return 4 + 4 + 2 + 1 + 1

    @property
    def system_action_width(self) -> int:
        return 3 * self.n_spec + self.n_gen

    @property
    def user_action_width(self) -> int:
        return N_CLASSES

    @property
    def index_width(self) -> int:
        return self.l_d + self.l_s

    @property
    def width(self) -> int:
        return (
            self.basic_width
            + self.system_action_width
            + self.user_action_width
            + self.index_width
        )

    # Block offsets, in row order.
    @property
    def off_user_value(self) -> int:
        return 0

    @property
    def off_sys_value(self) -> int:
        return 4

    @property
    def off_type(self) -> int:
        return 8

    @property
    def off_ful(self) -> int:
        return 10

    @property
    def off_first(self) -> int:
        return 11

    @property
    def off_spec(self) -> int:
        return 12

    @property
    def off_gen(self) -> int:
        return self.off_spec + 3 * self.n_spec

    @property
    def off_prev_output(self) -> int:
        return self.off_gen + self.n_gen

    @property
    def off_domain_index(self) -> int:
        return self.off_prev_output + N_CLASSES

    @property
    def off_slot_index(self) -> int:
        return self.off_domain_index + self.l_d

    @classmethod
    def for_ontology(cls, ontology: Ontology, l_d: int = 6, l_s: int = 10,
                     include_index: bool = True) -> "FeatureLayout":
        return cls(ontology.n_spec, ontology.n_gen, l_d, l_s, include_index)

    def to_dict(self) -> dict:
        return {
            "n_spec": self.n_spec,
            "n_gen": self.n_gen,
            "l_d": self.l_d,
            "l_s": self.l_s,
            "include_index": self.include_index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureLayout":
        return cls(**data)


class IndexMap:
    """Dialogue-local (domain, slot) -> (domain index, slot index) assignment.

    Goal order decides the initial assignment; slots the system introduces get
    the next free slot index of their domain, new domains the next free domain
    index. Assignments are stable for the dialogue's lifetime.
    """

    def __init__(self, layout: FeatureLayout, goal: UserGoal):
        self.layout = layout
        self.domain_idx: dict[str, int] = {}
        self.slot_idx: dict[SlotId, int] = {}
        self._next_slot: dict[str, int] = {}
        for d in goal.domain_names():
            self._add_domain(d)
            for s in goal.domains[d].slot_names():
                self._add_slot((d, s))

    def _add_domain(self, domain: str) -> int:
        if domain in self.domain_idx:
            return self.domain_idx[domain]
        if len(self.domain_idx) >= self.layout.l_d:
            raise EncodingError(
                f"domain {domain!r} needs index {len(self.domain_idx)} "
                f">= l_d={self.layout.l_d}"
            )
        self.domain_idx[domain] = len(self.domain_idx)
        self._next_slot[domain] = 0
        return self.domain_idx[domain]

    def _add_slot(self, slot_id: SlotId) -> int:
        if slot_id in self.slot_idx:
            return self.slot_idx[slot_id]
        domain = slot_id[0]
        nxt = self._next_slot[domain]
        if nxt >= self.layout.l_s:
            raise EncodingError(f"slot {slot_id} needs index {nxt} >= l_s={self.layout.l_s}")
        self.slot_idx[slot_id] = nxt
        self._next_slot[domain] = nxt + 1
        return nxt

    def ensure(self, slot_id: SlotId) -> tuple[int, int]:
        di = self._add_domain(slot_id[0])
        si = self._add_slot(slot_id)
        return di, si

    def lookup(self, slot_id: SlotId) -> tuple[int, int]:
        return self.domain_idx[slot_id[0]], self.slot_idx[slot_id]


def assign_indices(goal: UserGoal, layout: FeatureLayout) -> IndexMap:
    return IndexMap(layout, goal)


def _value_category(value: Optional[str]) -> int:
    if value is None:
        return _CAT_NONE
    if value == REQUESTED:
        return _CAT_REQUESTED
    if value == DONTCARE:
        return _CAT_DONTCARE
    return _CAT_OTHER


def encode_slot(
    slot_id: SlotId,
    goal: UserGoal,
    state: DialogueState,
    prev_class: Optional[int],
    layout: FeatureLayout,
    index_map: IndexMap,
    intent_pos: dict[str, int],
    gen_pos: dict[str, int],
    out: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One feature row for `slot_id` at the state's current exchange.

    Expects mark_fulfilled(goal, state) to have run for this exchange and the
    slot to hold an index assignment already.
    """
    v = out if out is not None else np.zeros(layout.width, dtype=np.float64)
    d, s = slot_id

    if goal.is_request(d, s):
        user_cat = _CAT_REQUESTED
        v[layout.off_type + 1] = 1.0
    elif goal.is_constraint(d, s):
        user_cat = _value_category(goal.value(d, s))
        v[layout.off_type + 0] = 1.0
    else:
        user_cat = _CAT_NONE
    v[layout.off_user_value + user_cat] = 1.0
    v[layout.off_sys_value + _value_category(state.system_state.get(slot_id))] = 1.0
    v[layout.off_ful] = 1.0 if goal.fulfilled.get(slot_id, False) else 0.0
    v[layout.off_first] = 1.0 if state.first_mentioned_now(slot_id) else 0.0

    # System action block: per-intent value category for acts on this slot,
    # plus the turn-wide general-intent multi-hot.
    for j in range(layout.n_spec):
        v[layout.off_spec + 3 * j + 0] = 1.0
    if state.history:
        for act in state.history[-1].system_acts:
            if act.is_general:
                k = gen_pos.get(act.intent)
                if k is not None:
                    v[layout.off_gen + k] = 1.0
            elif (act.domain, act.slot) == slot_id:
                j = intent_pos.get(act.intent)
                if j is None:
                    continue
                cat = 1 if act.intent == "request" or act.value == REQUESTED else 2
                base = layout.off_spec + 3 * j
                v[base + 0] = 0.0
                v[base + cat] = 1.0

    if prev_class is not None:
        v[layout.off_prev_output + int(prev_class)] = 1.0

    if layout.include_index:
        di, si = index_map.lookup(slot_id)
        v[layout.off_domain_index + di] = 1.0
        v[layout.off_slot_index + si] = 1.0
    return v


@dataclass
class InputSequence:
    """Stacked feature rows for the model: current turn first, then history.

    The realized token sequence is [CLS, block_0 rows..., SEP, block_1
    rows..., SEP, ...]; blocks are newest-first and slot_ids aligns with the
    rows of block 0.
    """

    blocks: list[np.ndarray]
    slot_ids: list[SlotId]

    @property
    def n_current(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def length(self) -> int:
        return 1 + sum(b.shape[0] for b in self.blocks) + len(self.blocks)

    def block_sizes(self) -> list[int]:
        return [b.shape[0] for b in self.blocks]


def build_input(turn_rows: Sequence[tuple[np.ndarray, list[SlotId]]], window: int) -> InputSequence:
    """Assemble the newest `window` turns (current first) into one sequence."""
    if window < 1:
        raise EncodingError("window must be >= 1")
    if not turn_rows:
        raise EncodingError("no encoded turns")
    recent = list(turn_rows)[-window:][::-1]
    return InputSequence(blocks=[m for m, _ in recent], slot_ids=list(recent[0][1]))


class SlotOrdering:
    """Per-dialogue slot list with either data-derived or sampled order.

    corpus mode: mentioned slots first, by first-mention time; not-yet-
    mentioned goal slots follow in a per-dialogue pseudorandom order (so the
    order may differ between turns, and sequence position carries no slot
    identity; the index features do). inference mode: a random permutation of
    the goal slots drawn once per dialogue; system-introduced slots append in
    introduction order.
    """

    def __init__(self, goal: UserGoal, mode: str, rng: Optional[np.random.Generator] = None):
        if mode not in ("corpus", "inference"):
            raise EncodingError(f"unknown slot order mode {mode!r}")
        if rng is None:
            raise EncodingError(f"{mode} ordering needs an rng")
        self.mode = mode
        self.goal_pos: dict[SlotId, int] = {sid: i for i, sid in enumerate(goal.slot_ids())}
        self.extra: dict[SlotId, int] = {}
        perm = rng.permutation(len(self.goal_pos))
        self.tiebreak: dict[SlotId, int] = {
            sid: int(perm[i]) for i, sid in enumerate(self.goal_pos)
        }
        if mode == "inference":
            self.goal_pos = dict(self.tiebreak)

    def introduce(self, slot_id: SlotId) -> None:
        if slot_id not in self.goal_pos and slot_id not in self.extra:
            self.extra[slot_id] = len(self.extra)

    def current(self, state: DialogueState) -> list[SlotId]:
        slots = list(self.goal_pos) + list(self.extra)
        if self.mode == "inference":
            def key(sid: SlotId):
                if sid in self.goal_pos:
                    return (0, self.goal_pos[sid], 0)
                return (1, self.extra[sid], 0)
        else:
            def key(sid: SlotId):
                ts = state.first_mention.get(sid)
                tie = self.tiebreak.get(sid)
                if ts is not None:
                    return (0, ts, tie if tie is not None else -1)
                return (1, (0, 0), tie if tie is not None else len(self.tiebreak))
        return sorted(slots, key=key)


class DialogueEncoder:
    """Owns the per-dialogue encoding state for extraction and live simulation.

    begin_turn consumes the system's acts and yields the model input for the
    upcoming user action; end_turn records what the user actually did (acts
    plus their per-slot classes, which become the next turn's v_action_user).
    """

    def __init__(
        self,
        ontology: Ontology,
        goal: UserGoal,
        layout: FeatureLayout,
        window: int = 3,
        order_mode: str = "inference",
        rng: Optional[np.random.Generator] = None,
    ):
        self.ontology = ontology
        self.goal = goal
        self.layout = layout
        self.window = window
        self.state = DialogueState(ontology)
        self.index_map = IndexMap(layout, goal)
        self.ordering = SlotOrdering(goal, order_mode, rng)
        self.turn_rows: list[tuple[np.ndarray, list[SlotId]]] = []
        self.prev_classes: dict[SlotId, int] = {}
        self._intent_pos = {name: j for j, name in enumerate(ontology.domain_specific_intents)}
        self._gen_pos = {name: k for k, name in enumerate(ontology.general_intents)}

    def begin_turn(self, system_acts: Sequence[DialogueAct]) -> InputSequence:
        self.state.apply_system_acts(system_acts)
        for act in system_acts:
            if not act.is_general and act.slot is not None:
                sid = (act.domain, act.slot)
                self.index_map.ensure(sid)
                self.ordering.introduce(sid)
        mark_fulfilled(self.goal, self.state)
        slots = self.ordering.current(self.state)
        rows = np.zeros((len(slots), self.layout.width), dtype=np.float64)
        for i, sid in enumerate(slots):
            encode_slot(
                sid,
                self.goal,
                self.state,
                self.prev_classes.get(sid),
                self.layout,
                self.index_map,
                self._intent_pos,
                self._gen_pos,
                out=rows[i],
            )
        self.turn_rows.append((rows, slots))
        return build_input(self.turn_rows, self.window)

    def end_turn(self, user_acts: Sequence[DialogueAct], classes: dict[SlotId, int]) -> None:
        self.state.record_user_acts(user_acts)
        for act in user_acts:
            if not act.is_general and act.slot is not None:
                sid = (act.domain, act.slot)
                self.index_map.ensure(sid)
                self.ordering.introduce(sid)
        self.prev_classes = dict(classes)
