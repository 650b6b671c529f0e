"""The trainable user simulator: encode system acts, run the network, decode
per-slot classes into dialogue acts; plus the supervised training driver.

Decoding is constrained by construction: every emitted act references a goal
or previously mentioned slot and a value from the goal, the system state, or
the ontology, so arbitrary network weights can never produce an impossible
act.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import CorpusDialogue, CorpusError, SplitSpec, extract_corpus, make_split, select
from .dialogue import SlotId, UserGoal, all_fulfilled
from .evalkit import classification_metrics, predict_classes
from .features import (
    CLASS_DONTCARE,
    CLASS_GOAL,
    CLASS_NONE,
    CLASS_RANDOM,
    CLASS_REQUEST,
    CLASS_SYSTEM,
    DialogueEncoder,
    FeatureLayout,
)
from .net import (
    Adam,
    Checkpoint,
    NetConfig,
    NetError,
    TrainingAbort,
    forward,
    init_params,
    optimizer_state_of,
    pack_batch,
    train_step,
)
from .ontology import DONTCARE, REQUESTED, DialogueAct, Ontology
from .util import make_rng


@dataclass
class DecodePolicy:
    domain_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.domain_threshold < 1.0:
            raise ValueError("domain_threshold must be in (0, 1)")


class NeuralUserSimulator:
    """Per-dialogue sessions over an immutable trained checkpoint."""

    def __init__(self, ontology: Ontology, checkpoint: Checkpoint,
                 decode: Optional[DecodePolicy] = None):
        if checkpoint.ontology_fingerprint != ontology.fingerprint():
            raise NetError("checkpoint was trained against a different ontology")
        self.ontology = ontology
        self.ckpt = checkpoint
        self.decode = decode or DecodePolicy()
        self.window = int(checkpoint.meta.get("window", 3))

    def start_dialogue(self, goal: UserGoal, seed: int) -> None:
        self.goal = goal.copy()
        self.enc = DialogueEncoder(
            self.ontology, self.goal, self.ckpt.layout, window=self.window,
            order_mode="inference", rng=make_rng(seed, 0x0E),
        )
        self.value_rng = make_rng(seed, 0x5E)
        self.done = False

    def _decode_slot(self, sid: SlotId, cls: int) -> tuple[Optional[DialogueAct], int]:
        """Turn one predicted class into an act (or nothing), with fallbacks.

        Returns (act, final class actually realized).
        """
        d, s = sid
        if cls == CLASS_REQUEST:
            return DialogueAct("request", d, s, REQUESTED), CLASS_REQUEST
        if cls == CLASS_DONTCARE:
            return DialogueAct("inform", d, s, DONTCARE), CLASS_DONTCARE
        if cls == CLASS_SYSTEM:
            value = self.enc.state.system_state.get(sid)
            if value is not None and value != REQUESTED:
                return DialogueAct("inform", d, s, value), CLASS_SYSTEM
            cls = CLASS_GOAL  # no system value to echo: demote
        if cls == CLASS_GOAL:
            value = self.goal.value(d, s)
            if value is None:
                return None, CLASS_NONE
            return DialogueAct("inform", d, s, value), CLASS_GOAL
        if cls == CLASS_RANDOM:
            current = self.goal.value(d, s)
            pool = [v for v in self.ontology.values_for(d, s)
                    if v != current and v not in (DONTCARE, REQUESTED)]
            if not pool:
                return None, CLASS_NONE
            value = pool[int(self.value_rng.integers(len(pool)))]
            # the goal change commits only if the act survives the domain gate
            return DialogueAct("inform", d, s, value), CLASS_RANDOM
        return None, CLASS_NONE

    def step(self, system_acts: Sequence[DialogueAct]) -> tuple[list[DialogueAct], bool]:
        if self.done:
            return [], True
        if any(a.is_general and a.intent == "bye" for a in system_acts):
            self.done = True
            return [DialogueAct("bye")], True
        seq = self.enc.begin_turn(system_acts)
        if all_fulfilled(self.goal):
            self.done = True
            closing = [DialogueAct("thank"), DialogueAct("bye")]
            self.enc.end_turn(closing, {})
            return closing, True

        batch = pack_batch([seq], self.ckpt.layout.width, self.ckpt.config.np_dtype)
        slot_logits, domain_logits, _ = forward(
            self.ckpt.params, batch, self.ckpt.config, self.ckpt.layout, train_mode=False
        )
        classes = slot_logits.argmax(axis=1)
        domain_probs = 1.0 / (1.0 + np.exp(-domain_logits[0].astype(np.float64)))

        proposals: list[tuple[SlotId, DialogueAct, int]] = []
        final_classes: dict[SlotId, int] = {}
        for sid, cls in zip(seq.slot_ids, classes):
            act, realized = self._decode_slot(sid, int(cls))
            final_classes[sid] = CLASS_NONE
            if act is not None:
                proposals.append((sid, act, realized))

        active = {
            domain for domain, di in self.enc.index_map.domain_idx.items()
            if di < len(domain_probs) and domain_probs[di] >= self.decode.domain_threshold
        }
        emitted = [(sid, act, realized) for sid, act, realized in proposals
                   if sid[0] in active]
        if proposals and not emitted and not all_fulfilled(self.goal):
            # Gate suppressed everything: fall back to the likeliest domain
            # among the proposed acts.
            domains = {sid[0] for sid, _, _ in proposals}
            best = max(domains,
                       key=lambda d: domain_probs[self.enc.index_map.domain_idx[d]]
                       if self.enc.index_map.domain_idx.get(d, len(domain_probs)) < len(domain_probs)
                       else -1.0)
            emitted = [p for p in proposals if p[0][0] == best]

        acts = [act for _, act, _ in emitted]
        for sid, act, realized in emitted:
            final_classes[sid] = realized
            if realized == CLASS_RANDOM and self.goal.is_constraint(*sid):
                self.goal.change_value(sid[0], sid[1], act.value)
        self.enc.end_turn(acts, final_classes)
        return acts, False


# -- supervised training ------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    window: int = 3
    seed: int = 0
    dev_every: int = 10
    patience: Optional[int] = None


def _make_batches(examples: list, batch_size: int, rng: np.random.Generator) -> list[list]:
    order = rng.permutation(len(examples))
    buckets: dict[int, list] = {}
    for i in order:
        ex = examples[int(i)]
        buckets.setdefault(ex.sequence.length, []).append(ex)
    batches = []
    for length in sorted(buckets):
        group = buckets[length]
        for i in range(0, len(group), batch_size):
            batches.append(group[i: i + batch_size])
    batch_order = rng.permutation(len(batches))
    return [batches[int(i)] for i in batch_order]


def train_supervised(
    dialogues: Sequence[CorpusDialogue],
    ontology: Ontology,
    net_config: NetConfig,
    train_config: TrainConfig,
    layout: Optional[FeatureLayout] = None,
    split: Optional[SplitSpec] = None,
) -> tuple[Checkpoint, list[dict]]:
    """Train on a corpus, track dev metrics per epoch, keep the best-dev model.

    Deterministic given the seeds in net_config and train_config; dev turn
    accuracy picks the retained checkpoint (earliest epoch wins ties).
    """
    if not dialogues:
        raise CorpusError("empty corpus")
    layout = layout or FeatureLayout.for_ontology(ontology)
    if split is None:
        split = make_split(dialogues, dev_every=train_config.dev_every)
    train_dialogues = select(dialogues, split.train_ids)
    dev_dialogues = select(dialogues, split.dev_ids) or train_dialogues
    if not train_dialogues:
        raise CorpusError("training split is empty")

    window = train_config.window
    train_extracted, skipped = extract_corpus(train_dialogues, ontology, layout, window)
    dev_extracted, _ = extract_corpus(dev_dialogues, ontology, layout, window)
    examples = [ex for d in train_extracted for ex in d.examples]
    if not examples:
        raise CorpusError("no trainable turns after extraction")

    params = init_params(net_config, layout)
    optimizer = Adam(params, lr=net_config.learning_rate)
    dropout_rng = make_rng(net_config.seed, 0xD0)
    fingerprint = ontology.fingerprint()

    def dev_metrics(p: dict[str, np.ndarray]) -> dict:
        ckpt = Checkpoint(net_config, layout, fingerprint, p, meta={"window": window})
        preds_map = predict_classes(ckpt, dev_extracted)
        preds, targets, turns = [], [], []
        for d in dev_extracted:
            for ex in d.examples:
                preds.append(preds_map[(ex.dialogue_id, ex.turn)])
                targets.append(ex.targets)
                turns.append(ex.turn)
        return classification_metrics(preds, targets, turns)

    history: list[dict] = []
    best_acc = -1.0
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch = -1
    stale = 0
    for epoch in range(train_config.epochs):
        rng = make_rng(train_config.seed, 0xE0, epoch)
        losses = []
        for batch_examples in _make_batches(examples, train_config.batch_size, rng):
            batch = pack_batch([ex.sequence for ex in batch_examples], layout.width,
                               net_config.np_dtype)
            slot_targets = np.concatenate([ex.targets for ex in batch_examples])
            domain_targets = np.stack([ex.y_cls for ex in batch_examples])
            loss = train_step(params, optimizer, batch, slot_targets, domain_targets,
                              net_config, layout, dropout_rng)
            losses.append(loss)
        m = dev_metrics(params)
        if not np.isfinite(m["turn_accuracy"]):
            raise TrainingAbort("dev metrics went non-finite", {"epoch": epoch})
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "dev_precision": m["precision"],
            "dev_recall": m["recall"],
            "dev_f1": m["f1"],
            "dev_turn_accuracy": m["turn_accuracy"],
            "dev_first_turn_len": m["first_turn_len"],
        }
        history.append(row)
        if m["turn_accuracy"] > best_acc:
            best_acc = m["turn_accuracy"]
            best_params = {k: v.copy() for k, v in params.items()}
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if train_config.patience is not None and stale >= train_config.patience:
                break

    ckpt = Checkpoint(
        config=net_config,
        layout=layout,
        ontology_fingerprint=fingerprint,
        params=best_params,
        optimizer_state=optimizer_state_of(optimizer),
        rng_state=dropout_rng.bit_generator.state,
        meta={
            "window": window,
            "best_epoch": best_epoch,
            "best_dev_turn_accuracy": best_acc,
            "skipped_dialogues": len(skipped),
        },
    )
    return ckpt, history
