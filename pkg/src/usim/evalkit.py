"""Corpus-fit metrics: precision/recall/F1 over non-none slot decisions,
whole-turn accuracy, and per-turn action-length statistics, computed with
oracle (teacher-forced) history.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import CorpusDialogue, ExtractedDialogue, extract_corpus
from .features import CLASS_NONE
from .net import Checkpoint, NetError, forward, pack_batch
from .ontology import Ontology

REPORT_SCHEMA = "report/1"


@dataclass
class CorpusFitReport:
    precision: float
    recall: float
    f1: float
    turn_accuracy: float
    slot_accuracy: float
    first_turn_len: float
    len_curve: list[float]
    n_dialogues: int
    n_turns: int
    n_slots: int
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "kind": "corpus_fit",
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "turn_accuracy": self.turn_accuracy,
            "slot_accuracy": self.slot_accuracy,
            "first_turn_len": self.first_turn_len,
            "len_curve": self.len_curve,
            "n_dialogues": self.n_dialogues,
            "n_turns": self.n_turns,
            "n_slots": self.n_slots,
            "skipped": self.skipped,
        }


def classification_metrics(
    preds: Sequence[np.ndarray], targets: Sequence[np.ndarray], turns: Sequence[int]
) -> dict:
    """Pure function of aligned per-turn prediction/target class arrays.

    Micro-averaged P/R over non-none decisions: a prediction scores as correct
    only when it matches the target class exactly.
    """
    tp = fp = fn = 0
    slot_total = 0
    turn_hits = 0
    per_turn_slot_acc: list[float] = []
    len_by_turn: dict[int, list[int]] = defaultdict(list)
    for p, y, t in zip(preds, targets, turns):
        p = np.asarray(p)
        y = np.asarray(y)
        if p.shape != y.shape:
            raise ValueError("prediction/target shape mismatch")
        slot_total += p.size
        # slot accuracy is averaged per turn first, so whole-turn correctness
        # (turn accuracy) is always the stricter of the two
        per_turn_slot_acc.append(float((p == y).mean()) if p.size else 1.0)
        turn_hits += int(np.array_equal(p, y))
        pred_on = p != CLASS_NONE
        targ_on = y != CLASS_NONE
        tp += int(((p == y) & pred_on).sum())
        fp += int((pred_on & (p != y)).sum())
        fn += int((targ_on & (p != y)).sum())
        len_by_turn[t].append(int(pred_on.sum()))
    n_turns = len(list(preds))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    max_t = max(len_by_turn) if len_by_turn else -1
    len_curve = [float(np.mean(len_by_turn[t])) if len_by_turn.get(t) else 0.0
                 for t in range(max_t + 1)]
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "turn_accuracy": (turn_hits / n_turns) if n_turns else 0.0,
        "slot_accuracy": float(np.mean(per_turn_slot_acc)) if per_turn_slot_acc else 0.0,
        "first_turn_len": len_curve[0] if len_curve else 0.0,
        "len_curve": len_curve,
        "n_turns": n_turns,
        "n_slots": slot_total,
    }


def predict_classes(
    ckpt: Checkpoint, extracted: Sequence[ExtractedDialogue], batch_size: int = 128
) -> dict[tuple[str, int], np.ndarray]:
    """Argmax slot classes for every extracted turn, keyed by (dialogue, turn).

    Examples are bucketed by sequence length so each forward pass runs on a
    dense rectangular batch.
    """
    examples = [ex for d in extracted for ex in d.examples]
    buckets: dict[int, list] = defaultdict(list)
    for ex in examples:
        buckets[ex.sequence.length].append(ex)
    out: dict[tuple[str, int], np.ndarray] = {}
    for length in sorted(buckets):
        group = buckets[length]
        for i in range(0, len(group), batch_size):
            chunk = group[i: i + batch_size]
            batch = pack_batch([ex.sequence for ex in chunk], ckpt.layout.width,
                               ckpt.config.np_dtype)
            slot_logits, _, _ = forward(ckpt.params, batch, ckpt.config, ckpt.layout,
                                        train_mode=False)
            offset = 0
            for ex, n in zip(chunk, batch.n_current):
                out[(ex.dialogue_id, ex.turn)] = slot_logits[offset: offset + n].argmax(axis=1)
                offset += n
    return out


def corpus_fit(
    ckpt: Checkpoint,
    dialogues: Sequence[CorpusDialogue],
    ontology: Ontology,
    batch_size: int = 128,
) -> CorpusFitReport:
    """Teacher-forced fit of a trained model against a corpus split."""
    if ckpt.ontology_fingerprint != ontology.fingerprint():
        raise NetError("checkpoint/ontology fingerprint mismatch")
    window = int(ckpt.meta.get("window", 3))
    extracted, skipped = extract_corpus(dialogues, ontology, ckpt.layout, window=window)
    preds_map = predict_classes(ckpt, extracted, batch_size=batch_size)
    preds, targets, turns = [], [], []
    for d in extracted:
        for ex in d.examples:
            preds.append(preds_map[(ex.dialogue_id, ex.turn)])
            targets.append(ex.targets)
            turns.append(ex.turn)
    m = classification_metrics(preds, targets, turns)
    return CorpusFitReport(
        precision=m["precision"],
        recall=m["recall"],
        f1=m["f1"],
        turn_accuracy=m["turn_accuracy"],
        slot_accuracy=m["slot_accuracy"],
        first_turn_len=m["first_turn_len"],
        len_curve=m["len_curve"],
        n_dialogues=len(extracted),
        n_turns=m["n_turns"],
        n_slots=m["n_slots"],
        skipped=len(skipped),
    )
