import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from usim.agent import TrainConfig, train_supervised
from usim.evalkit import classification_metrics, corpus_fit
from usim.net import NetConfig, NetError


class TestClassificationMetrics:
    def test_perfect_predictions(self):
        preds = [np.array([0, 3, 2]), np.array([1, 0])]
        m = classification_metrics(preds, preds, [0, 1])
        assert m["precision"] == m["recall"] == m["f1"] == 1.0
        assert m["turn_accuracy"] == 1.0
        assert m["slot_accuracy"] == 1.0
        assert m["first_turn_len"] == 2.0  # classes 3 and 2 are non-none

    def test_all_none_predictions(self):
        preds = [np.zeros(3, dtype=int)]
        targets = [np.array([0, 3, 2])]
        m = classification_metrics(preds, targets, [0])
        assert m["recall"] == 0.0
        assert m["precision"] == 0.0
        assert m["first_turn_len"] == 0.0
        assert m["turn_accuracy"] == 0.0

    def test_wrong_non_none_class_counts_fp_and_fn(self):
        preds = [np.array([4])]
        targets = [np.array([3])]
        m = classification_metrics(preds, targets, [0])
        assert m["precision"] == 0.0 and m["recall"] == 0.0

    def test_len_curve_by_turn(self):
        preds = [np.array([3, 0]), np.array([3, 2]), np.array([0, 0])]
        targets = [np.array([3, 0]), np.array([3, 2]), np.array([0, 0])]
        m = classification_metrics(preds, targets, [0, 1, 0])
        assert m["len_curve"][0] == pytest.approx((1 + 0) / 2)
        assert m["len_curve"][1] == 2.0

    def test_f1_harmonic_mean(self):
        preds = [np.array([3, 3, 0, 0])]
        targets = [np.array([3, 0, 2, 0])]
        m = classification_metrics(preds, targets, [0])
        p, r, f1 = m["precision"], m["recall"], m["f1"]
        assert p == 0.5 and r == 0.5
        assert f1 == pytest.approx(2 * p * r / (p + r))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            classification_metrics([np.zeros(2)], [np.zeros(3)], [0])

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 9999))
    def test_turn_accuracy_never_exceeds_slot_accuracy(self, seed):
        rng = np.random.default_rng(seed)
        preds, targets, turns = [], [], []
        for t in range(int(rng.integers(1, 6))):
            n = int(rng.integers(1, 5))
            preds.append(rng.integers(0, 6, size=n))
            targets.append(rng.integers(0, 6, size=n))
            turns.append(t)
        m = classification_metrics(preds, targets, turns)
        assert m["turn_accuracy"] <= m["slot_accuracy"] + 1e-12

    def test_pure_function(self):
        rng = np.random.default_rng(0)
        preds = [rng.integers(0, 6, size=4) for _ in range(5)]
        targets = [rng.integers(0, 6, size=4) for _ in range(5)]
        a = classification_metrics(preds, targets, range(5))
        b = classification_metrics(preds, targets, range(5))
        assert a == b


@pytest.fixture(scope="module")
def fitted(toy_ontology, small_corpus):
    dialogues, _ = small_corpus
    cfg = NetConfig(d_model=24, n_layers=1, n_heads=2, ff_dim=48, seed=2)
    ckpt, _ = train_supervised(dialogues[:60], toy_ontology, cfg,
                               TrainConfig(epochs=2, seed=2))
    return ckpt


class TestCorpusFit:

    def test_report_fields_and_round_trip(self, fitted, toy_ontology, small_corpus, tmp_path):
        dialogues, _ = small_corpus
        report = corpus_fit(fitted, dialogues[60:80], toy_ontology)
        for value in (report.precision, report.recall, report.f1,
                      report.turn_accuracy, report.slot_accuracy):
            assert 0.0 <= value <= 1.0
        assert report.first_turn_len >= 0.0
        blob = json.dumps(report.to_dict(), sort_keys=True)
        assert json.loads(blob) == report.to_dict()

    def test_recomputation_matches(self, fitted, toy_ontology, small_corpus):
        dialogues, _ = small_corpus
        r1 = corpus_fit(fitted, dialogues[60:70], toy_ontology)
        r2 = corpus_fit(fitted, dialogues[60:70], toy_ontology)
        assert r1.to_dict() == r2.to_dict()

    def test_fingerprint_mismatch_rejected(self, fitted, golden_ontology, small_corpus):
        dialogues, _ = small_corpus
        with pytest.raises(NetError):
            corpus_fit(fitted, dialogues[:5], golden_ontology)
