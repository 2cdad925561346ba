from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import rel_entr

from persona_align.data import Alternative
from persona_align.evaluation import (
    ShareVector,
    class_scores,
    comparison_report,
    confusion_matrix,
    evaluate,
    f1_scores,
    js_divergence,
    parse_table,
    shares,
    write_report,
)
from persona_align.predictor import Prediction, PredictionSet

from _factories import record

T, S, C = Alternative.TRAIN, Alternative.SWISSMETRO, Alternative.CAR

# ground truth vs MNL shares from the published comparison table, evaluated with
# the symmetrized-KL formula at epsilon = 1e-6 (frozen from an independent scipy computation)
TABLE_TRUTH = (0.06, 0.533, 0.407)
TABLE_MNL = (0.02, 0.775, 0.205)
TABLE_JSD = 0.13653231218386813
PUBLISHED_MNL_JSD = 0.483


def _reference_jsd(p, q, eps=1e-6):
    p = (np.asarray(p) + eps) / (np.asarray(p) + eps).sum()
    q = (np.asarray(q) + eps) / (np.asarray(q) + eps).sum()
    return 0.5 * (rel_entr(p, q).sum() + rel_entr(q, p).sum())


def test_table_shares_frozen_value():
    assert _reference_jsd(TABLE_TRUTH, TABLE_MNL) == pytest.approx(TABLE_JSD, abs=1e-15)
    assert js_divergence(TABLE_TRUTH, TABLE_MNL) == pytest.approx(TABLE_JSD, abs=1e-12)
    # the printed formula does not reproduce the published table entry
    assert abs(TABLE_JSD - PUBLISHED_MNL_JSD) > 0.3


def test_shares_are_empirical_frequencies():
    s = shares([T] * 60 + [S] * 533 + [C] * 407)
    np.testing.assert_allclose(s.as_array(), TABLE_TRUTH, rtol=0, atol=1e-15)
    assert shares(["Train", "Car"]).as_array().tolist() == [0.5, 0, 0.5]
    assert shares([C, C]).as_array().tolist() == [0, 0, 1]


share_vectors = st.lists(st.floats(0, 1), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: np.array(v) / sum(v)
)


@settings(max_examples=2000, deadline=None)
@given(share_vectors, share_vectors)
def test_divergence_laws(p, q):
    d = js_divergence(p, q)
    assert d >= 0
    assert d == pytest.approx(js_divergence(q, p), abs=1e-12)
    assert js_divergence(p, p) == 0.0


def test_divergence_identity_only_for_equal():
    assert js_divergence([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == 0
    assert js_divergence([0.2, 0.3, 0.5], [0.2, 0.31, 0.49]) > 0


def test_share_vector_validation():
    with pytest.raises(ValueError):
        ShareVector(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        shares([])


def test_perfect_predictions_score_one():
    labels = [T, S, C, C, S]
    assert f1_scores(labels, labels, "macro") == 1.0
    assert f1_scores(labels, labels) == 1.0
    assert f1_scores(labels, labels, "weighted_by_true") == 1.0


def test_rotated_predictions_score_zero():
    assert f1_scores([T, S, C], [S, C, T], "macro") == 0.0


def test_six_record_hand_case():
    truths = [T, T, S, S, C, C]
    preds = [T, S, S, S, C, C]
    # Train P=1 R=1/2 F1=2/3; Swissmetro P=2/3 R=1 F1=4/5; Car F1=1
    assert f1_scores(truths, preds, "macro") == pytest.approx(37 / 45, abs=1e-15)
    assert f1_scores(truths, preds, "weighted_by_predicted") == pytest.approx(38 / 45, abs=1e-15)
    assert f1_scores(truths, preds, "weighted_by_true") == pytest.approx(37 / 45, abs=1e-15)
    np.testing.assert_array_equal(confusion_matrix(truths, preds), [[1, 1, 0], [0, 2, 0], [0, 0, 2]])


def test_absent_class_scores_zero():
    s = class_scores(confusion_matrix([T, T], [T, S]))
    assert s.f1[2] == 0.0 and s.precision[1] == 0.0


def test_confusion_rejects_length_mismatch():
    with pytest.raises(ValueError):
        confusion_matrix([T], [T, S])
    with pytest.raises(ValueError):
        f1_scores([T], [T], "micro")


@settings(max_examples=300)
@given(st.lists(st.tuples(st.sampled_from([T, S, C]), st.sampled_from([T, S, C])), min_size=1, max_size=40))
def test_f1_bounded_by_accuracy_extremes(pairs):
    t = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    cm = confusion_matrix(t, p)
    acc = np.trace(cm) / cm.sum()
    for w in ("macro", "weighted_by_predicted", "weighted_by_true"):
        f = f1_scores(t, p, w)
        assert 0 <= f <= 1
        assert (f == 1.0) == (acc == 1.0) or w == "macro" and len(set(t) | set(p)) < 3


def _pset(method, records, labels):
    return PredictionSet(method, [Prediction(r.record_id, a) for r, a in zip(records, labels)])


def test_evaluate_drops_failures_and_counts_them():
    recs = [record(i, a) for i, a in enumerate([T, S, C, C], start=1)]
    ps = PredictionSet("m", [Prediction(1, T), Prediction(2, S), Prediction(3, None, error="x"), Prediction(4, C)])
    rep = evaluate(ps, recs)
    assert rep.n_evaluated == 3 and rep.n_failed == 1 and rep.macro_f1 == 1.0


def test_evaluate_requires_matching_ids():
    recs = [record(1, T)]
    with pytest.raises(ValueError):
        evaluate(_pset("m", [record(2, T)], [T]), recs)


def test_comparison_report_outputs_agree(tmp_path):
    recs = [record(i, a) for i, a in enumerate([T, S, S, C, C, C], start=1)]
    report = comparison_report({"a": _pset("a", recs, [T, S, C, C, C, C]), "b": _pset("b", recs, [S] * 6)}, recs)
    paths = write_report(report, tmp_path)
    data = json.loads(paths["json"].read_text())
    rows = parse_table(paths["table"].read_text())
    assert [r["method"] for r in rows] == ["a", "b"]
    for row, m in zip(rows, data["methods"]):
        assert row["js_divergence"] == pytest.approx(m["js_divergence"], abs=5e-5)
        assert row["macro_f1"] == pytest.approx(m["macro_f1"], abs=5e-4)
        np.testing.assert_allclose(row["shares"], [m["predicted_shares"][k] for k in ("Train", "Swissmetro", "Car")], atol=5e-4)
    plot = json.loads(paths["plot_data"].read_text())
    assert set(plot["shares"]) == {"ground_truth", "a", "b"}
