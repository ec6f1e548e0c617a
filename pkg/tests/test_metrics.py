import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unreal.metrics import SchemaMismatch, aggregate, aggregate_values, emit_report, evaluate


def test_perfect_predictions():
    r = evaluate([0, 1, 2, 1], [0, 1, 2, 1])
    assert r.balanced_accuracy == 1.0 and r.macro_f1 == 1.0


def test_hand_counted_two_class():
    r = evaluate([0, 1, 1], [0, 0, 1])
    assert r.per_class_recall == (0.5, 1.0)
    assert r.balanced_accuracy == 0.75
    assert r.per_class_f1 == pytest.approx((2 / 3, 2 / 3))


def test_absent_class_flagged(caplog):
    with caplog.at_level(logging.WARNING):
        r = evaluate([0, 0, 2], [0, 0, 1], k=3)
    assert r.absent_classes == (2,)
    assert r.per_class_recall[2] == 0.0
    assert "absent" in caplog.text


def test_mask_forms_agree():
    pred, truth = np.array([0, 1, 1, 0]), np.array([0, 1, 0, 0])
    mask = np.array([True, False, True, True])
    assert evaluate(pred, truth, mask).macro_f1 == evaluate(pred, truth, np.flatnonzero(mask)).macro_f1


def test_empty_mask_rejected():
    with pytest.raises(ValueError):
        evaluate([0], [0], np.zeros(1, bool))


def _oracle(pred, truth, k):
    recalls, f1s = [], []
    for c in range(k):
        tp = sum(1 for p, t in zip(pred, truth) if p == c and t == c)
        fn = sum(1 for p, t in zip(pred, truth) if p != c and t == c)
        fp = sum(1 for p, t in zip(pred, truth) if p == c and t != c)
        rec = tp / (tp + fn) if tp + fn else 0.0
        prec = tp / (tp + fp) if tp + fp else 0.0
        recalls.append(rec)
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return np.mean(recalls), np.mean(f1s)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_matches_tally_oracle(seed, k):
    rng = np.random.default_rng(seed)
    truth = np.concatenate([np.arange(k), rng.integers(0, k, 100 - k)])
    pred = np.where(rng.random(100) < 0.6, truth, rng.integers(0, k, 100))
    r = evaluate(pred, truth, k=k)
    bacc, f1 = _oracle(pred, truth, k)
    assert r.balanced_accuracy == pytest.approx(bacc, abs=1e-12)
    assert r.macro_f1 == pytest.approx(f1, abs=1e-12)
    assert r.confusion.sum() == 100
    assert np.array_equal(r.confusion.sum(axis=1), np.bincount(truth, minlength=k))
    perm = rng.permutation(100)
    assert evaluate(pred[perm], truth[perm], k=k).macro_f1 == pytest.approx(r.macro_f1, abs=1e-15)
    assert 0 <= r.balanced_accuracy <= 1 and 0 <= r.macro_f1 <= 1


def test_bacc_equals_accuracy_on_uniform_truth():
    truth = np.repeat(np.arange(3), 5)
    pred = np.roll(truth, 2)
    r = evaluate(pred, truth)
    assert r.balanced_accuracy == pytest.approx(r.accuracy)


@pytest.mark.parametrize(
    "values,mean,se",
    [([0.6], 0.6, 0.0), ([0.6, 0.8], 0.7, 0.1), ([0.5] * 5, 0.5, 0.0)],
)
def test_aggregate_values(values, mean, se):
    a = aggregate_values(values)
    assert a.mean == pytest.approx(mean) and a.stderr == pytest.approx(se, abs=1e-12)


def test_aggregate_results():
    rs = [evaluate([0, 1], [0, 1]), evaluate([0, 0], [0, 1])]
    agg = aggregate(rs)
    assert agg["bacc"].mean == pytest.approx(0.75)
    assert agg["bacc"].n == 2


def _summary(method, f1, version=1, rho=10.0):
    return {
        "schema_version": version,
        "config": {"method": method},
        "dataset": "cora",
        "rho": rho,
        "test": {"bacc": f1, "f1": f1},
    }


def test_report_empty_is_header_only():
    assert emit_report([]).splitlines()[0].startswith("| Method")
    assert len(emit_report([]).splitlines()) == 2


def test_report_two_methods_two_rows(tmp_path):
    text = emit_report([_summary("vanilla", 0.6), _summary("unreal", 0.7), _summary("unreal", 0.8)], path=tmp_path / "r.md")
    rows = text.splitlines()[2:]
    assert len(rows) == 2
    assert rows[0].startswith("| unreal") and "75.00 ± 5.00" in rows[0]
    assert (tmp_path / "r.md").read_text().strip() == text


def test_report_json():
    data = json.loads(emit_report([_summary("vanilla", 0.6)], fmt="json"))
    assert data[0]["f1_mean"] == 0.6


def test_report_schema_mismatch_names_source():
    bad = dict(_summary("unreal", 0.1, version=2), _source="runs/x.jsonl")
    with pytest.raises(SchemaMismatch, match="runs/x.jsonl"):
        emit_report([_summary("vanilla", 0.6), bad])
