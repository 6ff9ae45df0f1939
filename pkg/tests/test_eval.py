import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_tpr_at_fpr, pairwise_auroc
from urltran.encoder import ModelConfig, init_params
from urltran.errors import InvalidArgument, ParseError
from urltran.evaluation import (
    ScoredPrediction,
    auroc,
    predict_scores,
    read_predictions,
    roc_curve,
    roc_report,
    roc_svg,
    score_dataset,
    threshold_at_fpr,
    threshold_metrics,
    tpr_at_fpr,
    write_predictions,
)
from urltran.synthetic import make_corpus
from urltran.tokenize import train_bpe

FOUR = [(1, 0.9), (1, 0.4), (0, 0.6), (0, 0.1)]


def preds_from(pairs):
    return [ScoredPrediction(f"u{i}.com", y, s) for i, (y, s) in enumerate(pairs)]


scored_sets = st.lists(
    st.tuples(st.integers(0, 1), st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1)),
    min_size=2,
    max_size=60,
).filter(lambda xs: 0 < sum(y for y, _ in xs) < len(xs))


# --------------------------------------------------------------------------
# ROC


def test_four_score_example():
    curve = roc_curve(FOUR)
    pts = {(f, t) for f, t, _ in curve.points}
    assert (0.0, 0.5) in pts and (0.5, 0.5) in pts
    assert tpr_at_fpr(curve, 0.25) == 0.5
    assert tpr_at_fpr(curve, 1.0) == 1.0
    assert auroc(curve) == pytest.approx(0.75, abs=1e-12)
    assert threshold_at_fpr(curve, 0.25) == 0.9


def test_curve_endpoints_and_first_threshold():
    curve = roc_curve(FOUR)
    assert curve.points[0][:2] == (0.0, 0.0) and math.isinf(curve.points[0][2])
    assert curve.points[-1][:2] == (1.0, 1.0)
    assert (curve.positive_count, curve.negative_count) == (2, 2)


@pytest.mark.parametrize("pairs,missing", [([(1, 0.2), (1, 0.3)], "negative"), ([(0, 0.2)], "positive")])
def test_single_class(pairs, missing):
    with pytest.raises(InvalidArgument, match=missing):
        roc_curve(pairs)


def test_all_ties_two_points():
    curve = roc_curve([(1, 0.5), (0, 0.5), (1, 0.5), (0, 0.5)])
    assert [p[:2] for p in curve.points] == [(0.0, 0.0), (1.0, 1.0)]
    assert auroc(curve) == 0.5


def test_perfect_separation():
    curve = roc_curve([(1, 0.9), (1, 0.8), (0, 0.2), (0, 0.1)])
    assert (0.0, 1.0) in [p[:2] for p in curve.points]
    assert auroc(curve) == 1.0
    assert tpr_at_fpr(curve, 0.0) == 1.0


def test_random_labels_auroc_half():
    rng = np.random.default_rng(0)
    pairs = list(zip(rng.integers(0, 2, 10_000).tolist(), rng.random(10_000).tolist()))
    assert abs(auroc(roc_curve(pairs)) - 0.5) <= 0.02


def test_target_out_of_range():
    with pytest.raises(InvalidArgument):
        tpr_at_fpr(roc_curve(FOUR), 1.5)


@settings(max_examples=200, deadline=None)
@given(pairs=scored_sets)
def test_curve_invariants(pairs):
    curve = roc_curve(pairs)
    assert (np.diff(curve.fpr) >= 0).all() and (np.diff(curve.tpr) >= 0).all()
    assert curve.points[0][:2] == (0.0, 0.0) and curve.points[-1][:2] == (1.0, 1.0)
    # one point per distinct score, plus the origin
    assert len(curve.points) == len({s for _, s in pairs}) + 1
    labels, scores = zip(*pairs)
    assert auroc(curve) == pytest.approx(pairwise_auroc(labels, scores), abs=1e-9)
    targets = [0.0, 0.01, 0.1, 0.3, 0.5, 0.9, 1.0]
    tprs = [tpr_at_fpr(curve, t) for t in targets]
    assert tprs == sorted(tprs)
    for t, got in zip(targets, tprs):
        assert got == pytest.approx(brute_tpr_at_fpr(labels, scores, t), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(pairs=scored_sets, seed=st.integers(0, 1000))
def test_monotone_transform_and_shuffle(pairs, seed):
    base = roc_curve(pairs)
    # scaling by a power of two is exact, so it stays strictly increasing in floats
    scaled = roc_curve([(y, s * 8.0) for y, s in pairs])
    np.testing.assert_array_equal(base.fpr, scaled.fpr)
    np.testing.assert_array_equal(base.tpr, scaled.tpr)
    perm = np.random.default_rng(seed).permutation(len(pairs))
    shuffled = roc_curve([pairs[i] for i in perm])
    np.testing.assert_array_equal(base.fpr, shuffled.fpr)
    np.testing.assert_array_equal(base.tpr, shuffled.tpr)
    assert auroc(base) == auroc(shuffled)


# --------------------------------------------------------------------------
# threshold metrics


def test_metrics_hand_case():
    pairs = [(1, 0.9), (1, 0.8), (0, 0.7), (1, 0.2), (0, 0.1)]
    m = threshold_metrics(pairs, 0.5)
    assert (m["tp"], m["fp"], m["fn"], m["tn"]) == (2, 1, 1, 1)
    for key in ("precision", "recall", "f1"):
        assert m[key] == pytest.approx(2 / 3)
    assert m["accuracy"] == pytest.approx(3 / 5)
    assert m["flags"] == []


def test_metrics_no_predicted_positive():
    m = threshold_metrics([(1, 0.1), (0, 0.2)], 0.5)
    assert m["precision"] == 0.0 and m["recall"] == 0.0
    assert "precision_undefined" in m["flags"]


def test_metrics_all_correct():
    m = threshold_metrics([(1, 0.9), (0, 0.1), (1, 0.5)], 0.5)
    assert all(m[k] == 1.0 for k in ("accuracy", "precision", "recall", "f1"))


def test_metrics_bad_threshold():
    with pytest.raises(InvalidArgument):
        threshold_metrics(FOUR, 1.5)


# --------------------------------------------------------------------------
# predictions, files, reports


def test_prediction_score_range():
    with pytest.raises(InvalidArgument):
        ScoredPrediction("a.com", 1, 1.5)
    with pytest.raises(InvalidArgument):
        ScoredPrediction("a.com", 1, float("nan"))


def test_predictions_round_trip(tmp_path):
    preds = preds_from([(1, 0.123456789012345), (0, 0.0), (1, 1.0), (0, 1e-17)])
    path = tmp_path / "p.tsv"
    write_predictions(preds, path)
    assert read_predictions(path) == preds


def test_predictions_parse_error(tmp_path):
    path = tmp_path / "p.tsv"
    path.write_text("a.com\t1\t0.5\nb.com\t1\tlots\n", "utf-8")
    with pytest.raises(ParseError, match="line 2"):
        read_predictions(path)


def test_report_shape():
    doc = roc_report(preds_from(FOUR), target_fprs=(0.25, 1e-4))
    m = doc["metrics"]
    assert m["auroc"] == pytest.approx(0.75)
    assert m["tpr_at_fpr"]["0.25"]["tpr"] == 0.5
    assert m["tpr_at_fpr"]["0.25"]["metrics_at_threshold"]["threshold"] == 0.9
    assert m["tpr_at_fpr"]["0.0001"]["threshold"] == 0.9
    assert m["fixed_threshold"]["threshold"] == 0.5
    assert doc["curve"][0] == [0.0, 0.0, None]


def test_svg_renders():
    svg = roc_svg({"a": roc_curve(FOUR)})
    assert svg.startswith("<svg") and "</svg>" in svg and "polyline" in svg


# --------------------------------------------------------------------------
# scoring with a model


@pytest.fixture(scope="module")
def small_model():
    ds = make_corpus(80, seed=1)
    v = train_bpe(ds.urls, 300)
    p = init_params(ModelConfig(vocab_size=len(v), max_positions=40), 3)
    return ds, v, p


def test_zero_weights_score_half(small_model):
    ds, v, p = small_model
    zero = p.copy()
    for _, t in zero.items():
        t[...] = 0
    np.testing.assert_allclose(predict_scores(zero, v, ds.urls[:10]), 0.5)


def test_batch_size_invariance(small_model):
    ds, v, p = small_model
    one = predict_scores(p, v, ds.urls, batch_size=1)
    many = predict_scores(p, v, ds.urls, batch_size=32)
    threaded = predict_scores(p, v, ds.urls, batch_size=8, workers=3)
    np.testing.assert_allclose(one, many, atol=1e-6)
    np.testing.assert_allclose(one, threaded, atol=1e-6)


def test_score_dataset_order_and_vocab_check(small_model):
    ds, v, p = small_model
    preds = score_dataset(p, v, ds)
    assert [q.url for q in preds] == ds.urls and [q.label for q in preds] == [r.label for r in ds]
    other = train_bpe(ds.urls, 290)
    with pytest.raises(InvalidArgument):
        score_dataset(p, other, ds)
