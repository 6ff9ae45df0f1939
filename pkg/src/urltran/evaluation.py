"""Scoring and ROC-based evaluation.

The ROC curve has one point per distinct score (ties collapse), so the
trapezoidal AUROC equals the Mann-Whitney statistic with ties counted as
one half.  TPR at a target FPR uses the best realizable operating point at
or below that FPR (step rule, no interpolation).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Dataset
from .encoder import ModelParams, class_probabilities, forward
from .errors import InvalidArgument, ParseError
from .tokenize import Vocabulary, encode


@dataclass(frozen=True)
class ScoredPrediction:
    url: str
    label: int
    score: float

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise InvalidArgument(f"score must be finite and in [0, 1], got {self.score!r}")
        if self.label not in (0, 1):
            raise InvalidArgument(f"label must be 0 or 1, got {self.label!r}")


def predict_scores(p: ModelParams, v: Vocabulary, urls: Sequence[str], batch_size: int = 32, max_len: int | None = None, workers: int = 1) -> np.ndarray:
    """Phish-class probability for each URL (eval mode, input order)."""
    if len(v) != p.config.vocab_size:
        raise InvalidArgument(f"vocabulary size {len(v)} != model vocab_size {p.config.vocab_size}")
    if batch_size <= 0:
        raise InvalidArgument("batch_size must be positive")
    max_len = max_len or p.config.max_positions
    chunks = [urls[i : i + batch_size] for i in range(0, len(urls), batch_size)]

    def run(chunk):
        batch = [encode(v, u, max_len) for u in chunk]
        return class_probabilities(forward(p, batch, mode="eval", heads=("cls",)))[:, 1]

    if not chunks:
        return np.zeros(0)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts)


def score_dataset(p: ModelParams, v: Vocabulary, ds: Dataset, batch_size: int = 32, max_len: int | None = None, workers: int = 1) -> list[ScoredPrediction]:
    scores = predict_scores(p, v, ds.urls, batch_size, max_len, workers)
    return [ScoredPrediction(r.url, r.label, float(s)) for r, s in zip(ds.records, scores)]


def _labels_scores(preds) -> tuple[np.ndarray, np.ndarray]:
    preds = list(preds)
    if preds and isinstance(preds[0], ScoredPrediction):
        labels = np.array([q.label for q in preds], dtype=np.int64)
        scores = np.array([q.score for q in preds], dtype=np.float64)
    else:
        labels = np.array([int(q[0]) for q in preds], dtype=np.int64)
        scores = np.array([float(q[1]) for q in preds], dtype=np.float64)
    return labels, scores


# --------------------------------------------------------------------------
# ROC


@dataclass
class RocCurve:
    """ROC points in ascending FPR order, from (0, 0) to (1, 1).

    ``tp``/``fp`` are the integer counts behind each point; the threshold of
    the first point is +inf (nothing predicted phish).
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    positive_count: int
    negative_count: int

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc_curve(preds) -> RocCurve:
    """Build the ROC curve of ``preds`` (ScoredPredictions or (label, score) pairs).

    Raises:
        InvalidArgument: only one class is present.
    """
    labels, scores = _labels_scores(preds)
    pos = int(labels.sum())
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        missing = "positive (phish)" if pos == 0 else "negative (benign)"
        raise InvalidArgument(f"roc_curve needs both classes; no {missing} examples")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of every tie group
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.r_[0, tp[last]]
    fp = np.r_[0, fp[last]]
    thresholds = np.r_[np.inf, s[last]]
    return RocCurve(fp / neg, tp / pos, thresholds, tp, fp, pos, neg)


def _best_index_at(curve: RocCurve, target_fpr: float) -> int:
    allowed = curve.fp <= target_fpr * curve.negative_count + 1e-9
    idx = np.nonzero(allowed)[0]
    return int(idx[np.argmax(curve.tp[idx])])


def tpr_at_fpr(curve: RocCurve, target_fpr: float) -> float:
    """Largest TPR among points whose FPR does not exceed ``target_fpr``."""
    if not 0.0 <= target_fpr <= 1.0:
        raise InvalidArgument(f"target_fpr must lie in [0, 1], got {target_fpr}")
    return float(curve.tpr[_best_index_at(curve, target_fpr)])


def threshold_at_fpr(curve: RocCurve, target_fpr: float) -> float:
    """Score threshold of the operating point used by :func:`tpr_at_fpr`."""
    return float(curve.thresholds[_best_index_at(curve, target_fpr)])


def auroc(curve: RocCurve) -> float:
    dfp = np.diff(curve.fp)
    tp_sum = curve.tp[1:] + curve.tp[:-1]
    area2 = float(np.sum(dfp * tp_sum))  # twice the count-scaled area
    return area2 / (2.0 * curve.positive_count * curve.negative_count)


def threshold_metrics(preds, threshold: float) -> dict:
    """Confusion counts and phish-class accuracy/precision/recall/F1.

    Predicts phish iff ``score >= threshold``.  Undefined ratios are
    reported as 0.0 and named in ``flags``.
    """
    if not (0.0 <= threshold <= 1.0 or threshold == math.inf):
        raise InvalidArgument(f"threshold must lie in [0, 1], got {threshold}")
    labels, scores = _labels_scores(preds)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    tn = int(np.sum(~pred & (labels == 0)))
    flags = []

    def ratio(num, den, name):
        if den == 0:
            flags.append(f"{name}_undefined")
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    accuracy = ratio(tp + tn, len(labels), "accuracy")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    return {
        "threshold": threshold,
        "accuracy": accuracy,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "tp": tp,
        "fp": fp,
        "tn": tn,
        "fn": fn,
        "flags": flags,
    }


# --------------------------------------------------------------------------
# Files


def format_predictions(preds: Iterable[ScoredPrediction]) -> str:
    return "".join(f"{q.url}\t{q.label}\t{q.score!r}\n" for q in preds)


def write_predictions(preds: Iterable[ScoredPrediction], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_predictions(preds))


def read_predictions(path: str | os.PathLike) -> list[ScoredPrediction]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for i, line in enumerate(lines, start=1):
        parts = line.split("\t")
        if len(parts) != 3 or parts[1] not in ("0", "1"):
            raise ParseError("expected url<TAB>label<TAB>score", i)
        try:
            out.append(ScoredPrediction(parts[0], int(parts[1]), float(parts[2])))
        except (ValueError, InvalidArgument) as exc:
            raise ParseError(str(exc), i) from None
    return out


def roc_report(preds: Sequence[ScoredPrediction], target_fprs: Sequence[float] = (1e-4, 1e-3, 1e-2), threshold: float = 0.5) -> dict:
    """Metrics block plus curve points, ready for JSON."""
    curve = roc_curve(preds)
    at_fpr = {}
    for t in target_fprs:
        thr = threshold_at_fpr(curve, t)
        at_fpr[repr(float(t))] = {
            "tpr": tpr_at_fpr(curve, t),
            "threshold": thr if math.isfinite(thr) else None,
            "metrics_at_threshold": threshold_metrics(preds, thr) if math.isfinite(thr) else None,
        }
    return {
        "metrics": {
            "auroc": auroc(curve),
            "positives": curve.positive_count,
            "negatives": curve.negative_count,
            "tpr_at_fpr": at_fpr,
            "fixed_threshold": threshold_metrics(preds, threshold),
        },
        "curve": [[f, t, th if math.isfinite(th) else None] for f, t, th in curve.points],
    }


def write_json(doc, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def roc_svg(curves: dict[str, RocCurve], min_fpr: float = 1e-4, width: int = 480, height: int = 360) -> str:
    """Low-FPR ROC plot on a log-x axis as a standalone SVG document."""
    left, right, top, bottom = 56, 16, 16, 44
    pw, ph = width - left - right, height - top - bottom
    lo = math.log10(min_fpr)

    def x(f):
        return left + pw * (math.log10(max(f, min_fpr)) - lo) / -lo

    def y(t):
        return top + ph * (1.0 - t)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for e in range(int(lo), 1):
        px = x(10.0**e)
        out.append(f'<line x1="{px:.2f}" y1="{top}" x2="{px:.2f}" y2="{top + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{px:.2f}" y="{top + ph + 14}" text-anchor="middle">1e{e}</text>')
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<text x="{left - 6}" y="{y(t) + 4:.2f}" text-anchor="end">{t:.2f}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 6}" text-anchor="middle">false positive rate (log)</text>')
    out.append(f'<text x="12" y="{top + ph / 2}" transform="rotate(-90 12 {top + ph / 2})" text-anchor="middle">true positive rate</text>')
    for k, (name, curve) in enumerate(curves.items()):
        pts = []
        prev_t = 0.0
        for f, t in zip(curve.fpr.tolist(), curve.tpr.tolist()):
            pts.append(f"{x(f):.2f},{y(prev_t):.2f}")
            pts.append(f"{x(f):.2f},{y(t):.2f}")
            prev_t = t
        color = colors[k % len(colors)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        out.append(f'<text x="{left + 8}" y="{top + 14 + 14 * k}" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
