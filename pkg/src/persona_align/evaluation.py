"""Aggregate-share divergence, F1 scores, confusion matrices and comparison reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import ALTERNATIVES, Alternative, ChoiceRecord
from .predictor import PredictionSet

DEFAULT_EPSILON = 1e-6
F1_WEIGHTINGS = ("macro", "weighted_by_predicted", "weighted_by_true")


@dataclass(frozen=True)
class ShareVector:
    train: float
    swissmetro: float
    car: float

    def __post_init__(self):
        v = self.as_array()
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a share vector: {v.tolist()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.train, self.swissmetro, self.car], dtype=float)

    def to_dict(self) -> dict:
        return {"Train": self.train, "Swissmetro": self.swissmetro, "Car": self.car}

    @classmethod
    def from_array(cls, v) -> "ShareVector":
        return cls(*(float(x) for x in v))


def _labels(items) -> list[Alternative]:
    out = []
    for it in items:
        if isinstance(it, ChoiceRecord):
            out.append(it.chosen)
        elif isinstance(it, str):
            out.append(Alternative.from_label(it))
        else:
            out.append(Alternative(int(it)))
    return out


def shares(labels) -> ShareVector:
    """Empirical frequency of each alternative."""
    labs = _labels(labels)
    if not labs:
        raise ValueError("shares of an empty sequence")
    counts = np.array([sum(1 for a in labs if a == alt) for alt in ALTERNATIVES], dtype=float)
    return ShareVector.from_array(counts / counts.sum())


def _as_probs(v) -> np.ndarray:
    return v.as_array() if isinstance(v, ShareVector) else np.asarray(v, dtype=float)


def js_divergence(p, q, epsilon: float = DEFAULT_EPSILON) -> float:
    """0.5 * (KL(p||q) + KL(q||p)) in nats, after adding ``epsilon`` to every bin and renormalizing.

    Evaluated as 0.5 * sum (p - q) log(p / q), the same quantity written so
    that every term is non-negative under rounding.
    """
    p, q = _as_probs(p), _as_probs(q)
    if np.array_equal(p, q):
        return 0.0
    p = (p + epsilon) / (p + epsilon).sum()
    q = (q + epsilon) / (q + epsilon).sum()
    return 0.5 * float(np.sum((p - q) * np.log(p / q)))


def confusion_matrix(truths, predictions) -> np.ndarray:
    """3x3 counts, rows = truth, columns = prediction, order Train, Swissmetro, Car."""
    t, p = _labels(truths), _labels(predictions)
    if len(t) != len(p):
        raise ValueError(f"length mismatch: {len(t)} truths vs {len(p)} predictions")
    m = np.zeros((3, 3), dtype=np.int64)
    for a, b in zip(t, p):
        m[a.index, b.index] += 1
    return m


@dataclass(frozen=True)
class ClassScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    n_true: np.ndarray
    n_predicted: np.ndarray


def class_scores(cm: np.ndarray) -> ClassScores:
    tp = np.diag(cm).astype(float)
    n_pred = cm.sum(axis=0).astype(float)
    n_true = cm.sum(axis=1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(n_pred > 0, tp / n_pred, 0.0)
        rec = np.where(n_true > 0, tp / n_true, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    return ClassScores(prec, rec, f1, n_true, n_pred)


def f1_scores(truths, predictions, weighting: str = "weighted_by_predicted") -> float:
    """Per-class F1 combined by ``weighting``.

    ``weighted_by_predicted`` weighs each class by how many records are
    predicted to choose it; ``weighted_by_true`` by its true support.
    """
    if weighting not in F1_WEIGHTINGS:
        raise ValueError(f"weighting must be one of {F1_WEIGHTINGS}")
    cm = confusion_matrix(truths, predictions)
    s = class_scores(cm)
    n = cm.sum()
    if n == 0:
        return 0.0
    if weighting == "macro":
        return float(s.f1.mean())
    w = s.n_predicted if weighting == "weighted_by_predicted" else s.n_true
    return float(np.sum(w * s.f1) / n)


@dataclass
class MetricsReport:
    method: str
    predicted_shares: ShareVector
    true_shares: ShareVector
    divergence: float
    macro_f1: float
    weighted_f1: float
    weighted_f1_by_true: float
    confusion: np.ndarray
    n_evaluated: int
    n_failed: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "predicted_shares": self.predicted_shares.to_dict(),
            "true_shares": self.true_shares.to_dict(),
            "js_divergence": self.divergence,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "weighted_f1_by_true": self.weighted_f1_by_true,
            "confusion_matrix": self.confusion.tolist(),
            "n_evaluated": self.n_evaluated,
            "n_failed": self.n_failed,
        }


def evaluate(predictions: PredictionSet, truths: Sequence[ChoiceRecord], epsilon: float = DEFAULT_EPSILON) -> MetricsReport:
    """Score a prediction set; failed predictions are dropped and counted."""
    by_id = predictions.by_record()
    truth_ids = [r.record_id for r in truths]
    if set(by_id) != set(truth_ids) or len(by_id) != len(truth_ids):
        raise ValueError("prediction set and truth records cover different record ids")
    pairs = [(r.chosen, by_id[r.record_id].predicted) for r in truths if not by_id[r.record_id].failed]
    if not pairs:
        raise ValueError("no successful predictions to evaluate")
    t = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    ps, ts = shares(p), shares(t)
    return MetricsReport(
        method=predictions.method,
        predicted_shares=ps,
        true_shares=ts,
        divergence=js_divergence(ps, ts, epsilon),
        macro_f1=f1_scores(t, p, "macro"),
        weighted_f1=f1_scores(t, p, "weighted_by_predicted"),
        weighted_f1_by_true=f1_scores(t, p, "weighted_by_true"),
        confusion=confusion_matrix(t, p),
        n_evaluated=len(pairs),
        n_failed=len(truths) - len(pairs),
    )


@dataclass
class ComparisonReport:
    reports: list[MetricsReport]
    true_shares: ShareVector
    table: str = field(default="", repr=False)

    def to_dict(self) -> dict:
        return {
            "ground_truth": self.true_shares.to_dict(),
            "methods": [r.to_dict() for r in self.reports],
        }

    def plot_data(self) -> dict:
        return {
            "alternatives": [a.label for a in ALTERNATIVES],
            "shares": {"ground_truth": self.true_shares.as_array().tolist(),
                       **{r.method: r.predicted_shares.as_array().tolist() for r in self.reports}},
            "confusion_matrices": {r.method: r.confusion.tolist() for r in self.reports},
        }  # fmt: skip


def _pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def render_table(reports: Sequence[MetricsReport], true_shares: ShareVector) -> str:
    header = f"{'method':<18} {'Train':>7} {'Swiss.':>7} {'Car':>7} {'JSD':>8} {'macroF1':>8} {'wF1':>8}"
    lines = [header, "-" * len(header)]
    ts = true_shares.as_array()
    lines.append(f"{'ground truth':<18} {_pct(ts[0]):>7} {_pct(ts[1]):>7} {_pct(ts[2]):>7} {'':>8} {'':>8} {'':>8}")
    for r in reports:
        s = r.predicted_shares.as_array()
        lines.append(
            f"{r.method:<18} {_pct(s[0]):>7} {_pct(s[1]):>7} {_pct(s[2]):>7} "
            f"{r.divergence:8.4f} {r.macro_f1:8.3f} {r.weighted_f1:8.3f}"
        )
    return "\n".join(lines)


def comparison_report(named: Mapping[str, PredictionSet] | Sequence[PredictionSet], truths: Sequence[ChoiceRecord],
                      epsilon: float = DEFAULT_EPSILON) -> ComparisonReport:  # fmt: skip
    """One row per method in input order, plus the ground-truth shares."""
    items = list(named.items()) if isinstance(named, Mapping) else [(ps.method, ps) for ps in named]
    reports = []
    for name, ps in items:
        rep = evaluate(ps, truths, epsilon)
        rep.method = name
        reports.append(rep)
    ts = shares(truths)
    return ComparisonReport(reports, ts, render_table(reports, ts))


def write_report(report: ComparisonReport, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "table": out / "report.txt", "plot_data": out / "plot_data.json"}
    paths["json"].write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    paths["table"].write_text(report.table + "\n")
    paths["plot_data"].write_text(json.dumps(report.plot_data(), sort_keys=True, indent=2) + "\n")
    return paths


def parse_table(text: str) -> list[dict]:
    """Read the rendered table back into per-method rows (used to cross-check the two outputs)."""
    rows = []
    for line in text.splitlines()[3:]:
        name, rest = line[:18].strip(), line[18:].split()
        rows.append({
            "method": name,
            "shares": [float(x.rstrip("%")) / 100 for x in rest[:3]],
            "js_divergence": float(rest[3]),
            "macro_f1": float(rest[4]),
            "weighted_f1": float(rest[5]),
        })
    return rows

