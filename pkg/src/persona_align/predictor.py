"""Test-set prediction with personas drawn from the learned loading distribution."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import ALTERNATIVES, Alternative, ChoiceRecord
from .errors import OracleError
from .loading import DEFAULT_LAMBDA, EmbeddingParams, sample_personas, similarity_and_loading
from .oracle.base import fan_out, simulate_choice_detail
from .prompts import build_simulation_prompt
from .records import read_jsonl, write_jsonl

PREDICTIONS_SCHEMA_VERSION = 1
AGGREGATIONS = ("single_draw", "majority_vote")


@dataclass(frozen=True)
class PredictionConfig:
    repeats: int = 1
    aggregation: str = "single_draw"
    seed: int = 0
    max_workers: int = 1
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass
class Prediction:
    record_id: int
    predicted: Alternative | None
    persona_ids: list[int] = field(default_factory=list)
    response_keys: list[str] = field(default_factory=list)
    error: str | None = None
    probabilities: tuple[float, float, float] | None = None

    @property
    def failed(self) -> bool:
        return self.predicted is None

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "predicted": self.predicted.label if self.predicted is not None else None,
            "persona_ids": self.persona_ids,
            "response_keys": self.response_keys,
            "error": self.error,
            "probabilities": list(self.probabilities) if self.probabilities is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        pred = Alternative.from_label(d["predicted"]) if d.get("predicted") else None
        probs = d.get("probabilities")
        return cls(int(d["record_id"]), pred, list(d.get("persona_ids", [])), list(d.get("response_keys", [])),
                   d.get("error"), tuple(probs) if probs is not None else None)  # fmt: skip


@dataclass
class PredictionSet:
    method: str
    predictions: list[Prediction]
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.predictions)

    @property
    def n_failed(self) -> int:
        return sum(p.failed for p in self.predictions)

    def by_record(self) -> dict[int, Prediction]:
        return {p.record_id: p for p in self.predictions}

    def labels(self) -> list[Alternative | None]:
        return [p.predicted for p in self.predictions]


def save_predictions(ps: PredictionSet, path):
    return write_jsonl(path, "prediction_set", PREDICTIONS_SCHEMA_VERSION, (p.to_dict() for p in ps.predictions),
                       method=ps.method, manifest=ps.manifest)  # fmt: skip


def load_predictions(path) -> PredictionSet:
    header, recs = read_jsonl(path, "prediction_set")
    return PredictionSet(header.get("method", "unknown"), [Prediction.from_dict(r) for r in recs], header.get("manifest", {}))


def majority(labels: Sequence[Alternative]) -> Alternative:
    """Most frequent label; ties resolved Train < Swissmetro < Car."""
    counts = Counter(labels)
    best = max(counts.values())
    return next(a for a in ALTERNATIVES if counts.get(a, 0) == best)


def predict(test: Sequence[ChoiceRecord], params: EmbeddingParams, basis, oracle,
            config: PredictionConfig | None = None) -> PredictionSet:  # fmt: skip
    """Predict each test record by drawing a fresh persona per repeat and querying the oracle."""
    config = config or PredictionConfig()
    if len(basis) == 0:
        raise ValueError("persona basis is empty")
    rng = np.random.default_rng([config.seed, 3])
    codes = np.array([r.demographics.codes() for r in test], dtype=np.intp).reshape(-1, 4)
    _, P = similarity_and_loading(codes, basis.codes(), params, config.lam)
    draws = [[int(sample_personas(P[i], 1, rng)[0]) for _ in range(config.repeats)] for i in range(len(test))]
    jobs = [(i, k) for i in range(len(test)) for k in draws[i]]

    def run(job):
        i, k = job
        rec, persona = test[i], basis.personas[k]
        prompt = build_simulation_prompt(rec.demographics, rec.context, persona,
                                         {"record_id": rec.record_id, "persona_id": persona.source_respondent_id})  # fmt: skip
        return simulate_choice_detail(oracle, prompt)

    results = fan_out(run, jobs, config.max_workers)
    preds = []
    R = config.repeats
    for i, rec in enumerate(test):
        chunk = results[i * R : (i + 1) * R]
        persona_ids = [basis.personas[k].source_respondent_id for k in draws[i]]
        errs = [r for r in chunk if isinstance(r, OracleError)]
        if errs:
            preds.append(Prediction(rec.record_id, None, persona_ids, [], str(errs[0])))
            continue
        labels = [r.alternative for r in chunk]
        label = labels[0] if config.aggregation == "single_draw" else majority(labels)
        preds.append(Prediction(rec.record_id, label, persona_ids, [r.key for r in chunk]))
    manifest = {
        "params": params.to_dict(),
        "basis_provenance": dict(basis.provenance),
        "basis_size": len(basis),
        "oracle": getattr(oracle, "identity", {}),
        "config": {"repeats": config.repeats, "aggregation": config.aggregation, "seed": config.seed, "lambda": config.lam},
    }
    return PredictionSet("persona_loading", preds, manifest)
