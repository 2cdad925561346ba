"""Persona inference from detailed panels and persistence of the persona basis."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import RespondentPanel, SocioDemographics
from .errors import OracleError, PersonaBatchError, PersonaFormatError
from .factors import FACTOR_LABELS, FACTORS
from .oracle.base import fan_out, infer_persona_text
from .prompts import PROMPT_VERSIONS, build_inference_prompt
from .records import read_jsonl, write_jsonl

log = logging.getLogger(__name__)

BASIS_SCHEMA_VERSION = 1
MAX_FAILURE_RATE = 0.10


@dataclass(frozen=True)
class Persona:
    source_respondent_id: int
    ratings: Mapping[str, int]
    summary_text: str | None = None

    def __post_init__(self):
        bad = [f for f in FACTORS if not isinstance(self.ratings.get(f), int) or not 1 <= self.ratings[f] <= 10]
        extra = set(self.ratings) - set(FACTORS)
        if bad or extra:
            raise PersonaFormatError(f"invalid persona ratings for {sorted(bad) + sorted(extra)}", bad or extra)

    def vector(self) -> tuple[int, ...]:
        return tuple(self.ratings[f] for f in FACTORS)

    def to_dict(self) -> dict:
        return {
            "source_respondent_id": self.source_respondent_id,
            "ratings": {f: self.ratings[f] for f in FACTORS},
            "summary_text": self.summary_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Persona":
        return cls(int(d["source_respondent_id"]), {f: int(d["ratings"][f]) for f in FACTORS}, d.get("summary_text"))


@dataclass
class PersonaBasis:
    personas: list[Persona]
    demographics_index: dict[int, SocioDemographics]
    provenance: dict = field(default_factory=dict)
    failures: list[int] = field(default_factory=list)

    def __post_init__(self):
        ids = [p.source_respondent_id for p in self.personas]
        if len(set(ids)) != len(ids):
            raise ValueError("persona basis has duplicate respondent ids")
        missing = [i for i in ids if i not in self.demographics_index]
        if missing:
            raise ValueError(f"personas without demographics: {missing[:5]}")

    def __len__(self) -> int:
        return len(self.personas)

    def demographics(self, k: int) -> SocioDemographics:
        return self.demographics_index[self.personas[k].source_respondent_id]

    def codes(self) -> np.ndarray:
        """(K, 4) category codes of each persona's source respondent."""
        return np.array([self.demographics(k).codes() for k in range(len(self))], dtype=np.intp).reshape(-1, 4)

    def subset(self, indices: Sequence[int]) -> "PersonaBasis":
        personas = [self.personas[i] for i in indices]
        index = {p.source_respondent_id: self.demographics_index[p.source_respondent_id] for p in personas}
        return PersonaBasis(personas, index, dict(self.provenance))


_LINE = re.compile(
    r"^[\s\-\*•#]*(?P<label>" + "|".join(re.escape(FACTOR_LABELS[f]) for f in FACTORS) + r")\**\s*[:=\-]\s*\**\s*(?P<value>-?\d+)",
    re.IGNORECASE | re.MULTILINE,
)
_SUMMARY = re.compile(r"^\s*summary\s*:\s*(?P<text>.+)$", re.IGNORECASE | re.MULTILINE)
_BY_LABEL = {FACTOR_LABELS[f]: f for f in FACTORS}


def parse_persona(text: str, respondent_id: int) -> Persona:
    """Extract the six labelled 1-10 ratings (and an optional summary line).

    A factor repeated with the same value is accepted; conflicting values,
    missing factors and out-of-range ratings are errors.
    """
    if not text or not text.strip():
        raise PersonaFormatError("empty persona text", FACTORS)
    found: dict[str, set[int]] = {}
    for m in _LINE.finditer(text):
        factor = _BY_LABEL[" ".join(m.group("label").lower().split())]
        found.setdefault(factor, set()).add(int(m.group("value")))
    problems = []
    for f in FACTORS:
        vals = found.get(f)
        if not vals:
            problems.append((f, "missing"))
        elif len(vals) > 1:
            problems.append((f, f"conflicting values {sorted(vals)}"))
        elif not 1 <= next(iter(vals)) <= 10:
            problems.append((f, f"rating {next(iter(vals))} outside 1-10"))
    if problems:
        detail = "; ".join(f"{FACTOR_LABELS[f]}: {why}" for f, why in problems)
        raise PersonaFormatError(f"respondent {respondent_id}: {detail}", [f for f, _ in problems])
    summary = _SUMMARY.search(text)
    return Persona(
        respondent_id,
        {f: next(iter(found[f])) for f in FACTORS},
        summary.group("text").strip() if summary else None,
    )


CORRECTIVE_PERSONA_SUFFIX = (
    "\n\nYour previous reply could not be read. Reply with exactly six lines of the form "
    "'<factor>: <integer from 1 to 10>' for travel time, travel cost, flexibility, travel habit, "
    "comfort and trip purpose, then one 'Summary:' line."
)


def infer_one(panel: RespondentPanel, expert) -> Persona:
    prompt = build_inference_prompt(panel)
    text = infer_persona_text(expert, prompt)
    try:
        return parse_persona(text, panel.respondent_id)
    except PersonaFormatError as first:
        log.info("retrying persona inference for %s: %s", panel.respondent_id, first)
        text = infer_persona_text(expert, prompt.with_suffix(CORRECTIVE_PERSONA_SUFFIX))
        return parse_persona(text, panel.respondent_id)


def infer_personas(detailed: Sequence[RespondentPanel], expert_oracle, max_workers: int = 1,
                   date: str | None = None) -> PersonaBasis:  # fmt: skip
    """Infer one persona per panel; failures are reported, not fatal, up to 10%."""
    if not detailed:
        raise ValueError("infer_personas needs at least one panel")
    panels = sorted(detailed, key=lambda p: p.respondent_id)
    results = fan_out(lambda p: infer_one(p, expert_oracle), panels, max_workers)
    personas, failures = [], []
    for panel, res in zip(panels, results):
        if isinstance(res, OracleError):
            log.warning("persona inference failed for respondent %s: %s", panel.respondent_id, res)
            failures.append(panel.respondent_id)
        else:
            personas.append(res)
    if len(failures) > MAX_FAILURE_RATE * len(panels):
        raise PersonaBatchError(
            f"{len(failures)} of {len(panels)} persona inferences failed; revise the expert prompt",
            failures,
        )
    provenance = {
        "expert": expert_oracle.identity.get("model_name"),
        "prompt_version": PROMPT_VERSIONS["persona_inference"],
        "date": date,
    }
    index = {p.respondent_id: p.demographics for p in panels if p.respondent_id not in failures}
    return PersonaBasis(personas, index, provenance, failures)


def save_basis(basis: PersonaBasis, path):
    records = [
        {**p.to_dict(), "demographics": basis.demographics_index[p.source_respondent_id].to_dict()}
        for p in basis.personas
    ]
    return write_jsonl(path, "persona_basis", BASIS_SCHEMA_VERSION, records,
                       provenance=basis.provenance, failures=list(basis.failures))  # fmt: skip


def load_basis(path) -> PersonaBasis:
    header, recs = read_jsonl(path, "persona_basis")
    personas = [Persona.from_dict(r) for r in recs]
    index = {int(r["source_respondent_id"]): SocioDemographics.from_dict(r["demographics"]) for r in recs}
    return PersonaBasis(personas, index, header.get("provenance", {}), list(header.get("failures", [])))
