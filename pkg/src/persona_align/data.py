"""Survey-domain types, Swissmetro ingestion, filtering and dataset splits.

Raw Swissmetro codes are re-coded into named categories on the way in.  The
mapping (and the filter rule that reproduces the 1,004-respondent /
9,036-record working set) is documented on :func:`filter_records`.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, SchemaError, SizingError
from .records import read_jsonl, write_jsonl

log = logging.getLogger(__name__)

GENDERS = ("female", "male")
AGE_BANDS = ("<25", "25-39", "40-54", "55-65", ">65")
INCOME_BANDS = ("<50k", "50-100k", ">100k")
USER_GROUPS = ("train_user", "car_user")
DEMOGRAPHIC_CATEGORIES = {
    "gender": GENDERS,
    "age_band": AGE_BANDS,
    "income_band": INCOME_BANDS,
    "user_group": USER_GROUPS,
}
DEMOGRAPHIC_FIELDS = tuple(DEMOGRAPHIC_CATEGORIES)

WHO_PAYS = ("self", "half", "employer", "unknown")
LUGGAGE = ("none", "one", "several")
PURPOSES = {
    1: "commuting",
    2: "shopping",
    3: "business",
    4: "leisure",
    5: "return from work",
    6: "return from shopping",
    7: "return from business",
    8: "return from leisure",
    9: "other",
}


class Alternative(IntEnum):
    """Travel mode.  Integer values are the Swissmetro CHOICE codes."""

    TRAIN = 1
    SWISSMETRO = 2
    CAR = 3

    @property
    def label(self) -> str:
        return {1: "Train", 2: "Swissmetro", 3: "Car"}[self.value]

    @property
    def index(self) -> int:
        return self.value - 1

    @classmethod
    def from_label(cls, label: str) -> "Alternative":
        for alt in cls:
            if alt.label.lower() == label.strip().lower():
                return alt
        raise ValueError(f"unknown alternative {label!r}")


ALTERNATIVES = tuple(Alternative)


@dataclass(frozen=True)
class SocioDemographics:
    gender: str
    age_band: str
    income_band: str
    user_group: str

    def __post_init__(self):
        for name, cats in DEMOGRAPHIC_CATEGORIES.items():
            if getattr(self, name) not in cats:
                raise ValueError(f"{name}={getattr(self, name)!r} not in {cats}")

    def codes(self) -> tuple[int, int, int, int]:
        """Category index per variable, in (gender, age, income, group) order."""
        return tuple(DEMOGRAPHIC_CATEGORIES[f].index(getattr(self, f)) for f in DEMOGRAPHIC_FIELDS)

    @classmethod
    def from_codes(cls, codes: Sequence[int]) -> "SocioDemographics":
        return cls(*(DEMOGRAPHIC_CATEGORIES[f][int(c)] for f, c in zip(DEMOGRAPHIC_FIELDS, codes)))

    def one_hot(self) -> np.ndarray:
        parts = []
        for f, c in zip(DEMOGRAPHIC_FIELDS, self.codes()):
            v = np.zeros(len(DEMOGRAPHIC_CATEGORIES[f]))
            v[c] = 1.0
            parts.append(v)
        return np.concatenate(parts)

    @classmethod
    def from_one_hot(cls, vec) -> "SocioDemographics":
        vec = np.asarray(vec)
        codes, start = [], 0
        for f in DEMOGRAPHIC_FIELDS:
            n = len(DEMOGRAPHIC_CATEGORIES[f])
            block = vec[start : start + n]
            if block.sum() != 1 or not np.all((block == 0) | (block == 1)):
                raise ValueError(f"invalid one-hot block for {f}: {block}")
            codes.append(int(np.argmax(block)))
            start += n
        return cls.from_codes(codes)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in DEMOGRAPHIC_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "SocioDemographics":
        return cls(**{f: d[f] for f in DEMOGRAPHIC_FIELDS})


@dataclass(frozen=True)
class ModeAttributes:
    cost: float
    travel_time: float
    headway: float

    def __post_init__(self):
        for name in ("cost", "travel_time", "headway"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class ChoiceContext:
    purpose: int
    first_class: bool
    who_pays: str
    luggage: str
    annual_pass: bool
    train: ModeAttributes
    swissmetro: ModeAttributes
    car: ModeAttributes

    def __post_init__(self):
        if self.purpose not in PURPOSES:
            raise ValueError(f"purpose {self.purpose} outside 1-9")
        if self.who_pays not in WHO_PAYS:
            raise ValueError(f"who_pays={self.who_pays!r}")
        if self.luggage not in LUGGAGE:
            raise ValueError(f"luggage={self.luggage!r}")
        if self.car.headway != 0:
            raise ValueError("car headway must be 0")

    def attributes(self, alt: Alternative) -> ModeAttributes:
        return (self.train, self.swissmetro, self.car)[alt.index]

    def attribute_matrix(self) -> np.ndarray:
        """3x3 array, rows Train/Swissmetro/Car, columns cost/time/headway."""
        return np.array(
            [[m.cost, m.travel_time, m.headway] for m in (self.train, self.swissmetro, self.car)],
            dtype=float,
        )

    def to_dict(self) -> dict:
        d = {
            "purpose": self.purpose,
            "first_class": self.first_class,
            "who_pays": self.who_pays,
            "luggage": self.luggage,
            "annual_pass": self.annual_pass,
        }
        for name in ("train", "swissmetro", "car"):
            m = getattr(self, name)
            d[name] = {"cost": m.cost, "travel_time": m.travel_time, "headway": m.headway}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChoiceContext":
        modes = {n: ModeAttributes(**d[n]) for n in ("train", "swissmetro", "car")}
        return cls(
            purpose=int(d["purpose"]),
            first_class=bool(d["first_class"]),
            who_pays=d["who_pays"],
            luggage=d["luggage"],
            annual_pass=bool(d["annual_pass"]),
            **modes,
        )


@dataclass(frozen=True)
class ChoiceRecord:
    record_id: int
    respondent_id: int
    demographics: SocioDemographics
    context: ChoiceContext
    chosen: Alternative

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "respondent_id": self.respondent_id,
            "demographics": self.demographics.to_dict(),
            "context": self.context.to_dict(),
            "chosen": self.chosen.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChoiceRecord":
        return cls(
            record_id=int(d["record_id"]),
            respondent_id=int(d["respondent_id"]),
            demographics=SocioDemographics.from_dict(d["demographics"]),
            context=ChoiceContext.from_dict(d["context"]),
            chosen=Alternative.from_label(d["chosen"]),
        )


@dataclass(frozen=True)
class RespondentPanel:
    """One respondent with all of their choice observations, in survey order."""

    respondent_id: int
    demographics: SocioDemographics
    observations: tuple[ChoiceRecord, ...]

    def __post_init__(self):
        if not self.observations:
            raise ValueError("panel needs at least one observation")
        for rec in self.observations:
            if rec.respondent_id != self.respondent_id or rec.demographics != self.demographics:
                raise ValueError(f"record {rec.record_id} does not belong to respondent {self.respondent_id}")

    @property
    def pairs(self) -> list[tuple[ChoiceContext, Alternative]]:
        return [(r.context, r.chosen) for r in self.observations]

    def to_dict(self) -> dict:
        return {
            "respondent_id": self.respondent_id,
            "demographics": self.demographics.to_dict(),
            "observations": [
                {"record_id": r.record_id, "context": r.context.to_dict(), "chosen": r.chosen.label}
                for r in self.observations
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RespondentPanel":
        demo = SocioDemographics.from_dict(d["demographics"])
        rid = int(d["respondent_id"])
        obs = tuple(
            ChoiceRecord(
                record_id=int(o["record_id"]),
                respondent_id=rid,
                demographics=demo,
                context=ChoiceContext.from_dict(o["context"]),
                chosen=Alternative.from_label(o["chosen"]),
            )
            for o in d["observations"]
        )
        return cls(rid, demo, obs)


@dataclass
class DatasetBundle:
    detailed: list[RespondentPanel]
    general: list[ChoiceRecord]
    test: list[ChoiceRecord]
    split_seed: int
    sizes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        detailed_ids = {p.respondent_id for p in self.detailed}
        for name, recs in (("general", self.general), ("test", self.test)):
            clash = detailed_ids & {r.respondent_id for r in recs}
            if clash:
                raise ValueError(f"{name} shares respondents with detailed set: {sorted(clash)[:5]}")
        overlap = {r.record_id for r in self.general} & {r.record_id for r in self.test}
        if overlap:
            raise ValueError(f"general and test share records: {sorted(overlap)[:5]}")

    @property
    def detailed_records(self) -> list[ChoiceRecord]:
        return [r for p in self.detailed for r in p.observations]


# --- ingestion -------------------------------------------------------------

REQUIRED_COLUMNS = (
    "GROUP", "ID", "PURPOSE", "FIRST", "WHO", "LUGGAGE", "AGE", "MALE", "INCOME", "GA",
    "TRAIN_AV", "CAR_AV", "SM_AV",
    "TRAIN_TT", "TRAIN_CO", "TRAIN_HE", "SM_TT", "SM_CO", "SM_HE", "CAR_TT", "CAR_CO",
    "CHOICE",
)  # fmt: skip


def _number(text: str, line: int, column: str):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"column {column}: malformed numeric value {text!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"column {column}: non-finite value {text!r}", line)
    return int(v) if v.is_integer() else v


def parse_swissmetro(path) -> list[dict]:
    """Read a Swissmetro-format delimited file into a list of numeric row dicts.

    Tab and comma delimiters are auto-detected from the header line.  Every
    row carries ``_row`` (0-based data-row index) which becomes the record id.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise SchemaError(f"{path}: missing header row")
        delim = "\t" if header_line.count("\t") >= header_line.count(",") else ","
        header = [h.strip() for h in header_line.rstrip("\r\n").split(delim)]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
        rows = []
        reader = csv.reader(fh, delimiter=delim)
        for offset, cells in enumerate(reader):
            line = offset + 2
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(cells)}", line)
            row = {col: _number(cell.strip(), line, col) for col, cell in zip(header, cells)}
            row["_row"] = len(rows)
            rows.append(row)
    log.info("parsed %d raw rows from %s", len(rows), path)
    return rows


_AGE = {1: "<25", 2: "25-39", 3: "40-54", 4: "55-65", 5: ">65"}
_INCOME = {0: "<50k", 1: "<50k", 2: "50-100k", 3: ">100k", 4: ">100k"}
_GROUP = {2: "train_user", 3: "car_user"}
_GENDER = {0: "female", 1: "male"}
_WHO = {0: "unknown", 1: "self", 2: "employer", 3: "half"}
_LUGGAGE = {0: "none", 1: "one", 3: "several"}


def _demographics(row: dict) -> SocioDemographics | None:
    try:
        return SocioDemographics(
            gender=_GENDER[row["MALE"]],
            age_band=_AGE[row["AGE"]],
            income_band=_INCOME[row["INCOME"]],
            user_group=_GROUP[row["GROUP"]],
        )
    except KeyError:
        return None


def _context(row: dict) -> ChoiceContext | None:
    if row["PURPOSE"] not in PURPOSES or row["FIRST"] not in (0, 1) or row["GA"] not in (0, 1):
        return None
    if row["WHO"] not in _WHO or row["LUGGAGE"] not in _LUGGAGE:
        return None
    try:
        return ChoiceContext(
            purpose=int(row["PURPOSE"]),
            first_class=bool(row["FIRST"]),
            who_pays=_WHO[row["WHO"]],
            luggage=_LUGGAGE[row["LUGGAGE"]],
            annual_pass=bool(row["GA"]),
            train=ModeAttributes(row["TRAIN_CO"], row["TRAIN_TT"], row["TRAIN_HE"]),
            swissmetro=ModeAttributes(row["SM_CO"], row["SM_TT"], row["SM_HE"]),
            car=ModeAttributes(row["CAR_CO"], row["CAR_TT"], 0),
        )
    except ValueError:
        return None


def filter_records(rows: Iterable[dict]) -> list[RespondentPanel]:
    """Keep three-alternative choice situations with known information.

    Row-level rule: all three modes available, CHOICE in {1, 2, 3}, and every
    context field carries a documented code.  WHO=0 ("unknown payer") is kept
    as its own category since the payer only enters prompts.

    Respondent-level rule: a respondent whose socio-demographics are unknown
    or inconsistent on any row is dropped entirely.  INCOME 0 is re-coded to
    "<50k" and INCOME 4 to ">100k" (the "otherwise" band).

    On the public file this yields 1,004 respondents and 9,036 records.
    """
    by_resp: dict[int, list[dict]] = {}
    for row in rows:
        by_resp.setdefault(int(row["ID"]), []).append(row)

    panels = []
    for rid in sorted(by_resp):
        resp_rows = by_resp[rid]
        demos = {_demographics(r) for r in resp_rows}
        if len(demos) != 1 or None in demos:
            continue
        (demo,) = demos
        kept = []
        for r in resp_rows:
            if not (r["TRAIN_AV"] == 1 and r["CAR_AV"] == 1 and r["SM_AV"] == 1):
                continue
            if r["CHOICE"] not in (1, 2, 3):
                continue
            ctx = _context(r)
            if ctx is None:
                continue
            kept.append(ChoiceRecord(int(r["_row"]), rid, demo, ctx, Alternative(int(r["CHOICE"]))))
        if kept:
            panels.append(RespondentPanel(rid, demo, tuple(kept)))
    return panels


_INV = {
    "MALE": {v: k for k, v in _GENDER.items()},
    "AGE": {v: k for k, v in _AGE.items()},
    "INCOME": {"<50k": 1, "50-100k": 2, ">100k": 3},
    "GROUP": {v: k for k, v in _GROUP.items()},
    "WHO": {v: k for k, v in _WHO.items()},
    "LUGGAGE": {v: k for k, v in _LUGGAGE.items()},
}


def records_to_rows(records: Iterable[ChoiceRecord]) -> list[dict]:
    """Re-encode records as raw Swissmetro rows (inverse of the filter's re-coding)."""
    rows = []
    for r in records:
        d, c = r.demographics, r.context
        rows.append({
            "_row": r.record_id,
            "ID": r.respondent_id,
            "GROUP": _INV["GROUP"][d.user_group],
            "MALE": _INV["MALE"][d.gender],
            "AGE": _INV["AGE"][d.age_band],
            "INCOME": _INV["INCOME"][d.income_band],
            "PURPOSE": c.purpose,
            "FIRST": int(c.first_class),
            "WHO": _INV["WHO"][c.who_pays],
            "LUGGAGE": _INV["LUGGAGE"][c.luggage],
            "GA": int(c.annual_pass),
            "TRAIN_AV": 1, "CAR_AV": 1, "SM_AV": 1,
            "TRAIN_TT": c.train.travel_time, "TRAIN_CO": c.train.cost, "TRAIN_HE": c.train.headway,
            "SM_TT": c.swissmetro.travel_time, "SM_CO": c.swissmetro.cost, "SM_HE": c.swissmetro.headway,
            "CAR_TT": c.car.travel_time, "CAR_CO": c.car.cost,
            "CHOICE": int(r.chosen),
        })  # fmt: skip
    return rows


# --- splitting -------------------------------------------------------------

DEFAULT_SIZES = {"n_detailed_respondents": 250, "n_general_records": 200, "n_test_records": 400}


def split_datasets(panels: Sequence[RespondentPanel], seed: int, sizes: dict | None = None) -> DatasetBundle:
    """Draw the detailed panels, then general and test records from the rest.

    Panels are canonicalised by respondent id before sampling, so the result
    depends only on the panel contents, the seed and the sizes.
    """
    sizes = {**DEFAULT_SIZES, **(sizes or {})}
    n_h, n_l, n_t = (int(sizes[k]) for k in DEFAULT_SIZES)
    if min(n_h, n_l, n_t) < 0:
        raise SizingError(f"sizes must be non-negative: {sizes}")
    panels = sorted(panels, key=lambda p: p.respondent_id)
    if n_h > len(panels):
        raise SizingError(f"requested {n_h} detailed respondents but only {len(panels)} available (short by {n_h - len(panels)})")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.permutation(len(panels))[:n_h])
    chosen_set = set(chosen.tolist())
    detailed = [panels[i] for i in chosen]
    remainder = [r for i, p in enumerate(panels) if i not in chosen_set for r in p.observations]
    need = n_l + n_t
    if need > len(remainder):
        raise SizingError(
            f"requested {n_l} general + {n_t} test records but only {len(remainder)} remain (short by {need - len(remainder)})"
        )
    order = rng.permutation(len(remainder))
    general = sorted((remainder[i] for i in order[:n_l]), key=lambda r: r.record_id)
    test = sorted((remainder[i] for i in order[n_l:need]), key=lambda r: r.record_id)
    return DatasetBundle(detailed, general, test, split_seed=int(seed), sizes=dict(sizes))


# --- summaries -------------------------------------------------------------


def _distribution(records: Sequence[ChoiceRecord]) -> dict:
    n = len(records)
    out = {}
    for f, cats in DEMOGRAPHIC_CATEGORIES.items():
        counts = Counter(getattr(r.demographics, f) for r in records)
        out[f] = {c: 100.0 * counts[c] / n if n else 0.0 for c in cats}
    counts = Counter(r.chosen for r in records)
    out["choice"] = {a.label: 100.0 * counts[a] / n if n else 0.0 for a in ALTERNATIVES}
    return out


def summarize_dataset(bundle: DatasetBundle) -> dict:
    """Percentage breakdown of each demographic variable and of choices, per dataset."""
    return {
        "detailed": _distribution(bundle.detailed_records),
        "general": _distribution(bundle.general),
        "test": _distribution(bundle.test),
    }


def render_summary(summary: dict) -> str:
    names = list(summary)
    lines = [f"{'variable':<12} {'value':<12} " + " ".join(f"{n:>9}" for n in names)]
    first = summary[names[0]]
    for var, cats in first.items():
        for i, cat in enumerate(cats):
            label = var if i == 0 else ""
            vals = " ".join(f"{summary[n][var][cat]:8.1f}%" for n in names)
            lines.append(f"{label:<12} {cat:<12} {vals}")
    return "\n".join(lines)


# --- bundle persistence ----------------------------------------------------

BUNDLE_SCHEMA_VERSION = 1


def save_bundle(bundle: DatasetBundle, out_dir) -> dict:
    out_dir = Path(out_dir)
    paths = {
        "detailed": write_jsonl(out_dir / "detailed.jsonl", "respondent_panel", BUNDLE_SCHEMA_VERSION,
                                (p.to_dict() for p in bundle.detailed)),
        "general": write_jsonl(out_dir / "general.jsonl", "choice_record", BUNDLE_SCHEMA_VERSION,
                               (r.to_dict() for r in bundle.general)),
        "test": write_jsonl(out_dir / "test.jsonl", "choice_record", BUNDLE_SCHEMA_VERSION,
                            (r.to_dict() for r in bundle.test)),
    }  # fmt: skip
    return paths


def load_bundle(in_dir, split_seed: int | None = None) -> DatasetBundle:
    in_dir = Path(in_dir)
    _, det = read_jsonl(in_dir / "detailed.jsonl", "respondent_panel")
    _, gen = read_jsonl(in_dir / "general.jsonl", "choice_record")
    _, tst = read_jsonl(in_dir / "test.jsonl", "choice_record")
    seed = split_seed
    sizes = {}
    split_manifest = in_dir / "split.json"
    if split_manifest.exists():
        import json

        meta = json.loads(split_manifest.read_text())
        seed = meta.get("seed", seed)
        sizes = meta.get("sizes", {})
    return DatasetBundle(
        [RespondentPanel.from_dict(p) for p in det],
        [ChoiceRecord.from_dict(r) for r in gen],
        [ChoiceRecord.from_dict(r) for r in tst],
        split_seed=-1 if seed is None else int(seed),
        sizes=sizes,
    )


def save_records(records: Iterable[ChoiceRecord], path) -> Path:
    return write_jsonl(path, "choice_record", BUNDLE_SCHEMA_VERSION, (r.to_dict() for r in records))


def load_records(path) -> list[ChoiceRecord]:
    _, recs = read_jsonl(path, "choice_record")
    return [ChoiceRecord.from_dict(r) for r in recs]
