from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from persona_align.data import (
    AGE_BANDS,
    DEMOGRAPHIC_FIELDS,
    GENDERS,
    INCOME_BANDS,
    REQUIRED_COLUMNS,
    USER_GROUPS,
    Alternative,
    SocioDemographics,
    filter_records,
    load_bundle,
    parse_swissmetro,
    records_to_rows,
    render_summary,
    save_bundle,
    split_datasets,
    summarize_dataset,
)
from persona_align.errors import ParseError, SchemaError, SizingError
from persona_align.synth import PopulationSpec, generate_population

demographics = st.builds(
    SocioDemographics,
    st.sampled_from(GENDERS),
    st.sampled_from(AGE_BANDS),
    st.sampled_from(INCOME_BANDS),
    st.sampled_from(USER_GROUPS),
)


def test_public_file_counts(panels):
    assert len(panels) == 1004
    assert sum(len(p.observations) for p in panels) == 9036


def test_split_sizes(bundle):
    assert len(bundle.detailed) == 250
    assert len(bundle.detailed_records) == 2250
    assert len(bundle.general) == 200
    assert len(bundle.test) == 400


def test_split_is_disjoint(bundle):
    detailed = {p.respondent_id for p in bundle.detailed}
    assert not detailed & {r.respondent_id for r in bundle.general}
    assert not detailed & {r.respondent_id for r in bundle.test}
    assert not {r.record_id for r in bundle.general} & {r.record_id for r in bundle.test}


def test_split_is_deterministic_and_order_free(panels):
    a = split_datasets(panels, 7)
    b = split_datasets(list(reversed(panels)), 7)
    assert [p.respondent_id for p in a.detailed] == [p.respondent_id for p in b.detailed]
    assert [r.record_id for r in a.general] == [r.record_id for r in b.general]
    c = split_datasets(panels, 8)
    assert [r.record_id for r in a.general] != [r.record_id for r in c.general]


def test_oversized_split_names_shortfall(panels):
    with pytest.raises(SizingError, match="short by 96"):
        split_datasets(panels, 0, {"n_detailed_respondents": 1100})


def test_filter_keeps_only_three_mode_known_choices(raw_rows, panels):
    kept = {r.record_id for p in panels for r in p.observations}
    for row in raw_rows:
        if row["_row"] in kept:
            assert row["TRAIN_AV"] == row["CAR_AV"] == row["SM_AV"] == 1
            assert row["CHOICE"] in (1, 2, 3)


def test_filter_is_idempotent(panels):
    rows = records_to_rows(r for p in panels for r in p.observations)
    again = filter_records(rows)
    assert [p.to_dict() for p in again] == [p.to_dict() for p in panels]


def _write(tmp_path, header, rows):
    path = tmp_path / "x.dat"
    path.write_text("\t".join(header) + "\n" + "".join("\t".join(map(str, r)) + "\n" for r in rows))
    return path


def _good_row():
    values = {c: 1 for c in REQUIRED_COLUMNS}
    values.update(GROUP=2, AGE=2, INCOME=2, WHO=1, LUGGAGE=0, GA=0, FIRST=0, PURPOSE=1,
                  TRAIN_TT=100, TRAIN_CO=50, TRAIN_HE=30, SM_TT=60, SM_CO=60, SM_HE=20, CAR_TT=90, CAR_CO=40)
    return values


def test_malformed_value_reports_line(tmp_path):
    row = _good_row()
    bad = dict(row, TRAIN_TT="abc")
    path = _write(tmp_path, REQUIRED_COLUMNS, [[row[c] for c in REQUIRED_COLUMNS], [bad[c] for c in REQUIRED_COLUMNS]])
    with pytest.raises(ParseError) as exc:
        parse_swissmetro(path)
    assert exc.value.line == 3


def test_missing_choice_column_is_schema_error(tmp_path):
    header = [c for c in REQUIRED_COLUMNS if c != "CHOICE"]
    path = _write(tmp_path, header, [])
    with pytest.raises(SchemaError, match="CHOICE"):
        parse_swissmetro(path)


def test_header_only_file_gives_no_records(tmp_path):
    path = _write(tmp_path, REQUIRED_COLUMNS, [])
    assert parse_swissmetro(path) == []
    assert filter_records([]) == []


def test_unavailable_mode_row_dropped():
    row = dict(_good_row(), _row=0, CAR_AV=0)
    assert filter_records([row]) == []
    ok = dict(_good_row(), _row=1)
    panels = filter_records([ok])
    assert len(panels) == 1 and panels[0].observations[0].chosen == Alternative.TRAIN


def test_inconsistent_demographics_drop_respondent():
    a = dict(_good_row(), _row=0)
    b = dict(_good_row(), _row=1, AGE=3)
    assert filter_records([a, b]) == []


def test_bundle_round_trip_is_byte_identical(tmp_path, bundle):
    save_bundle(bundle, tmp_path / "a")
    loaded = load_bundle(tmp_path / "a")
    save_bundle(loaded, tmp_path / "b")
    for name in ("detailed", "general", "test"):
        assert (tmp_path / "a" / f"{name}.jsonl").read_bytes() == (tmp_path / "b" / f"{name}.jsonl").read_bytes()


def test_summary_percentages(bundle):
    s = summarize_dataset(bundle)
    for part in s.values():
        for var in (*DEMOGRAPHIC_FIELDS, "choice"):
            assert sum(part[var].values()) == pytest.approx(100.0)
    assert "Swissmetro" in render_summary(s)


@given(demographics)
def test_one_hot_round_trip(d):
    v = d.one_hot()
    assert v.shape == (12,) and v.sum() == 4
    assert SocioDemographics.from_one_hot(v) == d
    assert SocioDemographics.from_codes(d.codes()) == d


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_synthetic_population_split_invariants(seed):
    pop = generate_population(PopulationSpec(n_personas=6, n_general=10, n_test=5, n_holdout_profiles=3, seed=seed))
    pop.bundle.validate()
    assert len(pop.basis) == 6
    assert np.all(np.diff([r.record_id for r in pop.bundle.general]) > 0)
