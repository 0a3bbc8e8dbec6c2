import datetime as dt
import io

import pytest

from loskit.dataset import (
    REQUIRED_COLUMNS,
    dataset_from_csv_text,
    load_dataset,
    write_dataset,
    write_rejections,
)
from loskit.errors import RejectedRowsError, SourceUnreadable
from loskit.synth import GeneratorConfig, generate_dataset

HEADER = ",".join(REQUIRED_COLUMNS)

GOOD_ROWS = """\
p1,35-39,724.2,88.93,F1,D1,medical,2021-07-22,2021-07-25
p2,0,401.9,,F1,D2,ordinary,2021-07-22,2021-07-23
p3,90+,428,03.09,F2,D1,surgical,2020-02-28,2020-03-01
"""


def test_load_well_formed():
    dataset, rejections = dataset_from_csv_text(HEADER + "\n" + GOOD_ROWS)
    assert rejections == []
    assert dataset.n_records == 3
    assert dataset.n_patients == 3
    assert dataset.coverage_start == dt.date(2020, 2, 28)
    assert dataset.coverage_end == dt.date(2021, 7, 22)
    first = dataset.records[0]
    assert first.patient_id == "p3"
    assert first.los_days == 2
    assert dataset.records[2].patient_id == "p2"
    assert dataset.records[2].procedure is None


def test_sorted_with_stable_ties():
    rows = (
        "pB,0,001,,F1,D1,ordinary,2021-01-01,2021-01-02\n"
        "pA,0,002,,F1,D1,ordinary,2021-01-01,2021-01-02\n"
        "pA,0,003,,F1,D1,ordinary,2021-01-01,2021-01-02\n"
    )
    dataset, _ = dataset_from_csv_text(HEADER + "\n" + rows)
    # same-day duplicate admissions for pA are both retained, in input order
    assert [r.diagnosis.canonical_text for r in dataset.records] == ["002", "003", "001"]


def test_rejection_reasons():
    rows = (
        "p1,35-39,724.2,,F1,D1,medical,2021-07-25,2021-07-22\n"  # NonPositiveStay
        "p2,35-39,7A4.2,,F1,D1,medical,2021-07-22,2021-07-25\n"  # MalformedCode
        "p3,200+,724.2,,F1,D1,medical,2021-07-22,2021-07-25\n"  # BadAgeGroup
        "p4,35-39,724.2,,F1,D1,daycase,2021-07-22,2021-07-25\n"  # BadAdmissionType
        "p5,35-39,724.2,,F1,D1,medical,22/07/2021,2021-07-25\n"  # BadDate (iso mode)
        "p6,35-39,724.2,,F1,D1,medical,2021-07-22\n"  # BadColumnCount
        "p7,35-39,724.2,,F1,D1,medical,2021-07-22,2021-07-25\n"  # fine
    )
    dataset, rejections = dataset_from_csv_text(HEADER + "\n" + rows)
    assert dataset.n_records == 1
    reasons = [r.reason for r in rejections]
    assert reasons == [
        "NonPositiveStay",
        "MalformedCode",
        "BadAgeGroup",
        "BadAdmissionType",
        "BadDate",
        "BadColumnCount",
    ]
    assert [r.line_no for r in rejections] == [2, 3, 4, 5, 6, 7]


def test_strict_mode_aborts():
    text = HEADER + "\np1,35-39,724.2,,F1,D1,medical,2021-07-25,2021-07-22\n"
    with pytest.raises(RejectedRowsError, match="NonPositiveStay"):
        dataset_from_csv_text(text, strict=True)


def test_dmy_date_format():
    text = HEADER + "\np1,35-39,724.2,,F1,D1,medical,22/07/2021,25/07/2021\n"
    dataset, rejections = dataset_from_csv_text(text, date_format="dmy")
    assert rejections == []
    assert dataset.records[0].admission_date == dt.date(2021, 7, 22)


def test_header_mismatch():
    with pytest.raises(SourceUnreadable):
        dataset_from_csv_text("a,b,c\n1,2,3\n")


def test_missing_file():
    with pytest.raises(SourceUnreadable):
        load_dataset("/nonexistent/dataset.csv")


def test_comment_lines_skipped():
    text = "# provenance line\n" + HEADER + "\n# another\n" + GOOD_ROWS
    dataset, rejections = dataset_from_csv_text(text)
    assert dataset.n_records == 3 and rejections == []


def test_write_then_load_round_trip(tmp_path):
    dataset = generate_dataset(GeneratorConfig(seed=5, n_records=300))
    path = tmp_path / "ds.csv"
    write_dataset(dataset, path, header_lines=("# test run",))
    loaded, rejections = load_dataset(path)
    assert rejections == []
    assert loaded.records == dataset.records
    assert (loaded.coverage_start, loaded.coverage_end) == (
        dataset.coverage_start,
        dataset.coverage_end,
    )


def test_rejection_report_csv(tmp_path):
    text = HEADER + "\np1,35-39,724.2,,F1,D1,medical,2021-07-25,2021-07-22\n"
    _, rejections = dataset_from_csv_text(text)
    out = tmp_path / "rej.csv"
    write_rejections(rejections, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "line_no,reason,raw_row"
    assert lines[1].startswith("2,NonPositiveStay,")


def test_los_consistency_invariant():
    dataset = generate_dataset(GeneratorConfig(seed=9, n_records=500))
    for r in dataset.records:
        assert r.los_days >= 1
        assert r.los_days == (r.discharge_date - r.admission_date).days
