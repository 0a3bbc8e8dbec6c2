"""Dataset container plus CSV loading with per-row validation and rejection reporting."""
from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

from .errors import (
    MalformedCode,
    NonPositiveStay,
    RejectedRowsError,
    SourceUnreadable,
)
from .records import (
    AdmissionType,
    AgeGroup,
    CodeKind,
    HospitalizationRecord,
    compute_los,
    parse_icd9,
)

REQUIRED_COLUMNS = (
    "patient_id",
    "age_group",
    "diagnosis_code",
    "procedure_code",
    "facility",
    "department",
    "admission_type",
    "admission_date",
    "discharge_date",
)

DATE_FORMATS = ("iso", "dmy")


@dataclass(frozen=True)
class Rejection:
    """One rejected input row with a machine-readable reason."""

    line_no: int
    reason: str
    raw_row: str


@dataclass(frozen=True)
class Dataset:
    """Immutable, deterministically sorted collection of hospitalization records.

    Records are ordered by (admission_date, patient_id) with input order
    breaking ties; coverage spans the first to last admission date.
    """

    records: tuple[HospitalizationRecord, ...]
    coverage_start: dt.date | None
    coverage_end: dt.date | None
    n_records: int
    n_patients: int

    @classmethod
    def from_records(cls, records: Iterable[HospitalizationRecord]) -> "Dataset":
        ordered = tuple(sorted(records, key=lambda r: (r.admission_date, r.patient_id)))
        if ordered:
            start = min(r.admission_date for r in ordered)
            end = max(r.admission_date for r in ordered)
        else:
            start = end = None
        return cls(
            records=ordered,
            coverage_start=start,
            coverage_end=end,
            n_records=len(ordered),
            n_patients=len({r.patient_id for r in ordered}),
        )

    def __len__(self) -> int:
        return self.n_records

    def __iter__(self):
        return iter(self.records)


def _parse_date(text: str, date_format: str) -> dt.date:
    text = text.strip()
    if date_format == "iso":
        return dt.date.fromisoformat(text)
    if date_format == "dmy":
        return dt.datetime.strptime(text, "%d/%m/%Y").date()
    raise ValueError(f"unknown date format {date_format!r}")


def _row_to_record(fields: list[str], date_format: str) -> HospitalizationRecord:
    (patient, age, dx, proc, facility, department, adm_type, adm_date, dis_date) = (
        f.strip() for f in fields
    )
    if not patient:
        raise ValueError("EmptyPatientId")
    if not facility or not department:
        raise ValueError("EmptyFacilityOrDepartment")
    try:
        age_group = AgeGroup.from_label(age)
    except ValueError:
        raise ValueError("BadAgeGroup") from None
    diagnosis = parse_icd9(dx, CodeKind.DIAGNOSIS)
    procedure = parse_icd9(proc, CodeKind.PROCEDURE) if proc else None
    try:
        admission_type = AdmissionType.from_text(adm_type)
    except ValueError:
        raise ValueError("BadAdmissionType") from None
    try:
        admission = _parse_date(adm_date, date_format)
        discharge = _parse_date(dis_date, date_format)
    except ValueError:
        raise ValueError("BadDate") from None
    los = compute_los(admission, discharge)
    return HospitalizationRecord(
        patient_id=patient,
        age_group=age_group,
        diagnosis=diagnosis,
        procedure=procedure,
        facility=facility,
        department=department,
        admission_type=admission_type,
        admission_date=admission,
        discharge_date=discharge,
        los_days=los,
    )


def load_dataset(
    source: str | Path | TextIO,
    *,
    date_format: str = "iso",
    strict: bool = False,
) -> tuple[Dataset, list[Rejection]]:
    """Load records from CSV, collecting per-row rejections instead of failing.

    The header must match REQUIRED_COLUMNS exactly; comment lines starting
    with '#' are skipped. In strict mode any rejection raises
    RejectedRowsError with a summary. Raises SourceUnreadable when the file
    cannot be opened or the header is wrong.
    """
    if date_format not in DATE_FORMATS:
        raise SourceUnreadable(f"unknown date format {date_format!r}")
    if isinstance(source, (str, Path)):
        try:
            handle: TextIO = open(source, "r", encoding="utf-8", newline="")
        except OSError as exc:
            raise SourceUnreadable(f"cannot open {source}: {exc}") from exc
        close = True
    else:
        handle, close = source, False

    records: list[HospitalizationRecord] = []
    rejections: list[Rejection] = []
    try:
        header_seen = False
        reader = csv.reader(handle)
        for line_no, fields in enumerate(reader, start=1):
            if not fields or (fields[0].lstrip().startswith("#")):
                continue
            if not header_seen:
                if tuple(f.strip() for f in fields) != REQUIRED_COLUMNS:
                    raise SourceUnreadable(
                        f"header mismatch: expected {','.join(REQUIRED_COLUMNS)}"
                    )
                header_seen = True
                continue
            raw = ",".join(fields)
            if len(fields) != len(REQUIRED_COLUMNS):
                rejections.append(Rejection(line_no, "BadColumnCount", raw))
                continue
            try:
                records.append(_row_to_record(fields, date_format))
            except NonPositiveStay:
                rejections.append(Rejection(line_no, "NonPositiveStay", raw))
            except MalformedCode:
                rejections.append(Rejection(line_no, "MalformedCode", raw))
            except ValueError as exc:
                rejections.append(Rejection(line_no, str(exc), raw))
        if not header_seen:
            raise SourceUnreadable("empty source: no header row found")
    finally:
        if close:
            handle.close()

    if strict and rejections:
        counts: dict[str, int] = {}
        for r in rejections:
            counts[r.reason] = counts.get(r.reason, 0) + 1
        summary = ", ".join(f"{k}: {v}" for k, v in sorted(counts.items()))
        raise RejectedRowsError(
            f"strict mode: {len(rejections)} rejected rows ({summary})", rejections
        )
    return Dataset.from_records(records), rejections


def record_to_row(record: HospitalizationRecord) -> list[str]:
    return [
        record.patient_id,
        record.age_group.label,
        record.diagnosis.canonical_text,
        record.procedure.canonical_text if record.procedure else "",
        record.facility,
        record.department,
        record.admission_type.value,
        record.admission_date.isoformat(),
        record.discharge_date.isoformat(),
    ]


def write_dataset(
    dataset: Dataset,
    target: str | Path | TextIO,
    *,
    header_lines: Iterable[str] = (),
) -> None:
    """Write the canonical CSV form (ISO dates, canonical code text).

    ``header_lines`` go first as '#'-prefixed comments so that
    ``load_dataset`` round-trips the file.
    """
    if isinstance(target, (str, Path)):
        handle: TextIO = open(target, "w", encoding="utf-8", newline="")
        close = True
    else:
        handle, close = target, False
    try:
        for line in header_lines:
            handle.write(line if line.startswith("#") else f"# {line}")
            handle.write("\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(REQUIRED_COLUMNS)
        for record in dataset.records:
            writer.writerow(record_to_row(record))
    finally:
        if close:
            handle.close()


def write_rejections(rejections: Iterable[Rejection], target: str | Path | TextIO) -> None:
    """Emit the rejection report as CSV with columns line_no,reason,raw_row."""
    if isinstance(target, (str, Path)):
        handle: TextIO = open(target, "w", encoding="utf-8", newline="")
        close = True
    else:
        handle, close = target, False
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("line_no", "reason", "raw_row"))
        for r in rejections:
            writer.writerow((r.line_no, r.reason, r.raw_row))
    finally:
        if close:
            handle.close()


def dataset_from_csv_text(text: str, **kwargs) -> tuple[Dataset, list[Rejection]]:
    """Convenience wrapper mainly for tests: load from an in-memory CSV string."""
    return load_dataset(io.StringIO(text), **kwargs)
