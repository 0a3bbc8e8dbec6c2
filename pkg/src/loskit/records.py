"""Hospitalization record primitives: ICD-9 codes, age groups, admission types, stay length."""
from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass

from .errors import MalformedCode, NonPositiveStay


class CodeKind(enum.Enum):
    DIAGNOSIS = "diagnosis"
    PROCEDURE = "procedure"


@dataclass(frozen=True)
class Icd9Code:
    """A normalized ICD-9 (diagnosis) or ICD-9-PCS (procedure) code.

    The root is the zero-padded category part (three digits for diagnoses,
    two digits after an optional V/E prefix, two digits for procedures);
    ``sub`` is the 0-2 digit extension after the decimal point.
    """

    kind: CodeKind
    root: str
    sub: str = ""

    @property
    def canonical_text(self) -> str:
        return f"{self.root}.{self.sub}" if self.sub else self.root

    def __str__(self) -> str:
        return self.canonical_text


def parse_icd9(text: str, kind: CodeKind) -> Icd9Code:
    """Parse raw ICD-9 text into canonical form.

    Diagnosis roots are zero-padded to three digits (two after a V prefix,
    three after an E prefix); procedure roots to two digits. The decimal
    extension may hold at most two digits.

    Raises MalformedCode for empty text, illegal characters, an over-long
    root, or an extension longer than two digits.
    """
    t = text.strip().upper()
    if not t:
        raise MalformedCode("empty code text")
    head, dot, sub = t.partition(".")
    if dot and not sub:
        raise MalformedCode(f"trailing decimal point in {text!r}")
    if sub and not (sub.isascii() and sub.isdigit()):
        raise MalformedCode(f"non-digit extension in {text!r}")
    if len(sub) > 2:
        raise MalformedCode(f"extension longer than 2 digits in {text!r}")

    if kind is CodeKind.PROCEDURE:
        if not (head.isascii() and head.isdigit()):
            raise MalformedCode(f"illegal characters in procedure code {text!r}")
        if len(head) > 2:
            raise MalformedCode(f"procedure root longer than 2 digits in {text!r}")
        return Icd9Code(kind, head.zfill(2), sub)

    prefix = head[0] if head[:1] in ("V", "E") else ""
    digits = head[len(prefix):]
    if not digits or not (digits.isascii() and digits.isdigit()):
        raise MalformedCode(f"illegal characters in diagnosis code {text!r}")
    width = 2 if prefix == "V" else 3
    if len(digits) > width:
        raise MalformedCode(f"diagnosis root longer than {width} digits in {text!r}")
    return Icd9Code(kind, prefix + digits.zfill(width), sub)


def compute_los(admission: dt.date, discharge: dt.date) -> int:
    """Length of stay as the exact calendar-day difference.

    Raises NonPositiveStay when the discharge date is not after the
    admission date; callers are responsible for excluding such records.
    """
    days = (discharge - admission).days
    if days <= 0:
        raise NonPositiveStay(
            f"discharge {discharge.isoformat()} not after admission {admission.isoformat()}"
        )
    return days


AGE_GROUP_LABELS: tuple[str, ...] = ("0",) + tuple(
    f"{lo}-{lo + 3 if lo == 1 else lo + 4}" for lo in (1, *range(5, 90, 5))
) + ("90+",)

_AGE_INDEX = {label: i for i, label in enumerate(AGE_GROUP_LABELS)}


@dataclass(frozen=True, order=True)
class AgeGroup:
    """One of the 20 ordinal age categories: 0, 1-4, 5-9, ..., 85-89, 90+."""

    index: int

    def __post_init__(self):
        if not 0 <= self.index < len(AGE_GROUP_LABELS):
            raise ValueError(f"age group index {self.index} outside 0..{len(AGE_GROUP_LABELS) - 1}")

    @property
    def label(self) -> str:
        return AGE_GROUP_LABELS[self.index]

    @classmethod
    def from_label(cls, label: str) -> "AgeGroup":
        try:
            return cls(_AGE_INDEX[label.strip()])
        except KeyError:
            raise ValueError(f"unknown age group label {label!r}") from None


class AdmissionType(enum.Enum):
    SURGICAL = "surgical"
    MEDICAL = "medical"
    ORDINARY = "ordinary"

    @classmethod
    def from_text(cls, text: str) -> "AdmissionType":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown admission type {text!r}") from None


@dataclass(frozen=True)
class HospitalizationRecord:
    """One admission with its derived length of stay in days (>= 1)."""

    patient_id: str
    age_group: AgeGroup
    diagnosis: Icd9Code
    procedure: Icd9Code | None
    facility: str
    department: str
    admission_type: AdmissionType
    admission_date: dt.date
    discharge_date: dt.date
    los_days: int
