"""Strictly-past history index over a dataset.

Every query takes a ``strictly_before`` reference date and only ever
returns entries admitted before it, so feature code cannot accidentally
look into the future. The index is immutable after construction and safe
for concurrent readers.
"""
from __future__ import annotations

import datetime as dt
from bisect import bisect_left
from dataclasses import dataclass, field

from .dataset import Dataset


@dataclass(frozen=True)
class _StayList:
    """Admission-date-ordered parallel arrays for one index key."""

    dates: tuple[dt.date, ...]
    los: tuple[int, ...]
    diagnoses: tuple[str, ...] = ()

    def window(self, on_or_after: dt.date | None, strictly_before: dt.date) -> range:
        hi = bisect_left(self.dates, strictly_before)
        lo = 0 if on_or_after is None else bisect_left(self.dates, on_or_after)
        return range(lo, hi)


@dataclass(frozen=True)
class HistoryIndex:
    """Per-patient and per-location lookup of strictly prior stays."""

    coverage_start: dt.date | None
    built_at: dt.datetime
    _patient: dict[str, _StayList] = field(repr=False, default_factory=dict)
    _location: dict[tuple[str, str, str], _StayList] = field(repr=False, default_factory=dict)
    _facility: dict[str, _StayList] = field(repr=False, default_factory=dict)

    def prior_diagnoses(self, patient_id: str, strictly_before: dt.date) -> list[str]:
        """Chronological diagnosis codes of the patient's earlier admissions."""
        stays = self._patient.get(patient_id)
        if stays is None:
            return []
        idx = stays.window(None, strictly_before)
        return [stays.diagnoses[i] for i in idx]

    def stays(
        self,
        facility: str,
        department: str,
        diagnosis: str,
        strictly_before: dt.date,
        on_or_after: dt.date | None = None,
    ) -> list[tuple[dt.date, int]]:
        """(admission_date, los) of prior stays sharing facility, department, and diagnosis."""
        stays = self._location.get((facility, department, diagnosis))
        if stays is None:
            return []
        idx = stays.window(on_or_after, strictly_before)
        return [(stays.dates[i], stays.los[i]) for i in idx]

    def facility_stays(
        self,
        facility: str,
        strictly_before: dt.date,
        on_or_after: dt.date | None = None,
    ) -> list[tuple[dt.date, int, str]]:
        """(admission_date, los, diagnosis) of prior stays at the facility."""
        stays = self._facility.get(facility)
        if stays is None:
            return []
        idx = stays.window(on_or_after, strictly_before)
        return [(stays.dates[i], stays.los[i], stays.diagnoses[i]) for i in idx]


def build_history_index(dataset: Dataset) -> HistoryIndex:
    """Build the immutable index; dataset order already sorts each key list by admission date."""
    patient: dict[str, tuple[list, list]] = {}
    location: dict[tuple[str, str, str], tuple[list, list]] = {}
    facility: dict[str, tuple[list, list, list]] = {}
    for r in dataset.records:
        dx = r.diagnosis.canonical_text
        p = patient.setdefault(r.patient_id, ([], []))
        p[0].append(r.admission_date)
        p[1].append(dx)
        loc = location.setdefault((r.facility, r.department, dx), ([], []))
        loc[0].append(r.admission_date)
        loc[1].append(r.los_days)
        fac = facility.setdefault(r.facility, ([], [], []))
        fac[0].append(r.admission_date)
        fac[1].append(r.los_days)
        fac[2].append(dx)
    return HistoryIndex(
        coverage_start=dataset.coverage_start,
        built_at=dt.datetime.now(dt.timezone.utc),
        _patient={
            k: _StayList(tuple(v[0]), (), tuple(v[1])) for k, v in patient.items()
        },
        _location={
            k: _StayList(tuple(v[0]), tuple(v[1])) for k, v in location.items()
        },
        _facility={
            k: _StayList(tuple(v[0]), tuple(v[1]), tuple(v[2])) for k, v in facility.items()
        },
    )
