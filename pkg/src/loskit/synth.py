"""Seeded synthetic hospitalization data with published-table marginals and a
planted, learnable length-of-stay signal.

Log-LoS is additive in categorical effects (age, admission type, month,
diagnosis, facility, optional procedure) plus Gaussian noise; the exponent is
rounded and clamped to >= 1 day. Per-record randomness derives from
(seed, record ordinal) so output never depends on scheduling.
"""
from __future__ import annotations

import calendar
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codemaps import MAP_FILENAMES
from .dataset import Dataset
from .errors import ConfigInvalid, EmptyDataset
from .records import AdmissionType, AgeGroup, CodeKind, HospitalizationRecord, Icd9Code
from .stats import GroupDescriptives, group_descriptives

# Published admission marginals used as generator defaults (percent shares).
AGE_GROUP_SHARES = (
    5.39, 3.71, 1.50, 1.00, 1.55, 1.98, 3.06, 4.43, 4.16, 3.31,
    4.21, 5.33, 6.86, 7.33, 8.03, 9.31, 9.61, 9.33, 6.52, 3.37,
)
ADMISSION_TYPE_SHARES = (13.55, 6.33, 80.12)  # surgical, medical, ordinary
MONTH_SHARES = (7.78, 7.74, 8.67, 7.34, 8.50, 8.51, 8.93, 7.55, 8.83, 9.89, 9.38, 6.88)


def _normalized(shares) -> tuple[float, ...]:
    total = float(sum(shares))
    return tuple(s / total for s in shares)


DEFAULT_AGE_PROBS = _normalized(AGE_GROUP_SHARES)
DEFAULT_TYPE_PROBS = _normalized(ADMISSION_TYPE_SHARES)
DEFAULT_MONTH_PROBS = _normalized(MONTH_SHARES)

DEFAULT_AGE_EFFECTS = tuple(float(x) for x in np.linspace(-0.35, 0.55, 20))
DEFAULT_TYPE_EFFECTS = (-0.9, 0.8, 0.0)  # surgical, medical, ordinary
DEFAULT_MONTH_EFFECTS = tuple(
    float(0.25 * math.cos(2.0 * math.pi * m / 12.0)) for m in range(12)
)

# Sub-stream tags under the run seed; per-record streams are (seed, 0, ordinal).
_STREAM_RECORD = 0
_STREAM_PATIENTS = 1
_STREAM_DX_EFFECTS = 2
_STREAM_FAC_EFFECTS = 3
_STREAM_PROC_EFFECTS = 4
_STREAM_DX_EMB = 5
_STREAM_PROC_EMB = 6


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_records: int = 10_000
    start_date: dt.date = dt.date(2020, 1, 1)
    end_date: dt.date = dt.date(2023, 12, 31)
    age_group_probs: tuple[float, ...] = DEFAULT_AGE_PROBS
    admission_type_probs: tuple[float, ...] = DEFAULT_TYPE_PROBS
    month_probs: tuple[float, ...] = DEFAULT_MONTH_PROBS
    diagnosis_pool_size: int = 300
    diagnosis_zipf: float = 1.1
    procedure_pool_size: int = 120
    procedure_zipf: float = 1.0
    procedure_rate: float = 0.7
    facility_pool_size: int = 66
    facility_zipf: float = 0.7
    department_pool_size: int = 52
    readmission_rate: float = 0.35
    base_log_los: float = math.log(4.0)
    age_effects: tuple[float, ...] = DEFAULT_AGE_EFFECTS
    type_effects: tuple[float, ...] = DEFAULT_TYPE_EFFECTS
    month_effects: tuple[float, ...] = DEFAULT_MONTH_EFFECTS
    diagnosis_effect_sd: float = 0.5
    facility_effect_sd: float = 0.45
    facility_traffic_coef: float = -0.35
    procedure_effect_sd: float = 0.3
    noise_sd: float = 0.45

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigInvalid(f"seed must be >= 0, got {self.seed}")
        if self.n_records < 0:
            raise ConfigInvalid(f"n_records must be >= 0, got {self.n_records}")
        if self.end_date < self.start_date:
            raise ConfigInvalid("end_date before start_date")
        for name, probs, size in (
            ("age_group_probs", self.age_group_probs, 20),
            ("admission_type_probs", self.admission_type_probs, 3),
            ("month_probs", self.month_probs, 12),
        ):
            if len(probs) != size:
                raise ConfigInvalid(f"{name} must have {size} entries, got {len(probs)}")
            if any(p < 0 for p in probs):
                raise ConfigInvalid(f"{name} has negative entries")
            if abs(sum(probs) - 1.0) > 1e-9:
                raise ConfigInvalid(f"{name} must sum to 1 within 1e-9")
        for name, size in (
            ("diagnosis_pool_size", self.diagnosis_pool_size),
            ("procedure_pool_size", self.procedure_pool_size),
            ("facility_pool_size", self.facility_pool_size),
            ("department_pool_size", self.department_pool_size),
        ):
            if size < 1:
                raise ConfigInvalid(f"{name} must be >= 1, got {size}")
        for name, rate in (
            ("procedure_rate", self.procedure_rate),
            ("readmission_rate", self.readmission_rate),
        ):
            if not 0.0 <= rate <= 1.0:
                raise ConfigInvalid(f"{name} must be in [0, 1], got {rate}")
        if self.noise_sd <= 0:
            raise ConfigInvalid(f"noise_sd must be > 0, got {self.noise_sd}")
        if len(self.age_effects) != 20 or len(self.type_effects) != 3 or len(self.month_effects) != 12:
            raise ConfigInvalid("effect vectors must match category counts (20/3/12)")


def _zipf_probs(n: int, exponent: float) -> np.ndarray:
    weights = np.arange(1, n + 1, dtype=np.float64) ** (-exponent)
    return weights / weights.sum()


def diagnosis_pool(config: GeneratorConfig) -> list[Icd9Code]:
    """Pool codes 100.0, 100.1, ... spread over successive roots."""
    codes = []
    for k in range(config.diagnosis_pool_size):
        root = 100 + k // 10
        codes.append(Icd9Code(CodeKind.DIAGNOSIS, f"{root:03d}", str(k % 10)))
    return codes


def procedure_pool(config: GeneratorConfig) -> list[Icd9Code]:
    codes = []
    for k in range(config.procedure_pool_size):
        root = 10 + k // 10
        codes.append(Icd9Code(CodeKind.PROCEDURE, f"{root:02d}", str(k % 10)))
    return codes


def _diagnosis_effects(config: GeneratorConfig) -> np.ndarray:
    rng = np.random.default_rng((config.seed, _STREAM_DX_EFFECTS))
    effects = rng.normal(0.0, config.diagnosis_effect_sd, size=config.diagnosis_pool_size)
    # Pin the two most frequent codes to opposite one-sd effects so the
    # planted signal is detectable for every seed.
    if config.diagnosis_pool_size >= 2 and config.diagnosis_effect_sd > 0:
        effects[0] = config.diagnosis_effect_sd
        effects[1] = -config.diagnosis_effect_sd
    return effects


def _facility_effects(config: GeneratorConfig) -> tuple[np.ndarray, np.ndarray]:
    """(sampling probabilities, additive log-LoS effects) for the facility pool."""
    probs = _zipf_probs(config.facility_pool_size, config.facility_zipf)
    rng = np.random.default_rng((config.seed, _STREAM_FAC_EFFECTS))
    noise = rng.normal(0.0, config.facility_effect_sd, size=config.facility_pool_size)
    log_share = np.log(probs)
    spread = log_share.std()
    z = (log_share - log_share.mean()) / spread if spread > 0 else np.zeros_like(log_share)
    return probs, config.facility_traffic_coef * z + noise


def _procedure_effects(config: GeneratorConfig) -> np.ndarray:
    rng = np.random.default_rng((config.seed, _STREAM_PROC_EFFECTS))
    return rng.normal(0.0, config.procedure_effect_sd, size=config.procedure_pool_size)


def _assign_patients(config: GeneratorConfig) -> list[str]:
    """Serial pre-pass deciding which records reuse an existing patient."""
    rng = np.random.default_rng((config.seed, _STREAM_PATIENTS))
    assigned: list[str] = []
    pool: list[str] = []
    for _ in range(config.n_records):
        if pool and rng.random() < config.readmission_rate:
            assigned.append(pool[int(rng.integers(0, len(pool)))])
        else:
            pid = f"P{len(pool):06d}"
            pool.append(pid)
            assigned.append(pid)
    return assigned


def _sample_admission_date(rng: np.random.Generator, config: GeneratorConfig,
                           month_cdf: np.ndarray, years: list[int]) -> dt.date:
    while True:
        year = years[int(rng.integers(0, len(years)))]
        month = int(np.searchsorted(month_cdf, rng.random(), side="right")) + 1
        first = max(dt.date(year, month, 1), config.start_date)
        last = min(dt.date(year, month, calendar.monthrange(year, month)[1]), config.end_date)
        if first > last:
            continue
        return first + dt.timedelta(days=int(rng.integers(0, (last - first).days + 1)))


def generate_dataset(config: GeneratorConfig) -> Dataset:
    """Generate exactly n_records valid records, fully deterministic under the seed."""
    config.validate()
    dx_pool = diagnosis_pool(config)
    proc_pool = procedure_pool(config)
    facilities = [f"F{k:03d}" for k in range(config.facility_pool_size)]
    departments = [f"D{k:03d}" for k in range(config.department_pool_size)]

    age_cdf = np.cumsum(config.age_group_probs)
    type_cdf = np.cumsum(config.admission_type_probs)
    month_cdf = np.cumsum(config.month_probs)
    dx_cdf = np.cumsum(_zipf_probs(config.diagnosis_pool_size, config.diagnosis_zipf))
    proc_cdf = np.cumsum(_zipf_probs(config.procedure_pool_size, config.procedure_zipf))
    fac_probs, fac_effects = _facility_effects(config)
    fac_cdf = np.cumsum(fac_probs)
    dx_effects = _diagnosis_effects(config)
    proc_effects = _procedure_effects(config)
    years = list(range(config.start_date.year, config.end_date.year + 1))
    admission_types = list(AdmissionType)
    patients = _assign_patients(config)

    records = []
    for i in range(config.n_records):
        rng = np.random.default_rng((config.seed, _STREAM_RECORD, i))
        age_idx = int(np.searchsorted(age_cdf, rng.random(), side="right"))
        type_idx = int(np.searchsorted(type_cdf, rng.random(), side="right"))
        admission = _sample_admission_date(rng, config, month_cdf, years)
        dx_idx = int(np.searchsorted(dx_cdf, rng.random(), side="right"))
        fac_idx = int(np.searchsorted(fac_cdf, rng.random(), side="right"))
        dept_idx = int(rng.integers(0, config.department_pool_size))
        proc_idx = None
        if rng.random() < config.procedure_rate:
            proc_idx = int(np.searchsorted(proc_cdf, rng.random(), side="right"))

        log_los = (
            config.base_log_los
            + config.age_effects[age_idx]
            + config.type_effects[type_idx]
            + config.month_effects[admission.month - 1]
            + dx_effects[dx_idx]
            + fac_effects[fac_idx]
            + (proc_effects[proc_idx] if proc_idx is not None else 0.0)
            + rng.normal(0.0, config.noise_sd)
        )
        los = max(1, int(math.floor(math.exp(log_los) + 0.5)))
        records.append(
            HospitalizationRecord(
                patient_id=patients[i],
                age_group=AgeGroup(age_idx),
                diagnosis=dx_pool[dx_idx],
                procedure=proc_pool[proc_idx] if proc_idx is not None else None,
                facility=facilities[fac_idx],
                department=departments[dept_idx],
                admission_type=admission_types[type_idx],
                admission_date=admission,
                discharge_date=admission + dt.timedelta(days=los),
                los_days=los,
            )
        )
    return Dataset.from_records(records)


@dataclass(frozen=True)
class MarginalReport:
    """Per-variable descriptive tables over a dataset's LoS values."""

    sections: dict[str, GroupDescriptives] = field(default_factory=dict)

    VARIABLES = ("age_group", "admission_type", "admission_month", "year")


def marginal_report(dataset: Dataset) -> MarginalReport:
    """Per-category {n, %, median, std, IQR, min, max} for age group, type, month, year."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot summarize an empty dataset")
    los = [r.los_days for r in dataset.records]
    sections = {
        "age_group": group_descriptives(
            los,
            [r.age_group.label for r in dataset.records],
            order=[AgeGroup(i).label for i in range(20)],
        ),
        "admission_type": group_descriptives(
            los,
            [r.admission_type.value for r in dataset.records],
            order=[t.value for t in AdmissionType],
        ),
        "admission_month": group_descriptives(
            los, [r.admission_date.month for r in dataset.records], order=list(range(1, 13))
        ),
        "year": group_descriptives(los, [r.admission_date.year for r in dataset.records]),
    }
    return MarginalReport(sections=sections)


def render_marginal_csv(report: MarginalReport) -> str:
    lines = ["variable,category,n,percent,median,std,q25,q75,min,max"]
    for variable, table in report.sections.items():
        for row in table:
            lines.append(
                f"{variable},{row.group},{row.n},{row.percent:.4f},{row.median:g},"
                f"{row.std:.4f},{row.q25:g},{row.q75:g},{row.min:g},{row.max:g}"
            )
    return "\n".join(lines) + "\n"


def render_marginal_text(report: MarginalReport) -> str:
    out = []
    for variable, table in report.sections.items():
        out.append(variable)
        out.append(f"  {'category':>12} {'n':>8} {'%':>7} {'median':>7} {'std':>8} {'IQR':>9} {'min':>5} {'max':>5}")
        for row in table:
            iqr = f"{row.q25:g}-{row.q75:g}"
            out.append(
                f"  {row.group!s:>12} {row.n:>8} {row.percent:>7.2f} {row.median:>7g} "
                f"{row.std:>8.2f} {iqr:>9} {row.min:>5g} {row.max:>5g}"
            )
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Matching synthetic code tables

ELIX_CATEGORIES = (
    "chf", "arrhythmia", "pulmonary", "diabetes",
    "renal", "liver", "metastasis", "depression",
)
ELIX_WEIGHTS = (7, 5, 3, 0, 5, 11, 12, -3)


def write_synthetic_maps(config: GeneratorConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write GEM/DRG/Elixhauser/embedding tables covering the generator pools.

    Embedding component 0 carries the planted effect of the code so that
    embedding-encoded models have usable signal; remaining components are
    seeded noise. Returns the written paths keyed like MAP_FILENAMES.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dx_pool = diagnosis_pool(config)
    proc_pool = procedure_pool(config)
    dx_effects = _diagnosis_effects(config)
    proc_effects = _procedure_effects(config)
    written: dict[str, Path] = {}

    def emit(name: str, lines: list[str]) -> None:
        path = out_dir / MAP_FILENAMES[name]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written[name] = path

    emit(
        "gem",
        ["# source: loskit synthetic tables", "icd9,icd10"]
        + [f"{c.canonical_text},X{c.root}{c.sub}" for c in dx_pool],
    )
    emit(
        "drg",
        ["# source: loskit synthetic tables", "icd9,drg"]
        + [f"{c.canonical_text},DRG{k // 10:03d}" for k, c in enumerate(dx_pool)],
    )
    elix_lines = [
        "# source: loskit synthetic tables",
        f"# categories: {'|'.join(ELIX_CATEGORIES)}",
        "prefix,category,weight",
    ]
    for k, c in enumerate(dx_pool):
        if k % 3 == 0:
            cat = k // 3 % len(ELIX_CATEGORIES)
            elix_lines.append(f"{c.canonical_text},{ELIX_CATEGORIES[cat]},{ELIX_WEIGHTS[cat]}")
    emit("elixhauser", elix_lines)

    for name, pool, effects, stream, dim in (
        ("diagnosis_embeddings", dx_pool, dx_effects, _STREAM_DX_EMB, 16),
        ("procedure_embeddings", proc_pool, proc_effects, _STREAM_PROC_EMB, 8),
    ):
        rng = np.random.default_rng((config.seed, stream))
        lines = [
            "# source: loskit synthetic tables",
            f"# dimension: {dim}",
            "code," + ",".join(f"v{j + 1}" for j in range(dim)),
        ]
        for k, code in enumerate(pool):
            vec = rng.normal(0.0, 1.0, size=dim)
            vec[0] = effects[k]
            lines.append(code.canonical_text + "," + ",".join(f"{v:.6f}" for v in vec))
        emit(name, lines)
    return written
