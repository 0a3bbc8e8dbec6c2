"""Temporally-safe feature engineering.

Every history-derived feature (comorbidities, patient volume, historical
LoS) sees only records admitted strictly before the row's admission date;
categorical encoders are fitted on train-role rows only. The lookback
window is the ``window_days`` calendar days ending the day before
admission, so same-day records never see each other.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codemaps import CodeMapSet, ElixhauserMap, EmbeddingTable, MapTable, drg_group_of, lookup_embedding
from .dataset import Dataset
from .errors import ConfigInvalid, EmptyInput, LengthMismatch, UnknownMethod
from .history import HistoryIndex
from .learn import apply_target_encoder, fit_target_encoder
from .records import HospitalizationRecord

ENCODER_METHODS = ("raw", "one_hot", "target", "embedding")

ROLES = ("train", "val", "test", "excluded")

FEATURE_GROUPS = ("patient", "diagnosis", "procedure", "type", "month", "volume", "hist_los")

# Incremental feature-set ladder: each rung strictly extends the previous.
LADDER: tuple[tuple[str, ...], ...] = tuple(
    FEATURE_GROUPS[:2] + FEATURE_GROUPS[2 : 2 + i] for i in range(6)
)
RUNG_NAMES = (
    "patient+diagnosis",
    "+procedure",
    "+type",
    "+month",
    "+volume",
    "+hist_los",
)

NONE_CATEGORY = "__none__"
OTHER_CATEGORY = "__other__"


@dataclass(frozen=True)
class FeatureConfig:
    window_days: int = 90
    smoothing_k: float = 5.0
    te_prior: float = 5.0
    te_folds: int = 5
    seed: int = 0
    diagnosis_encoder: str = "raw"
    procedure_encoder: str = "raw"
    admission_type_encoder: str = "raw"
    fallback_prior_los: float | None = None

    def __post_init__(self):
        if self.window_days < 1:
            raise ConfigInvalid(f"window_days must be >= 1, got {self.window_days}")
        if self.smoothing_k < 0:
            raise ConfigInvalid(f"smoothing_k must be >= 0, got {self.smoothing_k}")
        if self.te_folds < 2:
            raise ConfigInvalid(f"te_folds must be >= 2, got {self.te_folds}")
        if self.te_prior < 0:
            raise ConfigInvalid(f"te_prior must be >= 0, got {self.te_prior}")
        for name in ("diagnosis_encoder", "procedure_encoder", "admission_type_encoder"):
            method = getattr(self, name)
            if method not in ENCODER_METHODS:
                raise ConfigInvalid(f"{name} must be one of {ENCODER_METHODS}, got {method!r}")


# ---------------------------------------------------------------------------
# History-derived features


def comorbidity_features(
    patient_id: str,
    reference_date: dt.date,
    index: HistoryIndex,
    elix: ElixhauserMap,
) -> tuple[int, int]:
    """(distinct comorbidity category count, summed category weights) from prior diagnoses.

    Each Elixhauser category counts once no matter how many prior codes
    map into it; an empty history gives (0, 0).
    """
    seen: dict[str, int] = {}
    for code_text in index.prior_diagnoses(patient_id, reference_date):
        hit = elix.lookup(_parse_cached(code_text))
        if hit is not None:
            seen.setdefault(hit[0], hit[1])
    return len(seen), sum(seen.values())


_CODE_CACHE: dict[str, "object"] = {}


def _parse_cached(code_text: str):
    from .records import CodeKind, parse_icd9

    code = _CODE_CACHE.get(code_text)
    if code is None:
        code = parse_icd9(code_text, CodeKind.DIAGNOSIS)
        _CODE_CACHE[code_text] = code
    return code


def patient_volume(
    record: HospitalizationRecord,
    index: HistoryIndex,
    cfg: FeatureConfig,
) -> tuple[float, bool]:
    """Admission rate per observation day for the record's (facility, diagnosis).

    Counts window stays at the same facility with the same diagnosis;
    observation days are the window days on/after dataset coverage start.
    An empty observation window yields (0.0, missing=True).
    """
    t = record.admission_date
    window_start = t - dt.timedelta(days=cfg.window_days)
    cov = index.coverage_start
    if cov is None:
        return 0.0, True
    effective_start = max(window_start, cov)
    observation_days = (t - effective_start).days
    if observation_days <= 0:
        return 0.0, True
    dx = record.diagnosis.canonical_text
    count = sum(
        1
        for _, _, stay_dx in index.facility_stays(
            record.facility, strictly_before=t, on_or_after=window_start
        )
        if stay_dx == dx
    )
    return count / observation_days, False


def smoothed_mean(n: int, m_obs: float, k: float, m_glob: float) -> float:
    """Bayesian shrinkage blend (n*m_obs + k*m_glob)/(n + k); the n = k = 0 limit is m_glob."""
    if n + k == 0:
        return m_glob
    return (n * m_obs + k * m_glob) / (n + k)


def historical_los(
    record: HospitalizationRecord,
    index: HistoryIndex,
    drg: MapTable,
    cfg: FeatureConfig,
    *,
    fallback_prior: float | None = None,
    drg_cache: dict[str, str] | None = None,
) -> float:
    """Bayesian-smoothed mean LoS of comparable prior stays.

    Blends the observed mean over window stays sharing (facility,
    department, diagnosis) with a global mean over same-facility window
    stays in the same DRG group: (n*obs + k*glob)/(n + k). When the global
    mean is undefined it falls back to the facility-wide window mean, then
    to the configured prior.
    """
    prior = fallback_prior if fallback_prior is not None else cfg.fallback_prior_los
    if prior is None:
        raise ConfigInvalid("fallback prior LoS is unresolved; pass fallback_prior")
    if drg_cache is None:
        drg_cache = {}
    t = record.admission_date
    window_start = t - dt.timedelta(days=cfg.window_days)
    dx = record.diagnosis.canonical_text

    own = index.stays(
        record.facility, record.department, dx, strictly_before=t, on_or_after=window_start
    )
    n = len(own)
    m_obs = sum(los for _, los in own) / n if n else 0.0

    group = _drg_of(dx, drg, drg_cache)
    facility_stays = index.facility_stays(
        record.facility, strictly_before=t, on_or_after=window_start
    )
    group_los = [los for _, los, stay_dx in facility_stays
                 if _drg_of(stay_dx, drg, drg_cache) == group]
    if group_los:
        m_glob = sum(group_los) / len(group_los)
    elif facility_stays:
        m_glob = sum(los for _, los, _ in facility_stays) / len(facility_stays)
    else:
        m_glob = prior

    return smoothed_mean(n, m_obs, cfg.smoothing_k, m_glob)


def _drg_of(dx_text: str, drg: MapTable, cache: dict[str, str]) -> str:
    group = cache.get(dx_text)
    if group is None:
        group = drg_group_of(_parse_cached(dx_text), drg)
        cache[dx_text] = group
    return group


def history_features(
    record: HospitalizationRecord,
    index: HistoryIndex,
    maps: CodeMapSet,
    cfg: FeatureConfig,
    *,
    fallback_prior: float,
    drg_cache: dict[str, str] | None = None,
) -> dict[str, float]:
    """All strictly-past features of one record (the future-independent bundle)."""
    n_comorbidities, elixhauser_index = comorbidity_features(
        record.patient_id, record.admission_date, index, maps.elixhauser
    )
    volume, volume_missing = patient_volume(record, index, cfg)
    hist = historical_los(
        record, index, maps.drg, cfg, fallback_prior=fallback_prior, drg_cache=drg_cache
    )
    return {
        "n_comorbidities": float(n_comorbidities),
        "elixhauser_index": float(elixhauser_index),
        "patient_volume": volume,
        "patient_volume_missing": float(volume_missing),
        "historical_los": hist,
    }


# ---------------------------------------------------------------------------
# Categorical encodings


def encode_categorical(
    values: Sequence[object],
    method: str,
    *,
    train_mask: Sequence[bool] | None = None,
    targets: Sequence[float] | None = None,
    table: EmbeddingTable | None = None,
    prior: float = 5.0,
    folds: int = 5,
    seed: int = 0,
    name: str = "column",
) -> tuple[list[str], list[str], list[np.ndarray], dict]:
    """Encode one categorical column; returns (names, kinds, arrays, provenance).

    raw: integer ids in first-appearance order. one_hot: one column per
    training-observed category plus an OTHER column. target: out-of-fold
    encodings on train rows, full-training encodings elsewhere. embedding:
    the table's vector components plus a missing flag.
    """
    vals = list(values)
    n = len(vals)
    if method == "raw":
        ids: dict[object, int] = {}
        col = np.empty(n, dtype=np.float64)
        for i, v in enumerate(vals):
            col[i] = ids.setdefault(v, len(ids))
        prov = {"method": "raw", "categories": {str(k): v for k, v in ids.items()}}
        return [name], ["categorical"], [col], prov

    if method == "one_hot":
        mask = np.ones(n, dtype=bool) if train_mask is None else np.asarray(train_mask, dtype=bool)
        if len(mask) != n:
            raise LengthMismatch(f"{len(mask)} mask entries vs {n} values")
        observed = sorted({str(vals[i]) for i in range(n) if mask[i]})
        columns = [np.zeros(n, dtype=np.float64) for _ in range(len(observed) + 1)]
        pos = {c: j for j, c in enumerate(observed)}
        for i, v in enumerate(vals):
            columns[pos.get(str(v), len(observed))][i] = 1.0
        names = [f"{name}={c}" for c in observed] + [f"{name}={OTHER_CATEGORY}"]
        prov = {"method": "one_hot", "categories": observed}
        return names, ["numeric"] * len(names), columns, prov

    if method == "target":
        if targets is None or train_mask is None:
            raise ConfigInvalid("target encoding requires targets and a train mask")
        mask = np.asarray(train_mask, dtype=bool)
        y = np.asarray(targets, dtype=np.float64)
        if len(mask) != n or len(y) != n:
            raise LengthMismatch("values, targets, and train mask must align")
        train_idx = np.nonzero(mask)[0]
        if train_idx.size == 0:
            raise EmptyInput("target encoding requires at least one train row")
        encoder = fit_target_encoder(
            [vals[i] for i in train_idx], y[train_idx], prior, folds, seed=seed
        )
        col = np.empty(n, dtype=np.float64)
        col[train_idx] = apply_target_encoder(encoder, [vals[i] for i in train_idx], "train")
        rest = np.nonzero(~mask)[0]
        col[rest] = apply_target_encoder(encoder, [vals[i] for i in rest], "infer")
        prov = {"method": "target", "prior": prior, "folds": folds,
                "y_mean": encoder.y_mean, "n_categories": len(encoder.categories)}
        return [f"{name}_te"], ["numeric"], [col], prov

    if method == "embedding":
        if table is None:
            raise ConfigInvalid(f"embedding encoding for {name!r} requires an embedding table")
        dim = table.dimension
        block = np.zeros((n, dim), dtype=np.float64)
        missing = np.ones(n, dtype=np.float64)
        for i, v in enumerate(vals):
            if v is None or v == NONE_CATEGORY:
                continue
            vec, found = lookup_embedding(_parse_code_kind(str(v), table), table)
            block[i] = vec
            missing[i] = 0.0 if found else 1.0
        names = [f"{name}_emb_{j}" for j in range(dim)] + [f"{name}_emb_missing"]
        arrays = [block[:, j].copy() for j in range(dim)] + [missing]
        prov = {"method": "embedding", "dimension": dim, "source": table.source}
        return names, ["numeric"] * len(names), arrays, prov

    raise UnknownMethod(f"unknown encoding method {method!r}; expected one of {ENCODER_METHODS}")


def _parse_code_kind(text: str, table: EmbeddingTable):
    from .records import parse_icd9

    return parse_icd9(text, table.key_kind)


# ---------------------------------------------------------------------------
# Feature matrix


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # meta | numeric | categorical | target
    group: str | None = None
    encoder: str | None = None


@dataclass
class FeatureMatrix:
    """Column-oriented feature table with split roles and encoding metadata."""

    schema: tuple[ColumnSpec, ...]
    columns: dict[str, np.ndarray]
    roles: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return len(self.roles)

    def feature_specs(self, groups: Sequence[str] | None = None) -> list[ColumnSpec]:
        chosen = set(groups) if groups is not None else None
        return [
            s
            for s in self.schema
            if s.kind in ("numeric", "categorical")
            and (chosen is None or s.group in chosen)
        ]

    def design(
        self, groups: Sequence[str] | None = None
    ) -> tuple[np.ndarray, list[str], list[int]]:
        """(X, column names, categorical column positions) for the chosen groups."""
        specs = self.feature_specs(groups)
        X = np.column_stack([self.columns[s.name].astype(np.float64) for s in specs])
        names = [s.name for s in specs]
        cat_idx = [j for j, s in enumerate(specs) if s.kind == "categorical"]
        return X, names, cat_idx

    @property
    def target(self) -> np.ndarray:
        return self.columns["los_days"].astype(np.float64)

    def role_mask(self, role: str) -> np.ndarray:
        return self.roles == role

    def row(self, i: int, groups: Sequence[str] | None = None) -> dict[str, float]:
        return {s.name: float(self.columns[s.name][i]) for s in self.feature_specs(groups)}

    def schema_digest(self, groups: Sequence[str] | None = None) -> str:
        payload = "\n".join(
            f"{s.name}|{s.kind}|{s.group}|{s.encoder}" for s in self.feature_specs(groups)
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def featurize(
    dataset: Dataset,
    index: HistoryIndex,
    maps: CodeMapSet,
    cfg: FeatureConfig,
    roles: Sequence[str],
) -> FeatureMatrix:
    """One feature row per non-excluded record.

    Excluded records still contribute history through the index. Encoders
    are fitted on train-role rows; the historical-LoS fallback prior
    defaults to the train rows' mean LoS and is recorded in the matrix
    metadata.
    """
    if len(roles) != len(dataset.records):
        raise LengthMismatch(f"{len(roles)} roles vs {len(dataset.records)} records")
    bad = {r for r in roles if r not in ROLES}
    if bad:
        raise ConfigInvalid(f"unknown roles {sorted(bad)}; expected {ROLES}")
    if maps.elixhauser is None or maps.drg is None:
        raise ConfigInvalid("featurize requires elixhauser and drg tables")

    emitted = [i for i, r in enumerate(roles) if r != "excluded"]
    if not emitted:
        raise EmptyInput("every record is excluded")
    records = [dataset.records[i] for i in emitted]
    row_roles = np.array([roles[i] for i in emitted], dtype=object)
    train_mask = row_roles == "train"

    fallback_prior = cfg.fallback_prior_los
    if fallback_prior is None:
        train_los = [r.los_days for r, m in zip(records, train_mask) if m]
        if not train_los:
            raise ConfigInvalid(
                "fallback prior LoS unset and no train rows to derive it from"
            )
        fallback_prior = sum(train_los) / len(train_los)

    drg_cache: dict[str, str] = {}
    hist_rows = [
        history_features(
            r, index, maps, cfg, fallback_prior=fallback_prior, drg_cache=drg_cache
        )
        for r in records
    ]

    schema: list[ColumnSpec] = []
    columns: dict[str, np.ndarray] = {}

    def add(name: str, kind: str, values, group: str | None = None, encoder: str | None = None):
        schema.append(ColumnSpec(name=name, kind=kind, group=group, encoder=encoder))
        columns[name] = np.asarray(values)

    add("record_index", "meta", np.array(emitted, dtype=np.int64))
    add("patient_id", "meta", np.array([r.patient_id for r in records], dtype=object))
    add("admission_year", "meta", np.array([r.admission_date.year for r in records], dtype=np.int64))
    add("diagnosis_code", "meta", np.array([r.diagnosis.canonical_text for r in records], dtype=object))

    add("age_group", "numeric", [float(r.age_group.index) for r in records], "patient")
    add("n_comorbidities", "numeric", [h["n_comorbidities"] for h in hist_rows], "patient")
    add("elixhauser_index", "numeric", [h["elixhauser_index"] for h in hist_rows], "patient")

    encoder_provenance: dict[str, dict] = {}
    encoder_stream_tags = {"diagnosis": 11, "procedure": 12, "admission_type": 13}

    def encode_into(col_name: str, group: str, method: str, values, table=None):
        names, kinds, arrays, prov = encode_categorical(
            values,
            method,
            train_mask=train_mask,
            targets=[r.los_days for r in records],
            table=table,
            prior=cfg.te_prior,
            folds=cfg.te_folds,
            seed=(cfg.seed, encoder_stream_tags[col_name]),
            name=col_name,
        )
        for n, k, a in zip(names, kinds, arrays):
            add(n, k, a, group, encoder=method)
        encoder_provenance[col_name] = prov

    encode_into(
        "diagnosis",
        "diagnosis",
        cfg.diagnosis_encoder,
        [r.diagnosis.canonical_text for r in records],
        table=maps.diagnosis_embeddings,
    )
    encode_into(
        "procedure",
        "procedure",
        cfg.procedure_encoder,
        [r.procedure.canonical_text if r.procedure else NONE_CATEGORY for r in records],
        table=maps.procedure_embeddings,
    )
    add(
        "procedure_missing",
        "numeric",
        [0.0 if r.procedure else 1.0 for r in records],
        "procedure",
    )
    encode_into(
        "admission_type",
        "type",
        cfg.admission_type_encoder,
        [r.admission_type.value for r in records],
    )
    add("admission_month", "numeric", [float(r.admission_date.month) for r in records], "month")
    add("patient_volume", "numeric", [h["patient_volume"] for h in hist_rows], "volume")
    add(
        "patient_volume_missing",
        "numeric",
        [h["patient_volume_missing"] for h in hist_rows],
        "volume",
    )
    add("historical_los", "numeric", [h["historical_los"] for h in hist_rows], "hist_los")
    add("los_days", "target", [float(r.los_days) for r in records])

    meta = {
        "window_days": cfg.window_days,
        "smoothing_k": cfg.smoothing_k,
        "te_prior": cfg.te_prior,
        "te_folds": cfg.te_folds,
        "seed": cfg.seed,
        "fallback_prior_los": fallback_prior,
        "encoders": encoder_provenance,
    }
    return FeatureMatrix(
        schema=tuple(schema), columns=columns, roles=row_roles, meta=meta
    )


def feature_group_columns(matrix: FeatureMatrix, groups: Sequence[str] | None = None) -> dict[str, list[int]]:
    """Column positions of each feature group within ``matrix.design(groups)``."""
    specs = matrix.feature_specs(groups)
    out: dict[str, list[int]] = {}
    for j, s in enumerate(specs):
        out.setdefault(s.group or s.name, []).append(j)
    return out


# ---------------------------------------------------------------------------
# CSV round trip


def write_feature_matrix(
    matrix: FeatureMatrix,
    path: str | Path,
    *,
    provenance_lines: Sequence[str] = (),
) -> Path:
    """Write the matrix as headered CSV plus a sidecar schema JSON."""
    path = Path(path)
    names = [s.name for s in matrix.schema]
    lines = list(provenance_lines)
    lines.append(",".join(names + ["role"]))
    for i in range(matrix.n_rows):
        cells = []
        for s in matrix.schema:
            v = matrix.columns[s.name][i]
            if s.kind == "meta" and matrix.columns[s.name].dtype == object:
                cells.append(str(v))
            elif float(v).is_integer():
                cells.append(str(int(v)))
            else:
                cells.append(repr(float(v)))
        cells.append(str(matrix.roles[i]))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    sidecar = {
        "provenance": [l for l in provenance_lines if not l.startswith("# created:")],
        "columns": [
            {"name": s.name, "kind": s.kind, "group": s.group, "encoder": s.encoder}
            for s in matrix.schema
        ],
        "meta": matrix.meta,
        "schema_digest": matrix.schema_digest(),
    }
    Path(str(path) + ".schema.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def read_feature_matrix(path: str | Path) -> FeatureMatrix:
    """Load a matrix written by write_feature_matrix (needs the sidecar)."""
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".schema.json").read_text(encoding="utf-8"))
    specs = tuple(
        ColumnSpec(c["name"], c["kind"], c.get("group"), c.get("encoder"))
        for c in sidecar["columns"]
    )
    rows = [
        line.split(",")
        for line in path.read_text(encoding="utf-8").splitlines()
        if line and not line.startswith("#")
    ]
    header, data = rows[0], rows[1:]
    expected = [s.name for s in specs] + ["role"]
    if header != expected:
        raise ConfigInvalid(f"feature CSV header does not match sidecar schema")
    columns: dict[str, np.ndarray] = {}
    for j, s in enumerate(specs):
        raw = [r[j] for r in data]
        if s.kind == "meta" and s.name in ("patient_id", "diagnosis_code"):
            columns[s.name] = np.array(raw, dtype=object)
        elif s.kind == "meta":
            columns[s.name] = np.array([int(v) for v in raw], dtype=np.int64)
        else:
            columns[s.name] = np.array([float(v) for v in raw], dtype=np.float64)
    roles = np.array([r[-1] for r in data], dtype=object)
    return FeatureMatrix(schema=specs, columns=columns, roles=roles, meta=sidecar["meta"])
