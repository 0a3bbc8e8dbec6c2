"""Loaders for the four external code tables: GEM, DRG, Elixhauser, and embeddings.

All tables are headered CSV. Comment lines carry provenance (``# source:``)
and, for embeddings, the declared dimension (``# dimension: D``). Loading is
total: a table either loads fully or raises a located error.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DimensionMismatch, FormatError
from .records import CodeKind, Icd9Code, parse_icd9

UNGROUPED = "UNGROUPED"

TABLE_KINDS = ("gem", "drg", "elixhauser", "embedding")


@dataclass(frozen=True)
class MapTable:
    """Code-to-value table; values keep file order so multi-mappings resolve deterministically."""

    name: str
    key_kind: CodeKind
    entries: Mapping[str, tuple[str, ...]]
    source: str | None = None

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ElixhauserMap:
    """Prefix-matched comorbidity categories with signed integer weights."""

    entries: Mapping[str, tuple[str, int]]
    categories: tuple[str, ...]
    source: str | None = None

    def lookup(self, code: Icd9Code) -> tuple[str, int] | None:
        """Longest-prefix match of the code's canonical text, or None."""
        text = code.canonical_text
        for length in range(len(text), 0, -1):
            hit = self.entries.get(text[:length])
            if hit is not None:
                return hit
        return None

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class EmbeddingTable:
    """Dense code vectors of one declared dimension; missing codes map to zeros."""

    key_kind: CodeKind
    dimension: int
    vectors: Mapping[str, np.ndarray] = field(repr=False, default_factory=dict)
    source: str | None = None

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class CodeMapSet:
    """The loaded table bundle consumed by featurization."""

    gem: MapTable | None = None
    drg: MapTable | None = None
    elixhauser: ElixhauserMap | None = None
    diagnosis_embeddings: EmbeddingTable | None = None
    procedure_embeddings: EmbeddingTable | None = None


def _scan_rows(path: str | Path) -> tuple[list[tuple[int, list[str]]], dict[str, str]]:
    """Return (data rows with line numbers, comment metadata) from a headered CSV."""
    meta: dict[str, str] = {}
    rows: list[tuple[int, list[str]]] = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            for line_no, fields in enumerate(csv.reader(handle), start=1):
                if not fields:
                    continue
                first = fields[0].lstrip()
                if first.startswith("#"):
                    body = ",".join(fields).lstrip("# ").strip()
                    key, sep, value = body.partition(":")
                    if sep:
                        meta[key.strip().lower()] = value.strip()
                    continue
                rows.append((line_no, [f.strip() for f in fields]))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no header row found")
    return rows, meta


def _canonical_key(text: str, kind: CodeKind, line_no: int) -> str:
    try:
        return parse_icd9(text, kind).canonical_text
    except Exception as exc:
        raise FormatError(f"key {text!r} is not valid ICD-9 text: {exc}", line_no) from None


def _load_pair_table(
    path: str | Path,
    *,
    name: str,
    key_kind: CodeKind,
    expected_header: tuple[str, str],
    allow_multi: bool,
) -> MapTable:
    rows, meta = _scan_rows(path)
    header_no, header = rows[0]
    if tuple(h.lower() for h in header) != expected_header:
        raise FormatError(f"expected header {','.join(expected_header)}", header_no)
    entries: dict[str, list[str]] = {}
    for line_no, fields in rows[1:]:
        if len(fields) != 2:
            raise FormatError("expected exactly 2 columns", line_no)
        key = _canonical_key(fields[0], key_kind, line_no)
        value = fields[1]
        if not value:
            raise FormatError("empty value", line_no)
        seen = entries.setdefault(key, [])
        if value in seen:
            raise FormatError(f"duplicate mapping row for key {key!r}", line_no)
        if seen and not allow_multi:
            raise FormatError(f"duplicate key {key!r}", line_no)
        seen.append(value)
    return MapTable(
        name=name,
        key_kind=key_kind,
        entries={k: tuple(v) for k, v in entries.items()},
        source=meta.get("source"),
    )


def load_gem(path: str | Path) -> MapTable:
    """ICD-9 to ICD-10 equivalence table; several equivalents per key are kept in file order."""
    return _load_pair_table(
        path,
        name="gem",
        key_kind=CodeKind.DIAGNOSIS,
        expected_header=("icd9", "icd10"),
        allow_multi=True,
    )


def load_drg(path: str | Path) -> MapTable:
    """Diagnosis-to-DRG grouping table; one group per key."""
    return _load_pair_table(
        path,
        name="drg",
        key_kind=CodeKind.DIAGNOSIS,
        expected_header=("icd9", "drg"),
        allow_multi=False,
    )


def load_elixhauser(path: str | Path) -> ElixhauserMap:
    """Prefix,category,weight table; prefixes are stored verbatim after validation."""
    rows, meta = _scan_rows(path)
    header_no, header = rows[0]
    if tuple(h.lower() for h in header) != ("prefix", "category", "weight"):
        raise FormatError("expected header prefix,category,weight", header_no)
    entries: dict[str, tuple[str, int]] = {}
    for line_no, fields in rows[1:]:
        if len(fields) != 3:
            raise FormatError("expected exactly 3 columns", line_no)
        prefix, category, weight_text = fields
        _canonical_key(prefix, CodeKind.DIAGNOSIS, line_no)
        if prefix in entries:
            raise FormatError(f"duplicate prefix {prefix!r}", line_no)
        if not category:
            raise FormatError("empty category", line_no)
        try:
            weight = int(weight_text)
        except ValueError:
            raise FormatError(f"weight {weight_text!r} is not an integer", line_no) from None
        entries[prefix] = (category, weight)

    declared = meta.get("categories")
    if declared:
        categories = tuple(c.strip() for c in declared.split("|") if c.strip())
        for prefix, (category, _) in entries.items():
            if category not in categories:
                raise FormatError(
                    f"category {category!r} of prefix {prefix!r} not in declared list"
                )
    else:
        categories = tuple(sorted({cat for cat, _ in entries.values()}))
    return ElixhauserMap(entries=entries, categories=categories, source=meta.get("source"))


def load_embedding_table(path: str | Path, key_kind: CodeKind) -> EmbeddingTable:
    """Load ``code,v1,...,vD`` vectors; D comes from the ``# dimension: D`` comment line."""
    rows, meta = _scan_rows(path)
    if "dimension" not in meta:
        raise FormatError(f"{path}: missing '# dimension: D' comment line")
    try:
        dimension = int(meta["dimension"])
    except ValueError:
        raise FormatError(f"dimension {meta['dimension']!r} is not an integer") from None
    if dimension < 1:
        raise FormatError(f"dimension must be >= 1, got {dimension}")
    header_no, header = rows[0]
    if header[0].lower() != "code":
        raise FormatError("expected header starting with 'code'", header_no)
    vectors: dict[str, np.ndarray] = {}
    for line_no, fields in rows[1:]:
        if len(fields) != dimension + 1:
            raise DimensionMismatch(
                f"line {line_no}: expected {dimension} components, got {len(fields) - 1}"
            )
        key = _canonical_key(fields[0], key_kind, line_no)
        if key in vectors:
            raise FormatError(f"duplicate key {key!r}", line_no)
        try:
            vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
        except ValueError:
            raise FormatError("non-numeric component", line_no) from None
        if not np.all(np.isfinite(vec)):
            raise FormatError("non-finite component", line_no)
        vectors[key] = vec
    return EmbeddingTable(
        key_kind=key_kind,
        dimension=dimension,
        vectors=vectors,
        source=meta.get("source"),
    )


def load_map_table(
    path: str | Path,
    kind: str,
    *,
    key_kind: CodeKind = CodeKind.DIAGNOSIS,
) -> MapTable | ElixhauserMap | EmbeddingTable:
    """Dispatch on table kind: gem, drg, elixhauser, or embedding."""
    if kind == "gem":
        return load_gem(path)
    if kind == "drg":
        return load_drg(path)
    if kind == "elixhauser":
        return load_elixhauser(path)
    if kind == "embedding":
        return load_embedding_table(path, key_kind)
    raise FormatError(f"unknown table kind {kind!r}; expected one of {TABLE_KINDS}")


def map_icd9_to_icd10(code: Icd9Code, gem: MapTable) -> str | None:
    """First listed ICD-10 equivalent, or None when the code is unmapped."""
    values = gem.entries.get(code.canonical_text)
    return values[0] if values else None


def drg_group_of(code: Icd9Code, drg: MapTable) -> str:
    """Mapped DRG group id, or the UNGROUPED sentinel."""
    values = drg.entries.get(code.canonical_text)
    return values[0] if values else UNGROUPED


def lookup_embedding(code: Icd9Code, table: EmbeddingTable) -> tuple[np.ndarray, bool]:
    """Stored vector and True, or a zero vector of the table dimension and False."""
    vec = table.vectors.get(code.canonical_text)
    if vec is None:
        return np.zeros(table.dimension, dtype=np.float64), False
    return vec, True


MAP_FILENAMES = {
    "gem": "gem.csv",
    "drg": "drg.csv",
    "elixhauser": "elixhauser.csv",
    "diagnosis_embeddings": "diagnosis_embeddings.csv",
    "procedure_embeddings": "procedure_embeddings.csv",
}


def load_code_maps(maps_dir: str | Path) -> CodeMapSet:
    """Load whichever of the conventional table files exist in ``maps_dir``."""
    maps_dir = Path(maps_dir)

    def maybe(name: str):
        p = maps_dir / MAP_FILENAMES[name]
        return p if p.exists() else None

    gem_path = maybe("gem")
    drg_path = maybe("drg")
    elix_path = maybe("elixhauser")
    demb_path = maybe("diagnosis_embeddings")
    pemb_path = maybe("procedure_embeddings")
    return CodeMapSet(
        gem=load_gem(gem_path) if gem_path else None,
        drg=load_drg(drg_path) if drg_path else None,
        elixhauser=load_elixhauser(elix_path) if elix_path else None,
        diagnosis_embeddings=(
            load_embedding_table(demb_path, CodeKind.DIAGNOSIS) if demb_path else None
        ),
        procedure_embeddings=(
            load_embedding_table(pemb_path, CodeKind.PROCEDURE) if pemb_path else None
        ),
    )
