"""Versioned flat-file serialization for fitted models.

Layout: '#'-prefixed provenance comments, ``key: value`` header lines
(family, config, schema hash, feature names), then one ``tree`` line per
member tree followed by its node records. Floats are written with repr so
round-trips are lossless.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .learn import (
    ForestConfig,
    ForestModel,
    GbdtConfig,
    GbdtModel,
    RegressionTree,
    TargetEncoder,
    TreeConfig,
)

FORMAT_VERSION = 1


def _tree_lines(tree: RegressionTree) -> list[str]:
    lines = [f"tree nodes={tree.n_nodes} features={tree.n_features}"]
    for i in range(tree.n_nodes):
        lines.append(
            f"node {int(tree.feature[i])} {float(tree.threshold[i])!r} {int(tree.left[i])} "
            f"{int(tree.right[i])} {float(tree.value[i])!r} {int(tree.count[i])}"
        )
    return lines


def _parse_tree(lines: list[str], start: int, config: TreeConfig) -> tuple[RegressionTree, int]:
    head = lines[start].split()
    n_nodes = int(head[1].split("=")[1])
    n_features = int(head[2].split("=")[1])
    feature, threshold, left, right, value, count = [], [], [], [], [], []
    for k in range(n_nodes):
        parts = lines[start + 1 + k].split()
        if parts[0] != "node":
            raise FormatError(f"expected node record, got {lines[start + 1 + k]!r}")
        feature.append(int(parts[1]))
        threshold.append(float(parts[2]))
        left.append(int(parts[3]))
        right.append(int(parts[4]))
        value.append(float(parts[5]))
        count.append(int(parts[6]))
    tree = RegressionTree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        count=np.asarray(count, dtype=np.int32),
        n_features=n_features,
        config=config,
    )
    return tree, start + 1 + n_nodes


def _encoder_payload(enc: TargetEncoder) -> dict:
    totals = enc.fold_sums.sum(axis=1)
    counts = enc.fold_counts.sum(axis=1)
    return {
        "prior": enc.prior,
        "y_mean": enc.y_mean,
        "stats": {str(int(c)): [float(totals[i]), float(counts[i])] for i, c in enumerate(enc.categories)},
    }


def _encoder_from_payload(payload: dict) -> TargetEncoder:
    cats = tuple(int(k) for k in payload["stats"])
    sums = np.array([[payload["stats"][str(c)][0]] for c in cats], dtype=np.float64)
    counts = np.array([[payload["stats"][str(c)][1]] for c in cats], dtype=np.float64)
    # One synthetic fold: enough for infer-mode lookups after loading.
    return TargetEncoder(
        prior=float(payload["prior"]),
        n_folds=2,
        seed=0,
        y_mean=float(payload["y_mean"]),
        folds=np.zeros(0, dtype=np.int64),
        categories=cats,
        fold_sums=sums,
        fold_counts=counts,
        n_rows=0,
    )


def save_model(
    model,
    path: str | Path,
    *,
    schema_hash: str = "",
    feature_names: tuple[str, ...] = (),
    provenance_lines: tuple[str, ...] = (),
) -> None:
    """Write a fitted forest or gbdt model (trees preserved losslessly)."""
    lines: list[str] = [f"# loskit-model v{FORMAT_VERSION}"]
    lines.extend(provenance_lines)
    if isinstance(model, ForestModel):
        lines.append("family: forest")
        lines.append(f"config: {json.dumps(asdict(model.config), sort_keys=True)}")
    elif isinstance(model, GbdtModel):
        lines.append("family: gbdt")
        lines.append(f"config: {json.dumps(asdict(model.config), sort_keys=True)}")
        lines.append(f"base: {model.base!r}")
        lines.append(f"categorical_columns: {json.dumps(list(model.categorical_columns))}")
        for col in model.categorical_columns:
            lines.append(
                f"encoder {col}: {json.dumps(_encoder_payload(model.encoders[col]), sort_keys=True)}"
            )
    else:
        raise FormatError(f"cannot serialize model type {type(model).__name__}")
    lines.append(f"schema_hash: {schema_hash}")
    lines.append(f"feature_names: {json.dumps(list(feature_names))}")
    lines.append(f"n_features: {model.n_features}")
    for tree in model.trees:
        lines.extend(_tree_lines(tree))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    """Read a model file back; returns (model, header dict)."""
    raw = Path(path).read_text(encoding="utf-8").splitlines()
    version_seen = False
    header: dict[str, str] = {}
    encoders_raw: dict[int, dict] = {}
    body_start = None
    for i, line in enumerate(raw):
        if line.startswith("#"):
            if line.startswith("# loskit-model"):
                if line.split("v")[-1].strip() != str(FORMAT_VERSION):
                    raise FormatError(f"unsupported model format: {line!r}")
                version_seen = True
            continue
        if line.startswith("tree "):
            body_start = i
            break
        key, sep, value = line.partition(":")
        if not sep:
            raise FormatError(f"malformed header line {line!r}")
        key = key.strip()
        if key.startswith("encoder "):
            encoders_raw[int(key.split()[1])] = json.loads(value.strip())
        else:
            header[key] = value.strip()
    if not version_seen:
        raise FormatError(f"{path}: missing model format marker")
    family = header.get("family")
    if family not in ("forest", "gbdt"):
        raise FormatError(f"unknown model family {family!r}")

    config_payload = json.loads(header["config"])
    trees = []
    if body_start is not None:
        if family == "forest":
            cfg = ForestConfig(**config_payload)
            tree_cfg = TreeConfig(max_depth=cfg.max_depth, min_leaf=cfg.min_leaf)
        else:
            cfg = GbdtConfig(**config_payload)
            tree_cfg = TreeConfig(max_depth=cfg.max_depth, min_leaf=cfg.min_leaf)
        pos = body_start
        while pos < len(raw) and raw[pos].startswith("tree "):
            tree, pos = _parse_tree(raw, pos, tree_cfg)
            trees.append(tree)
    else:
        cfg = (ForestConfig if family == "forest" else GbdtConfig)(**config_payload)

    n_features = int(header["n_features"])
    if family == "forest":
        model = ForestModel(trees=tuple(trees), config=cfg, n_features=n_features)
    else:
        cat_cols = tuple(json.loads(header.get("categorical_columns", "[]")))
        model = GbdtModel(
            base=float(header["base"]),
            trees=tuple(trees),
            config=cfg,
            encoders={c: _encoder_from_payload(encoders_raw[c]) for c in cat_cols},
            categorical_columns=cat_cols,
            n_features=n_features,
        )
    return model, header
