"""Year-based split construction, metrics, permutation importance, residual
reporting, and the incremental feature-set experiment runner."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .codemaps import CodeMapSet
from .dataset import Dataset
from .errors import ConfigInvalid, EmptyRole, LengthMismatch, SchemaMismatch
from .features import (
    LADDER,
    RUNG_NAMES,
    FeatureConfig,
    feature_group_columns,
    featurize,
)
from .history import build_history_index
from .learn import HyperGrid, fit_family, grid_search, predict


@dataclass(frozen=True)
class SplitScenario:
    """Year sets assigning every record a train/val/test role or excluding it."""

    name: str
    train_years: frozenset[int]
    val_years: frozenset[int]
    test_years: frozenset[int]

    def __post_init__(self):
        overlap = (
            (self.train_years & self.val_years)
            | (self.train_years & self.test_years)
            | (self.val_years & self.test_years)
        )
        if overlap:
            raise ConfigInvalid(f"scenario {self.name}: overlapping years {sorted(overlap)}")


SCENARIO_A = SplitScenario("A", frozenset({2021}), frozenset({2022}), frozenset({2023}))
SCENARIO_B = SplitScenario("B", frozenset({2020, 2021}), frozenset({2022}), frozenset({2023}))

SCENARIOS = {"A": SCENARIO_A, "B": SCENARIO_B}


def get_scenario(name: str) -> SplitScenario:
    try:
        return SCENARIOS[name.upper()]
    except KeyError:
        raise ConfigInvalid(f"unknown scenario {name!r}; expected one of {sorted(SCENARIOS)}") from None


def temporal_split(dataset: Dataset, scenario: SplitScenario) -> tuple[list[str], int]:
    """Role per record by admission year; returns (roles, excluded count).

    Raises EmptyRole when any of train/val/test receives zero records.
    """
    roles = []
    counts = {"train": 0, "val": 0, "test": 0, "excluded": 0}
    for r in dataset.records:
        year = r.admission_date.year
        if year in scenario.train_years:
            role = "train"
        elif year in scenario.val_years:
            role = "val"
        elif year in scenario.test_years:
            role = "test"
        else:
            role = "excluded"
        roles.append(role)
        counts[role] += 1
    for role in ("train", "val", "test"):
        if counts[role] == 0:
            raise EmptyRole(
                f"scenario {scenario.name} assigns no records to role {role!r}"
            )
    return roles, counts["excluded"]


@dataclass(frozen=True)
class MetricSet:
    """MAE, RMSE, R^2, and adjusted R^2 for n samples and p predictors."""

    mae: float
    rmse: float
    r2: float
    adj_r2: float
    n: int
    p: int
    degenerate_variance: bool = False


def compute_metrics(y: Sequence[float], yhat: Sequence[float], p: int) -> MetricSet:
    """Standard regression metrics; SST = 0 flags degenerate variance (R^2 = NaN)."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if len(y) != len(yhat):
        raise LengthMismatch(f"{len(y)} targets vs {len(yhat)} predictions")
    if len(y) == 0:
        raise LengthMismatch("empty inputs")
    err = y - yhat
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    sst = float(np.sum((y - y.mean()) ** 2))
    n = len(y)
    if sst == 0.0:
        return MetricSet(mae, rmse, float("nan"), float("nan"), n, p, degenerate_variance=True)
    r2 = 1.0 - float(np.sum(err**2)) / sst
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1) if n > p + 1 else float("nan")
    return MetricSet(mae, rmse, r2, adj, n, p)


def permutation_importance(
    model,
    X_val: np.ndarray,
    y_val: Sequence[float],
    groups: Mapping[str, Sequence[int]],
    repeats: int = 3,
    seed: int = 0,
) -> list[tuple[str, float]]:
    """Mean MAE increase from shuffling each feature group's validation columns.

    All columns of a group (an embedding block, say) are permuted with the
    same row order so importance attaches to the whole feature. Results
    are sorted by decreasing importance.
    """
    if repeats < 1:
        raise ConfigInvalid(f"repeats must be >= 1, got {repeats}")
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    base_mae = float(np.mean(np.abs(y_val - predict(model, X_val))))
    n = X_val.shape[0]
    out = []
    for gi, (name, cols) in enumerate(groups.items()):
        cols = list(cols)
        if any(c < 0 or c >= X_val.shape[1] for c in cols):
            raise SchemaMismatch(f"group {name!r} references column outside the matrix")
        deltas = []
        for rep in range(repeats):
            rng = np.random.default_rng((seed, gi, rep))
            perm = rng.permutation(n)
            Xp = X_val.copy()
            Xp[:, cols] = X_val[np.ix_(perm, cols)]
            mae = float(np.mean(np.abs(y_val - predict(model, Xp))))
            deltas.append(mae - base_mae)
        out.append((name, float(np.mean(deltas))))
    out.sort(key=lambda kv: (-kv[1], kv[0]))
    return out


@dataclass(frozen=True)
class ResidualReport:
    """Histogram of residuals kept within [p2, p98], plus unclipped summary stats."""

    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    mean: float
    median: float
    std: float
    p2: float
    p98: float
    n_total: int
    n_kept: int


def residual_report(y: Sequence[float], yhat: Sequence[float], bins: int = 50) -> ResidualReport:
    """Residuals y - yhat with values outside the 2nd-98th percentile removed,
    binned into equal-width bins; summary stats cover all residuals."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if len(y) != len(yhat) or len(y) == 0:
        raise LengthMismatch(f"{len(y)} targets vs {len(yhat)} predictions")
    resid = y - yhat
    p2, p98 = np.quantile(resid, (0.02, 0.98))
    kept = resid[(resid >= p2) & (resid <= p98)]
    if p98 > p2:
        counts, edges = np.histogram(kept, bins=bins, range=(p2, p98))
    else:
        counts, edges = np.array([kept.size]), np.array([p2, p98])
    return ResidualReport(
        bin_edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        mean=float(resid.mean()),
        median=float(np.median(resid)),
        std=float(resid.std(ddof=1)) if len(resid) > 1 else 0.0,
        p2=float(p2),
        p98=float(p98),
        n_total=len(resid),
        n_kept=int(kept.size),
    )


@dataclass
class ExperimentCell:
    """Results of one (scenario, rung, family) experiment."""

    scenario: str
    family: str
    rung: int
    rung_name: str
    best_params: dict | None = None
    leaderboard: list = field(default_factory=list)
    train_metrics: MetricSet | None = None
    val_metrics: MetricSet | None = None
    test_mae: float | None = None
    test_rmse: float | None = None
    importances: list = field(default_factory=list)
    residuals: ResidualReport | None = None
    error: str | None = None


@dataclass
class EvaluationReport:
    cells: list[ExperimentCell]
    rung_names: tuple[str, ...]
    scenarios: tuple[str, ...]
    families: tuple[str, ...]
    seed: int
    excluded_counts: dict = field(default_factory=dict)

    def cell(self, scenario: str, rung: int, family: str) -> ExperimentCell:
        for c in self.cells:
            if c.scenario == scenario and c.rung == rung and c.family == family:
                return c
        raise KeyError((scenario, rung, family))


def run_experiment(
    dataset: Dataset,
    maps: CodeMapSet,
    *,
    scenarios: Sequence[SplitScenario] = (SCENARIO_A,),
    families: Sequence[str] = ("gbdt",),
    grid: HyperGrid | Mapping[str, HyperGrid],
    seed: int = 0,
    feature_config: FeatureConfig | None = None,
    ladder: Sequence[Sequence[str]] = LADDER,
    rung_names: Sequence[str] = RUNG_NAMES,
    metric: str = "MAE",
    importance_repeats: int = 3,
    residual_bins: int = 50,
    refit_on_train_val: bool = False,
) -> EvaluationReport:
    """Grid-search and score every (scenario, rung, family) cell.

    Featurization happens once per scenario with all groups; rungs select
    column subsets, which is equivalent because encoders are fitted per
    column. Errors are recorded per cell without aborting the rest. The
    best configuration is refit on train only unless ``refit_on_train_val``.
    """
    base_cfg = feature_config or FeatureConfig(seed=seed)
    index = build_history_index(dataset)
    cells: list[ExperimentCell] = []
    excluded_counts: dict[str, int] = {}

    for s_i, scenario in enumerate(scenarios):
        roles, excluded = temporal_split(dataset, scenario)
        excluded_counts[scenario.name] = excluded
        matrix = featurize(dataset, index, maps, base_cfg, roles)
        y = matrix.target
        train_m = matrix.role_mask("train")
        val_m = matrix.role_mask("val")
        test_m = matrix.role_mask("test")
        refit_m = train_m | val_m if refit_on_train_val else train_m

        for rung_i, groups in enumerate(ladder):
            X, names, cat_idx = matrix.design(groups)
            group_cols = feature_group_columns(matrix, groups)
            for f_i, family in enumerate(families):
                cell = ExperimentCell(
                    scenario=scenario.name,
                    family=family,
                    rung=rung_i + 1,
                    rung_name=rung_names[rung_i],
                )
                cells.append(cell)
                family_grid = grid[family] if isinstance(grid, Mapping) else grid
                try:
                    best_cfg, leaderboard = grid_search(
                        family,
                        family_grid,
                        (X[train_m], y[train_m]),
                        (X[val_m], y[val_m]),
                        metric,
                        categorical_columns=cat_idx,
                        te_prior=base_cfg.te_prior,
                        te_folds=base_cfg.te_folds,
                        seed=seed,
                    )
                    model = fit_family(
                        family,
                        X[refit_m],
                        y[refit_m],
                        best_cfg,
                        categorical_columns=cat_idx,
                        te_prior=base_cfg.te_prior,
                        te_folds=base_cfg.te_folds,
                    )
                    p = X.shape[1]
                    yhat_val = predict(model, X[val_m])
                    cell.best_params = asdict(best_cfg)
                    cell.leaderboard = [
                        {
                            "params": row.params,
                            "train": row.train_score,
                            "val": row.val_score,
                            "error": row.error,
                        }
                        for row in leaderboard
                    ]
                    cell.train_metrics = compute_metrics(
                        y[train_m], predict(model, X[train_m]), p
                    )
                    cell.val_metrics = compute_metrics(y[val_m], yhat_val, p)
                    test_err = y[test_m] - predict(model, X[test_m])
                    cell.test_mae = float(np.mean(np.abs(test_err)))
                    cell.test_rmse = float(np.sqrt(np.mean(test_err**2)))
                    cell.importances = permutation_importance(
                        model,
                        X[val_m],
                        y[val_m],
                        group_cols,
                        repeats=importance_repeats,
                        seed=(seed * 1000003 + s_i * 1009 + rung_i * 101 + f_i) % (2**31),
                    )
                    cell.residuals = residual_report(y[val_m], yhat_val, bins=residual_bins)
                except Exception as exc:
                    cell.error = f"{type(exc).__name__}: {exc}"

    return EvaluationReport(
        cells=cells,
        rung_names=tuple(rung_names),
        scenarios=tuple(s.name for s in scenarios),
        families=tuple(families),
        seed=seed,
        excluded_counts=excluded_counts,
    )


# ---------------------------------------------------------------------------
# Report serialization


def report_to_json(report: EvaluationReport, provenance: Sequence[str] = ()) -> str:
    def cell_payload(c: ExperimentCell) -> dict:
        return {
            "scenario": c.scenario,
            "family": c.family,
            "rung": c.rung,
            "rung_name": c.rung_name,
            "best_params": c.best_params,
            "leaderboard": c.leaderboard,
            "train": asdict(c.train_metrics) if c.train_metrics else None,
            "val": asdict(c.val_metrics) if c.val_metrics else None,
            "test_mae": c.test_mae,
            "test_rmse": c.test_rmse,
            "importances": c.importances,
            "residuals": asdict(c.residuals) if c.residuals else None,
            "error": c.error,
        }

    payload = {
        "provenance": [l for l in provenance if not l.startswith("# created:")],
        "rung_names": list(report.rung_names),
        "scenarios": list(report.scenarios),
        "families": list(report.families),
        "seed": report.seed,
        "excluded_counts": report.excluded_counts,
        "cells": [cell_payload(c) for c in report.cells],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> EvaluationReport:
    payload = json.loads(text)
    cells = []
    for c in payload["cells"]:
        cells.append(
            ExperimentCell(
                scenario=c["scenario"],
                family=c["family"],
                rung=c["rung"],
                rung_name=c["rung_name"],
                best_params=c.get("best_params"),
                leaderboard=c.get("leaderboard") or [],
                train_metrics=MetricSet(**c["train"]) if c.get("train") else None,
                val_metrics=MetricSet(**c["val"]) if c.get("val") else None,
                test_mae=c.get("test_mae"),
                test_rmse=c.get("test_rmse"),
                importances=[tuple(kv) for kv in c.get("importances") or []],
                residuals=ResidualReport(**{**c["residuals"],
                                            "bin_edges": tuple(c["residuals"]["bin_edges"]),
                                            "counts": tuple(c["residuals"]["counts"])})
                if c.get("residuals")
                else None,
                error=c.get("error"),
            )
        )
    return EvaluationReport(
        cells=cells,
        rung_names=tuple(payload["rung_names"]),
        scenarios=tuple(payload["scenarios"]),
        families=tuple(payload["families"]),
        seed=payload["seed"],
        excluded_counts=payload.get("excluded_counts") or {},
    )


_METRIC_GETTERS = {
    "train_mae": lambda c: c.train_metrics.mae if c.train_metrics else None,
    "train_r2": lambda c: c.train_metrics.r2 if c.train_metrics else None,
    "val_mae": lambda c: c.val_metrics.mae if c.val_metrics else None,
    "val_r2": lambda c: c.val_metrics.r2 if c.val_metrics else None,
    "val_adj_r2": lambda c: c.val_metrics.adj_r2 if c.val_metrics else None,
    "test_mae": lambda c: c.test_mae,
    "test_rmse": lambda c: c.test_rmse,
}


def metric_table_csv(report: EvaluationReport, metric: str) -> str:
    """Rung-by-family rows, one column per scenario, for one metric."""
    getter = _METRIC_GETTERS.get(metric)
    if getter is None:
        raise ConfigInvalid(f"unknown metric {metric!r}; expected one of {sorted(_METRIC_GETTERS)}")
    lines = ["rung,rung_name,family," + ",".join(f"scenario_{s}" for s in report.scenarios)]
    for rung_i, rung_name in enumerate(report.rung_names, start=1):
        for family in report.families:
            vals = []
            for scenario in report.scenarios:
                cell = report.cell(scenario, rung_i, family)
                v = getter(cell)
                vals.append("" if v is None else f"{v:.4f}")
            lines.append(f"{rung_i},{rung_name},{family}," + ",".join(vals))
    return "\n".join(lines) + "\n"


def render_report_text(report: EvaluationReport) -> str:
    out = [
        f"evaluation report (seed {report.seed})",
        f"scenarios: {', '.join(report.scenarios)} | families: {', '.join(report.families)}",
        "",
    ]
    for scenario in report.scenarios:
        out.append(f"scenario {scenario} (excluded records: {report.excluded_counts.get(scenario)})")
        header = f"  {'rung':<18} {'family':<8} {'train MAE':>10} {'val MAE':>9} {'val R2':>7} {'test MAE':>9} {'test RMSE':>10}"
        out.append(header)
        for rung_i, rung_name in enumerate(report.rung_names, start=1):
            for family in report.families:
                c = report.cell(scenario, rung_i, family)
                if c.error:
                    out.append(f"  {rung_name:<18} {family:<8} error: {c.error}")
                    continue
                out.append(
                    f"  {rung_name:<18} {family:<8} "
                    f"{c.train_metrics.mae:>10.3f} {c.val_metrics.mae:>9.3f} "
                    f"{c.val_metrics.r2:>7.3f} {c.test_mae:>9.3f} {c.test_rmse:>10.3f}"
                )
        out.append("")
        final = report.cell(scenario, len(report.rung_names), report.families[0])
        if final.importances:
            out.append(f"  permutation importance (scenario {scenario}, full features, {report.families[0]}):")
            for name, delta in final.importances:
                out.append(f"    {name:<16} {delta:+.4f}")
            out.append("")
    return "\n".join(out)


def write_report_files(report: EvaluationReport, out_dir: str | Path,
                       provenance_lines: Sequence[str] = ()) -> dict[str, Path]:
    """Write report JSON plus one CSV table per metric into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    prefix = "".join(line + "\n" for line in provenance_lines)

    json_path = out_dir / "evaluation.json"
    json_path.write_text(report_to_json(report, provenance_lines), encoding="utf-8")
    written["json"] = json_path
    for metric in _METRIC_GETTERS:
        p = out_dir / f"table_{metric}.csv"
        p.write_text(prefix + metric_table_csv(report, metric), encoding="utf-8")
        written[metric] = p
    return written
