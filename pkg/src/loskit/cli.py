"""Single executable exposing the pipeline as subcommands.

Exit codes: 0 success, 1 validation error (bad arguments, config, or
input data), 2 unexpected runtime failure. Errors go to stderr with the
machine-parsable prefix ``ERROR <code>:``.
"""
from __future__ import annotations

import argparse
import configparser
import datetime as dt
import hashlib
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import __version__
from .codemaps import load_code_maps
from .dataset import load_dataset, write_dataset, write_rejections
from .errors import ConfigInvalid, LosKitError
from .evaluation import (
    get_scenario,
    report_from_json,
    render_report_text,
    run_experiment,
    temporal_split,
    write_report_files,
)
from .features import (
    FeatureConfig,
    featurize,
    read_feature_matrix,
    write_feature_matrix,
)
from .history import build_history_index
from .learn import FAMILIES, HyperGrid, fit_family, grid_search
from .model_io import save_model
from .provenance import config_digest, digest_checked_region, provenance_lines
from .stats import (
    build_year_design,
    discretize_comorbidity,
    discretize_elixhauser,
    fit_random_intercept,
    group_descriptives,
    kruskal_wallis,
    wald_term_table,
)
from .synth import (
    GeneratorConfig,
    generate_dataset,
    marginal_report,
    render_marginal_csv,
    render_marginal_text,
    write_synthetic_maps,
)

SUBCOMMANDS = ("generate", "featurize", "analyze", "train", "evaluate", "report")

DEFAULT_GRIDS = {
    "gbdt": {"n_rounds": (100, 300), "max_depth": (4, 6, 8),
             "min_leaf": (5, 20), "learning_rate": (0.05, 0.1)},
    "forest": {"n_trees": (100, 300), "max_depth": (4, 6, 8), "min_leaf": (5, 20)},
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract is exit 1
        raise _UsageError(message)


def _read_ini(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path:
        if not Path(path).exists():
            raise ConfigInvalid(f"config file not found: {path}")
        parser.read(path)
    return parser


def _get(ini, section, key, cast, default):
    if ini.has_option(section, key):
        raw = ini.get(section, key)
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError:
            raise ConfigInvalid(f"[{section}] {key} = {raw!r} is not a valid {cast.__name__}") from None
    return default


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split(","))


def _generator_config(ini, seed: int) -> GeneratorConfig:
    cfg = GeneratorConfig(seed=seed)
    section = "generator"
    if not ini.has_section(section):
        return cfg
    overrides = {}
    casts = {
        "n_records": int,
        "diagnosis_pool_size": int,
        "procedure_pool_size": int,
        "facility_pool_size": int,
        "department_pool_size": int,
        "diagnosis_zipf": float,
        "procedure_zipf": float,
        "facility_zipf": float,
        "procedure_rate": float,
        "readmission_rate": float,
        "base_log_los": float,
        "diagnosis_effect_sd": float,
        "facility_effect_sd": float,
        "facility_traffic_coef": float,
        "procedure_effect_sd": float,
        "noise_sd": float,
        "age_group_probs": _float_list,
        "admission_type_probs": _float_list,
        "month_probs": _float_list,
        "age_effects": _float_list,
        "type_effects": _float_list,
        "month_effects": _float_list,
        "start_date": dt.date.fromisoformat,
        "end_date": dt.date.fromisoformat,
    }
    for key, cast in casts.items():
        if ini.has_option(section, key):
            try:
                overrides[key] = cast(ini.get(section, key))
            except ValueError:
                raise ConfigInvalid(f"[generator] {key}: cannot parse {ini.get(section, key)!r}") from None
    return replace(cfg, **overrides)


def _feature_config(ini, seed: int) -> FeatureConfig:
    section = "features"
    return FeatureConfig(
        window_days=_get(ini, section, "window_days", int, 90),
        smoothing_k=_get(ini, section, "smoothing_k", float, 5.0),
        te_prior=_get(ini, section, "te_prior", float, 5.0),
        te_folds=_get(ini, section, "te_folds", int, 5),
        seed=seed,
        diagnosis_encoder=_get(ini, section, "diagnosis_encoder", str, "raw"),
        procedure_encoder=_get(ini, section, "procedure_encoder", str, "raw"),
        admission_type_encoder=_get(ini, section, "admission_type_encoder", str, "raw"),
        fallback_prior_los=_get(ini, section, "fallback_prior_los", float, None),
    )


def _grid_from_text(text: str) -> HyperGrid:
    """Parse 'n_rounds=100,300;max_depth=4,6' into a HyperGrid."""
    params = {}
    for part in text.split(";"):
        key, sep, values = part.partition("=")
        if not sep:
            raise ConfigInvalid(f"malformed grid fragment {part!r}")
        parsed = []
        for v in values.split(","):
            v = v.strip()
            try:
                parsed.append(int(v))
            except ValueError:
                try:
                    parsed.append(float(v))
                except ValueError:
                    raise ConfigInvalid(f"grid value {v!r} is not numeric") from None
        params[key.strip()] = tuple(parsed)
    return HyperGrid(params)


def _grid_for(ini, family: str, inline: str | None = None) -> HyperGrid:
    if inline:
        return _grid_from_text(inline)
    section = f"grid.{family}"
    if ini.has_section(section):
        params = {}
        for key in ini.options(section):
            params[key] = tuple(
                int(v) if v.strip().isdigit() else float(v) for v in ini.get(section, key).split(",")
            )
        return HyperGrid(params)
    return HyperGrid(DEFAULT_GRIDS[family])


def _require_paths(*paths: str | None) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise ConfigInvalid(f"path does not exist: {p}")


def _seed_of(ini, args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return _get(ini, "run", "seed", int, 0)


def _write_with_provenance(path: Path, body: str, command: str, seed: int, digest: str) -> None:
    header = "".join(line + "\n" for line in provenance_lines(command, seed, digest))
    path.write_text(header + body, encoding="utf-8")


def _load_records(path: str, rejections_out: Path | None):
    dataset, rejections = load_dataset(path)
    if rejections and rejections_out is not None:
        write_rejections(rejections, rejections_out)
        print(
            f"warning: {len(rejections)} rejected rows written to {rejections_out}",
            file=sys.stderr,
        )
    return dataset


# ---------------------------------------------------------------------------
# Subcommand handlers


def _cmd_generate(args) -> int:
    ini = _read_ini(args.config)
    seed = _seed_of(ini, args)
    gen_cfg = _generator_config(ini, seed)
    digest = config_digest({f.name: getattr(gen_cfg, f.name) for f in fields(gen_cfg)})
    dataset = generate_dataset(gen_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, out, header_lines=provenance_lines("generate", seed, digest))
    if args.maps_out:
        write_synthetic_maps(gen_cfg, args.maps_out)
    if args.marginals_out:
        report = marginal_report(dataset)
        prefix = Path(args.marginals_out)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        _write_with_provenance(
            Path(str(prefix) + ".csv"), render_marginal_csv(report), "generate", seed, digest
        )
        _write_with_provenance(
            Path(str(prefix) + ".txt"), render_marginal_text(report), "generate", seed, digest
        )
    print(f"wrote {dataset.n_records} records to {out}")
    return 0


def _cmd_featurize(args) -> int:
    _require_paths(args.data, args.maps_dir, args.config)
    ini = _read_ini(args.config)
    seed = _seed_of(ini, args)
    cfg = _feature_config(ini, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset = _load_records(args.data, Path(str(out) + ".rejections.csv"))
    maps = load_code_maps(args.maps_dir)
    scenario = get_scenario(args.split_scenario)
    roles, _ = temporal_split(dataset, scenario)
    index = build_history_index(dataset)
    matrix = featurize(dataset, index, maps, cfg, roles)
    digest = config_digest(
        {f.name: getattr(cfg, f.name) for f in fields(cfg)} | {"scenario": scenario.name}
    )
    write_feature_matrix(
        matrix, out, provenance_lines=provenance_lines("featurize", seed, digest)
    )
    print(f"wrote {matrix.n_rows} feature rows to {out}")
    return 0


_ANALYZE_VARIABLES = ("age_group", "comorbidity_bin", "elixhauser_bin", "admission_month", "admission_type")


def _analyze_categories(matrix):
    """(variable name -> per-row category labels) for the statistical tables."""
    cols = matrix.columns
    out = {
        "age_group": [f"{int(v):02d}" for v in cols["age_group"]],
        "comorbidity_bin": [discretize_comorbidity(int(v)) for v in cols["n_comorbidities"]],
        "elixhauser_bin": [discretize_elixhauser(int(v)) for v in cols["elixhauser_index"]],
        "admission_month": [int(v) for v in cols["admission_month"]],
    }
    if "admission_type" in cols:
        mapping = matrix.meta.get("encoders", {}).get("admission_type", {}).get("categories", {})
        id_to_label = {int(v): k for k, v in mapping.items()} if mapping else {}
        out["admission_type"] = [
            id_to_label.get(int(v), str(int(v))) for v in cols["admission_type"]
        ]
    return out


def _cmd_analyze(args) -> int:
    _require_paths(args.features)
    ini = _read_ini(args.config)
    seed = _seed_of(ini, args)
    matrix = read_feature_matrix(args.features)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # digest the input content, not its path, so relocation does not break
    # byte-identical reruns
    features_body = digest_checked_region(Path(args.features).read_text(encoding="utf-8"))
    digest = config_digest({"features_sha": hashlib.sha256(features_body.encode()).hexdigest()})
    los = matrix.target.tolist()
    categories = _analyze_categories(matrix)

    desc_lines = ["variable,category,n,percent,median,std,q25,q75,min,max"]
    kw_lines = ["variable,H,H_corrected,df,p,degenerate"]
    for variable, labels in categories.items():
        table = group_descriptives(los, labels)
        for row in table:
            desc_lines.append(
                f"{variable},{row.group},{row.n},{row.percent:.4f},{row.median:g},"
                f"{row.std:.4f},{row.q25:g},{row.q75:g},{row.min:g},{row.max:g}"
            )
        by_group: dict = {}
        for v, g in zip(los, labels):
            by_group.setdefault(g, []).append(v)
        if len(by_group) >= 2:
            kw = kruskal_wallis(list(by_group.values()))
            kw_lines.append(
                f"{variable},{kw.H:.6f},{kw.H_corrected:.6f},{kw.df},{kw.p:.6e},{kw.degenerate}"
            )
    _write_with_provenance(out_dir / "descriptives.csv", "\n".join(desc_lines) + "\n",
                           "analyze", seed, digest)
    _write_with_provenance(out_dir / "kruskal_wallis.csv", "\n".join(kw_lines) + "\n",
                           "analyze", seed, digest)

    years = matrix.columns["admission_year"].astype(int).tolist()
    groups = matrix.columns["diagnosis_code"].tolist()
    for predictor in ("patient_volume", "historical_los"):
        X, names = build_year_design(matrix.columns[predictor].astype(float), years)
        fit = fit_random_intercept(los, X, groups, term_names=names)
        lines = ["term,estimate,std_error,z,p"]
        for term, est, se, z, p in wald_term_table(fit):
            lines.append(f"{term},{est:.6f},{se:.6f},{z:.4f},{p:.6e}")
        lines.append(f"# sigma_u2: {fit.sigma_u2:.6f}")
        lines.append(f"# sigma_e2: {fit.sigma_e2:.6f}")
        lines.append(f"# loglik: {fit.loglik:.6f}")
        lines.append(f"# converged: {fit.converged} after {fit.n_iter} iterations")
        _write_with_provenance(out_dir / f"mixed_model_{predictor}.csv",
                               "\n".join(lines) + "\n", "analyze", seed, digest)
    print(f"wrote analysis tables to {out_dir}")
    return 0


def _cmd_train(args) -> int:
    _require_paths(args.features, args.config)
    ini = _read_ini(args.config)
    seed = _seed_of(ini, args)
    if args.family not in FAMILIES:
        raise ConfigInvalid(f"unknown family {args.family!r}; expected one of {FAMILIES}")
    matrix = read_feature_matrix(args.features)
    X, names, cat_idx = matrix.design()
    y = matrix.target
    train_m = matrix.role_mask("train")
    val_m = matrix.role_mask("val")
    if not train_m.any() or not val_m.any():
        raise ConfigInvalid("feature matrix needs non-empty train and val roles")
    grid = _grid_for(ini, args.family, args.grid)
    te_prior = matrix.meta.get("te_prior", 5.0)
    te_folds = int(matrix.meta.get("te_folds", 5))
    best_cfg, leaderboard = grid_search(
        args.family,
        grid,
        (X[train_m], y[train_m]),
        (X[val_m], y[val_m]),
        args.metric,
        categorical_columns=cat_idx,
        te_prior=te_prior,
        te_folds=te_folds,
        seed=seed,
    )
    model = fit_family(
        args.family, X[train_m], y[train_m], best_cfg,
        categorical_columns=cat_idx, te_prior=te_prior, te_folds=te_folds,
    )
    out = Path(args.out_model)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = config_digest({"family": args.family, "grid": sorted(grid.params.items())})
    save_model(
        model,
        out,
        schema_hash=matrix.schema_digest(),
        feature_names=tuple(names),
        provenance_lines=provenance_lines("train", seed, digest),
    )
    lb_lines = ["rank,params,train_score,val_score,error"]
    ordered = sorted(
        leaderboard,
        key=lambda r: (r.val_score if r.val_score is not None else float("inf")),
    )
    for rank, row in enumerate(ordered, start=1):
        params = ";".join(f"{k}={v}" for k, v in row.params.items())
        lb_lines.append(
            f"{rank},{params},"
            f"{'' if row.train_score is None else f'{row.train_score:.4f}'},"
            f"{'' if row.val_score is None else f'{row.val_score:.4f}'},"
            f"{row.error or ''}"
        )
    _write_with_provenance(Path(str(out) + ".leaderboard.csv"),
                           "\n".join(lb_lines) + "\n", "train", seed, digest)
    print(f"wrote model to {out}")
    return 0


def _cmd_evaluate(args) -> int:
    _require_paths(args.data, args.maps_dir, args.config)
    ini = _read_ini(args.config)
    seed = _seed_of(ini, args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = _load_records(args.data, out_dir / "rejections.csv")
    maps = load_code_maps(args.maps_dir)
    cfg = _feature_config(ini, seed)
    scenario_names = [
        s.strip() for s in _get(ini, "experiment", "scenarios", str, "A").split(",") if s.strip()
    ]
    family_names = [
        f.strip() for f in _get(ini, "experiment", "families", str, "gbdt").split(",") if f.strip()
    ]
    for fam in family_names:
        if fam not in FAMILIES:
            raise ConfigInvalid(f"unknown family {fam!r}; expected one of {FAMILIES}")
    scenarios = [get_scenario(s) for s in scenario_names]
    grids = {fam: _grid_for(ini, fam) for fam in family_names}
    report = run_experiment(
        dataset,
        maps,
        scenarios=scenarios,
        families=family_names,
        grid=grids,
        seed=seed,
        feature_config=cfg,
        metric=_get(ini, "experiment", "metric", str, "MAE"),
        importance_repeats=_get(ini, "experiment", "importance_repeats", int, 3),
        refit_on_train_val=_get(ini, "experiment", "refit_on_train_val", bool, False),
    )
    digest = config_digest(
        {"scenarios": scenario_names, "families": family_names, "seed": seed}
    )
    write_report_files(report, out_dir, provenance_lines=provenance_lines("evaluate", seed, digest))
    failed = [c for c in report.cells if c.error]
    for c in failed:
        print(f"warning: cell {c.scenario}/{c.rung}/{c.family} failed: {c.error}", file=sys.stderr)
    print(f"wrote evaluation report to {out_dir} ({len(report.cells)} cells, {len(failed)} failed)")
    return 0


def _cmd_report(args) -> int:
    _require_paths(args.eval_dir)
    json_path = Path(args.eval_dir) / "evaluation.json"
    if not json_path.exists():
        raise ConfigInvalid(f"no evaluation.json under {args.eval_dir}")
    json_text = json_path.read_text(encoding="utf-8")
    report = report_from_json(json_text)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = config_digest({"eval_sha": hashlib.sha256(json_text.encode()).hexdigest()})
    _write_with_provenance(out, render_report_text(report), "report", report.seed, digest)
    hist_lines = ["scenario,family,rung,bin_left,bin_right,count"]
    for c in report.cells:
        if c.residuals is None:
            continue
        edges = c.residuals.bin_edges
        for b, count in enumerate(c.residuals.counts):
            hist_lines.append(
                f"{c.scenario},{c.family},{c.rung},{edges[b]!r},{edges[b + 1]!r},{count}"
            )
    _write_with_provenance(
        Path(str(out) + ".residuals.csv"),
        "\n".join(hist_lines) + "\n",
        "report",
        report.seed,
        digest,
    )
    print(f"wrote report to {out}")
    return 0


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> _Parser:
    parser = _Parser(prog="loskit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"loskit {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="|".join(SUBCOMMANDS))

    p = sub.add_parser("generate", help="generate a synthetic dataset", parents=[])
    p.add_argument("--config", help="INI config file ([generator] section)")
    p.add_argument("--out", required=True, help="output dataset CSV")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--maps-out", help="also write matching synthetic code tables here")
    p.add_argument("--marginals-out", help="write <prefix>.csv and <prefix>.txt marginal report")
    p.add_argument("--threads", type=int, default=1, help="worker cap (execution is single-threaded; outputs never depend on it)")
    p.set_defaults(handler=_cmd_generate)

    p = sub.add_parser("featurize", help="compute the feature matrix")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--maps-dir", required=True, help="directory with code tables")
    p.add_argument("--config", help="INI config file ([features] section)")
    p.add_argument("--split-scenario", default="A", help="split scenario name (A or B)")
    p.add_argument("--out", required=True, help="output feature CSV")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(handler=_cmd_featurize)

    p = sub.add_parser("analyze", help="descriptive tables, rank tests, mixed models")
    p.add_argument("--features", required=True, help="feature CSV from featurize")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(handler=_cmd_analyze)

    p = sub.add_parser("train", help="grid-search one model family on a feature matrix")
    p.add_argument("--features", required=True)
    p.add_argument("--family", required=True, help="forest or gbdt")
    p.add_argument("--grid", help="inline grid, e.g. 'n_rounds=100,300;max_depth=4,6'")
    p.add_argument("--metric", default="MAE", help="selection metric: MAE or RMSE")
    p.add_argument("--config", help="INI config file ([grid.<family>] section)")
    p.add_argument("--out-model", required=True)
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("evaluate", help="run the full feature-ladder experiment")
    p.add_argument("--data", required=True)
    p.add_argument("--maps-dir", required=True)
    p.add_argument("--config", help="INI config file ([experiment] and [grid.*] sections)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("report", help="render a human-readable evaluation summary")
    p.add_argument("--eval-dir", required=True, help="directory written by evaluate")
    p.add_argument("--out", required=True, help="output text file")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(handler=_cmd_report)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            print("ERROR Usage: missing subcommand", file=sys.stderr)
            return 1
        return args.handler(args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ERROR Usage: {exc}", file=sys.stderr)
        return 1
    except LosKitError as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"ERROR Internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main(argv: list[str] | None = None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
