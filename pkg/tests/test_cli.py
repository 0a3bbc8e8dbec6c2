import json
import re
from pathlib import Path

import pytest

from loskit.cli import run
from loskit.provenance import digest_checked_region

CONFIG_SMALL = """\
[run]
seed = 11

[generator]
n_records = 1200
diagnosis_pool_size = 60
procedure_pool_size = 30
facility_pool_size = 12
department_pool_size = 6

[features]
window_days = 90
smoothing_k = 5

[experiment]
scenarios = A
families = gbdt
importance_repeats = 1

[grid.gbdt]
n_rounds = 8
max_depth = 3
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "loskit.ini").write_text(CONFIG_SMALL)
    return d


@pytest.fixture(scope="module")
def generated(workdir):
    code = run([
        "generate",
        "--config", str(workdir / "loskit.ini"),
        "--out", str(workdir / "data.csv"),
        "--maps-out", str(workdir / "maps"),
        "--marginals-out", str(workdir / "marginals"),
    ])
    assert code == 0
    return workdir


def test_generate_outputs(generated):
    assert (generated / "data.csv").exists()
    assert (generated / "maps" / "drg.csv").exists()
    assert (generated / "marginals.csv").exists()
    assert (generated / "marginals.txt").exists()
    head = (generated / "data.csv").read_text().splitlines()[:5]
    assert head[0].startswith("# loskit")
    assert any(line.startswith("# seed: 11") for line in head)
    assert any(line.startswith("# config: sha256:") for line in head)


def test_generate_deterministic_rerun(generated, tmp_path):
    out2 = tmp_path / "data2.csv"
    assert run([
        "generate", "--config", str(generated / "loskit.ini"), "--out", str(out2),
    ]) == 0
    a = digest_checked_region((generated / "data.csv").read_text())
    b = digest_checked_region(out2.read_text())
    assert a == b


def test_featurize_and_analyze_and_train(generated):
    features = generated / "features.csv"
    assert run([
        "featurize",
        "--data", str(generated / "data.csv"),
        "--maps-dir", str(generated / "maps"),
        "--config", str(generated / "loskit.ini"),
        "--split-scenario", "A",
        "--out", str(features),
    ]) == 0
    assert features.exists()
    sidecar = json.loads((Path(str(features) + ".schema.json")).read_text())
    assert any(c["name"] == "historical_los" for c in sidecar["columns"])

    out_dir = generated / "analysis"
    assert run(["analyze", "--features", str(features), "--out-dir", str(out_dir)]) == 0
    kw = (out_dir / "kruskal_wallis.csv").read_text()
    body = [l for l in kw.splitlines() if l and not l.startswith("#")]
    assert body[0] == "variable,H,H_corrected,df,p,degenerate"
    assert any(l.startswith("age_group,") for l in body)
    mm = (out_dir / "mixed_model_patient_volume.csv").read_text()
    assert "predictor:year_" in mm and "# sigma_u2:" in mm

    model_path = generated / "model.loskit"
    assert run([
        "train",
        "--features", str(features),
        "--family", "gbdt",
        "--grid", "n_rounds=6;max_depth=3",
        "--out-model", str(model_path),
    ]) == 0
    assert model_path.exists()
    assert Path(str(model_path) + ".leaderboard.csv").exists()
    header = model_path.read_text().splitlines()
    assert header[0].startswith("# loskit-model v1")


def test_evaluate_and_report(generated):
    out_dir = generated / "eval"
    assert run([
        "evaluate",
        "--data", str(generated / "data.csv"),
        "--maps-dir", str(generated / "maps"),
        "--config", str(generated / "loskit.ini"),
        "--out-dir", str(out_dir),
    ]) == 0
    payload = json.loads((out_dir / "evaluation.json").read_text())
    assert len(payload["cells"]) == 6  # 1 family x 6 rungs x 1 scenario
    assert (out_dir / "table_val_r2.csv").exists()

    report_txt = generated / "report.txt"
    assert run(["report", "--eval-dir", str(out_dir), "--out", str(report_txt)]) == 0
    text = report_txt.read_text()
    assert "scenario A" in text
    assert Path(str(report_txt) + ".residuals.csv").exists()


def test_unknown_subcommand_exits_1(capsys):
    assert run(["frobnicate"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err.lower()
    assert "ERROR" in err


def test_missing_subcommand_exits_1(capsys):
    assert run([]) == 1
    assert "ERROR" in capsys.readouterr().err


def test_missing_required_flag_exits_1(capsys):
    assert run(["generate"]) == 1
    err = capsys.readouterr().err
    assert "ERROR Usage:" in err


def test_validation_error_exits_1(workdir, capsys):
    assert run([
        "featurize",
        "--data", str(workdir / "nope.csv"),
        "--maps-dir", str(workdir),
        "--out", str(workdir / "x.csv"),
    ]) == 1
    assert re.search(r"ERROR \w+:", capsys.readouterr().err)


def test_empty_role_maps_to_exit_1(workdir, tmp_path, capsys):
    # dataset with no 2023 records cannot satisfy scenario A
    config = tmp_path / "cfg.ini"
    config.write_text(
        "[generator]\nn_records = 300\nstart_date = 2021-01-01\nend_date = 2022-12-31\n"
    )
    data = tmp_path / "short.csv"
    assert run(["generate", "--config", str(config), "--out", str(data), "--seed", "3"]) == 0
    code = run([
        "featurize",
        "--data", str(data),
        "--maps-dir", str(workdir / "maps"),
        "--split-scenario", "A",
        "--out", str(tmp_path / "f.csv"),
    ])
    assert code == 1
    assert "ERROR EmptyRole:" in capsys.readouterr().err

    code = run([
        "evaluate",
        "--data", str(data),
        "--maps-dir", str(workdir / "maps"),
        "--config", str(workdir / "loskit.ini"),
        "--out-dir", str(tmp_path / "eval"),
    ])
    assert code == 1
    assert "ERROR EmptyRole:" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["--version"])
    assert exc.value.code == 0
