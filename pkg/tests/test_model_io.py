import numpy as np
import pytest

from loskit.errors import FormatError
from loskit.learn import ForestConfig, GbdtConfig, fit_gbdt, fit_random_forest, predict
from loskit.model_io import load_model, save_model


@pytest.fixture
def data():
    rng = np.random.default_rng(21)
    X = np.column_stack([rng.integers(0, 5, 120).astype(float), rng.normal(0, 1, 120)])
    y = X[:, 0] * 2 + X[:, 1] + rng.normal(0, 0.2, 120)
    return X, y


def test_gbdt_round_trip(tmp_path, data):
    X, y = data
    model = fit_gbdt(X, y, GbdtConfig(n_rounds=12, seed=4), categorical_columns=[0])
    path = tmp_path / "model.loskit"
    save_model(model, path, schema_hash="abc123", feature_names=("cat", "num"))
    loaded, header = load_model(path)
    assert header["family"] == "gbdt"
    assert header["schema_hash"] == "abc123"
    np.testing.assert_allclose(predict(loaded, X), predict(model, X), atol=0)
    # unseen category must still fall back to the training mean after reload
    np.testing.assert_allclose(
        predict(loaded, np.array([[77.0, 0.0]])), predict(model, np.array([[77.0, 0.0]]))
    )


def test_forest_round_trip(tmp_path, data):
    X, y = data
    model = fit_random_forest(X, y, ForestConfig(n_trees=6, seed=9))
    path = tmp_path / "forest.loskit"
    save_model(model, path)
    loaded, _ = load_model(path)
    np.testing.assert_allclose(predict(loaded, X), predict(model, X), atol=0)


def test_resave_is_byte_identical(tmp_path, data):
    X, y = data
    model = fit_gbdt(X, y, GbdtConfig(n_rounds=5), categorical_columns=[0])
    p1, p2 = tmp_path / "a.loskit", tmp_path / "b.loskit"
    save_model(model, p1, schema_hash="s")
    loaded, _ = load_model(p1)
    save_model(loaded, p2, schema_hash="s")
    assert p1.read_bytes() == p2.read_bytes()


def test_zero_round_model(tmp_path, data):
    X, y = data
    model = fit_gbdt(X, y, GbdtConfig(n_rounds=0))
    path = tmp_path / "empty.loskit"
    save_model(model, path)
    loaded, _ = load_model(path)
    np.testing.assert_allclose(predict(loaded, X), y.mean())


def test_bad_file_rejected(tmp_path):
    p = tmp_path / "junk.loskit"
    p.write_text("not a model\n")
    with pytest.raises(FormatError):
        load_model(p)
