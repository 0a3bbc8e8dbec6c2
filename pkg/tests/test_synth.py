import datetime as dt
import io
from collections import Counter

import numpy as np
import pytest

from loskit.codemaps import load_code_maps
from loskit.dataset import write_dataset
from loskit.errors import ConfigInvalid, EmptyDataset
from loskit.synth import (
    ADMISSION_TYPE_SHARES,
    DEFAULT_MONTH_PROBS,
    GeneratorConfig,
    generate_dataset,
    marginal_report,
    render_marginal_csv,
    write_synthetic_maps,
)

from conftest import make_dataset, make_record


def csv_bytes(dataset) -> bytes:
    buf = io.StringIO()
    write_dataset(dataset, buf)
    return buf.getvalue().encode()


class TestDeterminism:
    def test_same_config_byte_identical(self):
        cfg = GeneratorConfig(seed=77, n_records=800)
        assert csv_bytes(generate_dataset(cfg)) == csv_bytes(generate_dataset(cfg))

    def test_different_seed_differs(self):
        a = generate_dataset(GeneratorConfig(seed=1, n_records=200))
        b = generate_dataset(GeneratorConfig(seed=2, n_records=200))
        assert csv_bytes(a) != csv_bytes(b)

    def test_record_count_exact(self):
        for n in (0, 1, 137):
            assert generate_dataset(GeneratorConfig(seed=0, n_records=n)).n_records == n


class TestValidity:
    def test_all_los_at_least_one(self):
        ds = generate_dataset(GeneratorConfig(seed=5, n_records=2000))
        assert min(r.los_days for r in ds.records) >= 1

    def test_dates_inside_range(self):
        cfg = GeneratorConfig(
            seed=5, n_records=500,
            start_date=dt.date(2021, 3, 15), end_date=dt.date(2022, 11, 2),
        )
        ds = generate_dataset(cfg)
        assert ds.coverage_start >= cfg.start_date
        assert ds.coverage_end <= cfg.end_date

    def test_readmissions_present(self):
        ds = generate_dataset(GeneratorConfig(seed=3, n_records=3000, readmission_rate=0.4))
        assert ds.n_patients < ds.n_records * 0.75

    def test_config_validation(self):
        with pytest.raises(ConfigInvalid):
            GeneratorConfig(seed=-1).validate()
        with pytest.raises(ConfigInvalid):
            GeneratorConfig(noise_sd=0.0).validate()
        with pytest.raises(ConfigInvalid):
            GeneratorConfig(age_group_probs=(0.5, 0.5)).validate()
        with pytest.raises(ConfigInvalid):
            GeneratorConfig(month_probs=tuple([1.0 / 11] * 12)).validate()
        with pytest.raises(ConfigInvalid):
            GeneratorConfig(readmission_rate=1.5).validate()


class TestMarginals:
    def test_admission_type_shares(self):
        ds = generate_dataset(GeneratorConfig(seed=13, n_records=20_000))
        counts = Counter(r.admission_type.value for r in ds.records)
        for label, target in zip(("surgical", "medical", "ordinary"), ADMISSION_TYPE_SHARES):
            share = 100.0 * counts[label] / len(ds)
            assert abs(share - target) < 1.5

    def test_month_distribution_close_to_config(self):
        ds = generate_dataset(GeneratorConfig(seed=13, n_records=20_000))
        counts = Counter(r.admission_date.month for r in ds.records)
        for month in range(1, 13):
            share = counts[month] / len(ds)
            assert abs(share - DEFAULT_MONTH_PROBS[month - 1]) < 0.015

    def test_planted_diagnosis_signal(self):
        ds = generate_dataset(GeneratorConfig(seed=21, n_records=20_000))
        counts = Counter(r.diagnosis.canonical_text for r in ds.records)
        (top, _), (second, _) = counts.most_common(2)
        los_top = np.mean([r.los_days for r in ds.records if r.diagnosis.canonical_text == top])
        los_second = np.mean([r.los_days for r in ds.records if r.diagnosis.canonical_text == second])
        assert abs(los_top - los_second) > 1.0


class TestMarginalReport:
    def test_single_record(self):
        report = marginal_report(make_dataset(make_record()))
        for section in report.sections.values():
            assert [row.percent for row in section] == [100.0]

    def test_empty_dataset_rejected(self):
        with pytest.raises(EmptyDataset):
            marginal_report(make_dataset())

    def test_percentages_sum_to_100(self):
        report = marginal_report(generate_dataset(GeneratorConfig(seed=2, n_records=3000)))
        for name, section in report.sections.items():
            assert abs(sum(r.percent for r in section) - 100.0) < 0.01, name

    def test_year_medians_match_direct_recomputation(self):
        ds = generate_dataset(GeneratorConfig(seed=4, n_records=3000))
        report = marginal_report(ds)
        for row in report.sections["year"]:
            values = [r.los_days for r in ds.records if r.admission_date.year == row.group]
            assert row.median == float(np.median(values))
            assert row.n == len(values)

    def test_csv_rendering_header(self):
        report = marginal_report(generate_dataset(GeneratorConfig(seed=1, n_records=100)))
        text = render_marginal_csv(report)
        assert text.splitlines()[0] == "variable,category,n,percent,median,std,q25,q75,min,max"


class TestSyntheticMaps:
    def test_tables_cover_pools_and_load(self, tmp_path):
        cfg = GeneratorConfig(seed=6, n_records=10, diagnosis_pool_size=50, procedure_pool_size=20)
        written = write_synthetic_maps(cfg, tmp_path)
        maps = load_code_maps(tmp_path)
        assert len(maps.gem.entries) == 50
        assert len(maps.drg.entries) == 50
        assert maps.diagnosis_embeddings.dimension == 16
        assert maps.procedure_embeddings.dimension == 8
        assert set(written) == {
            "gem", "drg", "elixhauser", "diagnosis_embeddings", "procedure_embeddings",
        }
        ds = generate_dataset(cfg)
        for r in ds.records:
            assert r.diagnosis.canonical_text in maps.drg.entries

    def test_deterministic(self, tmp_path):
        cfg = GeneratorConfig(seed=6, n_records=10)
        write_synthetic_maps(cfg, tmp_path / "a")
        write_synthetic_maps(cfg, tmp_path / "b")
        for name in ("gem.csv", "drg.csv", "elixhauser.csv", "diagnosis_embeddings.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
