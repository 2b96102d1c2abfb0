import json

import numpy as np
import pytest

from bdl_referral import bench
from bdl_referral.bench import (
    BenchmarkConfig,
    BenchmarkReport,
    frozen_config,
    load_datasets,
    random_flatness,
    referral_gain,
    run_benchmark,
)
from bdl_referral.data import GeneratorSpec, export_csv, generate_synthetic

TINY_GEN = GeneratorSpec(n_train=300, n_test=200, n_shifted=200).to_dict()


def tiny(**kw):
    base = dict(methods=("deterministic",), n_seeds=2, n_samples=10, max_epochs=3,
                hidden_layer_sizes=(8,), data={"generator": TINY_GEN, "seed": 1}, base_seed=7)
    base.update(kw)
    return BenchmarkConfig(**base)


@pytest.fixture(scope="module")
def report():
    return run_benchmark(tiny(methods=("deterministic", "random")))


def test_structure(report):
    assert set(report.results) == {"deterministic", "random"}
    for method in report.results:
        assert set(report.results[method]) == {"test", "shifted_test"}
        cell = report.results[method]["test"]
        assert cell["status"] == "ok" and cell["seed_indices"] == [0, 1]
        curve = report.curve(method, "test")
        assert curve.n_seeds == 2 and len(curve.accuracy_stderr) == 6
        assert len(curve.per_seed_accuracy) == 2
        assert set(cell["roc"][0]) == {repr(0.6), repr(0.9)}
        assert "clean" in cell["mean_uncertainty_by_region"]
    assert "ood_region" in report.results["deterministic"]["shifted_test"]["mean_uncertainty_by_region"]
    assert len(report.cells) == 4 and not report.failed


def test_rerun_byte_identical(report):
    again = run_benchmark(tiny(methods=("deterministic", "random")))
    assert again.to_json() == report.to_json()
    assert "wall_clock" not in report.to_json()
    assert set(report.timings) == {"deterministic/0", "deterministic/1", "random/0", "random/1"}


def test_worker_count_independent(report):
    parallel = run_benchmark(tiny(methods=("deterministic", "random")), n_workers=2)
    assert parallel.to_json() == report.to_json()


def test_adding_method_keeps_results(report):
    alone = run_benchmark(tiny(methods=("random",)))
    assert alone.results["random"] == report.results["random"]


def test_cell_seeds():
    cfg = tiny()
    assert cfg.cell_seed(cfg.method_index("mfvi"), 4) == 7 + 2000 + 4


def test_fault_isolation(monkeypatch):
    real = bench.make_estimator

    def flaky(method, **params):
        if method == "mc_dropout" and params["random_state"] % 1000 == 7:
            raise RuntimeError("boom")
        return real(method, **params)

    monkeypatch.setattr(bench, "make_estimator", flaky)
    rep = run_benchmark(tiny(methods=("deterministic", "mc_dropout"), n_seeds=2, base_seed=7))
    failed = rep.failed
    assert len(failed) == 1 and failed[0]["method"] == "mc_dropout" and "boom" in failed[0]["error"]
    assert rep.results["mc_dropout"]["test"]["seed_indices"] == [1]
    monkeypatch.setattr(bench, "make_estimator", real)
    clean = run_benchmark(tiny(methods=("deterministic",), n_seeds=2, base_seed=7))
    assert rep.results["deterministic"] == clean.results["deterministic"]


def test_all_seeds_failing_marks_cell(monkeypatch):
    def broken(method, **params):
        raise ValueError("no")

    monkeypatch.setattr(bench, "make_estimator", broken)
    rep = run_benchmark(tiny())
    cell = rep.results["deterministic"]["test"]
    assert cell["status"] == "failed" and cell["errors"] == ["ValueError: no"] * 2


def test_config_round_trip(tmp_path):
    cfg = tiny(methods=("mfvi", "random"), fractions=(0.5, 0.7, 0.9, 1.0), roc_fractions=(0.9,))
    assert BenchmarkConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    cfg.to_json(tmp_path / "c.json")
    assert BenchmarkConfig.from_json(tmp_path / "c.json") == cfg


@pytest.mark.parametrize("bad", [
    {"n_seeds": 0}, {"methods": ("hmc",)}, {"methods": ()}, {"n_samples": 0},
    {"data": {}}, {"table_fractions": (0.55,)}, {"format_version": 2},
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        tiny(**bad)
    with pytest.raises(ValueError):
        BenchmarkConfig.from_dict({"bogus": 1})


def test_frozen_config_defaults():
    cfg = frozen_config()
    assert cfg.n_seeds == 3 and cfg.n_samples == 100
    assert GeneratorSpec.from_dict(cfg.data["generator"]) == GeneratorSpec()
    assert cfg.learning_rate == 4e-4 and cfg.batch_size == 64
    assert BenchmarkConfig().n_seeds == 9


def test_csv_data_source(tmp_path):
    splits = generate_synthetic(GeneratorSpec(n_train=300, n_test=200, n_shifted=200), 1)
    paths = {}
    for name, ds in splits.items():
        paths[name] = str(export_csv(ds, tmp_path / f"{name}.csv"))
    cfg = tiny(data={"csv": paths})
    from_csv = load_datasets(cfg)
    from_gen = load_datasets(tiny())
    for k in from_gen:
        assert np.array_equal(from_csv[k].X, from_gen[k].X)
    assert run_benchmark(cfg).results == run_benchmark(tiny()).results


def test_normalisation_uses_train(report):
    ds = load_datasets(tiny())
    assert np.all(np.abs(ds["train"].X.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(ds["shifted_test"].X.mean(axis=0)) > 0.05)


def test_report_json_round_trip(report, tmp_path):
    p = bench.write_report_json(report, tmp_path / "r.json")
    back = BenchmarkReport.from_json(p)
    assert back.to_json() == report.to_json()
    d = json.loads(p.read_text())
    d["format_version"] = 0
    with pytest.raises(ValueError):
        BenchmarkReport.from_dict(d)


def test_summary_helpers(report):
    assert referral_gain(report, "deterministic") == pytest.approx(
        report.curve("deterministic", "test").accuracy[0] - report.curve("deterministic", "test").accuracy[-1])
    assert random_flatness(report) >= 0
