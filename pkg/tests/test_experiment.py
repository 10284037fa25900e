import json
import re

import numpy as np
import pytest

from _oracles import dominated_oracle
from bncq.cli import main
from bncq.data import RawDataset, prepare
from bncq.experiment import (
    COLUMNS,
    MEAN_FOLD,
    DatasetSpec,
    ExperimentConfig,
    ExperimentError,
    ParetoPoint,
    derive_seed,
    emit_report,
    grid_points,
    pareto_front,
    pareto_indices,
    read_results,
    rows_to_csv,
    run_experiment,
    summary_rows,
)
from bncq.model import BncModel, error_rate
from bncq.optim import OptimizerConfig
from bncq.train import train_bnc


@pytest.fixture()
def toy_csv(tmp_path):
    rng = np.random.default_rng(0)
    n = 150
    y = rng.integers(0, 3, size=n)
    x = np.column_stack([y + rng.normal(scale=0.7, size=n), rng.normal(size=n), (y == 2) + rng.normal(scale=0.5, size=n)])
    path = tmp_path / "toy.csv"
    np.savetxt(path, np.column_stack([x, y]), fmt=["%.4f", "%.4f", "%.4f", "%d"], delimiter=",")
    return path


def _cfg(path, **kw):
    base = dict(dataset={"name": "toy", "path": str(path)}, family="bnc-nb", bits=[2, 32], integer_bits=[1, 2],
                epochs=3, draws=2, batch_size=50)
    base.update(kw)
    return ExperimentConfig(**base)


# -- Pareto -----------------------------------------------------------------


def test_pareto_examples():
    pts = [ParetoPoint("a", 1, 0, 1), ParetoPoint("b", 2, 0, 2), ParetoPoint("c", 1.5, 0, 0.5)]
    assert [p.model_id for p in pareto_front(pts, ("bits", "error"))] == ["a", "c"]
    assert pareto_front(pts[:1]) == pts[:1]
    with pytest.raises(ValueError):
        pareto_front([])


def test_pareto_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for n, dims in [(100, ("bits", "ops", "error")), (1000, ("bits", "ops", "error")), (300, ("bits", "error"))]:
        for coarse in (False, True):
            raw = rng.integers(0, 8, size=(n, 3)) if coarse else rng.random((n, 3))  # coarse grids create ties
            pts = [ParetoPoint(str(k), *map(float, r)) for k, r in enumerate(raw)]
            keep = set(pareto_indices(pts, dims))
            dominated = dominated_oracle([p._asdict() | {"error": p.test_error} for p in pts], dims)
            assert keep == {k for k, d in enumerate(dominated) if not d}


# -- runner -----------------------------------------------------------------


def test_grid_points_and_seeds(toy_csv):
    pts = grid_points(_cfg(toy_csv))
    assert pts == [{"bits": 2, "bi": 1}, {"bits": 2, "bi": 2}, {"bits": 32, "bi": None}]
    assert derive_seed(0, 1) == derive_seed(0, 1) != derive_seed(0, 2)


def test_config_validation(toy_csv, tmp_path):
    with pytest.raises(ValueError):
        _cfg(toy_csv, bits=[])
    with pytest.raises(ValueError):
        _cfg(tmp_path / "missing.csv")
    with pytest.raises(ValueError):
        _cfg(toy_csv, family="svm")
    toml = tmp_path / "c.toml"
    toml.write_text(f'family = "bnc-nb"\nbogus = 1\n[dataset]\nname = "t"\npath = "{toy_csv}"\n')
    with pytest.raises(ValueError, match="bogus"):
        ExperimentConfig.from_toml(toml)


def test_lr0_zero_reports_untrained_error(toy_csv):
    cfg = _cfg(toy_csv, bits=[32], lr0=[0.0], draws=0)
    rows = run_experiment(cfg)
    (fold,) = prepare(cfg.dataset.load(), "holdout", 0)
    model, _ = train_bnc(fold.train, opt=OptimizerConfig(lr0=0.0, epochs=1), seed=derive_seed(derive_seed(0, 0), 0))
    assert float(rows[0]["test_err"]) == error_rate(model, fold.test.samples, fold.test.labels)


def test_best_of_learning_rates_is_recorded(toy_csv):
    cfg = _cfg(toy_csv, bits=[32], lr0=[0.0, 3e-2], draws=0, epochs=10)
    rows = run_experiment(cfg)
    single = [run_experiment(_cfg(toy_csv, bits=[32], lr0=[lr], draws=0, epochs=10))[0] for lr in (0.0, 3e-2)]
    assert rows[0]["test_err"] == min(r["test_err"] for r in single)
    assert rows[0]["lr0"] == min(single, key=lambda r: r["test_err"])["lr0"]


def test_results_csv_is_deterministic_and_resumable(toy_csv, tmp_path):
    cfg = _cfg(toy_csv)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_experiment(cfg, a)
    run_experiment(cfg, b)
    full = a.read_bytes()
    assert full == b.read_bytes()
    assert json.loads(a.with_suffix(".config.json").read_text())["seed"] == 0
    lines = full.decode().splitlines(keepends=True)
    for cut in (1, 2, len(lines) - 1):
        partial = "".join(lines[:cut])
        b.write_text(partial + ("dataset,bnc" if cut == 2 else ""))  # also a torn trailing line
        run_experiment(cfg, b)
        assert b.read_bytes() == full
    b.write_text("not,a,results,file\n")
    with pytest.raises(ExperimentError):
        run_experiment(cfg, b)


def test_parallel_workers_match_serial(toy_csv, tmp_path):
    cfg = _cfg(toy_csv)
    run_experiment(cfg, tmp_path / "s.csv", workers=1)
    run_experiment(cfg, tmp_path / "p.csv", workers=2)
    assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()


def test_kfold_summary_is_mean_of_folds(toy_csv, tmp_path):
    cfg = _cfg(toy_csv, dataset={"name": "toy", "path": str(toy_csv), "split": "kfold", "folds": 3})
    run_experiment(cfg, tmp_path / "k.csv")
    rows = read_results(tmp_path / "k.csv")
    for gi in {r["grid_index"] for r in rows}:
        group = [r for r in rows if r["grid_index"] == gi]
        folds = [r for r in group if r["fold"] != MEAN_FOLD]
        (mean,) = [r for r in group if r["fold"] == MEAN_FOLD]
        assert len(folds) == 3
        assert abs(float(mean["test_err"]) - np.mean([float(r["test_err"]) for r in folds])) <= 1e-12
    assert all(r["fold"] == MEAN_FOLD for r in summary_rows(rows))


def test_error_context_names_grid_point(toy_csv):
    cfg = _cfg(toy_csv, family="cnn", bits=[2], budgets=[1.0])
    with pytest.raises(ExperimentError, match="grid point 0"):
        run_experiment(cfg)


def test_reports(toy_csv, tmp_path):
    rows = run_experiment(_cfg(toy_csv))
    csv_path = tmp_path / "r.csv"
    emitted = emit_report(rows[:3], "csv", csv_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == ",".join(COLUMNS) and len(lines) == 4 and len(emitted) == 3
    front = emit_report(rows, "csv", tmp_path / "p.csv", pareto_only=True)
    pts = [ParetoPoint(str(k), float(r["bits_total"]), float(r["ops"]), float(r["test_err"])) for k, r in enumerate(rows)]
    assert [r["grid_index"] for r in front] == [rows[k]["grid_index"] for k in pareto_indices(pts)]
    svg = tmp_path / "r.svg"
    emit_report(rows, "svg-scatter", svg, log_x=True)
    assert len(re.findall(r'<circle class="point"', svg.read_text())) == len(rows)
    with pytest.raises(ValueError):
        emit_report([], "csv", csv_path)
    with pytest.raises(ExperimentError):
        emit_report(rows, "csv", tmp_path / "no" / "such" / "dir.csv")


def test_rows_to_csv_roundtrip(tmp_path):
    row = {c: None for c in COLUMNS} | {"dataset": "x", "test_err": 0.125, "grid_index": 0, "fold": 0}
    (tmp_path / "r.csv").write_text(rows_to_csv([row]))
    back = read_results(tmp_path / "r.csv")
    assert back[0]["test_err"] == "0.125" and back[0]["B_I"] == ""


# -- CLI --------------------------------------------------------------------


def test_cli_end_to_end(toy_csv, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["discretize", "--data", str(toy_csv), "--out", str(out), "--write-data"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["d"] == 3 and info["classes"] == 3
    assert (out / "discretizer.json").exists() and (out / "discretized.csv").exists()

    assert main(["train-bnc", "--data", str(toy_csv), "--out", str(out), "--epochs", "3", "--bits", "3",
                 "--lambda-hyb", "10"]) == 0
    res = json.loads(capsys.readouterr().out)
    model = BncModel.load(out / "bnc_model.json")
    assert model.quantized and res["bits"] == res["params"] * 3

    assert main(["learn-structure", "--data", str(toy_csv), "--out", str(out), "--epochs", "3"]) == 0
    assert "naive_bayes" in capsys.readouterr().out
    assert main(["train-bnc", "--data", str(toy_csv), "--out", str(out / "tan"), "--epochs", "2",
                 "--structure", str(out / "structure.json")]) == 0
    capsys.readouterr()

    assert main(["train-dnn", "--data", str(toy_csv), "--out", str(out), "--epochs", "2", "--hidden", "5",
                 "--bits", "2", "--batchnorm"]) == 0
    capsys.readouterr()
    assert main(["budget", "--model", str(out / "dnn_model.json")]) == 0
    assert json.loads(capsys.readouterr().out)["bits"] == 2 * (3 * 5 + 5 * 3) + 64 * 5 + 32 * 3

    assert main(["budget", "--fc", "16-10-26", "--bits", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["bits"] == 1672
    assert main(["budget", "--bnc-dims", "16,26"]) == 0
    assert json.loads(capsys.readouterr().out)["ops"] == 442


def test_cli_sweep_pareto_report(toy_csv, tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'family = "bnc-nb"\nbits = [1, 32]\ninteger_bits = [1]\nepochs = 2\ndraws = 1\n'
                   f'[dataset]\nname = "toy"\npath = "{toy_csv}"\n')
    out = tmp_path / "o"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--seed", "4"]) == 0
    results = out / "toy_bnc-nb.csv"
    rows = read_results(results)
    assert len(rows) == 2 and all(r["seed"] == str(derive_seed(4, k)) for k, r in enumerate(rows))
    assert main(["pareto", "--results", str(results), "--out", str(out)]) == 0
    assert main(["report", "--results", str(results), "--out", str(out), "--kind", "svg-scatter"]) == 0
    assert (out / "pareto.csv").exists() and (out / "report.svg").exists()
    capsys.readouterr()


def test_dataset_spec_image_shape(toy_csv, tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "img.csv"
    np.savetxt(path, np.column_stack([rng.random((20, 16)), rng.integers(0, 2, 20)]), delimiter=",")
    raw = DatasetSpec("img", str(path), image_shape=[4, 4]).load()
    assert isinstance(raw, RawDataset) and raw.image_shape == (4, 4)
