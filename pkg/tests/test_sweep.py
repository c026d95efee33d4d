import csv
import io

import numpy as np
import pytest

from teleop_informer.channel import SEVERITY_GRID, ChannelParams
from teleop_informer.checks import TINY_MODEL
from teleop_informer.experiment import DataConfig, build_splits, evaluate
from teleop_informer.model import InformerModel, ModelConfig
from teleop_informer.sweep import SWEEP_COLUMNS, run_sweep, sweep_csv
from teleop_informer.training import TrainConfig, train
from teleop_informer.trajectory import WindowSpec

DATA = DataConfig(n_trials=5, duration_s=12.0, n_val=1, n_test=1,
                  window=WindowSpec(L_x=16, L_token=8, L_y=4, stride=8))
MODEL = ModelConfig(**TINY_MODEL)
TRAIN = TrainConfig(epochs=2)


def test_column_order_matches_table_layout():
    assert SWEEP_COLUMNS[:10] == ["burst_density", "gap_density", "burst_length", "gap_length",
                                  "MSE", "MAE", "RMSE", "accuracy_x", "accuracy_y", "accuracy_z"]


def test_empty_grid_writes_header_only(tmp_path):
    rows = run_sweep([], DATA, MODEL, TRAIN, out_dir=tmp_path)
    assert rows == []
    assert (tmp_path / "sweep.csv").read_text() == ",".join(SWEEP_COLUMNS) + "\n"


def test_sweep_rows_and_byte_stability(tmp_path):
    grid = [ChannelParams(*row, seed=0) for row in SEVERITY_GRID[:2]]
    rows = run_sweep(grid, DATA, MODEL, TRAIN, out_dir=tmp_path / "a")
    again = run_sweep(grid, DATA, MODEL, TRAIN, out_dir=tmp_path / "b")
    assert len(rows) == 2 and all(r.ok for r in rows)
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.csv").read_bytes()
    parsed = list(csv.DictReader(io.StringIO(a.decode())))
    assert float(parsed[0]["burst_density"]) == 0.3 and float(parsed[1]["gap_length"]) == 7.0
    assert (tmp_path / "a" / "row0" / "series.csv").exists()


def test_retrain_writes_history(tmp_path):
    grid = [ChannelParams(*SEVERITY_GRID[0], seed=0)]
    rows = run_sweep(grid, DATA, MODEL, TRAIN, out_dir=tmp_path, retrain=True)
    assert rows[0].ok
    assert (tmp_path / "row0" / "history.csv").read_text().startswith("epoch,")


def test_row_failure_is_recorded_and_sweep_continues():
    grid = [ChannelParams(*SEVERITY_GRID[0], seed=0), ChannelParams(*SEVERITY_GRID[1], seed=0)]
    short = DataConfig(n_trials=5, duration_s=12.0, n_val=1, n_test=1,
                       window=WindowSpec(L_x=16, L_token=8, L_y=4, stride=8))
    model = InformerModel(ModelConfig(**{**TINY_MODEL, "L_x": 32, "L_token": 8}))
    model.stats = None
    rows = run_sweep(grid, short, MODEL, TRAIN, model=model)
    assert len(rows) == 2
    assert all(not r.ok for r in rows)
    assert "Error" in rows[0].error
    assert sweep_csv(rows).count("\n") == 3


def test_loss_free_row_matches_clean_evaluation():
    tr, va, te_clean = build_splits(DATA, None)
    model = InformerModel(MODEL)
    train(model, tr, va, config=TRAIN)
    clean, _ = evaluate(model, te_clean)
    rows = run_sweep([ChannelParams(0.0, 1.0, 4, 8, seed=0)], DATA, MODEL, TRAIN, model=model)
    assert rows[0].mse == pytest.approx(clean.meters.mse, rel=0.05)
    assert np.allclose(rows[0].accuracy, clean.accuracy, rtol=0.05)
