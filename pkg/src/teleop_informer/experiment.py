"""Synthetic dataset assembly, trial-level splits and model evaluation."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import TRAINABLE, BaselineConfig, build_baseline, closed_form_batch, matched_hidden
from .channel import ChannelParams, simulate_mask, spawn_seeds
from .metrics import MetricsReport, compute_metrics
from .model import InformerModel, ModelConfig, Module
from .trajectory import (SyntheticSpec, Trial, WindowDataset, WindowSpec, concat_datasets,
                         denormalize_positions, generate_synthetic_trial, make_windows, normalize,
                         simulate_network_features, split_by_trial)
from .training import TrainConfig, train


@dataclass(frozen=True)
class DataConfig:
    n_trials: int = 16
    duration_s: float = 60.0
    sample_rate: float = 30.0
    n_val: int = 2
    n_test: int = 3
    latency_ms: float = 20.0
    jitter_ms: float = 5.0
    window: WindowSpec = field(default_factory=WindowSpec)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        d = dict(d)
        if isinstance(d.get("window"), dict):
            d["window"] = WindowSpec(**d["window"])
        return cls(**d)

    def split_ids(self) -> tuple[list[int], list[int], list[int]]:
        n_train = self.n_trials - self.n_val - self.n_test
        if n_train < 1:
            raise ValueError("need at least one training trial")
        ids = list(range(self.n_trials))
        return ids[:n_train], ids[n_train:n_train + self.n_val], ids[n_train + self.n_val:]


def synthetic_trials(cfg: DataConfig, spec: SyntheticSpec | None = None) -> list[Trial]:
    seeds = spawn_seeds(cfg.seed, cfg.n_trials)
    return [generate_synthetic_trial(cfg.duration_s, cfg.sample_rate, spec, seed=s) for s in seeds]


def corrupt_trials(trials: list[Trial], params: ChannelParams | None, cfg: DataConfig) -> WindowDataset:
    """Window every trial under its own channel realization (None = loss-free)."""
    seeds = spawn_seeds(params.seed if params is not None else cfg.seed, 2 * len(trials))
    parts = []
    for i, trial in enumerate(trials):
        if params is None:
            mask = np.zeros(len(trial), dtype=bool)
        else:
            _, mask = simulate_mask(dataclasses.replace(params, seed=seeds[2 * i]), len(trial))
        net = simulate_network_features(mask, cfg.latency_ms, cfg.jitter_ms, seed=seeds[2 * i + 1])
        parts.append(make_windows(trial, cfg.window, mask, net, trial_id=i))
    return concat_datasets(parts)


def build_splits(cfg: DataConfig, params: ChannelParams | None, trials: list[Trial] | None = None):
    """(train, val, test) raw datasets, split by trial so no window straddles splits."""
    trials = trials if trials is not None else synthetic_trials(cfg)
    ds = corrupt_trials(trials, params, cfg)
    return split_by_trial(ds, *cfg.split_ids())


def predict_dataset(model, ds: WindowDataset) -> np.ndarray:
    """Meter-space (N, L_y, 3) predictions for a raw dataset.

    ``model`` is a trained Module or the name of a closed-form baseline.
    """
    if isinstance(model, str):
        pred, _ = closed_form_batch(model, ds.encoder_input, ds.spec.L_y, ds.dt)
        return pred
    norm, _ = normalize(ds, model.stats)
    out = model.predict_normalized(norm.encoder_input, norm.decoder_input)
    return denormalize_positions(out, model.stats)


def evaluate(model, ds: WindowDataset, stats=None) -> tuple[MetricsReport, np.ndarray]:
    """Metrics (meter space, plus normalized space when stats are known) and predictions."""
    pred = predict_dataset(model, ds)
    stats = stats if stats is not None else getattr(model, "stats", None)
    if stats is None:
        return compute_metrics(pred, ds.target), pred
    pn = (pred - stats.pos_mean) / stats.pos_std
    tn = (ds.target - stats.pos_mean) / stats.pos_std
    return compute_metrics(pred, ds.target, pn, tn), pred


def is_module(model) -> bool:
    return isinstance(model, Module)


# ---------------------------------------------------------------------------
# desk-scale comparison preset
# ---------------------------------------------------------------------------

DESK_WINDOW = WindowSpec(L_x=48, L_token=24, L_y=24, stride=8)
DESK_DATA = DataConfig(window=DESK_WINDOW)
DESK_MODEL = dict(d_model=32, n_heads=4, encoder_layers=2, decoder_layers=1, d_ff=64,
                  L_x=48, L_token=24, L_y=24, residual=True)
DESK_TRAIN = dict(epochs=40, patience=8, lr=2e-3, lr_decay=0.9)


@dataclass
class ComparisonEntry:
    kind: str
    report: MetricsReport
    parameters: int = 0
    seconds: float = 0.0
    best_epoch: int = 0


def compare_models(params: ChannelParams | None, data_cfg: DataConfig | None = None,
                   model_cfg=None, train_cfg=None,
                   kinds=("zero-order-hold", "linear-extrapolation", "informer", "elman-rnn", "lstm", "tcn"),
                   progress=None) -> dict[str, ComparisonEntry]:
    """Train and evaluate every predictor on one seeded corrupted dataset.

    Trainable baselines get a hidden width matched to the Informer's parameter
    count and share its window lengths, residual setting, optimizer and seed.
    """
    data_cfg = data_cfg or DESK_DATA
    model_cfg = model_cfg or ModelConfig(**DESK_MODEL)
    train_cfg = train_cfg or TrainConfig(**DESK_TRAIN)
    tr, va, te = build_splits(data_cfg, params)
    budget = InformerModel(model_cfg).parameter_count()
    lengths = dict(L_x=model_cfg.L_x, L_token=model_cfg.L_token, L_y=model_cfg.L_y,
                   residual=model_cfg.residual, seed=model_cfg.seed)
    out = {}
    for kind in kinds:
        t0 = time.perf_counter()
        if kind in ("zero-order-hold", "linear-extrapolation"):
            report, _ = evaluate(kind, te)
            entry = ComparisonEntry(kind, report)
        else:
            if kind == "informer":
                model = InformerModel(model_cfg)
            elif kind in TRAINABLE:
                model = build_baseline(BaselineConfig(kind=kind, hidden=matched_hidden(kind, budget, **lengths),
                                                      **lengths))
            else:
                raise ValueError(f"unknown predictor {kind!r}")
            result = train(model, tr, va, config=train_cfg)
            report, _ = evaluate(model, te)
            entry = ComparisonEntry(kind, report, model.parameter_count(), 0.0, result.best_epoch)
        entry.seconds = time.perf_counter() - t0
        out[kind] = entry
        if progress:
            progress(entry)
    return out
