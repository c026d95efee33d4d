"""Mini-batch Adam training shared by the Informer and the trainable baselines."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ConfigError, NonFiniteError
from .model import Module
from .objective import TERM_NAMES, ObjectiveConfig, position_loss, total_loss
from .trajectory import NET_CHANNELS, NormStats, WindowDataset, normalize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    patience: int = 10
    lr_decay: float = 1.0   # multiplicative per-epoch factor
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=1.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.clip_norm = lr, beta1, beta2, eps, clip_norm
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self) -> float:
        """Apply one update from the accumulated grads; returns the pre-clip grad norm."""
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
        # fixed key order keeps the reduction deterministic
        gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        scale = 1.0
        if self.clip_norm and gnorm > self.clip_norm:
            scale = self.clip_norm / gnorm
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k] * scale
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + self.eps)
            p.grad = None
        return gnorm


def batch_objective(model: Module, batch: WindowDataset, objective: ObjectiveConfig,
                    stats: NormStats, rng=None):
    """Forward one normalized batch and evaluate the full objective."""
    w = objective.weights
    need_latent = w.encoder > 0
    out = model.forward(batch.encoder_input, batch.decoder_input, rng=rng, return_latent=need_latent)
    latent = None
    if need_latent:
        out, latent = out
    pos_std, pos_mean = stats.pos_std, stats.pos_mean
    to_meters = lambda t: t * pos_std + pos_mean
    L_tok = batch.spec.L_token
    net_std, net_mean = stats.std[NET_CHANNELS], stats.mean[NET_CHANNELS]
    network = batch.decoder_input[:, L_tok:, NET_CHANNELS] * net_std + net_mean
    enc_latency = batch.encoder_input[..., 5] * stats.std[5] + stats.mean[5]
    recon = None
    if latent is not None and hasattr(model, "reconstruct_encoder_span"):
        recon = model.reconstruct_encoder_span(latent, batch.encoder_input)
    return total_loss(out, batch.target, objective, batch.dt, to_meters=to_meters, network=network,
                      reconstruction=recon, encoder_clean=batch.encoder_clean,
                      encoder_latency=enc_latency)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stats: NormStats | None = None
    seconds: float = 0.0

    def write_csv(self, path) -> None:
        write_history_csv(path, self.history)


HISTORY_FIELDS = ["epoch", "train_total", "val_total", "val_mse"] + [f"train_{t}" for t in TERM_NAMES]


def write_history_csv(path, history: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def evaluate_loss(model: Module, ds: WindowDataset, objective: ObjectiveConfig, stats: NormStats,
                  batch_size: int = 64) -> tuple[float, float]:
    """(objective total, position MSE) averaged over batches weighted by size."""
    tot = mse = 0.0
    n = len(ds)
    if n == 0:
        return float("nan"), float("nan")
    with ag.no_grad():
        for s in range(0, n, batch_size):
            batch = ds.subset(np.arange(s, min(n, s + batch_size)))
            br = batch_objective(model, batch, objective, stats, rng=None)
            tot += float(br.total.data) * len(batch)
            mse += br.terms["position"] * len(batch)
    return tot / n, mse / n


def train(model: Module, train_set: WindowDataset, val_set: WindowDataset,
          objective: ObjectiveConfig | None = None, config: TrainConfig | None = None,
          progress=None) -> TrainResult:
    """Minimize the objective with Adam; early-stop on validation MSE.

    Raw (meter-space) datasets are normalized with statistics of the training
    split, which are stored on the model.  The best-validation parameters are
    restored at the end.
    """
    objective = objective or ObjectiveConfig.plain()
    config = config or TrainConfig()
    t0 = time.perf_counter()
    if not train_set.normalized:
        train_set, stats = normalize(train_set)
        val_set, _ = normalize(val_set, stats)
    else:
        stats = model.stats
    model.stats = stats
    rng = np.random.Generator(np.random.PCG64(config.seed))
    attn_rng = np.random.Generator(np.random.PCG64(config.seed + 1))
    opt = Adam(model.params, config.lr, config.beta1, config.beta2, config.eps, config.clip_norm)
    result = TrainResult(stats=stats)
    best = (np.inf, model.state(), 0)
    stale = 0
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr * config.lr_decay ** (epoch - 1)
        order = rng.permutation(n)
        sums = {t: 0.0 for t in TERM_NAMES}
        total_sum = 0.0
        for b, s in enumerate(range(0, n, config.batch_size)):
            batch = train_set.subset(order[s:s + config.batch_size])
            try:
                br = batch_objective(model, batch, objective, stats, rng=attn_rng)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from None
            if not np.isfinite(br.total.data):
                raise NonFiniteError(f"epoch {epoch}, batch {b}: non-finite loss; terms {br.terms}")
            br.total.backward()
            opt.step()
            total_sum += float(br.total.data) * len(batch)
            for t in TERM_NAMES:
                sums[t] += br.terms[t] * len(batch)
        val_total, val_mse = evaluate_loss(model, val_set, objective, stats)
        row = {"epoch": epoch, "train_total": total_sum / n, "val_total": val_total, "val_mse": val_mse}
        row.update({f"train_{t}": sums[t] / n for t in TERM_NAMES})
        result.history.append(row)
        if progress:
            progress(row)
        log.debug("epoch %d train %.6g val_mse %.6g", epoch, row["train_total"], val_mse)
        if val_mse < best[0]:
            best = (val_mse, model.state(), epoch)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state(best[1])
    result.best_epoch = best[2]
    result.seconds = time.perf_counter() - t0
    return result


def train_mse(model: Module, ds: WindowDataset) -> float:
    """Position MSE of a trained model on a raw dataset, in normalized units."""
    norm, _ = normalize(ds, model.stats)
    pred = model.predict_normalized(norm.encoder_input, norm.decoder_input)
    return float(position_loss(pred, norm.target).data)
