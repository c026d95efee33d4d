"""Reference predictors: zero-order hold, linear extrapolation, Elman RNN, LSTM, TCN.

The trainable baselines read the encoder rows of the same windows the
Informer sees (7 channels) and emit ``L_y x 3`` through a linear head on
their final state.  They train on plain position MSE.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError
from .model import Module, ParamBuilder, last_received, to_anchor_frame
from .trajectory import FLAG_CHANNEL, N_CHANNELS, POS_CHANNELS, NormStats

KINDS = ("zero-order-hold", "linear-extrapolation", "elman-rnn", "lstm", "tcn")
TRAINABLE = ("elman-rnn", "lstm", "tcn")


# ---------------------------------------------------------------------------
# closed-form predictors (meter-space windows)
# ---------------------------------------------------------------------------

def _received(encoder_input: np.ndarray) -> np.ndarray:
    return np.flatnonzero(encoder_input[:, FLAG_CHANNEL] < 0.5)


def hold_predict(encoder_input: np.ndarray, L_y: int) -> tuple[np.ndarray, bool]:
    """Repeat the last received encoder sample; (zeros, True) if none arrived."""
    idx = _received(encoder_input)
    if idx.size == 0:
        return np.zeros((L_y, 3)), True
    return np.tile(encoder_input[idx[-1], POS_CHANNELS], (L_y, 1)), False


def linear_predict(encoder_input: np.ndarray, L_y: int, dt: float = 1.0 / 30.0) -> tuple[np.ndarray, bool]:
    """Extrapolate the line through the last two received samples.

    Falls back to hold (flag True) with fewer than two received samples.
    The slope is per-step, so ``dt`` only matters through the index spacing.
    """
    idx = _received(encoder_input)
    if idx.size < 2:
        pred, _ = hold_predict(encoder_input, L_y)
        return pred, True
    i1, i2 = idx[-2], idx[-1]
    p1, p2 = encoder_input[i1, POS_CHANNELS], encoder_input[i2, POS_CHANNELS]
    slope = (p2 - p1) / (i2 - i1)
    L_x = encoder_input.shape[0]
    steps = (L_x - 1 + np.arange(1, L_y + 1)) - i2
    return p2 + steps[:, None] * slope, False


def closed_form_batch(kind: str, encoder_input: np.ndarray, L_y: int, dt: float):
    fn = hold_predict if kind == "zero-order-hold" else linear_predict
    preds, flags = zip(*(fn(e, L_y) if fn is hold_predict else fn(e, L_y, dt) for e in encoder_input))
    return np.stack(preds), np.array(flags)


# ---------------------------------------------------------------------------
# trainable baselines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BaselineConfig:
    kind: str = "lstm"
    hidden: int = 64
    L_x: int = 96
    L_token: int = 48
    L_y: int = 24
    input_channels: int = N_CHANNELS
    kernel: int = 3
    dilations: tuple = (1, 2, 4)
    residual: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TRAINABLE:
            raise ConfigError(f"{self.kind!r} is not a trainable baseline; choose from {TRAINABLE}")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineConfig":
        d = dict(d)
        d["dilations"] = tuple(d.get("dilations", (1, 2, 4)))
        return cls(**d)

    def digest(self) -> str:
        import hashlib
        import json
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class _SequenceBaseline(Module):
    def __init__(self, config: BaselineConfig, stats: NormStats | None = None):
        self.config = config
        self.stats = stats
        pb = ParamBuilder(config.seed)
        self._build(pb)
        h = self.feature_width
        pb.const("head.weight", (h, config.L_y * 3), 0.0)
        pb.const("head.bias", (config.L_y * 3,), 0.0)
        self.params = pb.params

    feature_width: int

    def _build(self, pb: ParamBuilder) -> None:
        raise NotImplementedError

    def features(self, x: Tensor) -> Tensor:
        """(B, L_x, C) -> (B, width) summary of the encoder span."""
        raise NotImplementedError

    def forward(self, encoder_input, decoder_input=None, rng=None, return_latent: bool = False):
        enc = np.asarray(encoder_input.data if isinstance(encoder_input, Tensor) else encoder_input, dtype=float)
        if enc.ndim == 2:
            enc = enc[None]
        cfg = self.config
        if enc.shape[1:] != (cfg.L_x, cfg.input_channels):
            raise ConfigError(f"encoder input {enc.shape[1:]} != ({cfg.L_x}, {cfg.input_channels})")
        anchor = None
        if cfg.residual:
            anchor = last_received(enc)
            enc = to_anchor_frame(enc, anchor)
        h = self.features(Tensor(enc))
        out = self._linear(h, "head").reshape(enc.shape[0], cfg.L_y, 3)
        if anchor is not None:
            out = out + anchor[:, None, :]
        return (out, None) if return_latent else out


class ElmanRNN(_SequenceBaseline):
    kind = "elman-rnn"

    def _build(self, pb):
        c, h = self.config.input_channels, self.config.hidden
        self.feature_width = h
        pb.uniform("rnn.w_x", (c, h), h)
        pb.uniform("rnn.w_h", (h, h), h)
        pb.uniform("rnn.bias", (h,), h)

    def features(self, x):
        B = x.shape[0]
        xw = ag.matmul(x, self.params["rnn.w_x"]) + self.params["rnn.bias"]
        h = Tensor(np.zeros((B, self.config.hidden)))
        w_h = self.params["rnn.w_h"]
        for t in range(x.shape[1]):
            h = ag.tanh(xw[:, t, :] + ag.matmul(h, w_h))
        return h


class LSTM(_SequenceBaseline):
    kind = "lstm"

    def _build(self, pb):
        c, h = self.config.input_channels, self.config.hidden
        self.feature_width = h
        pb.uniform("lstm.w_x", (c, 4 * h), h)
        pb.uniform("lstm.w_h", (h, 4 * h), h)
        bias = pb.uniform("lstm.bias", (4 * h,), h)
        bias.data[h:2 * h] += 1.0   # forget-gate bias

    def features(self, x):
        B = x.shape[0]
        H = self.config.hidden
        xw = ag.matmul(x, self.params["lstm.w_x"]) + self.params["lstm.bias"]
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        w_h = self.params["lstm.w_h"]
        for t in range(x.shape[1]):
            z = xw[:, t, :] + ag.matmul(h, w_h)
            i = ag.sigmoid(z[:, :H])
            f = ag.sigmoid(z[:, H:2 * H])
            g = ag.tanh(z[:, 2 * H:3 * H])
            o = ag.sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            h = o * ag.tanh(c)
        return h


class TCN(_SequenceBaseline):
    """Dilated causal conv blocks (two convs + ReLU each) with residual adds."""

    kind = "tcn"

    def _build(self, pb):
        cfg = self.config
        c, h, k = cfg.input_channels, cfg.hidden, cfg.kernel
        self.feature_width = h
        pb.linear("tcn.input", c, h)
        for i, _ in enumerate(cfg.dilations):
            pb.uniform(f"tcn{i}.conv1.weight", (k, h, h), k * h)
            pb.uniform(f"tcn{i}.conv1.bias", (h,), k * h)
            pb.uniform(f"tcn{i}.conv2.weight", (k, h, h), k * h)
            pb.uniform(f"tcn{i}.conv2.bias", (h,), k * h)

    def sequence(self, x: Tensor) -> Tensor:
        """Per-step causal features (B, L, hidden)."""
        y = self._linear(x, "tcn.input")
        for i, d in enumerate(self.config.dilations):
            z = ag.relu(ag.conv1d(y, self.params[f"tcn{i}.conv1.weight"], self.params[f"tcn{i}.conv1.bias"],
                                  dilation=d, padding="causal"))
            z = ag.conv1d(z, self.params[f"tcn{i}.conv2.weight"], self.params[f"tcn{i}.conv2.bias"],
                          dilation=d, padding="causal")
            y = ag.relu(y + z)
        return y

    def features(self, x):
        return self.sequence(x)[:, -1, :]


_CLASSES = {"elman-rnn": ElmanRNN, "lstm": LSTM, "tcn": TCN}


def build_baseline(config: BaselineConfig, stats: NormStats | None = None) -> _SequenceBaseline:
    return _CLASSES[config.kind](config, stats)


def matched_hidden(kind: str, budget: int, **kw) -> int:
    """Smallest-error hidden width whose parameter count is closest to ``budget``."""
    def count(h):
        return build_baseline(BaselineConfig(kind=kind, hidden=h, **kw)).parameter_count()

    lo, hi = 1, 4096
    while lo < hi:
        mid = (lo + hi) // 2
        if count(mid) < budget:
            lo = mid + 1
        else:
            hi = mid
    candidates = [h for h in (lo - 1, lo) if h >= 1]
    return min(candidates, key=lambda h: abs(count(h) - budget))
