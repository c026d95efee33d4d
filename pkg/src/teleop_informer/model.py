"""Informer-style encoder/decoder predictor.

Pipeline: value projection + sinusoidal positional encoding -> encoder of
ProbSparse self-attention layers with Conv1d/ELU/MaxPool distilling between
them -> decoder (causal full self-attention, cross-attention to the encoder
latent) run once over ``Concat(X_token, X_0)`` -> linear head to x, y, z.

An auxiliary linear head maps the encoder latent back onto the encoder
span (``L_x`` rows of positions); the training objective uses it as the
reconstruction term of the encoder loss.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .attention import full_attention, probsparse_attention
from .autograd import Tensor
from .errors import ConfigError
from .serialization import CHECKPOINT_MAGIC, read_arrays, write_arrays
from .trajectory import (FLAG_CHANNEL, N_CHANNELS, NET_CHANNELS, POS_CHANNELS, NormStats,
                         SequenceWindow, NetworkFeatures, denormalize_positions, scale_inputs)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    encoder_layers: int = 3
    decoder_layers: int = 2
    distilling: bool = True
    c: float = 5.0
    input_channels: int = N_CHANNELS
    output_dim: int = 3
    L_x: int = 96
    L_token: int = 48
    L_y: int = 24
    d_ff: int = 128
    conv_kernel: int = 3
    attention_mode: str = "sampled"     # exact | sampled
    position_weighting: str = "verbatim"  # off | verbatim | per_query
    lambda_1: float = 0.0
    weighting: tuple = (1.0, 1.0, 1.0)   # diagonal of W
    residual: bool = False               # predict offsets from the last received sample
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        for name in ("d_model", "n_heads", "encoder_layers", "decoder_layers", "L_x", "L_token",
                     "L_y", "d_ff", "conv_kernel", "input_channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.output_dim != 3:
            raise ConfigError("output_dim is fixed to 3")
        if self.L_token > self.L_x:
            raise ConfigError(f"L_token ({self.L_token}) must not exceed L_x ({self.L_x})")
        if self.latent_length() < 1:
            raise ConfigError(f"L_x={self.L_x} underflows after {self.encoder_layers - 1} distilling steps")
        if self.attention_mode not in ("exact", "sampled"):
            raise ConfigError(f"attention_mode must be exact or sampled, got {self.attention_mode!r}")
        if self.position_weighting not in ("off", "verbatim", "per_query"):
            raise ConfigError(f"unknown position_weighting {self.position_weighting!r}")
        if self.c <= 0 or self.lambda_1 < 0 or min(self.weighting) < 0:
            raise ConfigError("c must be positive; lambda_1 and weighting nonnegative")

    def layer_lengths(self) -> list[int]:
        lengths = [self.L_x]
        for _ in range(self.encoder_layers - 1):
            lengths.append(lengths[-1] // 2 if self.distilling else lengths[-1])
        return lengths

    def latent_length(self) -> int:
        return self.layer_lengths()[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weighting"] = list(self.weighting)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["weighting"] = tuple(d.get("weighting", (1.0, 1.0, 1.0)))
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def positional_encoding(L: int, d: int) -> np.ndarray:
    pos = np.arange(L)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    pe = np.zeros((L, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : d // 2]
    return pe


class ParamBuilder:
    """Deterministic parameter enumeration with fan-in scaled uniform init."""

    def __init__(self, seed: int):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.params: dict[str, Tensor] = {}

    def uniform(self, name: str, shape: tuple, fan_in: int) -> Tensor:
        bound = 1.0 / math.sqrt(fan_in)
        t = ag.parameter(self.rng.uniform(-bound, bound, size=shape))
        self.params[name] = t
        return t

    def const(self, name: str, shape: tuple, value: float) -> Tensor:
        t = ag.parameter(np.full(shape, value))
        self.params[name] = t
        return t

    def linear(self, name: str, n_in: int, n_out: int, bias: bool = True):
        self.uniform(f"{name}.weight", (n_in, n_out), n_in)
        if bias:
            self.uniform(f"{name}.bias", (n_out,), n_in)

    def layer_norm(self, name: str, d: int):
        self.const(f"{name}.gain", (d,), 1.0)
        self.const(f"{name}.shift", (d,), 0.0)


def last_received(encoder_input: np.ndarray) -> np.ndarray:
    """(B, 3) position of the last unflagged encoder row; zero when none arrived."""
    avail = encoder_input[..., FLAG_CHANNEL] < 0.5
    L = encoder_input.shape[-2]
    last = L - 1 - np.argmax(avail[..., ::-1], axis=-1)
    rows = np.take_along_axis(encoder_input[..., POS_CHANNELS], last[..., None, None], axis=-2)[..., 0, :]
    return np.where(avail.any(axis=-1)[..., None], rows, 0.0)


def to_anchor_frame(x: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Shift available position rows by the per-window anchor; unavailable rows stay zero."""
    out = np.array(x, dtype=float, copy=True)
    avail = out[..., FLAG_CHANNEL:FLAG_CHANNEL + 1] < 0.5
    out[..., POS_CHANNELS] = np.where(avail, out[..., POS_CHANNELS] - anchor[:, None, :], 0.0)
    return out


class Module:
    """Shared plumbing for trainable predictors: named params, stats, checkpoints."""

    kind = "module"
    config: object
    params: dict[str, Tensor]
    stats: NormStats | None = None

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ConfigError(f"parameter names differ: {sorted(missing)[:5]}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ConfigError(f"parameter {k}: checkpoint shape {v.shape} != model shape {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=float)

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _linear(self, x, name: str, bias: bool = True):
        w = self.params[f"{name}.weight"]
        b = self.params.get(f"{name}.bias") if bias else None
        return ag.linear(x, w, b)

    def _norm(self, x, name: str):
        return ag.layer_norm(x, self.params[f"{name}.gain"], self.params[f"{name}.shift"])

    # -- inference --------------------------------------------------------
    def predict_normalized(self, encoder_input: np.ndarray, decoder_input: np.ndarray,
                           rng: np.random.Generator | None = None, batch_size: int = 64) -> np.ndarray:
        outs = []
        with ag.no_grad():
            for s in range(0, encoder_input.shape[0], batch_size):
                out = self.forward(encoder_input[s:s + batch_size], decoder_input[s:s + batch_size], rng=rng)
                outs.append(out.data)
        if not outs:
            return np.zeros((0, self.config.L_y, 3))
        return np.concatenate(outs, axis=0)

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"kind": self.kind, "config": self.config.to_dict(), "config_digest": self.config.digest(),
                "stats": None if self.stats is None else self.stats.to_dict(),
                "parameter_count": self.parameter_count()}
        if extra:
            meta["extra"] = extra
        write_arrays(path, CHECKPOINT_MAGIC, meta, self.state())


class InformerModel(Module):
    kind = "informer"

    def __init__(self, config: ModelConfig, stats: NormStats | None = None):
        self.config = config
        self.stats = stats
        self._build()
        self._pe_cache: dict[int, np.ndarray] = {}

    def _build(self) -> None:
        cfg = self.config
        d, ff, k = cfg.d_model, cfg.d_ff, cfg.conv_kernel
        pb = ParamBuilder(cfg.seed)
        pb.uniform("embed.weight", (cfg.input_channels, d), cfg.input_channels)
        for i in range(cfg.encoder_layers):
            for proj in ("q", "k", "v", "o"):
                pb.linear(f"enc{i}.attn.{proj}", d, d)
            pb.layer_norm(f"enc{i}.norm1", d)
            pb.linear(f"enc{i}.ff1", d, ff)
            pb.linear(f"enc{i}.ff2", ff, d)
            pb.layer_norm(f"enc{i}.norm2", d)
            if cfg.distilling and i < cfg.encoder_layers - 1:
                pb.uniform(f"distil{i}.weight", (k, d, d), k * d)
                pb.uniform(f"distil{i}.bias", (d,), k * d)
        pb.layer_norm("enc.norm", d)
        for i in range(cfg.decoder_layers):
            for proj in ("q", "k", "v", "o"):
                pb.linear(f"dec{i}.self.{proj}", d, d)
            pb.layer_norm(f"dec{i}.norm1", d)
            for proj in ("q", "k", "v", "o"):
                pb.linear(f"dec{i}.cross.{proj}", d, d)
            pb.layer_norm(f"dec{i}.norm2", d)
            pb.linear(f"dec{i}.ff1", d, ff)
            pb.linear(f"dec{i}.ff2", ff, d)
            pb.layer_norm(f"dec{i}.norm3", d)
        pb.layer_norm("dec.norm", d)
        pb.const("head.weight", (d, 3), 0.0)
        pb.const("head.bias", (3,), 0.0)
        up = -(-cfg.L_x // cfg.latent_length())
        pb.uniform("aux.weight", (d, 3 * up), d)
        pb.const("aux.bias", (3 * up,), 0.0)
        self.params = pb.params

    # -- building blocks --------------------------------------------------
    def _pe(self, L: int) -> np.ndarray:
        if L not in self._pe_cache:
            self._pe_cache[L] = positional_encoding(L, self.config.d_model)
        return self._pe_cache[L]

    def embed(self, x) -> Tensor:
        """Bias-free value projection plus fixed sinusoidal positions: (..., L, C) -> (..., L, d)."""
        x = ag.as_tensor(x)
        if x.shape[-1] != self.config.input_channels:
            raise ConfigError(f"expected {self.config.input_channels} input channels, got {x.shape[-1]}")
        return ag.matmul(x, self.params["embed.weight"]) + self._pe(x.shape[-2])

    def _split(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        H = self.config.n_heads
        return x.reshape(B, L, H, -1).swapaxes(1, 2)

    def _merge(self, x: Tensor) -> Tensor:
        B, H, L, dh = x.shape
        return x.swapaxes(1, 2).reshape(B, L, H * dh)

    def _attention(self, name: str, x_q: Tensor, x_kv: Tensor, kind: str,
                   rng=None, metric_bias=None) -> Tensor:
        q = self._split(self._linear(x_q, f"{name}.q"))
        k = self._split(self._linear(x_kv, f"{name}.k"))
        v = self._split(self._linear(x_kv, f"{name}.v"))
        if kind == "probsparse":
            out = probsparse_attention(q, k, v, c=self.config.c, mode=self.config.attention_mode,
                                       rng=rng, metric_bias=metric_bias)
        elif kind == "causal":
            out = full_attention(q, k, v, causal=True)
        else:
            out = full_attention(q, k, v)
        return self._linear(self._merge(out), f"{name}.o")

    def _feed_forward(self, x: Tensor, name: str) -> Tensor:
        return self._linear(ag.gelu(self._linear(x, f"{name}.ff1")), f"{name}.ff2")

    def position_errors(self, enc: np.ndarray) -> np.ndarray:
        """Per-step position error proxy e_x(t) on the encoder span, (B, L_x, 3).

        The true error is unknown at inference; the proxy is the gap between the
        (possibly zeroed) received stream and a zero-order hold of the last
        available sample, i.e. zero where the packet arrived.
        """
        pos = enc[..., POS_CHANNELS]
        avail = enc[..., FLAG_CHANNEL] < 0.5
        B, L, _ = pos.shape
        idx = np.where(avail, np.arange(L)[None, :], -1)
        last = np.maximum.accumulate(idx, axis=1)
        held = np.where((last >= 0)[..., None],
                        np.take_along_axis(pos, np.maximum(last, 0)[..., None], axis=1), 0.0)
        return pos - held

    def _metric_biases(self, enc: np.ndarray) -> list:
        cfg = self.config
        if cfg.position_weighting == "off" or cfg.lambda_1 == 0:
            return [None] * cfg.encoder_layers
        W = np.diag(cfg.weighting)
        e = self.position_errors(enc)
        quad = np.einsum("bli,ij,blj->bl", e, W, e)
        if cfg.position_weighting == "verbatim":
            # e_x(t) at the latest encoder step; identical for every query
            const = cfg.lambda_1 * quad[:, -1]
            return [const[:, None, None] for _ in range(cfg.encoder_layers)]
        biases = []
        for L in cfg.layer_lengths():
            f = cfg.L_x // L
            pooled = quad[:, :L * f].reshape(quad.shape[0], L, f).mean(axis=2)
            biases.append(cfg.lambda_1 * pooled[:, None, :])
        return biases

    # -- forward ------------------------------------------------------------
    def encoder_forward(self, embedded: Tensor, rng=None, metric_biases=None,
                        return_lengths: bool = False):
        cfg = self.config
        x = embedded
        lengths = []
        metric_biases = metric_biases or [None] * cfg.encoder_layers
        for i in range(cfg.encoder_layers):
            lengths.append(x.shape[-2])
            a = self._attention(f"enc{i}.attn", x, x, "probsparse", rng=rng, metric_bias=metric_biases[i])
            x = self._norm(x + a, f"enc{i}.norm1")
            x = self._norm(x + self._feed_forward(x, f"enc{i}"), f"enc{i}.norm2")
            if cfg.distilling and i < cfg.encoder_layers - 1:
                conv = ag.conv1d(x, self.params[f"distil{i}.weight"], self.params[f"distil{i}.bias"])
                x = ag.maxpool1d(ag.elu(conv))
        latent = self._norm(x, "enc.norm")
        return (latent, lengths) if return_lengths else latent

    def decoder_forward(self, latent: Tensor, decoder_input) -> Tensor:
        cfg = self.config
        x = self.embed(decoder_input)
        for i in range(cfg.decoder_layers):
            x = self._norm(x + self._attention(f"dec{i}.self", x, x, "causal"), f"dec{i}.norm1")
            x = self._norm(x + self._attention(f"dec{i}.cross", x, latent, "full"), f"dec{i}.norm2")
            x = self._norm(x + self._feed_forward(x, f"dec{i}"), f"dec{i}.norm3")
        x = self._norm(x, "dec.norm")
        out = self._linear(x, "head")
        return out[:, -cfg.L_y:, :]

    def reconstruct_encoder_span(self, latent: Tensor, encoder_input=None) -> Tensor:
        """Auxiliary head: latent (B, L_lat, d) -> encoder-span positions (B, L_x, 3).

        With ``residual`` the anchor of ``encoder_input`` is added back.
        """
        B, L_lat, _ = latent.shape
        y = self._linear(latent, "aux")
        y = y.reshape(B, -1, 3)[:, :self.config.L_x, :]
        if self.config.residual and encoder_input is not None:
            y = y + last_received(np.asarray(encoder_input, dtype=float))[:, None, :]
        return y

    def forward(self, encoder_input, decoder_input, rng=None, return_latent: bool = False):
        """Normalized windows in, normalized (B, L_y, 3) predictions out."""
        enc = np.asarray(encoder_input.data if isinstance(encoder_input, Tensor) else encoder_input, dtype=float)
        dec = np.asarray(decoder_input.data if isinstance(decoder_input, Tensor) else decoder_input, dtype=float)
        cfg = self.config
        if enc.ndim == 2:
            enc, dec = enc[None], dec[None]
        if enc.shape[1:] != (cfg.L_x, cfg.input_channels):
            raise ConfigError(f"encoder input {enc.shape[1:]} != ({cfg.L_x}, {cfg.input_channels})")
        if dec.shape[1:] != (cfg.L_token + cfg.L_y, cfg.input_channels):
            raise ConfigError(f"decoder input {dec.shape[1:]} != ({cfg.L_token + cfg.L_y}, {cfg.input_channels})")
        if rng is None and cfg.attention_mode == "sampled":
            rng = np.random.Generator(np.random.PCG64(cfg.seed))
        anchor = None
        if cfg.residual:
            anchor = last_received(enc)
            enc, dec = to_anchor_frame(enc, anchor), to_anchor_frame(dec, anchor)
        latent = self.encoder_forward(self.embed(enc), rng=rng, metric_biases=self._metric_biases(enc))
        out = self.decoder_forward(latent, dec)
        if anchor is not None:
            out = out + anchor[:, None, :]
        return (out, latent) if return_latent else out


def predict(model: Module, window: SequenceWindow, net: NetworkFeatures | None = None,
            rng=None) -> "Prediction":
    """Denormalized L_y x 3 prediction for one raw (meter-space) window.

    ``net`` (length L_x + L_y) overrides the network channels of the window.
    """
    if model.stats is None:
        raise ConfigError("model has no normalization statistics; train or load a checkpoint first")
    cfg = model.config
    enc = np.array(window.encoder_input, dtype=float)
    dec = np.array(window.decoder_input, dtype=float)
    if net is not None:
        feats = net.as_array()
        if feats.shape[0] != cfg.L_x + cfg.L_y:
            raise ConfigError(f"network features must cover L_x + L_y = {cfg.L_x + cfg.L_y} steps")
        enc[:, NET_CHANNELS] = feats[:cfg.L_x]
        dec[:, NET_CHANNELS] = np.concatenate([feats[cfg.L_x - cfg.L_token:cfg.L_x], feats[cfg.L_x:]])
    enc_n = scale_inputs(enc, model.stats, True)
    dec_n = scale_inputs(dec, model.stats, True)
    out = model.predict_normalized(enc_n[None], dec_n[None], rng=rng)[0]
    p = denormalize_positions(out, model.stats)
    times = (np.arange(cfg.L_y) + 1) * window.dt
    return Prediction(p, times)


@dataclass
class Prediction:
    positions: np.ndarray    # (L_y, 3) m
    timestamps: np.ndarray   # (L_y,) s after the last encoder sample


def load_checkpoint(path, expected: ModelConfig | None = None):
    """Rebuild a model (Informer or baseline) from a checkpoint file."""
    from .baselines import BaselineConfig, build_baseline
    meta, arrays = read_arrays(path, CHECKPOINT_MAGIC)
    kind = meta["kind"]
    if kind == "informer":
        config = ModelConfig.from_dict(meta["config"])
    else:
        config = BaselineConfig.from_dict(meta["config"])
    if expected is not None and expected.to_dict() != config.to_dict():
        diff = sorted(k for k in set(config.to_dict()) | set(expected.to_dict())
                      if config.to_dict().get(k) != expected.to_dict().get(k))
        raise ConfigError(f"checkpoint/config mismatch in fields: {', '.join(diff)}")
    stats = None if meta["stats"] is None else NormStats.from_dict(meta["stats"])
    model = InformerModel(config, stats) if kind == "informer" else build_baseline(config, stats)
    model.load_state(arrays)
    return model
