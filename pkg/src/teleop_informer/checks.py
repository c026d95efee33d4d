"""Gradient checks for every differentiable primitive and a tiny full model."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .attention import full_attention, probsparse_attention
from .autograd import grad_check

TINY_MODEL = dict(d_model=8, n_heads=2, encoder_layers=1, decoder_layers=1, d_ff=16,
                  L_x=16, L_token=8, L_y=4, attention_mode="exact")
TOLERANCE = 1e-4


def _sq(t):
    # a weighted sum of squares keeps every output coordinate in play
    return ag.sum_of_squares(t * np.linspace(0.5, 1.5, t.data.size).reshape(t.shape))


def _positive(shape, seed=0):
    return np.random.default_rng(seed).uniform(0.5, 2.0, shape)


_IDX = np.array([[2, 0], [1, 3]])
_MASK = np.where(np.tril(np.ones((4, 4), bool)), 0.0, -np.inf)

PRIMITIVES = {
    "add": (lambda a, b: _sq(a + b), [(3, 4), (4,)]),
    "sub": (lambda a, b: _sq(a - b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: _sq(a * b), [(3, 4), (3, 4)]),
    "reciprocal": (lambda a: _sq(ag.reciprocal(a)), [_positive((3, 4))]),
    "exp": (lambda a: _sq(ag.exp(a)), [(3, 4)]),
    "log": (lambda a: _sq(ag.log(a)), [_positive((3, 4))]),
    "sqrt": (lambda a: _sq(ag.sqrt(a)), [_positive((3, 4))]),
    "tanh": (lambda a: _sq(ag.tanh(a)), [(3, 4)]),
    "sigmoid": (lambda a: _sq(ag.sigmoid(a)), [(3, 4)]),
    "relu": (lambda a: _sq(ag.relu(a)), [(3, 4)]),
    "elu": (lambda a: _sq(ag.elu(a)), [(3, 4)]),
    "gelu": (lambda a: _sq(ag.gelu(a)), [(3, 4)]),
    "tsum": (lambda a: _sq(ag.tsum(a, axis=1)), [(3, 4)]),
    "mean": (lambda a: _sq(ag.mean(a, axis=0, keepdims=True)), [(3, 4)]),
    "sum_of_squares": (lambda a: ag.sum_of_squares(a, axis=-1).sum(), [(3, 4)]),
    "norm": (lambda a: _sq(ag.norm(a)), [(3, 4)]),
    "cumsum": (lambda a: _sq(ag.cumsum(a, axis=0)), [(5, 2)]),
    "reshape": (lambda a: _sq(ag.reshape(a, (4, 3)) * np.arange(12.0).reshape(4, 3)), [(3, 4)]),
    "transpose": (lambda a: _sq(ag.transpose(a, (1, 0)) * np.arange(12.0).reshape(4, 3)), [(3, 4)]),
    "broadcast_to": (lambda a: _sq(ag.broadcast_to(a, (3, 4)) * np.arange(12.0).reshape(3, 4)), [(1, 4)]),
    "getitem": (lambda a: _sq(a[1:, ::2]) + _sq(ag.getitem(a, (np.array([0, 0, 2]),))), [(3, 4)]),
    "concat": (lambda a, b: _sq(ag.concat([a, b], axis=1)), [(2, 3), (2, 2)]),
    "stack": (lambda a, b: _sq(ag.stack([a, b], axis=0)), [(2, 3), (2, 3)]),
    "matmul": (lambda a, b: _sq(ag.matmul(a, b)), [(2, 3, 4), (4, 5)]),
    "linear": (lambda x, w, b: _sq(ag.linear(x, w, b)), [(3, 4), (4, 2), (2,)]),
    "softmax": (lambda a: _sq(ag.softmax(a, axis=-1)), [(3, 4)]),
    "softmax_masked": (lambda a: _sq(ag.softmax(a, axis=-1, mask=_MASK)), [(4, 4)]),
    "layer_norm": (lambda x, g, b: _sq(ag.layer_norm(x, g, b)), [(3, 5), (5,), (5,)]),
    "conv1d_same": (lambda x, w, b: _sq(ag.conv1d(x, w, b)), [(2, 6, 3), (3, 3, 2), (2,)]),
    "conv1d_causal_dilated": (lambda x, w, b: _sq(ag.conv1d(x, w, b, dilation=2, padding="causal")),
                              [(2, 7, 3), (3, 3, 2), (2,)]),
    "maxpool1d": (lambda x: _sq(ag.maxpool1d(x)), [(2, 7, 3)]),
    "gather_rows": (lambda x: _sq(ag.gather_rows(x, _IDX)), [(2, 4, 3)]),
    "scatter_rows": (lambda x, v: _sq(ag.scatter_rows(x, _IDX, v)), [(2, 4, 3), (2, 2, 3)]),
    "full_attention": (lambda q, k, v: _sq(full_attention(q, k, v)), [(5, 4), (6, 4), (6, 3)]),
    "full_attention_causal": (lambda q, k, v: _sq(full_attention(q, k, v, causal=True)),
                              [(5, 4), (5, 4), (5, 3)]),
    "probsparse_exact": (lambda q, k, v: _sq(probsparse_attention(q, k, v, c=1.0)),
                         [(12, 4), (12, 4), (12, 3)]),
    "probsparse_causal": (lambda q, k, v: _sq(probsparse_attention(q, k, v, c=1.0, causal=True)),
                          [(12, 4), (12, 4), (12, 3)]),
}


def check_primitives(seed: int = 0) -> dict[str, float]:
    """Max relative gradient error per primitive."""
    out = {}
    for name, (fn, specs) in PRIMITIVES.items():
        rng = np.random.default_rng(seed)
        inputs = [s if isinstance(s, np.ndarray) else rng.standard_normal(s) for s in specs]
        out[name] = grad_check(fn, inputs=inputs, seed=seed)
    return out


def tiny_batch(L_x=8, L_token=4, L_y=4, batch=2, seed=0):
    """Random normalized-looking windows with a few lost encoder rows."""
    from .trajectory import FLAG_CHANNEL, N_CHANNELS
    rng = np.random.default_rng(seed)
    enc = rng.standard_normal((batch, L_x, N_CHANNELS))
    enc[..., FLAG_CHANNEL] = 0.0
    enc[:, 2, FLAG_CHANNEL] = 1.0
    enc[:, 2, :3] = 0.0
    dec = np.concatenate([enc[:, L_x - L_token:], rng.standard_normal((batch, L_y, N_CHANNELS))], axis=1)
    dec[:, L_token:, :3] = 0.0
    dec[:, L_token:, FLAG_CHANNEL] = 1.0
    target = rng.standard_normal((batch, L_y, 3))
    return enc, dec, target


def check_model(model, objective=None, seed: int = 0, max_entries: int | None = 3) -> float:
    """Gradient check of the training loss with respect to every parameter tensor."""
    from .objective import ObjectiveConfig, total_loss
    cfg = model.config
    enc, dec, target = tiny_batch(cfg.L_x, cfg.L_token, cfg.L_y, seed=seed)
    objective = objective or ObjectiveConfig.plain()
    names = list(model.params)
    original = {k: model.params[k] for k in names}

    def fn(*leaves):
        for k, t in zip(names, leaves):
            model.params[k] = t
        out = model.forward(enc, dec)
        return total_loss(out, target, objective, dt=1.0 / 30.0).total

    try:
        # zero-initialized heads would hide upstream gradients, so perturb them
        rng = np.random.default_rng(seed + 1)
        inputs = [original[k].data + 0.1 * rng.standard_normal(original[k].shape) for k in names]
        return grad_check(fn, inputs=inputs, seed=seed, max_entries=max_entries)
    finally:
        for k in names:
            model.params[k] = original[k]


def tiny_models():
    from .baselines import BaselineConfig, build_baseline
    from .model import InformerModel, ModelConfig
    distilling = ModelConfig(**{**TINY_MODEL, "encoder_layers": 2, "residual": True})
    models = {"informer": InformerModel(ModelConfig(**TINY_MODEL)),
              "informer-distilling": InformerModel(distilling)}
    for kind in ("elman-rnn", "lstm", "tcn"):
        models[kind] = build_baseline(BaselineConfig(kind=kind, hidden=4, L_x=16, L_token=8, L_y=4))
    return models
