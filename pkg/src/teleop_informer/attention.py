"""Full and ProbSparse scaled dot-product attention.

All functions accept arrays or :class:`~teleop_informer.autograd.Tensor`
operands shaped ``(..., L, d)``; leading axes (batch, heads) broadcast.
Query selection is discrete, so the sparsity metric is computed on raw
arrays and carries no gradient.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .errors import ParameterError, ShapeError


def _check_qkv(Q: Tensor, K: Tensor, V: Tensor) -> None:
    if Q.ndim < 2 or K.ndim < 2 or V.ndim < 2:
        raise ShapeError(f"attention operands must be at least 2-D: Q {Q.shape}, K {K.shape}, V {V.shape}")
    if Q.shape[-1] != K.shape[-1] or Q.shape[-1] < 1:
        raise ShapeError(f"query width {Q.shape} does not match key width {K.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"key length {K.shape} differs from value length {V.shape}")


def causal_mask(L_Q: int, L_K: int) -> np.ndarray:
    """Additive mask letting query i see keys j <= i."""
    allowed = np.arange(L_K)[None, :] <= np.arange(L_Q)[:, None]
    return np.where(allowed, 0.0, -np.inf)


def attention_weights(Q, K, causal: bool = False, scale: float | None = None) -> Tensor:
    Q, K = as_tensor(Q), as_tensor(K)
    scale = 1.0 / math.sqrt(Q.shape[-1]) if scale is None else scale
    scores = ag.matmul(Q, K.swapaxes(-1, -2)) * scale
    mask = causal_mask(Q.shape[-2], K.shape[-2]) if causal else None
    return ag.softmax(scores, axis=-1, mask=mask)


def full_attention(Q, K, V, causal: bool = False, scale: float | None = None) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V."""
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    _check_qkv(Q, K, V)
    return ag.matmul(attention_weights(Q, K, causal, scale), V)


def _logsumexp_minus_mean(s: np.ndarray) -> np.ndarray:
    top = s.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(s - top).sum(axis=-1)) + top[..., 0]
    return lse - s.mean(axis=-1)


def sample_count(c: float, L_K: int) -> int:
    return int(min(L_K, max(1, math.ceil(c * math.log(L_K))))) if L_K > 1 else 1


def sample_keys(L_Q: int, L_K: int, c: float, rng: np.random.Generator) -> np.ndarray:
    """``ceil(c ln L_K)`` distinct uniformly sampled key indices per query, shape (L_Q, n).

    Floyd's subset sampling, vectorized over queries, costs O(L_Q n^2)
    rather than the O(L_Q L_K) of a full permutation.
    """
    n = sample_count(c, L_K)
    out = np.empty((L_Q, n), dtype=np.int64)
    for col, j in enumerate(range(L_K - n, L_K)):
        t = rng.integers(0, j + 1, size=L_Q)
        seen = np.any(out[:, :col] == t[:, None], axis=1)
        out[:, col] = np.where(seen, j, t)
    return out


def sparsity_metric(Q, K, scale: float | None = None, key_sample: np.ndarray | None = None) -> np.ndarray:
    """M_i = ln sum_j exp(s_ij) - mean_j s_ij with s_ij = q_i k_j^T * scale.

    With ``key_sample`` (L_Q, n) only the sampled keys of each query enter
    the estimate (both the log-sum-exp and the mean).
    """
    q = Q.data if isinstance(Q, Tensor) else np.asarray(Q, dtype=float)
    k = K.data if isinstance(K, Tensor) else np.asarray(K, dtype=float)
    scale = 1.0 / math.sqrt(q.shape[-1]) if scale is None else scale
    if key_sample is None:
        s = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    else:
        ks = k[..., key_sample, :]                       # (..., L_Q, n, d)
        s = np.matmul(ks, q[..., None])[..., 0] * scale
    if ag._mac_counters:
        ag._tally(s.size * q.shape[-1])
    return _logsumexp_minus_mean(s)


def metric_from_scores(scores) -> np.ndarray:
    return _logsumexp_minus_mean(np.asarray(scores, dtype=float))


def n_top(c: float, L_Q: int) -> int:
    if c <= 0:
        raise ParameterError(f"sparsity factor c must be positive, got {c}")
    return int(min(L_Q, max(1, math.ceil(c * math.log(L_Q))))) if L_Q > 1 else 1


def top_u(M: np.ndarray, c: float | None = None, L_Q: int | None = None, u: int | None = None) -> np.ndarray:
    """Indices of the ``u`` largest metric values along the last axis.

    ``u = clamp(ceil(c ln L_Q), 1, L_Q)`` unless given; ties go to the lower index.
    """
    M = np.asarray(M, dtype=float)
    L_Q = M.shape[-1] if L_Q is None else L_Q
    if u is None:
        u = n_top(c, L_Q)
    order = np.argsort(-M, axis=-1, kind="stable")
    return order[..., :u]


def check_weighting(W: np.ndarray, lam: float) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.shape != (3, 3):
        raise ParameterError(f"weighting matrix must be 3x3, got {W.shape}")
    if np.max(np.abs(W - W.T)) > 1e-9:
        raise ParameterError("weighting matrix must be symmetric")
    if np.linalg.eigvalsh(W).min() < -1e-9:
        raise ParameterError("weighting matrix must be positive semidefinite")
    if not lam >= 0:
        raise ParameterError(f"lambda_1 must be nonnegative, got {lam}")
    return W


def position_weighted_metric(M, e_x, W, lam: float, per_query: bool = False) -> np.ndarray:
    """M_pos = M + lam * e_x^T W e_x.

    Verbatim mode takes one 3-vector ``e_x`` (or ``(..., 3)`` broadcast over
    queries) and adds the same constant to every query.  ``per_query=True``
    expects ``e_x`` shaped ``(..., L_Q, 3)`` and weights each query by the
    error aligned with its own time step.
    """
    W = check_weighting(W, lam)
    M = np.asarray(M, dtype=float)
    e = np.asarray(e_x, dtype=float)
    quad = np.einsum("...i,ij,...j->...", e, W, e)
    if per_query:
        if quad.ndim == 0 or quad.shape[-1] != M.shape[-1]:
            raise ShapeError(f"per-query errors {e.shape} do not align with metric {M.shape}")
        return M + lam * quad
    return M + lam * quad[..., None]


def probsparse_attention(Q, K, V, c: float = 5.0, mode: str = "exact", causal: bool = False,
                         rng: np.random.Generator | None = None, scale: float | None = None,
                         metric_bias: np.ndarray | None = None, return_index: bool = False):
    """Attention computed only for the top-u queries by sparsity metric.

    Non-selected rows receive mean(V) (non-causal) or the running mean of V
    up to their own position (causal).  ``mode="sampled"`` estimates the
    metric from ``ceil(c ln L_K)`` uniformly sampled keys per query.
    ``metric_bias`` (broadcastable to the metric) is added before selection.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    _check_qkv(Q, K, V)
    L_Q, L_K = Q.shape[-2], K.shape[-2]
    scale = 1.0 / math.sqrt(Q.shape[-1]) if scale is None else scale
    if mode == "exact":
        M = sparsity_metric(Q, K, scale)
    elif mode == "sampled":
        rng = rng if rng is not None else np.random.default_rng(0)
        M = sparsity_metric(Q, K, scale, key_sample=sample_keys(L_Q, L_K, c, rng))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if metric_bias is not None:
        M = M + metric_bias
    lead = np.broadcast_shapes(Q.shape[:-2], K.shape[:-2], V.shape[:-2])
    M = np.broadcast_to(M, lead + (L_Q,))
    idx = top_u(M, c, L_Q)

    q_sel = ag.gather_rows(ag.broadcast_to(Q, lead + Q.shape[-2:]), idx)
    scores = ag.matmul(q_sel, K.swapaxes(-1, -2)) * scale
    mask = None
    if causal:
        mask = np.where(np.arange(L_K) <= idx[..., None], 0.0, -np.inf)
    weights = ag.softmax(scores, axis=-1, mask=mask)
    selected = ag.matmul(weights, V)

    if causal:
        if L_Q != L_K:
            raise ShapeError("causal ProbSparse attention needs L_Q == L_K")
        counts = np.arange(1, L_K + 1, dtype=float)[:, None]
        fill = ag.cumsum(V, axis=-2) * (1.0 / counts)
    else:
        fill = ag.broadcast_to(ag.mean(V, axis=-2, keepdims=True), V.shape[:-2] + (L_Q, V.shape[-1]))
    fill = ag.broadcast_to(fill, lead + (L_Q, V.shape[-1]))
    out = ag.scatter_rows(fill, idx, selected)
    return (out, idx) if return_index else out
