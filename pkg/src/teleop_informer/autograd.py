"""Dense float64 tensors with reverse-mode gradient accumulation.

Every primitive records its parents and an analytic adjoint.  Calling
``backward()`` on a scalar walks the recorded graph once in reverse
topological order and accumulates gradients into every leaf that has
``requires_grad=True``.

Temporal operators (``conv1d``, ``maxpool1d``) treat the second-to-last axis
as time and the last axis as channels, i.e. inputs are ``(..., L, C)``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

DTYPE = np.float64

_grad_enabled = True
_mac_counters: list["MacCounter"] = []


class MacCounter:
    """Tally of multiply-accumulates and recorded nodes."""

    def __init__(self):
        self.macs = 0
        self.nodes = 0


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates of matmul/conv/gather-dot work inside the block."""
    counter = MacCounter()
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


def _tally(macs: int) -> None:
    for c in _mac_counters:
        c.macs += int(macs)
        c.nodes += 1


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- conveniences -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    __array_priority__ = 1000

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=DTYPE))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    # -- reverse mode -----------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; each node appears exactly once."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True)


def _make(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / a.data

    def backward(g):
        return (-g * out * out,)

    return _make(out, (a,), backward, "reciprocal")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def elu(a, alpha: float = 1.0) -> Tensor:
    """ELU(x) = x for x >= 0, alpha * (exp(x) - 1) otherwise."""
    a = as_tensor(a)
    x = a.data
    neg = x < 0
    expm = alpha * np.expm1(np.where(neg, x, 0.0))
    out = np.where(neg, expm, x)

    def backward(g):
        return (g * np.where(neg, expm + alpha, 1.0),)

    return _make(out, (a,), backward, "elu")


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    k = np.sqrt(2.0 / np.pi)
    inner = k * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = k * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), backward, "gelu")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / max(out.size, 1)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / n,)

    return _make(out, (a,), backward, "mean")


def sum_of_squares(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = (a.data * a.data).sum(axis=axis, keepdims=keepdims)

    def backward(g):
        return (2.0 * a.data * _expand_reduced(g, a.shape, axis, keepdims),)

    return _make(out, (a,), backward, "sum_of_squares")


def norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the origin is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (a.data * np.expand_dims(scale, axis),)

    return _make(out, (a,), backward, "norm")


def cumsum(a, axis: int = -2) -> Tensor:
    a = as_tensor(a)
    out = np.cumsum(a.data, axis=axis)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(out, (a,), backward, "cumsum")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes: tuple | None = None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _make(np.array(out), (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx) -> Tensor:
    """Slicing (basic or advanced indexing)."""
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out), (a,), backward, "slice")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no tensors given")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
                i != ax and t.shape[i] != ref[i] for i in range(len(ref))):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(ts)))

    return _make(out, ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].ndim + 1
    ax = axis % nd
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts]
    return concat(expanded, axis=ax)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    if _mac_counters:
        _tally(out.size * a.shape[-1])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _make(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias); weight is (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------------------
# neural-network primitives
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis`` with an optional additive mask (use -inf to block)."""
    a = as_tensor(a)
    x = a.data if mask is None else a.data + mask
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


def softmax_rows(a, mask: np.ndarray | None = None) -> Tensor:
    return softmax(a, axis=-1, mask=mask)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: input {x.shape} vs gain {gamma.shape}/bias {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape))

    return _make(out, (x, gamma, beta), backward, "layer_norm")


def conv1d(x, weight, bias=None, dilation: int = 1, padding: str = "same") -> Tensor:
    """1-D convolution over time.

    x: (..., L, C_in); weight: (k, C_in, C_out).  ``padding="same"`` zero-pads
    symmetrically (extra zero on the right for even spans) so the output keeps
    length L; ``padding="causal"`` pads only on the left.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 3 or x.ndim < 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {weight.shape}")
    k = weight.shape[0]
    span = (k - 1) * dilation
    if padding == "same":
        left = span // 2
    elif padding == "causal":
        left = span
    else:
        raise ValueError(f"unknown padding {padding!r}")
    right = span - left
    L = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x.data, pad)
    out = np.zeros(x.shape[:-1] + (weight.shape[2],), dtype=DTYPE)
    for j in range(k):
        s = j * dilation
        out += np.matmul(xp[..., s:s + L, :], weight.data[j])
    if _mac_counters:
        _tally(out.size * k * x.shape[-1])
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(weight.data) if weight.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        for j in range(k):
            s = j * dilation
            if gxp is not None:
                gxp[..., s:s + L, :] += np.matmul(g, weight.data[j].T)
            if gw is not None:
                gw[j] = xp[..., s:s + L, :].reshape(-1, xp.shape[-1]).T @ g2
        gx = None if gxp is None else np.array(gxp[..., left:left + L, :])
        grads = [gx, gw]
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return _make(out, parents, backward, "conv1d")


def maxpool1d(x) -> Tensor:
    """Max-pool over time with window 2, stride 2; odd lengths drop the last step."""
    x = as_tensor(x)
    L = x.shape[-2]
    Lo = L // 2
    if Lo < 1:
        raise ShapeError(f"maxpool1d: time length {L} too short")
    pairs = x.data[..., :2 * Lo, :].reshape(x.shape[:-2] + (Lo, 2, x.shape[-1]))
    second = pairs[..., 1, :] > pairs[..., 0, :]
    out = np.where(second, pairs[..., 1, :], pairs[..., 0, :])

    def backward(g):
        gp = np.zeros(pairs.shape, dtype=DTYPE)
        gp[..., 0, :] = np.where(second, 0.0, g)
        gp[..., 1, :] = np.where(second, g, 0.0)
        full = np.zeros_like(x.data)
        full[..., :2 * Lo, :] = gp.reshape(x.shape[:-2] + (2 * Lo, x.shape[-1]))
        return (full,)

    return _make(out, (x,), backward, "maxpool1d")


def _row_index(idx: np.ndarray, lead: tuple) -> tuple:
    grids = np.indices(idx.shape, sparse=True)
    return tuple(grids[:len(lead)]) + (idx,)


def gather_rows(x, idx: np.ndarray) -> Tensor:
    """Select rows along axis -2: x (..., L, d), idx (..., u) -> (..., u, d).

    Indices may repeat; gradients of repeated rows accumulate.
    """
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape[:-1] != x.shape[:-2]:
        raise ShapeError(f"gather_rows: index {idx.shape} vs input {x.shape}")
    sel = _row_index(idx, x.shape[:-2])
    out = x.data[sel]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, sel, g)
        return (full,)

    return _make(out, (x,), backward, "gather_rows")


def scatter_rows(base, idx: np.ndarray, values) -> Tensor:
    """Copy of ``base`` with rows ``idx`` (unique per leading slice) replaced by ``values``."""
    base, values = as_tensor(base), as_tensor(values)
    idx = np.asarray(idx, dtype=np.intp)
    if values.shape[:-2] != base.shape[:-2] or values.shape[-2] != idx.shape[-1] \
            or values.shape[-1] != base.shape[-1]:
        raise ShapeError(f"scatter_rows: base {base.shape}, index {idx.shape}, values {values.shape}")
    sel = _row_index(idx, base.shape[:-2])
    out = base.data.copy()
    out[sel] = values.data

    def backward(g):
        gb = g.copy()
        gb[sel] = 0.0
        return gb, g[sel]

    return _make(out, (base, values), backward, "scatter_rows")


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[..., Tensor], shapes: Iterable[tuple] | None = None, seed: int = 0,
               inputs: Sequence[np.ndarray] | None = None, step: float = 1e-5,
               max_entries: int | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` receives one Tensor per input and must return a scalar Tensor.
    Inputs are drawn from a seeded standard normal unless given explicitly.
    The error per entry is ``|analytic - numeric| / max(1, |numeric|)``.
    With ``max_entries`` only a seeded random subset of coordinates per input
    is probed.
    """
    rng = np.random.default_rng(seed)
    if inputs is None:
        arrays = [rng.standard_normal(s) for s in shapes]
    else:
        arrays = [np.array(a, dtype=DTYPE) for a in inputs]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with _enable_grad():
        out = fn(*leaves)
    if out.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("grad_check: forward value is not finite")
    if out.requires_grad:
        out.backward()

    def evaluate(vals):
        with no_grad():
            v = fn(*[Tensor(a) for a in vals]).item()
        if not np.isfinite(v):
            raise NonFiniteError("grad_check: perturbed forward value is not finite")
        return v

    worst = 0.0
    for i, a in enumerate(arrays):
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
        flat = np.arange(a.size)
        if max_entries is not None and a.size > max_entries:
            flat = np.sort(rng.choice(a.size, size=max_entries, replace=False))
        for j in flat:
            pos = np.unravel_index(j, a.shape)
            vals = [x.copy() for x in arrays]
            vals[i][pos] = a[pos] + step
            f_plus = evaluate(vals)
            vals[i][pos] = a[pos] - step
            f_minus = evaluate(vals)
            numeric = (f_plus - f_minus) / (2 * step)
            err = abs(analytic[pos] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


@contextlib.contextmanager
def _enable_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = True
    try:
        yield
    finally:
        _grad_enabled = prev
