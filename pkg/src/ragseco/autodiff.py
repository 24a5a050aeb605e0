"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations the RaGSECo graph needs are provided. Every op builds a
new :class:`Tensor` that remembers its parents and a closure mapping the
output gradient to parent gradients; :func:`backward` walks these in reverse
topological order.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import erf

__all__ = [
    "Tensor",
    "SparseMatrix",
    "Tape",
    "ShapeError",
    "ContractError",
    "no_grad",
    "tensor",
    "backward",
    "dense_matmul",
    "sparse_dense_matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "transpose",
    "reshape",
    "concat",
    "take_rows",
    "total",
    "activation",
    "relu",
    "gelu",
    "sigmoid",
    "softmax_rows",
    "clamped_log",
    "batchnorm",
    "BatchNormState",
    "dropout",
    "conv1d",
    "global_max_pool",
    "conv1d_maxpool",
]

CLAMP = 1e-12


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Disable graph recording (evaluation forward passes)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return dense_matmul(self, _wrap(other))

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._parents = ()
    out._backward = None
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = grad_fn
        tape = _active_tape()
        if tape is not None:
            tape.record(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Sparse matrices
# ---------------------------------------------------------------------------


class SparseMatrix:
    """Constant COO-style matrix with sorted, deduplicated coordinates.

    Weights are never differentiated. Products go through a CSR copy built
    once at construction.
    """

    def __init__(self, rows: int, cols: int, entries: Iterable[tuple[int, int, float]] = ()):
        self.rows = int(rows)
        self.cols = int(cols)
        merged: dict[tuple[int, int], float] = {}
        for r, c, w in entries:
            r, c, w = int(r), int(c), float(w)
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise ShapeError(f"entry ({r}, {c}) out of range for {self.rows}x{self.cols}")
            if not np.isfinite(w):
                raise ValueError(f"non-finite weight at ({r}, {c})")
            merged[(r, c)] = w
        keys = sorted(merged)
        self.entries: list[tuple[int, int, float]] = [(r, c, merged[(r, c)]) for r, c in keys]
        if keys:
            rr, cc = np.array(keys, dtype=np.int64).T
            ww = np.array([merged[k] for k in keys])
        else:
            rr = cc = np.zeros(0, dtype=np.int64)
            ww = np.zeros(0)
        self._csr = sparse.csr_matrix((ww, (rr, cc)), shape=(self.rows, self.cols))

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SparseMatrix":
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a)
        return cls(a.shape[0], a.shape[1], zip(r.tolist(), c.tolist(), a[r, c].tolist()))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return len(self.entries)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        for r, c, w in self.entries:
            out[r, c] = w
        return out

    def matvec(self, d: np.ndarray) -> np.ndarray:
        return np.asarray(self._csr @ d)

    def rmatvec(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(self._csr.T @ g)

    def __repr__(self) -> str:
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


# ---------------------------------------------------------------------------
# Tape and backward
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Ordered record of executed ops.

    Use as a context manager to record ops in execution order, or build one
    after the fact from a loss with :meth:`from_loss`.
    """

    nodes: list[Tensor] = field(default_factory=list)

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return cls([n for n in order if n._parents])


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every requires_grad leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if tape is None:
        tape = Tape.from_loss(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._parents:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            else:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def dense_matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _make(ad @ bd, (a, b), grad_fn, "matmul")


def sparse_dense_matmul(s: SparseMatrix, d: Tensor) -> Tensor:
    if d.data.ndim != 2 or s.cols != d.shape[0]:
        raise ShapeError(f"sparse matmul shape mismatch: {s.shape} x {d.shape}")

    def grad_fn(g):
        return (s.rmatvec(g),)

    return _make(s.matvec(d.data), (d,), grad_fn, "spmm")


def add(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), grad_fn, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def grad_fn(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), grad_fn, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn, "concat")


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), grad_fn, "take_rows")


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GeLU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))

    def grad_fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _make(xd * cdf, (x,), grad_fn, "gelu")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a rank-2 tensor, got shape {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _make(s, (x,), grad_fn, "softmax")


def clamped_log(p: Tensor, bound: float = CLAMP) -> Tensor:
    """log(max(p, bound)); gradient is zero where clipping is active.

    Losses take log(1 - p) as clamped_log(1 - p), so both tails are bounded.
    """
    pd = p.data
    inside = pd >= bound
    clipped = np.maximum(pd, bound)
    return _make(np.log(clipped), (p,), lambda g: (g * inside / clipped,), "log")


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid, "softmax_rows": softmax_rows}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# Normalization / regularization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, features: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(np.zeros(features), np.ones(features), momentum, eps)


def batchnorm(
    x: Tensor,
    state: BatchNormState,
    mode: str = "train",
    gamma: Tensor | None = None,
    beta: Tensor | None = None,
) -> Tensor:
    """Per-feature batch normalization of a b x f tensor.

    Train mode normalizes with the batch's population variance and updates
    the running statistics (unbiased variance, as is customary). Eval mode
    uses the running statistics.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"batchnorm expects b x f input, got {x.shape}")
    b = x.shape[0]
    if mode == "train":
        if b < 2:
            raise ContractError("batchnorm in train mode needs at least 2 rows")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var * b / (b - 1)

        def grad_fn(g):
            gx = inv / b * (b * g - g.sum(axis=0) - xhat * (g * xhat).sum(axis=0))
            return (gx,)

        normed = _make(xhat, (x,), grad_fn, "batchnorm")
    elif mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        normed = _make((x.data - state.running_mean) * inv, (x,), lambda g: (g * inv,), "batchnorm")
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if gamma is not None:
        normed = mul(normed, gamma)
    if beta is not None:
        normed = add(normed, beta)
    return normed


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# 1-D convolution
# ---------------------------------------------------------------------------


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Valid, stride-1 cross-correlation.

    x: B x C x L, weight: O x C x k, bias: O -> B x O x (L - k + 1).
    """
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError(f"conv1d expects B x C x L input and O x C x k weight, got {x.shape}, {weight.shape}")
    B, C, L = x.shape
    O, Cw, k = weight.shape
    if C != Cw:
        raise ShapeError(f"conv1d channel mismatch: input {C}, weight {Cw}")
    if L < k:
        raise ShapeError(f"conv1d input length {L} shorter than kernel {k}")
    Lout = L - k + 1
    # B x C x Lout x k -> B x Lout x (C*k)
    cols = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)
    cols = cols.transpose(0, 2, 1, 3).reshape(B, Lout, C * k)
    wmat = weight.data.reshape(O, C * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.transpose(0, 2, 1)

    def grad_fn(g):
        gt = g.transpose(0, 2, 1)  # B x Lout x O
        gx = gw = gb = None
        if x.requires_grad:
            dcols = (gt @ wmat).reshape(B, Lout, C, k)
            gx = np.zeros((B, C, L))
            for j in range(k):
                gx[:, :, j : j + Lout] += dcols[:, :, :, j].transpose(0, 2, 1)
        if weight.requires_grad:
            gw = np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(O, C, k)
        if bias is not None and bias.requires_grad:
            gb = gt.sum(axis=(0, 1))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(np.ascontiguousarray(out), parents, grad_fn, "conv1d")


def global_max_pool(x: Tensor) -> Tensor:
    """Max over the last axis; ties route the gradient to the first maximum."""
    arg = x.data.argmax(axis=-1)
    shape = x.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.put_along_axis(out, arg[..., None], g[..., None], axis=-1)
        return (out,)

    return _make(x.data.max(axis=-1), (x,), grad_fn, "maxpool")


def conv1d_maxpool(x: Tensor, layers: Sequence[tuple[Tensor, Tensor]]) -> Tensor:
    """Stacked conv + ReLU layers followed by a per-channel global max.

    Accepts a single C x L sample (returns 1 x out) or a batch B x C x L
    (returns B x out).
    """
    single = x.data.ndim == 2
    h = reshape(x, (1,) + x.shape) if single else x
    for weight, bias in layers:
        h = relu(conv1d(h, weight, bias))
    return global_max_pool(h)
