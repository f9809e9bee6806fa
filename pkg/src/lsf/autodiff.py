"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the handful of operations needed by the models and losses in this
package are provided. There is no general broadcasting: shapes must match
exactly unless an operation documents otherwise (``add_bias``, ``scale``).
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "DimensionError",
    "NumericError",
    "UnsupportedOpError",
    "DegenerateBatchError",
    "ContractError",
    "tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "add_bias",
    "relu",
    "total",
    "reshape",
    "transpose",
    "nchw_to_rows",
    "rows_to_nchw",
    "concat_cols",
    "take_cols",
    "take_rows",
    "weighted_sum",
    "row_norms",
    "l2_distance",
    "reciprocal",
    "log_softmax",
    "conv2d",
    "softmax_cross_entropy",
    "backward",
    "no_grad",
]


from .errors import (
    ContractError,
    DegenerateBatchError,
    DimensionError,
    NumericError,
    UnsupportedOpError,
)


_ids = itertools.count()
_graph_stack: list["Graph"] = []
_grad_enabled = [True]


class Tensor:
    """An immutable n-d array node in a computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in tensor produced by '{op}'")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self.id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Graph:
    """Append-only record of the operations created while it is active.

    Used as a context manager; nodes are kept in creation order, which is a
    valid topological order for the reverse sweep.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Graph":
        _graph_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _graph_stack.remove(self)

    def __contains__(self, t: Tensor) -> bool:
        return any(n is t for n in self.nodes)


class no_grad:
    """Context manager disabling graph construction (evaluation, teachers)."""

    def __enter__(self):
        self._prev = _grad_enabled[0]
        _grad_enabled[0] = False

    def __exit__(self, *exc):
        _grad_enabled[0] = self._prev


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    needs = _grad_enabled[0] and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, op=op)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
        for g in _graph_stack:
            g.nodes.append(out)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64).reshape(t.shape)
    else:
        t.grad = t.grad + g


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "mul")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), "mul", bw)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), "scale", bw)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", bw)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[N×k] + b[k] broadcast over rows."""
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: {x.shape} with bias {b.shape}")

    def bw(g):
        _accum(x, g)
        _accum(b, g.sum(axis=0))

    return _make(x.data + b.data, (x, b), "add_bias", bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        _accum(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), "relu", bw)


def total(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar."""

    def bw(g):
        _accum(x, np.full(x.shape, float(g)))

    return _make(np.asarray(x.data.sum()), (x,), "sum", bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"reshape: {x.shape} -> {shape}")

    def bw(g):
        _accum(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), "reshape", bw)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects 2-d input, got {x.shape}")

    def bw(g):
        _accum(x, g.T)

    return _make(np.ascontiguousarray(x.data.T), (x,), "transpose", bw)


def nchw_to_rows(x: Tensor) -> Tensor:
    """[B×C×H×W] -> [(B·H·W)×C], pixel-major row order (b, h, w)."""
    if x.ndim != 4:
        raise DimensionError(f"nchw_to_rows expects 4-d input, got {x.shape}")
    B, C, H, W = x.shape

    def bw(g):
        _accum(x, g.reshape(B, H, W, C).transpose(0, 3, 1, 2))

    return _make(x.data.transpose(0, 2, 3, 1).reshape(B * H * W, C), (x,), "nchw_to_rows", bw)


def rows_to_nchw(x: Tensor, batch: int, height: int, width: int) -> Tensor:
    if x.ndim != 2 or x.shape[0] != batch * height * width:
        raise DimensionError(f"rows_to_nchw: {x.shape} vs {(batch, height, width)}")
    C = x.shape[1]

    def bw(g):
        _accum(x, g.transpose(0, 2, 3, 1).reshape(-1, C))

    out = x.data.reshape(batch, height, width, C).transpose(0, 3, 1, 2)
    return _make(np.ascontiguousarray(out), (x,), "rows_to_nchw", bw)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-d tensors along columns."""
    parts = list(parts)
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.ndim != 2 for p in parts):
        raise DimensionError("concat_cols: parts must be 2-d with equal row counts")
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, edges[:-1], edges[1:]):
            _accum(p, g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, "concat_cols", bw)


def take_cols(x: Tensor, cols: Sequence[int]) -> Tensor:
    cols = np.asarray(cols, dtype=np.int64)

    def bw(g):
        full = np.zeros(x.shape)
        np.add.at(full, (slice(None), cols), g)
        _accum(x, full)

    return _make(x.data[:, cols], (x,), "take_cols", bw)


def take_rows(x: Tensor, rows: Sequence[int]) -> Tensor:
    rows = np.asarray(rows, dtype=np.int64)

    def bw(g):
        full = np.zeros(x.shape)
        np.add.at(full, rows, g)
        _accum(x, full)

    return _make(x.data[rows], (x,), "take_rows", bw)


def weighted_sum(x: Tensor, weights) -> Tensor:
    """Σ_i w_i x_i for a 1-d tensor and constant weights."""
    w = np.asarray(weights, dtype=np.float64)
    if x.ndim != 1 or w.shape != x.shape:
        raise DimensionError(f"weighted_sum: {x.shape} with weights {w.shape}")

    def bw(g):
        _accum(x, float(g) * w)

    return _make(np.asarray(float(w @ x.data)), (x,), "weighted_sum", bw)


def row_norms(x: Tensor) -> Tensor:
    """Euclidean norm of every row of x[N×d] -> [N]; subgradient 0 at zero rows."""
    if x.ndim != 2:
        raise DimensionError(f"row_norms expects 2-d input, got {x.shape}")
    n = np.sqrt((x.data**2).sum(axis=1))

    def bw(g):
        safe = np.where(n > 0, n, 1.0)
        coef = np.where(n > 0, g / safe, 0.0)
        _accum(x, x.data * coef[:, None])

    return _make(n, (x,), "row_norms", bw)


def l2_distance(f: Tensor, p: Tensor) -> Tensor:
    """‖f − p‖ for two vectors of equal length."""
    if f.ndim != 1 or f.shape != p.shape:
        raise DimensionError(f"l2_distance: {f.shape} vs {p.shape}")
    diff = f.data - p.data
    d = float(np.sqrt((diff**2).sum()))

    def bw(g):
        unit = diff / d if d > 0.0 else np.zeros_like(diff)  # subgradient 0 at f = p
        _accum(f, g * unit)
        _accum(p, -g * unit)

    return _make(np.asarray(d), (f, p), "l2_distance", bw)


def reciprocal(x: Tensor, eps: float) -> Tensor:
    """1 / (x + eps), elementwise; x is expected non-negative."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    inv = 1.0 / (x.data + eps)

    def bw(g):
        _accum(x, -g * inv * inv)

    return _make(inv, (x,), "reciprocal", bw)


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of x[N×C]."""
    if x.ndim != 2:
        raise DimensionError(f"log_softmax expects 2-d input, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def bw(g):
        _accum(x, g - sm * g.sum(axis=1, keepdims=True))

    return _make(out, (x,), "log_softmax", bw)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # x: [B, C, H, W] -> [B, H, W, C*k*k] with (c, di, dj) ordering
    B, C, H, W = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((B, C, k, k, H, W))
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = xp[:, :, di : di + H, dj : dj + W]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(B, H, W, C * k * k)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int) -> np.ndarray:
    B, C, H, W = shape
    p = (k - 1) // 2
    cols = cols.reshape(B, H, W, C, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((B, C, H + 2 * p, W + 2 * p))
    for di in range(k):
        for dj in range(k):
            out[:, :, di : di + H, dj : dj + W] += cols[:, :, di, dj]
    return out[:, :, p : p + H, p : p + W]


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' cross-correlation.

    x is [C×H×W] or [B×C×H×W]; w is [C'×C×k×k] with k in {1, 3}.
    """
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d: bad weight shape {w.shape}")
    k = w.shape[2]
    if k not in (1, 3):
        raise UnsupportedOpError(f"conv2d: kernel size {k} not supported (use 1 or 3)")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or xd.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise DimensionError(f"conv2d: bias {bias.shape} for {w.shape[0]} output channels")
    B, C, H, W = xd.shape
    Co = w.shape[0]
    wmat = w.data.reshape(Co, -1)
    cols = xd.transpose(0, 2, 3, 1) if k == 1 else _im2col(xd, k)
    out = cols.reshape(-1, wmat.shape[1]) @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(B, H, W, Co).transpose(0, 3, 1, 2)
    if single:
        out = out[0]
    parents = (x, w) if bias is None else (x, w, bias)

    def bw(g):
        g4 = g[None] if single else g
        gm = g4.transpose(0, 2, 3, 1).reshape(-1, Co)
        if w.requires_grad:
            _accum(w, (gm.T @ cols.reshape(-1, wmat.shape[1])).reshape(w.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, gm.sum(axis=0))
        if x.requires_grad:
            dcols = gm @ wmat
            if k == 1:
                dx = dcols.reshape(B, H, W, C).transpose(0, 3, 1, 2)
            else:
                dx = _col2im(dcols, (B, C, H, W), k)
            _accum(x, dx[0] if single else dx)

    return _make(np.ascontiguousarray(out), parents, "conv2d", bw)


def softmax_cross_entropy(logits: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood over rows whose target is not ignored."""
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects 2-d logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64)
    N, C = logits.shape
    if t.shape != (N,):
        raise DimensionError(f"targets length {t.shape} does not match {N} rows")
    keep = np.ones(N, dtype=bool) if ignore_index is None else t != ignore_index
    if not keep.any():
        raise DegenerateBatchError("every row is ignored")
    kt = t[keep]
    if kt.min() < 0 or kt.max() >= C:
        raise DimensionError("target class index out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.nonzero(keep)[0]
    n = len(rows)
    loss = -logp[rows, kt].sum() / n

    def bw(g):
        grad = np.zeros_like(logp)
        grad[rows] = np.exp(logp[rows])
        grad[rows, kt] -= 1.0
        _accum(logits, grad * (float(g) / n))

    return _make(np.asarray(loss), (logits,), "softmax_cross_entropy", bw)


def _topo(loss: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node._parents:
            if p.id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    With a ``graph`` the recorded creation order is swept in reverse;
    otherwise the order is recovered by a depth-first walk from ``loss``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if graph is not None:
        if loss not in graph:
            raise ContractError("loss was not recorded in the given graph")
        order = [n for n in graph.nodes if n.id <= loss.id]
    else:
        order = _topo(loss)
    grads: dict[int, np.ndarray] = {loss.id: np.ones(loss.shape)}
    interior = [n for n in order if n._backward is not None]
    # Interior nodes route gradients through a temporary buffer; leaves keep
    # theirs in .grad.
    for n in interior:
        n.grad = None
    loss.grad = grads[loss.id]
    for node in reversed(interior):
        g = node.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at node {node.id} ({node.op})")
        node._backward(g)
    for n in interior:
        if n is not loss:
            n.grad = None
