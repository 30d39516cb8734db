"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors carry float64 data, an optional gradient accumulator, and the
closure needed to push gradients to their parents. Graphs are built by
calling the op functions below (define-by-run); `backward` walks the tape
from a scalar loss. Every op checks its output for NaN/Inf and raises
NumericError naming the offending node, so a diverging run fails loudly
instead of training on garbage.

Design limits, on purpose: CPU only, no broadcasting beyond what the ops
documented here need, no higher-order gradients, no graph rewriting.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class NumericError(RuntimeError):
    """Non-finite values were produced by a graph node."""


class GraphError(ValueError):
    """Shape mismatch or other misuse of a graph op."""


_node_ids = itertools.count()

# Finiteness checking can be disabled for throughput experiments; the
# training loop leaves it on.
CHECK_FINITE = True


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name or f"tensor#{next(_node_ids)}"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor({self.name}, shape={self.data.shape}, grad={self.requires_grad})"


def constant(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=False, name=name or "const")


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return constant(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, name: str) -> Tensor:
    name = f"{name}#{next(_node_ids)}"
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in node '{name}'")
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), name=name)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make(data, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)

    return _make(-a.data, (a,), backward, "neg")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return _make(a.data * c, (a,), backward, "scale")


def log(a: Tensor) -> Tensor:
    # out-of-domain inputs surface as NumericError from the finiteness check
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _make(data, (a,), backward, "log")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _make(data, (a,), backward, "exp")


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        data = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / data,)

    return _make(data, (a,), backward, "sqrt")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward(g):
        return (g * (a.data > 0.0),)

    return _make(data, (a,), backward, "relu")


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails
    data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                    np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def backward(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return _make(data, (a,), backward, "tanh")


def maximum_const(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes only where a > floor."""
    data = np.maximum(a.data, floor)

    def backward(g):
        return (g * (a.data > floor),)

    return _make(data, (a,), backward, "maximum_const")


def minimum_const(a: Tensor, ceil: float) -> Tensor:
    data = np.minimum(a.data, ceil)

    def backward(g):
        return (g * (a.data < ceil),)

    return _make(data, (a,), backward, "minimum_const")


# ---------------------------------------------------------------------------
# linear algebra and shapes


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise GraphError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise GraphError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise GraphError("transpose expects a 2-D tensor")

    def backward(g):
        return (g.T,)

    return _make(a.data.T, (a,), backward, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _make(data, tuple(tensors), backward, "concat")


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[indices[...], :]. Used for embeddings."""
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= table.data.shape[0]):
        raise GraphError("gather_rows index out of range")
    data = table.data[indices]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, indices.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (dt,)

    return _make(data, (table,), backward, "gather_rows")


def scatter_rows(values: Tensor, batch_idx: np.ndarray, row_idx: np.ndarray,
                 n_batch: int, n_rows: int) -> Tensor:
    """Place value rows into a zero (n_batch, n_rows, d) block; inverse of a
    2-level gather. Each (batch_idx, row_idx) pair must be unique."""
    d = values.data.shape[-1]
    data = np.zeros((n_batch, n_rows, d))
    data[batch_idx, row_idx] = values.data

    def backward(g):
        return (g[batch_idx, row_idx],)

    return _make(data, (values,), backward, "scatter_rows")


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a: Tensor) -> Tensor:
    def backward(g):
        return (np.full(a.data.shape, float(g)),)

    return _make(np.asarray(a.data.sum()), (a,), backward, "sum")


def reduce_mean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        return (np.full(a.data.shape, float(g) / n),)

    return _make(np.asarray(a.data.mean()), (a,), backward, "mean")


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(data, (a,), backward, "sum_axis")


def mean_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    n = a.data.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.data.shape).copy(),)

    return _make(data, (a,), backward, "mean_axis")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), backward, "softmax")


def max_time(a: Tensor) -> Tensor:
    """Max over axis 1 of an (n, time, channels) tensor. Gradient goes to the
    first maximal position per (n, channel)."""
    if a.data.ndim != 3:
        raise GraphError("max_time expects an (n, time, channels) tensor")
    arg = a.data.argmax(axis=1)
    data = np.take_along_axis(a.data, arg[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        da = np.zeros_like(a.data)
        np.put_along_axis(da, arg[:, None, :], g[:, None, :], axis=1)
        return (da,)

    return _make(data, (a,), backward, "max_time")


# ---------------------------------------------------------------------------
# convolution and dropout


def conv1d(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-D convolution over time.

    x: (n, time, in_channels), weights: (kernel, in_channels, filters),
    bias: (filters,). Output: (n, time - kernel + 1, filters). Callers pad
    short inputs up to the kernel width beforehand.
    """
    n, t, c_in = x.data.shape
    k, c_in2, f = weights.data.shape
    if c_in != c_in2:
        raise GraphError(f"conv1d channel mismatch: input {c_in} vs kernel {c_in2}")
    if t < k:
        raise GraphError(f"conv1d input length {t} shorter than kernel {k}")
    t_out = t - k + 1

    cols = np.empty((n, t_out, k * c_in))
    for j in range(k):
        cols[:, :, j * c_in:(j + 1) * c_in] = x.data[:, j:j + t_out, :]
    w2 = weights.data.reshape(k * c_in, f)
    data = (cols.reshape(n * t_out, k * c_in) @ w2 + bias.data).reshape(n, t_out, f)

    def backward(g):
        g2 = g.reshape(n * t_out, f)
        dw = (cols.reshape(n * t_out, k * c_in).T @ g2).reshape(k, c_in, f)
        db = g2.sum(axis=0)
        dcols = (g2 @ w2.T).reshape(n, t_out, k * c_in)
        dx = np.zeros_like(x.data)
        for j in range(k):
            dx[:, j:j + t_out, :] += dcols[:, :, j * c_in:(j + 1) * c_in]
        return dx, dw, db

    return _make(data, (x, weights, bias), backward, "conv1d")


def dropout(x: Tensor, retain: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: at train time keep each element with probability
    `retain` and scale by 1/retain, so eval mode is the identity."""
    if not train:
        return x
    if not 0.0 < retain <= 1.0:
        raise GraphError(f"dropout retain probability {retain} outside (0, 1]")
    mask = (rng.random(x.data.shape) < retain) / retain

    def backward(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), backward, "dropout")


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dx into .grad for every reachable tensor that
    requires gradients. The loss must be a scalar."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_topo_order(loss)):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=np.float64).reshape(parent.data.shape)
            if CHECK_FINITE and not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient flowing into '{parent.name}'")
            if parent.grad is None:
                parent.grad = g.copy() if g.base is not None else g
            else:
                parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class FiniteDifferenceReport:
    """Per-parameter worst relative error of analytic vs central differences."""
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    flagged: list[tuple[str, int, float]] = field(default_factory=list)  # (name, flat index, err)

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol


def finite_difference_check(loss_fn, params: dict[str, Tensor], h: float = 1e-5,
                            tol: float = 1e-4, sample_threshold: int = 10_000,
                            sample_coords: int = 64, zero_floor: float = 1e-6,
                            rng: np.random.Generator | None = None) -> FiniteDifferenceReport:
    """Compare analytic gradients against central finite differences.

    `loss_fn` must rebuild the graph from scratch (including any noise, from
    a freshly seeded stream) and return the scalar loss Tensor; it is called
    once per perturbed coordinate, so it has to be deterministic. Tensors
    larger than `sample_threshold` elements are checked on `sample_coords`
    random coordinates (at least 32); smaller tensors are checked fully.
    Coordinates where both gradients are below `zero_floor` in magnitude
    count as exact (zero-gradient parameters produce FD noise of order h^2).
    """
    if not 1e-6 <= h <= 1e-4:
        raise GraphError(f"finite-difference step {h} outside [1e-6, 1e-4]")
    rng = rng or np.random.default_rng(0)

    for p in params.values():
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    report = FiniteDifferenceReport(max_rel_error=0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        size = flat.size
        if size > sample_threshold:
            count = max(32, min(sample_coords, size))
            coords = rng.choice(size, size=count, replace=False)
        else:
            coords = np.arange(size)
        worst = 0.0
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_fn().item()
            flat[idx] = orig - h
            down = loss_fn().item()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * h)
            exact = analytic[name].reshape(-1)[idx]
            denom = max(abs(exact), abs(numeric))
            err = 0.0 if denom < zero_floor else abs(exact - numeric) / denom
            if err > worst:
                worst = err
            if err > tol:
                report.flagged.append((name, int(idx), err))
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
