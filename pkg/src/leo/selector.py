"""Statement gating: per-row relevance probabilities and relaxed gates.

A small MLP shared across rows scores each statement vector; the sigmoid of
the score is that statement's keep probability. Training samples soft gates
from the binary Concrete relaxation. Because the relaxation needs the
log-odds of p and p is itself a sigmoid, the gate is computed directly from
the pre-sigmoid score: z = sigmoid((score + a - b) / nu) with a, b standard
Gumbel noise. This is the same distribution with no logit round trip.

Gates for padded rows are forced to zero after sampling so padding never
reaches the classifier or the scores.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GraphError, Tensor
from .optim import ParameterStore, init_mlp_params

_UNIFORM_EPS = 1e-12


@dataclass
class SelectorParams:
    """Row-wise MLP weights: hidden (W, b) pairs plus a scalar head."""
    layers: list[tuple[Tensor, Tensor]]
    head: tuple[Tensor, Tensor]
    dropout_retain: float

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"selector/w{i}"] = w
            out[f"selector/b{i}"] = b
        out["selector/head_w"], out["selector/head_b"] = self.head
        return out


def init_selector_params(store: ParameterStore, input_dim: int,
                         rng: np.random.Generator,
                         hidden_sizes=(100, 100, 100),
                         dropout_retain: float = 0.8) -> SelectorParams:
    if not 0.0 < dropout_retain <= 1.0:
        raise GraphError(f"dropout retain probability {dropout_retain} outside (0, 1]")
    layers, head = init_mlp_params(store, "selector", "selector", input_dim,
                                   hidden_sizes, 1, rng)
    return SelectorParams(layers=layers, head=head, dropout_retain=dropout_retain)


def _mlp_forward(x2d: Tensor, layers, head, dropout_retain: float,
                 train_flag: bool, rng: np.random.Generator | None) -> Tensor:
    h = x2d
    for w, b in layers:
        h = ad.relu(ad.add(ad.matmul(h, w), b))
        if train_flag:
            if rng is None:
                raise GraphError("train-mode forward needs a dropout rng")
            h = ad.dropout(h, dropout_retain, rng, train=True)
    w, b = head
    return ad.add(ad.matmul(h, w), b)


def selector_presigmoid(x: Tensor, params: SelectorParams,
                        train_flag: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
    """Raw per-row scores (the log-odds of the keep probabilities).

    Accepts a (rows, dim) matrix -> (rows,) or a (batch, rows, dim) block
    -> (batch, rows).
    """
    shape = x.data.shape
    if x.data.ndim == 2:
        flat = x
    elif x.data.ndim == 3:
        flat = ad.reshape(x, (shape[0] * shape[1], shape[2]))
    else:
        raise GraphError("selector input must be 2-D or 3-D")
    out = _mlp_forward(flat, params.layers, params.head, params.dropout_retain,
                       train_flag, rng)
    return ad.reshape(out, shape[:-1])


def selector_forward(x: Tensor, params: SelectorParams,
                     train_flag: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Per-statement keep probabilities, strictly inside (0, 1)."""
    return ad.sigmoid(selector_presigmoid(x, params, train_flag, rng))


# ---------------------------------------------------------------------------
# gate sampling


def gumbel_from_uniform(u: np.ndarray) -> np.ndarray:
    """-log(-log u), with u clamped away from {0, 1} so the result is finite."""
    u = np.clip(np.asarray(u, dtype=np.float64), _UNIFORM_EPS, 1.0 - _UNIFORM_EPS)
    return -np.log(-np.log(u))


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    return gumbel_from_uniform(rng.random(shape))


def relax_bernoulli(p, a, b, nu: float) -> np.ndarray:
    """Soft gate sample given keep probability p and Gumbel noises a, b.

    Plain-array version for analysis; relax_gates is the graph twin.
    Satisfies P(z > 0.5) = p exactly for any temperature nu > 0.
    """
    if nu <= 0:
        raise GraphError("relaxation temperature must be positive")
    p = np.asarray(p, dtype=np.float64)
    x = (np.log(p) - np.log1p(-p) + np.asarray(a) - np.asarray(b)) / nu
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relax_gates(scores: Tensor, a: np.ndarray, b: np.ndarray, nu: float) -> Tensor:
    """Graph version of relax_bernoulli on pre-sigmoid scores.

    The score already equals log(p/(1-p)), so the gate is
    sigmoid((score + a - b) / nu) with gradient flowing into the scores.
    """
    if nu <= 0:
        raise GraphError("relaxation temperature must be positive")
    noise = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if noise.shape != scores.data.shape:
        raise GraphError("gate noise shape must match the score shape")
    shifted = ad.add(scores, ad.constant(noise, name="gumbel_noise"))
    return ad.sigmoid(ad.scale(shifted, 1.0 / nu))


def deterministic_mask(p: np.ndarray, mode: str = "expected") -> np.ndarray:
    """Inference-time gates: the expected gate z = p (default), or hard
    0/1 thresholding at 0.5 where a tie rounds down."""
    p = np.asarray(p, dtype=np.float64)
    if mode == "expected":
        return p.copy()
    if mode == "hard":
        return (p > 0.5).astype(np.float64)
    raise GraphError(f"unknown deterministic mask mode '{mode}'")


# ---------------------------------------------------------------------------
# masking


def pad_gate(z: Tensor, true_lengths, max_statements: int) -> Tensor:
    """Zero the gates of padded rows: z_i *= 1[i < true_length]."""
    lengths = np.atleast_1d(np.asarray(true_lengths, dtype=np.int64))
    rows = np.arange(max_statements)
    keep = (rows[None, :] < lengths[:, None]).astype(np.float64)
    if z.data.ndim == 1:
        keep = keep[0]
    elif keep.shape != z.data.shape:
        raise GraphError("true_lengths do not match the gate block shape")
    if keep.all():
        return z
    return ad.mul(z, ad.constant(keep, name="length_mask"))


def apply_mask(matrix: Tensor, z: Tensor) -> Tensor:
    """Scale row i of the statement matrix by gate z_i.

    (rows, dim) with (rows,) gates, or (batch, rows, dim) with
    (batch, rows) gates.
    """
    if matrix.data.ndim == 2 and z.data.ndim == 1:
        if matrix.data.shape[0] != z.data.shape[0]:
            raise GraphError("gate length does not match the statement count")
        return ad.mul(matrix, ad.reshape(z, (z.data.shape[0], 1)))
    if matrix.data.ndim == 3 and z.data.ndim == 2:
        if matrix.data.shape[:2] != z.data.shape:
            raise GraphError("gate block does not match the batch shape")
        return ad.mul(matrix, ad.reshape(z, (*z.data.shape, 1)))
    raise GraphError("apply_mask expects (L,d)x(L,) or (B,L,d)x(B,L)")
