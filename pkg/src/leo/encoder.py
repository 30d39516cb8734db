"""Statement encoder: embeddings -> dropout -> 1-D convolution -> max pool.

Each statement's token ids are embedded, padding positions are forced to
zero, dropout is applied in train mode, and a valid convolution followed by
ReLU and a max over time yields one fixed-size vector per statement. A
function becomes a fixed (max_statements x dim) matrix: real statements in
order, zero rows after them.

encode_batch runs every real statement in a batch through one shared
convolution by padding them to a common length and masking the windows the
padding invented; its output matches the per-statement path exactly because
ReLU output is nonnegative, so zeroed extra windows never win the max.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GraphError, Tensor
from .normalize import PAD_ID
from .optim import ParameterStore


@dataclass
class EncoderParams:
    """Embedding table plus one convolution, with its fixed hyperparameters."""
    embedding: Tensor    # (vocab_size, dim)
    conv_kernel: Tensor  # (kernel_size, dim, dim)
    conv_bias: Tensor    # (dim,)
    kernel_size: int
    dropout_retain: float

    @property
    def dim(self) -> int:
        return self.embedding.data.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {
            "encoder/embedding": self.embedding,
            "encoder/conv_kernel": self.conv_kernel,
            "encoder/conv_bias": self.conv_bias,
        }


def init_encoder_params(store: ParameterStore, vocab_size: int, embed_dim: int,
                        rng: np.random.Generator, kernel_size: int = 3,
                        dropout_retain: float = 0.8) -> EncoderParams:
    """Create encoder parameters and register them under the "encoder" group.

    The padding row of the embedding starts at zero and never receives
    gradient (padding positions are masked out of the graph), so padded
    content stays exactly zero for the life of the model.
    """
    if vocab_size < 2:
        raise GraphError("vocabulary must include the pad and unknown entries")
    if embed_dim < 1 or kernel_size < 1:
        raise GraphError("embed_dim and kernel_size must be positive")
    if not 0.0 < dropout_retain <= 1.0:
        raise GraphError(f"dropout retain probability {dropout_retain} outside (0, 1]")
    emb = rng.normal(0.0, 0.1, size=(vocab_size, embed_dim))
    emb[PAD_ID] = 0.0
    kern = rng.normal(0.0, np.sqrt(2.0 / (kernel_size * embed_dim)),
                      size=(kernel_size, embed_dim, embed_dim))
    return EncoderParams(
        embedding=store.add("encoder/embedding", emb, "encoder"),
        conv_kernel=store.add("encoder/conv_kernel", kern, "encoder"),
        conv_bias=store.add("encoder/conv_bias", np.zeros(embed_dim), "encoder"),
        kernel_size=kernel_size,
        dropout_retain=dropout_retain,
    )


@dataclass
class EncodedFunction:
    """Fixed-size statement matrix for one function."""
    matrix: Tensor  # (max_statements, dim); rows >= true_length are zero
    true_length: int
    label: int | None = None


def _embed_ids(id_matrix: np.ndarray, params: EncoderParams) -> Tensor:
    """Embed an integer id array of any shape to (..., dim), with padding
    positions multiplied by a structural zero so they carry no value and no
    gradient."""
    emb = ad.gather_rows(params.embedding, id_matrix)
    mask = (id_matrix != PAD_ID).astype(np.float64)[..., None]
    if mask.all():
        return emb
    return ad.mul(emb, ad.constant(mask, name="pad_mask"))


def embed_statement(token_ids, params: EncoderParams, train_flag: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Token ids -> (T, dim) embedded matrix; dropout only in train mode."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise GraphError("embed_statement expects a non-empty 1-D id sequence")
    out = _embed_ids(ids, params)
    if train_flag:
        if rng is None:
            raise GraphError("train-mode embedding needs a dropout rng")
        out = ad.dropout(out, params.dropout_retain, rng, train=True)
    return out


def encode_statement(embedded: Tensor, params: EncoderParams) -> Tensor:
    """(T, dim) embedded matrix -> (dim,) vector via conv, ReLU, max over
    time. Inputs shorter than the kernel are zero-padded on the right."""
    t, d = embedded.data.shape
    if t < params.kernel_size:
        pad = ad.constant(np.zeros((params.kernel_size - t, d)))
        embedded = ad.concat([embedded, pad], axis=0)
        t = params.kernel_size
    x = ad.reshape(embedded, (1, t, d))
    h = ad.relu(ad.conv1d(x, params.conv_kernel, params.conv_bias))
    return ad.reshape(ad.max_time(h), (d,))


def _stack_ids(statements: list[np.ndarray], kernel_size: int):
    """Pad id sequences to one (S, T) matrix plus their true lengths."""
    lengths = np.array([len(s) for s in statements], dtype=np.int64)
    t_max = max(kernel_size, int(lengths.max()))
    ids = np.full((len(statements), t_max), PAD_ID, dtype=np.int64)
    for i, s in enumerate(statements):
        ids[i, : len(s)] = s
    return ids, lengths


def _encode_stack(ids: np.ndarray, lengths: np.ndarray, params: EncoderParams,
                  train_flag: bool, rng: np.random.Generator | None) -> Tensor:
    """Shared conv over S padded statements -> (S, dim) statement vectors."""
    emb = _embed_ids(ids, params)
    if train_flag:
        if rng is None:
            raise GraphError("train-mode encoding needs a dropout rng")
        emb = ad.dropout(emb, params.dropout_retain, rng, train=True)
    h = ad.relu(ad.conv1d(emb, params.conv_kernel, params.conv_bias))
    windows = h.data.shape[1]
    valid = np.maximum(lengths - params.kernel_size + 1, 1)
    window_ok = (np.arange(windows)[None, :] < valid[:, None]).astype(np.float64)
    if not window_ok.all():
        h = ad.mul(h, ad.constant(window_ok[:, :, None], name="window_mask"))
    return ad.max_time(h)


def encode_function(statements: list, params: EncoderParams, max_statements: int,
                    train_flag: bool = False,
                    rng: np.random.Generator | None = None,
                    label: int | None = None) -> EncodedFunction:
    """Encode one function's statements into a (max_statements, dim) matrix.

    The first min(count, max_statements) statements are encoded in order;
    rows past true_length stay exactly zero.
    """
    kept = [np.asarray(s, dtype=np.int64) for s in statements[:max_statements]]
    d = params.dim
    if not kept:
        return EncodedFunction(ad.constant(np.zeros((max_statements, d))), 0, label)
    vectors = [
        encode_statement(embed_statement(s, params, train_flag, rng), params)
        for s in kept
    ]
    stacked = ad.concat([ad.reshape(v, (1, d)) for v in vectors], axis=0)
    n = len(kept)
    placed = ad.scatter_rows(stacked, np.zeros(n, dtype=np.int64),
                             np.arange(n, dtype=np.int64), 1, max_statements)
    return EncodedFunction(ad.reshape(placed, (max_statements, d)), n, label)


def encode_batch(batch: list[list], params: EncoderParams, max_statements: int,
                 train_flag: bool = False,
                 rng: np.random.Generator | None = None):
    """Encode a batch of functions (each a list of token id sequences) into
    one (B, max_statements, dim) tensor plus the per-function true lengths.

    All real statements share a single embedding lookup and convolution;
    the result equals running encode_function on each element.
    """
    b = len(batch)
    d = params.dim
    flat: list[np.ndarray] = []
    batch_idx: list[int] = []
    row_idx: list[int] = []
    true_lengths = np.zeros(b, dtype=np.int64)
    for i, statements in enumerate(batch):
        kept = statements[:max_statements]
        true_lengths[i] = len(kept)
        for j, s in enumerate(kept):
            flat.append(np.asarray(s, dtype=np.int64))
            batch_idx.append(i)
            row_idx.append(j)
    if not flat:
        return ad.constant(np.zeros((b, max_statements, d))), true_lengths
    ids, lengths = _stack_ids(flat, params.kernel_size)
    vectors = _encode_stack(ids, lengths, params, train_flag, rng)
    placed = ad.scatter_rows(vectors, np.asarray(batch_idx, dtype=np.int64),
                             np.asarray(row_idx, dtype=np.int64), b, max_statements)
    return placed, true_lengths
