"""Model artifact persistence.

Binary container layout ("LEO1" format, version 1):

    bytes 0..3   magic "LEO1"
    u32 LE       format version
    sections     tag (4 ASCII bytes) + u32 LE payload length + payload
    u32 LE       CRC-32 over everything before it (magic included)

Sections, in fixed order: VOCB (vocabulary), TENS (named float32 tensors),
CONF (config snapshot as key = value text), CLST (cluster statistics),
THRS (threshold + quantile), LOGD (training log digest). Parameters are
stored as little-endian float32; cluster statistics and the threshold are
float64 because scoring is calibrated after the float32 quantization.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig, parse_config_text
from .normalize import Vocabulary
from .scoring import ClusterStatistics

MAGIC = b"LEO1"
VERSION = 1
_SECTION_ORDER = (b"VOCB", b"TENS", b"CONF", b"CLST", b"THRS", b"LOGD")


class ModelFormatError(ValueError):
    pass


@dataclass
class ModelArtifact:
    """Everything needed to score new samples: vocabulary, parameters,
    config, cluster statistics, and the calibrated threshold."""
    vocab: Vocabulary
    tensors: dict
    config: TrainConfig
    stats: ClusterStatistics
    threshold: float
    quantile: float = 0.95
    log_digest: str = ""
    version: int = VERSION


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("section payload truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def _encode_vocab(vocab: Vocabulary) -> bytes:
    parts = [struct.pack("<I", vocab.size)]
    for token in vocab.tokens:
        parts.append(_pack_str(token))
    return b"".join(parts)


def _decode_vocab(payload: bytes) -> Vocabulary:
    r = _Reader(payload)
    count = r.u32()
    return Vocabulary(tokens=tuple(r.string() for _ in range(count)))


def _encode_tensors(tensors: dict) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def _decode_tensors(payload: bytes) -> dict:
    r = _Reader(payload)
    count = r.u32()
    tensors = {}
    for _ in range(count):
        name = r.string()
        ndim = r.u8()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        n_bytes = 4 * int(np.prod(shape, dtype=np.int64)) if ndim else 4
        data = np.frombuffer(r.take(n_bytes), dtype="<f4").reshape(shape)
        tensors[name] = data.copy()
    return tensors


def _encode_stats(stats: ClusterStatistics) -> bytes:
    parts = [
        struct.pack("<B", 1 if stats.diagonal_covariance else 0),
        _pack_str(stats.mode),
        struct.pack("<II", stats.k, stats.dim),
        np.asarray(stats.means, dtype="<f8").tobytes(),
        np.asarray(stats.inverses, dtype="<f8").tobytes(),
        np.asarray(stats.counts, dtype="<u4").tobytes(),
        np.asarray(stats.eps_used, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def _decode_stats(payload: bytes) -> ClusterStatistics:
    r = _Reader(payload)
    diagonal = bool(r.u8())
    mode = r.string()
    k = r.u32()
    dim = r.u32()
    means = np.frombuffer(r.take(8 * k * dim), dtype="<f8").reshape(k, dim).copy()
    inv_count = k * dim if diagonal else k * dim * dim
    inv_shape = (k, dim) if diagonal else (k, dim, dim)
    inverses = np.frombuffer(r.take(8 * inv_count), dtype="<f8").reshape(inv_shape).copy()
    counts = np.frombuffer(r.take(4 * k), dtype="<u4").astype(np.int64)
    eps_used = np.frombuffer(r.take(8 * k), dtype="<f8").copy()
    return ClusterStatistics(means=means, inverses=inverses, counts=counts,
                             eps_used=eps_used, diagonal_covariance=diagonal,
                             mode=mode)


def serialize_model(artifact: ModelArtifact) -> bytes:
    sections = {
        b"VOCB": _encode_vocab(artifact.vocab),
        b"TENS": _encode_tensors(artifact.tensors),
        b"CONF": artifact.config.render().encode("utf-8"),
        b"CLST": _encode_stats(artifact.stats),
        b"THRS": struct.pack("<dd", artifact.threshold, artifact.quantile),
        b"LOGD": artifact.log_digest.encode("utf-8"),
    }
    body = [MAGIC, struct.pack("<I", artifact.version)]
    for tag in _SECTION_ORDER:
        payload = sections[tag]
        body.append(tag + struct.pack("<I", len(payload)) + payload)
    blob = b"".join(body)
    return blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)


def deserialize_model(blob: bytes) -> ModelArtifact:
    if len(blob) < 12:
        raise ModelFormatError("file too short to be a model container")
    if blob[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ModelFormatError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    sections = {}
    pos = 8
    end = len(blob) - 4
    while pos < end:
        if pos + 8 > end:
            raise ModelFormatError("truncated section header")
        tag = blob[pos:pos + 4]
        length = struct.unpack("<I", blob[pos + 4:pos + 8])[0]
        pos += 8
        if pos + length > end:
            raise ModelFormatError(f"section {tag!r} payload truncated")
        sections[tag] = blob[pos:pos + length]
        pos += length
    missing = [t for t in _SECTION_ORDER if t not in sections]
    if missing:
        raise ModelFormatError(f"missing sections: {missing}")
    threshold, quantile = struct.unpack("<dd", sections[b"THRS"])
    return ModelArtifact(
        vocab=_decode_vocab(sections[b"VOCB"]),
        tensors=_decode_tensors(sections[b"TENS"]),
        config=TrainConfig(**parse_config_text(sections[b"CONF"].decode("utf-8"))),
        stats=_decode_stats(sections[b"CLST"]),
        threshold=threshold,
        quantile=quantile,
        log_digest=sections[b"LOGD"].decode("utf-8"),
        version=version,
    )


def save_model(artifact: ModelArtifact, path: str) -> None:
    blob = serialize_model(artifact)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_model(path: str) -> ModelArtifact:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
