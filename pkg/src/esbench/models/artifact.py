"""Versioned, checksummed, size-padded model artifacts.

Byte layout (all integers little-endian)::

    magic        8 bytes   b"ESBMDL1\\0"
    version      u64
    kind         u8        1 = classifier, 2 = preference
    payload_len  u64
    payload      dimension header (u32s) then float32 parameters
    checksum     32 bytes  SHA-256 of payload
    padding      zero bytes up to ``pad_to``

Classifier payload: ``B, d, C, ngram_order`` then E (B x d) and W (d x C),
row-major. Preference payload: ``L`` then ``L + 1`` layer sizes, then for
each layer its weight matrix followed by its bias vector.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import CorruptArtifactError
from .preference import PreferenceNet
from .text import HashedNgramClassifier

MAGIC = b"ESBMDL1\x00"
KIND_CLASSIFIER = "Classifier"
KIND_PREFERENCE = "Preference"
_KIND_CODES = {KIND_CLASSIFIER: 1, KIND_PREFERENCE: 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_HEADER = struct.Struct("<8sQBQ")
_CHECKSUM_LEN = 32
_F32 = np.dtype("<f4")


@dataclass(frozen=True)
class ModelArtifact:
    version: int
    kind: str
    payload: bytes
    pad_to: int
    checksum: bytes

    @property
    def natural_size(self) -> int:
        return _HEADER.size + len(self.payload) + _CHECKSUM_LEN

    @property
    def size(self) -> int:
        return max(self.natural_size, self.pad_to)

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, self.version, _KIND_CODES[self.kind], len(self.payload))
        body = head + self.payload + self.checksum
        return body + bytes(self.size - len(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelArtifact":
        if len(data) < _HEADER.size + _CHECKSUM_LEN:
            raise CorruptArtifactError("artifact truncated")
        magic, version, kind, n = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CorruptArtifactError("bad magic")
        if kind not in _KIND_NAMES:
            raise CorruptArtifactError(f"unknown model kind code {kind}")
        end = _HEADER.size + n
        if len(data) < end + _CHECKSUM_LEN:
            raise CorruptArtifactError("artifact truncated")
        payload = bytes(data[_HEADER.size:end])
        checksum = bytes(data[end:end + _CHECKSUM_LEN])
        if hashlib.sha256(payload).digest() != checksum:
            raise CorruptArtifactError("checksum mismatch")
        return cls(version, _KIND_NAMES[kind], payload, len(data), checksum)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ModelArtifact":
        return cls.from_bytes(Path(path).read_bytes())


def _f32_bytes(a) -> bytes:
    return np.ascontiguousarray(a, dtype=_F32).tobytes()


def serialize(model, pad_to: int = 0, version: int = 1) -> ModelArtifact:
    if pad_to < 0:
        raise ValueError("pad_to must be >= 0")
    if isinstance(model, HashedNgramClassifier):
        kind = KIND_CLASSIFIER
        E, W = model.embeddings_, model.output_weights_
        head = struct.pack("<4I", E.shape[0], E.shape[1], W.shape[1], model.ngram_order)
        payload = head + _f32_bytes(E) + _f32_bytes(W)
    elif isinstance(model, PreferenceNet):
        kind = KIND_PREFERENCE
        sizes = model.layer_sizes_
        parts = [struct.pack(f"<{len(sizes) + 1}I", len(sizes) - 1, *sizes)]
        for W, b in zip(model.coefs_, model.intercepts_):
            parts += [_f32_bytes(W), _f32_bytes(b)]
        payload = b"".join(parts)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return ModelArtifact(version, kind, payload, pad_to, hashlib.sha256(payload).digest())


def _take(buf: memoryview, offset: int, shape) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape))
    arr = np.frombuffer(buf, dtype=_F32, count=count, offset=offset).reshape(shape)
    return arr.astype(np.float32), offset + count * 4


def deserialize(artifact: ModelArtifact | bytes):
    if isinstance(artifact, (bytes, bytearray, memoryview)):
        artifact = ModelArtifact.from_bytes(bytes(artifact))
    if hashlib.sha256(artifact.payload).digest() != artifact.checksum:
        raise CorruptArtifactError("checksum mismatch")
    buf = memoryview(artifact.payload)
    try:
        if artifact.kind == KIND_CLASSIFIER:
            B, d, C, order = struct.unpack_from("<4I", buf)
            E, off = _take(buf, 16, (B, d))
            W, off = _take(buf, off, (d, C))
            model = HashedNgramClassifier(n_buckets=B, embedding_dim=d, ngram_order=order, n_classes=C)
            model.embeddings_, model.output_weights_ = E, W
            model.classes_ = np.arange(C)
            model.n_classes_ = C
        else:
            (L,) = struct.unpack_from("<I", buf)
            sizes = list(struct.unpack_from(f"<{L + 1}I", buf, 4))
            off = 4 * (L + 2)
            coefs, intercepts = [], []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                W, off = _take(buf, off, (fan_in, fan_out))
                b, off = _take(buf, off, (fan_out,))
                coefs.append(W)
                intercepts.append(b)
            model = PreferenceNet(hidden_layer_sizes=tuple(sizes[1:-1]))
            model.coefs_, model.intercepts_ = coefs, intercepts
            model.layer_sizes_ = sizes
            model.n_features_in_ = sizes[0]
            model.n_outputs_ = sizes[-1]
    except (struct.error, ValueError) as exc:
        raise CorruptArtifactError(f"malformed payload: {exc}") from exc
    if off != len(buf):
        raise CorruptArtifactError("payload length does not match its dimension header")
    return model
