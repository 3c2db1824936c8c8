"""Single-file model checkpoints.

Layout: 4-byte magic, little-endian u64 header length, a canonical JSON
header (config, metadata, vocabulary tokens and digest, tensor table),
then the raw float64 buffers in header order. Everything that goes in is
deterministic, so saving a loaded checkpoint reproduces the bytes.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .corpus import Vocab, vocab_digest
from .ioutil import canonical_json, write_atomic_bytes
from .model import ModelConfig, SentimentModel

MAGIC = b"AGSM"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<Q")


class CheckpointError(RuntimeError):
    """Raised for malformed, truncated, or inconsistent checkpoint files."""


def save_checkpoint(path, model: SentimentModel, vocab: Vocab, meta: dict | None = None) -> Path:
    """Serialize model weights, the embedding table, and metadata."""
    params = model.parameters()
    names = sorted(params)
    tensors = [{"name": n, "shape": list(params[n].shape)} for n in names]
    tensors.append({"name": "embedding", "shape": list(vocab.embedding.shape)})
    header = {
        "format": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "meta": dict(meta or {}),
        "vocab_tokens": list(vocab.tokens),
        "vocab_digest": vocab.digest,
        "tensors": tensors,
    }
    head = canonical_json(header).encode("utf-8")
    parts = [MAGIC, _HEAD.pack(len(head)), head]
    for n in names:
        parts.append(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(vocab.embedding, dtype="<f8").tobytes())
    return write_atomic_bytes(path, b"".join(parts))


def _read_header(raw: bytes, path) -> tuple[dict, int]:
    if len(raw) < len(MAGIC) + _HEAD.size or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    (hlen,) = _HEAD.unpack_from(raw, len(MAGIC))
    start = len(MAGIC) + _HEAD.size
    if start + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format {header.get('format')!r}, expected {FORMAT_VERSION}"
        )
    return header, start + hlen


def read_checkpoint_meta(path) -> dict:
    """Header-only peek: config, meta, vocab digest, tensor table."""
    header, _ = _read_header(Path(path).read_bytes(), path)
    return header


def load_checkpoint(path) -> tuple[SentimentModel, Vocab, dict]:
    """Rebuild (model, vocab, meta) and verify the embedding digest."""
    raw = Path(path).read_bytes()
    header, offset = _read_header(raw, path)
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = math.prod(shape)
        need = count * 8
        if offset + need > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        arrays[entry["name"]] = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += need
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    if "embedding" not in arrays:
        raise CheckpointError(f"{path}: no embedding tensor")
    embedding = arrays.pop("embedding")
    tokens = tuple(header["vocab_tokens"])
    digest = vocab_digest(tokens, embedding)
    if digest != header["vocab_digest"]:
        raise CheckpointError(
            f"{path}: vocabulary digest mismatch: stored {header['vocab_digest']}, "
            f"recomputed {digest}"
        )
    vocab = Vocab(tokens, embedding, digest)
    config = ModelConfig.from_dict(header["config"])
    model = SentimentModel(config, vocab.embedding, np.random.default_rng(0))
    params = model.parameters()
    if set(params) != set(arrays):
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        raise CheckpointError(f"{path}: tensor set mismatch: missing {missing}, extra {extra}")
    for name, tensor in params.items():
        if tensor.data.shape != arrays[name].shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {arrays[name].shape}, "
                f"model expects {tensor.data.shape}"
            )
        tensor.data[...] = arrays[name]
    return model, vocab, dict(header["meta"])
