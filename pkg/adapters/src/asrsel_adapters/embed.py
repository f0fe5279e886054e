"""Sequence-embedding adapters: one 1024-d row per utterance (speech) or
per hypothesis (text).

Backends are pluggable through `register_backend`; the built-in "hash"
backend derives a deterministic unit vector from the content bytes, which
keeps the full pipeline runnable without any model download.  A real
encoder backend only has to map bytes/text to a 1024-d vector
deterministically.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .wire import read_manifest_rows, iter_jsonl, write_emb1

EMB_DIM = 1024


class Encoder(Protocol):
    def encode_bytes(self, data: bytes) -> np.ndarray: ...

    def encode_text(self, text: str) -> np.ndarray: ...


class HashEncoder:
    """Content-hash embeddings: deterministic, unit-norm, dimension 1024.

    Not semantically meaningful; stands in for a frozen encoder wherever
    only wire-format and determinism contracts matter.
    """

    def __init__(self, salt: str = "0"):
        self.salt = salt.encode()

    def _vector(self, digest_input: bytes) -> np.ndarray:
        seed = hashlib.blake2b(digest_input, digest_size=8, key=self.salt[:64]).digest()
        rng = np.random.default_rng(int.from_bytes(seed, "little"))
        vec = rng.standard_normal(EMB_DIM)
        return (vec / np.sqrt((vec * vec).sum())).astype(np.float32)

    def encode_bytes(self, data: bytes) -> np.ndarray:
        return self._vector(b"bytes\x00" + data)

    def encode_text(self, text: str) -> np.ndarray:
        return self._vector(b"text\x00" + text.encode("utf-8"))


_BACKENDS: dict[str, Callable[[str], Encoder]] = {
    "hash": lambda arg: HashEncoder(arg or "0"),
}


def register_backend(name: str, factory: Callable[[str], Encoder]) -> None:
    _BACKENDS[name] = factory


def get_encoder(model_id: str) -> Encoder:
    name, _, arg = model_id.partition(":")
    if name not in _BACKENDS:
        raise ValueError(
            "unknown embedding backend %r (registered: %s)"
            % (name, ", ".join(sorted(_BACKENDS)))
        )
    return _BACKENDS[name](arg)


def _check_dim(vec: np.ndarray, rid: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float32)
    if vec.shape != (EMB_DIM,):
        raise ValueError(
            "backend produced shape %r for %r, expected (%d,)" % (vec.shape, rid, EMB_DIM)
        )
    return vec


def embed_speech(
    manifest_path: str | Path,
    model_id: str,
    out_path: str | Path,
    audio_root: str | Path | None = None,
) -> int:
    """One row per manifest utt_id, embedding the audio file content."""
    encoder = get_encoder(model_id)
    root = Path(audio_root) if audio_root is not None else None
    rows = []
    for row in read_manifest_rows(manifest_path):
        if "audio_path" not in row:
            raise ValueError("utt %r has no audio_path" % (row["utt_id"],))
        path = Path(row["audio_path"])
        if root is not None and not path.is_absolute():
            path = root / path
        vec = encoder.encode_bytes(path.read_bytes())
        rows.append((row["utt_id"], _check_dim(vec, row["utt_id"])))
    return write_emb1(out_path, EMB_DIM, rows)


def embed_text(hyps_path: str | Path, model_id: str, out_path: str | Path) -> int:
    """One row per hypothesis hyp_id, embedding its transcript."""
    encoder = get_encoder(model_id)
    rows = []
    for row in iter_jsonl(hyps_path):
        vec = encoder.encode_text(row["text"])
        rows.append((row["hyp_id"], _check_dim(vec, row["hyp_id"])))
    return write_emb1(out_path, EMB_DIM, rows)
