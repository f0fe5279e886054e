"""Writers and minimal readers for the kernel's wire formats.

Implemented from the published format descriptions, not by importing the
kernel, so this package stays runtime-independent of it.

EMB1: bytes "EMB1"; u32 LE dim; u64 LE row count; per row u16 LE id byte
length, UTF-8 id, dim float32 LE values.  Manifests and hypothesis files
are UTF-8 JSON lines with fixed key order and no unknown keys.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

_HEADER = struct.Struct("<4sIQ")
_IDLEN = struct.Struct("<H")

# The 28 supported decoding configurations: baseline; six input variants
# at zero model noise; three noise scales over the original plus the six
# input variants.
MODEL_NOISE_ALPHAS = (0.01, 0.02, 0.03)
INPUT_VARIANTS = (
    (-2, 1.00),
    (1, 1.00),
    (2, 1.00),
    (-1, 0.90),
    (-2, 0.95),
    (-1, 0.95),
)


@dataclass(frozen=True)
class Config:
    alpha: float
    pitch_semitones: int
    atempo: float

    @property
    def is_baseline(self) -> bool:
        return self.alpha == 0.0 and self.pitch_semitones == 0 and self.atempo == 1.0

    @property
    def has_input_perturbation(self) -> bool:
        return self.pitch_semitones != 0 or self.atempo != 1.0


def all_configs() -> list[Config]:
    out = [Config(0.0, 0, 1.0)]
    for pitch, atempo in INPUT_VARIANTS:
        out.append(Config(0.0, pitch, atempo))
    for alpha in MODEL_NOISE_ALPHAS:
        out.append(Config(alpha, 0, 1.0))
        for pitch, atempo in INPUT_VARIANTS:
            out.append(Config(alpha, pitch, atempo))
    return out


def validate_config(cfg: Config) -> Config:
    if cfg not in set(all_configs()):
        raise ValueError(
            "unsupported configuration alpha=%r pitch=%r atempo=%r"
            % (cfg.alpha, cfg.pitch_semitones, cfg.atempo)
        )
    return cfg


def write_emb1(path: str | Path, dim: int, rows: Iterable[tuple[str, np.ndarray]]) -> int:
    rows = list(rows)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"EMB1", dim, len(rows)))
        for rid, vec in rows:
            vec = np.asarray(vec, dtype="<f4")
            if vec.shape != (dim,):
                raise ValueError("row %r has shape %r, expected (%d,)" % (rid, vec.shape, dim))
            if not np.isfinite(vec).all():
                raise ValueError("non-finite embedding for %r" % (rid,))
            rid_b = rid.encode("utf-8")
            fh.write(_IDLEN.pack(len(rid_b)))
            fh.write(rid_b)
            fh.write(vec.tobytes())
    return len(rows)


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def read_manifest_rows(path: str | Path) -> list[dict]:
    rows = list(iter_jsonl(path))
    for row in rows:
        if "utt_id" not in row:
            raise ValueError("%s: manifest row without utt_id" % (path,))
    return rows


def write_hypotheses(path: str | Path, rows: Iterable[dict]) -> int:
    """rows must carry utt_id, hyp_id, text, alpha, pitch_semitones,
    atempo, and optionally ppl."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            obj = {
                "utt_id": row["utt_id"],
                "hyp_id": row["hyp_id"],
                "text": row["text"],
                "alpha": row["alpha"],
                "pitch_semitones": row["pitch_semitones"],
                "atempo": row["atempo"],
            }
            if row.get("ppl") is not None:
                obj["ppl"] = row["ppl"]
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")
            count += 1
    return count
