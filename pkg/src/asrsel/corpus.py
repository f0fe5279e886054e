"""Shared domain types and the wire formats every pipeline stage reads/writes.

Wire formats:
  * manifests, hypothesis files, score files, subset files: JSON lines,
    UTF-8, one object per line.  Unknown keys are ignored on read and never
    emitted on write.
  * embedding files: the EMB1 binary format (see read/write_embeddings).
  * id lists: plain text, one id per line, '#' lines are comments.

All writer/reader pairs are bit-exact inverses on valid data.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataFormatError

SPLITS = ("pool", "query", "dev", "test")

SELECTION_RULES = (
    "conf",
    "pred_only",
    "cos_only",
    "euc_only",
    "stable_base",
    "conf_stable",
    "ppl",
    "random",
    "cer_consistency",
    "wer_binary",
)

# Decoding-perturbation grid: model-noise scales and the six retained
# input variants (pitch-only shifts and stretch-pitch pairs).
MODEL_NOISE_ALPHAS = (0.01, 0.02, 0.03)
INPUT_VARIANTS = (
    (-2, 1.00),
    (1, 1.00),
    (2, 1.00),
    (-1, 0.90),
    (-2, 0.95),
    (-1, 0.95),
)


@dataclass(frozen=True, order=True)
class PerturbationDescriptor:
    """How one decoding pass differed from the plain baseline decode.

    alpha is the model-noise scale (fraction of each parameter tensor's
    std), pitch_semitones the input pitch shift, atempo the input tempo
    factor.  Only the fixed set of 28 combinations is valid.
    """

    alpha: float
    pitch_semitones: int
    atempo: float

    @classmethod
    def baseline(cls) -> "PerturbationDescriptor":
        return cls(0.0, 0, 1.0)

    @property
    def is_baseline(self) -> bool:
        return self.alpha == 0.0 and self.pitch_semitones == 0 and self.atempo == 1.0

    def key(self) -> tuple[float, int, float]:
        return (self.alpha, self.pitch_semitones, self.atempo)

    def label(self) -> str:
        return "alpha=%.2f,pitch=%+d,atempo=%.2f" % (
            self.alpha,
            self.pitch_semitones,
            self.atempo,
        )


def all_valid_descriptors() -> list[PerturbationDescriptor]:
    """The full 28-configuration grid: baseline, 6 input variants at
    alpha=0, and 3 noise scales x (original + 6 input variants)."""
    out = [PerturbationDescriptor.baseline()]
    for pitch, atempo in INPUT_VARIANTS:
        out.append(PerturbationDescriptor(0.0, pitch, atempo))
    for alpha in MODEL_NOISE_ALPHAS:
        out.append(PerturbationDescriptor(alpha, 0, 1.0))
        for pitch, atempo in INPUT_VARIANTS:
            out.append(PerturbationDescriptor(alpha, pitch, atempo))
    return out


_VALID_DESCRIPTOR_KEYS = frozenset(d.key() for d in all_valid_descriptors())


def validate_descriptor(desc: PerturbationDescriptor) -> PerturbationDescriptor:
    if desc.key() not in _VALID_DESCRIPTOR_KEYS:
        raise DataFormatError(
            "invalid perturbation descriptor %s: not one of the %d supported "
            "configurations" % (desc.label(), len(_VALID_DESCRIPTOR_KEYS))
        )
    return desc


@dataclass
class UtteranceRecord:
    """One audio item; the unit of selection.

    ref_text is evaluation-only: no selection operation may consult it.
    """

    utt_id: str
    duration_sec: float
    audio_path: str | None = None
    ref_text: str | None = None
    split: str = "pool"

    def validate(self) -> "UtteranceRecord":
        if not self.utt_id:
            raise DataFormatError("empty utt_id")
        if not (self.duration_sec >= 0):
            raise DataFormatError(
                "negative duration for utt_id %r: %r" % (self.utt_id, self.duration_sec)
            )
        if self.split not in SPLITS:
            raise DataFormatError(
                "unknown split %r for utt_id %r (expected one of %s)"
                % (self.split, self.utt_id, "/".join(SPLITS))
            )
        return self


@dataclass
class HypothesisRecord:
    """One decoded transcription (baseline or perturbed) of one utterance."""

    utt_id: str
    hyp_id: str
    text: str
    perturbation: PerturbationDescriptor
    ppl: float | None = None

    def validate(self) -> "HypothesisRecord":
        if not self.utt_id or not self.hyp_id:
            raise DataFormatError("empty utt_id or hyp_id in hypothesis record")
        validate_descriptor(self.perturbation)
        if self.ppl is not None and not (self.ppl >= 0):
            raise DataFormatError(
                "negative ppl for (%s, %s)" % (self.utt_id, self.hyp_id)
            )
        return self


class EmbeddingMatrix:
    """Id-indexed fixed-dimension float32 vectors.

    Row vectors are stored exactly as float32 so file round-trips are
    bit-exact; numeric consumers upcast as needed.
    """

    def __init__(self, dim: int, ids: Sequence[str], vectors: np.ndarray):
        if dim <= 0:
            raise DataFormatError("embedding dim must be positive, got %r" % (dim,))
        vectors = np.asarray(vectors, dtype=np.float32).reshape(len(ids), dim)
        if len(set(ids)) != len(ids):
            raise DataFormatError("duplicate ids in embedding matrix")
        self.dim = int(dim)
        self.ids = list(ids)
        self.vectors = vectors
        self._index = {i: r for r, i in enumerate(self.ids)}

    @classmethod
    def from_rows(
        cls, dim: int, rows: Iterable[tuple[str, Sequence[float]]]
    ) -> "EmbeddingMatrix":
        ids, vecs = [], []
        for rid, vec in rows:
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (dim,):
                raise DataFormatError(
                    "row %r has %d values, expected %d" % (rid, vec.size, dim)
                )
            ids.append(rid)
            vecs.append(vec)
        mat = np.vstack(vecs) if vecs else np.zeros((0, dim), dtype=np.float32)
        return cls(dim, ids, mat)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, rid: str) -> bool:
        return rid in self._index

    def vector(self, rid: str) -> np.ndarray:
        try:
            return self.vectors[self._index[rid]]
        except KeyError:
            raise DataFormatError("no embedding row for id %r" % (rid,)) from None

    def validate_finite(self) -> "EmbeddingMatrix":
        bad = ~np.isfinite(self.vectors).all(axis=1)
        if bad.any():
            rid = self.ids[int(np.flatnonzero(bad)[0])]
            raise DataFormatError("non-finite embedding value at id %r" % (rid,))
        return self


@dataclass
class QualityVector:
    """Per-hypothesis reference-free scores: predicted WER, cosine
    alignment, Euclidean alignment distance."""

    utt_id: str
    hyp_id: str
    pred_wer: float
    cos: float
    euc: float

    def validate(self) -> "QualityVector":
        tag = "(%s, %s)" % (self.utt_id, self.hyp_id)
        if not (0.01 <= self.pred_wer <= 0.99):
            raise DataFormatError(
                "pred_wer %r outside clamp window [0.01, 0.99] at %s"
                % (self.pred_wer, tag)
            )
        if not (-1.0 - 1e-6 <= self.cos <= 1.0 + 1e-6):
            raise DataFormatError("cos %r outside [-1, 1] at %s" % (self.cos, tag))
        if not (self.euc >= 0):
            raise DataFormatError("negative euc %r at %s" % (self.euc, tag))
        return self


@dataclass
class SelectionEntry:
    utt_id: str
    hyp_id: str
    text: str
    weight: int = 1


@dataclass
class SelectionResult:
    """Accepted (utterance, hypothesis) pairs plus the rule provenance
    (rule name, percentile(s), realized thresholds) that produced them.

    rule is None only for an empty result read back from a file, where no
    per-line provenance exists.
    """

    rule: str | None
    entries: list[SelectionEntry]
    p: int | None = None
    p2: int | None = None
    thresholds: dict[str, float] = field(default_factory=dict)

    def validate(self) -> "SelectionResult":
        if self.rule is None and self.entries:
            raise DataFormatError("selection result with entries but no rule")
        if self.rule is not None and self.rule not in SELECTION_RULES:
            raise DataFormatError("unknown selection rule %r" % (self.rule,))
        seen: dict[str, int] = {}
        for e in self.entries:
            if e.weight < 1:
                raise DataFormatError(
                    "non-positive weight on (%s, %s)" % (e.utt_id, e.hyp_id)
                )
            seen[e.utt_id] = seen.get(e.utt_id, 0) + e.weight
        if self.rule != "conf_stable":
            for utt, n in seen.items():
                if n > 1:
                    raise DataFormatError(
                        "rule %s selected utt %r more than once" % (self.rule, utt)
                    )
        return self


# ---------------------------------------------------------------------------
# JSONL helpers
# ---------------------------------------------------------------------------


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(
                    "%s: malformed JSON on line %d: %s" % (path, lineno, exc)
                ) from None
            if not isinstance(obj, dict):
                raise DataFormatError(
                    "%s: line %d is not a JSON object" % (path, lineno)
                )
            yield lineno, obj


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def _require(obj: dict, key: str, path, lineno: int):
    if key not in obj:
        raise DataFormatError("%s: line %d missing key %r" % (path, lineno, key))
    return obj[key]


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def read_manifest(path: str | Path) -> list[UtteranceRecord]:
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        rec = UtteranceRecord(
            utt_id=str(_require(obj, "utt_id", path, lineno)),
            duration_sec=float(_require(obj, "duration_sec", path, lineno)),
            audio_path=obj.get("audio_path"),
            ref_text=obj.get("ref_text"),
            split=obj.get("split", "pool"),
        ).validate()
        if rec.utt_id in seen:
            raise DataFormatError(
                "%s: line %d duplicate utt_id %r" % (path, lineno, rec.utt_id)
            )
        seen.add(rec.utt_id)
        records.append(rec)
    return records


def write_manifest(records: Iterable[UtteranceRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            rec.validate()
            obj: dict = {"utt_id": rec.utt_id, "duration_sec": rec.duration_sec}
            if rec.audio_path is not None:
                obj["audio_path"] = rec.audio_path
            if rec.ref_text is not None:
                obj["ref_text"] = rec.ref_text
            obj["split"] = rec.split
            fh.write(_dump_line(obj))


# ---------------------------------------------------------------------------
# Hypotheses
# ---------------------------------------------------------------------------


def read_hypotheses(path: str | Path) -> list[HypothesisRecord]:
    records: list[HypothesisRecord] = []
    seen: set[tuple[str, str]] = set()
    for lineno, obj in _iter_jsonl(path):
        rec = HypothesisRecord(
            utt_id=str(_require(obj, "utt_id", path, lineno)),
            hyp_id=str(_require(obj, "hyp_id", path, lineno)),
            text=str(_require(obj, "text", path, lineno)),
            perturbation=PerturbationDescriptor(
                alpha=float(_require(obj, "alpha", path, lineno)),
                pitch_semitones=int(_require(obj, "pitch_semitones", path, lineno)),
                atempo=float(_require(obj, "atempo", path, lineno)),
            ),
            ppl=(None if obj.get("ppl") is None else float(obj["ppl"])),
        ).validate()
        key = (rec.utt_id, rec.hyp_id)
        if key in seen:
            raise DataFormatError(
                "%s: line %d duplicate (utt_id, hyp_id) %r" % (path, lineno, key)
            )
        seen.add(key)
        records.append(rec)
    return records


def write_hypotheses(records: Iterable[HypothesisRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            rec.validate()
            obj: dict = {
                "utt_id": rec.utt_id,
                "hyp_id": rec.hyp_id,
                "text": rec.text,
                "alpha": rec.perturbation.alpha,
                "pitch_semitones": rec.perturbation.pitch_semitones,
                "atempo": rec.perturbation.atempo,
            }
            if rec.ppl is not None:
                obj["ppl"] = rec.ppl
            fh.write(_dump_line(obj))


# ---------------------------------------------------------------------------
# Score files
# ---------------------------------------------------------------------------


def read_scores(path: str | Path) -> list[QualityVector]:
    records: list[QualityVector] = []
    seen: set[tuple[str, str]] = set()
    for lineno, obj in _iter_jsonl(path):
        rec = QualityVector(
            utt_id=str(_require(obj, "utt_id", path, lineno)),
            hyp_id=str(_require(obj, "hyp_id", path, lineno)),
            pred_wer=float(_require(obj, "pred_wer", path, lineno)),
            cos=float(_require(obj, "cos", path, lineno)),
            euc=float(_require(obj, "euc", path, lineno)),
        ).validate()
        key = (rec.utt_id, rec.hyp_id)
        if key in seen:
            raise DataFormatError(
                "%s: line %d duplicate (utt_id, hyp_id) %r" % (path, lineno, key)
            )
        seen.add(key)
        records.append(rec)
    return records


def write_scores(records: Iterable[QualityVector], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            rec.validate()
            fh.write(
                _dump_line(
                    {
                        "utt_id": rec.utt_id,
                        "hyp_id": rec.hyp_id,
                        "pred_wer": rec.pred_wer,
                        "cos": rec.cos,
                        "euc": rec.euc,
                    }
                )
            )


# ---------------------------------------------------------------------------
# Subset (selection result) files
# ---------------------------------------------------------------------------


def write_subset(result: SelectionResult, path: str | Path) -> None:
    result.validate()
    with open(path, "w", encoding="utf-8") as fh:
        for e in result.entries:
            obj: dict = {
                "utt_id": e.utt_id,
                "hyp_id": e.hyp_id,
                "text": e.text,
                "weight": e.weight,
                "rule": result.rule,
                "p": result.p,
            }
            if result.p2 is not None:
                obj["p2"] = result.p2
            obj["thresholds"] = {k: result.thresholds[k] for k in sorted(result.thresholds)}
            fh.write(_dump_line(obj))


def read_subset(path: str | Path) -> SelectionResult:
    entries: list[SelectionEntry] = []
    rule = p = p2 = thresholds = None
    for lineno, obj in _iter_jsonl(path):
        entries.append(
            SelectionEntry(
                utt_id=str(_require(obj, "utt_id", path, lineno)),
                hyp_id=str(_require(obj, "hyp_id", path, lineno)),
                text=str(_require(obj, "text", path, lineno)),
                weight=int(obj.get("weight", 1)),
            )
        )
        if rule is None:
            rule = _require(obj, "rule", path, lineno)
            p = obj.get("p")
            p2 = obj.get("p2")
            thresholds = obj.get("thresholds", {})
        elif obj.get("rule") != rule:
            raise DataFormatError(
                "%s: line %d mixes rules %r and %r" % (path, lineno, rule, obj.get("rule"))
            )
    if rule is None:
        # Empty selection: rule provenance lives in the sidecar only.
        return SelectionResult(rule=None, entries=[], p=None, thresholds={})
    return SelectionResult(
        rule=rule,
        entries=entries,
        p=None if p is None else int(p),
        p2=None if p2 is None else int(p2),
        thresholds={str(k): float(v) for k, v in (thresholds or {}).items()},
    ).validate()


# ---------------------------------------------------------------------------
# EMB1 binary embeddings
#
# Layout: magic "EMB1"; u32 LE dim; u64 LE row count; then per row:
# u16 LE id byte length, UTF-8 id bytes, dim IEEE-754 float32 LE values.
# ---------------------------------------------------------------------------

EMB1_MAGIC = b"EMB1"
_EMB1_HEADER = struct.Struct("<4sIQ")
_EMB1_IDLEN = struct.Struct("<H")


def write_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    matrix.validate_finite()
    with open(path, "wb") as fh:
        fh.write(_EMB1_HEADER.pack(EMB1_MAGIC, matrix.dim, len(matrix)))
        for rid, vec in zip(matrix.ids, matrix.vectors):
            id_bytes = rid.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise DataFormatError("id too long for EMB1: %r" % (rid[:40],))
            fh.write(_EMB1_IDLEN.pack(len(id_bytes)))
            fh.write(id_bytes)
            fh.write(vec.astype("<f4", copy=False).tobytes())


def _read_exact(fh, n: int, path, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataFormatError("%s: truncated file while reading %s" % (path, what))
    return buf


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        magic, dim, count = _EMB1_HEADER.unpack(
            _read_exact(fh, _EMB1_HEADER.size, path, "header")
        )
        if magic != EMB1_MAGIC:
            raise DataFormatError("%s: bad magic %r, expected %r" % (path, magic, EMB1_MAGIC))
        if dim == 0:
            raise DataFormatError("%s: invalid dim 0" % (path,))
        ids: list[str] = []
        rows = np.zeros((count, dim), dtype=np.float32)
        vec_bytes = 4 * dim
        for r in range(count):
            (id_len,) = _EMB1_IDLEN.unpack(_read_exact(fh, 2, path, "row id length"))
            rid = _read_exact(fh, id_len, path, "row id").decode("utf-8")
            vec = np.frombuffer(
                _read_exact(fh, vec_bytes, path, "row %r vector" % rid), dtype="<f4"
            )
            if not np.isfinite(vec).all():
                raise DataFormatError("%s: non-finite value at id %r" % (path, rid))
            ids.append(rid)
            rows[r] = vec
        if fh.read(1):
            raise DataFormatError("%s: trailing bytes after %d rows" % (path, count))
    if len(set(ids)) != len(ids):
        raise DataFormatError("%s: duplicate ids" % (path,))
    return EmbeddingMatrix(dim, ids, rows)


def scan_embedding_offsets(path: str | Path) -> tuple[int, dict[str, int]]:
    """Single pass over an EMB1 file returning (dim, id -> vector byte offset).

    Lets large files be consumed row-at-a-time without holding the matrix.
    """
    offsets: dict[str, int] = {}
    with open(path, "rb") as fh:
        magic, dim, count = _EMB1_HEADER.unpack(
            _read_exact(fh, _EMB1_HEADER.size, path, "header")
        )
        if magic != EMB1_MAGIC:
            raise DataFormatError("%s: bad magic %r, expected %r" % (path, magic, EMB1_MAGIC))
        if dim == 0:
            raise DataFormatError("%s: invalid dim 0" % (path,))
        vec_bytes = 4 * dim
        for _ in range(count):
            (id_len,) = _EMB1_IDLEN.unpack(_read_exact(fh, 2, path, "row id length"))
            rid = _read_exact(fh, id_len, path, "row id").decode("utf-8")
            if rid in offsets:
                raise DataFormatError("%s: duplicate id %r" % (path, rid))
            offsets[rid] = fh.tell()
            fh.seek(vec_bytes, 1)
        if fh.read(1):
            raise DataFormatError("%s: trailing bytes after %d rows" % (path, count))
    return int(dim), offsets


def read_embedding_row(fh, offset: int, dim: int) -> np.ndarray:
    """Read one float32 vector from an open EMB1 file at a scanned offset."""
    fh.seek(offset)
    buf = fh.read(4 * dim)
    if len(buf) != 4 * dim:
        raise DataFormatError("truncated row at offset %d" % (offset,))
    return np.frombuffer(buf, dtype="<f4")


# ---------------------------------------------------------------------------
# Plain-text id lists
# ---------------------------------------------------------------------------


def write_id_list(ids: Iterable[str], path: str | Path, header: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write("# %s\n" % (line,))
        for rid in ids:
            fh.write("%s\n" % (rid,))


def read_id_list(path: str | Path) -> list[str]:
    out: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                out.append(line)
    return out
