"""Cross-modal alignment scores and per-hypothesis quality vectors over
the de-duplicated perturbation pool.

De-duplication compares perturbed transcriptions after whitespace
canonicalization only (trim plus collapse of interior runs; no case
folding).  Within a duplicate group the hypothesis with the smallest
(alpha, |pitch|, |1 - atempo|, hyp_id) tuple survives; perturbed
hypotheses whose text equals the baseline's are dropped outright since
their improvement deltas would be zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import EmbeddingMatrix, HypothesisRecord, QualityVector
from .errors import DataFormatError
from .predictor import PredictorNet, forward_batch

MAX_HYPS_PER_UTT = 28  # baseline + 27 perturbed, pre-dedup


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataFormatError("dimension mismatch %r vs %r" % (a.shape, b.shape))
    na = float(np.sqrt((a * a).sum()))
    nb = float(np.sqrt((b * b).sum()))
    if na == 0.0 or nb == 0.0:
        raise DataFormatError("zero-norm input to cosine")
    return float(a @ b) / (na * nb)


def euclidean(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataFormatError("dimension mismatch %r vs %r" % (a.shape, b.shape))
    d = a - b
    return float(np.sqrt((d * d).sum()))


def canonical_text(text: str) -> str:
    return " ".join(text.split())


@dataclass
class PooledUtterance:
    baseline: HypothesisRecord
    perturbed: list[HypothesisRecord]  # deduped, sorted by hyp_id
    dropped_duplicates: int = 0
    dropped_baseline_equal: int = 0

    @property
    def k(self) -> int:
        return len(self.perturbed)


@dataclass
class PerturbationPool:
    """Per-utterance baseline plus unique perturbed hypotheses; scores are
    filled in by score_pool."""

    utterances: dict[str, PooledUtterance]
    scores: dict[tuple[str, str], QualityVector] = field(default_factory=dict)

    def score_of(self, utt_id: str, hyp_id: str) -> QualityVector:
        try:
            return self.scores[(utt_id, hyp_id)]
        except KeyError:
            raise DataFormatError(
                "no quality vector for (%s, %s)" % (utt_id, hyp_id)
            ) from None


def dedup_pool(hyps: Sequence[HypothesisRecord]) -> PerturbationPool:
    """Group hypotheses per utterance and drop duplicate transcriptions."""
    by_utt: dict[str, list[HypothesisRecord]] = {}
    for h in hyps:
        by_utt.setdefault(h.utt_id, []).append(h)

    utterances: dict[str, PooledUtterance] = {}
    for utt_id in sorted(by_utt):
        group = by_utt[utt_id]
        if len(group) > MAX_HYPS_PER_UTT:
            raise DataFormatError(
                "utt %r has %d hypotheses, more than %d"
                % (utt_id, len(group), MAX_HYPS_PER_UTT)
            )
        baselines = [h for h in group if h.perturbation.is_baseline]
        if len(baselines) != 1:
            raise DataFormatError(
                "utt %r has %d baseline hypotheses, expected exactly 1"
                % (utt_id, len(baselines))
            )
        baseline = baselines[0]
        base_text = canonical_text(baseline.text)

        dropped_eq = 0
        by_text: dict[str, list[HypothesisRecord]] = {}
        for h in group:
            if h.perturbation.is_baseline:
                continue
            text = canonical_text(h.text)
            if text == base_text:
                dropped_eq += 1
                continue
            by_text.setdefault(text, []).append(h)

        kept: list[HypothesisRecord] = []
        dropped_dup = 0
        for text, dups in by_text.items():
            dups.sort(
                key=lambda h: (
                    h.perturbation.alpha,
                    abs(h.perturbation.pitch_semitones),
                    abs(1.0 - h.perturbation.atempo),
                    h.hyp_id,
                )
            )
            kept.append(dups[0])
            dropped_dup += len(dups) - 1
        kept.sort(key=lambda h: h.hyp_id)
        utterances[utt_id] = PooledUtterance(
            baseline=baseline,
            perturbed=kept,
            dropped_duplicates=dropped_dup,
            dropped_baseline_equal=dropped_eq,
        )
    return PerturbationPool(utterances)


def score_pool(
    pool: PerturbationPool,
    speech_embs: EmbeddingMatrix,
    text_embs: EmbeddingMatrix,
    net: PredictorNet,
    batch_rows: int = 256,
) -> PerturbationPool:
    """Attach a quality vector (predicted WER, cosine, Euclidean) to every
    hypothesis in the pool, baseline included.

    Speech embeddings are keyed by utt_id, text embeddings by hyp_id.
    Rows are processed in (utt_id, hyp_id) order so output is independent
    of input ordering.
    """
    items: list[tuple[str, str]] = []
    for utt_id in sorted(pool.utterances):
        pu = pool.utterances[utt_id]
        for h in [pu.baseline] + pu.perturbed:
            items.append((utt_id, h.hyp_id))

    pool.scores = {}
    for start in range(0, len(items), batch_rows):
        chunk = items[start : start + batch_rows]
        x = np.empty((len(chunk), net.input_dim), dtype=np.float64)
        for r, (utt_id, hyp_id) in enumerate(chunk):
            sp = speech_embs.vector(utt_id).astype(np.float64)
            tx = text_embs.vector(hyp_id).astype(np.float64)
            if sp.size + tx.size != net.input_dim:
                raise DataFormatError(
                    "embedding dims (%d, %d) do not match net input %d"
                    % (sp.size, tx.size, net.input_dim)
                )
            x[r, : sp.size] = sp
            x[r, sp.size :] = tx
        preds = forward_batch(net, x, mode="eval")
        for r, (utt_id, hyp_id) in enumerate(chunk):
            sp = speech_embs.vector(utt_id)
            tx = text_embs.vector(hyp_id)
            pool.scores[(utt_id, hyp_id)] = QualityVector(
                utt_id=utt_id,
                hyp_id=hyp_id,
                pred_wer=float(preds[r]),
                cos=cosine(sp, tx),
                euc=euclidean(sp, tx),
            ).validate()
    return pool


def pool_score_rows(pool: PerturbationPool) -> list[QualityVector]:
    """Scores in canonical (utt_id, hyp_id) order for writing."""
    return [pool.scores[key] for key in sorted(pool.scores)]
