"""Deterministic synthetic pools with planted true-WER structure.

Every selection rule can be validated against the planted truth: each
hypothesis gets a true WER drawn uniformly, and the generated quality
signals follow

    signal = rho * planted + (1 - rho) * independent noise

so rho=1 reproduces the planted values exactly (after clamping) and
rho=0 carries no information about them.  Text embeddings are unit
vectors rotated away from the speech embedding by an angle growing with
the same mixed value, which makes the cosine and Euclidean scores
consistent with the predicted-WER signal.

Generation uses numpy's PCG64 with one spawned stream per artifact
(manifest, texts, hypotheses, embeddings, features, scores), so
regenerating any one artifact is stable against changes in the others.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    EmbeddingMatrix,
    HypothesisRecord,
    PerturbationDescriptor,
    UtteranceRecord,
    all_valid_descriptors,
    write_embeddings,
    write_hypotheses,
    write_manifest,
    write_scores,
    _dump_line,
    _iter_jsonl,
    _require,
)
from .errors import DataFormatError
from .predictor import write_targets
from .scoring import cosine, dedup_pool, euclidean
from .corpus import QualityVector

_VOCAB = (
    "the a this that and or but with from into over under near far "
    "red blue green small large quick slow bright dark old new "
    "river stone cloud window garden market station harbor meadow "
    "walks turns opens closes brings takes finds keeps sends holds"
).split()


@dataclass
class SynthConfig:
    n_utts: int = 100
    seed: int = 0
    rho: float = 0.8  # signal strength: 1 = scores equal planted truth
    emb_dim: int = 32
    feat_dim: int = 39
    n_queries: int = 16
    min_hyps: int = 8  # perturbed hypotheses per utterance, pre-dedup
    max_hyps: int = 27
    noise_jitter: float = 0.05

    def validate(self) -> "SynthConfig":
        if self.n_utts < 1:
            raise DataFormatError("n_utts must be >= 1")
        if not (0.0 <= self.rho <= 1.0):
            raise DataFormatError("rho %r outside [0, 1]" % (self.rho,))
        if not (1 <= self.min_hyps <= self.max_hyps <= 27):
            raise DataFormatError("hyp counts must satisfy 1 <= min <= max <= 27")
        return self


def _clamp_window(x: float) -> float:
    return min(0.99, max(0.01, x))


def _fab_text(rng: np.random.Generator, n_words: int) -> str:
    return " ".join(_VOCAB[i] for i in rng.integers(0, len(_VOCAB), size=n_words))


def _corrupt(rng: np.random.Generator, words: list[str], severity: float) -> str:
    """Apply roughly severity * len word edits; used only to fabricate
    plausible hypothesis texts."""
    out = list(words)
    n_edits = int(round(severity * len(words)))
    for _ in range(n_edits):
        op = rng.integers(0, 3)
        if op == 0 and out:  # substitute
            out[int(rng.integers(0, len(out)))] = _VOCAB[int(rng.integers(0, len(_VOCAB)))]
        elif op == 1 and len(out) > 1:  # delete
            del out[int(rng.integers(0, len(out)))]
        else:  # insert
            out.insert(int(rng.integers(0, len(out) + 1)), _VOCAB[int(rng.integers(0, len(_VOCAB)))])
    return " ".join(out)


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.sqrt((v * v).sum())


def generate(cfg: SynthConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write the full wire-format set plus a planted-truth file; returns a
    name -> path map."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams = np.random.SeedSequence(cfg.seed).spawn(6)
    rng_manifest = np.random.default_rng(streams[0])
    rng_text = np.random.default_rng(streams[1])
    rng_hyp = np.random.default_rng(streams[2])
    rng_emb = np.random.default_rng(streams[3])
    rng_feat = np.random.default_rng(streams[4])
    rng_score = np.random.default_rng(streams[5])

    perturbed_grid = [d for d in all_valid_descriptors() if not d.is_baseline]

    manifest: list[UtteranceRecord] = []
    hyps: list[HypothesisRecord] = []
    truth: list[tuple[str, str, float]] = []
    speech_rows: list[tuple[str, np.ndarray]] = []
    text_rows: list[tuple[str, np.ndarray]] = []
    feat_rows: list[tuple[str, np.ndarray]] = []
    score_inputs: dict[tuple[str, str], float] = {}  # (utt, hyp) -> planted

    feat_centers = rng_feat.standard_normal((4, cfg.feat_dim))

    for i in range(cfg.n_utts):
        utt_id = "u%05d" % i
        duration = float(rng_manifest.uniform(2.0, 10.0))
        ref_words = _fab_text(rng_text, int(rng_text.integers(4, 9))).split()
        manifest.append(
            UtteranceRecord(
                utt_id=utt_id,
                duration_sec=duration,
                ref_text=" ".join(ref_words),
                split="pool",
            )
        )
        feat_rows.append(
            (utt_id, (feat_centers[i % 4] + 0.3 * rng_feat.standard_normal(cfg.feat_dim)).astype(np.float32))
        )

        sp = _unit(rng_emb, cfg.emb_dim)
        orth = rng_emb.standard_normal(cfg.emb_dim)
        orth -= (orth @ sp) * sp
        orth /= np.sqrt((orth * orth).sum())
        speech_rows.append((utt_id, sp.astype(np.float32)))

        n_pert = int(rng_hyp.integers(cfg.min_hyps, cfg.max_hyps + 1))
        picks = rng_hyp.choice(len(perturbed_grid), size=n_pert, replace=False)
        descriptors = [PerturbationDescriptor.baseline()] + [
            perturbed_grid[int(k)] for k in sorted(picks)
        ]
        for j, desc in enumerate(descriptors):
            hyp_id = "%s-h%02d" % (utt_id, j)
            planted = float(rng_hyp.uniform(0.0, 1.0))
            text = (
                " ".join(ref_words)
                if planted < 0.02
                else _corrupt(rng_text, ref_words, planted)
            )
            hyps.append(
                HypothesisRecord(
                    utt_id=utt_id,
                    hyp_id=hyp_id,
                    text=text,
                    perturbation=desc,
                    ppl=float(np.exp(rng_hyp.uniform(1.0, 6.0))),
                )
            )
            truth.append((utt_id, hyp_id, planted))
            score_inputs[(utt_id, hyp_id)] = planted

            # Text embedding: rotate away from speech proportionally to the
            # rho-mixed severity, so alignment scores carry the signal.
            mix = cfg.rho * planted + (1.0 - cfg.rho) * float(rng_emb.uniform(0.0, 1.0))
            angle = 0.5 * np.pi * min(1.0, max(0.0, mix))
            tx = np.cos(angle) * sp + np.sin(angle) * orth
            text_rows.append((hyp_id, tx.astype(np.float32)))

    # Score file covers the de-duplicated pool, like the scoring stage.
    pool = dedup_pool(hyps)
    speech = EmbeddingMatrix.from_rows(cfg.emb_dim, speech_rows)
    text = EmbeddingMatrix.from_rows(cfg.emb_dim, text_rows)
    scores: list[QualityVector] = []
    for utt_id in sorted(pool.utterances):
        pu = pool.utterances[utt_id]
        for h in [pu.baseline] + pu.perturbed:
            planted = score_inputs[(utt_id, h.hyp_id)]
            noise = cfg.rho * planted + (1.0 - cfg.rho) * float(rng_score.uniform(0.0, 1.0))
            noise += (1.0 - cfg.rho) * cfg.noise_jitter * float(rng_score.standard_normal())
            sp_v = speech.vector(utt_id)
            tx_v = text.vector(h.hyp_id)
            scores.append(
                QualityVector(
                    utt_id=utt_id,
                    hyp_id=h.hyp_id,
                    pred_wer=_clamp_window(noise),
                    cos=cosine(sp_v, tx_v),
                    euc=euclidean(sp_v, tx_v),
                ).validate()
            )

    query_rows = [
        ("q%04d" % i, (feat_centers[0] + 0.3 * rng_feat.standard_normal(cfg.feat_dim)).astype(np.float32))
        for i in range(cfg.n_queries)
    ]

    paths = {
        "manifest": out / "manifest.jsonl",
        "hyps": out / "hyps.jsonl",
        "scores": out / "scores.jsonl",
        "speech_emb": out / "speech.emb1",
        "text_emb": out / "text.emb1",
        "pool_features": out / "pool_features.emb1",
        "query_features": out / "query_features.emb1",
        "pairs_speech": out / "pairs_speech.emb1",
        "pairs_text": out / "pairs_text.emb1",
        "pairs_targets": out / "pairs_targets.jsonl",
        "truth": out / "truth.jsonl",
    }
    write_manifest(manifest, paths["manifest"])
    write_hypotheses(hyps, paths["hyps"])
    write_scores(scores, paths["scores"])
    write_embeddings(speech, paths["speech_emb"])
    write_embeddings(text, paths["text_emb"])
    write_embeddings(EmbeddingMatrix.from_rows(cfg.feat_dim, feat_rows), paths["pool_features"])
    write_embeddings(EmbeddingMatrix.from_rows(cfg.feat_dim, query_rows), paths["query_features"])

    # Labeled pairs for predictor training: one row per hypothesis, the
    # speech vector repeated under the hypothesis id.
    utt_of = {h.hyp_id: h.utt_id for h in hyps}
    pair_speech = [(hid, speech.vector(utt_of[hid])) for hid, _ in text_rows]
    write_embeddings(
        EmbeddingMatrix.from_rows(cfg.emb_dim, pair_speech), paths["pairs_speech"]
    )
    write_embeddings(text, paths["pairs_text"])
    write_targets(
        [(hid, min(1.0, max(0.0, score_inputs[(utt_of[hid], hid)]))) for hid, _ in text_rows],
        paths["pairs_targets"],
    )
    write_truth(truth, paths["truth"])
    return paths


def write_truth(rows, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, hyp_id, true_wer in rows:
            fh.write(_dump_line({"utt_id": utt_id, "hyp_id": hyp_id, "true_wer": true_wer}))


def read_truth(path: str | Path) -> dict[tuple[str, str], float]:
    out = {}
    for lineno, obj in _iter_jsonl(path):
        key = (
            str(_require(obj, "utt_id", path, lineno)),
            str(_require(obj, "hyp_id", path, lineno)),
        )
        out[key] = float(_require(obj, "true_wer", path, lineno))
    return out
