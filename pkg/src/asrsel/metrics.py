"""Word/character error rates via edit distance, hour accounting, and
report assembly (perturbation sweeps, subset evaluation)."""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import (
    HypothesisRecord,
    SelectionResult,
    UtteranceRecord,
)
from .errors import DataFormatError


@dataclass
class ErrorRateBreakdown:
    """Minimal-cost alignment counts against a reference.

    rate = (S + D + I) / ref_len; undefined (None) for an empty reference.
    Rates above 1.0 are possible with many insertions.
    """

    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float | None:
        if self.ref_len == 0:
            return None
        return self.errors / self.ref_len


def edit_distance_units(ref: Sequence, hyp: Sequence) -> ErrorRateBreakdown:
    """Unit-cost Levenshtein alignment with a component breakdown.

    Traceback prefers, on equal cost, substitution over deletion over
    insertion, so the S/D/I split is deterministic (the total never
    depends on the preference).
    """
    n, m = len(ref), len(hyp)
    # dp[i][j] = distance between ref[:i] and hyp[:j]
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i
    for j in range(1, m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row = dp[i]
        prev = dp[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if ri == hyp[j - 1] else 1)
            dele = prev[j] + 1
            ins = row[j - 1] + 1
            row[j] = sub if sub <= dele and sub <= ins else (dele if dele <= ins else ins)

    subs = dels = inss = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + (
            0 if ref[i - 1] == hyp[j - 1] else 1
        ):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            inss += 1
            j -= 1
    return ErrorRateBreakdown(subs, dels, inss, n)


def normalize_text(text: str) -> str:
    """Lowercase and strip ASCII punctuation; used only behind --normalize."""
    text = text.lower().translate(str.maketrans("", "", string.punctuation))
    return " ".join(text.split())


def wer(ref_text: str, hyp_text: str, normalize: bool = False) -> ErrorRateBreakdown:
    """Word error rate: tokens are whitespace-run splits, case preserved."""
    if normalize:
        ref_text, hyp_text = normalize_text(ref_text), normalize_text(hyp_text)
    return edit_distance_units(ref_text.split(), hyp_text.split())


def cer(ref_text: str, hyp_text: str, normalize: bool = False) -> ErrorRateBreakdown:
    """Character error rate over Unicode scalars; whitespace runs collapse
    to single spaces and the spaces count as characters."""
    if normalize:
        ref_text, hyp_text = normalize_text(ref_text), normalize_text(hyp_text)
    ref_units = list(" ".join(ref_text.split()))
    hyp_units = list(" ".join(hyp_text.split()))
    return edit_distance_units(ref_units, hyp_units)


def hours(subset: SelectionResult, manifest: Iterable[UtteranceRecord]) -> float:
    """Total selected audio in hours; weight-2 entries count twice."""
    durations = {r.utt_id: r.duration_sec for r in manifest}
    total = 0.0
    for e in subset.entries:
        if e.utt_id not in durations:
            raise DataFormatError("no duration for selected utt %r" % (e.utt_id,))
        total += e.weight * durations[e.utt_id]
    return total / 3600.0


# ---------------------------------------------------------------------------
# Perturbation sweep (labeled data only; never part of selection)
# ---------------------------------------------------------------------------

SWEEP_RETENTION_RATE = 0.20


@dataclass
class ConfigSweep:
    config: str
    count: int
    improved: int
    improvement_rate: float
    mean_wer_reduction: float | None
    retained: bool


@dataclass
class SweepReport:
    configs: list[ConfigSweep]

    def as_dict(self) -> dict:
        return {
            "retention_rate_threshold": SWEEP_RETENTION_RATE,
            "configs": [
                {
                    "config": c.config,
                    "count": c.count,
                    "improved": c.improved,
                    "improvement_rate": c.improvement_rate,
                    "mean_wer_reduction": c.mean_wer_reduction,
                    "retained": c.retained,
                }
                for c in self.configs
            ],
        }


def sweep_report(
    manifest: Iterable[UtteranceRecord],
    hyps: Iterable[HypothesisRecord],
    normalize: bool = False,
) -> SweepReport:
    """Per perturbation configuration: the fraction of utterances whose WER
    drops below the baseline's, and the mean drop over those that improve.

    Configurations with improvement rate >= 0.20 are flagged as retained.
    Requires reference texts; selection never calls this.
    """
    refs: dict[str, str] = {}
    for rec in manifest:
        if rec.ref_text is None:
            raise DataFormatError("missing ref_text for utt %r" % (rec.utt_id,))
        refs[rec.utt_id] = rec.ref_text

    baselines: dict[str, HypothesisRecord] = {}
    perturbed: dict[str, list[HypothesisRecord]] = {}
    for h in hyps:
        if h.perturbation.is_baseline:
            baselines[h.utt_id] = h
        else:
            perturbed.setdefault(h.perturbation.label(), []).append(h)

    base_wer: dict[str, float] = {}
    for utt_id, h in baselines.items():
        if utt_id not in refs:
            raise DataFormatError("hypothesis for utt %r not in manifest" % (utt_id,))
        rate = wer(refs[utt_id], h.text, normalize).rate
        if rate is None:
            raise DataFormatError("empty reference text for utt %r" % (utt_id,))
        base_wer[utt_id] = rate

    configs: list[ConfigSweep] = []
    for label in sorted(perturbed):
        count = improved = 0
        reductions: list[float] = []
        for h in perturbed[label]:
            if h.utt_id not in base_wer:
                raise DataFormatError(
                    "no baseline hypothesis for utt %r" % (h.utt_id,)
                )
            rate = wer(refs[h.utt_id], h.text, normalize).rate
            count += 1
            if rate < base_wer[h.utt_id]:
                improved += 1
                reductions.append(base_wer[h.utt_id] - rate)
        rate_frac = improved / count if count else 0.0
        configs.append(
            ConfigSweep(
                config=label,
                count=count,
                improved=improved,
                improvement_rate=rate_frac,
                mean_wer_reduction=(sum(reductions) / len(reductions)) if reductions else None,
                retained=rate_frac >= SWEEP_RETENTION_RATE,
            )
        )
    return SweepReport(configs)


# ---------------------------------------------------------------------------
# Subset evaluation
# ---------------------------------------------------------------------------


def evaluate_subset(
    subset: SelectionResult,
    manifest: Iterable[UtteranceRecord],
    normalize: bool = False,
) -> dict:
    """Corpus WER of a selected subset against manifest references.

    Corpus WER pools error counts: sum(S+D+I) / sum(ref words), not a mean
    of per-utterance rates.
    """
    manifest = list(manifest)
    refs: dict[str, str] = {}
    for rec in manifest:
        if rec.ref_text is not None:
            refs[rec.utt_id] = rec.ref_text

    rows = []
    tot_err = tot_ref = 0
    tot_s = tot_d = tot_i = 0
    for e in subset.entries:
        if e.utt_id not in refs:
            raise DataFormatError("no reference text for selected utt %r" % (e.utt_id,))
        br = wer(refs[e.utt_id], e.text, normalize)
        rows.append(
            {
                "utt_id": e.utt_id,
                "hyp_id": e.hyp_id,
                "weight": e.weight,
                "substitutions": br.substitutions,
                "deletions": br.deletions,
                "insertions": br.insertions,
                "ref_len": br.ref_len,
                "wer": br.rate,
            }
        )
        tot_err += br.errors
        tot_ref += br.ref_len
        tot_s += br.substitutions
        tot_d += br.deletions
        tot_i += br.insertions

    return {
        "corpus_wer": (tot_err / tot_ref) if tot_ref else None,
        "substitutions": tot_s,
        "deletions": tot_d,
        "insertions": tot_i,
        "ref_words": tot_ref,
        "entries": len(subset.entries),
        "hours": hours(subset, manifest),
        "per_utterance": rows,
    }
