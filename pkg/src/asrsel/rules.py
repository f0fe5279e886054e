"""Improvement deltas, percentile thresholds, acceptance rules, and the
comparison baselines.

All thresholds use the nearest-rank percentile: the 1-based element at
ceil(p/100 * n) of the ascending sorted values, so p=100 gives the
maximum.  Improvement thresholds aggregate strictly positive deltas only.
Every rule is a pure function of scores, hypotheses, and durations;
reference texts are never read, and ties always break toward the
smallest id.

Percentile direction: for every rule a larger p means a stricter, smaller
selection.  For the baseline-quality rule this puts the cap for
lower-is-better metrics at the (100-p)-th percentile of the baseline
distribution and the floor for cosine at the p-th, which coincides with
the improvement-rule convention at p=50 and keeps |selection(p)|
non-increasing in p.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import (
    HypothesisRecord,
    QualityVector,
    SelectionEntry,
    SelectionResult,
    UtteranceRecord,
)
from .errors import DataFormatError
from .metrics import cer

PERCENTILES = (50, 60, 70, 80, 90, 95)
METRICS = ("pred_wer", "cos", "euc")


def _check_percentile(p: int, name: str = "p") -> int:
    if p not in PERCENTILES:
        raise DataFormatError(
            "%s must be one of %s, got %r" % (name, PERCENTILES, p)
        )
    return p


def nearest_rank(sorted_values: list[float], p: float) -> float:
    """Ascending-sorted nearest-rank percentile (1-based ceil index)."""
    if not sorted_values:
        raise DataFormatError("percentile of an empty distribution")
    if not (0 < p <= 100):
        raise DataFormatError("percentile %r outside (0, 100]" % (p,))
    idx = max(1, math.ceil(p / 100.0 * len(sorted_values)))
    return sorted_values[idx - 1]


# ---------------------------------------------------------------------------
# Scored pool assembly
# ---------------------------------------------------------------------------


@dataclass
class ScoredUtterance:
    utt_id: str
    baseline: HypothesisRecord
    baseline_score: QualityVector
    perturbed: list[tuple[HypothesisRecord, QualityVector]]  # sorted by hyp_id


@dataclass
class ScoredPool:
    utterances: list[ScoredUtterance]  # sorted by utt_id
    digest: str


def build_scored_pool(
    hyps: list[HypothesisRecord], scores: list[QualityVector]
) -> ScoredPool:
    """Join hypothesis records with their quality vectors.

    Every score row must reference a known hypothesis; every utterance
    with any score must have a scored baseline.
    """
    by_pair = {(h.utt_id, h.hyp_id): h for h in hyps}
    by_utt: dict[str, dict[str, QualityVector]] = {}
    for s in scores:
        if (s.utt_id, s.hyp_id) not in by_pair:
            raise DataFormatError(
                "score row (%s, %s) has no hypothesis record" % (s.utt_id, s.hyp_id)
            )
        by_utt.setdefault(s.utt_id, {})[s.hyp_id] = s

    utterances = []
    for utt_id in sorted(by_utt):
        rows = by_utt[utt_id]
        baseline = baseline_score = None
        perturbed = []
        for hyp_id in sorted(rows):
            h = by_pair[(utt_id, hyp_id)]
            if h.perturbation.is_baseline:
                baseline, baseline_score = h, rows[hyp_id]
            else:
                perturbed.append((h, rows[hyp_id]))
        if baseline is None:
            raise DataFormatError("utt %r has scores but no scored baseline" % (utt_id,))
        utterances.append(ScoredUtterance(utt_id, baseline, baseline_score, perturbed))

    digest = hashlib.sha256()
    for s in sorted(scores, key=lambda s: (s.utt_id, s.hyp_id)):
        digest.update(
            ("%s\x00%s\x00%r\x00%r\x00%r\n" % (s.utt_id, s.hyp_id, s.pred_wer, s.cos, s.euc)).encode()
        )
    return ScoredPool(utterances, digest.hexdigest())


# ---------------------------------------------------------------------------
# Improvement deltas and thresholds
# ---------------------------------------------------------------------------


@dataclass
class ImprovementRecord:
    """Signed per-metric gains of one perturbed hypothesis over its
    baseline, oriented so positive always means better: the predicted-WER
    and Euclidean deltas are baseline minus perturbed, the cosine delta is
    perturbed minus baseline."""

    utt_id: str
    hyp_id: str
    pred_wer: float
    cos: float
    euc: float


@dataclass
class ThresholdSet:
    p: int
    tau: dict[str, float]
    source: str = "improvement"  # or "baseline"
    pool_digest: str | None = None


def deltas(pool: ScoredPool) -> list[ImprovementRecord]:
    out = []
    for su in pool.utterances:
        b = su.baseline_score
        for h, s in su.perturbed:
            out.append(
                ImprovementRecord(
                    utt_id=su.utt_id,
                    hyp_id=h.hyp_id,
                    pred_wer=b.pred_wer - s.pred_wer,
                    cos=s.cos - b.cos,
                    euc=b.euc - s.euc,
                )
            )
    return out


def percentile_thresholds(
    records: list[ImprovementRecord],
    p: int,
    pool_digest: str | None = None,
    metrics: tuple[str, ...] = METRICS,
) -> ThresholdSet:
    """Per-metric p-th nearest-rank percentile of the strictly positive
    improvements.  A metric with no positive improvement is an error."""
    _check_percentile(p)
    tau = {}
    for metric in metrics:
        positives = sorted(v for r in records if (v := getattr(r, metric)) > 0)
        if not positives:
            raise DataFormatError(
                "no strictly positive improvements for metric %r" % (metric,)
            )
        tau[metric] = nearest_rank(positives, p)
    return ThresholdSet(p=p, tau=tau, source="improvement", pool_digest=pool_digest)


def _check_binding(pool: ScoredPool, thresholds: ThresholdSet) -> None:
    if thresholds.pool_digest is not None and thresholds.pool_digest != pool.digest:
        raise DataFormatError(
            "thresholds were computed on a different pool (digest mismatch)"
        )


# ---------------------------------------------------------------------------
# Acceptance rules over improvements
# ---------------------------------------------------------------------------


def _reduce_per_utt(
    su: ScoredUtterance, accepted: list[tuple[HypothesisRecord, ImprovementRecord]],
    keep_metric: str,
) -> SelectionEntry | None:
    """Largest delta of keep_metric wins; ties go to the smallest hyp_id."""
    if not accepted:
        return None
    best_val = max(getattr(rec, keep_metric) for _, rec in accepted)
    winners = sorted(
        (h for h, rec in accepted if getattr(rec, keep_metric) == best_val),
        key=lambda h: h.hyp_id,
    )
    h = winners[0]
    return SelectionEntry(utt_id=su.utt_id, hyp_id=h.hyp_id, text=h.text, weight=1)


def _improvement_rule(
    pool: ScoredPool,
    thresholds: ThresholdSet,
    accept,
    keep_metric: str,
    rule: str,
) -> SelectionResult:
    _check_binding(pool, thresholds)
    if thresholds.source != "improvement":
        raise DataFormatError("rule %s needs improvement-distribution thresholds" % rule)
    entries = []
    for su in pool.utterances:
        b = su.baseline_score
        accepted = []
        for h, s in su.perturbed:
            rec = ImprovementRecord(
                su.utt_id, h.hyp_id,
                pred_wer=b.pred_wer - s.pred_wer,
                cos=s.cos - b.cos,
                euc=b.euc - s.euc,
            )
            if accept(rec):
                accepted.append((h, rec))
        entry = _reduce_per_utt(su, accepted, keep_metric)
        if entry is not None:
            entries.append(entry)
    entries.sort(key=lambda e: e.utt_id)
    return SelectionResult(
        rule=rule, entries=entries, p=thresholds.p, thresholds=dict(thresholds.tau)
    ).validate()


def select_conf(pool: ScoredPool, thresholds: ThresholdSet) -> SelectionResult:
    """Conjunction rule: predicted-WER improvement must clear its threshold
    and at least one alignment improvement must clear its own."""
    tau = thresholds.tau
    for metric in METRICS:
        if metric not in tau:
            raise DataFormatError("conjunction rule needs a %r threshold" % (metric,))

    def accept(r: ImprovementRecord) -> bool:
        return r.pred_wer >= tau["pred_wer"] and (
            r.cos >= tau["cos"] or r.euc >= tau["euc"]
        )

    return _improvement_rule(pool, thresholds, accept, "pred_wer", "conf")


_SINGLE_RULE_NAMES = {"pred": "pred_only", "cos": "cos_only", "euc": "euc_only"}
_SINGLE_METRIC_KEYS = {"pred": "pred_wer", "cos": "cos", "euc": "euc"}


def select_single_metric(
    pool: ScoredPool, thresholds: ThresholdSet, metric: str
) -> SelectionResult:
    """Accept on one improvement metric alone; keep the per-utterance
    hypothesis with the largest delta of that same metric."""
    if metric not in _SINGLE_METRIC_KEYS:
        raise DataFormatError("metric must be one of pred/cos/euc, got %r" % (metric,))
    key = _SINGLE_METRIC_KEYS[metric]
    if key not in thresholds.tau:
        raise DataFormatError("thresholds lack metric %r" % (key,))
    cut = thresholds.tau[key]
    return _improvement_rule(
        pool,
        thresholds,
        lambda r: getattr(r, key) >= cut,
        key,
        _SINGLE_RULE_NAMES[metric],
    )


# ---------------------------------------------------------------------------
# Baseline-quality rules
# ---------------------------------------------------------------------------


def select_stable_base(pool: ScoredPool, p: int) -> SelectionResult:
    """Threshold the baseline quality scores directly (no improvement
    needed): low predicted WER and (high cosine or low Euclidean).

    Thresholds come from the baseline-hypothesis distribution over the
    pool; larger p selects a smaller, higher-quality subset.
    """
    _check_percentile(p)
    if not pool.utterances:
        raise DataFormatError("empty pool")
    w0 = sorted(su.baseline_score.pred_wer for su in pool.utterances)
    c0 = sorted(su.baseline_score.cos for su in pool.utterances)
    d0 = sorted(su.baseline_score.euc for su in pool.utterances)
    tau = {
        "pred_wer": nearest_rank(w0, 100 - p),
        "cos": nearest_rank(c0, p),
        "euc": nearest_rank(d0, 100 - p),
    }
    entries = []
    for su in pool.utterances:
        s = su.baseline_score
        if s.pred_wer <= tau["pred_wer"] and (s.cos >= tau["cos"] or s.euc <= tau["euc"]):
            entries.append(
                SelectionEntry(su.utt_id, su.baseline.hyp_id, su.baseline.text, 1)
            )
    entries.sort(key=lambda e: e.utt_id)
    return SelectionResult(
        rule="stable_base", entries=entries, p=p, thresholds=tau
    ).validate()


def select_conf_stable(pool: ScoredPool, p1: int, p2: int) -> SelectionResult:
    """Merge of the conjunction subset at p1 and the baseline-quality
    subset at p2; an utterance in both contributes both entries (its
    perturbed text and its baseline text), upweighting it."""
    conf = select_conf(pool, percentile_thresholds(deltas(pool), p1, pool.digest))
    stable = select_stable_base(pool, p2)
    merged: dict[tuple[str, str], SelectionEntry] = {}
    for e in conf.entries + stable.entries:
        key = (e.utt_id, e.hyp_id)
        if key in merged:
            merged[key].weight += e.weight
        else:
            merged[key] = SelectionEntry(e.utt_id, e.hyp_id, e.text, e.weight)
    entries = sorted(merged.values(), key=lambda e: (e.utt_id, e.hyp_id))
    thresholds = {("conf_" + k): v for k, v in conf.thresholds.items()}
    thresholds.update(("stable_" + k, v) for k, v in stable.thresholds.items())
    return SelectionResult(
        rule="conf_stable", entries=entries, p=p1, p2=p2, thresholds=thresholds
    ).validate()


# ---------------------------------------------------------------------------
# Comparison baselines
# ---------------------------------------------------------------------------


def _baselines_of(hyps: list[HypothesisRecord]) -> dict[str, HypothesisRecord]:
    out: dict[str, HypothesisRecord] = {}
    for h in hyps:
        if h.perturbation.is_baseline:
            if h.utt_id in out:
                raise DataFormatError("utt %r has multiple baselines" % (h.utt_id,))
            out[h.utt_id] = h
    return out


def select_ppl(
    hyps: list[HypothesisRecord],
    p: int | None = None,
    size_matched: int | None = None,
) -> SelectionResult:
    """Text-only perplexity filter over baseline hypotheses: keep fluent
    (low-perplexity) utterances, either below the (100-p)-th percentile or
    exactly the size_matched lowest."""
    if (p is None) == (size_matched is None):
        raise DataFormatError("give exactly one of p or size_matched")
    baselines = _baselines_of(hyps)
    if not baselines:
        raise DataFormatError("no baseline hypotheses")
    for h in baselines.values():
        if h.ppl is None:
            raise DataFormatError("baseline of utt %r has no ppl" % (h.utt_id,))
    ranked = sorted(baselines.values(), key=lambda h: (h.ppl, h.utt_id))

    if size_matched is not None:
        if size_matched < 0 or size_matched > len(ranked):
            raise DataFormatError(
                "size_matched %d outside [0, %d]" % (size_matched, len(ranked))
            )
        chosen = ranked[:size_matched]
        thresholds = {}
        p_out = None
    else:
        _check_percentile(p)
        cut = nearest_rank(sorted(h.ppl for h in ranked), 100 - p)
        chosen = [h for h in ranked if h.ppl <= cut]
        thresholds = {"ppl": cut}
        p_out = p
    entries = sorted(
        (SelectionEntry(h.utt_id, h.hyp_id, h.text, 1) for h in chosen),
        key=lambda e: e.utt_id,
    )
    return SelectionResult(
        rule="ppl", entries=entries, p=p_out, thresholds=thresholds
    ).validate()


def select_random_hours(
    manifest: list[UtteranceRecord],
    hyps: list[HypothesisRecord],
    target_hours: float,
    seed: int,
) -> SelectionResult:
    """Seeded random control: shuffle the pool (PCG64) and take the prefix
    whose cumulative duration first reaches the target."""
    baselines = _baselines_of(hyps)
    records = list(manifest)
    total = sum(r.duration_sec for r in records) / 3600.0
    if target_hours > total + 1e-12:
        raise DataFormatError(
            "target %.3f h exceeds pool total %.3f h" % (target_hours, total)
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    entries = []
    acc = 0.0
    for idx in order:
        if acc >= target_hours * 3600.0:
            break
        rec = records[int(idx)]
        if rec.utt_id not in baselines:
            raise DataFormatError("no baseline hypothesis for utt %r" % (rec.utt_id,))
        h = baselines[rec.utt_id]
        entries.append(SelectionEntry(rec.utt_id, h.hyp_id, h.text, 1))
        acc += rec.duration_sec
    entries.sort(key=lambda e: e.utt_id)
    return SelectionResult(rule="random", entries=entries, thresholds={}).validate()


def select_cer_consistency(
    hyps_a: list[HypothesisRecord],
    hyps_b: list[HypothesisRecord],
    hyps_c: list[HypothesisRecord],
    tau: float,
    manifest: list[UtteranceRecord] | None = None,
) -> SelectionResult:
    """Model-agreement filter: keep utterances whose mean pairwise CER
    across three systems' baseline decodes is strictly below tau; the
    first system's transcript is retained.

    CER is reference-directional; pairs are evaluated as written: (a, b),
    (a, c), (b, c) with the first of each pair as reference.
    """
    a, b, c = (_baselines_of(h) for h in (hyps_a, hyps_b, hyps_c))
    if set(a) != set(b) or set(a) != set(c):
        raise DataFormatError("the three systems do not cover the same utt_ids")
    if manifest is not None:
        have = {r.utt_id for r in manifest}
        missing = sorted(set(a) - have)
        if missing:
            raise DataFormatError("utt %r not in manifest" % (missing[0],))
    entries = []
    thresholds = {"cer_avg": float(tau)}
    for utt_id in sorted(a):
        ta, tb, tc = a[utt_id].text, b[utt_id].text, c[utt_id].text
        rates = [cer(ta, tb).rate, cer(ta, tc).rate, cer(tb, tc).rate]
        if any(r is None for r in rates):
            raise DataFormatError("empty transcript for utt %r" % (utt_id,))
        if sum(rates) / 3.0 < tau:
            entries.append(SelectionEntry(utt_id, a[utt_id].hyp_id, ta, 1))
    return SelectionResult(
        rule="cer_consistency", entries=entries, thresholds=thresholds
    ).validate()


def select_wer_binary(pool: ScoredPool) -> SelectionResult:
    """Binary quality gate on the baseline: keep predicted WER strictly
    below 0.5 (exactly 0.5 is dropped)."""
    entries = []
    for su in pool.utterances:
        if su.baseline_score.pred_wer < 0.5:
            entries.append(
                SelectionEntry(su.utt_id, su.baseline.hyp_id, su.baseline.text, 1)
            )
    entries.sort(key=lambda e: e.utt_id)
    return SelectionResult(
        rule="wer_binary", entries=entries, thresholds={"pred_wer": 0.5}
    ).validate()
