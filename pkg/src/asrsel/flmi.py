"""Target-aware preselection by maximizing facility-location mutual
information between a candidate subset and a query set under a
cardinality budget.

The objective for a selected set S against queries T is

    value(S) = sum over queries q of max over j in S of sim[j, q]
             + sum over j in S of max over q of sim[j, q]

with sim the cosine similarity between feature rows and the max over an
empty S defined as 0 (so value({}) = 0).

Both greedy modes produce identical ordered selections: exact greedy
re-evaluates every remaining candidate per step; lazy greedy keeps a
max-priority queue of stale gains and re-evaluates only the top until its
refreshed gain dominates the next stale bound.  Because similarities may
be negative, gains measured at the empty set are not valid upper bounds
for later rounds, so lazy mode computes the first two rounds exactly and
switches to the queue from a one-element solution onward, where gains are
monotone non-increasing.

Ties on gain always break toward the lexicographically smallest candidate
id.
"""

from __future__ import annotations

import heapq
from pathlib import Path
from typing import Callable

import numpy as np

from .corpus import (
    EmbeddingMatrix,
    UtteranceRecord,
    read_embeddings,
    read_embedding_row,
    scan_embedding_offsets,
)
from .errors import DataFormatError

StepCallback = Callable[[str, float, float], None]  # (id, gain, value)


def _normalized(vec: np.ndarray, rid: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    norm = float(np.sqrt((v * v).sum()))
    if norm == 0.0:
        raise DataFormatError("zero-norm feature vector for id %r" % (rid,))
    return v / norm


class SimilarityKernel:
    """Dense candidate-by-query cosine similarity matrix.

    Rows follow candidate order; zero-norm vectors are rejected at build
    time.  query_max[j] = max over queries of sim[j, q].
    """

    def __init__(self, candidates: EmbeddingMatrix, queries: EmbeddingMatrix):
        if candidates.dim != queries.dim:
            raise DataFormatError(
                "candidate dim %d != query dim %d" % (candidates.dim, queries.dim)
            )
        if len(queries) == 0:
            raise DataFormatError("empty query set")
        cn = np.vstack([_normalized(v, i) for i, v in zip(candidates.ids, candidates.vectors)]) \
            if len(candidates) else np.zeros((0, candidates.dim))
        qn = np.vstack([_normalized(v, i) for i, v in zip(queries.ids, queries.vectors)])
        self.candidate_ids = list(candidates.ids)
        self.sims = cn @ qn.T  # n x m, float64
        self.query_max = self.sims.max(axis=1) if len(candidates) else np.zeros(0)
        self._row = {cid: r for r, cid in enumerate(self.candidate_ids)}

    def __len__(self) -> int:
        return len(self.candidate_ids)

    def row_index(self, cid: str) -> int:
        try:
            return self._row[cid]
        except KeyError:
            raise DataFormatError("unknown candidate id %r" % (cid,)) from None


def flmi_value(selected, kernel: SimilarityKernel) -> float:
    """Objective value of a selected id set, computed from scratch."""
    rows = [kernel.row_index(cid) for cid in selected]
    if not rows:
        return 0.0
    block = kernel.sims[rows]
    return float(block.max(axis=0).sum() + kernel.query_max[rows].sum())


def _gain_row(row_sims: np.ndarray, row_qmax: float, best: np.ndarray | None) -> float:
    """Marginal objective gain of one candidate given the current per-query
    cover; best=None means the selection is still empty."""
    if best is None:
        return float(row_sims.sum() + row_qmax)
    return float(np.maximum(row_sims - best, 0.0).sum() + row_qmax)


def greedy_select(
    kernel: SimilarityKernel,
    budget: int,
    mode: str = "lazy",
    on_step: StepCallback | None = None,
) -> list[str]:
    """Greedy maximization under a cardinality budget.

    Returns the ordered selected id list.  on_step, if given, is called
    with (id, marginal gain, running value) after every insertion.
    """
    if mode not in ("exact", "lazy"):
        raise ValueError("mode must be 'exact' or 'lazy', got %r" % (mode,))
    n = len(kernel)
    if budget > n:
        raise ValueError("budget %d exceeds candidate count %d" % (budget, n))
    if budget == 0:
        return []

    ids = kernel.candidate_ids
    sims = kernel.sims
    qmax = kernel.query_max
    selected: list[str] = []
    selected_rows: set[int] = set()
    best: np.ndarray | None = None
    value = 0.0

    def accept(row: int, gain: float) -> None:
        nonlocal best, value
        selected.append(ids[row])
        selected_rows.add(row)
        best = sims[row].copy() if best is None else np.maximum(best, sims[row])
        value += gain
        if on_step is not None:
            on_step(ids[row], gain, value)

    def exact_round() -> None:
        win_row, win_gain = -1, -np.inf
        for row in range(n):
            if row in selected_rows:
                continue
            gain = _gain_row(sims[row], qmax[row], best)
            if gain > win_gain or (gain == win_gain and ids[row] < ids[win_row]):
                win_row, win_gain = row, gain
        accept(win_row, win_gain)

    if mode == "exact":
        for _ in range(budget):
            exact_round()
        return selected

    # Lazy: two exact rounds (gains at the empty set are not upper bounds
    # when similarities are negative), then the priority queue.
    exact_round()
    if budget == 1:
        return selected
    heap: list[tuple[float, str, int]] = []
    for row in range(n):
        if row not in selected_rows:
            gain = _gain_row(sims[row], qmax[row], best)
            heap.append((-gain, ids[row], row))
    heapq.heapify(heap)

    while len(selected) < budget:
        neg_stale, cid, row = heapq.heappop(heap)
        gain = _gain_row(sims[row], qmax[row], best)
        if not heap or (-gain, cid) <= heap[0][:2]:
            accept(row, gain)
        else:
            heapq.heappush(heap, (-gain, cid, row))
    return selected


# ---------------------------------------------------------------------------
# Out-of-core preselection over EMB1 files
# ---------------------------------------------------------------------------


class _RowSource:
    """Streams normalized candidate rows and their query similarities from
    an EMB1 file without holding the full matrix."""

    def __init__(self, path: str | Path, ids: list[str], qn: np.ndarray, chunk: int):
        dim, offsets = scan_embedding_offsets(path)
        if dim != qn.shape[1]:
            raise DataFormatError(
                "pool feature dim %d != query feature dim %d" % (dim, qn.shape[1])
            )
        missing = [i for i in ids if i not in offsets]
        if missing:
            raise DataFormatError(
                "missing feature row for manifest id %r (%d missing in total)"
                % (missing[0], len(missing))
            )
        self.path = Path(path)
        self.dim = dim
        self.ids = ids
        self.offsets = [offsets[i] for i in ids]
        self.qn = qn
        self.chunk = max(1, int(chunk))
        # File-order row indices so sweeps read forward through the file.
        self._file_order = sorted(range(len(ids)), key=self.offsets.__getitem__)
        self._fh = open(path, "rb")

    def close(self) -> None:
        self._fh.close()

    def row_sims(self, row: int) -> tuple[np.ndarray, float]:
        vec = read_embedding_row(self._fh, self.offsets[row], self.dim)
        vn = _normalized(vec, self.ids[row])
        sims = vn @ self.qn.T
        return sims, float(sims.max())

    def sweep(self, skip: set[int]):
        """Yield (row, sims, qmax) for every candidate not in skip, reading
        the file in blocks of up to `chunk` rows (one read per block)."""
        vec_bytes = 4 * self.dim
        order = self._file_order
        for start in range(0, len(order), self.chunk):
            block = order[start : start + self.chunk]
            span_lo = self.offsets[block[0]]
            span_hi = self.offsets[block[-1]] + vec_bytes
            self._fh.seek(span_lo)
            buf = self._fh.read(span_hi - span_lo)
            for row in block:
                if row in skip:
                    continue
                at = self.offsets[row] - span_lo
                vec = np.frombuffer(buf[at : at + vec_bytes], dtype="<f4")
                vn = _normalized(vec, self.ids[row])
                sims = vn @ self.qn.T
                yield row, sims, float(sims.max())


def preselect(
    manifest: list[UtteranceRecord],
    pool_features_path: str | Path,
    query_features_path: str | Path,
    budget: int,
    mode: str = "lazy",
    chunk: int = 4096,
) -> list[str]:
    """Budgeted greedy preselection of manifest utterances.

    The query feature matrix stays resident; candidate rows stream from
    the pool EMB1 file, so memory stays O(chunk * queries + pool).
    Candidate identity and order come from the manifest.
    """
    if mode not in ("exact", "lazy"):
        raise ValueError("mode must be 'exact' or 'lazy', got %r" % (mode,))
    ids = [r.utt_id for r in manifest]
    n = len(ids)
    if budget > n:
        raise ValueError("budget %d exceeds pool size %d" % (budget, n))
    if budget == 0:
        return []

    queries = read_embeddings(query_features_path)
    if len(queries) == 0:
        raise DataFormatError("empty query feature file %s" % (query_features_path,))
    qn = np.vstack([_normalized(v, i) for i, v in zip(queries.ids, queries.vectors)])

    src = _RowSource(pool_features_path, ids, qn, chunk)
    try:
        return _preselect_rows(src, budget, mode)
    finally:
        src.close()


def _preselect_rows(src: _RowSource, budget: int, mode: str) -> list[str]:
    ids = src.ids
    selected: list[str] = []
    selected_rows: set[int] = set()
    best: np.ndarray | None = None

    def pick_exact() -> None:
        nonlocal best
        win = None  # (row, sims, gain)
        for row, sims, rqmax in src.sweep(selected_rows):
            gain = _gain_row(sims, rqmax, best)
            if (
                win is None
                or gain > win[2]
                or (gain == win[2] and ids[row] < ids[win[0]])
            ):
                win = (row, sims, gain)
        row, sims, _ = win
        selected.append(ids[row])
        selected_rows.add(row)
        best = sims.copy() if best is None else np.maximum(best, sims)

    if mode == "exact":
        for _ in range(budget):
            pick_exact()
        return selected

    pick_exact()
    if budget == 1:
        return selected

    heap: list[tuple[float, str, int]] = []
    for row, sims, rqmax in src.sweep(selected_rows):
        heap.append((-_gain_row(sims, rqmax, best), ids[row], row))
    heapq.heapify(heap)

    while len(selected) < budget:
        _, cid, row = heapq.heappop(heap)
        sims, rqmax = src.row_sims(row)
        gain = _gain_row(sims, rqmax, best)
        if not heap or (-gain, cid) <= heap[0][:2]:
            selected.append(cid)
            selected_rows.add(row)
            best = np.maximum(best, sims)
        else:
            heapq.heappush(heap, (-gain, cid, row))
    return selected
