"""Quantitative evaluation: majority-vote precision, label histograms,
rank correlation between system and annotator orderings, and a
salient-word probe over the encoder.

Rankings are paired vectors: position i of both arguments refers to the
same item, and the values are ranks (or any monotone scores).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Question
from .embed import EmbeddingTable
from .encoder import EncoderParams, DEFAULT_MAX_LEN, encode, similarity
from .errors import DataFormatError
from .pipeline import RankedResult

log = logging.getLogger(__name__)

HISTOGRAM_BINS = 10


@dataclass
class LabelSet:
    """Binary worker labels per (query id, candidate id), rejected workers
    already filtered out."""

    labels: dict[tuple[int, int], list[int]]

    def __len__(self) -> int:
        return len(self.labels)

    def positive_fraction(self, query_id: int, candidate_id: int) -> float:
        votes = self.labels[(query_id, candidate_id)]
        return sum(votes) / len(votes)

    def is_similar(self, query_id: int, candidate_id: int) -> bool:
        """Majority-vote ground truth: strictly more than half vote similar."""
        return self.positive_fraction(query_id, candidate_id) > 0.5


def load_labels(path: str | Path) -> LabelSet:
    labels: dict[tuple[int, int], list[int]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                if obj.get("rejected", False):
                    continue
                key = (int(obj["query_id"]), int(obj["candidate_id"]))
                label = int(obj["label"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}: line {line_no}: bad label record: {exc}") from exc
            if label not in (0, 1):
                raise DataFormatError(f"{path}: line {line_no}: label must be 0 or 1")
            labels.setdefault(key, []).append(label)
    return LabelSet(labels)


def precision(labels: LabelSet, results: dict[int, list[RankedResult]]) -> float:
    """Fraction of returned pairs whose majority-vote ground truth is
    similar. Order of results does not matter."""
    pairs = [
        (query_id, r.question_id)
        for query_id, ranked in results.items()
        for r in ranked
    ]
    if not pairs:
        raise ValueError("no returned pairs to evaluate")
    missing = [p for p in pairs if p not in labels.labels]
    if missing:
        raise DataFormatError(
            f"{len(missing)} returned pair(s) have no labels: "
            + ", ".join(str(p) for p in sorted(missing)[:20])
        )
    similar = sum(1 for q, c in pairs if labels.is_similar(q, c))
    return similar / len(pairs)


def label_histogram(labels: LabelSet) -> list[int]:
    """Counts of pairs per positive-label-percentage decile,
    [0,10) ... [90,100]."""
    percents = [100.0 * sum(v) / len(v) for v in labels.labels.values()]
    counts, _ = np.histogram(percents, bins=HISTOGRAM_BINS, range=(0.0, 100.0))
    return counts.tolist()


def _as_rank_vector(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.shape[0] < 2:
        raise ValueError("rankings need at least two items")
    return arr


def ranks_from_order(items: list) -> dict:
    """Map each item of an ordered best-to-worst list to its 1-based rank."""
    if len(set(items)) != len(items):
        raise ValueError("ordered ranking contains duplicate items")
    return {item: pos for pos, item in enumerate(items, start=1)}


def _count_inversions(seq: np.ndarray) -> int:
    """Merge-sort inversion count; O(n log n)."""
    n = len(seq)
    if n < 2:
        return 0
    mid = n // 2
    left, right = seq[:mid].copy(), seq[mid:].copy()
    inv = _count_inversions(left) + _count_inversions(right)
    merged = np.empty(n, dtype=seq.dtype)
    i = j = k = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged[k] = left[i]
            i += 1
        else:
            merged[k] = right[j]
            inv += len(left) - i
            j += 1
        k += 1
    merged[k : k + len(left) - i] = left[i:]
    merged[k + len(left) - i :] = right[j:]
    seq[:] = merged
    return inv


def kendall_tau(a, b) -> float:
    """(concordant - discordant) / (n(n-1)/2) over all item pairs.

    Inputs are paired rank vectors without ties.
    """
    ra = _as_rank_vector(a, "a")
    rb = _as_rank_vector(b, "b")
    if ra.shape != rb.shape:
        raise ValueError("rankings must cover the same items")
    n = ra.shape[0]
    if len(np.unique(ra)) != n or len(np.unique(rb)) != n:
        raise ValueError("tied ranks are not supported by kendall_tau")
    order = np.argsort(ra)
    discordant = _count_inversions(rb[order].copy())
    total = n * (n - 1) // 2
    return (total - 2 * discordant) / total


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(a, b) -> float:
    """1 - 6 sum(d^2) / (n(n^2-1)) over average ranks of the two vectors."""
    ra = _as_rank_vector(a, "a")
    rb = _as_rank_vector(b, "b")
    if ra.shape != rb.shape:
        raise ValueError("rankings must cover the same items")
    n = ra.shape[0]
    d = _average_ranks(ra) - _average_ranks(rb)
    return 1.0 - 6.0 * float(np.sum(d * d)) / (n * (n * n - 1))


@dataclass(frozen=True)
class ProbeResult:
    text: str
    score: float


def probe_saliency(
    q: Question,
    substitutions: list[tuple[int, str]],
    table: EmbeddingTable,
    params: EncoderParams,
    max_len: int = DEFAULT_MAX_LEN,
) -> list[ProbeResult]:
    """Similarity of single-token-substituted variants to the original.

    A substitution that barely moves the score replaced an unimportant
    word; a large drop marks a salient one. Results sorted by similarity
    descending.
    """
    if q.tokens is None:
        raise ValueError(f"question {q.id} is not tokenized")
    v_orig = encode(q.tokens, table, params, max_len)
    results = []
    for position, replacement in substitutions:
        if not 0 <= position < len(q.tokens):
            raise ValueError(
                f"substitution position {position} out of range for a "
                f"{len(q.tokens)}-token question"
            )
        modified = list(q.tokens)
        modified[position] = replacement
        v_mod = encode(modified, table, params, max_len)
        results.append(ProbeResult(text=" ".join(modified), score=similarity(v_orig, v_mod)))
    results.sort(key=lambda r: -r.score)
    return results


def summarize(values: list[float]) -> dict[str, float]:
    """min/quartiles/max, the numbers a box plot would show."""
    arr = np.asarray(values, dtype=np.float64)
    q = np.percentile(arr, [0, 25, 50, 75, 100])
    return {"min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4]}
