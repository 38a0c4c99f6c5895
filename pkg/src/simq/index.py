"""Keyword identification and inverted-index candidate retrieval.

A question's keywords are the canonical ids of the entities its
intention marks as evidence; every answered question is posted under
(keyword, category, intention) triples. Retrieval takes the union of the
query's keyword postings under its own metadata, relaxing the metadata
constraints only when the exact match comes up empty.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import UNKNOWN, Corpus, Question
from .errors import DataFormatError
from .io_utils import check_no_trailing, read_exact, read_header_line, unpack
from .text import EntityDictionary, find_entities

log = logging.getLogger(__name__)

DEFAULT_MAX_CANDIDATES = 500
_INDEX_MAGIC = "SIMQ-IDX"


@dataclass
class KeywordRule:
    """Which entity types count as evidence for a given question intention."""

    intention: str
    evidence_types: list[str]
    excluded_types: list[str] = field(default_factory=list)

    def __post_init__(self):
        overlap = set(self.evidence_types) & set(self.excluded_types)
        if overlap:
            raise DataFormatError(
                f"rule for intention {self.intention!r}: types {sorted(overlap)} "
                "are both evidence and excluded"
            )


def load_rules(path: str | Path) -> list[KeywordRule]:
    rules = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rules.append(
                    KeywordRule(
                        intention=obj["intention"],
                        evidence_types=list(obj.get("evidence_types", [])),
                        excluded_types=list(obj.get("excluded_types", [])),
                    )
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataFormatError(f"{path}: line {line_no}: bad rule record: {exc}") from exc
    return rules


def save_rules(rules: list[KeywordRule], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in rules:
            rec = {
                "intention": r.intention,
                "evidence_types": r.evidence_types,
                "excluded_types": r.excluded_types,
            }
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def extract_keywords(
    q: Question,
    ent: EntityDictionary,
    rules: list[KeywordRule],
) -> list[str]:
    """Canonical ids of the question's evidence entities.

    The first rule matching the question's intention decides which entity
    types are kept: excluded types are always rejected; if the rule names
    evidence types, only those are kept, otherwise everything not excluded
    passes. Unknown intention (or no matching rule) keeps all types.
    Duplicates collapse, first occurrence order preserved.
    """
    if q.tokens is None:
        raise ValueError(f"question {q.id} is not tokenized")
    matches = find_entities(q.tokens, ent)
    rule = None
    if q.intention != UNKNOWN:
        rule = next((r for r in rules if r.intention == q.intention), None)
    keywords: list[str] = []
    for m in matches:
        etype = m.entity.etype
        if rule is not None:
            if etype in rule.excluded_types:
                continue
            if rule.evidence_types and etype not in rule.evidence_types:
                continue
        cid = m.entity.canonical_id
        if cid not in keywords:
            keywords.append(cid)
    return keywords


class InvertedIndex:
    """Postings from (keyword, category, intention) to sorted question ids.

    Derived keyword+category and keyword-only unions support the metadata
    relaxation ladder without rescanning. Immutable after build.
    """

    def __init__(
        self,
        postings: dict[tuple[str, str, str], list[int]],
        corpus: Corpus,
        ent: EntityDictionary,
        rules: list[KeywordRule],
    ):
        self.postings = postings
        self.corpus = corpus
        self.ent = ent
        self.rules = rules
        self.by_kw_cat: dict[tuple[str, str], set[int]] = {}
        self.by_kw: dict[str, set[int]] = {}
        for (kw, cat, _), ids in postings.items():
            self.by_kw_cat.setdefault((kw, cat), set()).update(ids)
            self.by_kw.setdefault(kw, set()).update(ids)

    def __len__(self) -> int:
        return len(self.postings)


def build_index(
    corpus: Corpus,
    ent: EntityDictionary,
    rules: list[KeywordRule],
) -> InvertedIndex:
    """Post every answered, tokenized question under its keyword triples."""
    postings: dict[tuple[str, str, str], list[int]] = {}
    posted = 0
    for qid in sorted(corpus.questions):
        q = corpus.get(qid)
        if not q.answered or not q.tokens:
            continue
        keywords = extract_keywords(q, ent, rules)
        if keywords:
            posted += 1
        for kw in keywords:
            postings.setdefault((kw, q.category, q.intention), []).append(qid)
    log.info(
        "index: %d questions posted under %d (keyword, category, intention) triples",
        posted, len(postings),
    )
    return InvertedIndex(postings, corpus, ent, rules)


@dataclass
class CandidateSet:
    ids: list[int]
    query_id: int | None = None


def _candidate_ids(query: Question, idx: InvertedIndex, keywords: list[str], stage: int) -> set[int]:
    """Union of postings at one relaxation stage: 0 exact meta, 1 category
    only, 2 keyword only."""
    found: set[int] = set()
    for kw in keywords:
        if stage == 0:
            found.update(idx.postings.get((kw, query.category, query.intention), ()))
        elif stage == 1:
            found.update(idx.by_kw_cat.get((kw, query.category), ()))
        else:
            found.update(idx.by_kw.get(kw, ()))
    found.discard(query.id)
    return found


def retrieve(
    query: Question,
    idx: InvertedIndex,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
    strict_meta: bool = False,
) -> CandidateSet:
    """Candidates sharing at least one keyword with the query.

    Starts from an exact (category, intention) match; when that yields
    nothing, drops the intention constraint, then the category constraint,
    unless strict_meta is set. The query's own id never appears. Results
    are capped at max_candidates by ascending id.
    """
    keywords = extract_keywords(query, idx.ent, idx.rules)
    if not keywords:
        return CandidateSet(ids=[], query_id=query.id)
    stages = (0,) if strict_meta else (0, 1, 2)
    found: set[int] = set()
    for stage in stages:
        found = _candidate_ids(query, idx, keywords, stage)
        if found:
            break
    return CandidateSet(ids=sorted(found)[:max_candidates], query_id=query.id)


def save_index(idx: InvertedIndex, path: str | Path) -> None:
    """Length-prefixed binary postings; keys sorted so identical inputs
    give identical bytes."""
    keys = sorted(idx.postings)
    with Path(path).open("wb") as fh:
        fh.write(f"SIMQ-IDX v1 {len(keys)}\n".encode("utf-8"))
        for key in keys:
            ids = idx.postings[key]
            for part in key:
                raw = part.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
            fh.write(struct.pack("<I", len(ids)))
            fh.write(struct.pack(f"<{len(ids)}Q", *ids))


def load_index(
    path: str | Path,
    corpus: Corpus,
    ent: EntityDictionary,
    rules: list[KeywordRule],
) -> InvertedIndex:
    postings: dict[tuple[str, str, str], list[int]] = {}
    with Path(path).open("rb") as fh:
        extras = read_header_line(fh, _INDEX_MAGIC, "index file")
        if len(extras) != 1:
            raise DataFormatError("index file: malformed header")
        n_postings = int(extras[0])
        for _ in range(n_postings):
            parts = []
            for _ in range(3):
                (length,) = unpack("<H", fh, "index file")
                parts.append(read_exact(fh, length, "index file").decode("utf-8"))
            (n_ids,) = unpack("<I", fh, "index file")
            ids = list(struct.unpack(f"<{n_ids}Q", read_exact(fh, 8 * n_ids, "index file")))
            postings[(parts[0], parts[1], parts[2])] = ids
        check_no_trailing(fh, "index file")
    for key, ids in postings.items():
        for qid in ids:
            if qid not in corpus.questions:
                raise DataFormatError(
                    f"index file posts unknown question id {qid} under {key}"
                )
            if not corpus.get(qid).answered:
                raise DataFormatError(
                    f"index file posts unanswered question id {qid} under {key}"
                )
    return InvertedIndex(postings, corpus, ent, rules)
