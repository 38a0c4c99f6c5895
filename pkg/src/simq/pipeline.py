"""End-to-end query path: metadata -> candidates -> scoring -> ranked output.

A loaded engine is immutable and safe for concurrent queries; candidate
vectors are precomputed once and the query vector is computed per request.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .corpus import UNKNOWN, Corpus, Question, ingest
from .embed import EmbeddingTable, load_embeddings
from .encoder import (
    DEFAULT_MAX_LEN,
    EncoderParams,
    cosine_similarity,
    encode,
    load_params,
    similarity,
)
from .errors import DataFormatError
from .index import InvertedIndex, KeywordRule, load_index, load_rules, retrieve
from .io_utils import check_no_trailing, read_exact, read_header_line
from .text import EntityDictionary, load_entities, tokenize, tokenize_corpus

log = logging.getLogger(__name__)

DEFAULT_K = 5
DEFAULT_THRESHOLD = 0.5
_VECTOR_MAGIC = "SIMQ-VEC"
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class RankedResult:
    question_id: int
    score: float
    rank: int


@dataclass
class Engine:
    """All components needed to answer queries, mutually dim-consistent."""

    corpus: Corpus
    table: EmbeddingTable
    params: EncoderParams
    index: InvertedIndex
    rules: list[KeywordRule]
    entities: EntityDictionary
    vectors: dict[int, np.ndarray] | None = None
    tokenizer_mode: str = "dictionary"
    max_len: int = DEFAULT_MAX_LEN
    max_candidates: int = 500

    def validate(self) -> None:
        if self.table.dim != self.params.input_dim:
            raise DataFormatError(
                f"embedding dim {self.table.dim} does not match encoder input dim "
                f"{self.params.input_dim}"
            )
        if self.vectors:
            some = next(iter(self.vectors.values()))
            if some.shape != (self.params.hidden_dim,):
                raise DataFormatError(
                    f"vector cache dim {some.shape[0]} does not match encoder hidden dim "
                    f"{self.params.hidden_dim}"
                )


def precompute_vectors(
    corpus: Corpus,
    table: EmbeddingTable,
    params: EncoderParams,
    max_len: int = DEFAULT_MAX_LEN,
) -> dict[int, np.ndarray]:
    """Encode every tokenized question once; agrees exactly with encode()."""
    vectors: dict[int, np.ndarray] = {}
    for qid in sorted(corpus.questions):
        q = corpus.get(qid)
        if q.tokens:
            vectors[qid] = encode(q.tokens, table, params, max_len)
    return vectors


def query(
    text: str,
    k: int,
    threshold: float,
    engine: Engine,
    category: str = UNKNOWN,
    intention: str = UNKNOWN,
    use_cosine: bool = False,
) -> list[RankedResult]:
    """Rank candidate questions by encoder similarity to the query text.

    Returns at most k results with score >= threshold, sorted by score
    descending with ties broken by ascending question id. An empty list is
    a legal outcome: queries unlike anything indexed produce no results
    rather than misleading matches.
    """
    engine.validate()
    tokens = tokenize(text, engine.tokenizer_mode, engine.entities)
    if not tokens:
        raise DataFormatError("query text contains no tokens")
    probe = Question(id=-1, text=text, category=category, intention=intention, tokens=tokens)
    candidates = retrieve(probe, engine.index, engine.max_candidates)
    if not candidates.ids:
        return []
    v_query = encode(tokens, engine.table, engine.params, engine.max_len)
    score_fn = cosine_similarity if use_cosine else similarity
    scored: list[tuple[float, int]] = []
    for qid in candidates.ids:
        if engine.vectors is not None and qid in engine.vectors:
            v = engine.vectors[qid]
        else:
            v = encode(engine.corpus.get(qid).tokens, engine.table, engine.params, engine.max_len)
        s = score_fn(v_query, v)
        if s >= threshold:
            scored.append((s, qid))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [
        RankedResult(question_id=qid, score=s, rank=r)
        for r, (s, qid) in enumerate(scored[:k], start=1)
    ]


def save_vectors(vectors: dict[int, np.ndarray], path: str | Path) -> None:
    items = sorted(vectors.items())
    dim = items[0][1].shape[0] if items else 0
    with Path(path).open("wb") as fh:
        fh.write(f"SIMQ-VEC v1 {len(items)} {dim}\n".encode("utf-8"))
        for qid, vec in items:
            fh.write(struct.pack("<Q", qid))
            fh.write(np.asarray(vec, dtype="<f8").tobytes())


def load_vectors(path: str | Path) -> dict[int, np.ndarray]:
    vectors: dict[int, np.ndarray] = {}
    with Path(path).open("rb") as fh:
        extras = read_header_line(fh, _VECTOR_MAGIC, "vector cache")
        if len(extras) != 2:
            raise DataFormatError("vector cache: malformed header")
        count, dim = int(extras[0]), int(extras[1])
        for _ in range(count):
            (qid,) = struct.unpack("<Q", read_exact(fh, 8, "vector cache"))
            vec = np.frombuffer(read_exact(fh, 8 * dim, "vector cache"), dtype="<f8")
            vectors[qid] = vec.copy()
        check_no_trailing(fh, "vector cache")
    return vectors


def _timestamp() -> str:
    # honors SOURCE_DATE_EPOCH so repeated builds can be byte-identical
    import os

    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def write_manifest(
    engine_dir: str | Path,
    paths: dict[str, str],
    dims: dict[str, int],
    config: dict,
) -> Path:
    engine_dir = Path(engine_dir)
    manifest = {
        "simq_engine": 1,
        "created": _timestamp(),
        "paths": paths,
        "dims": dims,
        "config": config,
    }
    out = engine_dir / MANIFEST_NAME
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_engine(engine_dir: str | Path) -> Engine:
    """Load all components named by the manifest and cross-check dims."""
    engine_dir = Path(engine_dir)
    manifest_path = engine_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataFormatError(f"no {MANIFEST_NAME} in {engine_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("simq_engine") != 1:
        raise DataFormatError(f"{manifest_path}: unsupported engine manifest version")
    paths = manifest["paths"]

    def resolve(name: str, required: bool = True) -> Path | None:
        rel = paths.get(name)
        if rel is None:
            if required:
                raise DataFormatError(f"{manifest_path}: missing path for {name!r}")
            return None
        p = engine_dir / rel
        if not p.exists():
            raise DataFormatError(f"engine component {name!r} not found at {p}")
        return p

    started = time.perf_counter()
    config = manifest.get("config", {})
    corpus = ingest(resolve("corpus"))
    entities = load_entities(resolve("entities"))
    rules = load_rules(resolve("rules"))
    table = load_embeddings(resolve("embeddings"))
    params = load_params(resolve("encoder"))
    mode = config.get("tokenizer", "dictionary")
    tokenize_corpus(corpus, mode, entities)
    index = load_index(resolve("index"), corpus, entities, rules)
    vectors_path = resolve("vectors", required=False)
    vectors = load_vectors(vectors_path) if vectors_path else None

    engine = Engine(
        corpus=corpus,
        table=table,
        params=params,
        index=index,
        rules=rules,
        entities=entities,
        vectors=vectors,
        tokenizer_mode=mode,
        max_len=int(config.get("max_len", DEFAULT_MAX_LEN)),
        max_candidates=int(config.get("max_candidates", 500)),
    )
    engine.validate()
    dims = manifest.get("dims", {})
    if dims:
        if dims.get("embedding") != table.dim or dims.get("hidden") != params.hidden_dim:
            raise DataFormatError(
                f"{manifest_path}: declared dims {dims} do not match loaded components "
                f"(embedding={table.dim}, hidden={params.hidden_dim})"
            )
    log.info(
        "engine loaded from %s in %.2fs (%d questions, %d postings)",
        engine_dir, time.perf_counter() - started, len(corpus), len(index),
    )
    return engine
