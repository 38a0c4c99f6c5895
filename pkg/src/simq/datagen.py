"""Automatic generation of labeled training pairs.

Positives perturb a question by synonym replacement and random word
dropping; negatives pair it with a uniformly sampled question that shares
no medical entity. Entity tokens are protected so a perturbed positive
never loses the clinical content that justifies its "similar" label.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, Question
from .encoder import TrainingPair
from .errors import DataFormatError, SimqError
from .text import EntityDictionary, SynonymDictionary, find_entities

log = logging.getLogger(__name__)

DEFAULT_REPLACE_PROB = 0.3
DEFAULT_DROP_PROB = 0.1
DEFAULT_NEGATIVES = 3
DEFAULT_MAX_ATTEMPTS = 1000


@dataclass
class GenConfig:
    replace_prob: float = DEFAULT_REPLACE_PROB
    drop_prob: float = DEFAULT_DROP_PROB
    negatives_per_question: int = DEFAULT_NEGATIVES
    seed: int = 0
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        if not 0.0 <= self.replace_prob <= 1.0:
            raise ValueError("replace_prob must be in [0, 1]")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must be in [0, 1]")
        if self.negatives_per_question < 1:
            raise ValueError("negatives_per_question must be >= 1")


def entity_ids(tokens: list[str], ent: EntityDictionary) -> frozenset[str]:
    """Canonical entity ids occurring in a token sequence."""
    return frozenset(m.entity.canonical_id for m in find_entities(tokens, ent))


def _protected_positions(tokens: list[str], ent: EntityDictionary) -> set[int]:
    protected: set[int] = set()
    for m in find_entities(tokens, ent):
        protected.update(range(m.start, m.end))
    return protected


def gen_positive(
    tokens: list[str],
    syn: SynonymDictionary,
    ent: EntityDictionary,
    cfg: GenConfig,
    rng: np.random.Generator,
) -> list[str]:
    """Perturb a question into a similar one.

    Each non-entity token is independently replaced by another member of
    its synonym group with probability replace_prob, then dropped with
    probability drop_prob. Entity positions pass through untouched so the
    perturbed question keeps the anchor's clinical content. If everything
    else is dropped and there is no entity, one of the original tokens is
    kept so the output is never empty.
    """
    if not tokens:
        raise ValueError("cannot perturb an empty token list")
    protected = _protected_positions(tokens, ent)
    out: list[str] = []
    for pos, token in enumerate(tokens):
        if pos in protected:
            out.append(token)
            continue
        alternatives = syn.alternatives(token)
        if alternatives and rng.random() < cfg.replace_prob:
            token = alternatives[int(rng.integers(0, len(alternatives)))]
        if rng.random() < cfg.drop_prob:
            continue
        out.append(token)
    if not out:
        out = [tokens[int(rng.integers(0, len(tokens)))]]
    return out


def gen_negative(
    anchor: Question,
    corpus: Corpus,
    ent: EntityDictionary,
    rng: np.random.Generator,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    entity_map: dict[int, frozenset[str]] | None = None,
) -> Question:
    """Sample a question sharing no canonical entity with the anchor."""
    if len(corpus) < 2:
        raise SimqError("corpus too small to sample negatives")
    if anchor.tokens is None:
        raise ValueError(f"anchor question {anchor.id} is not tokenized")
    ids = sorted(corpus.questions)
    anchor_entities = (
        entity_map[anchor.id] if entity_map is not None else entity_ids(anchor.tokens, ent)
    )
    for _ in range(max_attempts):
        candidate = corpus.get(ids[int(rng.integers(0, len(ids)))])
        if candidate.id == anchor.id:
            continue
        if candidate.tokens is None or not candidate.tokens:
            continue
        cand_entities = (
            entity_map[candidate.id]
            if entity_map is not None
            else entity_ids(candidate.tokens, ent)
        )
        if anchor_entities & cand_entities:
            continue
        return candidate
    raise SimqError(
        f"no entity-disjoint negative found for question {anchor.id} "
        f"after {max_attempts} attempts"
    )


def generate(
    corpus: Corpus,
    n_anchors: int,
    syn: SynonymDictionary,
    ent: EntityDictionary,
    cfg: GenConfig,
) -> list[TrainingPair]:
    """Emit 1 positive and cfg.negatives_per_question negatives per anchor.

    Anchors are sampled without replacement. Each anchor derives its own
    RNG stream from (seed, anchor id), so the generated pairs do not
    depend on processing order and anchors can be processed in parallel.
    """
    eligible = [q.id for q in corpus if q.tokens]
    eligible.sort()
    if n_anchors > len(eligible):
        raise ValueError(
            f"requested {n_anchors} anchors but corpus has only {len(eligible)} "
            "tokenized questions"
        )
    selection_rng = np.random.default_rng([cfg.seed, 0])
    anchors = [eligible[i] for i in selection_rng.permutation(len(eligible))[:n_anchors]]

    entity_map = {q.id: entity_ids(q.tokens, ent) for q in corpus if q.tokens}

    pairs: list[TrainingPair] = []
    for qid in anchors:
        anchor = corpus.get(qid)
        arng = np.random.default_rng([cfg.seed, 1, qid])
        positive = gen_positive(anchor.tokens, syn, ent, cfg, arng)
        pairs.append(TrainingPair(list(anchor.tokens), positive, 1, anchor_id=qid))
        for _ in range(cfg.negatives_per_question):
            neg = gen_negative(anchor, corpus, ent, arng, cfg.max_attempts, entity_map)
            pairs.append(TrainingPair(list(anchor.tokens), list(neg.tokens), 0, anchor_id=qid))
    log.info(
        "generate-pairs: %d anchors -> %d pairs (1 positive + %d negatives each)",
        n_anchors, len(pairs), cfg.negatives_per_question,
    )
    return pairs


def write_pairs(pairs: list[TrainingPair], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"q": p.q, "q_prime": p.q_prime, "y": p.y, "anchor_id": p.anchor_id}
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def read_pairs(path: str | Path) -> list[TrainingPair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pairs.append(
                    TrainingPair(
                        list(obj["q"]), list(obj["q_prime"]), int(obj["y"]),
                        anchor_id=obj.get("anchor_id"),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataFormatError(f"{path}: line {line_no}: bad pair record: {exc}") from exc
    return pairs
