"""Tokenization, vocabulary, and the synonym/entity dictionaries.

Tokenization lowercases and strips surrounding punctuation; dictionary
mode additionally merges multi-word entity surface forms ("pink eye")
into single tokens so the encoder sees one embedding per entity.
"""

from __future__ import annotations

import logging
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus
from .errors import DataFormatError

log = logging.getLogger(__name__)

UNK = "<unk>"

ENTITY_TYPES = ("symptom", "disease", "drug", "body-part", "other")

_STRIP_CHARS = string.punctuation + "…‘’“”？。，！"


def _split_words(text: str) -> list[str]:
    words = []
    for raw in text.lower().split():
        word = raw.strip(_STRIP_CHARS)
        if word:
            words.append(word)
    return words


def tokenize(
    text: str,
    mode: str = "whitespace",
    entities: "EntityDictionary | None" = None,
) -> list[str]:
    """Split a question into tokens.

    whitespace mode lowercases, splits on whitespace, and strips
    surrounding punctuation. dictionary mode then greedily merges the
    longest entity surface form starting at each position into one token.
    """
    if not text.strip():
        raise DataFormatError("empty question")
    words = _split_words(text)
    if mode == "whitespace":
        return words
    if mode != "dictionary":
        raise ValueError(f"unknown tokenize mode {mode!r}")
    if entities is None:
        raise ValueError("dictionary mode requires an entity dictionary")

    tokens: list[str] = []
    i = 0
    while i < len(words):
        merged = None
        for n in range(min(entities.max_words, len(words) - i), 1, -1):
            surface = " ".join(words[i : i + n])
            if entities.lookup(surface) is not None:
                merged = surface
                i += n
                break
        if merged is None:
            merged = words[i]
            i += 1
        tokens.append(merged)
    return tokens


def tokenize_corpus(
    corpus: Corpus,
    mode: str = "whitespace",
    entities: "EntityDictionary | None" = None,
) -> Corpus:
    """Fill ``tokens`` on every question in place; single-writer stage."""
    for q in corpus:
        q.tokens = tokenize(q.text, mode, entities)
    return corpus


@dataclass
class Vocabulary:
    """Dense token<->index maps with per-token corpus frequencies.

    Index 0 is always UNK; remaining tokens are ordered by frequency
    descending, then lexicographically, so builds are reproducible.
    """

    tokens: list[str]
    index: dict[str, int]
    counts: list[int]
    min_count: int

    unk_id = 0

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, self.unk_id)


def build_vocab(corpus: Corpus, min_count: int) -> Vocabulary:
    """Count tokens over a tokenized corpus and keep those at or above
    min_count; everything else maps to UNK."""
    freq: Counter[str] = Counter()
    for q in corpus:
        if q.tokens is None:
            raise ValueError(f"question {q.id} is not tokenized")
        freq.update(q.tokens)
    if not freq:
        raise DataFormatError("corpus has no tokens")

    kept = sorted(
        (t for t, c in freq.items() if c >= min_count),
        key=lambda t: (-freq[t], t),
    )
    unk_count = sum(c for t, c in freq.items() if c < min_count)
    tokens = [UNK] + kept
    counts = [unk_count] + [freq[t] for t in kept]
    index = {t: i for i, t in enumerate(tokens)}
    log.info(
        "build-vocab: %d tokens kept (min_count=%d), %d occurrences mapped to UNK",
        len(kept), min_count, unk_count,
    )
    return Vocabulary(tokens=tokens, index=index, counts=counts, min_count=min_count)


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"SIMQ-VOC v1 {len(vocab)} {vocab.min_count}\n")
        for token, count in zip(vocab.tokens, vocab.counts):
            fh.write(f"{token}\t{count}\n")


def load_vocab(path: str | Path) -> Vocabulary:
    from .io_utils import parse_text_header

    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.endswith("\n"):
            raise DataFormatError("unexpected end of vocabulary file")
        extras = parse_text_header(header, "SIMQ-VOC", "vocabulary file")
        if len(extras) != 2:
            raise DataFormatError("vocabulary file: malformed header")
        size, min_count = int(extras[0]), int(extras[1])
        tokens: list[str] = []
        counts: list[int] = []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                token, count = line.split("\t")
            except ValueError as exc:
                raise DataFormatError(f"vocabulary file: malformed line {line!r}") from exc
            tokens.append(token)
            counts.append(int(count))
    if len(tokens) != size:
        raise DataFormatError(
            f"unexpected end of vocabulary file: header declares {size} tokens, "
            f"found {len(tokens)}"
        )
    if not tokens or tokens[0] != UNK:
        raise DataFormatError("vocabulary file: first token must be UNK")
    index = {t: i for i, t in enumerate(tokens)}
    return Vocabulary(tokens=tokens, index=index, counts=counts, min_count=min_count)


class SynonymDictionary:
    """Disjoint groups of mutually substitutable tokens."""

    def __init__(self, groups: list[list[str]]):
        self.groups: list[list[str]] = []
        self.group_of: dict[str, int] = {}
        for group in groups:
            members = list(dict.fromkeys(group))
            if len(members) < 2:
                raise DataFormatError(
                    f"synonym group {members!r} needs at least two members"
                )
            gid = len(self.groups)
            for token in members:
                if token in self.group_of:
                    raise DataFormatError(
                        f"token {token!r} appears in more than one synonym group"
                    )
                self.group_of[token] = gid
            self.groups.append(members)

    def __len__(self) -> int:
        return len(self.groups)

    def alternatives(self, token: str) -> list[str]:
        """Other members of the token's group; empty if it has no group."""
        gid = self.group_of.get(token)
        if gid is None:
            return []
        return [t for t in self.groups[gid] if t != token]


def load_synonyms(path: str | Path) -> SynonymDictionary:
    groups = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            groups.append(line.split("\t"))
    return SynonymDictionary(groups)


def save_synonyms(syn: SynonymDictionary, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for group in syn.groups:
            fh.write("\t".join(group) + "\n")


@dataclass(frozen=True)
class Entity:
    canonical_id: str
    etype: str


@dataclass(frozen=True)
class EntityMatch:
    start: int
    end: int  # exclusive token index
    surface: str
    entity: Entity


class EntityDictionary:
    """Surface form -> entity record map with longest-match lookup."""

    def __init__(self, surfaces: dict[str, Entity]):
        self.surfaces = {s.lower(): e for s, e in surfaces.items()}
        for surface, entity in self.surfaces.items():
            if entity.etype not in ENTITY_TYPES:
                raise DataFormatError(
                    f"entity {surface!r} has unknown type {entity.etype!r}"
                )
        self.max_words = max((s.count(" ") + 1 for s in self.surfaces), default=1)

    def __len__(self) -> int:
        return len(self.surfaces)

    def lookup(self, surface: str) -> Entity | None:
        return self.surfaces.get(surface.lower())


def load_entities(path: str | Path) -> EntityDictionary:
    surfaces: dict[str, Entity] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(
                    f"{path}: line {line_no}: expected surface<TAB>canonical_id<TAB>type"
                )
            surface, canonical, etype = parts
            surfaces[surface] = Entity(canonical_id=canonical, etype=etype)
    return EntityDictionary(surfaces)


def save_entities(ent: EntityDictionary, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for surface in sorted(ent.surfaces):
            e = ent.surfaces[surface]
            fh.write(f"{surface}\t{e.canonical_id}\t{e.etype}\n")


def find_entities(tokens: list[str], dct: EntityDictionary) -> list[EntityMatch]:
    """Longest-match, left-to-right entity spans over a token sequence.

    Spans never overlap; ties at the same start go to the longest span.
    Works both on merged tokens ("pink eye" as one token) and on raw
    word sequences (["pink", "eye"]).
    """
    matches: list[EntityMatch] = []
    i = 0
    n = len(tokens)
    while i < n:
        best = None
        for span in range(min(dct.max_words, n - i), 0, -1):
            surface = " ".join(tokens[i : i + span])
            entity = dct.lookup(surface)
            if entity is not None:
                best = EntityMatch(start=i, end=i + span, surface=surface, entity=entity)
                break
        if best is not None:
            matches.append(best)
            i = best.end
        else:
            i += 1
    return matches
