"""Solved-question corpus: ingestion, validation, synthesis, persistence.

The on-disk format is line-delimited JSON: an optional header object
(declared category/intention sets, provenance, record count) followed by
one question record per line. Streamable at multi-million-line scale.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError

log = logging.getLogger(__name__)

UNKNOWN = "unknown"

_SLOT_RE = re.compile(r"\{(\w+)\}")


@dataclass
class Question:
    """One stored question plus its metadata.

    ``tokens`` is derived by the text module and is excluded from equality;
    persisted fields are id, text, category, intention, answered, family.
    """

    id: int
    text: str
    category: str = UNKNOWN
    intention: str = UNKNOWN
    answered: bool = True
    family: str | None = None
    tokens: list[str] | None = field(default=None, compare=False)


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: int = 0
    errors: list[str] = field(default_factory=list)


@dataclass
class Corpus:
    """Immutable-after-ingestion collection of questions keyed by id."""

    questions: dict[int, Question]
    categories: set[str]
    intentions: set[str]
    source: str = ""
    report: IngestReport | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.questions)

    def __iter__(self):
        return iter(self.questions.values())

    def get(self, qid: int) -> Question:
        return self.questions[qid]

    def ids(self) -> list[int]:
        return sorted(self.questions)


def _parse_record(obj: dict, line_no: int) -> Question:
    if not isinstance(obj, dict):
        raise DataFormatError(f"line {line_no}: record is not an object")
    if "id" not in obj or "text" not in obj:
        raise DataFormatError(f"line {line_no}: record missing required field 'id' or 'text'")
    qid = obj["id"]
    if not isinstance(qid, int) or isinstance(qid, bool) or qid < 0:
        raise DataFormatError(f"line {line_no}: id must be an unsigned integer, got {qid!r}")
    text = obj["text"]
    if not isinstance(text, str) or not text.strip():
        raise DataFormatError(f"line {line_no}: text must be a non-empty string")
    answered = obj.get("answered", True)
    if not isinstance(answered, bool):
        raise DataFormatError(f"line {line_no}: answered must be a boolean")
    family = obj.get("family")
    if family is not None and not isinstance(family, str):
        raise DataFormatError(f"line {line_no}: family must be a string")
    return Question(
        id=qid,
        text=text,
        category=str(obj.get("category", UNKNOWN)),
        intention=str(obj.get("intention", UNKNOWN)),
        answered=answered,
        family=family,
    )


def ingest(path: str | Path, fmt: str = "jsonl") -> Corpus:
    """Load a corpus file, skipping malformed records but failing hard on
    duplicate ids. Accepted/rejected counts land in ``corpus.report``."""
    if fmt != "jsonl":
        raise ValueError(f"unsupported corpus format {fmt!r}")
    path = Path(path)
    header: dict | None = None
    questions: dict[int, Question] = {}
    line_of: dict[int, int] = {}
    report = IngestReport()
    declared_count: int | None = None

    record_lines = 0
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                record_lines += 1
                report.rejected += 1
                report.errors.append(f"line {line_no}: invalid JSON ({exc.msg})")
                continue
            if line_no == 1 and isinstance(obj, dict) and "header" in obj:
                header = obj["header"]
                if not isinstance(header, dict):
                    raise DataFormatError(f"{path}: corpus header is not an object")
                if header.get("version") != 1:
                    raise DataFormatError(
                        f"{path}: unsupported corpus version {header.get('version')!r}"
                    )
                declared_count = header.get("count")
                continue
            record_lines += 1
            try:
                q = _parse_record(obj, line_no)
            except DataFormatError as exc:
                report.rejected += 1
                report.errors.append(str(exc))
                continue
            if q.id in questions:
                raise DataFormatError(
                    f"duplicate question id {q.id} at lines {line_of[q.id]} and {line_no}"
                )
            if header is not None:
                declared_cats = set(header.get("categories", []))
                declared_ints = set(header.get("intentions", []))
                if declared_cats and q.category not in declared_cats:
                    report.rejected += 1
                    report.errors.append(
                        f"line {line_no}: category {q.category!r} not declared in header"
                    )
                    continue
                if declared_ints and q.intention not in declared_ints:
                    report.rejected += 1
                    report.errors.append(
                        f"line {line_no}: intention {q.intention!r} not declared in header"
                    )
                    continue
            questions[q.id] = q
            line_of[q.id] = line_no
            report.accepted += 1

    if declared_count is not None and record_lines < declared_count:
        raise DataFormatError(
            f"unexpected end of corpus file: header declares {declared_count} records, "
            f"found {record_lines}"
        )

    if header is not None:
        categories = set(header.get("categories", []))
        intentions = set(header.get("intentions", []))
        source = header.get("source", str(path))
    else:
        categories = {q.category for q in questions.values()}
        intentions = {q.intention for q in questions.values()}
        source = str(path)

    for msg in report.errors:
        log.warning("ingest %s: %s", path.name, msg)
    log.info(
        "ingest %s: accepted=%d rejected=%d", path.name, report.accepted, report.rejected
    )
    return Corpus(questions, categories, intentions, source=source, report=report)


def write(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus with a header line; output bytes are deterministic."""
    path = Path(path)
    header = {
        "header": {
            "version": 1,
            "source": corpus.source,
            "categories": sorted(corpus.categories),
            "intentions": sorted(corpus.intentions),
            "count": len(corpus),
        }
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
        for q in corpus:
            rec = {
                "id": q.id,
                "text": q.text,
                "category": q.category,
                "intention": q.intention,
                "answered": q.answered,
            }
            if q.family is not None:
                rec["family"] = q.family
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


@dataclass
class Template:
    family: str
    text: str
    category: str
    intention: str
    weight: float
    slots: dict[str, list[str]]
    answered_prob: float = 1.0


@dataclass
class TemplateBank:
    templates: list[Template]
    shared_slots: dict[str, list[str]]

    def slot_values(self, tpl: Template, name: str) -> list[str]:
        values = tpl.slots.get(name) or self.shared_slots.get(name)
        if not values:
            raise DataFormatError(
                f"template {tpl.family!r} references undefined slot {name!r}"
            )
        return values


def load_template_bank(path: str | Path) -> TemplateBank:
    path = Path(path)
    shared: dict[str, list[str]] = {}
    templates: list[Template] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(
                    f"{path}: line {line_no}: invalid JSON ({exc.msg})"
                ) from exc
            if "header" in obj:
                shared = {k: list(v) for k, v in obj["header"].get("shared_slots", {}).items()}
                continue
            for key in ("family", "template", "category", "intention"):
                if key not in obj:
                    raise DataFormatError(f"{path}: line {line_no}: template missing {key!r}")
            templates.append(
                Template(
                    family=obj["family"],
                    text=obj["template"],
                    category=obj["category"],
                    intention=obj["intention"],
                    weight=float(obj.get("weight", 1.0)),
                    slots={k: list(v) for k, v in obj.get("slots", {}).items()},
                    answered_prob=float(obj.get("answered_prob", 1.0)),
                )
            )
    if not templates:
        raise DataFormatError(f"{path}: template bank is empty")
    bank = TemplateBank(templates, shared)
    for tpl in templates:
        for name in _SLOT_RE.findall(tpl.text):
            bank.slot_values(tpl, name)  # raises on undefined slots
    return bank


def synth_corpus(n: int, seed: int, template_bank: str | Path) -> Corpus:
    """Generate a deterministic synthetic corpus from a template bank.

    Each question records the family of the template that produced it, so
    desk-scale retrieval tests can check results against known provenance.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    bank = load_template_bank(template_bank)
    rng = np.random.default_rng(seed)
    weights = np.array([t.weight for t in bank.templates], dtype=np.float64)
    cumulative = np.cumsum(weights / weights.sum())

    questions: dict[int, Question] = {}
    for qid in range(1, n + 1):
        tpl = bank.templates[int(np.searchsorted(cumulative, rng.random(), side="right"))]

        def fill(match: re.Match) -> str:
            values = bank.slot_values(tpl, match.group(1))
            return values[int(rng.integers(0, len(values)))]

        text = _SLOT_RE.sub(fill, tpl.text)
        answered = bool(rng.random() < tpl.answered_prob)
        questions[qid] = Question(
            id=qid,
            text=text,
            category=tpl.category,
            intention=tpl.intention,
            answered=answered,
            family=tpl.family,
        )

    categories = {t.category for t in bank.templates}
    intentions = {t.intention for t in bank.templates}
    source = f"synth:{Path(template_bank).name}:n={n}:seed={seed}"
    log.info("synth-corpus: generated %d questions from %d templates", n, len(bank.templates))
    return Corpus(questions, categories, intentions, source=source)
