"""Skip-gram word embeddings with negative sampling, trained from scratch.

Training is single-threaded and fully deterministic given a seed. Input
vectors are the published embeddings; output vectors exist only during
training. 64-bit floats throughout so gradient checks can be strict.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .errors import DataFormatError, TrainingError
from .io_utils import parse_text_header
from .text import UNK, Vocabulary

log = logging.getLogger(__name__)

DEFAULT_DIM = 100
DEFAULT_WINDOW = 8
DEFAULT_NEGATIVES = 5
DEFAULT_LR = 0.025
NOISE_POWER = 0.75
MIN_LR_FRACTION = 1e-4


class EmbeddingTable:
    """Per-token vectors: a (V, dim) input matrix and, while training,
    a parallel output matrix. Lookup of out-of-vocabulary tokens falls
    back to the UNK row."""

    def __init__(
        self,
        tokens: list[str],
        input_vectors: np.ndarray,
        output_vectors: np.ndarray | None = None,
    ):
        if UNK not in tokens:
            raise ValueError("embedding table must contain the UNK token")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.input_vectors = np.asarray(input_vectors, dtype=np.float64)
        self.output_vectors = (
            None if output_vectors is None else np.asarray(output_vectors, dtype=np.float64)
        )
        if self.input_vectors.shape[0] != len(self.tokens):
            raise ValueError("input_vectors row count does not match token count")
        self.unk_id = self.index[UNK]
        self.epoch_losses: list[float] = []

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    def vector(self, token: str) -> np.ndarray:
        return self.input_vectors[self.id_of(token)]

    def copy(self) -> "EmbeddingTable":
        out = None if self.output_vectors is None else self.output_vectors.copy()
        return EmbeddingTable(self.tokens, self.input_vectors.copy(), out)

    def equals(self, other: "EmbeddingTable") -> bool:
        return (
            self.tokens == other.tokens
            and np.array_equal(self.input_vectors, other.input_vectors)
        )


def init_table(vocab: Vocabulary, dim: int, seed: int) -> EmbeddingTable:
    """Seeded random init; UNK starts at zero and is trained like any token."""
    rng = np.random.default_rng(seed)
    inputs = (rng.random((len(vocab), dim)) - 0.5) / dim
    inputs[vocab.unk_id] = 0.0
    outputs = np.zeros((len(vocab), dim))
    return EmbeddingTable(vocab.tokens, inputs, outputs)


def noise_distribution(counts: list[int] | np.ndarray) -> np.ndarray:
    """Cumulative unigram^0.75 distribution used for negative sampling.

    Pure function of the vocabulary frequencies.
    """
    weights = np.asarray(counts, dtype=np.float64) ** NOISE_POWER
    total = weights.sum()
    if total <= 0:
        raise DataFormatError("cannot build a noise distribution from zero counts")
    return np.cumsum(weights / total)


def keep_probabilities(counts: list[int] | np.ndarray, threshold: float) -> np.ndarray:
    """Per-token keep probability for frequent-word subsampling.

    Pure function of (frequencies, threshold); threshold 0 disables.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if threshold <= 0:
        return np.ones_like(counts)
    freq = counts / max(counts.sum(), 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = threshold / np.where(freq > 0, freq, 1.0)
        keep = np.sqrt(ratio) + ratio
    return np.minimum(keep, 1.0)


def _log_sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    # log sigma(x) = -log(1 + exp(-x)), computed without overflow
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # sigma(x) = (1 + tanh(x/2)) / 2, stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def pair_loss_value(center_vec: np.ndarray, target_vecs: np.ndarray, labels: np.ndarray) -> float:
    """Negative-sampling logistic loss for one center against its targets."""
    scores = target_vecs @ center_vec
    return float(-np.sum(labels * _log_sigmoid(scores) + (1 - labels) * _log_sigmoid(-scores)))


def pair_loss_grads(
    center_vec: np.ndarray, target_vecs: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of pair_loss_value w.r.t. the center (input) vector
    and the target (output) vectors."""
    scores = target_vecs @ center_vec
    g = _sigmoid(scores) - labels
    d_center = g @ target_vecs
    d_targets = np.outer(g, center_vec)
    return d_center, d_targets


def train_skipgram(
    corpus: Corpus,
    vocab: Vocabulary,
    dim: int = DEFAULT_DIM,
    window: int = DEFAULT_WINDOW,
    negatives: int = DEFAULT_NEGATIVES,
    epochs: int = 5,
    lr: float = DEFAULT_LR,
    seed: int = 0,
    subsample: float = 0.0,
) -> EmbeddingTable:
    """Train embeddings over a tokenized corpus.

    Deterministic given the seed. The learning rate decays linearly with
    progress, floored at MIN_LR_FRACTION of the initial rate. Per-epoch
    average pair loss is logged and stored on the returned table.
    """
    if dim < 1 or window < 1 or negatives < 1:
        raise ValueError("dim, window, and negatives must all be >= 1")
    if len(vocab) < negatives + 1:
        raise TrainingError("vocabulary too small for negative sampling")

    table = init_table(vocab, dim, seed)
    if epochs == 0:
        return table

    sequences = []
    for q in corpus:
        if q.tokens is None:
            raise ValueError(f"question {q.id} is not tokenized")
        if q.tokens:
            sequences.append(np.array([vocab.id_of(t) for t in q.tokens], dtype=np.int64))
    if not sequences:
        raise DataFormatError("corpus has no tokens")

    rng = np.random.default_rng(seed)
    cumulative = noise_distribution(vocab.counts)
    keep = keep_probabilities(vocab.counts, subsample)

    inputs = table.input_vectors
    outputs = table.output_vectors
    total_words = epochs * sum(len(s) for s in sequences)
    processed = 0

    for epoch in range(epochs):
        epoch_loss = 0.0
        epoch_pairs = 0
        for seq in sequences:
            if subsample > 0:
                seq = seq[rng.random(len(seq)) < keep[seq]]
            n = len(seq)
            for t in range(n):
                processed += 1
                center = seq[t]
                b = int(rng.integers(1, window + 1))
                lo, hi = max(0, t - b), min(n, t + b + 1)
                lr_t = lr * max(MIN_LR_FRACTION, 1.0 - processed / (total_words + 1))
                for j in range(lo, hi):
                    if j == t:
                        continue
                    context = seq[j]
                    negs = np.searchsorted(cumulative, rng.random(negatives), side="right")
                    negs = negs[negs != context]
                    ids = np.concatenate(([context], negs))
                    labels = np.zeros(len(ids))
                    labels[0] = 1.0
                    v = inputs[center]
                    targets = outputs[ids]
                    scores = targets @ v
                    epoch_loss += -np.sum(
                        labels * _log_sigmoid(scores) + (1 - labels) * _log_sigmoid(-scores)
                    )
                    epoch_pairs += 1
                    g = (_sigmoid(scores) - labels) * lr_t
                    d_center = g @ targets
                    np.subtract.at(outputs, ids, np.outer(g, v))
                    inputs[center] = v - d_center
        avg = epoch_loss / max(epoch_pairs, 1)
        table.epoch_losses.append(avg)
        log.info("train-embeddings: epoch=%d pairs=%d avg_loss=%.6f", epoch + 1, epoch_pairs, avg)

    return table


def embed_question(tokens: list[str], table: EmbeddingTable) -> np.ndarray:
    """Map a token sequence to its (T, dim) embedding sequence; OOV -> UNK."""
    if not tokens:
        raise DataFormatError("cannot embed an empty token sequence")
    ids = [table.id_of(t) for t in tokens]
    return table.input_vectors[ids]


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Input vectors only, one token per line; floats via repr so the
    round trip is bit-exact."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"SIMQ-EMB v1 {len(table)} {table.dim}\n")
        for token, row in zip(table.tokens, table.input_vectors):
            fh.write(token + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.endswith("\n"):
            raise DataFormatError("unexpected end of embedding file")
        extras = parse_text_header(header, "SIMQ-EMB", "embedding file")
        if len(extras) != 2:
            raise DataFormatError("embedding file: malformed header")
        size, dim = int(extras[0]), int(extras[1])
        tokens: list[str] = []
        vectors = np.empty((size, dim), dtype=np.float64)
        row = 0
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if row >= size:
                raise DataFormatError("trailing data in embedding file")
            parts = line.rsplit(" ", dim)
            if len(parts) != dim + 1:
                raise DataFormatError(f"embedding file: malformed vector line for row {row}")
            tokens.append(parts[0])
            vectors[row] = [float(x) for x in parts[1:]]
            row += 1
    if row != size:
        raise DataFormatError(
            f"unexpected end of embedding file: header declares {size} rows, found {row}"
        )
    if not np.all(np.isfinite(vectors)):
        raise DataFormatError("embedding file contains non-finite values")
    return EmbeddingTable(tokens, vectors)
