"""LSTM sentence encoder.

A question's vector is the final hidden state of an LSTM run over its
word-embedding sequence. Pair similarity is the raw inner product of two
such vectors, and training minimizes the summed squared residual between
similarity scores and binary pair labels, with exact gradients computed
by backpropagation through time.

Cell update, with sigma the logistic function and (.) elementwise:

    i_t = sigma(W_ix x_t + W_ih h_{t-1} + b_i)
    f_t = sigma(W_fx x_t + W_fh h_{t-1} + b_f)
    o_t = sigma(W_ox x_t + W_oh h_{t-1} + b_o)
    c_t = c_{t-1} (.) f_t + tanh(W_cx x_t + W_ch h_{t-1} + b_c) (.) i_t
    h_t = tanh(c_t) (.) o_t
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import EmbeddingTable, embed_question
from .errors import DataFormatError, TrainingError
from .io_utils import check_no_trailing, read_exact, read_header_line

log = logging.getLogger(__name__)

DEFAULT_MAX_LEN = 64
_MODEL_MAGIC = "SIMQ-ENC"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # sigma(x) = (1 + tanh(x/2)) / 2, stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class EncoderParams:
    """All LSTM weights and biases.

    Stored as stacked arrays with gate blocks in the order input, forget,
    output, candidate: ``w_x`` is (4h, input_dim), ``w_h`` is (4h, h) and
    ``b`` is (4h,). The per-gate matrices are row-slice views.
    """

    def __init__(self, input_dim: int, hidden_dim: int, w_x, w_h, b):
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.w_x = np.asarray(w_x, dtype=np.float64)
        self.w_h = np.asarray(w_h, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        h = self.hidden_dim
        if self.w_x.shape != (4 * h, self.input_dim):
            raise ValueError(f"w_x must have shape {(4 * h, self.input_dim)}")
        if self.w_h.shape != (4 * h, h):
            raise ValueError(f"w_h must have shape {(4 * h, h)}")
        if self.b.shape != (4 * h,):
            raise ValueError(f"b must have shape {(4 * h,)}")

    def _gate(self, arr: np.ndarray, gate: int) -> np.ndarray:
        h = self.hidden_dim
        return arr[gate * h : (gate + 1) * h]

    # per-gate views matching the file layout
    @property
    def w_ix(self):
        return self._gate(self.w_x, 0)

    @property
    def w_fx(self):
        return self._gate(self.w_x, 1)

    @property
    def w_ox(self):
        return self._gate(self.w_x, 2)

    @property
    def w_cx(self):
        return self._gate(self.w_x, 3)

    @property
    def w_ih(self):
        return self._gate(self.w_h, 0)

    @property
    def w_fh(self):
        return self._gate(self.w_h, 1)

    @property
    def w_oh(self):
        return self._gate(self.w_h, 2)

    @property
    def w_ch(self):
        return self._gate(self.w_h, 3)

    @property
    def b_i(self):
        return self._gate(self.b, 0)

    @property
    def b_f(self):
        return self._gate(self.b, 1)

    @property
    def b_o(self):
        return self._gate(self.b, 2)

    @property
    def b_c(self):
        return self._gate(self.b, 3)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "EncoderParams":
        return cls(
            input_dim,
            hidden_dim,
            np.zeros((4 * hidden_dim, input_dim)),
            np.zeros((4 * hidden_dim, hidden_dim)),
            np.zeros(4 * hidden_dim),
        )

    @classmethod
    def init(
        cls,
        input_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        scale: float = 0.1,
        forget_bias: float = 1.0,
    ) -> "EncoderParams":
        """Uniform [-scale, scale] weights; forget-gate bias starts high so
        early training does not wash out the cell state."""
        w_x = rng.uniform(-scale, scale, size=(4 * hidden_dim, input_dim))
        w_h = rng.uniform(-scale, scale, size=(4 * hidden_dim, hidden_dim))
        b = np.zeros(4 * hidden_dim)
        params = cls(input_dim, hidden_dim, w_x, w_h, b)
        params.b_f[:] = forget_bias
        return params

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.input_dim, self.hidden_dim, self.w_x.copy(), self.w_h.copy(), self.b.copy()
        )

    def equals(self, other: "EncoderParams") -> bool:
        return (
            self.input_dim == other.input_dim
            and self.hidden_dim == other.hidden_dim
            and np.array_equal(self.w_x, other.w_x)
            and np.array_equal(self.w_h, other.w_h)
            and np.array_equal(self.b, other.b)
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w_x.ravel(), self.w_h.ravel(), self.b])

    @classmethod
    def from_flat(cls, input_dim: int, hidden_dim: int, flat: np.ndarray) -> "EncoderParams":
        h4 = 4 * hidden_dim
        nx, nh = h4 * input_dim, h4 * hidden_dim
        if flat.shape != (nx + nh + h4,):
            raise ValueError("flat parameter vector has the wrong length")
        return cls(
            input_dim,
            hidden_dim,
            flat[:nx].reshape(h4, input_dim).copy(),
            flat[nx : nx + nh].reshape(h4, hidden_dim).copy(),
            flat[nx + nh :].copy(),
        )


@dataclass
class LstmState:
    """Hidden and cell state plus the per-step activations cached for BPTT."""

    h: np.ndarray
    c: np.ndarray
    i: np.ndarray | None = None
    f: np.ndarray | None = None
    o: np.ndarray | None = None
    g: np.ndarray | None = None  # tanh candidate
    tc: np.ndarray | None = None  # tanh(c)


def zero_state(hidden_dim: int) -> LstmState:
    return LstmState(h=np.zeros(hidden_dim), c=np.zeros(hidden_dim))


def lstm_step(x: np.ndarray, prev: LstmState, params: EncoderParams) -> LstmState:
    """One cell update; see the module docstring for the equations."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise ValueError(
            f"input has shape {x.shape}, expected ({params.input_dim},)"
        )
    if prev.h.shape != (params.hidden_dim,):
        raise ValueError(
            f"state has shape {prev.h.shape}, expected ({params.hidden_dim},)"
        )
    h = params.hidden_dim
    a = params.w_x @ x + params.w_h @ prev.h + params.b
    i = _sigmoid(a[:h])
    f = _sigmoid(a[h : 2 * h])
    o = _sigmoid(a[2 * h : 3 * h])
    g = np.tanh(a[3 * h :])
    c = prev.c * f + g * i
    tc = np.tanh(c)
    return LstmState(h=tc * o, c=c, i=i, f=f, o=o, g=g, tc=tc)


def _forward(xs: np.ndarray, params: EncoderParams) -> list[LstmState]:
    states = [zero_state(params.hidden_dim)]
    for x in xs:
        states.append(lstm_step(x, states[-1], params))
    return states


def encode(
    tokens: list[str],
    table: EmbeddingTable,
    params: EncoderParams,
    max_len: int = DEFAULT_MAX_LEN,
) -> np.ndarray:
    """Encode a question as the final hidden state of the forward pass.

    Questions beyond max_len tokens are truncated to bound the cost of
    backpropagation through time.
    """
    if not tokens:
        raise DataFormatError("cannot encode an empty token sequence")
    xs = embed_question(tokens[:max_len], table)
    return _forward(xs, params)[-1].h


def similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Inner product of two question vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(u @ v)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Off-by-default alternative to the raw inner product."""
    denom = float(np.linalg.norm(u) * np.linalg.norm(v))
    if denom == 0.0:
        return 0.0
    return similarity(u, v) / denom


@dataclass
class TrainingPair:
    """Two token sequences and a binary similar/not-similar label."""

    q: list[str]
    q_prime: list[str]
    y: int
    anchor_id: int | None = None

    def __post_init__(self):
        if not self.q or not self.q_prime:
            raise ValueError("training pair token lists must be non-empty")
        if self.y not in (0, 1):
            raise ValueError(f"pair label must be 0 or 1, got {self.y!r}")


def pair_loss(
    batch: list[TrainingPair],
    table: EmbeddingTable,
    params: EncoderParams,
    max_len: int = DEFAULT_MAX_LEN,
) -> float:
    """Sum of squared residuals between pair similarities and labels."""
    if not batch:
        raise ValueError("batch must be non-empty")
    total = 0.0
    for pair in batch:
        s = similarity(
            encode(pair.q, table, params, max_len),
            encode(pair.q_prime, table, params, max_len),
        )
        total += (s - pair.y) ** 2
    return total


def _backward(
    xs: np.ndarray,
    states: list[LstmState],
    params: EncoderParams,
    d_h_final: np.ndarray,
    grads: EncoderParams,
    d_xs: np.ndarray | None = None,
) -> None:
    """Accumulate gradients for one sequence into ``grads`` (and ``d_xs``)."""
    h = params.hidden_dim
    dh = d_h_final
    dc = np.zeros(h)
    for t in range(len(xs) - 1, -1, -1):
        st = states[t + 1]
        prev = states[t]
        do = dh * st.tc
        dc = dc + dh * st.o * (1.0 - st.tc**2)
        di = dc * st.g
        df = dc * prev.c
        dg = dc * st.i
        da = np.empty(4 * h)
        da[:h] = di * st.i * (1.0 - st.i)
        da[h : 2 * h] = df * st.f * (1.0 - st.f)
        da[2 * h : 3 * h] = do * st.o * (1.0 - st.o)
        da[3 * h :] = dg * (1.0 - st.g**2)
        grads.w_x += np.outer(da, xs[t])
        grads.w_h += np.outer(da, prev.h)
        grads.b += da
        if d_xs is not None:
            d_xs[t] = params.w_x.T @ da
        dh = params.w_h.T @ da
        dc = dc * st.f


def pair_loss_and_grad(
    batch: list[TrainingPair],
    table: EmbeddingTable,
    params: EncoderParams,
    max_len: int = DEFAULT_MAX_LEN,
    train_embeddings: bool = False,
) -> tuple[float, EncoderParams, dict[int, np.ndarray]]:
    """Loss plus exact gradients over a batch via BPTT.

    Parameters are shared between the two encoder branches, so both sides
    of every pair accumulate into the same gradient arrays. When
    train_embeddings is set, gradients w.r.t. the embedding rows that
    occur in the batch are returned keyed by row index.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    grads = EncoderParams.zeros(params.input_dim, params.hidden_dim)
    emb_grads: dict[int, np.ndarray] = {}
    loss = 0.0
    for pair in batch:
        toks_a = pair.q[:max_len]
        toks_b = pair.q_prime[:max_len]
        xs_a = embed_question(toks_a, table)
        xs_b = embed_question(toks_b, table)
        states_a = _forward(xs_a, params)
        states_b = _forward(xs_b, params)
        u = states_a[-1].h
        v = states_b[-1].h
        residual = float(u @ v) - pair.y
        loss += residual**2
        d_s = 2.0 * residual
        d_xs_a = np.zeros_like(xs_a) if train_embeddings else None
        d_xs_b = np.zeros_like(xs_b) if train_embeddings else None
        _backward(xs_a, states_a, params, d_s * v, grads, d_xs_a)
        _backward(xs_b, states_b, params, d_s * u, grads, d_xs_b)
        if train_embeddings:
            for toks, d_xs in ((toks_a, d_xs_a), (toks_b, d_xs_b)):
                for tok, dx in zip(toks, d_xs):
                    row = table.id_of(tok)
                    if row in emb_grads:
                        emb_grads[row] += dx
                    else:
                        emb_grads[row] = dx.copy()
    return loss, grads, emb_grads


def grad(
    batch: list[TrainingPair],
    table: EmbeddingTable,
    params: EncoderParams,
    max_len: int = DEFAULT_MAX_LEN,
) -> EncoderParams:
    """Gradient of the batch loss w.r.t. all encoder parameters."""
    return pair_loss_and_grad(batch, table, params, max_len)[1]


@dataclass
class TrainConfig:
    hidden_dim: int = 100
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 16
    seed: int = 0
    train_embeddings: bool = False
    clip_norm: float = 5.0
    init_scale: float = 0.1
    forget_bias: float = 1.0
    max_len: int = DEFAULT_MAX_LEN


@dataclass
class TrainResult:
    params: EncoderParams
    epoch_losses: list[float] = field(default_factory=list)
    table: EmbeddingTable | None = None


def train(
    pairs: list[TrainingPair],
    table: EmbeddingTable,
    config: TrainConfig,
) -> TrainResult:
    """Mini-batch gradient descent on the squared pair loss.

    Deterministic given config.seed. Gradients are clipped to
    config.clip_norm (global L2 over all parameters). Raises
    TrainingError if the loss stops being finite.
    """
    if not pairs:
        raise ValueError("no training pairs")
    rng = np.random.default_rng(config.seed)
    params = EncoderParams.init(
        table.dim, config.hidden_dim, rng, config.init_scale, config.forget_bias
    )
    work_table = table.copy() if config.train_embeddings else table
    result = TrainResult(params=params, table=work_table)
    if config.epochs == 0:
        return result

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(pairs), config.batch_size):
            batch = [pairs[k] for k in order[start : start + config.batch_size]]
            loss, grads, emb_grads = pair_loss_and_grad(
                batch, work_table, params, config.max_len, config.train_embeddings
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"training diverged at epoch {epoch}: loss is not finite (lr={config.lr})"
                )
            epoch_loss += loss
            sq = float(
                np.sum(grads.w_x**2) + np.sum(grads.w_h**2) + np.sum(grads.b**2)
            ) + sum(float(np.sum(g**2)) for g in emb_grads.values())
            norm = np.sqrt(sq)
            scale = config.clip_norm / norm if norm > config.clip_norm else 1.0
            step = config.lr * scale
            params.w_x -= step * grads.w_x
            params.w_h -= step * grads.w_h
            params.b -= step * grads.b
            for row, g in emb_grads.items():
                work_table.input_vectors[row] -= step * g
        result.epoch_losses.append(epoch_loss)
        log.info("train-encoder: epoch=%d loss=%.6f", epoch, epoch_loss)
    return result


def save_params(params: EncoderParams, path: str | Path) -> None:
    """Binary model file: magic line, two uint32 dims, then all matrices
    row-major as little-endian 64-bit floats in gate order i, f, o, c."""
    with Path(path).open("wb") as fh:
        fh.write(b"SIMQ-ENC v1\n")
        fh.write(struct.pack("<II", params.input_dim, params.hidden_dim))
        fh.write(params.w_x.astype("<f8").tobytes())
        fh.write(params.w_h.astype("<f8").tobytes())
        fh.write(params.b.astype("<f8").tobytes())


def load_params(path: str | Path) -> EncoderParams:
    with Path(path).open("rb") as fh:
        read_header_line(fh, _MODEL_MAGIC, "model file")
        input_dim, hidden_dim = struct.unpack("<II", read_exact(fh, 8, "model file"))
        h4 = 4 * hidden_dim
        w_x = np.frombuffer(
            read_exact(fh, 8 * h4 * input_dim, "model file"), dtype="<f8"
        ).reshape(h4, input_dim)
        w_h = np.frombuffer(
            read_exact(fh, 8 * h4 * hidden_dim, "model file"), dtype="<f8"
        ).reshape(h4, hidden_dim)
        b = np.frombuffer(read_exact(fh, 8 * h4, "model file"), dtype="<f8")
        check_no_trailing(fh, "model file")
    params = EncoderParams(input_dim, hidden_dim, w_x.copy(), w_h.copy(), b.copy())
    if not (
        np.all(np.isfinite(params.w_x))
        and np.all(np.isfinite(params.w_h))
        and np.all(np.isfinite(params.b))
    ):
        raise DataFormatError("model file contains non-finite parameters")
    return params
