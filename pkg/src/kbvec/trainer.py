"""Training loop, optimizers and the binary checkpoint format."""

from __future__ import annotations

import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from kbvec import nn
from kbvec.errors import CheckpointError, ConfigError, TrainingDivergedError
from kbvec.hierarchy import Hierarchy, ancestor_sequence
from kbvec.vocab import ExampleArrays, TrainingExample, Vocabulary, build_vocabulary, extract_examples

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    dim: int = 100
    learning_rate: float = 0.001
    batch_size: int = 100
    epochs: int = 100
    window: int = 5
    mode: str = "joint"
    min_count: int = 1
    optimizer: str = "adam"
    grad_clip: float | None = 5.0
    seed: int = 0
    threads: int = 1
    lstm_bias: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.min_count < 1:
            raise ConfigError(f"min_count must be >= 1, got {self.min_count}")
        if self.mode not in nn.MODES:
            raise ConfigError(f"mode must be one of {nn.MODES}, got {self.mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.grad_clip is not None and self.grad_clip < 0:
            raise ConfigError(f"grad_clip must be >= 0, got {self.grad_clip}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")

    def as_dict(self):
        return asdict(self)


@dataclass
class OptimizerState:
    kind: str = "adam"
    step: int = 0
    epoch: int = 0  # completed epochs
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, kind, params: nn.ModelParams) -> "OptimizerState":
        if kind == "sgd":
            return cls("sgd")
        arrays = params.named_arrays()
        return cls(
            "adam",
            m={k: np.zeros_like(a) for k, a in arrays.items()},
            v={k: np.zeros_like(a) for k, a in arrays.items()},
        )


@dataclass
class TrainReport:
    epoch_losses: list[float]
    wall_time: float
    n_examples: int
    vocabulary: Vocabulary | None = None
    optimizer_state: OptimizerState | None = None


def init_params(config: TrainConfig, vocabulary: Vocabulary, rng_seed: int | None = None) -> nn.ModelParams:
    """Input table ~ U(-0.5/d, 0.5/d), output table zero, LSTM ~ U(-1/sqrt d, 1/sqrt d)."""
    if len(vocabulary) == 0:
        raise ConfigError("cannot initialise parameters for an empty vocabulary")
    seed = config.seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(seed)
    n, d = len(vocabulary), config.dim
    emb = rng.uniform(-0.5 / d, 0.5 / d, (n, d))
    bound = 1.0 / np.sqrt(d)
    lstm = nn.LstmParams(
        rng.uniform(-bound, bound, (4, d, d)),
        rng.uniform(-bound, bound, (4, d, d)),
        np.zeros((4, d)) if config.lstm_bias else None,
    )
    return nn.ModelParams(emb, np.zeros((n, nn.hidden_width(d, config.mode))), lstm, config.mode)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def make_batches(examples, batch_size: int, seed: int, epoch: int) -> list:
    """Shuffle deterministically by (seed, epoch) and cut into consecutive batches.

    ``examples`` may be a sequence or an ``ExampleArrays``; the last batch may
    be short.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    n = len(examples)
    order = epoch_permutation(n, seed, epoch)
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if isinstance(examples, ExampleArrays):
        return [examples.take(idx) for idx in chunks]
    return [[examples[i] for i in idx] for idx in chunks]


def batch_gradients(params: nn.ModelParams, batch: ExampleArrays, threads: int = 1, pool=None):
    """Mean loss over the batch and its gradient.

    With ``threads > 1`` the batch is split into contiguous shards whose
    gradients are summed in shard order, so the result is deterministic.
    """
    n = len(batch)
    if threads <= 1 or n < 2:
        trace = nn.forward(params, batch)
        return float(trace.losses.mean()), nn.backward_batch(params, trace, 1.0 / n)

    shards = [idx for idx in np.array_split(np.arange(n), min(threads, n)) if len(idx)]

    def work(idx):
        trace = nn.forward(params, batch.take(idx))
        return float(trace.losses.sum()), nn.backward_batch(params, trace, 1.0 / n)

    results = list(pool.map(work, shards)) if pool is not None else [work(s) for s in shards]
    total, grads = results[0]
    for loss_sum, g in results[1:]:
        total += loss_sum
        for k in grads:
            grads[k] += g[k]
    return total / n, grads


def clip_gradients(grads: nn.Gradients, max_norm: float | None) -> float:
    """Rescale in place to global L2 norm <= max_norm; returns the pre-clip norm."""
    norm = nn.global_norm(grads)
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def apply_update(params: nn.ModelParams, grads: nn.Gradients, state: OptimizerState, learning_rate: float):
    state.step += 1
    arrays = params.named_arrays()
    if state.kind == "sgd":
        for k, p in arrays.items():
            p -= learning_rate * grads[k]
        return
    t = state.step
    corr1 = 1.0 - ADAM_BETA1**t
    corr2 = 1.0 - ADAM_BETA2**t
    for k, p in arrays.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= learning_rate * (m / corr1) / (np.sqrt(v / corr2) + ADAM_EPS)


def train_step(params, state: OptimizerState, batch: ExampleArrays, config: TrainConfig, pool=None) -> float:
    """One optimizer update on the batch-mean loss. Mutates params and state."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    loss, grads = batch_gradients(params, batch, config.threads, pool)
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss {loss} at step {state.step + 1}; "
            f"learning rate {config.learning_rate} may be too high"
        )
    clip_gradients(grads, config.grad_clip)
    apply_update(params, grads, state, config.learning_rate)
    return loss


def prepare_vocabulary(documents, hierarchy: Hierarchy | None, config: TrainConfig) -> Vocabulary:
    # cbow mode never looks at the hierarchy
    nodes = hierarchy.node_tokens() if hierarchy is not None and config.mode != "cbow" else ()
    return build_vocabulary(documents, nodes, config.min_count)


def prepare_examples(documents, vocabulary: Vocabulary, hierarchy: Hierarchy | None, config: TrainConfig):
    """Windowed examples with ancestor sequences attached (none in cbow mode)."""
    use_kb = hierarchy is not None and config.mode != "cbow"
    ancestors: dict[int, tuple[int, ...]] = {}
    examples = []
    for doc in documents:
        for ex in extract_examples(vocabulary.encode(doc), config.window):
            if use_kb:
                anc = ancestors.get(ex.target)
                if anc is None:
                    anc = ancestor_sequence(vocabulary.tokens[ex.target], hierarchy, vocabulary)
                    ancestors[ex.target] = anc
                ex = TrainingExample(ex.target, ex.context, anc)
            examples.append(ex)
    return examples


def train(
    documents,
    hierarchy: Hierarchy | None,
    config: TrainConfig,
    *,
    resume=None,
    on_epoch=None,
) -> tuple[nn.ModelParams, TrainReport]:
    """Train a model on tokenised documents.

    ``resume`` is a loaded ``Checkpoint``; training continues from its
    completed-epoch counter up to ``config.epochs``. ``on_epoch(epoch, loss)``
    is called after every epoch.
    """
    started = time.perf_counter()
    vocabulary = prepare_vocabulary(documents, hierarchy, config)
    examples = prepare_examples(documents, vocabulary, hierarchy, config)
    if not examples:
        raise ConfigError("corpus yields no training examples")
    data = ExampleArrays.from_examples(examples)

    if resume is not None:
        if resume.vocabulary.tokens != vocabulary.tokens:
            raise ConfigError("checkpoint vocabulary does not match the training data")
        if resume.params.mode != config.mode or resume.params.dim != config.dim:
            raise ConfigError("checkpoint mode/dim do not match the configuration")
        params = resume.params.copy()
        state = resume.optimizer_state or OptimizerState.fresh(config.optimizer, params)
    else:
        params = init_params(config, vocabulary)
        state = OptimizerState.fresh(config.optimizer, params)

    losses = []
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for epoch in range(state.epoch, config.epochs):
            total = 0.0
            for batch in make_batches(data, config.batch_size, config.seed, epoch):
                total += train_step(params, state, batch, config, pool) * len(batch)
            state.epoch = epoch + 1
            mean = total / len(data)
            losses.append(mean)
            log.info("epoch %d loss %.6f", epoch + 1, mean)
            if on_epoch is not None:
                on_epoch(epoch + 1, mean)
    finally:
        if pool is not None:
            pool.shutdown()

    report = TrainReport(losses, time.perf_counter() - started, len(data), vocabulary, state)
    return params, report


# -- checkpoint -------------------------------------------------------------
#
# Little-endian layout:
#   b"KBVEC1"
#   u64 N, u64 d, u8 mode (0 cbow, 1 kb_only, 2 joint), u8 flags (1 = LSTM bias, 2 = optimizer)
#   f64 input_embeddings (N*d), output_embeddings (N*H), lstm.W (4*d*d), lstm.I (4*d*d),
#       [lstm.b (4*d)]                                    -- all row-major
#   u64 min_count; N x (u32 byte length, utf-8 token, u64 count)
#   [u8 kind (0 sgd, 1 adam), u64 step, u64 epoch, adam: every m array then every v array]

MAGIC = b"KBVEC1"
_FLAG_BIAS = 1
_FLAG_OPT = 2


@dataclass
class Checkpoint:
    params: nn.ModelParams
    vocabulary: Vocabulary
    optimizer_state: OptimizerState | None = None


def checkpoint_bytes(params: nn.ModelParams, vocabulary: Vocabulary, optimizer_state=None) -> bytes:
    if len(vocabulary) != params.vocab_size:
        raise ValueError("vocabulary size does not match parameters")
    flags = (_FLAG_BIAS if params.lstm.b is not None else 0) | (_FLAG_OPT if optimizer_state is not None else 0)
    out = [MAGIC, struct.pack("<QQBB", params.vocab_size, params.dim, nn.MODES.index(params.mode), flags)]
    arrays = params.named_arrays()
    out += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values()]
    out.append(struct.pack("<Q", vocabulary.min_count))
    for tok, count in zip(vocabulary.tokens, vocabulary.counts):
        raw = tok.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw + struct.pack("<Q", count))
    if optimizer_state is not None:
        kind = 1 if optimizer_state.kind == "adam" else 0
        out.append(struct.pack("<BQQ", kind, optimizer_state.step, optimizer_state.epoch))
        if kind:
            out += [np.ascontiguousarray(optimizer_state.m[k], "<f8").tobytes() for k in arrays]
            out += [np.ascontiguousarray(optimizer_state.v[k], "<f8").tobytes() for k in arrays]
    return b"".join(out)


def save_checkpoint(path, params: nn.ModelParams, vocabulary: Vocabulary, optimizer_state=None):
    Path(path).write_bytes(checkpoint_bytes(params, vocabulary, optimizer_state))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint or unsupported version (magic {magic!r})")
    n, d, mode_tag, flags = r.unpack("<QQBB")
    if mode_tag >= len(nn.MODES):
        raise CheckpointError(f"{path}: unknown mode tag {mode_tag}")
    mode = nn.MODES[mode_tag]
    emb = r.floats((n, d))
    out = r.floats((n, nn.hidden_width(d, mode)))
    W = r.floats((4, d, d))
    I = r.floats((4, d, d))
    b = r.floats((4, d)) if flags & _FLAG_BIAS else None
    params = nn.ModelParams(emb, out, nn.LstmParams(W, I, b), mode)

    (min_count,) = r.unpack("<Q")
    tokens, counts = [], []
    for _ in range(n):
        (size,) = r.unpack("<I")
        try:
            tokens.append(r.take(size).decode("utf-8"))
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: corrupt token bytes") from None
        counts.append(r.unpack("<Q")[0])
    vocabulary = Vocabulary(tuple(tokens), tuple(counts), int(min_count))

    state = None
    if flags & _FLAG_OPT:
        kind, step, epoch = r.unpack("<BQQ")
        if kind == 1:
            shapes = {k: a.shape for k, a in params.named_arrays().items()}
            m = {k: r.floats(s) for k, s in shapes.items()}
            v = {k: r.floats(s) for k, s in shapes.items()}
            state = OptimizerState("adam", step, epoch, m, v)
        else:
            state = OptimizerState("sgd", step, epoch)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return Checkpoint(params, vocabulary, state)
