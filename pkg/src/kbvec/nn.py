"""Forward and backward passes of the knowledge-base enriched CBOW model.

Three model modes share one code path:

* ``cbow``    hidden = mean of the context input embeddings
* ``kb_only`` hidden = final LSTM state over the target's ancestor embeddings
* ``joint``   hidden = [cbow hidden ; LSTM state]  (width 2d)

The hidden vector scores every vocabulary entry against the output table and
a full softmax gives the prediction. All arithmetic is float64.

LSTM cell, no biases unless enabled::

    g_u = sigmoid(W_u h + I_u x)    g_f = sigmoid(W_f h + I_f x)
    g_o = sigmoid(W_o h + I_o x)    g_c = tanh(W_c h + I_c x)
    m'  = g_f * m + g_u * g_c
    h'  = tanh(g_o * m')

Gate matrices are stored stacked along axis 0 in the order u, f, o, c.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from kbvec.vocab import ExampleArrays, TrainingExample

MODES = ("cbow", "kb_only", "joint")
GATES = ("u", "f", "o", "c")


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass
class LstmParams:
    W: np.ndarray  # (4, d, d) recurrent
    I: np.ndarray  # (4, d, d) input projection
    b: np.ndarray | None = None  # (4, d)

    @property
    def dim(self) -> int:
        return self.W.shape[-1]

    W_u = property(lambda self: self.W[0])
    W_f = property(lambda self: self.W[1])
    W_o = property(lambda self: self.W[2])
    W_c = property(lambda self: self.W[3])
    I_u = property(lambda self: self.I[0])
    I_f = property(lambda self: self.I[1])
    I_o = property(lambda self: self.I[2])
    I_c = property(lambda self: self.I[3])

    @classmethod
    def zeros(cls, d, bias=False) -> "LstmParams":
        return cls(np.zeros((4, d, d)), np.zeros((4, d, d)), np.zeros((4, d)) if bias else None)


@dataclass
class LstmState:
    h: np.ndarray
    m: np.ndarray

    @classmethod
    def zeros(cls, d) -> "LstmState":
        return cls(np.zeros(d), np.zeros(d))


@dataclass
class ModelParams:
    input_embeddings: np.ndarray  # (N, d)
    output_embeddings: np.ndarray  # (N, H)
    lstm: LstmParams
    mode: str = "joint"

    def __post_init__(self):
        _check_mode(self.mode)
        n, d = self.input_embeddings.shape
        if self.output_embeddings.shape != (n, hidden_width(d, self.mode)):
            raise ValueError(
                f"output table shape {self.output_embeddings.shape} does not fit "
                f"N={n}, d={d}, mode={self.mode}"
            )
        if self.lstm.W.shape != (4, d, d) or self.lstm.I.shape != (4, d, d):
            raise ValueError("LSTM matrices must be (4, d, d)")

    @property
    def vocab_size(self) -> int:
        return self.input_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.input_embeddings.shape[1]

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Parameter arrays by name, in checkpoint order. Values are live references."""
        out = {
            "input_embeddings": self.input_embeddings,
            "output_embeddings": self.output_embeddings,
            "lstm.W": self.lstm.W,
            "lstm.I": self.lstm.I,
        }
        if self.lstm.b is not None:
            out["lstm.b"] = self.lstm.b
        return out

    def copy(self) -> "ModelParams":
        b = None if self.lstm.b is None else self.lstm.b.copy()
        return ModelParams(
            self.input_embeddings.copy(),
            self.output_embeddings.copy(),
            LstmParams(self.lstm.W.copy(), self.lstm.I.copy(), b),
            self.mode,
        )


def hidden_width(d: int, mode: str) -> int:
    return 2 * d if mode == "joint" else d


# Gradients share the parameter naming; a plain dict keyed like named_arrays().
Gradients = dict


def zero_gradients(params: ModelParams) -> Gradients:
    return {name: np.zeros_like(a) for name, a in params.named_arrays().items()}


def global_norm(grads: Gradients) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))


sigmoid = expit


def cbow_hidden(context_ids, input_embeddings) -> np.ndarray:
    """Mean of the context rows, over the number of ids actually present."""
    context_ids = np.asarray(context_ids, dtype=np.int64)
    if context_ids.size == 0:
        raise ValueError("cbow_hidden needs a non-empty context")
    return input_embeddings[context_ids].mean(axis=0)


def _gates(lstm: LstmParams, h, x):
    d = lstm.dim
    pre = h @ lstm.W.reshape(4 * d, d).T + x @ lstm.I.reshape(4 * d, d).T
    pre = pre.reshape(pre.shape[:-1] + (4, d))
    if lstm.b is not None:
        pre = pre + lstm.b
    gu = sigmoid(pre[..., 0, :])
    gf = sigmoid(pre[..., 1, :])
    go = sigmoid(pre[..., 2, :])
    gc = np.tanh(pre[..., 3, :])
    return gu, gf, go, gc


def lstm_step(lstm: LstmParams, state: LstmState, x) -> LstmState:
    gu, gf, go, gc = _gates(lstm, state.h, np.asarray(x, dtype=float))
    m = gf * state.m + gu * gc
    return LstmState(np.tanh(go * m), m)


def lstm_encode(lstm: LstmParams, ancestor_ids, input_embeddings) -> np.ndarray:
    """Fold the cell over the ancestor embeddings, root first, from the zero state."""
    state = LstmState.zeros(input_embeddings.shape[1])
    for i in ancestor_ids:
        state = lstm_step(lstm, state, input_embeddings[i])
    return state.h


def joint_hidden(h_ctx, h_kb, mode: str) -> np.ndarray:
    _check_mode(mode)
    if mode == "cbow":
        return h_ctx
    if mode == "kb_only":
        return h_kb
    return np.concatenate([h_ctx, h_kb], axis=-1)


def log_softmax(scores):
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def predict_softmax(hidden, output_embeddings) -> np.ndarray:
    """P(i | hidden) over the whole vocabulary; max-subtracted for safety."""
    return np.exp(log_softmax(hidden @ output_embeddings.T))


@dataclass
class ForwardTrace:
    """Intermediates of a batched forward pass, consumed by ``backward_batch``."""

    mode: str
    batch: ExampleArrays
    h_ctx: np.ndarray | None
    steps: list = field(default_factory=list)  # per LSTM step: (x, h_prev, m_prev, gates, m, h, mask)
    h_kb: np.ndarray | None = None
    hidden: np.ndarray | None = None
    probs: np.ndarray | None = None
    losses: np.ndarray | None = None


def forward(params: ModelParams, batch: ExampleArrays) -> ForwardTrace:
    """Per-example negative log-likelihoods of the batch targets."""
    mode = params.mode
    E = params.input_embeddings
    n, d = len(batch), params.dim
    trace = ForwardTrace(mode, batch, None)

    if mode != "kb_only":
        counts = batch.context_mask.sum(axis=1, keepdims=True)
        if np.any(counts == 0):
            raise ValueError("every example needs a non-empty context")
        rows = E[batch.context] * batch.context_mask[..., None]
        trace.h_ctx = rows.sum(axis=1) / counts

    if mode != "cbow":
        h = np.zeros((n, d))
        m = np.zeros((n, d))
        lstm = params.lstm
        for s in range(batch.ancestors.shape[1]):
            mask = batch.ancestor_mask[:, s : s + 1]
            x = E[batch.ancestors[:, s]]
            gates = _gates(lstm, h, x)
            gu, gf, go, gc = gates
            m_new = gf * m + gu * gc
            h_new = np.tanh(go * m_new)
            trace.steps.append((x, h, m, gates, m_new, h_new, mask))
            # padded steps carry the state through unchanged
            h = mask * h_new + (1.0 - mask) * h
            m = mask * m_new + (1.0 - mask) * m
        trace.h_kb = h

    trace.hidden = joint_hidden(trace.h_ctx, trace.h_kb, mode)
    logp = log_softmax(trace.hidden @ params.output_embeddings.T)
    trace.probs = np.exp(logp)
    trace.losses = -logp[np.arange(n), batch.targets]
    return trace


def backward_batch(params: ModelParams, trace: ForwardTrace, scale: float = 1.0) -> Gradients:
    """Gradient of ``scale * sum(trace.losses)`` with respect to every parameter."""
    batch = trace.batch
    n, d = len(batch), params.dim
    grads = zero_gradients(params)
    dE = grads["input_embeddings"]

    dscores = trace.probs.copy()
    dscores[np.arange(n), batch.targets] -= 1.0
    dscores *= scale
    grads["output_embeddings"][...] = dscores.T @ trace.hidden
    dhidden = dscores @ params.output_embeddings

    if trace.mode == "cbow":
        dh_ctx, dh_kb = dhidden, None
    elif trace.mode == "kb_only":
        dh_ctx, dh_kb = None, dhidden
    else:
        dh_ctx, dh_kb = dhidden[:, :d], dhidden[:, d:]

    if dh_ctx is not None:
        weights = batch.context_mask / batch.context_mask.sum(axis=1, keepdims=True)
        contrib = dh_ctx[:, None, :] * weights[..., None]
        np.add.at(dE, batch.context.ravel(), contrib.reshape(-1, d))

    if dh_kb is not None and trace.steps:
        lstm = params.lstm
        Wflat = lstm.W.reshape(4 * d, d)
        Iflat = lstm.I.reshape(4 * d, d)
        dW = grads["lstm.W"].reshape(4 * d, d)
        dI = grads["lstm.I"].reshape(4 * d, d)
        db = grads.get("lstm.b")
        dh = dh_kb
        dm = np.zeros((n, d))
        for s in range(len(trace.steps) - 1, -1, -1):
            x, h_prev, m_prev, (gu, gf, go, gc), m_new, h_new, mask = trace.steps[s]
            dh_new = mask * dh
            dm_new = mask * dm
            dy = dh_new * (1.0 - h_new**2)
            dgo = dy * m_new
            dm_new = dm_new + dy * go
            dgf = dm_new * m_prev
            dgu = dm_new * gc
            dgc = dm_new * gu
            dpre = np.concatenate(
                [
                    dgu * gu * (1.0 - gu),
                    dgf * gf * (1.0 - gf),
                    dgo * go * (1.0 - go),
                    dgc * (1.0 - gc**2),
                ],
                axis=1,
            )  # (n, 4d)
            dW += dpre.T @ h_prev
            dI += dpre.T @ x
            if db is not None:
                db += dpre.sum(axis=0).reshape(4, d)
            np.add.at(dE, batch.ancestors[:, s], dpre @ Iflat)
            dh = dpre @ Wflat + (1.0 - mask) * dh
            dm = dm_new * gf + (1.0 - mask) * dm
    return grads


def _single(example: TrainingExample) -> ExampleArrays:
    return ExampleArrays.from_examples([example])


def nll_loss(example: TrainingExample, params: ModelParams) -> tuple[float, ForwardTrace]:
    """-log P(target | hidden) for one example."""
    trace = forward(params, _single(example))
    return float(trace.losses[0]), trace


def backward(trace: ForwardTrace, example: TrainingExample, params: ModelParams) -> Gradients:
    if len(trace.batch) != 1 or int(trace.batch.targets[0]) != example.target:
        raise ValueError("trace does not belong to this example")
    return backward_batch(params, trace)


def finite_diff_grad(
    example: TrainingExample | None,
    params: ModelParams,
    epsilon: float = 1e-5,
    loss_fn: Callable[[ModelParams], float] | None = None,
) -> Gradients:
    """Central-difference gradient of the example loss, one scalar at a time.

    ``loss_fn`` overrides the example loss (used to check the harness itself).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if loss_fn is None:
        arrays = _single(example)
        loss_fn = lambda p: float(forward(p, arrays).losses[0])  # noqa: E731
    work = params.copy()
    grads = zero_gradients(params)
    for name, arr in work.named_arrays().items():
        flat = arr.reshape(-1)
        out = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = loss_fn(work)
            flat[k] = orig - epsilon
            down = loss_fn(work)
            flat[k] = orig
            out[k] = (up - down) / (2.0 * epsilon)
    return grads


def max_relative_error(analytic: Gradients, numeric: Gradients, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over every gradient entry."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom, initial=0.0)))
    return worst


def random_instance(rng: np.random.Generator, mode: str, n=20, d=8, max_context=6, n_ancestors=4, scale=0.5):
    """Random parameters and one example, for gradient checks."""
    params = ModelParams(
        rng.normal(0.0, scale, (n, d)),
        rng.normal(0.0, scale, (n, hidden_width(d, mode))),
        LstmParams(rng.normal(0.0, scale, (4, d, d)), rng.normal(0.0, scale, (4, d, d))),
        mode,
    )
    k = int(rng.integers(1, max_context + 1))
    example = TrainingExample(
        int(rng.integers(n)),
        tuple(int(i) for i in rng.integers(0, n, k)),
        tuple(int(i) for i in rng.integers(0, n, n_ancestors)),
    )
    return params, example
