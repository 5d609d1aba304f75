"""Similarity benchmarks, Spearman correlation, neighbour queries and embedding I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kbvec.errors import FormatError, UndefinedCorrelationError, UndefinedSimilarityError
from kbvec.vocab import Vocabulary


@dataclass(frozen=True)
class BenchmarkPair:
    token_a: str
    token_b: str
    human_score: float


@dataclass(frozen=True)
class EvalReport:
    spearman_rho: float
    pairs_used: int
    pairs_skipped_oov: int

    def __str__(self):
        return f"rho={self.spearman_rho:.6f} used={self.pairs_used} skipped={self.pairs_skipped_oov}"


def load_benchmark(path) -> list[BenchmarkPair]:
    """Read ``token_a<TAB>token_b<TAB>score`` rows; ``#`` lines are comments."""
    path = Path(path)
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3 or not cols[0] or not cols[1]:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            try:
                score = float(cols[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric score {cols[2]!r}") from None
            if not math.isfinite(score):
                raise FormatError(f"{path}:{lineno}: score must be finite")
            pairs.append(BenchmarkPair(cols[0], cols[1], score))
    return pairs


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise UndefinedSimilarityError("cosine similarity of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of the positions they span."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot rank an empty sequence")
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Pearson correlation of average ranks (exact under ties)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("spearman needs two 1-d sequences of equal length")
    if len(xs) < 2:
        raise UndefinedCorrelationError("spearman needs at least 2 pairs")
    rx = average_ranks(xs) - (len(xs) + 1) / 2.0
    ry = average_ranks(ys) - (len(ys) + 1) / 2.0
    vx, vy = float(rx @ rx), float(ry @ ry)
    if vx == 0 or vy == 0:
        raise UndefinedCorrelationError("spearman is undefined for a constant sequence")
    # sqrt(v * v) == v exactly, so identical or reversed rankings give exactly +-1
    return float(np.clip(float(rx @ ry) / math.sqrt(vx * vy), -1.0, 1.0))


def evaluate(embeddings, vocabulary: Vocabulary, benchmark) -> EvalReport:
    """Spearman rho between cosine of input embeddings and the benchmark scores.

    ``embeddings`` is either a ``ModelParams`` or a plain (N, d) array.
    Pairs with an out-of-vocabulary token are skipped and counted.
    """
    table = getattr(embeddings, "input_embeddings", embeddings)
    model, human = [], []
    for pair in benchmark:
        if pair.token_a in vocabulary and pair.token_b in vocabulary:
            model.append(cosine(table[vocabulary.id(pair.token_a)], table[vocabulary.id(pair.token_b)]))
            human.append(pair.human_score)
    skipped = len(benchmark) - len(model)
    if len(model) < 2:
        raise UndefinedCorrelationError(
            f"only {len(model)} in-vocabulary pairs ({skipped} skipped); need at least 2"
        )
    return EvalReport(spearman(model, human), len(model), skipped)


def nearest_neighbors(embeddings, vocabulary: Vocabulary, token: str, k: int = 10) -> list[tuple[str, float]]:
    """Top-k tokens by cosine to ``token``, query excluded, ties by token text."""
    if token not in vocabulary:
        raise KeyError(f"token {token!r} is not in the vocabulary")
    if k < 1:
        raise ValueError("k must be >= 1")
    table = np.asarray(getattr(embeddings, "input_embeddings", embeddings), dtype=float)
    query = table[vocabulary.id(token)]
    norms = np.linalg.norm(table, axis=1)
    qn = np.linalg.norm(query)
    if qn == 0:
        raise UndefinedSimilarityError(f"embedding of {token!r} is the zero vector")
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.clip(table @ query / (norms * qn), -1.0, 1.0)
    scored = [
        (vocabulary.tokens[i], float(s))
        for i, s in enumerate(sims)
        if vocabulary.tokens[i] != token and norms[i] > 0
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def export_embeddings(embeddings, vocabulary: Vocabulary, path):
    """Text format: header ``N d`` then ``token v1 ... vd`` with 17 significant digits."""
    table = np.asarray(getattr(embeddings, "input_embeddings", embeddings), dtype=float)
    n, d = table.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{n} {d}\n")
        for tok, row in zip(vocabulary.tokens, table):
            fh.write(tok + " " + " ".join(f"{x:.17g}" for x in row) + "\n")


def import_embeddings(path) -> tuple[Vocabulary, np.ndarray]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}:1: header must be 'N d'")
        try:
            n, d = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(f"{path}:1: header must be two integers") from None
        tokens, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 1:
                raise FormatError(f"{path}:{lineno}: expected {d} values, got {len(parts) - 1}")
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
            tokens.append(parts[0])
    if len(tokens) != n:
        raise FormatError(f"{path}: header announces {n} rows, found {len(tokens)}")
    table = np.array(rows, dtype=float).reshape(n, d)
    return Vocabulary(tuple(tokens), (0,) * n), table
