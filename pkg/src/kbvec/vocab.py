"""Corpus loading, vocabulary construction and CBOW window extraction.

A corpus file holds one document per line; each document is a whitespace
separated sequence of concept tokens (multi-word names joined with ``_``).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from kbvec.errors import ConfigError, FormatError

DEFAULT_WINDOW = 5


def load_corpus(path) -> list[list[str]]:
    """Read a corpus file into a list of token lists, skipping empty lines."""
    path = Path(path)
    raw = path.read_bytes()
    documents = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid UTF-8 ({exc.reason})") from None
        tokens = text.split()
        if tokens:
            documents.append(tokens)
    return documents


@dataclass(frozen=True)
class Vocabulary:
    """Dense token <-> id map with per-id corpus counts.

    Hierarchy-only nodes carry a count of zero.
    """

    tokens: tuple[str, ...]
    counts: tuple[int, ...]
    min_count: int = 1
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tokens) != len(self.counts):
            raise ValueError("tokens and counts differ in length")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "token_to_id", index)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.token_to_id

    @property
    def id_to_token(self) -> tuple[str, ...]:
        return self.tokens

    def id(self, token: str) -> int:
        return self.token_to_id[token]

    def extend(self, tokens: Iterable[str]) -> "Vocabulary":
        """Return a vocabulary with unseen ``tokens`` appended (count 0), in order."""
        new = [t for t in dict.fromkeys(tokens) if t not in self.token_to_id]
        if not new:
            return self
        return Vocabulary(self.tokens + tuple(new), self.counts + (0,) * len(new), self.min_count)

    def encode(self, document: Sequence[str]) -> list[int]:
        """Map a token list to ids, dropping out-of-vocabulary tokens."""
        index = self.token_to_id
        return [index[t] for t in document if t in index]


def build_vocabulary(documents, hierarchy_node_tokens=(), min_count=1) -> Vocabulary:
    """Build a vocabulary ordered by descending count, ties by token text.

    Corpus tokens below ``min_count`` are excluded; hierarchy node tokens are
    always admitted.
    """
    if min_count < 1:
        raise ConfigError(f"min_count must be >= 1, got {min_count}")
    counts = Counter(tok for doc in documents for tok in doc)
    kept = {tok: n for tok, n in counts.items() if n >= min_count}
    for tok in hierarchy_node_tokens:
        kept.setdefault(tok, 0)
    if not kept:
        raise ConfigError("vocabulary is empty (no token reaches min_count and no hierarchy nodes)")
    order = sorted(kept, key=lambda tok: (-kept[tok], tok))
    return Vocabulary(tuple(order), tuple(kept[t] for t in order), min_count)


@dataclass(frozen=True)
class TrainingExample:
    target: int
    context: tuple[int, ...]
    ancestors: tuple[int, ...] = ()


def extract_examples(document: Sequence[int], c: int = DEFAULT_WINDOW) -> list[TrainingExample]:
    """One example per position, with the window truncated at document edges."""
    if c < 1:
        raise ConfigError(f"window radius must be >= 1, got {c}")
    n = len(document)
    examples = []
    for t in range(n):
        lo, hi = max(0, t - c), min(n - 1, t + c)
        context = tuple(document[j] for j in range(lo, hi + 1) if j != t)
        if context:
            examples.append(TrainingExample(document[t], context))
    return examples


@dataclass
class ExampleArrays:
    """Padded array form of a list of examples, used for batched training.

    Context ids are left-aligned with a mask. Ancestor ids are right-aligned
    (left padded) so every sequence ends at the last step.
    """

    targets: np.ndarray  # (n,)
    context: np.ndarray  # (n, C) int
    context_mask: np.ndarray  # (n, C) float
    ancestors: np.ndarray  # (n, S) int
    ancestor_mask: np.ndarray  # (n, S) float

    def __len__(self):
        return len(self.targets)

    def take(self, idx) -> "ExampleArrays":
        return ExampleArrays(
            self.targets[idx],
            self.context[idx],
            self.context_mask[idx],
            self.ancestors[idx],
            self.ancestor_mask[idx],
        )

    @classmethod
    def from_examples(cls, examples: Sequence[TrainingExample]) -> "ExampleArrays":
        n = len(examples)
        width = max((len(e.context) for e in examples), default=0)
        depth = max((len(e.ancestors) for e in examples), default=0)
        targets = np.fromiter((e.target for e in examples), dtype=np.int64, count=n)
        context = np.zeros((n, width), dtype=np.int64)
        context_mask = np.zeros((n, width))
        ancestors = np.zeros((n, depth), dtype=np.int64)
        ancestor_mask = np.zeros((n, depth))
        for i, e in enumerate(examples):
            k = len(e.context)
            context[i, :k] = e.context
            context_mask[i, :k] = 1.0
            s = len(e.ancestors)
            if s:
                ancestors[i, depth - s :] = e.ancestors
                ancestor_mask[i, depth - s :] = 1.0
        return cls(targets, context, context_mask, ancestors, ancestor_mask)
