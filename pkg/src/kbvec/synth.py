"""Synthetic hierarchy, corpus and similarity benchmark generators.

The generated tree is a complete ``b``-ary tree of depth ``L``. Documents
pick a topic leaf and mostly draw tokens from the leaves sharing its parent,
so siblings co-occur. A fraction of leaves is then thinned out to at most
``rare_max`` corpus occurrences, which leaves their context distribution
unbiased but sparse. Ground-truth similarity is Wu-Palmer over the tree.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from kbvec.errors import ConfigError
from kbvec.hierarchy import Hierarchy, TreeCode


@dataclass(frozen=True)
class SynthConfig:
    branching: int = 3
    depth: int = 4
    docs: int = 2000
    doc_length: int = 20
    alpha: float = 0.9
    rare_fraction: float = 0.3
    rare_max: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.branching < 2:
            raise ConfigError("branching must be >= 2")
        if self.depth < 2:
            raise ConfigError("depth must be >= 2")
        if self.docs < 1:
            raise ConfigError("docs must be >= 1")
        if self.doc_length < 2:
            raise ConfigError("doc_length must be >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0.0 <= self.rare_fraction < 1.0:
            raise ConfigError("rare_fraction must lie in [0, 1)")
        if self.rare_max < 0:
            raise ConfigError("rare_max must be >= 0")


def node_token(path) -> str:
    return "S" + "_".join(str(i) for i in path)


def generate_hierarchy(config: SynthConfig) -> str:
    """Hierarchy TSV for the complete tree, shallow levels first."""
    lines = [f"# synthetic hierarchy: branching={config.branching} depth={config.depth}"]
    children = range(1, config.branching + 1)
    for level in range(1, config.depth + 1):
        for path in itertools.product(children, repeat=level):
            lines.append(f"{node_token(path)}\t{'.'.join(str(i) for i in path)}")
    return "\n".join(lines) + "\n"


def leaves(hierarchy: Hierarchy) -> list[str]:
    """Concepts none of whose codes is a proper prefix of another code, by code order."""
    inner = {p.text for codes in hierarchy.concept_codes.values() for c in codes for p in c.prefixes()}
    found = []
    for concept, codes in hierarchy.concept_codes.items():
        if all(c.text not in inner for c in codes):
            found.append((codes[0].segments, concept))
    return [concept for _, concept in sorted(found, key=lambda item: _code_key(item[0]))]


def _code_key(segments):
    return tuple((0, int(s), "") if s.isdigit() else (1, 0, s) for s in segments)


def rare_leaves(config: SynthConfig, hierarchy: Hierarchy) -> list[str]:
    """The leaves designated rare for this config (deterministic in the seed)."""
    pool = leaves(hierarchy)
    k = int(config.rare_fraction * len(pool))
    rng = np.random.default_rng([config.seed, 0])
    picked = rng.choice(len(pool), size=k, replace=False) if k else []
    return sorted((pool[i] for i in picked), key=lambda t: _code_key(hierarchy.concept_codes[t][0].segments))


def generate_corpus(config: SynthConfig, hierarchy: Hierarchy) -> str:
    pool = leaves(hierarchy)
    if len(pool) < 2:
        raise ConfigError("hierarchy needs at least two leaves")
    index = {tok: i for i, tok in enumerate(pool)}
    by_parent: dict[tuple, list[int]] = {}
    for tok in pool:
        by_parent.setdefault(hierarchy.concept_codes[tok][0].segments[:-1], []).append(index[tok])
    siblings = [np.array(by_parent[hierarchy.concept_codes[t][0].segments[:-1]]) for t in pool]

    rng = np.random.default_rng([config.seed, 1])
    docs = []
    for _ in range(config.docs):
        group = siblings[rng.integers(len(pool))]
        local = rng.random(config.doc_length) < config.alpha
        doc = np.where(
            local,
            group[rng.integers(len(group), size=config.doc_length)],
            rng.integers(len(pool), size=config.doc_length),
        )
        docs.append(doc)

    # thin rare leaves down to rare_max occurrences, chosen uniformly
    keep = [np.ones(len(d), dtype=bool) for d in docs]
    for tok in rare_leaves(config, hierarchy):
        leaf = index[tok]
        where = [(i, j) for i, d in enumerate(docs) for j in np.flatnonzero(d == leaf)]
        if len(where) > config.rare_max:
            survivors = set(rng.choice(len(where), size=config.rare_max, replace=False).tolist())
            for k, (i, j) in enumerate(where):
                if k not in survivors:
                    keep[i][j] = False

    lines = []
    for doc, mask in zip(docs, keep):
        kept = doc[mask]
        if len(kept):
            lines.append(" ".join(pool[i] for i in kept))
    return "\n".join(lines) + "\n"


def wu_palmer(a: TreeCode, b: TreeCode) -> float:
    """2 * depth(LCA) / (depth(a) + depth(b)); 0 when the codes share no root."""
    common = 0
    for x, y in zip(a.segments, b.segments):
        if x != y:
            break
        common += 1
    return 2.0 * common / (len(a) + len(b))


def ground_truth_pairs(
    hierarchy: Hierarchy,
    selector: str | Callable[[str, str], bool] = "all",
    seed: int = 0,
    *,
    rare=(),
    n_pairs: int | None = None,
) -> str:
    """Benchmark TSV of distinct leaf pairs scored by Wu-Palmer similarity.

    ``selector`` is ``"all"``, ``"rare-only"`` (pairs touching ``rare``) or a
    predicate on the two tokens. ``n_pairs`` samples that many pairs without
    replacement; ``None`` keeps every qualifying pair.
    """
    pool = leaves(hierarchy)
    if len(pool) < 2:
        raise ConfigError("need at least two leaves")
    rare = set(rare)
    if selector == "all":
        keep = lambda a, b: True  # noqa: E731
    elif selector == "rare-only":
        keep = lambda a, b: a in rare or b in rare  # noqa: E731
    elif callable(selector):
        keep = selector
    else:
        raise ConfigError(f"unknown pair selector {selector!r}")

    pairs = [(a, b) for a, b in itertools.combinations(pool, 2) if keep(a, b)]
    if n_pairs is not None and n_pairs < len(pairs):
        rng = np.random.default_rng([seed, 2])
        pairs = [pairs[i] for i in sorted(rng.choice(len(pairs), size=n_pairs, replace=False))]
    codes = hierarchy.concept_codes
    lines = ["# token_a\ttoken_b\twu_palmer"]
    for a, b in pairs:
        lines.append(f"{a}\t{b}\t{wu_palmer(codes[a][0], codes[b][0])!r}")
    return "\n".join(lines) + "\n"
