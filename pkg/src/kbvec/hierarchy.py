"""Tree-coded knowledge-base hierarchy and ancestor path resolution.

The hierarchy file is a UTF-8 TSV with rows ``concept_token<TAB>tree_code``
(e.g. ``Migraine_Disorders\tC10.228.140.546.399.750``). A concept may have
several rows. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from kbvec.errors import ConsistencyError, FormatError
from kbvec.vocab import Vocabulary

SYNTHETIC_PREFIX = "NODE:"

_SEGMENT = re.compile(r"[A-Za-z0-9]+\Z")


@dataclass(frozen=True, order=True)
class TreeCode:
    segments: tuple[str, ...]

    def __post_init__(self):
        if not self.segments:
            raise FormatError("tree code has no segments")
        for seg in self.segments:
            if not _SEGMENT.match(seg):
                raise FormatError(f"invalid tree code segment {seg!r}")

    @property
    def text(self) -> str:
        return ".".join(self.segments)

    def __str__(self):
        return self.text

    def __len__(self):
        return len(self.segments)

    def prefixes(self) -> list["TreeCode"]:
        """Proper prefixes, root first."""
        return [TreeCode(self.segments[:k]) for k in range(1, len(self.segments))]


def parse_tree_code(text: str) -> TreeCode:
    if not text:
        raise FormatError("empty tree code")
    segments = tuple(text.split("."))
    for seg in segments:
        if not _SEGMENT.match(seg):
            raise FormatError(f"malformed tree code {text!r}")
    return TreeCode(segments)


@dataclass
class Hierarchy:
    """Concept -> codes map plus its inverse.

    ``concept_codes`` values are sorted by canonical text. ``code_owner``
    covers every stored code and every proper prefix of one; prefixes with
    no owner in the source file belong to synthetic ``NODE:<code>`` tokens.
    """

    concept_codes: dict[str, tuple[TreeCode, ...]] = field(default_factory=dict)
    code_owner: dict[str, str] = field(default_factory=dict)

    def node_tokens(self) -> list[str]:
        """All owner tokens in a deterministic order (by code text)."""
        return list(dict.fromkeys(self.code_owner[c] for c in sorted(self.code_owner)))

    def __len__(self):
        return len(self.concept_codes)


def read_hierarchy(path) -> Hierarchy:
    """Parse a hierarchy TSV without touching any vocabulary."""
    path = Path(path)
    raw = path.read_bytes()
    codes: dict[str, set[TreeCode]] = {}
    owner: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}:{lineno}: invalid UTF-8") from None
        if not text.strip() or text.lstrip().startswith("#"):
            continue
        cols = text.rstrip("\r").split("\t")
        if len(cols) != 2 or not cols[0] or any(ch.isspace() for ch in cols[0]):
            raise FormatError(f"{path}:{lineno}: expected 'concept<TAB>tree_code', got {text!r}")
        concept, code_text = cols[0], cols[1].strip()
        try:
            code = parse_tree_code(code_text)
        except FormatError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        prev = owner.get(code.text)
        if prev is not None and prev[0] != concept:
            raise ConsistencyError(
                f"{path}: code {code.text} assigned to {prev[0]!r} (line {prev[1]}) "
                f"and {concept!r} (line {lineno})"
            )
        owner[code.text] = (concept, lineno)
        codes.setdefault(concept, set()).add(code)

    code_owner = {text: tok for text, (tok, _) in owner.items()}
    for code_set in codes.values():
        for code in code_set:
            for prefix in code.prefixes():
                code_owner.setdefault(prefix.text, SYNTHETIC_PREFIX + prefix.text)
    concept_codes = {
        concept: tuple(sorted(code_set, key=lambda c: c.text)) for concept, code_set in codes.items()
    }
    return Hierarchy(concept_codes, code_owner)


def load_hierarchy(path, vocabulary: Vocabulary) -> tuple[Hierarchy, Vocabulary]:
    """Parse ``path`` and return it with ``vocabulary`` extended by every node token."""
    hierarchy = read_hierarchy(path)
    return hierarchy, vocabulary.extend(hierarchy.node_tokens())


def canonical_code(concept: str, hierarchy: Hierarchy) -> TreeCode | None:
    codes = hierarchy.concept_codes.get(concept)
    if not codes:
        return None
    return codes[0]


def ancestor_sequence(concept: str, hierarchy: Hierarchy, vocabulary: Vocabulary) -> tuple[int, ...]:
    """Ids of the owners of the canonical code's proper prefixes, root first.

    Empty for concepts outside the hierarchy and for root-level concepts.
    """
    code = canonical_code(concept, hierarchy)
    if code is None:
        return ()
    return tuple(vocabulary.id(hierarchy.code_owner[p.text]) for p in code.prefixes())
