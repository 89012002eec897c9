"""Structured queries: conjunctions of nouns and (noun, preposition, noun) triplets.

Textual form joins conjuncts with ``&``::

    picture above bed & lamp
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ParseError, UnknownPreposition

DEFAULT_PREPOSITIONS = (
    "above",
    "below",
    "left of",
    "right of",
    "in front of",
    "behind",
    "inside of",
    "on",
    "under",
    "across from",
    "in",
)

# Words that close a multiword relation ("next to", "on top of").  Seeing one
# outside a matched preposition means the relation is not in the lexicon.
RELATION_MARKERS = frozenset({"of", "to", "from"})


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


class PrepositionLexicon:
    """Ordered preposition set; iteration yields longest entries first."""

    def __init__(self, prepositions: Iterable[str] = DEFAULT_PREPOSITIONS):
        preps = [normalize(p) for p in prepositions]
        if not preps or any(not p for p in preps):
            raise ValueError("lexicon must contain non-empty prepositions")
        if len(set(preps)) != len(preps):
            raise ValueError("duplicate prepositions in lexicon")
        self._preps = tuple(sorted(preps, key=lambda p: (-len(p.split()), -len(p), p)))
        self._tokens = tuple(tuple(p.split()) for p in self._preps)

    def __iter__(self):
        return iter(self._preps)

    def __len__(self):
        return len(self._preps)

    def __contains__(self, item) -> bool:
        return normalize(item) in self._preps

    def match_at(self, tokens: Sequence[str], i: int) -> tuple[str, int] | None:
        """Longest preposition starting at token ``i``, as (prep, n_tokens)."""
        for prep, toks in zip(self._preps, self._tokens):
            if tuple(tokens[i : i + len(toks)]) == toks:
                return prep, len(toks)
        return None


DEFAULT_LEXICON = PrepositionLexicon()


@dataclass(frozen=True)
class SpatialTriplet:
    subject: str
    preposition: str
    reference: str

    def __str__(self):
        return f"{self.subject} {self.preposition} {self.reference}"


@dataclass(frozen=True)
class StructuredQuery:
    id: str
    nouns: tuple[str, ...] = ()
    triplets: tuple[SpatialTriplet, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "nouns", tuple(self.nouns))
        object.__setattr__(self, "triplets", tuple(self.triplets))
        if not self.nouns and not self.triplets:
            raise ValueError("a structured query needs at least one term")

    @property
    def objects(self) -> tuple[str, ...]:
        """V_q: every noun mentioned, in order of first appearance."""
        seen: dict[str, None] = {}
        for t in self.triplets:
            seen.setdefault(t.subject)
            seen.setdefault(t.reference)
        for n in self.nouns:
            seen.setdefault(n)
        return tuple(seen)

    def serialize(self) -> str:
        return " & ".join([str(t) for t in self.triplets] + list(self.nouns))


def _unknown_relation(tokens: Sequence[str], lo: int, hi: int) -> str | None:
    """Candidate relation phrase around a marker word in tokens[lo:hi], if any."""
    for k in range(max(lo, 1), hi):
        if tokens[k] in RELATION_MARKERS:
            return " ".join(tokens[max(lo, k - 1) : k + 1])
    return None


def _parse_conjunct(text: str, index: int, lexicon: PrepositionLexicon):
    tokens = text.split()
    if not tokens:
        raise ParseError(f"conjunct {index}", "empty term")
    match = None
    for i in range(len(tokens)):
        m = lexicon.match_at(tokens, i)
        if m is not None:
            match = (i, *m)
            break
    if match is None:
        candidate = _unknown_relation(tokens, 0, len(tokens) - 1)
        if candidate is not None:
            raise UnknownPreposition(f"conjunct {index}: relation {candidate!r} not in lexicon")
        return " ".join(tokens)

    start, prep, width = match
    if start == 0:
        raise ParseError(f"conjunct {index}", f"missing subject before {prep!r}")
    if start + width >= len(tokens):
        raise ParseError(f"conjunct {index}", f"missing reference after {prep!r}")
    ref_tokens = tokens[start + width :]
    # "on top of table": the lexicon matched "on" but the relation continues.
    for k in (0, 1):
        if k < len(ref_tokens) - 1 and ref_tokens[k] in RELATION_MARKERS:
            phrase = " ".join([prep, *ref_tokens[: k + 1]])
            raise UnknownPreposition(f"conjunct {index}: relation {phrase!r} not in lexicon")
    for k in range(len(ref_tokens)):
        if lexicon.match_at(ref_tokens, k) is not None:
            raise ParseError(f"conjunct {index}", "more than one preposition in a term")
    return SpatialTriplet(" ".join(tokens[:start]), prep, " ".join(ref_tokens))


def parse_query(text: str, lexicon: PrepositionLexicon = DEFAULT_LEXICON, qid: str = "") -> StructuredQuery:
    """Parse the ``&``-separated textual form into a StructuredQuery.

    Prepositions are matched leftmost first, longest first at a position,
    so "boy in front of dog" never parses with "in".  Everything left of
    the preposition is the subject and everything right of it the reference.
    """
    text = normalize(text)
    if not text:
        raise ParseError("conjunct 0", "empty query")
    nouns, triplets = [], []
    for index, part in enumerate(text.split("&")):
        term = _parse_conjunct(part.strip(), index, lexicon)
        if isinstance(term, SpatialTriplet):
            triplets.append(term)
        else:
            nouns.append(term)
    return StructuredQuery(qid, tuple(nouns), tuple(triplets))


def validate_query(q: StructuredQuery, vocab: Iterable[str]) -> list[str]:
    vocab = set(vocab)
    return [f"noun {n!r} does not occur in the corpus vocabulary" for n in q.objects if n not in vocab]


def load_queries(path, lexicon: PrepositionLexicon = DEFAULT_LEXICON) -> list[StructuredQuery]:
    queries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError(f"line {lineno}", "expected 'ID<TAB>query'")
            qid, text = line.split("\t", 1)
            queries.append(parse_query(text, lexicon, qid=qid.strip()))
    return queries


def save_queries(queries: Iterable[StructuredQuery], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in queries:
            fh.write(f"{q.id}\t{q.serialize()}\n")
