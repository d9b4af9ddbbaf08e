"""Tokenization, refinement operators and operator-structured queries."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

_SPLIT = re.compile(r"[\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it on every non-alphanumeric character."""
    return [tok for tok in _SPLIT.split(text.lower()) if tok]


class Op(str, enum.Enum):
    TERM = "term"    # disjunctive keyword
    PLUS = "plus"    # must contain
    MINUS = "minus"  # must not contain
    BOOST = "boost"  # weight term by a factor


# Canonical order used for tie-breaking between equally good refinements.
OP_ORDER = {Op.PLUS: 0, Op.TERM: 1, Op.BOOST: 2, Op.MINUS: 3}


def _format_factor(factor: float) -> str:
    return str(int(factor)) if float(factor).is_integer() else repr(float(factor))


@dataclass(frozen=True, order=False)
class Refinement:
    op: Op
    term: str
    boost: float = 1.0

    def __post_init__(self):
        if not isinstance(self.op, Op):
            object.__setattr__(self, "op", Op(self.op))
        if tokenize(self.term) != [self.term]:
            raise ValueError(f"refinement term must be a single token, got {self.term!r}")
        if self.op is Op.BOOST and not self.boost > 0:
            raise ValueError(f"boost factor must be positive, got {self.boost}")

    def __str__(self) -> str:
        if self.op is Op.PLUS:
            return "+" + self.term
        if self.op is Op.MINUS:
            return "-" + self.term
        if self.op is Op.BOOST:
            return f"{self.term}^{_format_factor(self.boost)}"
        return self.term


_BOOST_RE = re.compile(r"^(?P<term>.+)\^(?P<factor>[0-9]*\.?[0-9]+)$")


def parse_refinement(text: str) -> Optional[Refinement]:
    """Parse ``+w``, ``-w``, ``w^i`` or a bare ``w``; return None if unparseable."""
    text = text.strip().lower()
    if not text or any(ch.isspace() for ch in text):
        return None
    try:
        if text[0] == "+":
            return Refinement(Op.PLUS, text[1:])
        if text[0] == "-":
            return Refinement(Op.MINUS, text[1:])
        m = _BOOST_RE.match(text)
        if m:
            return Refinement(Op.BOOST, m.group("term"), float(m.group("factor")))
        return Refinement(Op.TERM, text)
    except ValueError:
        return None


@dataclass(frozen=True)
class StructuredQuery:
    """The original query text plus the ordered refinements applied to it.

    ``restrict_ids`` limits candidates to a fixed sub-collection of doc ids.
    Instances are immutable; refining returns a new query.
    """

    text: str
    refinements: tuple[Refinement, ...] = ()
    restrict_ids: Optional[frozenset] = field(default=None, compare=True)

    def __post_init__(self):
        if self.restrict_ids is not None:
            ids = frozenset(self.restrict_ids)
            if not ids:
                raise ValueError("restrict_ids must be non-empty when given")
            object.__setattr__(self, "restrict_ids", ids)
        object.__setattr__(self, "refinements", tuple(self.refinements))

    @property
    def base_terms(self) -> list[str]:
        return tokenize(self.text) + [r.term for r in self.refinements if r.op is Op.TERM]

    @property
    def clauses(self) -> list[Refinement]:
        return [r for r in self.refinements if r.op is not Op.TERM]

    def scoring_terms(self) -> list[tuple[str, float]]:
        """(term, weight) pairs that contribute to the BM25 sum."""
        terms = [(t, 1.0) for t in self.base_terms]
        for r in self.clauses:
            if r.op is Op.PLUS:
                terms.append((r.term, 1.0))
            elif r.op is Op.BOOST:
                terms.append((r.term, float(r.boost)))
        return terms

    def terms(self) -> set[str]:
        """Every term mentioned by the query, in any role."""
        return set(self.base_terms) | {r.term for r in self.clauses}

    def refine(self, refinement: Refinement) -> "StructuredQuery":
        return replace(self, refinements=self.refinements + (refinement,))

    def restrict(self, ids: Optional[Iterable[str]]) -> "StructuredQuery":
        return replace(self, restrict_ids=None if ids is None else frozenset(ids))

    def __str__(self) -> str:
        return " ".join([self.text, *map(str, self.refinements)]).strip()


def apply_refinement(query: StructuredQuery, refinement: Refinement) -> StructuredQuery:
    return query.refine(refinement)


def parse_query(text: str) -> StructuredQuery:
    """Parse a user query string, e.g. ``"weather germany +june -rain sun^2"``.

    Words carrying an operator become refinements; everything else is base text.
    """
    base, refinements = [], []
    for word in text.split():
        r = parse_refinement(word) if word[0] in "+-" or "^" in word else None
        if r is None:
            base.append(word)
        else:
            refinements.append(r)
    return StructuredQuery(" ".join(base), tuple(refinements))
