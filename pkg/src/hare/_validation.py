"""Small argument-checking helpers shared by the estimators."""

from __future__ import annotations

import numbers


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return int(value)


def check_in(value, choices, name: str):
    if value not in choices:
        raise ValueError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value


def check_query(query):
    """Plain strings become operator-free queries; use ``parse_query`` for operator syntax."""
    from .query import StructuredQuery

    if isinstance(query, StructuredQuery):
        return query
    if isinstance(query, str):
        return StructuredQuery(query)
    raise TypeError(f"expected str or StructuredQuery, got {type(query).__name__}")


def check_corpus(documents):
    from .corpus import Corpus

    if isinstance(documents, Corpus):
        return documents
    return Corpus(documents)
