"""Documents, corpora and ranked result entries."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Union

from .query import tokenize


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: Optional[str] = None
    tokens: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.doc_id, str) or not self.doc_id:
            raise ValueError(f"doc_id must be a non-empty string, got {self.doc_id!r}")
        object.__setattr__(self, "tokens", tuple(tokenize(self.content)))

    @property
    def content(self) -> str:
        """Title and text joined into the single indexed field."""
        return f"{self.title} {self.text}" if self.title else self.text

    @property
    def length(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Document":
        doc_id = obj.get("_id", obj.get("doc_id"))
        return cls(str(doc_id) if doc_id is not None else "", obj.get("text") or "", obj.get("title") or None)

    def to_dict(self) -> dict:
        return {"_id": self.doc_id, "title": self.title or "", "text": self.text}


class Corpus(Mapping[str, Document]):
    """An immutable doc_id -> Document mapping iterated in ascending doc_id order."""

    def __init__(self, documents: Iterable[Union[Document, Mapping]] = ()):
        docs: dict[str, Document] = {}
        for doc in documents:
            if not isinstance(doc, Document):
                doc = Document.from_dict(doc)
            if doc.doc_id in docs:
                raise ValueError(f"duplicate doc_id: {doc.doc_id!r}")
            docs[doc.doc_id] = doc
        self._ids = sorted(docs)
        self._docs = docs

    def __getitem__(self, doc_id: str) -> Document:
        return self._docs[doc_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._ids)

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def documents(self) -> Iterator[Document]:
        for doc_id in self._ids:
            yield self._docs[doc_id]

    @classmethod
    def from_jsonl(cls, path) -> "Corpus":
        return cls(read_jsonl_documents(path))

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for doc in self.documents():
                fh.write(json.dumps(doc.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl_documents(path) -> Iterator[Document]:
    """Stream documents from a BEIR-style ``corpus.jsonl`` (``_id``, ``title``, ``text``)."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            yield Document.from_dict(obj)


def read_queries(path) -> dict[str, str]:
    """Read queries as qid -> text from BEIR ``queries.jsonl`` or a ``qid<TAB>text`` file."""
    path = Path(path)
    queries: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.lstrip().startswith("{"):
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
                queries[str(obj["_id"])] = obj["text"]
            else:
                qid, sep, text = line.partition("\t")
                if not sep:
                    raise ValueError(f"{path}:{lineno}: expected 'qid<TAB>text'")
                queries[qid] = text
    return queries


def write_queries(queries: Mapping[str, str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(queries):
            fh.write(json.dumps({"_id": qid, "text": queries[qid]}, ensure_ascii=False) + "\n")


class Source(str, enum.Enum):
    SPARSE = "sparse"
    DENSE = "dense"


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float
    source: Source
    original_depth: Optional[int] = None  # 1-based rank for the original query; None if unknown

    def with_score(self, score: float) -> "ScoredDoc":
        return ScoredDoc(self.doc_id, float(score), self.source, self.original_depth)
