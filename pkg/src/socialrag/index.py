"""Inverted index with Okapi BM25F ranking over post title and body fields."""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .corpus import Post

INDEX_FORMAT = "socialrag-index"
INDEX_VERSION = 1
DEFAULT_K = 50
DEFAULT_K1 = 1.2

FIELDS = ("title", "body")

_TOKEN_RE = re.compile(r"[^\W_]+")


class SearchIndexError(Exception):
    """Base class for index build and load failures."""


class EmptyCorpusError(SearchIndexError):
    pass


class IndexFormatError(SearchIndexError):
    pass


class UnknownDocumentError(KeyError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercased maximal runs of Unicode letters and digits."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class FieldConfig:
    name: str
    weight: float = 1.0
    b: float = 0.75

    def __post_init__(self):
        if self.name not in FIELDS:
            raise ValueError(f"unknown field {self.name!r}; expected one of {FIELDS}")
        if not self.weight > 0:
            raise ValueError(f"field weight must be positive, got {self.weight}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"length normalization b must lie in [0, 1], got {self.b}")


DEFAULT_FIELDS = (FieldConfig("title"), FieldConfig("body"))


@dataclass(frozen=True)
class RetrievalResult:
    doc_id: str
    score: float
    rank: int

    def to_dict(self) -> dict:
        return {"doc_id": self.doc_id, "score": self.score, "rank": self.rank}


class Index:
    """Immutable BM25F index. Build with :func:`build_index`.

    Postings map a term to ``(doc_number, tf_per_field)`` pairs; documents are
    numbered in ascending id order so that a doc number comparison doubles as
    the id tie-break.
    """

    def __init__(
        self,
        docs: Sequence[Post],
        postings: dict[str, list[tuple[int, tuple[int, ...]]]],
        field_lengths: list[tuple[int, ...]],
        fields: Sequence[FieldConfig] = DEFAULT_FIELDS,
        k1: float = DEFAULT_K1,
    ):
        if not k1 > 0:
            raise ValueError(f"k1 must be positive, got {k1}")
        self.docs = tuple(docs)
        self.doc_ids = tuple(d.id for d in self.docs)
        self._doc_number = {doc_id: i for i, doc_id in enumerate(self.doc_ids)}
        self.created_utc = tuple(d.created_utc for d in self.docs)
        self.postings = postings
        self.field_lengths = field_lengths
        self.fields = tuple(fields)
        self.k1 = k1
        self.N = len(self.docs)
        n = max(self.N, 1)
        self.avg_len = tuple(sum(lens[j] for lens in field_lengths) / n for j in range(len(self.fields)))
        self._idf = {t: self._compute_idf(len(p)) for t, p in postings.items()}

    def _compute_idf(self, df: int) -> float:
        return math.log((self.N - df + 0.5) / (df + 0.5) + 1.0)

    def idf(self, term: str) -> float:
        return self._idf.get(term, 0.0)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def document(self, doc_id: str) -> Post:
        try:
            return self.docs[self._doc_number[doc_id]]
        except KeyError:
            raise UnknownDocumentError(doc_id) from None

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self._doc_number

    def _pseudo_tf(self, doc: int, tfs: tuple[int, ...]) -> float:
        lens = self.field_lengths[doc]
        x = 0.0
        for j, fc in enumerate(self.fields):
            tf = tfs[j]
            if tf:
                x += fc.weight * tf / (1.0 - fc.b + fc.b * lens[j] / self.avg_len[j])
        return x

    def _term_contribution(self, term: str, doc: int, tfs: tuple[int, ...]) -> float:
        x = self._pseudo_tf(doc, tfs)
        return self._idf[term] * x / (self.k1 + x)

    def score(self, query_terms: Iterable[str], doc_id: str) -> float:
        if doc_id not in self._doc_number:
            raise UnknownDocumentError(doc_id)
        doc = self._doc_number[doc_id]
        total = 0.0
        for term in dict.fromkeys(query_terms):
            plist = self.postings.get(term, ())
            i = bisect_left(plist, (doc,))
            if i < len(plist) and plist[i][0] == doc:
                total += self._term_contribution(term, doc, plist[i][1])
        return total

    def search(
        self,
        query: str,
        k: int = DEFAULT_K,
        time_range: Optional[tuple[int, int]] = None,
    ) -> list[RetrievalResult]:
        if k < 1:
            raise ValueError(f"k must be at least 1, got {k}")
        terms = list(dict.fromkeys(tokenize(query)))
        if not terms:
            return []
        if time_range is not None:
            start, end = time_range
            created = self.created_utc

        scores: dict[int, float] = {}
        # terms in first-occurrence order, so each doc's sum is accumulated deterministically
        for term in terms:
            for doc, tfs in self.postings.get(term, ()):
                if time_range is not None and not start <= created[doc] <= end:
                    continue
                scores[doc] = scores.get(doc, 0.0) + self._term_contribution(term, doc, tfs)

        ranked = sorted((item for item in scores.items() if item[1] > 0), key=lambda item: (-item[1], item[0]))
        return [
            RetrievalResult(self.doc_ids[doc], score, rank)
            for rank, (doc, score) in enumerate(ranked[:k], 1)
        ]

    def check_invariants(self) -> None:
        assert self.N == len(self.doc_ids) == len(self.field_lengths)
        for term, plist in self.postings.items():
            for doc, tfs in plist:
                assert 0 <= doc < self.N, f"posting for {term!r} references missing doc {doc}"
                assert len(tfs) == len(self.fields)
        for j in range(len(self.fields)):
            mean = sum(lens[j] for lens in self.field_lengths) / self.N
            assert abs(mean - self.avg_len[j]) <= 1e-9


def build_index(
    corpus: Iterable[Post],
    fields: Sequence[FieldConfig] = DEFAULT_FIELDS,
    k1: float = DEFAULT_K1,
) -> Index:
    docs = sorted(corpus, key=lambda p: p.id)
    if not docs:
        raise EmptyCorpusError("cannot build an index over zero documents")
    names = [fc.name for fc in fields]
    if sorted(names) != sorted(FIELDS):
        raise ValueError(f"field configs must cover exactly {FIELDS}, got {names}")

    postings: dict[str, list[tuple[int, tuple[int, ...]]]] = {}
    field_lengths = []
    for doc, post in enumerate(docs):
        counts = [Counter(tokenize(getattr(post, fc.name))) for fc in fields]
        field_lengths.append(tuple(sum(c.values()) for c in counts))
        terms = dict.fromkeys(t for c in counts for t in c)
        for term in terms:
            postings.setdefault(term, []).append((doc, tuple(c.get(term, 0) for c in counts)))
    return Index(docs, postings, field_lengths, fields, k1)


def search(index: Index, query: str, k: int = DEFAULT_K, time_range: Optional[tuple[int, int]] = None):
    return index.search(query, k, time_range)


def bm25f_score(index: Index, query_terms: Iterable[str], doc_id: str) -> float:
    return index.score(query_terms, doc_id)


# On-disk layout: <dir>/manifest.json (format, version, checksum) + <dir>/index.json.

def save_index(index: Index, path: os.PathLike | str) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payload = {
        "k1": index.k1,
        "fields": [{"name": fc.name, "weight": fc.weight, "b": fc.b} for fc in index.fields],
        "docs": [d.to_dict() for d in index.docs],
        "field_lengths": [list(lens) for lens in index.field_lengths],
        "postings": {t: [[doc, list(tfs)] for doc, tfs in plist] for t, plist in sorted(index.postings.items())},
    }
    data = json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")
    manifest = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "num_docs": index.N,
        "sha256": hashlib.sha256(data).hexdigest(),
        "bytes": len(data),
    }
    (path / "index.json").write_bytes(data)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_index(path: os.PathLike | str) -> Index:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IndexFormatError(f"{path} is not an index directory (no manifest.json)") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise IndexFormatError(f"corrupt index manifest: {e}") from None
    if not isinstance(manifest, dict) or manifest.get("format") != INDEX_FORMAT:
        raise IndexFormatError(f"{path} does not hold a {INDEX_FORMAT} index")
    if manifest.get("version") != INDEX_VERSION:
        raise IndexFormatError(f"index version {manifest.get('version')!r} is not supported (expected {INDEX_VERSION})")

    try:
        data = (path / "index.json").read_bytes()
    except FileNotFoundError:
        raise IndexFormatError("index data file is missing") from None
    if len(data) != manifest.get("bytes") or hashlib.sha256(data).hexdigest() != manifest.get("sha256"):
        raise IndexFormatError("index data is truncated or corrupt (checksum mismatch)")
    payload = json.loads(data)

    docs = [Post.from_dict(d) for d in payload["docs"]]
    postings = {t: [(doc, tuple(tfs)) for doc, tfs in plist] for t, plist in payload["postings"].items()}
    fields = [FieldConfig(**fc) for fc in payload["fields"]]
    field_lengths = [tuple(lens) for lens in payload["field_lengths"]]
    index = Index(docs, postings, field_lengths, fields, payload["k1"])
    if index.N != manifest.get("num_docs"):
        raise IndexFormatError("document count does not match manifest")
    return index
