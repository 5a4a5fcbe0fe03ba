"""Ingestion of newline-delimited JSON post dumps into a normalized corpus store.

A corpus store is a directory holding ``manifest.json`` (format name, version,
ingestion counters) and ``posts.jsonl`` (one normalized post per line).
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

logger = logging.getLogger(__name__)

CORPUS_FORMAT = "socialrag-corpus"
CORPUS_VERSION = 1

MANIFEST_NAME = "manifest.json"
POSTS_NAME = "posts.jsonl"

# Reddit dumps blank out text with these markers when a user or moderator deletes it.
DELETED_MARKERS = frozenset({"[deleted]", "[removed]", "[deleted by user]", "[removed by reddit]"})


class RecordError(ValueError):
    """A single input record could not be turned into a Post."""


class RecordParseError(RecordError):
    pass


class RecordSchemaError(RecordError):
    pass


class EmptyRecordError(RecordError):
    pass


class CorpusFormatError(Exception):
    """A corpus store on disk is missing, truncated or of an unknown version."""


@dataclass(frozen=True)
class Post:
    id: str
    title: str
    body: str
    created_utc: int
    subreddit: str = ""
    deleted: bool = False

    @property
    def text(self) -> str:
        """Title and body joined the way the pipeline reads a post."""
        if self.title and self.body:
            return f"{self.title}\n\n{self.body}"
        return self.title or self.body

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Post":
        return cls(
            id=d["id"],
            title=d.get("title", ""),
            body=d.get("body", ""),
            created_utc=int(d.get("created_utc", 0)),
            subreddit=d.get("subreddit", ""),
            deleted=bool(d.get("deleted", False)),
        )


@dataclass(frozen=True)
class CorpusFilter:
    keywords: Sequence[str] = ()
    time_range: Optional[tuple[int, int]] = None
    drop_deleted: bool = True

    def __post_init__(self):
        if self.time_range is not None:
            start, end = self.time_range
            if start > end:
                raise ValueError(f"time range start {start} is after end {end}")
        object.__setattr__(self, "keywords", tuple(k for k in self.keywords if k.strip()))

    def keyword_pattern(self) -> Optional[re.Pattern]:
        if not self.keywords:
            return None
        alternatives = "|".join(re.escape(k.strip()) for k in self.keywords)
        # \b misbehaves for keywords that start or end with punctuation, so use lookarounds.
        return re.compile(rf"(?<!\w)(?:{alternatives})(?!\w)", re.IGNORECASE)


@dataclass
class CorpusStats:
    total_read: int = 0
    kept: int = 0
    dropped_deleted: int = 0
    dropped_filter: int = 0
    dropped_malformed: int = 0
    # earlier records superseded by a later record with the same id
    dropped_duplicate: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_deleted + self.dropped_filter + self.dropped_malformed + self.dropped_duplicate

    def check(self) -> None:
        assert self.total_read == self.kept + self.dropped, f"counter invariant violated: {self}"

    def to_dict(self) -> dict:
        return asdict(self)


def _text_field(record: dict, *names: str) -> str:
    for name in names:
        value = record.get(name)
        if value is not None:
            if not isinstance(value, str):
                raise RecordSchemaError(f"field {name!r} must be a string")
            return value.strip()
    return ""


def parse_post_record(line: str) -> Post:
    """Parse one JSON line from a dump into a :class:`Post`.

    Accepts both submission (``title``/``selftext``) and comment (``body``)
    records. Deleted or removed text keeps its marker as the body and sets
    ``deleted``.
    """
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise RecordParseError(f"malformed JSON: {e}") from None
    if not isinstance(record, dict):
        raise RecordParseError("record is not a JSON object")

    post_id = record.get("id")
    if post_id is None or (isinstance(post_id, str) and not post_id.strip()):
        raise RecordSchemaError("record has no id")
    post_id = str(post_id).strip()

    title = _text_field(record, "title")
    body = _text_field(record, "selftext", "body")

    created = record.get("created_utc", 0)
    try:
        created_utc = int(float(created))
    except (TypeError, ValueError):
        raise RecordSchemaError(f"created_utc is not a number: {created!r}") from None
    if created_utc < 0:
        raise RecordSchemaError(f"created_utc is negative: {created_utc}")

    subreddit = record.get("subreddit") or ""
    deleted = bool(record.get("deleted", False)) or body in DELETED_MARKERS or title in DELETED_MARKERS

    if not title and not body:
        raise EmptyRecordError(f"record {post_id} has neither title nor body text")

    return Post(
        id=post_id,
        title=title,
        body=body,
        created_utc=created_utc,
        subreddit=str(subreddit),
        deleted=deleted,
    )


def post_passes_filters(post: Post, filt: CorpusFilter, _pattern: Optional[re.Pattern] = None) -> bool:
    if filt.drop_deleted and post.deleted:
        return False
    if filt.time_range is not None:
        start, end = filt.time_range
        if not start <= post.created_utc <= end:
            return False
    pattern = _pattern if _pattern is not None else filt.keyword_pattern()
    if pattern is not None:
        return bool(pattern.search(post.title) or pattern.search(post.body))
    return True


class CorpusStore:
    """An immutable, ordered collection of posts, optionally backed by a directory."""

    def __init__(self, posts: Iterable[Post], path: Optional[Path] = None, stats: Optional[CorpusStats] = None):
        self._posts = tuple(posts)
        self._by_id = {p.id: p for p in self._posts}
        if len(self._by_id) != len(self._posts):
            raise ValueError("corpus contains duplicate post ids")
        self.path = path
        self.stats = stats

    def __len__(self) -> int:
        return len(self._posts)

    def __iter__(self) -> Iterator[Post]:
        return iter(self._posts)

    def __getitem__(self, post_id: str) -> Post:
        return self._by_id[post_id]

    def __contains__(self, post_id: object) -> bool:
        return post_id in self._by_id

    @property
    def posts(self) -> tuple[Post, ...]:
        return self._posts

    def save(self, path: os.PathLike | str) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / POSTS_NAME, "w", encoding="utf-8", newline="\n") as f:
            for post in self._posts:
                f.write(json.dumps(post.to_dict(), ensure_ascii=False, sort_keys=True))
                f.write("\n")
        manifest = {
            "format": CORPUS_FORMAT,
            "version": CORPUS_VERSION,
            "num_posts": len(self._posts),
            "stats": self.stats.to_dict() if self.stats else None,
        }
        # manifest last: a store without one is treated as incomplete
        with open(path / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
        self.path = path
        return path


def load_corpus(path: os.PathLike | str) -> CorpusStore:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST_NAME).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorpusFormatError(f"{path} is not a corpus store (no {MANIFEST_NAME})") from None
    except json.JSONDecodeError as e:
        raise CorpusFormatError(f"corrupt corpus manifest: {e}") from None
    if manifest.get("format") != CORPUS_FORMAT or manifest.get("version") != CORPUS_VERSION:
        raise CorpusFormatError(
            f"unsupported corpus format {manifest.get('format')!r} version {manifest.get('version')!r}"
        )
    posts = []
    with open(path / POSTS_NAME, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            try:
                posts.append(Post.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as e:
                raise CorpusFormatError(f"{POSTS_NAME}:{lineno}: {e}") from None
    if len(posts) != manifest.get("num_posts"):
        raise CorpusFormatError(f"expected {manifest.get('num_posts')} posts, found {len(posts)}")
    stats = CorpusStats(**manifest["stats"]) if manifest.get("stats") else None
    return CorpusStore(posts, path=path, stats=stats)


def ingest_corpus(
    lines: Iterable[str],
    filt: CorpusFilter = CorpusFilter(),
    dest: Optional[os.PathLike | str] = None,
) -> tuple[CorpusStore, CorpusStats]:
    """Parse, filter and (optionally) persist a stream of dump lines.

    Malformed lines are skipped and counted. When two kept records share an
    id the later one replaces the earlier one in place and the earlier one is
    counted as ``dropped_duplicate``.
    """
    stats = CorpusStats()
    pattern = filt.keyword_pattern()
    kept: dict[str, Post] = {}
    for line in lines:
        stats.total_read += 1
        try:
            post = parse_post_record(line)
        except RecordError as e:
            stats.dropped_malformed += 1
            logger.debug("skipping line %d: %s", stats.total_read, e)
            continue
        if post.deleted and filt.drop_deleted:
            stats.dropped_deleted += 1
            continue
        if not post_passes_filters(post, filt, pattern):
            stats.dropped_filter += 1
            continue
        if post.id in kept:
            stats.dropped_duplicate += 1
            logger.warning("duplicate post id %s, keeping the later record", post.id)
        else:
            stats.kept += 1
        kept[post.id] = post

    stats.check()
    store = CorpusStore(kept.values(), stats=stats)
    if dest is not None:
        store.save(dest)
    return store, stats


def ingest_file(
    path: os.PathLike | str,
    filt: CorpusFilter = CorpusFilter(),
    dest: Optional[os.PathLike | str] = None,
) -> tuple[CorpusStore, CorpusStats]:
    with open(path, encoding="utf-8", errors="replace") as f:
        return ingest_corpus((line.rstrip("\r\n") for line in f), filt, dest)
