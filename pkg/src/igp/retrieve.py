"""First-stage BM25 retrieval: analyzer, inverted index, persistence, search.

The analyzer lowercases and splits on non-alphanumeric runs, with an optional
stopword list; no stemming. Scoring is Okapi BM25 with the non-negative
log(1 + ...) idf variant and defaults k1=0.9, b=0.4. Results are totally
ordered (score descending, passage id ascending on ties), so rankings do not
depend on corpus ingestion order.

The index is immutable after construction: concurrent searches are safe.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .core import CandidateSet, Passage

_TOKEN_RE = re.compile(r"[0-9a-z]+")

_INDEX_FORMAT = "bm25-index"
_INDEX_VERSION = 1


class IndexFormatError(ValueError):
    """Persisted index is unreadable or was built by an incompatible analyzer."""


@dataclass(frozen=True)
class Analyzer:
    stopwords: frozenset[str] = frozenset()

    def tokens(self, text: str) -> list[str]:
        toks = _TOKEN_RE.findall(text.lower())
        if self.stopwords:
            toks = [t for t in toks if t not in self.stopwords]
        return toks

    @property
    def fingerprint(self) -> str:
        recipe = "lower-nonalnum-v1|" + ",".join(sorted(self.stopwords))
        return hashlib.sha256(recipe.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4
    top_n: int = 5

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


@dataclass(frozen=True)
class InvertedIndex:
    """Postings map term -> ((doc ordinal, term frequency), ...) sorted by
    ordinal; ids and texts are indexed by ordinal."""

    postings: dict[str, tuple[tuple[int, int], ...]]
    doc_lengths: tuple[int, ...]
    avg_doc_length: float
    doc_count: int
    ids: tuple[str, ...]
    texts: tuple[str, ...]
    analyzer: Analyzer


def build_index(corpus: Iterable[Passage], analyzer: Analyzer = Analyzer()) -> InvertedIndex:
    """Index a passage stream. Raises on duplicate ids or an empty corpus."""
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    ids: list[str] = []
    texts: list[str] = []
    seen: set[str] = set()
    for ordinal, passage in enumerate(corpus):
        if passage.id in seen:
            raise ValueError(f"duplicate passage id {passage.id!r}")
        seen.add(passage.id)
        ids.append(passage.id)
        texts.append(passage.text)
        toks = analyzer.tokens(passage.text)
        doc_lengths.append(len(toks))
        counts: dict[str, int] = {}
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((ordinal, tf))
    if not ids:
        raise ValueError("corpus is empty")
    return InvertedIndex(
        postings={t: tuple(plist) for t, plist in postings.items()},
        doc_lengths=tuple(doc_lengths),
        avg_doc_length=math.fsum(doc_lengths) / len(doc_lengths),
        doc_count=len(ids),
        ids=tuple(ids),
        texts=tuple(texts),
        analyzer=analyzer,
    )


def idf(doc_count: int, doc_freq: int) -> float:
    return math.log(1.0 + (doc_count - doc_freq + 0.5) / (doc_freq + 0.5))


def search(
    index: InvertedIndex,
    query_text: str,
    params: Bm25Params = Bm25Params(),
    query_id: str = "",
) -> CandidateSet:
    """Top-n passages by BM25 score, descending, ties broken by id ascending.

    A query whose terms match nothing returns an empty candidate list.
    """
    if index.doc_count == 0:
        raise ValueError("index is empty")
    terms = index.analyzer.tokens(query_text)
    qtf: dict[str, int] = {}
    for t in terms:
        qtf[t] = qtf.get(t, 0) + 1
    scores: dict[int, float] = {}
    for term, count in qtf.items():
        plist = index.postings.get(term)
        if not plist:
            continue
        term_idf = idf(index.doc_count, len(plist))
        for ordinal, tf in plist:
            dl = index.doc_lengths[ordinal]
            norm = tf + params.k1 * (1.0 - params.b + params.b * dl / index.avg_doc_length)
            contribution = term_idf * tf * (params.k1 + 1.0) / norm
            scores[ordinal] = scores.get(ordinal, 0.0) + count * contribution
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], index.ids[kv[0]]))
    top = ranked[: params.top_n]
    return CandidateSet(
        query_id=query_id,
        candidates=tuple(
            (Passage(index.ids[o], index.texts[o]), s) for o, s in top
        ),
    )


def save_index(index: InvertedIndex, path: str | Path) -> None:
    """Persist the index as deterministic gzip-compressed JSON: rebuilding
    from the same corpus yields byte-identical files."""
    payload = {
        "format": _INDEX_FORMAT,
        "version": _INDEX_VERSION,
        "analyzer": {
            "fingerprint": index.analyzer.fingerprint,
            "stopwords": sorted(index.analyzer.stopwords),
        },
        "doc_count": index.doc_count,
        "avg_doc_length": index.avg_doc_length,
        "doc_lengths": list(index.doc_lengths),
        "ids": list(index.ids),
        "texts": list(index.texts),
        "postings": {t: [list(p) for p in plist] for t, plist in index.postings.items()},
    }
    encoded = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        # filename="" and mtime=0 keep the gzip header content-independent,
        # so identical corpora produce byte-identical index files.
        with gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
            gz.write(encoded)


def load_index(path: str | Path) -> InvertedIndex:
    try:
        with gzip.open(path, "rb") as gz:
            payload = json.loads(gz.read().decode("utf-8"))
    except (OSError, ValueError) as exc:
        raise IndexFormatError(f"cannot read index file {path}: {exc}") from exc
    if payload.get("format") != _INDEX_FORMAT:
        raise IndexFormatError(f"{path} is not a {_INDEX_FORMAT} file")
    if payload.get("version") != _INDEX_VERSION:
        raise IndexFormatError(
            f"index version {payload.get('version')} unsupported "
            f"(expected {_INDEX_VERSION})"
        )
    analyzer = Analyzer(stopwords=frozenset(payload["analyzer"]["stopwords"]))
    if analyzer.fingerprint != payload["analyzer"]["fingerprint"]:
        raise IndexFormatError(
            "analyzer fingerprint mismatch: index was built with an "
            "incompatible analyzer"
        )
    return InvertedIndex(
        postings={
            t: tuple((int(o), int(tf)) for o, tf in plist)
            for t, plist in payload["postings"].items()
        },
        doc_lengths=tuple(payload["doc_lengths"]),
        avg_doc_length=float(payload["avg_doc_length"]),
        doc_count=int(payload["doc_count"]),
        ids=tuple(payload["ids"]),
        texts=tuple(payload["texts"]),
        analyzer=analyzer,
    )
