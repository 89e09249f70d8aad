"""Corpus ingestion and exact cosine retrieval.

Documents are cut into disjoint fixed-size token windows, embedded with a
pluggable embedder, L2-normalised and stored row-major as float32. Search
is an exhaustive scan; ties are broken by ascending chunk id.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmbedderError, IndexBuildError, IngestionError, InvalidArgument, LoadError, QueryError

DEFAULT_CHUNK_SIZE = 512
MANIFEST = "manifest.json"
VECTORS = "vectors.bin"
CHUNKS = "chunks.jsonl"


@dataclass(frozen=True)
class SourceDocument:
    doc_id: str
    body: str
    title: str | None = None
    source_tag: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "SourceDocument":
        return cls(str(d["doc_id"]), d["body"], d.get("title"), d.get("source_tag", ""))


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    text: str
    token_count: int
    ordinal: int
    doc_id: str = ""


@dataclass(frozen=True)
class IndexEntry:
    chunk_id: str
    vector: np.ndarray
    text: str = ""


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    similarity: float
    text: str


class RegexTokenizer:
    """Whitespace-and-punctuation segmenter.

    Each token carries its leading whitespace, so joining the tokens gives
    back the input exactly.
    """

    name = "regex-ws-punct-v1"
    _pattern = re.compile(r"\s*(?:\w+|[^\w\s])|\s+")

    def __call__(self, text: str) -> list[str]:
        return self._pattern.findall(text)


def chunk_id_for(doc_id: str, ordinal: int) -> str:
    return f"{doc_id}#{ordinal:05d}"


def chunk_document(
    d: SourceDocument,
    tokenizer: Callable[[str], list[str]] | None = None,
    size: int = DEFAULT_CHUNK_SIZE,
) -> list[Chunk]:
    if size < 1:
        raise InvalidArgument("chunk size must be >= 1")
    tokenizer = tokenizer or RegexTokenizer()
    if not d.body:
        return []
    tokens = tokenizer(d.body)
    if "".join(tokens) != d.body:
        raise IngestionError(f"{d.doc_id}: tokenizer does not round-trip the body")
    chunks = []
    for ordinal, start in enumerate(range(0, len(tokens), size)):
        window = tokens[start : start + size]
        chunks.append(
            Chunk(chunk_id_for(d.doc_id, ordinal), "".join(window), len(window), ordinal, d.doc_id)
        )
    return chunks


class HashingEmbedder:
    """Term-frequency vector with words hashed into ``dim`` buckets.

    Deterministic across processes (blake2b, not ``hash()``). Meant for
    tests and toy corpora, not for semantic search.
    """

    _word = re.compile(r"\w+")

    def __init__(self, dim: int = 64):
        self.dim = dim
        self.name = f"hashing-tf-{dim}"

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for word in self._word.findall(text.lower()):
            h = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
            vec[int.from_bytes(h, "little") % self.dim] += 1.0
        return vec


def make_embedder(name: str):
    """Rebuild an embedder from the id stored in an index manifest."""
    m = re.fullmatch(r"hashing-tf-(\d+)", name)
    if m:
        return HashingEmbedder(int(m.group(1)))
    raise EmbedderError(f"unknown embedder {name!r}")


def normalize(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise EmbedderError("cannot normalise a zero or non-finite vector")
    return v / norm


def embed(texts: Sequence[str], embedder: Callable[[str], Sequence[float]]) -> list[np.ndarray]:
    out = []
    dim = None
    for text in texts:
        v = np.asarray(embedder(text), dtype=np.float64)
        if v.ndim != 1:
            raise EmbedderError("embedder must return a 1-D vector")
        if dim is None:
            dim = v.shape[0]
        elif v.shape[0] != dim:
            raise EmbedderError(f"embedder returned dimension {v.shape[0]}, expected {dim}")
        out.append(normalize(v))
    return out


class VectorIndex:
    """Build-then-read exact index. Not safe to mutate after construction."""

    def __init__(
        self,
        chunk_ids: Sequence[str],
        vectors: np.ndarray,
        texts: Sequence[str],
        *,
        dim: int | None = None,
        meta: dict | None = None,
    ):
        vectors = np.asarray(vectors, dtype="<f4")
        if vectors.ndim != 2:
            if len(chunk_ids) == 0 and dim is not None:
                vectors = np.zeros((0, dim), dtype="<f4")
            else:
                raise IndexBuildError("vectors must be a 2-D array")
        if len(chunk_ids) != vectors.shape[0] or len(texts) != vectors.shape[0]:
            raise IndexBuildError("chunk ids, vectors and texts differ in length")
        seen = set()
        for cid in chunk_ids:
            if cid in seen:
                raise IndexBuildError(f"duplicate chunk_id {cid!r}")
            seen.add(cid)
        self.chunk_ids = list(chunk_ids)
        self.texts = list(texts)
        self.vectors = np.ascontiguousarray(vectors)
        self.vectors.setflags(write=False)
        self.dim = int(vectors.shape[1]) if dim is None else dim
        self.meta = dict(meta or {})
        self._id_rank = np.empty(len(self.chunk_ids), dtype=np.int64)
        if self.chunk_ids:
            self._id_rank[np.argsort(np.array(self.chunk_ids), kind="stable")] = np.arange(len(self.chunk_ids))

    def __len__(self) -> int:
        return len(self.chunk_ids)

    def search(self, query_vector, k: int = 1) -> list[RetrievalHit]:
        if k < 1:
            raise QueryError("k must be >= 1")
        q = np.asarray(query_vector, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self.dim:
            raise QueryError(f"query dimension {q.shape} does not match index dimension {self.dim}")
        if not len(self):
            return []
        # row-wise sum rather than BLAS gemv: identical rows must score
        # identically for the chunk_id tie-break to be meaningful
        sims = np.clip((self.vectors.astype(np.float64) * q).sum(axis=1), -1.0, 1.0)
        # lexsort: last key is primary
        order = np.lexsort((self._id_rank, -sims))[: min(k, len(self))]
        return [RetrievalHit(self.chunk_ids[i], float(sims[i]), self.texts[i]) for i in order]

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            **self.meta,
            "dimension": self.dim,
            "count": len(self),
            "vector_layout": "row-major little-endian float32",
        }
        (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        (out / VECTORS).write_bytes(self.vectors.astype("<f4").tobytes(order="C"))
        with open(out / CHUNKS, "w", encoding="utf-8") as fh:
            for cid, text in zip(self.chunk_ids, self.texts):
                fh.write(json.dumps({"chunk_id": cid, "text": text}, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, in_dir: str | Path) -> "VectorIndex":
        src = Path(in_dir)
        try:
            manifest = json.loads((src / MANIFEST).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise LoadError(f"{src}: no {MANIFEST}") from exc
        dim, count = int(manifest["dimension"]), int(manifest["count"])
        blob = np.frombuffer((src / VECTORS).read_bytes(), dtype="<f4")
        if blob.size != dim * count:
            raise LoadError(f"{src}: vector blob holds {blob.size} floats, expected {dim * count}")
        ids, texts = [], []
        with open(src / CHUNKS, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    ids.append(row["chunk_id"])
                    texts.append(row["text"])
        meta = {k: v for k, v in manifest.items() if k not in ("dimension", "count", "vector_layout")}
        return cls(ids, blob.reshape(count, dim), texts, dim=dim, meta=meta)


def index_build(entries: Sequence[IndexEntry], dim: int | None = None, meta: dict | None = None) -> VectorIndex:
    if not entries:
        if dim is None:
            raise IndexBuildError("empty index needs an explicit dimension")
        return VectorIndex([], np.zeros((0, dim)), [], dim=dim, meta=meta)
    dims = {np.asarray(e.vector).shape for e in entries}
    if len(dims) != 1:
        raise IndexBuildError(f"mixed vector shapes {sorted(dims)}")
    vectors = np.stack([np.asarray(e.vector, dtype=np.float64) for e in entries])
    return VectorIndex([e.chunk_id for e in entries], vectors, [e.text for e in entries], meta=meta)


def search(index: VectorIndex, query_vector, k: int = 1) -> list[RetrievalHit]:
    return index.search(query_vector, k)


def load_corpus(path: str | Path) -> list[SourceDocument]:
    docs, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = SourceDocument.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise LoadError(f"{path}: line {lineno}: {exc}", line=lineno) from exc
            if doc.doc_id in seen:
                raise LoadError(f"{path}: line {lineno}: duplicate doc_id {doc.doc_id!r}", line=lineno)
            seen.add(doc.doc_id)
            docs.append(doc)
    return docs


def build_index(
    docs: Iterable[SourceDocument],
    *,
    embedder=None,
    tokenizer=None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    include_title: bool = False,
) -> VectorIndex:
    """Chunk, embed and index a corpus. Titles are only embedded when asked."""
    embedder = embedder or HashingEmbedder()
    tokenizer = tokenizer or RegexTokenizer()
    chunks = [c for d in docs for c in _chunks_with_title(d, tokenizer, chunk_size, include_title)]
    vectors = embed([c.text for c in chunks], embedder)
    meta = {
        "tokenizer": getattr(tokenizer, "name", type(tokenizer).__name__),
        "embedder": getattr(embedder, "name", type(embedder).__name__),
        "chunk_size": chunk_size,
        "include_title": include_title,
    }
    entries = [IndexEntry(c.chunk_id, v, c.text) for c, v in zip(chunks, vectors)]
    dim = getattr(embedder, "dim", None)
    return index_build(entries, dim=dim, meta=meta)


def _chunks_with_title(d, tokenizer, size, include_title):
    chunks = chunk_document(d, tokenizer, size)
    if include_title and d.title:
        return [Chunk(c.chunk_id, f"{d.title}\n{c.text}", c.token_count, c.ordinal, c.doc_id) for c in chunks]
    return chunks
