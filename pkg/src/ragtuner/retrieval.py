"""Corpus chunking, embedding, and exact Euclidean nearest-neighbor search.

The index is a deliberate linear scan: corpora here are desk-scale, and an
exact scan makes search results bit-reproducible and trivially checkable
against a brute-force oracle. Ties in distance are broken by ascending
chunk id, so results are independent of insertion order.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ConflictError, InputError, SchemaError, ShapeError
from .metrics import tokenize
from .numkit import RngStream, as_vector

__all__ = [
    "Chunk",
    "chunk_text",
    "VectorIndex",
    "HashEmbedder",
]

INDEX_SCHEMA = "ragtuner.index/1"

DEFAULT_CHUNK_WORDS = 100


@dataclass(frozen=True)
class Chunk:
    """One retrievable corpus piece: at most `max_words` whitespace words."""

    chunk_id: int
    doc_id: str
    text: str

    def __post_init__(self):
        if not self.text:
            raise InputError("chunk text must be non-empty")


def chunk_text(doc_id: str, text: str, max_words: int = DEFAULT_CHUNK_WORDS, start_id: int = 0) -> list[Chunk]:
    """Split a document into consecutive, non-overlapping word windows.

    Every word lands in exactly one chunk; the final chunk may be shorter.
    Chunk ids are assigned sequentially from ``start_id`` so that callers
    indexing several documents can keep ids globally unique.
    """
    if not text or not text.strip():
        raise InputError(f"document {doc_id!r} is empty")
    if max_words < 1:
        raise InputError(f"max_words must be >= 1, got {max_words}")
    words = text.split()
    chunks = []
    for offset, i in enumerate(range(0, len(words), max_words)):
        piece = " ".join(words[i : i + max_words])
        chunks.append(Chunk(chunk_id=start_id + offset, doc_id=doc_id, text=piece))
    return chunks


class VectorIndex:
    """Exact nearest-neighbor store over fixed-dimension embeddings.

    Entries are (chunk, vector) pairs under the Euclidean metric. One writer
    or many concurrent readers; a frozen index returns identical rankings for
    identical queries regardless of the order entries were inserted.
    """

    metric = "euclidean"

    def __init__(self, dim: int):
        if dim < 1:
            raise InputError(f"index dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self._chunks: dict[int, Chunk] = {}
        self._ids: list[int] = []
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None  # rebuilt lazily after inserts

    def __len__(self) -> int:
        return len(self._ids)

    def insert(self, chunk: Chunk, vector) -> None:
        vector = as_vector(vector, "vector")
        if vector.shape[0] != self.dim:
            raise ShapeError(
                f"vector dim {vector.shape[0]} does not match index dim {self.dim}"
            )
        if chunk.chunk_id in self._chunks:
            raise ConflictError(f"chunk id {chunk.chunk_id} already present")
        self._chunks[chunk.chunk_id] = chunk
        self._ids.append(chunk.chunk_id)
        self._rows.append(vector)
        self._matrix = None

    def chunk(self, chunk_id: int) -> Chunk:
        try:
            return self._chunks[chunk_id]
        except KeyError:
            raise InputError(f"no chunk with id {chunk_id}") from None

    def _stacked(self) -> tuple[np.ndarray, np.ndarray]:
        if self._matrix is None:
            self._matrix = np.vstack(self._rows)
        return np.asarray(self._ids), self._matrix

    def search(self, query, k: int) -> list[tuple[int, float]]:
        """Top-k entries by ascending Euclidean distance, ties by chunk id.

        Returns min(k, len(index)) results; an empty index yields an empty list.
        """
        query = as_vector(query, "query")
        if query.shape[0] != self.dim:
            raise ShapeError(
                f"query dim {query.shape[0]} does not match index dim {self.dim}"
            )
        if k < 1:
            raise InputError(f"k must be >= 1, got {k}")
        if not self._ids:
            return []
        ids, matrix = self._stacked()
        diffs = matrix - query
        distances = np.sqrt((diffs * diffs).sum(axis=1))
        order = np.lexsort((ids, distances))[: min(k, len(ids))]
        return [(int(ids[i]), float(distances[i])) for i in order]

    # -- persistence ---------------------------------------------------

    def save(self, path: str | os.PathLike) -> None:
        """Versioned JSON: header (dim, metric, count) then entries in insertion order."""
        doc = {
            "schema": INDEX_SCHEMA,
            "dim": self.dim,
            "metric": self.metric,
            "count": len(self._ids),
            "entries": [
                {
                    "chunk_id": cid,
                    "doc_id": self._chunks[cid].doc_id,
                    "text": self._chunks[cid].text,
                    "vector": row.tolist(),
                }
                for cid, row in zip(self._ids, self._rows)
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "VectorIndex":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("schema") != INDEX_SCHEMA:
            raise SchemaError(
                f"unsupported index schema {doc.get('schema')!r}, expected {INDEX_SCHEMA!r}"
            )
        if doc.get("metric") != cls.metric:
            raise SchemaError(f"unsupported metric {doc.get('metric')!r}")
        index = cls(dim=doc["dim"])
        for entry in doc.get("entries", []):
            try:
                chunk = Chunk(chunk_id=entry["chunk_id"], doc_id=entry["doc_id"], text=entry["text"])
                index.insert(chunk, entry["vector"])
            except KeyError as exc:
                raise SchemaError(f"index entry missing field {exc.args[0]!r}") from None
        if len(index) != doc.get("count"):
            raise SchemaError(
                f"index header count {doc.get('count')} does not match {len(index)} entries"
            )
        return index


@lru_cache(maxsize=65536)
def _token_vector(token: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big")
    vec = RngStream(seed).uniform(-1.0, 1.0, size=dim)
    vec = vec / np.linalg.norm(vec)
    vec.flags.writeable = False
    return vec


class HashEmbedder(BaseEstimator, TransformerMixin):
    """Hermetic test embedder: token-hash bag-of-words average, unit-normalized.

    Each token maps to a fixed pseudo-random unit vector derived from a
    sha256 hash of the token, so the same text always embeds to the same
    vector with no model download. Stateless: `fit` is a no-op and
    `transform` embeds a list of texts row by row, which lets the embedder
    slot into sklearn pipelines.
    """

    def __init__(self, dim: int = 32):
        self.dim = dim

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return np.vstack([self.embed(text) for text in X])

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if tokens:
            vec = np.mean([_token_vector(tok, self.dim) for tok in tokens], axis=0)
        else:
            # Token-free input (e.g. pure punctuation): hash the raw text so
            # the "same text, same vector" contract still holds.
            vec = _token_vector(text, self.dim)
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            # Token vectors cancelled each other out; fall back to the raw hash.
            vec = _token_vector(text, self.dim)
            norm = np.linalg.norm(vec)
        return vec / norm
