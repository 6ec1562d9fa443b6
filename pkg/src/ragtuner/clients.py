"""HTTP adapters for external embedding, critic, and generator backends.

Each client wraps one endpoint behind the same duck-typed interface the
hermetic test doubles implement, so the pipeline never knows whether a
model or a stub is answering. Requests retry with exponential backoff and
a hard per-request timeout; whatever still fails raises TransportError.

Wire formats (all JSON unless noted):

  embedder   POST <url>, body = raw UTF-8 text (Content-Type text/plain).
             Response: either a bare float array, or {"embedding": [...]}.
  critic     POST <url>, body {"model": ..., "prompt": ...}.
             Response {"text": ...}; the text is read as a yes/no verdict.
  generator  POST <url>, body {"model": ..., "prompt": ...}.
             Response {"text": ...}.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import requests

from .errors import SchemaError, ShapeError, TransportError
from .rerag.pipeline import build_prompt

__all__ = ["EndpointConfig", "HttpEmbedder", "HttpCritic", "HttpGenerator"]


@dataclass(frozen=True)
class EndpointConfig:
    """Where and how to reach one backend."""

    url: str
    model: str = ""
    api_key: str = ""
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5

    def headers(self) -> dict[str, str]:
        if self.api_key:
            return {"Authorization": f"Bearer {self.api_key}"}
        return {}


def _post_with_retries(cfg: EndpointConfig, *, json_body=None, data=None, headers=None):
    """POST once per attempt, sleeping backoff * 2^attempt between failures.

    Retries cover connection errors, timeouts, and 5xx responses. A 4xx
    response is the caller's fault and fails immediately.
    """
    merged = dict(cfg.headers())
    if headers:
        merged.update(headers)
    last: Exception | None = None
    for attempt in range(cfg.retries + 1):
        if attempt:
            time.sleep(cfg.backoff * 2 ** (attempt - 1))
        try:
            resp = requests.post(
                cfg.url, json=json_body, data=data, headers=merged, timeout=cfg.timeout
            )
        except requests.RequestException as exc:
            last = exc
            continue
        if resp.status_code >= 500:
            last = TransportError(f"{cfg.url} answered {resp.status_code}")
            continue
        if resp.status_code >= 400:
            raise TransportError(f"{cfg.url} rejected the request: {resp.status_code}")
        return resp
    raise TransportError(f"{cfg.url} unreachable after {cfg.retries + 1} attempts: {last}")


class HttpEmbedder:
    """Embedding client; enforces the dimension the index was built with."""

    def __init__(self, cfg: EndpointConfig, dim: int):
        if dim < 1:
            raise ShapeError(f"embedding dim must be >= 1, got {dim}")
        self.cfg = cfg
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        resp = _post_with_retries(
            self.cfg,
            data=text.encode("utf-8"),
            headers={"Content-Type": "text/plain; charset=utf-8"},
        )
        try:
            doc = resp.json()
        except ValueError as exc:
            raise SchemaError(f"embedder response is not JSON: {exc}") from exc
        if isinstance(doc, dict):
            doc = doc.get("embedding")
        if not isinstance(doc, list):
            raise SchemaError("embedder response must be a float array or {'embedding': [...]}")
        vec = np.asarray(doc, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ShapeError(f"endpoint returned {vec.shape[0]}-dim vector, expected {self.dim}")
        return vec


def _read_text_reply(resp, what: str) -> str:
    try:
        doc = resp.json()
    except ValueError as exc:
        raise SchemaError(f"{what} response is not JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("text"), str):
        raise SchemaError(f"{what} response must be an object with a 'text' string")
    return doc["text"]


class HttpCritic:
    """Yes/no critic speaking through prompt templates.

    Any reply other than yes or no (case-insensitive, punctuation ignored)
    counts as "no"; the odd reply is kept as a note and surfaces in the
    pipeline trace via drain_notes().
    """

    def __init__(self, cfg: EndpointConfig):
        self.cfg = cfg
        self._notes: list[str] = []

    def _verdict(self, prompt: str, label: str) -> bool:
        resp = _post_with_retries(self.cfg, json_body={"model": self.cfg.model, "prompt": prompt})
        reply = _read_text_reply(resp, "critic")
        word = reply.strip().strip(".,!?:;\"'").lower()
        if word == "yes":
            return True
        if word != "no":
            self._notes.append(f"critic {label}: unparseable reply {reply!r} treated as no")
        return False

    def needs_retrieval(self, question: str) -> bool:
        return self._verdict(build_prompt("critic_retrieve.v1", question=question), "retrieve")

    def is_relevant(self, question: str, passage: str) -> bool:
        prompt = build_prompt("critic_relevance.v1", question=question, passage=passage)
        return self._verdict(prompt, "relevance")

    def drain_notes(self) -> list[str]:
        notes, self._notes = self._notes, []
        return notes


class HttpGenerator:
    """Text generation client."""

    def __init__(self, cfg: EndpointConfig):
        self.cfg = cfg

    def generate(self, prompt: str) -> str:
        resp = _post_with_retries(self.cfg, json_body={"model": self.cfg.model, "prompt": prompt})
        return _read_text_reply(resp, "generator")
