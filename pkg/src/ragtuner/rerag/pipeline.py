"""Retrieval-on-demand question answering.

The pipeline asks a critic whether a question needs external context at all.
If it does, chunks come back from a vector index and the critic screens each
one for relevance. When the first round produces nothing usable, the question
is condensed to key phrases and retrieval runs once more; after that the
pipeline either answers from the second-round chunks or falls back to the
original question without context. Every decision is recorded in a trace.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Protocol, runtime_checkable

import numpy as np
from sklearn.base import BaseEstimator

from ..errors import GenerationError, InputError, SchemaError
from ..metrics import tokenize
from ..retrieval import VectorIndex
from .rewrite import RewriteParams, STOPWORDS, extract_key_phrases

__all__ = [
    "PATHS",
    "Critic",
    "Generator",
    "ScriptedCritic",
    "KeywordOverlapCritic",
    "EchoGenerator",
    "PipelineTrace",
    "build_prompt",
    "run_pipeline",
    "ReragPipeline",
]

# Every run ends in exactly one of these.
PATHS = ("no_retrieval", "with_chunks", "rewrite_with_chunks", "fallback_original")


@runtime_checkable
class Critic(Protocol):
    def needs_retrieval(self, question: str) -> bool: ...

    def is_relevant(self, question: str, passage: str) -> bool: ...


@runtime_checkable
class Generator(Protocol):
    def generate(self, prompt: str) -> str: ...


class ScriptedCritic:
    """Critic that replays canned verdicts; exhausting the script is an error.

    Useful in tests where each branch of the pipeline must be forced
    deliberately rather than reached by luck.
    """

    def __init__(self, retrieve: bool, relevance: list[bool] | None = None):
        self.retrieve = retrieve
        self._relevance = list(relevance or [])

    def needs_retrieval(self, question: str) -> bool:
        return self.retrieve

    def is_relevant(self, question: str, passage: str) -> bool:
        if not self._relevance:
            raise InputError("scripted critic ran out of relevance verdicts")
        return self._relevance.pop(0)


class KeywordOverlapCritic:
    """Self-contained critic needing no model behind it.

    needs_retrieval hashes the question and fires on a fixed fraction of all
    distinct questions (default 0.7, mirroring how often supplementary
    context tends to help). is_relevant counts how many distinct content
    words of the question show up in the passage.
    """

    def __init__(self, retrieve_rate: float = 0.7, min_overlap: int = 2):
        if not 0.0 <= retrieve_rate <= 1.0:
            raise InputError(f"retrieve_rate must be in [0, 1], got {retrieve_rate}")
        if min_overlap < 1:
            raise InputError(f"min_overlap must be >= 1, got {min_overlap}")
        self.retrieve_rate = retrieve_rate
        self.min_overlap = min_overlap

    def needs_retrieval(self, question: str) -> bool:
        digest = hashlib.sha256(question.encode("utf-8")).digest()
        draw = int.from_bytes(digest[:8], "big") / 2**64
        return draw < self.retrieve_rate

    def is_relevant(self, question: str, passage: str) -> bool:
        content = {tok for tok in tokenize(question) if tok not in STOPWORDS}
        if not content:
            return False
        passage_tokens = set(tokenize(passage))
        return len(content & passage_tokens) >= self.min_overlap


class EchoGenerator:
    """Deterministic stand-in generator: answers by restating the question."""

    def generate(self, prompt: str) -> str:
        for line in reversed(prompt.splitlines()):
            if line.startswith("Question:"):
                return "You asked: " + line[len("Question:") :].strip()
        return prompt.strip()


@dataclass
class PipelineTrace:
    """Full record of one pipeline run, JSON round-trippable."""

    question: str
    retrieve_decision: bool = False
    index_queries: list[str] = field(default_factory=list)
    first_retrieval: list[dict] = field(default_factory=list)
    relevance_verdicts: list[dict] = field(default_factory=list)
    rewrite_phrases: list[str] | None = None
    second_retrieval: list[dict] | None = None
    second_verdicts: list[dict] | None = None
    final_path: str = ""
    final_prompt: str = ""
    answer: str | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "retrieve_decision": self.retrieve_decision,
            "index_queries": list(self.index_queries),
            "first_retrieval": [dict(h) for h in self.first_retrieval],
            "relevance_verdicts": [dict(v) for v in self.relevance_verdicts],
            "rewrite_phrases": None if self.rewrite_phrases is None else list(self.rewrite_phrases),
            "second_retrieval": None
            if self.second_retrieval is None
            else [dict(h) for h in self.second_retrieval],
            "second_verdicts": None
            if self.second_verdicts is None
            else [dict(v) for v in self.second_verdicts],
            "final_path": self.final_path,
            "final_prompt": self.final_prompt,
            "answer": self.answer,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PipelineTrace":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"trace is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError("trace document must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        missing = known - doc.keys()
        if missing:
            raise SchemaError(f"trace is missing fields: {sorted(missing)}")
        return cls(**{k: doc[k] for k in known})


def _hit_records(hits: list[tuple[int, float]]) -> list[dict]:
    return [{"chunk_id": cid, "distance": dist} for cid, dist in hits]


def build_prompt(template: str, **fields: str) -> str:
    """Render a bundled prompt template, e.g. build_prompt("answer_direct.v1", question=q)."""
    path = resources.files("ragtuner").joinpath("templates", f"{template}.txt")
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"unknown prompt template: {template!r}") from None
    try:
        return text.format(**fields)
    except KeyError as exc:
        raise InputError(f"template {template!r} needs field {exc.args[0]!r}") from None


def _screen_chunks(
    question: str, index: VectorIndex, hits: list[tuple[int, float]], critic: Critic
) -> tuple[list[str], list[dict]]:
    """Ask the critic about each retrieved chunk in order; keep the relevant texts.

    Relevance is always judged against the original question, one chunk at a
    time, even for chunks retrieved with a rewritten query.
    """
    kept: list[str] = []
    verdicts: list[dict] = []
    for chunk_id, _ in hits:
        chunk = index.chunk(chunk_id)
        relevant = bool(critic.is_relevant(question, chunk.text))
        verdicts.append({"chunk_id": chunk_id, "relevant": relevant})
        if relevant:
            kept.append(chunk.text)
    return kept, verdicts


def _finish(
    trace: PipelineTrace, path: str, prompt: str, generator: Generator, critic: Critic
) -> tuple[str, PipelineTrace]:
    trace.final_path = path
    trace.final_prompt = prompt
    for party in (critic, generator):
        drain = getattr(party, "drain_notes", None)
        if callable(drain):
            trace.notes.extend(drain())
    reply = generator.generate(prompt)
    if not reply or not reply.strip():
        raise GenerationError("generator returned an empty reply", trace=trace)
    trace.answer = reply
    return reply, trace


def run_pipeline(
    question: str,
    index: VectorIndex,
    critic: Critic,
    generator: Generator,
    embedder,
    params: RewriteParams | None = None,
    k: int = 5,
) -> tuple[str, PipelineTrace]:
    """Answer one question, retrieving and retrying only when needed.

    Returns (answer, trace). The trace records every retrieval, every critic
    verdict and the path taken; on generator failure the raised
    GenerationError carries the trace built so far.
    """
    if not question or not question.strip():
        raise InputError("question must be non-empty")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    params = params or RewriteParams()
    trace = PipelineTrace(question=question)

    trace.retrieve_decision = bool(critic.needs_retrieval(question))
    if not trace.retrieve_decision:
        prompt = build_prompt("answer_direct.v1", question=question)
        return _finish(trace, "no_retrieval", prompt, generator, critic)

    trace.index_queries.append("question")
    hits = index.search(embedder.embed(question), k)
    trace.first_retrieval = _hit_records(hits)
    if not hits:
        trace.notes.append("first retrieval returned no chunks")
    kept, trace.relevance_verdicts = _screen_chunks(question, index, hits, critic)
    if kept:
        prompt = build_prompt(
            "answer_with_context.v1", context="\n\n".join(kept), question=question
        )
        return _finish(trace, "with_chunks", prompt, generator, critic)

    # One rewrite attempt: condense the question, query with the mean of the
    # phrase embeddings, screen again. No further retries after this.
    phrases = extract_key_phrases(question, embedder, params)
    trace.rewrite_phrases = phrases
    if not phrases:
        trace.notes.append("no key phrases extracted; answering from the original question")
        prompt = build_prompt("answer_direct.v1", question=question)
        return _finish(trace, "fallback_original", prompt, generator, critic)

    query = np.mean(np.stack([embedder.embed(p) for p in phrases]), axis=0)
    trace.index_queries.append("phrase_mean")
    second_hits = index.search(query, k)
    trace.second_retrieval = _hit_records(second_hits)
    kept, trace.second_verdicts = _screen_chunks(question, index, second_hits, critic)
    if kept:
        prompt = build_prompt(
            "answer_with_context.v1", context="\n\n".join(kept), question=question
        )
        return _finish(trace, "rewrite_with_chunks", prompt, generator, critic)

    prompt = build_prompt("answer_direct.v1", question=question)
    return _finish(trace, "fallback_original", prompt, generator, critic)


class ReragPipeline(BaseEstimator):
    """Estimator-flavored wrapper so the pipeline plugs into sklearn tooling.

    Construction wires the collaborators; answer() handles one question,
    predict() maps over a sequence of them. The trace of the most recent
    run is kept on `last_trace_`.
    """

    def __init__(
        self,
        index: VectorIndex,
        critic: Critic,
        generator: Generator,
        embedder,
        params: RewriteParams | None = None,
        k: int = 5,
    ):
        self.index = index
        self.critic = critic
        self.generator = generator
        self.embedder = embedder
        self.params = params
        self.k = k

    def answer(self, question: str) -> str:
        reply, trace = run_pipeline(
            question,
            self.index,
            self.critic,
            self.generator,
            self.embedder,
            params=self.params,
            k=self.k,
        )
        self.last_trace_ = trace
        return reply

    def predict(self, questions) -> list[str]:
        return [self.answer(q) for q in questions]
