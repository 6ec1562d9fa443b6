"""Key-phrase extraction for the retrieval retry.

When a first retrieval round yields nothing relevant, the question is boiled
down to a handful of key phrases and the index is queried again. Selection
runs in four steps: candidate n-grams are ranked by cosine similarity to the
whole question, the surviving candidate vectors are min-max normalized per
dimension so every dimension contributes proportionally to Euclidean
distance, and the candidates with the largest pairwise distance sums are
kept, favoring a diverse set of phrases over near-duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, ShapeError, UndefinedSimilarityError
from ..metrics import tokenize
from ..numkit import as_vector

__all__ = [
    "STOPWORDS",
    "RewriteParams",
    "cosine_similarity",
    "minmax_normalize",
    "euclidean_distance",
    "diversity_sum",
    "extract_key_phrases",
]

# Fixed English stopword list; bundled so tests never depend on external data.
STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are aren arent as at
    be because been before being below between both but by can cannot could
    couldnt did didnt do does doesnt doing dont down during each few for from
    further had hadnt has hasnt have havent having he her here hers herself
    him himself his how i if in into is isnt it its itself just me more most
    my myself no nor not of off on once only or other ought our ours
    ourselves out over own same shant she should shouldnt so some such than
    that the their theirs them themselves then there these they this those
    through to too under until up very was wasnt we were werent what when
    where which while who whom why will with wont would wouldnt you your
    yours yourself yourselves
    """.split()
)


@dataclass(frozen=True)
class RewriteParams:
    """Knobs of the rewrite step.

    max_ngram: longest candidate phrase, in words.
    top_k_similar: candidates kept after the similarity ranking.
    num_phrases: phrases finally returned (m).
    norm_range: (a, b) target interval of the per-dimension normalization.
    stopwords: words excluded from candidate phrases.
    """

    max_ngram: int = 3
    top_k_similar: int = 10
    num_phrases: int = 3
    norm_range: tuple[float, float] = (0.0, 1.0)
    stopwords: frozenset[str] = field(default=STOPWORDS)

    def __post_init__(self):
        if self.max_ngram < 1:
            raise InputError(f"max_ngram must be >= 1, got {self.max_ngram}")
        if not 1 <= self.num_phrases <= self.top_k_similar:
            raise InputError(
                f"need 1 <= num_phrases <= top_k_similar, got "
                f"num_phrases={self.num_phrases}, top_k_similar={self.top_k_similar}"
            )
        a, b = self.norm_range
        if not a < b:
            raise InputError(f"norm_range requires a < b, got ({a}, {b})")


def cosine_similarity(v, w) -> float:
    """v.w / (|v| |w|); undefined (and an error) for zero vectors."""
    v = as_vector(v, "v")
    w = as_vector(w, "w")
    if v.shape != w.shape:
        raise ShapeError(f"vector shapes differ: {v.shape} vs {w.shape}")
    nv = np.linalg.norm(v)
    nw = np.linalg.norm(w)
    if nv == 0.0 or nw == 0.0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    # rounding in dot/norm can push |result| past 1 for (anti)parallel vectors
    return float(np.clip(np.dot(v, w) / (nv * nw), -1.0, 1.0))


def minmax_normalize(candidates, a: float = 0.0, b: float = 1.0) -> np.ndarray:
    """Per-dimension min-max rescaling of a candidate set onto [a, b].

    x' = a + (x - min)(b - a) / (max - min), computed per dimension across
    the set; a dimension that is constant over all candidates maps to a.
    """
    if not a < b:
        raise InputError(f"normalization range requires a < b, got ({a}, {b})")
    arr = np.asarray(candidates, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"candidate set must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise InputError(f"need at least 2 candidates to normalize, got {arr.shape[0]}")
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    span = hi - lo
    constant = span == 0.0
    span = np.where(constant, 1.0, span)
    # Convex combination instead of a + (x-lo)(b-a)/span: t is exactly 0 at
    # the column minimum and exactly 1 at the maximum, so the endpoints map
    # to a and b with no rounding slack; the clip guards the interior.
    t = (arr - lo) / span
    out = np.clip((1.0 - t) * a + t * b, a, b)
    out[:, constant] = a
    return out


def euclidean_distance(x1, x2) -> float:
    """sqrt(sum_i (x1_i - x2_i)^2)."""
    x1 = as_vector(x1, "x1")
    x2 = as_vector(x2, "x2")
    if x1.shape != x2.shape:
        raise ShapeError(f"vector shapes differ: {x1.shape} vs {x2.shape}")
    return float(np.linalg.norm(x1 - x2))


def diversity_sum(i: int, candidates) -> float:
    """Sum of distances from candidate i to every candidate in the set.

    The self-distance contributes 0; larger sums mean the candidate sits
    farther from the rest of the set.
    """
    arr = np.asarray(candidates, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"candidate set must be 2-D, got shape {arr.shape}")
    if not 0 <= i < arr.shape[0]:
        raise InputError(f"candidate index {i} out of range for {arr.shape[0]} candidates")
    diffs = arr - arr[i]
    return float(np.sqrt((diffs * diffs).sum(axis=1)).sum())


def _candidate_ngrams(question: str, params: RewriteParams) -> list[tuple[str, int]]:
    """Stopword-free contiguous n-grams with their first token position."""
    tokens = tokenize(question)
    seen: dict[str, int] = {}
    for n in range(1, params.max_ngram + 1):
        for i in range(len(tokens) - n + 1):
            gram = tokens[i : i + n]
            if any(tok in params.stopwords for tok in gram):
                continue
            phrase = " ".join(gram)
            if phrase not in seen:
                seen[phrase] = i
    return sorted(seen.items(), key=lambda item: (item[1], item[0]))


def extract_key_phrases(question: str, embedder, params: RewriteParams | None = None) -> list[str]:
    """Select up to `num_phrases` diverse phrases that represent the question.

    Steps: build stopword-filtered n-gram candidates; embed question and
    candidates; keep the `top_k_similar` most cosine-similar candidates;
    min-max normalize the kept vectors; rank by pairwise distance sum and
    return the largest, ties broken by earlier position in the question.

    Returns an empty list when no candidate survives stopword filtering;
    the pipeline falls back to the original question in that case.
    """
    if not question:
        raise InputError("question must be non-empty")
    params = params or RewriteParams()

    candidates = _candidate_ngrams(question, params)
    if not candidates:
        return []

    question_vec = embedder.embed(question)
    phrases = [phrase for phrase, _ in candidates]
    positions = [pos for _, pos in candidates]
    vectors = [embedder.embed(phrase) for phrase in phrases]
    sims = [cosine_similarity(question_vec, vec) for vec in vectors]

    ranked = sorted(range(len(phrases)), key=lambda i: (-sims[i], positions[i]))
    kept = ranked[: params.top_k_similar]
    if len(kept) == 1:
        return [phrases[kept[0]]]

    a, b = params.norm_range
    normalized = minmax_normalize([vectors[i] for i in kept], a, b)
    sums = [diversity_sum(row, normalized) for row in range(len(kept))]

    order = sorted(range(len(kept)), key=lambda row: (-sums[row], positions[kept[row]]))
    chosen = order[: params.num_phrases]
    return [phrases[kept[row]] for row in chosen]
