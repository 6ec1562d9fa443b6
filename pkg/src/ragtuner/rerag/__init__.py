"""Retrieval-on-demand answering: gate, screen, rewrite once, generate."""

from .pipeline import (
    PATHS,
    Critic,
    EchoGenerator,
    Generator,
    KeywordOverlapCritic,
    PipelineTrace,
    ReragPipeline,
    ScriptedCritic,
    build_prompt,
    run_pipeline,
)
from .rewrite import (
    STOPWORDS,
    RewriteParams,
    cosine_similarity,
    diversity_sum,
    euclidean_distance,
    extract_key_phrases,
    minmax_normalize,
)

__all__ = [
    "PATHS",
    "Critic",
    "Generator",
    "ScriptedCritic",
    "KeywordOverlapCritic",
    "EchoGenerator",
    "PipelineTrace",
    "ReragPipeline",
    "build_prompt",
    "run_pipeline",
    "STOPWORDS",
    "RewriteParams",
    "cosine_similarity",
    "minmax_normalize",
    "euclidean_distance",
    "diversity_sum",
    "extract_key_phrases",
]
