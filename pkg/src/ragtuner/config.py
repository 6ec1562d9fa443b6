"""Run configuration: one INI file covering every knob, with sane defaults.

A missing file key falls back to its default, an unknown section or key is
an error (typos should not pass silently), and four environment variables
override their file counterparts so secrets and endpoints stay out of
checked-in configs:

    RAGTUNER_EMBEDDER_URL   -> [retrieval] embedder_url
    RAGTUNER_CRITIC_URL     -> [rerag] critic_url
    RAGTUNER_GENERATOR_URL  -> [rerag] generator_url
    RAGTUNER_API_KEY        -> [rerag] api_key

load(dumps(cfg)) returns an equal RunConfig, so configs survive being
round-tripped through files.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass

from .adapters import AdapterConfig
from .clients import EndpointConfig, HttpCritic, HttpEmbedder, HttpGenerator
from .errors import InputError, SchemaError
from .rerag.pipeline import EchoGenerator, KeywordOverlapCritic
from .rerag.rewrite import RewriteParams
from .retrieval import HashEmbedder
from .trainer import NoiseConfig, OptimizerConfig

__all__ = [
    "ModelParams",
    "RetrievalParams",
    "ReragParams",
    "RunConfig",
    "load",
    "loads",
    "dumps",
    "dump_defaults",
    "make_embedder",
    "make_critic",
    "make_generator",
]

_ENV_OVERRIDES = {
    "RAGTUNER_EMBEDDER_URL": ("retrieval", "embedder_url"),
    "RAGTUNER_CRITIC_URL": ("rerag", "critic_url"),
    "RAGTUNER_GENERATOR_URL": ("rerag", "generator_url"),
    "RAGTUNER_API_KEY": ("rerag", "api_key"),
}


@dataclass(frozen=True)
class ModelParams:
    """Toy model dimensions and its weight seed."""

    vocab_size: int = 64
    embed_dim: int = 32
    seed: int = 0


@dataclass(frozen=True)
class RetrievalParams:
    """Index location plus which embedder feeds it."""

    k: int = 5
    index_path: str = "index.json"
    embedder: str = "hash"
    embedder_url: str = ""
    embed_dim: int = 32

    def __post_init__(self):
        if self.k < 1:
            raise InputError(f"k must be >= 1, got {self.k}")
        if self.embed_dim < 1:
            raise InputError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.embedder not in ("hash", "http"):
            raise InputError(f"embedder must be 'hash' or 'http', got {self.embedder!r}")


@dataclass(frozen=True)
class ReragParams:
    """Pipeline knobs: rewrite parameters and the critic/generator backends."""

    max_ngram: int = 3
    top_k_similar: int = 10
    num_phrases: int = 3
    norm_lo: float = 0.0
    norm_hi: float = 1.0
    critic: str = "keyword"
    critic_url: str = ""
    generator: str = "echo"
    generator_url: str = ""
    model_name: str = ""
    retrieve_rate: float = 0.7
    min_overlap: int = 2
    timeout: float = 30.0
    api_key: str = ""

    def __post_init__(self):
        if self.critic not in ("keyword", "http"):
            raise InputError(f"critic must be 'keyword' or 'http', got {self.critic!r}")
        if self.generator not in ("echo", "http"):
            raise InputError(f"generator must be 'echo' or 'http', got {self.generator!r}")
        if self.timeout <= 0:
            raise InputError(f"timeout must be positive, got {self.timeout}")
        # Range checks for the rewrite block live in RewriteParams; build one
        # eagerly so a bad config fails at load time, not first use.
        self.rewrite_params()

    def rewrite_params(self) -> RewriteParams:
        return RewriteParams(
            max_ngram=self.max_ngram,
            top_k_similar=self.top_k_similar,
            num_phrases=self.num_phrases,
            norm_range=(self.norm_lo, self.norm_hi),
        )


@dataclass(frozen=True)
class RunConfig:
    """Everything one invocation needs, grouped by concern."""

    adapter: AdapterConfig = AdapterConfig()
    noise: NoiseConfig = NoiseConfig(alpha_nef=5.0)
    optimizer: OptimizerConfig = OptimizerConfig()
    model: ModelParams = ModelParams()
    retrieval: RetrievalParams = RetrievalParams()
    rerag: ReragParams = ReragParams()


# Section -> key -> (default string, comment). Single source of truth for
# parsing, dumping, and --dump-defaults documentation.
_SCHEMA: dict[str, dict[str, tuple[str, str]]] = {
    "adapter": {
        "rank": ("8", "inner dimension r of the low-rank pair"),
        "alpha": ("16.0", "scale numerator"),
        "scaling_mode": ("rank_sqrt", "ratio (alpha/r) or rank_sqrt (alpha/sqrt(r))"),
        "lr_ratio": ("1.0", "learning-rate multiple for B (>= 1); also used by the optimizer"),
        "init_seed": ("0", "seed for adapter initialization"),
    },
    "noise": {
        "alpha_nef": ("5.0", "embedding noise scale; 0 disables noise"),
        "denominator_variant": ("linear", "linear (L*d) or sqrt (sqrt(L*d))"),
    },
    "optimizer": {
        "lr": ("0.05", "SGD learning rate"),
        "steps": ("100", "training steps"),
        "seed": ("0", "seed for the noise stream and data order"),
    },
    "model": {
        "vocab_size": ("64", "toy vocabulary size"),
        "embed_dim": ("32", "embedding width d"),
        "seed": ("0", "seed for the frozen model weights"),
    },
    "retrieval": {
        "k": ("5", "chunks retrieved per query"),
        "index_path": ("index.json", "where the vector index lives"),
        "embedder": ("hash", "hash (hermetic) or http (external endpoint)"),
        "embedder_url": ("", "endpoint for embedder=http; env RAGTUNER_EMBEDDER_URL overrides"),
        "embed_dim": ("32", "embedding dimension; must match the index"),
    },
    "rerag": {
        "max_ngram": ("3", "longest key-phrase candidate, in words"),
        "top_k_similar": ("10", "candidates kept by the similarity ranking"),
        "num_phrases": ("3", "key phrases used for the retry query"),
        "norm_lo": ("0.0", "lower end of the normalization range"),
        "norm_hi": ("1.0", "upper end of the normalization range"),
        "critic": ("keyword", "keyword (hermetic) or http"),
        "critic_url": ("", "endpoint for critic=http; env RAGTUNER_CRITIC_URL overrides"),
        "generator": ("echo", "echo (hermetic) or http"),
        "generator_url": ("", "endpoint for generator=http; env RAGTUNER_GENERATOR_URL overrides"),
        "model_name": ("", "model name sent to http critic/generator"),
        "retrieve_rate": ("0.7", "fraction of questions the keyword critic gates to retrieval"),
        "min_overlap": ("2", "content words shared with the question for relevance"),
        "timeout": ("30.0", "per-request timeout for http backends, seconds"),
        "api_key": ("", "bearer token for http backends; env RAGTUNER_API_KEY overrides"),
    },
}

_INT_KEYS = {
    "rank", "init_seed", "steps", "seed", "vocab_size", "embed_dim", "k",
    "max_ngram", "top_k_similar", "num_phrases", "min_overlap",
}
_FLOAT_KEYS = {
    "alpha", "lr_ratio", "alpha_nef", "lr", "norm_lo", "norm_hi",
    "retrieve_rate", "timeout",
}


def _typed(section: str, key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        kind = "an integer" if key in _INT_KEYS else "a number"
        raise SchemaError(f"[{section}] {key} must be {kind}, got {raw!r}") from None
    return raw


def _section_values(parser: configparser.ConfigParser, section: str) -> dict:
    values = {key: _typed(section, key, default) for key, (default, _) in _SCHEMA[section].items()}
    if parser.has_section(section):
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise SchemaError(f"unknown key {key!r} in section [{section}]")
            values[key] = _typed(section, key, raw)
    return values


def loads(text: str, env: dict | None = None) -> RunConfig:
    """Parse INI text into a RunConfig; env overrides applied last."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise SchemaError(f"config is not valid INI: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise SchemaError(f"unknown config section [{section}]")

    values = {section: _section_values(parser, section) for section in _SCHEMA}

    env = os.environ if env is None else env
    for var, (section, key) in _ENV_OVERRIDES.items():
        if env.get(var):
            values[section][key] = env[var]

    adapter = AdapterConfig(**values["adapter"])
    optimizer = OptimizerConfig(lr_ratio=adapter.lr_ratio, **values["optimizer"])
    return RunConfig(
        adapter=adapter,
        noise=NoiseConfig(**values["noise"]),
        optimizer=optimizer,
        model=ModelParams(**values["model"]),
        retrieval=RetrievalParams(**values["retrieval"]),
        rerag=ReragParams(**values["rerag"]),
    )


def load(path, env: dict | None = None) -> RunConfig:
    """Read a config file; a missing file is the caller's mistake."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    return loads(text, env=env)


def _value_of(cfg: RunConfig, section: str, key: str):
    holders = {
        "adapter": cfg.adapter,
        "noise": cfg.noise,
        "optimizer": cfg.optimizer,
        "model": cfg.model,
        "retrieval": cfg.retrieval,
        "rerag": cfg.rerag,
    }
    return getattr(holders[section], key)


def dumps(cfg: RunConfig) -> str:
    """Serialize to INI; loads(dumps(cfg)) == cfg."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, keys in _SCHEMA.items():
        parser.add_section(section)
        for key in keys:
            # str() round-trips ints and floats exactly in Python 3.
            parser.set(section, key, str(_value_of(cfg, section, key)))
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def dump_defaults() -> str:
    """Default config as commented INI text, suitable as a starting file."""
    lines: list[str] = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (default, comment) in keys.items():
            lines.append(f"# {comment}")
            lines.append(f"{key} = {default}")
        lines.append("")
    return "\n".join(lines)


def make_embedder(cfg: RunConfig):
    """hash -> hermetic test embedder; http -> external endpoint client."""
    if cfg.retrieval.embedder == "hash":
        return HashEmbedder(dim=cfg.retrieval.embed_dim)
    if not cfg.retrieval.embedder_url:
        raise InputError("embedder=http requires embedder_url (or RAGTUNER_EMBEDDER_URL)")
    endpoint = EndpointConfig(
        url=cfg.retrieval.embedder_url,
        model=cfg.rerag.model_name,
        api_key=cfg.rerag.api_key,
        timeout=cfg.rerag.timeout,
    )
    return HttpEmbedder(endpoint, dim=cfg.retrieval.embed_dim)


def make_critic(cfg: RunConfig):
    if cfg.rerag.critic == "keyword":
        return KeywordOverlapCritic(
            retrieve_rate=cfg.rerag.retrieve_rate, min_overlap=cfg.rerag.min_overlap
        )
    if not cfg.rerag.critic_url:
        raise InputError("critic=http requires critic_url (or RAGTUNER_CRITIC_URL)")
    return HttpCritic(
        EndpointConfig(
            url=cfg.rerag.critic_url,
            model=cfg.rerag.model_name,
            api_key=cfg.rerag.api_key,
            timeout=cfg.rerag.timeout,
        )
    )


def make_generator(cfg: RunConfig):
    if cfg.rerag.generator == "echo":
        return EchoGenerator()
    if not cfg.rerag.generator_url:
        raise InputError("generator=http requires generator_url (or RAGTUNER_GENERATOR_URL)")
    return HttpGenerator(
        EndpointConfig(
            url=cfg.rerag.generator_url,
            model=cfg.rerag.model_name,
            api_key=cfg.rerag.api_key,
            timeout=cfg.rerag.timeout,
        )
    )
