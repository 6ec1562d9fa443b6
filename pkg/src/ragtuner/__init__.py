"""Decomposed low-rank adapter fine-tuning plus retrieval-on-demand QA.

Two halves share one toolbox. The adapter half decomposes a frozen weight
into a trainable magnitude and a low-rank-adapted direction, with a scale
rule that stays stable as the rank grows and a separate learning rate for
the B matrix. The retrieval half answers questions, fetching and screening
context chunks only when a critic says they are needed, with one
key-phrase-based retry before falling back to the plain question.
"""

from .adapters import (
    AdapterConfig,
    DoraWeight,
    GradientBundle,
    LoraAdapter,
    adapter_scale,
    dora_backward,
    dora_backward_batch,
    dora_forward,
    init_lora,
    load_checkpoint,
    lora_forward,
    merge_weights,
    save_checkpoint,
)
from .clients import EndpointConfig, HttpCritic, HttpEmbedder, HttpGenerator
from .config import RunConfig
from .errors import (
    ConflictError,
    DegenerateDirectionError,
    GenerationError,
    InputError,
    NumericError,
    ParseError,
    RagtunerError,
    RangeError,
    SchemaError,
    ShapeError,
    TransportError,
    UndefinedSimilarityError,
)
from .metrics import ScoreReport, bleu4, evaluate_corpus, rouge_l, rouge_n, tokenize
from .numkit import RngStream, finite_difference_gradient
from .rerag import (
    EchoGenerator,
    KeywordOverlapCritic,
    PipelineTrace,
    ReragPipeline,
    RewriteParams,
    ScriptedCritic,
    cosine_similarity,
    diversity_sum,
    euclidean_distance,
    extract_key_phrases,
    minmax_normalize,
    run_pipeline,
)
from .retrieval import Chunk, HashEmbedder, VectorIndex, chunk_text
from .trainer import (
    AdapterTrainer,
    NoiseConfig,
    OptimizerConfig,
    QaRecord,
    ToyModel,
    TrainReport,
    build_toy_model,
    eval_loss,
    generate_synthetic_dataset,
    inject_noise,
    load_qa_jsonl,
    run_sweep,
    sgd_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # adapters
    "AdapterConfig",
    "LoraAdapter",
    "DoraWeight",
    "GradientBundle",
    "adapter_scale",
    "init_lora",
    "lora_forward",
    "dora_forward",
    "dora_backward",
    "dora_backward_batch",
    "merge_weights",
    "save_checkpoint",
    "load_checkpoint",
    # training
    "NoiseConfig",
    "OptimizerConfig",
    "ToyModel",
    "QaRecord",
    "TrainReport",
    "AdapterTrainer",
    "build_toy_model",
    "generate_synthetic_dataset",
    "inject_noise",
    "sgd_step",
    "eval_loss",
    "train",
    "run_sweep",
    "load_qa_jsonl",
    # metrics
    "ScoreReport",
    "tokenize",
    "bleu4",
    "rouge_n",
    "rouge_l",
    "evaluate_corpus",
    # retrieval
    "Chunk",
    "VectorIndex",
    "HashEmbedder",
    "chunk_text",
    # pipeline
    "RewriteParams",
    "cosine_similarity",
    "minmax_normalize",
    "euclidean_distance",
    "diversity_sum",
    "extract_key_phrases",
    "PipelineTrace",
    "ReragPipeline",
    "run_pipeline",
    "ScriptedCritic",
    "KeywordOverlapCritic",
    "EchoGenerator",
    # clients & config
    "EndpointConfig",
    "HttpEmbedder",
    "HttpCritic",
    "HttpGenerator",
    "RunConfig",
    # numerics
    "RngStream",
    "finite_difference_gradient",
    # errors
    "RagtunerError",
    "InputError",
    "ShapeError",
    "RangeError",
    "ConflictError",
    "ParseError",
    "SchemaError",
    "DegenerateDirectionError",
    "UndefinedSimilarityError",
    "NumericError",
    "TransportError",
    "GenerationError",
]
