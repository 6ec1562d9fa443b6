"""Toy-scale training loop for the decomposed adapters.

The model is deliberately tiny: a frozen token embedding, one adapter-wrapped
linear layer with a tanh on top, and a frozen output head. Only the adapter
pair (A, B) and the per-column magnitude train, via plain SGD so that the
differential learning-rate rule (B steps lr_ratio times as far as A) is exact
and directly assertable. Embedding noise is injected during training only,
with every entry bounded by alpha_nef / (L * d) in the default variant or
alpha_nef / sqrt(L * d) in the alternative one.

The synthetic dataset follows a fixed bigram rule, so the task is fully
learnable and loss trajectories are comparable across adapter variants.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .adapters import (
    AdapterConfig,
    DoraWeight,
    GradientBundle,
    LoraAdapter,
    adapter_scale,
    dora_backward_batch,
    init_lora,
    merge_weights,
)
from .errors import ConflictError, InputError, NumericError, ParseError, SchemaError, ShapeError
from .numkit import RngStream, as_matrix

__all__ = [
    "NOISE_VARIANTS",
    "VARIANTS",
    "NoiseConfig",
    "OptimizerConfig",
    "ToyModel",
    "QaRecord",
    "TrainReport",
    "build_toy_model",
    "generate_synthetic_dataset",
    "inject_noise",
    "noise_bound",
    "sgd_step",
    "eval_loss",
    "train",
    "run_sweep",
    "load_qa_jsonl",
    "AdapterTrainer",
]

NOISE_VARIANTS = ("linear", "sqrt")

# Named adapter variants for sweeps: (scaling_mode, lr_ratio). The *_plus
# variants raise the learning rate of B fourfold.
VARIANTS = {
    "dora": ("ratio", 1.0),
    "dora_plus": ("ratio", 4.0),
    "rsdora": ("rank_sqrt", 1.0),
    "rsdora_plus": ("rank_sqrt", 4.0),
}


@dataclass(frozen=True)
class NoiseConfig:
    """Embedding noise: scale alpha_nef, denominator linear (L*d) or sqrt(L*d)."""

    alpha_nef: float = 0.0
    denominator_variant: str = "linear"

    def __post_init__(self):
        if self.alpha_nef < 0:
            raise InputError(f"alpha_nef must be >= 0, got {self.alpha_nef}")
        if self.denominator_variant not in NOISE_VARIANTS:
            raise InputError(
                f"denominator_variant must be one of {NOISE_VARIANTS}, "
                f"got {self.denominator_variant!r}"
            )


@dataclass(frozen=True)
class OptimizerConfig:
    """Plain SGD. lr_ratio multiplies the learning rate of B only."""

    lr: float = 0.05
    lr_ratio: float = 1.0
    steps: int = 100
    seed: int = 0

    def __post_init__(self):
        # lr = 0 is allowed so a zero step is expressible (it leaves every
        # parameter untouched); negative rates are rejected.
        if self.lr < 0:
            raise InputError(f"lr must be >= 0, got {self.lr}")
        if self.lr_ratio < 1:
            raise InputError(f"lr_ratio must be >= 1, got {self.lr_ratio}")
        if self.steps < 0:
            raise InputError(f"steps must be >= 0, got {self.steps}")


@dataclass
class ToyModel:
    """Frozen embedding and head around one adapter-trained linear layer."""

    vocab_size: int
    embed_dim: int
    embedding: np.ndarray
    w0: np.ndarray
    head: np.ndarray

    def __post_init__(self):
        self.embedding = as_matrix(self.embedding, "embedding")
        self.w0 = as_matrix(self.w0, "w0")
        self.head = as_matrix(self.head, "head")
        v, d = self.vocab_size, self.embed_dim
        if self.embedding.shape != (v, d):
            raise ShapeError(f"embedding must be {(v, d)}, got {self.embedding.shape}")
        if self.w0.shape != (d, d):
            raise ShapeError(f"w0 must be {(d, d)}, got {self.w0.shape}")
        if self.head.shape != (v, d):
            raise ShapeError(f"head must be {(v, d)}, got {self.head.shape}")
        # Everything except the adapter is frozen; make that enforceable.
        for arr in (self.embedding, self.w0, self.head):
            arr.setflags(write=False)


@dataclass(frozen=True)
class QaRecord:
    """One instruction-tuning record; input may be empty, the rest may not."""

    instruction: str
    input: str
    output: str

    def __post_init__(self):
        if not self.instruction.strip():
            raise SchemaError("field 'instruction' must be non-empty")
        if not self.output.strip():
            raise SchemaError("field 'output' must be non-empty")


@dataclass
class TrainReport:
    """Per-step telemetry plus clean-mode evaluation before and after."""

    step_losses: list[float] = field(default_factory=list)
    a_update_norms: list[float] = field(default_factory=list)
    b_update_norms: list[float] = field(default_factory=list)
    initial_eval_loss: float = float("nan")
    final_eval_loss: float = float("nan")


def build_toy_model(vocab_size: int = 64, embed_dim: int = 32, seed: int = 0) -> ToyModel:
    """Model weights drawn uniform(-1, 1)/sqrt(d), deterministic per seed."""
    if vocab_size < 2:
        raise InputError(f"vocab_size must be >= 2, got {vocab_size}")
    if embed_dim < 1:
        raise InputError(f"embed_dim must be >= 1, got {embed_dim}")
    rng = RngStream(seed)
    scale = 1.0 / math.sqrt(embed_dim)
    return ToyModel(
        vocab_size=vocab_size,
        embed_dim=embed_dim,
        embedding=scale * rng.derive("embedding").uniform(-1, 1, (vocab_size, embed_dim)),
        w0=scale * rng.derive("w0").uniform(-1, 1, (embed_dim, embed_dim)),
        head=scale * rng.derive("head").uniform(-1, 1, (vocab_size, embed_dim)),
    )


def noise_bound(cfg: NoiseConfig, seq_len: int, dim: int) -> float:
    """Largest magnitude a noise entry can take for an L x d embedding."""
    if cfg.denominator_variant == "linear":
        return cfg.alpha_nef / (seq_len * dim)
    return cfg.alpha_nef / math.sqrt(seq_len * dim)


def inject_noise(embeddings, cfg: NoiseConfig, rng: RngStream) -> np.ndarray:
    """Add uniform noise with entries in (-bound, bound) to an L x d matrix.

    alpha_nef = 0 returns the input untouched without consuming any random
    numbers, so toggling noise does not shift the rest of a seeded run.
    Training-mode only by caller contract; evaluation stays clean.
    """
    emb = as_matrix(embeddings, "embeddings")
    if cfg.alpha_nef == 0:
        return emb
    bound = noise_bound(cfg, emb.shape[0], emb.shape[1])
    return emb + bound * rng.uniform(-1.0, 1.0, emb.shape)


def sgd_step(
    adapter: LoraAdapter, dw: DoraWeight, grads: GradientBundle, opt: OptimizerConfig
) -> tuple[LoraAdapter, DoraWeight]:
    """One SGD update in place: A and magnitude step by lr, B by lr_ratio * lr."""
    for name, g in (("grad_a", grads.grad_a), ("grad_b", grads.grad_b),
                    ("grad_magnitude", grads.grad_magnitude)):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"{name} contains non-finite entries")
    adapter.a_matrix -= opt.lr * grads.grad_a
    adapter.b_matrix -= opt.lr * opt.lr_ratio * grads.grad_b
    dw.magnitude -= opt.lr * grads.grad_magnitude
    return adapter, dw


def _check_dataset(dataset, vocab_size: int) -> np.ndarray:
    seqs = np.asarray(dataset)
    if seqs.ndim != 2 or seqs.shape[0] < 1:
        raise InputError(f"dataset must be a non-empty (n, seq_len) array, got shape {seqs.shape}")
    if seqs.shape[1] < 2:
        raise InputError("sequences need at least 2 tokens for next-token loss")
    if not np.issubdtype(seqs.dtype, np.integer):
        raise InputError(f"dataset must contain integer token ids, got dtype {seqs.dtype}")
    if seqs.min() < 0 or seqs.max() >= vocab_size:
        raise InputError(f"token ids must lie in [0, {vocab_size}), got "
                         f"[{seqs.min()}, {seqs.max()}]")
    return seqs


def _loss_and_dlogits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean next-token cross entropy and its gradient w.r.t. the logits.

    logits has one row per position; only rows 0..T-1 (paired with targets)
    enter the loss, so the returned gradient's final row is zero.
    """
    t = targets.shape[0]
    used = logits[:t]
    shifted = used - used.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    denom = expz.sum(axis=1)
    logp = shifted - np.log(denom)[:, None]
    loss = -logp[np.arange(t), targets].mean()

    dlogits = np.zeros_like(logits)
    probs = expz / denom[:, None]
    probs[np.arange(t), targets] -= 1.0
    dlogits[:t] = probs / t
    return float(loss), dlogits


def _forward(model: ToyModel, merged: np.ndarray, emb: np.ndarray):
    """emb rows -> adapted linear -> tanh -> vocabulary logits."""
    z = emb @ merged.T
    h = np.tanh(z)
    logits = h @ model.head.T
    return h, logits


def eval_loss(
    model: ToyModel, dataset, dw: DoraWeight, adapter: LoraAdapter, gamma: float
) -> float:
    """Mean clean-mode (noise-free) next-token loss over a whole dataset."""
    seqs = _check_dataset(dataset, model.vocab_size)
    merged = merge_weights(dw, adapter, gamma)
    emb = model.embedding[seqs]                    # (n, L, d)
    h = np.tanh(emb @ merged.T)
    logits = h @ model.head.T                      # (n, L, V)
    used = logits[:, :-1].reshape(-1, model.vocab_size)
    targets = seqs[:, 1:].reshape(-1)
    loss, _ = _loss_and_dlogits(used, targets)
    return loss


def train(
    model: ToyModel,
    dataset,
    adapter_cfg: AdapterConfig,
    noise_cfg: NoiseConfig,
    opt: OptimizerConfig,
    adapter: LoraAdapter | None = None,
    dora: DoraWeight | None = None,
) -> TrainReport:
    """Run the SGD loop, cycling through the dataset one sequence per step.

    Pass adapter/dora to keep handles on the trained parameters (they are
    updated in place); omit them to have fresh ones created from the configs.
    The report is a pure function of (model, dataset, configs): the noise
    stream is derived from opt.seed, the adapter init from
    adapter_cfg.init_seed, and data order is plain cycling.
    """
    seqs = _check_dataset(dataset, model.vocab_size)
    if adapter_cfg.lr_ratio != opt.lr_ratio:
        raise ConflictError(
            f"adapter_cfg.lr_ratio={adapter_cfg.lr_ratio} disagrees with "
            f"opt.lr_ratio={opt.lr_ratio}; set them equal"
        )
    if adapter is None:
        adapter = init_lora(
            adapter_cfg,
            model.embed_dim,
            model.embed_dim,
            RngStream(adapter_cfg.init_seed).derive("adapter_init"),
        )
    if dora is None:
        dora = DoraWeight.from_base(model.w0)
    gamma = adapter_scale(adapter_cfg)
    noise_rng = RngStream(opt.seed).derive("neftune")

    report = TrainReport()
    report.initial_eval_loss = eval_loss(model, seqs, dora, adapter, gamma)
    for step in range(opt.steps):
        seq = seqs[step % seqs.shape[0]]
        emb = inject_noise(model.embedding[seq], noise_cfg, noise_rng)
        merged = merge_weights(dora, adapter, gamma)
        h, logits = _forward(model, merged, emb)
        loss, dlogits = _loss_and_dlogits(logits, seq[1:])
        if not math.isfinite(loss):
            raise NumericError(f"training loss became non-finite at step {step}")

        dh = dlogits @ model.head
        dz = dh * (1.0 - h * h)
        grads = dora_backward_batch(emb, dz, dora, adapter, gamma)

        report.step_losses.append(loss)
        report.a_update_norms.append(float(np.linalg.norm(opt.lr * grads.grad_a)))
        report.b_update_norms.append(
            float(np.linalg.norm(opt.lr * opt.lr_ratio * grads.grad_b))
        )
        sgd_step(adapter, dora, grads, opt)

    report.final_eval_loss = eval_loss(model, seqs, dora, adapter, gamma)
    return report


def generate_synthetic_dataset(
    seed: int, size: int, seq_len: int = 12, vocab_size: int = 64
) -> np.ndarray:
    """Sequences following next = (5 * current + 3) mod vocab_size.

    Start tokens are drawn uniformly per sequence; everything after the
    first token is determined by the rule, so the conditional entropy of
    the task is zero and any sane optimizer can push the loss down.
    """
    if size < 1:
        raise InputError(f"size must be >= 1, got {size}")
    if seq_len < 2:
        raise InputError(f"seq_len must be >= 2, got {seq_len}")
    if vocab_size < 2:
        raise InputError(f"vocab_size must be >= 2, got {vocab_size}")
    rng = RngStream(seed).derive("synthetic_data")
    seqs = np.empty((size, seq_len), dtype=np.int64)
    seqs[:, 0] = rng.integers(0, vocab_size, size)
    for t in range(1, seq_len):
        seqs[:, t] = (5 * seqs[:, t - 1] + 3) % vocab_size
    return seqs


def load_qa_jsonl(path) -> list[QaRecord]:
    """Read instruction/input/output records, one JSON object per line."""
    records: list[QaRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: not valid JSON ({exc.msg})") from exc
            if not isinstance(doc, dict):
                raise SchemaError(f"line {lineno}: expected a JSON object")
            for key in ("instruction", "input", "output"):
                if key not in doc:
                    raise SchemaError(f"line {lineno}: missing field {key!r}")
                if not isinstance(doc[key], str):
                    raise SchemaError(f"line {lineno}: field {key!r} must be a string")
            for key in ("instruction", "output"):
                if not doc[key].strip():
                    raise SchemaError(f"line {lineno}: field {key!r} must be non-empty")
            records.append(
                QaRecord(instruction=doc["instruction"], input=doc["input"], output=doc["output"])
            )
    return records


def run_sweep(
    model: ToyModel,
    dataset,
    variants: list[str],
    ranks: list[int],
    alpha_nefs: list[float],
    seeds: list[int],
    alpha: float = 16.0,
    lr: float = 0.05,
    steps: int = 100,
    denominator_variant: str = "linear",
) -> list[dict]:
    """Cross product of (variant, rank, alpha_nef, seed); rows for the CSV.

    Seeds are paired across cells: the same seed gives the same adapter init
    and noise stream in every cell, so differences between cells come from
    the knob under study rather than from fresh randomness.
    """
    rows: list[dict] = []
    for variant in variants:
        if variant not in VARIANTS:
            raise InputError(f"unknown variant {variant!r}; known: {sorted(VARIANTS)}")
        scaling_mode, lr_ratio = VARIANTS[variant]
        for rank in ranks:
            for alpha_nef in alpha_nefs:
                for seed in seeds:
                    cfg = AdapterConfig(
                        rank=rank,
                        alpha=alpha,
                        scaling_mode=scaling_mode,
                        lr_ratio=lr_ratio,
                        init_seed=seed,
                    )
                    noise = NoiseConfig(alpha_nef=alpha_nef, denominator_variant=denominator_variant)
                    opt = OptimizerConfig(lr=lr, lr_ratio=lr_ratio, steps=steps, seed=seed)
                    report = train(model, dataset, cfg, noise, opt)
                    rows.append(
                        {
                            "variant": variant,
                            "rank": rank,
                            "alpha_nef": alpha_nef,
                            "seed": seed,
                            "final_loss": report.final_eval_loss,
                        }
                    )
    return rows


class AdapterTrainer(BaseEstimator):
    """Estimator wrapper: construct with hyperparameters, fit on a token dataset.

    Keeps the whole configuration surface in get_params()/set_params() form
    so sweeps can reuse sklearn's grid tooling. fit(X) expects an (n,
    seq_len) integer array and exposes model_, adapter_, dora_, report_.
    """

    def __init__(
        self,
        rank: int = 8,
        alpha: float = 16.0,
        scaling_mode: str = "rank_sqrt",
        lr_ratio: float = 1.0,
        alpha_nef: float = 0.0,
        denominator_variant: str = "linear",
        lr: float = 0.05,
        steps: int = 100,
        seed: int = 0,
        vocab_size: int = 64,
        embed_dim: int = 32,
    ):
        self.rank = rank
        self.alpha = alpha
        self.scaling_mode = scaling_mode
        self.lr_ratio = lr_ratio
        self.alpha_nef = alpha_nef
        self.denominator_variant = denominator_variant
        self.lr = lr
        self.steps = steps
        self.seed = seed
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim

    def fit(self, X, y=None):
        adapter_cfg = AdapterConfig(
            rank=self.rank,
            alpha=self.alpha,
            scaling_mode=self.scaling_mode,
            lr_ratio=self.lr_ratio,
            init_seed=self.seed,
        )
        noise_cfg = NoiseConfig(
            alpha_nef=self.alpha_nef, denominator_variant=self.denominator_variant
        )
        opt = OptimizerConfig(lr=self.lr, lr_ratio=self.lr_ratio, steps=self.steps, seed=self.seed)
        self.model_ = build_toy_model(self.vocab_size, self.embed_dim, self.seed)
        self.adapter_ = init_lora(
            adapter_cfg,
            self.embed_dim,
            self.embed_dim,
            RngStream(self.seed).derive("adapter_init"),
        )
        self.dora_ = DoraWeight.from_base(self.model_.w0)
        self.report_ = train(
            self.model_, X, adapter_cfg, noise_cfg, opt, adapter=self.adapter_, dora=self.dora_
        )
        self.gamma_ = adapter_scale(adapter_cfg)
        return self

    def score(self, X, y=None) -> float:
        """Negative clean eval loss, so larger is better (sklearn convention)."""
        if not hasattr(self, "model_"):
            raise InputError("fit must run before score")
        return -eval_loss(self.model_, X, self.dora_, self.adapter_, self.gamma_)
