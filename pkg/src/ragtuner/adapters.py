"""Low-rank adapter algebra: scaling rules, weight decomposition, gradients.

A host layer ``W0`` (d_out x d_in, frozen) gets a trainable low-rank update
``B @ A`` (A: r x d_in, B: d_out x r) multiplied by a scale gamma. Two scale
conventions are supported: the classic ``alpha / r`` and the rank-stabilized
``alpha / sqrt(r)``, which keeps the adapter contribution from collapsing as
the rank grows.

The decomposed form additionally splits the adapted weight into a trainable
per-column magnitude vector ``m`` and a column-normalized direction matrix:

    V' = W0 + gamma * B @ A
    W' = V' * (m / column_l2_norms(V'))     (broadcast over columns)

so a freshly initialized layer (B = 0, m = column norms of W0) reproduces the
frozen base layer exactly. The backward pass here is the full analytic
gradient of ``upstream . W' x``, including the dependence of the column norms
on A and B; it is validated coordinate-wise against central finite
differences.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDirectionError,
    InputError,
    NumericError,
    SchemaError,
    ShapeError,
)
from .numkit import RngStream, as_matrix, as_vector, column_l2_norms

__all__ = [
    "SCALING_MODES",
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
    "dora_direction",
    "merge_weights",
    "save_checkpoint",
    "load_checkpoint",
]

SCALING_MODES = ("ratio", "rank_sqrt")

CHECKPOINT_SCHEMA = "ragtuner.checkpoint/1"


@dataclass(frozen=True)
class AdapterConfig:
    """Hyperparameters describing one adapter variant.

    rank: inner dimension r of the low-rank pair.
    alpha: numerator of the scale.
    scaling_mode: "ratio" for alpha/r, "rank_sqrt" for alpha/sqrt(r).
    lr_ratio: learning-rate multiple applied to B relative to A (>= 1).
    init_seed: seed for the adapter initialization stream.
    """

    rank: int = 8
    alpha: float = 16.0
    scaling_mode: str = "rank_sqrt"
    lr_ratio: float = 1.0
    init_seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise InputError(f"rank must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            raise InputError(f"alpha must be positive, got {self.alpha}")
        if self.scaling_mode not in SCALING_MODES:
            raise InputError(
                f"scaling_mode must be one of {SCALING_MODES}, got {self.scaling_mode!r}"
            )
        if self.lr_ratio < 1:
            raise InputError(f"lr_ratio must be >= 1, got {self.lr_ratio}")


@dataclass
class LoraAdapter:
    """Low-rank pair (A: r x d_in, B: d_out x r). B is all-zero right after init."""

    a_matrix: np.ndarray
    b_matrix: np.ndarray

    def __post_init__(self):
        self.a_matrix = as_matrix(self.a_matrix, "a_matrix")
        self.b_matrix = as_matrix(self.b_matrix, "b_matrix")
        if self.a_matrix.shape[0] != self.b_matrix.shape[1]:
            raise ShapeError(
                f"rank mismatch between A {self.a_matrix.shape} and B {self.b_matrix.shape}"
            )

    @property
    def rank(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def d_in(self) -> int:
        return self.a_matrix.shape[1]

    @property
    def d_out(self) -> int:
        return self.b_matrix.shape[0]


@dataclass
class DoraWeight:
    """Frozen base weight plus the trainable per-column magnitude vector."""

    w0: np.ndarray
    magnitude: np.ndarray

    def __post_init__(self):
        self.w0 = as_matrix(self.w0, "w0")
        self.magnitude = as_vector(self.magnitude, "magnitude")
        if self.magnitude.shape[0] != self.w0.shape[1]:
            raise ShapeError(
                f"magnitude length {self.magnitude.shape[0]} does not match "
                f"w0 column count {self.w0.shape[1]}"
            )
        if np.any(self.magnitude <= 0):
            raise InputError("magnitude entries must be positive")

    @classmethod
    def from_base(cls, w0) -> "DoraWeight":
        """Decompose a base weight: magnitude starts as its column norms."""
        w0 = as_matrix(w0, "w0")
        return cls(w0=w0, magnitude=column_l2_norms(w0))


@dataclass
class GradientBundle:
    """Gradients for the trainable parameters, shaped exactly like them."""

    grad_a: np.ndarray
    grad_b: np.ndarray
    grad_magnitude: np.ndarray


def adapter_scale(cfg: AdapterConfig) -> float:
    """Adapter scale gamma: alpha/r ("ratio") or alpha/sqrt(r) ("rank_sqrt")."""
    if cfg.scaling_mode == "ratio":
        return cfg.alpha / cfg.rank
    return cfg.alpha / math.sqrt(cfg.rank)


def init_lora(cfg: AdapterConfig, d_in: int, d_out: int, rng: RngStream) -> LoraAdapter:
    """Fresh adapter: A uniform in (-1/sqrt(d_in), 1/sqrt(d_in)), B zero.

    B = 0 makes the adapted layer equal the frozen layer at step zero.
    """
    if d_in < 1 or d_out < 1:
        raise InputError(f"layer dimensions must be >= 1, got d_in={d_in}, d_out={d_out}")
    bound = 1.0 / math.sqrt(d_in)
    a = rng.uniform(-bound, bound, size=(cfg.rank, d_in))
    b = np.zeros((d_out, cfg.rank))
    return LoraAdapter(a_matrix=a, b_matrix=b)


def _check_input(x, adapter: LoraAdapter, d_in: int) -> np.ndarray:
    x = as_vector(x, "x")
    if x.shape[0] != d_in:
        raise ShapeError(f"input length {x.shape[0]} does not match layer d_in {d_in}")
    if adapter.d_in != d_in:
        raise ShapeError(
            f"adapter d_in {adapter.d_in} does not match layer d_in {d_in}"
        )
    return x


def lora_forward(x, w0, adapter: LoraAdapter, gamma: float) -> np.ndarray:
    """y = W0 x + gamma * B (A x), without ever forming B @ A."""
    w0 = as_matrix(w0, "w0")
    x = _check_input(x, adapter, w0.shape[1])
    if adapter.d_out != w0.shape[0]:
        raise ShapeError(
            f"adapter d_out {adapter.d_out} does not match layer d_out {w0.shape[0]}"
        )
    return w0 @ x + gamma * (adapter.b_matrix @ (adapter.a_matrix @ x))


def _adapted_base(dw: DoraWeight, adapter: LoraAdapter, gamma: float) -> np.ndarray:
    """V' = W0 + gamma * B @ A; forming it is unavoidable for the column norms."""
    if adapter.d_in != dw.w0.shape[1] or adapter.d_out != dw.w0.shape[0]:
        raise ShapeError(
            f"adapter shapes (A {adapter.a_matrix.shape}, B {adapter.b_matrix.shape}) "
            f"do not conform to w0 {dw.w0.shape}"
        )
    return dw.w0 + gamma * (adapter.b_matrix @ adapter.a_matrix)


def _column_norms_checked(v: np.ndarray) -> np.ndarray:
    norms = np.sqrt((v * v).sum(axis=0))
    if np.any(norms == 0.0):
        bad = int(np.argmin(norms))
        raise DegenerateDirectionError(f"adapted weight column {bad} has zero norm")
    return norms


def dora_direction(dw: DoraWeight, adapter: LoraAdapter, gamma: float) -> np.ndarray:
    """The unit-column direction matrix V' / ||V'||_col."""
    v = _adapted_base(dw, adapter, gamma)
    return v / _column_norms_checked(v)


def dora_forward(x, dw: DoraWeight, adapter: LoraAdapter, gamma: float) -> np.ndarray:
    """Decomposed forward: scale each column of V' to its magnitude, apply to x.

    Computed as V' @ (x * m / ||V'||_col), which never materializes the merged
    weight; `merge_weights` is the explicit-merge counterpart.
    """
    x = _check_input(x, adapter, dw.w0.shape[1])
    v = _adapted_base(dw, adapter, gamma)
    norms = _column_norms_checked(v)
    return v @ (x * dw.magnitude / norms)


def dora_backward(
    x,
    dw: DoraWeight,
    adapter: LoraAdapter,
    gamma: float,
    upstream,
) -> GradientBundle:
    """Analytic gradients of ``upstream . dora_forward(x)`` w.r.t. A, B, m.

    With V' = W0 + gamma B A, c = ||V'||_col, s_j = upstream . V'[:, j]:

        d/dm_j  = x_j s_j / c_j
        d/dV'   = upstream (x * m / c)^T  -  V' diag(x * m * s / c^3)
        d/dA    = gamma * B^T dV',   d/dB = gamma * dV' A^T

    The second d/dV' term is the column-norm dependence that a
    "detached-norm" approximation would drop; it is kept so the gradients
    match finite differences of the actual forward pass.
    """
    x = _check_input(x, adapter, dw.w0.shape[1])
    upstream = as_vector(upstream, "upstream")
    if upstream.shape[0] != dw.w0.shape[0]:
        raise ShapeError(
            f"upstream length {upstream.shape[0]} does not match layer d_out {dw.w0.shape[0]}"
        )
    return _dora_backward_batch(x[None, :], upstream[None, :], dw, adapter, gamma)


def dora_backward_batch(xs, upstreams, dw: DoraWeight, adapter: LoraAdapter, gamma: float) -> GradientBundle:
    """Gradients summed over a batch: row t of ``xs`` pairs with row t of ``upstreams``.

    Equivalent to summing `dora_backward` over the rows, but with the
    adapted base and its column norms computed once.
    """
    xs = as_matrix(xs, "xs")
    upstreams = as_matrix(upstreams, "upstreams")
    if xs.shape[0] != upstreams.shape[0]:
        raise ShapeError(
            f"batch mismatch: {xs.shape[0]} inputs vs {upstreams.shape[0]} upstreams"
        )
    if xs.shape[1] != dw.w0.shape[1]:
        raise ShapeError(f"input width {xs.shape[1]} does not match layer d_in {dw.w0.shape[1]}")
    if upstreams.shape[1] != dw.w0.shape[0]:
        raise ShapeError(
            f"upstream width {upstreams.shape[1]} does not match layer d_out {dw.w0.shape[0]}"
        )
    return _dora_backward_batch(xs, upstreams, dw, adapter, gamma)


def _dora_backward_batch(
    xs: np.ndarray,
    upstreams: np.ndarray,
    dw: DoraWeight,
    adapter: LoraAdapter,
    gamma: float,
) -> GradientBundle:
    v = _adapted_base(dw, adapter, gamma)
    c = _column_norms_checked(v)
    m = dw.magnitude

    s = upstreams @ v                      # (n, d_in): s[t, j] = u_t . V'[:, j]
    xs_s = (xs * s).sum(axis=0)            # sum_t x_tj * s_tj per column
    grad_m = xs_s / c

    grad_v = upstreams.T @ (xs * (m / c)) - v * (xs_s * m / c**3)
    grad_a = gamma * (adapter.b_matrix.T @ grad_v)
    grad_b = gamma * (grad_v @ adapter.a_matrix.T)
    return GradientBundle(grad_a=grad_a, grad_b=grad_b, grad_magnitude=grad_m)


def merge_weights(dw: DoraWeight, adapter: LoraAdapter, gamma: float) -> np.ndarray:
    """Dense merged weight W' with W' @ x == dora_forward(x) for every x."""
    v = _adapted_base(dw, adapter, gamma)
    norms = _column_norms_checked(v)
    return v * (dw.magnitude / norms)


# ---------------------------------------------------------------------------
# Checkpoint serialization (versioned JSON, row-major arrays)
# ---------------------------------------------------------------------------


def _matrix_to_json(m: np.ndarray) -> dict:
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": m.ravel().tolist()}


def _matrix_from_json(obj: dict, name: str) -> np.ndarray:
    try:
        rows, cols, data = obj["rows"], obj["cols"], obj["data"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"checkpoint field {name!r} is not a matrix block") from exc
    arr = np.asarray(data, dtype=np.float64)
    if arr.size != rows * cols:
        raise SchemaError(f"checkpoint field {name!r} has {arr.size} values, expected {rows * cols}")
    return arr.reshape(rows, cols)


def save_checkpoint(path: str | os.PathLike, cfg: AdapterConfig, dw: DoraWeight, adapter: LoraAdapter) -> None:
    """Write the full layer state as versioned JSON; round-trips bit-for-bit."""
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "config": {
            "rank": cfg.rank,
            "alpha": cfg.alpha,
            "scaling_mode": cfg.scaling_mode,
            "lr_ratio": cfg.lr_ratio,
            "init_seed": cfg.init_seed,
        },
        "w0": _matrix_to_json(dw.w0),
        "magnitude": dw.magnitude.tolist(),
        "a_matrix": _matrix_to_json(adapter.a_matrix),
        "b_matrix": _matrix_to_json(adapter.b_matrix),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path: str | os.PathLike) -> tuple[AdapterConfig, DoraWeight, LoraAdapter]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise SchemaError(
            f"unsupported checkpoint schema {doc.get('schema')!r}, expected {CHECKPOINT_SCHEMA!r}"
        )
    for key in ("config", "w0", "magnitude", "a_matrix", "b_matrix"):
        if key not in doc:
            raise SchemaError(f"checkpoint missing field {key!r}")
    cfg = AdapterConfig(**doc["config"])
    dw = DoraWeight(
        w0=_matrix_from_json(doc["w0"], "w0"),
        magnitude=np.asarray(doc["magnitude"], dtype=np.float64),
    )
    adapter = LoraAdapter(
        a_matrix=_matrix_from_json(doc["a_matrix"], "a_matrix"),
        b_matrix=_matrix_from_json(doc["b_matrix"], "b_matrix"),
    )
    return cfg, dw, adapter
