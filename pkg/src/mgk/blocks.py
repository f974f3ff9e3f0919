"""Attention building blocks shared by all pipeline stages.

Four pieces: spatial self-attention over tokens within a frame, temporal
self-attention over frames, cross-attention against learnable queries with an
optional distance-derived logit bias, and a shared-MLP max-pool point cloud
encoder.

Blocks are pre-norm residual (x + attn(LN(x)), then x + FFN(LN(x))). Learned
index positional embeddings, where enabled, are added to the attention queries
and keys only - never to values or the residual stream - so token content is
positional-free and a constant-in-time input stays constant in time through
temporal attention regardless of the position table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .motion import ObjectPointCloud
from .tensor import Tensor, gelu, layer_norm, softmax


@dataclass
class AttentionConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    dropout_rate: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ContractError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}")
        if self.n_layers < 1:
            raise ContractError("n_layers must be at least 1")
        if self.dropout_rate != 0.0:
            raise ContractError("dropout is fixed at 0 for deterministic runs")

    def to_dict(self) -> dict:
        return {"d_model": self.d_model, "n_heads": self.n_heads,
                "n_layers": self.n_layers, "d_ff": self.d_ff,
                "dropout_rate": self.dropout_rate, "max_tokens": self.max_tokens}

    @staticmethod
    def from_dict(d: dict) -> "AttentionConfig":
        return AttentionConfig(**d)


class Module:
    """Minimal parameter container: tensors and sub-modules found on
    attributes (and inside lists of them) are collected by name."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            full = f"{prefix}.{name}" if prefix else name
            self._collect(full, value, out)
        return out

    @staticmethod
    def _collect(name: str, value, out: dict[str, Tensor]) -> None:
        if isinstance(value, Tensor):
            if value.requires_grad:
                out[name] = value
        elif isinstance(value, Module):
            out.update(value.named_parameters(name))
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                Module._collect(f"{name}.{i}", item, out)

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ShapeError(f"state dict mismatch: missing={missing[:5]} "
                             f"unexpected={unexpected[:5]}")
        for name, t in params.items():
            if state[name].shape != t.data.shape:
                raise ShapeError(f"shape mismatch for '{name}': "
                                 f"{state[name].shape} vs {t.data.shape}")
            t.data = state[name].copy()

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.zero_grad()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 zero_init: bool = False):
        # zero_init makes residual branches start as the identity map.
        w = (np.zeros((d_in, d_out)) if zero_init
             else rng.standard_normal((d_in, d_out)) / np.sqrt(d_in))
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.up = Linear(d_model, d_ff, rng)
        self.down = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


class DistanceBias:
    """Multiplicative proximity weighting e^(-w*d) on attention, applied as
    the mathematically identical additive term -w*d on the logits.

    ``log_w`` is the (shared, learnable) log of the positive weight w;
    ``distances`` is a (Q, K) or (B, Q, K) matrix of non-negative meters.
    """

    def __init__(self, log_w: Tensor, distances: np.ndarray):
        distances = np.asarray(distances, dtype=np.float64)
        if distances.ndim not in (2, 3):
            raise ShapeError(f"distances must be (Q, K) or (B, Q, K), "
                             f"got {distances.shape}")
        if np.any(distances < 0):
            raise ContractError("distances must be non-negative")
        self.log_w = log_w
        self.distances = distances

    @property
    def w(self) -> float:
        return float(np.exp(self.log_w.data))

    def logit_bias(self) -> Tensor:
        """-w*d shaped for broadcast over heads: (1 or B, 1, Q, K)."""
        d = self.distances if self.distances.ndim == 3 else self.distances[None]
        return -(self.log_w.exp() * Tensor(d[:, None, :, :]))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         bias: DistanceBias | None = None,
                         n_heads: int = 1,
                         weights_out: list | None = None) -> Tensor:
    """Multi-head scaled dot-product attention over (B, L, d) tensors.

    Appends the (B, heads, Lq, Lk) weight array to ``weights_out`` when given.
    """
    B, Lq, d = q.shape
    Lk = k.shape[1]
    if d % n_heads != 0:
        raise ContractError(f"d={d} not divisible by n_heads={n_heads}")
    dh = d // n_heads
    if bias is not None:
        bd = bias.distances
        if bd.shape[-2:] != (Lq, Lk):
            raise ShapeError(f"bias distances {bd.shape} do not match "
                             f"queries x keys ({Lq}, {Lk})")

    def split(t: Tensor, L: int) -> Tensor:
        return t.reshape(B, L, n_heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q, Lq), split(k, Lk), split(v, Lk)
    logits = (qh @ kh.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    if bias is not None:
        logits = logits + bias.logit_bias()
    attn = softmax(logits, axis=-1)
    if weights_out is not None:
        weights_out.append(attn.data.copy())
    out = attn @ vh
    return out.transpose(0, 2, 1, 3).reshape(B, Lq, d)


class MultiHeadAttention(Module):
    def __init__(self, config: AttentionConfig, rng: np.random.Generator):
        d = config.d_model
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self._heads = config.n_heads

    def __call__(self, q_in: Tensor, kv_in: Tensor,
                 pos_q: Tensor | None = None, pos_k: Tensor | None = None,
                 bias: DistanceBias | None = None,
                 weights_out: list | None = None) -> Tensor:
        q_src = q_in + pos_q if pos_q is not None else q_in
        k_src = kv_in + pos_k if pos_k is not None else kv_in
        ctx = scaled_dot_attention(self.wq(q_src), self.wk(k_src), self.wv(kv_in),
                                   bias=bias, n_heads=self._heads,
                                   weights_out=weights_out)
        return self.wo(ctx)


class TransformerBlock(Module):
    """Pre-norm residual self-attention block: x + attn(LN(x)), x + FFN(LN(x))."""

    def __init__(self, config: AttentionConfig, rng: np.random.Generator):
        self.ln1 = LayerNorm(config.d_model)
        self.attn = MultiHeadAttention(config, rng)
        self.ln2 = LayerNorm(config.d_model)
        self.ffn = FeedForward(config.d_model, config.d_ff, rng)

    def __call__(self, x: Tensor, pos: Tensor | None = None,
                 weights_out: list | None = None) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, pos_q=pos, pos_k=pos, weights_out=weights_out)
        return x + self.ffn(self.ln2(x))


class SpatialTransformer(Module):
    """Self-attention stack over the tokens of one frame (markers or joints).

    ``positional`` is "none" (permutation-equivariant) or "learned-index"
    (per-slot embeddings injected into queries/keys only).
    """

    def __init__(self, config: AttentionConfig, rng: np.random.Generator,
                 positional: str = "none"):
        if positional not in ("none", "learned-index"):
            raise ContractError(f"unknown positional mode '{positional}'")
        self.blocks = [TransformerBlock(config, rng)
                       for _ in range(config.n_layers)]
        self.out_ln = LayerNorm(config.d_model)
        self.pos = (Tensor(rng.standard_normal((config.max_tokens, config.d_model))
                           * 0.02, requires_grad=True)
                    if positional == "learned-index" else None)
        self._max_tokens = config.max_tokens

    def __call__(self, x: Tensor, weights_out: list | None = None) -> Tensor:
        B, L, d = x.shape
        if L > self._max_tokens:
            raise ContractError(f"{L} tokens exceed max_tokens={self._max_tokens}")
        pos = self.pos[:L] if self.pos is not None else None
        for block in self.blocks:
            x = block(x, pos=pos, weights_out=weights_out)
        return self.out_ln(x)


class SpatioTemporalTransformer(Module):
    """Alternating spatial (over tokens) and temporal (over frames) attention.

    Input is (B, T, L, d); per layer the spatial block runs on each frame and
    the temporal block on each token index, spatial first. Temporal attention
    uses learned per-frame-index embeddings (queries/keys only).
    """

    def __init__(self, config: AttentionConfig, rng: np.random.Generator,
                 temporal_positions: bool = True):
        self.spatial_blocks = [TransformerBlock(config, rng)
                               for _ in range(config.n_layers)]
        self.temporal_blocks = [TransformerBlock(config, rng)
                                for _ in range(config.n_layers)]
        self.out_ln = LayerNorm(config.d_model)
        self.time_pos = (Tensor(rng.standard_normal((config.max_tokens,
                                                     config.d_model)) * 0.02,
                                requires_grad=True)
                         if temporal_positions else None)
        self._max_tokens = config.max_tokens

    def __call__(self, x: Tensor, weights_out: list | None = None) -> Tensor:
        B, T, L, d = x.shape
        if T * L > self._max_tokens:
            raise ContractError(
                f"{T}x{L} tokens exceed max_tokens={self._max_tokens}")
        pos = self.time_pos[:T] if self.time_pos is not None else None
        for spatial, temporal in zip(self.spatial_blocks, self.temporal_blocks):
            x = spatial(x.reshape(B * T, L, d),
                        weights_out=weights_out).reshape(B, T, L, d)
            xt = x.transpose(0, 2, 1, 3).reshape(B * L, T, d)
            xt = temporal(xt, pos=pos, weights_out=weights_out)
            x = xt.reshape(B, L, T, d).transpose(0, 2, 1, 3)
        return self.out_ln(x)


class CrossAttentionBlock(Module):
    """Queries attend to a separate key/value stream, with residuals on the
    query side and an optional distance bias added to every layer's logits."""

    def __init__(self, config: AttentionConfig, rng: np.random.Generator):
        self.ln_q = LayerNorm(config.d_model)
        self.ln_kv = LayerNorm(config.d_model)
        self.attn = MultiHeadAttention(config, rng)
        self.ln2 = LayerNorm(config.d_model)
        self.ffn = FeedForward(config.d_model, config.d_ff, rng)

    def __call__(self, q: Tensor, kv: Tensor, bias: DistanceBias | None = None,
                 weights_out: list | None = None) -> Tensor:
        q = q + self.attn(self.ln_q(q), self.ln_kv(kv), bias=bias,
                          weights_out=weights_out)
        return q + self.ffn(self.ln2(q))


class CrossAttentionDecoder(Module):
    def __init__(self, config: AttentionConfig, rng: np.random.Generator):
        self.blocks = [CrossAttentionBlock(config, rng)
                       for _ in range(config.n_layers)]
        self.out_ln = LayerNorm(config.d_model)

    def __call__(self, q: Tensor, kv: Tensor, bias: DistanceBias | None = None,
                 weights_out: list | None = None) -> Tensor:
        for block in self.blocks:
            q = block(q, kv, bias=bias, weights_out=weights_out)
        return self.out_ln(q)


class PointCloudEncoder(Module):
    """Shared per-point MLP with a coordinatewise max pool.

    Consumes (.., P, 6) point+normal features; returns per-point features and
    a global feature that is invariant (bitwise) to point permutation and
    duplication.
    """

    def __init__(self, config: AttentionConfig, rng: np.random.Generator):
        d = config.d_model
        self.l1 = Linear(6, d, rng)
        self.l2 = Linear(d, d, rng)
        self.l3 = Linear(d, d, rng)

    def __call__(self, feats: Tensor) -> tuple[Tensor, Tensor]:
        h = self.l3(self.l2(self.l1(feats).relu()).relu())
        return h, h.max(axis=-2)

    def encode_cloud(self, cloud: ObjectPointCloud) -> tuple[Tensor, Tensor]:
        feats = np.concatenate([cloud.points, cloud.normals], axis=1)
        return self(Tensor(feats))


def cloud_features(cloud: ObjectPointCloud) -> np.ndarray:
    """(P, 6) xyz+normal array for batching into the encoder."""
    return np.concatenate([cloud.points, cloud.normals], axis=1)
