"""Scalar intensity -> 32-token conditioning sequence.

The scalar is sinusoidally embedded, pushed through a two-layer SiLU MLP,
and the resulting hidden vector is repeated into 32 tokens that each get
their own learnable positional embedding. Backward passes are written by
hand (numpy only) and validated against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError

TOKEN_COUNT = 32


@dataclass(frozen=True)
class SinusoidSpec:
    dim: int = 64
    base: float = 10000.0

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 2 != 0:
            raise ContractError("sinusoid dim must be a positive even integer")
        if self.base <= 1.0:
            raise ContractError("sinusoid base must exceed 1")


def sinusoid_batch(values: np.ndarray, spec: SinusoidSpec) -> np.ndarray:
    """Sinusoidal embedding of a batch of scalars, shape (B, dim).

    Pair j holds sin and cos of value / base^(2j / dim), so every (sin, cos)
    pair has unit norm and the full embedding has squared norm dim / 2.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    half = spec.dim // 2
    freqs = spec.base ** (-np.arange(half, dtype=np.float64) * 2.0 / spec.dim)
    args = v[:, None] * freqs[None, :]
    out = np.empty((v.size, spec.dim), dtype=np.float64)
    out[:, 0::2] = np.sin(args)
    out[:, 1::2] = np.cos(args)
    return out


def sinusoid(value: float, spec: SinusoidSpec) -> np.ndarray:
    """Sinusoidal embedding of one scalar, shape (dim,).

    Values outside [0, 1] are accepted; they extrapolate smoothly.
    """
    return sinusoid_batch(np.array([value]), spec)[0]


def silu(x: np.ndarray) -> np.ndarray:
    return x * _sigmoid(x)


def silu_grad(x: np.ndarray, sig: np.ndarray | None = None) -> np.ndarray:
    s = _sigmoid(x) if sig is None else sig
    return s * (1.0 + x * (1.0 - s))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: stable at both extremes and a single libm pass
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ValueEncoderParams:
    """Weights of one attribute's encoder. Mutable: the optimizer updates in place."""

    w1: np.ndarray  # (hidden, sinusoid_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (model_dim, hidden)
    b2: np.ndarray  # (model_dim,)
    pos_emb: np.ndarray  # (TOKEN_COUNT, model_dim)

    def __post_init__(self):
        h, de = self.w1.shape
        d, h2 = self.w2.shape
        if h2 != h or self.b1.shape != (h,) or self.b2.shape != (d,):
            raise ContractError("inconsistent encoder MLP shapes")
        if self.pos_emb.shape != (TOKEN_COUNT, d):
            raise ContractError(f"pos_emb must be ({TOKEN_COUNT}, model_dim)")
        for name, a in self.as_dict().items():
            if not np.all(np.isfinite(a)):
                raise ContractError(f"non-finite values in encoder parameter {name}")

    @property
    def model_dim(self) -> int:
        return self.w2.shape[0]

    @property
    def sinusoid_dim(self) -> int:
        return self.w1.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2, "pos_emb": self.pos_emb}


def init_value_encoder(
    spec: SinusoidSpec, hidden_dim: int, model_dim: int, rng: np.random.Generator
) -> ValueEncoderParams:
    """Fan-in scaled Gaussian MLP weights, zero biases, std-0.02 positional embeddings."""
    return ValueEncoderParams(
        w1=rng.standard_normal((hidden_dim, spec.dim)) / np.sqrt(spec.dim),
        b1=np.zeros(hidden_dim),
        w2=rng.standard_normal((model_dim, hidden_dim)) / np.sqrt(hidden_dim),
        b2=np.zeros(model_dim),
        pos_emb=rng.standard_normal((TOKEN_COUNT, model_dim)) * 0.02,
    )


@dataclass(frozen=True)
class ValueTokens:
    tokens: np.ndarray  # (TOKEN_COUNT, model_dim)

    def __post_init__(self):
        t = self.tokens
        if t.ndim != 2 or t.shape[0] != TOKEN_COUNT:
            raise ContractError(f"value tokens must have {TOKEN_COUNT} rows")
        if not np.all(np.isfinite(t)):
            raise ContractError("non-finite value tokens")


def encode_batch(values: np.ndarray, params: ValueEncoderParams, spec: SinusoidSpec):
    """Forward pass for a batch of scalars.

    Returns (tokens (B, 32, model_dim), cache); the cache feeds
    encode_batch_backward.
    """
    s = sinusoid_batch(values, spec)  # (B, De)
    a = s @ params.w1.T + params.b1  # (B, hidden)
    sig_a = _sigmoid(a)
    h1 = a * sig_a
    h = h1 @ params.w2.T + params.b2  # (B, d)
    tokens = h[:, None, :] + params.pos_emb[None, :, :]
    return tokens, (s, a, sig_a, h1)


def encode_batch_backward(cache, upstream: np.ndarray, params: ValueEncoderParams) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. encoder params, given d(loss)/d(tokens).

    The 32-way broadcast means the positional gradient is the upstream rows
    themselves (summed over the batch) while the MLP sees the token-sum.
    """
    s, a, sig_a, h1 = cache
    if upstream.shape != (s.shape[0], TOKEN_COUNT, params.model_dim):
        raise ContractError(f"upstream must have shape (B, {TOKEN_COUNT}, model_dim)")
    d_pos = upstream.sum(axis=0)
    d_h = upstream.sum(axis=1)  # (B, d)
    d_w2 = d_h.T @ h1
    d_b2 = d_h.sum(axis=0)
    d_h1 = d_h @ params.w2
    d_a = d_h1 * silu_grad(a, sig_a)
    d_w1 = d_a.T @ s
    d_b1 = d_a.sum(axis=0)
    return {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2, "pos_emb": d_pos}


def encode(value: float, params: ValueEncoderParams, spec: SinusoidSpec) -> ValueTokens:
    """Encode one intensity value into its 32-token sequence."""
    if params.sinusoid_dim != spec.dim:
        raise ContractError("params and sinusoid spec disagree on dimension")
    tokens, _ = encode_batch(np.array([value]), params, spec)
    return ValueTokens(tokens=tokens[0])


def encode_backward(
    value: float, params: ValueEncoderParams, spec: SinusoidSpec, upstream: np.ndarray
) -> dict[str, np.ndarray]:
    """Exact analytic gradients for a single value; keys match `as_dict`."""
    if upstream.shape != (TOKEN_COUNT, params.model_dim):
        raise ContractError(f"upstream must be ({TOKEN_COUNT}, model_dim)")
    _, cache = encode_batch(np.array([value]), params, spec)
    return encode_batch_backward(cache, upstream[None, :, :], params)


def compose(sequences: Sequence[ValueTokens]) -> np.ndarray:
    """Concatenate token sequences row-wise, preserving order. Shape (32 k, model_dim)."""
    if not sequences:
        raise ContractError("compose requires at least one token sequence")
    dims = {s.tokens.shape[1] for s in sequences}
    if len(dims) != 1:
        raise ContractError(f"mixed model dimensions: {sorted(dims)}")
    return np.concatenate([s.tokens for s in sequences], axis=0)
