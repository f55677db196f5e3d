"""Pixel-space DDPM with attention-based conditioning.

The denoiser turns the noisy image into patch tokens, injects a timestep
embedding, runs one cross-attention block whose keys/values come from the
conditioning sequence (class tokens followed by per-attribute value-token
blocks), then a two-layer SiLU MLP trunk and an output projection back to
patches. Everything is numpy float64 with hand-written backward passes;
both the denoiser and the value encoders receive gradients, since at this
scale there is no pretrained frozen base to adapt.

All randomness flows through the named streams in `streams.py`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .config import ModelConfig, ScheduleConfig, TrainConfig
from .encoder import (
    TOKEN_COUNT,
    _sigmoid,
    SinusoidSpec,
    ValueEncoderParams,
    encode_batch,
    encode_batch_backward,
    init_value_encoder,
    silu,
    silu_grad,
    sinusoid_batch,
)
from .errors import ContractError, TrainingDivergenceError
from .image import Image
from .metrics import AttributeKind
from .streams import named_stream


@dataclass(frozen=True)
class NoiseSchedule:
    steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        b = self.betas
        if b.shape != (self.steps,) or np.any(b <= 0) or np.any(b >= 1):
            raise ContractError("betas must be in (0, 1) with one entry per step")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ContractError("alpha_bars must be strictly decreasing")
        if self.alpha_bars[0] < 0.99:
            raise ContractError("alpha_bar at step 0 should stay close to 1")

    @classmethod
    def from_config(cls, cfg: ScheduleConfig) -> "NoiseSchedule":
        betas = np.linspace(cfg.beta_start, cfg.beta_end, cfg.steps)
        alphas = 1.0 - betas
        return cls(steps=cfg.steps, betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def q_sample(z0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward noising: sqrt(a_bar_t) z0 + sqrt(1 - a_bar_t) eps."""
    if eps.shape != z0.shape:
        raise ContractError("eps must match z0's shape")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr >= sched.steps):
        raise ContractError(f"timestep out of range [0, {sched.steps})")
    ab = sched.alpha_bars[t_arr]
    if t_arr.ndim > 0:  # broadcast per batch element
        ab = ab.reshape((-1,) + (1,) * (z0.ndim - 1))
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class DenoiserParams:
    """All denoiser weights. Mutable: the optimizer updates arrays in place."""

    w_in: np.ndarray
    b_in: np.ndarray
    w_time: np.ndarray
    b_time: np.ndarray
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    w_m1: np.ndarray
    b_m1: np.ndarray
    w_m2: np.ndarray
    b_m2: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self.__dict__)


@dataclass
class ModelParams:
    denoiser: DenoiserParams
    class_emb: np.ndarray  # (n_classes, class_tokens, model_dim)
    encoders: dict[AttributeKind, ValueEncoderParams]
    attributes: tuple[AttributeKind, ...]

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {f"denoiser.{k}": v for k, v in self.denoiser.as_dict().items()}
        out["class_emb"] = self.class_emb
        for kind in self.attributes:
            for k, v in self.encoders[kind].as_dict().items():
                out[f"encoder.{kind.value}.{k}"] = v
        return out


def init_model_params(
    mcfg: ModelConfig, attributes: Sequence[AttributeKind], seed: int
) -> ModelParams:
    rng = named_stream(seed, "init")
    d, pd, mh = mcfg.model_dim, mcfg.patch_dim, mcfg.mlp_hidden

    def w(rows, cols):
        return rng.standard_normal((rows, cols)) / np.sqrt(rows)

    dp = DenoiserParams(
        w_in=w(pd, d), b_in=np.zeros(d),
        w_time=w(d, d), b_time=np.zeros(d),
        w_q=w(d, d), b_q=np.zeros(d),
        w_k=w(d, d), b_k=np.zeros(d),
        w_v=w(d, d), b_v=np.zeros(d),
        w_o=w(d, d), b_o=np.zeros(d),
        w_m1=w(d, mh), b_m1=np.zeros(mh),
        w_m2=w(mh, d), b_m2=np.zeros(d),
        w_out=w(d, pd), b_out=np.zeros(pd),
    )
    class_emb = rng.standard_normal((mcfg.n_classes, mcfg.class_tokens, d)) * 0.02
    spec = SinusoidSpec(dim=mcfg.enc_sinusoid_dim, base=mcfg.sinusoid_base)
    encoders = {
        kind: init_value_encoder(spec, mcfg.enc_hidden, d, rng) for kind in attributes
    }
    return ModelParams(
        denoiser=dp, class_emb=class_emb, encoders=encoders, attributes=tuple(attributes)
    )


# ---------------------------------------------------------------------------
# Patch helpers
# ---------------------------------------------------------------------------

def patchify(z: np.ndarray, ps: int) -> np.ndarray:
    b, h, w, c = z.shape
    z = z.reshape(b, h // ps, ps, w // ps, ps, c)
    return z.transpose(0, 1, 3, 2, 4, 5).reshape(b, (h // ps) * (w // ps), ps * ps * c)


def unpatchify(p: np.ndarray, ps: int, h: int, w: int, c: int) -> np.ndarray:
    b = p.shape[0]
    p = p.reshape(b, h // ps, w // ps, ps, ps, c)
    return p.transpose(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------

def build_conditioning(mp: ModelParams, mcfg: ModelConfig, class_ids: np.ndarray, intensities: np.ndarray):
    """Class tokens followed by each attribute's value tokens: (B, S, d)."""
    class_ids = np.asarray(class_ids)
    if np.any(class_ids < 0) or np.any(class_ids >= mcfg.n_classes):
        raise ContractError("class id out of range")
    intensities = np.atleast_2d(np.asarray(intensities, dtype=np.float64))
    if intensities.shape != (class_ids.size, len(mp.attributes)):
        raise ContractError("intensities must be (batch, n_attributes)")
    spec = SinusoidSpec(dim=mcfg.enc_sinusoid_dim, base=mcfg.sinusoid_base)
    parts = [mp.class_emb[class_ids]]
    caches = []
    for i, kind in enumerate(mp.attributes):
        tokens, cache = encode_batch(intensities[:, i], mp.encoders[kind], spec)
        parts.append(tokens)
        caches.append(cache)
    return np.concatenate(parts, axis=1), caches


# ---------------------------------------------------------------------------
# Denoiser forward / backward
# ---------------------------------------------------------------------------

def _proj(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Token-wise affine map as one flat GEMM; x is (..., in), w is (in, out)."""
    return (x.reshape(-1, x.shape[-1]) @ w + b).reshape(*x.shape[:-1], w.shape[1])


def _mm_t(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x @ w.T over the trailing axis as one flat GEMM."""
    return (x.reshape(-1, x.shape[-1]) @ w.T).reshape(*x.shape[:-1], w.shape[0])


def denoiser_forward(
    dp: DenoiserParams,
    z_t: np.ndarray,
    cond: np.ndarray,
    t: np.ndarray,
    mcfg: ModelConfig,
    want_cache: bool = False,
):
    """Noise prediction for a batch. Returns eps_hat or (eps_hat, cache)."""
    b, h, w, c = z_t.shape
    if (h, w, c) != (mcfg.image_size, mcfg.image_size, mcfg.channels):
        raise ContractError(f"z_t shape {z_t.shape[1:]} does not match model config")
    if cond.ndim != 3 or cond.shape[0] != b or cond.shape[2] != mcfg.model_dim:
        raise ContractError("conditioning must be (batch, seq, model_dim)")
    nh, dh = mcfg.n_heads, mcfg.head_dim
    ps = mcfg.patch_size
    scale = 1.0 / np.sqrt(dh)

    x0 = patchify(z_t, ps)  # (B, P, pd)
    x1 = _proj(x0, dp.w_in, dp.b_in)
    temb = sinusoid_batch(
        np.asarray(t, dtype=np.float64).reshape(-1),
        SinusoidSpec(dim=mcfg.model_dim, base=mcfg.sinusoid_base),
    )
    tf = temb @ dp.w_time + dp.b_time  # (B, d)
    x2 = x1 + tf[:, None, :]

    q = _proj(x2, dp.w_q, dp.b_q)
    k = _proj(cond, dp.w_k, dp.b_k)
    v = _proj(cond, dp.w_v, dp.b_v)
    p_tok, s_tok = q.shape[1], k.shape[1]
    qh = q.reshape(b, p_tok, nh, dh).transpose(0, 2, 1, 3)  # (B, H, P, dh)
    kh = k.reshape(b, s_tok, nh, dh).transpose(0, 2, 1, 3)
    vh = v.reshape(b, s_tok, nh, dh).transpose(0, 2, 1, 3)
    logits = (qh @ kh.transpose(0, 1, 3, 2)) * scale  # (B, H, P, S)
    logits -= logits.max(axis=-1, keepdims=True)
    expl = np.exp(logits)
    attn = expl / expl.sum(axis=-1, keepdims=True)
    ctx = (attn @ vh).transpose(0, 2, 1, 3).reshape(b, p_tok, mcfg.model_dim)
    x3 = x2 + _proj(ctx, dp.w_o, dp.b_o)

    m1 = _proj(x3, dp.w_m1, dp.b_m1)
    sig1 = _sigmoid(m1)
    m2 = m1 * sig1
    x4 = x3 + _proj(m2, dp.w_m2, dp.b_m2)
    y = _proj(x4, dp.w_out, dp.b_out)
    eps_hat = unpatchify(y, ps, h, w, c)
    if not want_cache:
        return eps_hat
    cache = (x0, x2, temb, cond, qh, kh, vh, attn, ctx, x3, m1, sig1, m2, x4)
    return eps_hat, cache


def denoiser_backward(dp: DenoiserParams, cache, d_eps_hat: np.ndarray, mcfg: ModelConfig):
    """Backward through the denoiser. Returns (grads keyed like as_dict, d_cond)."""
    x0, x2, temb, cond, qh, kh, vh, attn, ctx, x3, m1, sig1, m2, x4 = cache
    b = x0.shape[0]
    nh, dh = mcfg.n_heads, mcfg.head_dim
    scale = 1.0 / np.sqrt(dh)
    p_tok, s_tok = qh.shape[2], kh.shape[2]

    def flat(a):  # merge batch and token axes so grads run on BLAS
        return a.reshape(-1, a.shape[-1])

    dy = patchify(d_eps_hat, mcfg.patch_size)  # (B, P, pd)
    g = {}
    g["w_out"] = flat(x4).T @ flat(dy)
    g["b_out"] = dy.sum(axis=(0, 1))
    dx4 = _mm_t(dy, dp.w_out)

    dm3 = dx4
    g["w_m2"] = flat(m2).T @ flat(dm3)
    g["b_m2"] = dm3.sum(axis=(0, 1))
    dm2 = _mm_t(dm3, dp.w_m2)
    dm1 = dm2 * silu_grad(m1, sig1)
    g["w_m1"] = flat(x3).T @ flat(dm1)
    g["b_m1"] = dm1.sum(axis=(0, 1))
    dx3 = dx4 + _mm_t(dm1, dp.w_m1)

    dattn_out = dx3
    g["w_o"] = flat(ctx).T @ flat(dattn_out)
    g["b_o"] = dattn_out.sum(axis=(0, 1))
    dctx = _mm_t(dattn_out, dp.w_o).reshape(b, p_tok, nh, dh).transpose(0, 2, 1, 3)

    d_attn = dctx @ vh.transpose(0, 1, 3, 2)  # (B, H, P, S)
    dvh = attn.transpose(0, 1, 3, 2) @ dctx  # (B, H, S, dh)
    d_logits = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
    dqh = (d_logits @ kh) * scale
    dkh = (d_logits.transpose(0, 1, 3, 2) @ qh) * scale

    dq = dqh.transpose(0, 2, 1, 3).reshape(b, p_tok, mcfg.model_dim)
    dk = dkh.transpose(0, 2, 1, 3).reshape(b, s_tok, mcfg.model_dim)
    dv = dvh.transpose(0, 2, 1, 3).reshape(b, s_tok, mcfg.model_dim)

    g["w_q"] = flat(x2).T @ flat(dq)
    g["b_q"] = dq.sum(axis=(0, 1))
    g["w_k"] = flat(cond).T @ flat(dk)
    g["b_k"] = dk.sum(axis=(0, 1))
    g["w_v"] = flat(cond).T @ flat(dv)
    g["b_v"] = dv.sum(axis=(0, 1))
    d_cond = _mm_t(dk, dp.w_k) + _mm_t(dv, dp.w_v)

    dx2 = dx3 + _mm_t(dq, dp.w_q)
    dtf = dx2.sum(axis=1)  # (B, d)
    g["w_time"] = temb.T @ dtf
    g["b_time"] = dtf.sum(axis=0)
    g["w_in"] = flat(x0).T @ flat(dx2)
    g["b_in"] = dx2.sum(axis=(0, 1))
    return g, d_cond


def denoise(
    dp: DenoiserParams, z_t: np.ndarray, cond: np.ndarray, t: int, mcfg: ModelConfig
) -> np.ndarray:
    """Single-image noise prediction; cond is (seq, model_dim)."""
    if z_t.ndim != 3:
        raise ContractError("z_t must be (height, width, channels)")
    if cond.ndim != 2:
        raise ContractError("cond must be (seq, model_dim)")
    return denoiser_forward(dp, z_t[None], cond[None], np.array([t]), mcfg)[0]


# ---------------------------------------------------------------------------
# Loss and training
# ---------------------------------------------------------------------------

def eq_loss(eps: np.ndarray, eps_hat: np.ndarray) -> float:
    """Mean squared error between true and predicted noise."""
    if eps.shape != eps_hat.shape:
        raise ContractError("eps and eps_hat shapes differ")
    diff = eps_hat - eps
    return float(np.mean(diff * diff))


def loss_and_grads(
    mp: ModelParams,
    mcfg: ModelConfig,
    sched: NoiseSchedule,
    z0: np.ndarray,
    class_ids: np.ndarray,
    intensities: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
):
    """Forward + backward over a batch.

    Returns (loss, grads dict keyed like ModelParams.as_dict, d_value_tokens)
    where d_value_tokens is the gradient flowing into the concatenated
    value-token block (useful for conditioning diagnostics).
    """
    z_t = q_sample(z0, t, eps, sched)
    cond, enc_caches = build_conditioning(mp, mcfg, class_ids, intensities)
    eps_hat, cache = denoiser_forward(mp.denoiser, z_t, cond, t, mcfg, want_cache=True)
    loss = eq_loss(eps, eps_hat)

    d_eps_hat = 2.0 * (eps_hat - eps) / eps.size
    dgrads, d_cond = denoiser_backward(mp.denoiser, cache, d_eps_hat, mcfg)
    grads = {f"denoiser.{k}": v for k, v in dgrads.items()}

    ct = mcfg.class_tokens
    d_class = np.zeros_like(mp.class_emb)
    np.add.at(d_class, np.asarray(class_ids), d_cond[:, :ct, :])
    grads["class_emb"] = d_class

    offset = ct
    d_value_tokens = d_cond[:, ct:, :]
    for i, kind in enumerate(mp.attributes):
        upstream = d_cond[:, offset:offset + TOKEN_COUNT, :]
        enc_g = encode_batch_backward(enc_caches[i], upstream, mp.encoders[kind])
        for k, v in enc_g.items():
            grads[f"encoder.{kind.value}.{k}"] = v
        offset += TOKEN_COUNT
    return loss, grads, d_value_tokens


class Adam:
    """Plain Adam over a named parameter dict; state keyed by parameter name."""

    def __init__(self, params: Mapping[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def update(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train_step(
    mp: ModelParams,
    opt: Adam,
    mcfg: ModelConfig,
    sched: NoiseSchedule,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    lr: float,
    noise_rng: np.random.Generator,
    ts_rng: np.random.Generator,
) -> float:
    """One stochastic update on a (z0, class_ids, intensities) batch."""
    z0, class_ids, intensities = batch
    t = ts_rng.integers(0, sched.steps, size=z0.shape[0])
    eps = noise_rng.standard_normal(z0.shape)
    loss, grads, _ = loss_and_grads(mp, mcfg, sched, z0, class_ids, intensities, t, eps)
    opt.update(mp.as_dict(), grads, lr)
    return loss


def train(
    mp: ModelParams,
    mcfg: ModelConfig,
    sched: NoiseSchedule,
    z0: np.ndarray,
    class_ids: np.ndarray,
    intensities: np.ndarray,
    tcfg: TrainConfig,
    log_every: int = 0,
) -> np.ndarray:
    """Full training loop; mutates `mp`. Returns the per-step loss curve.

    Batch indices and timesteps come from the "timestep" stream, forward
    noise from the "noise" stream, so a seed pins the whole trajectory.
    """
    n = z0.shape[0]
    if n < 1:
        raise ContractError("empty training set")
    if np.any(intensities < 0) or np.any(intensities > 1):
        raise ContractError("normalized intensities must lie in [0, 1]")
    noise_rng = named_stream(tcfg.seed, "noise")
    ts_rng = named_stream(tcfg.seed, "timestep")
    opt = Adam(mp.as_dict())
    losses = np.empty(tcfg.total_steps)
    for step in range(tcfg.total_steps):
        idx = ts_rng.integers(0, n, size=min(tcfg.batch_size, n))
        batch = (z0[idx], class_ids[idx], intensities[idx])
        loss = train_step(mp, opt, mcfg, sched, batch, tcfg.learning_rate, noise_rng, ts_rng)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(step, loss)
        losses[step] = loss
        if log_every and (step + 1) % log_every == 0:
            recent = losses[max(0, step - log_every + 1):step + 1].mean()
            print(f"step {step + 1}/{tcfg.total_steps} loss {recent:.5f}")
    return losses


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_batch(
    mp: ModelParams,
    mcfg: ModelConfig,
    sched: NoiseSchedule,
    class_ids: np.ndarray,
    intensities: np.ndarray,
    seeds: Sequence[int],
) -> list[Image]:
    """Ancestral DDPM sampling; each image draws from its own seeded stream."""
    class_ids = np.asarray(class_ids)
    b = class_ids.size
    if len(seeds) != b:
        raise ContractError("one seed per sampled image required")
    shape = (mcfg.image_size, mcfg.image_size, mcfg.channels)
    rngs = [named_stream(int(s), "sampler") for s in seeds]
    z = np.stack([r.standard_normal(shape) for r in rngs])
    cond, _ = build_conditioning(mp, mcfg, class_ids, intensities)
    for t in range(sched.steps - 1, -1, -1):
        eps_hat = denoiser_forward(mp.denoiser, z, cond, np.full(b, t), mcfg)
        coef = sched.betas[t] / np.sqrt(1.0 - sched.alpha_bars[t])
        z = (z - coef * eps_hat) / np.sqrt(sched.alphas[t])
        if t > 0:
            sigma = np.sqrt(sched.betas[t])
            z += sigma * np.stack([r.standard_normal(shape) for r in rngs])
    z = np.clip(z, -1.0, 1.0)
    pixels = np.clip(np.floor((z + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)
    if mcfg.channels == 1:
        pixels = np.repeat(pixels, 3, axis=3)
    return [Image(pixels=pixels[i]) for i in range(b)]


def sample(
    mp: ModelParams,
    mcfg: ModelConfig,
    sched: NoiseSchedule,
    class_id: int,
    intensities: Mapping[AttributeKind, float],
    seed: int,
) -> Image:
    """Sample one image at the given per-attribute intensities."""
    vec = intensity_vector(mp.attributes, intensities)
    return sample_batch(mp, mcfg, sched, np.array([class_id]), vec[None, :], [seed])[0]


def intensity_vector(
    attributes: Sequence[AttributeKind], intensities: Mapping[AttributeKind, float]
) -> np.ndarray:
    """Order a {kind: value} mapping into the model's attribute order."""
    extra = set(intensities) - set(attributes)
    if extra:
        raise ContractError(f"model is not conditioned on {sorted(k.value for k in extra)}")
    missing = set(attributes) - set(intensities)
    if missing:
        raise ContractError(f"missing intensity for {sorted(k.value for k in missing)}")
    return np.array([float(intensities[k]) for k in attributes], dtype=np.float64)


def images_to_unit(images: Sequence[Image]) -> np.ndarray:
    """Stack Images into a float64 (B, H, W, C) tensor scaled to [-1, 1]."""
    return np.stack([img.pixels.astype(np.float64) / 127.5 - 1.0 for img in images])
