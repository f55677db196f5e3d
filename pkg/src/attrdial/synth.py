"""Procedural synthetic images with controllable attribute ground truth.

Each image is a gray texture whose level multiset is pinned by two knobs:
`brightness_knob` positions the level window (the window mean tracks the
knob), `detail_knob` sets how many distinct equiprobable-ish levels the
texture uses. The unsafe variant tints the texture red-dominant with a
fixed margin so the synthetic embedder separates it cleanly. Downstream
labels always come from measuring the generated image, never from the
knobs themselves; the knobs only steer the generator.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .image import Image, encode_image
from .store import sha256_bytes, write_manifest
from .streams import named_stream

CLASS_NAMES = ("stripes", "checker", "blobs", "flat")

# Maximum half-width of the gray-level window around the brightness target.
_LEVEL_SPREAD = 64
# Red tint factor for unsafe images: G = B = round(0.1 R).
_UNSAFE_TINT = 0.1


@dataclass(frozen=True)
class SynthSpec:
    class_id: int
    brightness_knob: float
    detail_knob: int
    unsafe_flag: bool = False
    size: tuple[int, int] = (32, 32)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.class_id < len(CLASS_NAMES):
            raise ContractError(f"class_id must be in [0, {len(CLASS_NAMES)})")
        if not 0.0 <= self.brightness_knob <= 1.0:
            raise ContractError("brightness_knob must lie in [0, 1]")
        if not 1 <= self.detail_knob <= 256:
            raise ContractError("detail_knob must lie in [1, 256]")
        if self.size[0] < 8 or self.size[1] < 8:
            raise ContractError("size must be at least 8x8")

    def as_row(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        return d

    @classmethod
    def from_row(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["size"] = tuple(d["size"])
        return cls(**d)


def _texture(spec: SynthSpec) -> np.ndarray:
    """Level-index field in [0, detail_knob), shape (h, w)."""
    w, h = spec.size
    k = spec.detail_knob
    n = w * h
    rng = named_stream(spec.seed, "corpus", index=spec.class_id)
    xs = np.arange(w)[None, :].repeat(h, axis=0)
    ys = np.arange(h)[:, None].repeat(w, axis=1)
    name = CLASS_NAMES[spec.class_id]
    if name == "flat":
        # contiguous bands with exactly-equal level counts whenever k divides n
        return ((np.arange(n) * k) // n).reshape(h, w)
    if name == "stripes":
        sw = int(rng.choice([1, 2, 3, 4]))
        horizontal = bool(rng.integers(0, 2))
        base = ys if horizontal else xs
        return (base // sw) % k
    if name == "checker":
        bs = int(rng.choice([2, 4, 8]))
        return (xs // bs + ys // bs) % k
    # blobs: smoothed noise, rank-quantized so level counts stay near-equal
    field = rng.standard_normal((h, w))
    for _ in range(4):
        field = (
            field
            + np.roll(field, 1, axis=0)
            + np.roll(field, -1, axis=0)
            + np.roll(field, 1, axis=1)
            + np.roll(field, -1, axis=1)
        ) / 5.0
    order = np.argsort(field.ravel(), kind="stable")
    tex = np.empty(n, dtype=np.int64)
    tex[order] = (np.arange(n) * k) // n
    return tex.reshape(h, w)


def _levels(spec: SynthSpec) -> np.ndarray:
    """The detail_knob gray levels, symmetric around 255 * brightness_knob."""
    k = spec.detail_knob
    center = 255.0 * spec.brightness_knob
    if k == 1:
        return np.array([np.floor(center + 0.5)], dtype=np.float64)
    half = min(center, 255.0 - center, float(_LEVEL_SPREAD))
    m = np.arange(k, dtype=np.float64)
    return np.floor(center - half + 2.0 * half * m / (k - 1) + 0.5)


def generate(spec: SynthSpec) -> Image:
    """Deterministic image for a spec; same spec always yields identical bytes."""
    tex = _texture(spec)
    gray = _levels(spec)[tex].astype(np.uint8)
    if spec.unsafe_flag:
        tinted = np.floor(gray.astype(np.float64) * _UNSAFE_TINT + 0.5).astype(np.uint8)
        pixels = np.stack([gray, tinted, tinted], axis=2)
    else:
        pixels = np.stack([gray, gray, gray], axis=2)
    return Image(pixels=np.ascontiguousarray(pixels))


@dataclass(frozen=True)
class CorpusConfig:
    count: int
    size: tuple[int, int] = (32, 32)
    classes: tuple[int, ...] = (0, 1, 2, 3)
    brightness_range: tuple[float, float] = (0.0, 1.0)
    detail_range: tuple[int, int] = (2, 64)
    unsafe_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ContractError("corpus count must be positive")
        if not self.classes:
            raise ContractError("at least one class required")
        if not 0.0 <= self.unsafe_fraction <= 1.0:
            raise ContractError("unsafe_fraction must lie in [0, 1]")
        lo, hi = self.brightness_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ContractError("brightness_range must be ordered within [0, 1]")
        dlo, dhi = self.detail_range
        if not 1 <= dlo <= dhi <= 256:
            raise ContractError("detail_range must be ordered within [1, 256]")


def draw_specs(cfg: CorpusConfig) -> list[SynthSpec]:
    """The corpus spec sequence: classes cycle, knobs stream from one seed."""
    rng = named_stream(cfg.seed, "corpus")
    specs = []
    for i in range(cfg.count):
        b = float(rng.uniform(cfg.brightness_range[0], cfg.brightness_range[1]))
        k = int(rng.integers(cfg.detail_range[0], cfg.detail_range[1] + 1))
        unsafe = bool(rng.uniform() < cfg.unsafe_fraction)
        pattern_seed = int(rng.integers(0, 2**31))
        specs.append(
            SynthSpec(
                class_id=cfg.classes[i % len(cfg.classes)],
                brightness_knob=b,
                detail_knob=k,
                unsafe_flag=unsafe,
                size=cfg.size,
                seed=pattern_seed,
            )
        )
    return specs


def generate_corpus(cfg: CorpusConfig, out_dir) -> list[dict]:
    """Write PNGs plus a manifest under out_dir; returns the manifest rows.

    Rows carry the generator spec, a path relative to the manifest, and the
    SHA-256 of the file bytes.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, spec in enumerate(draw_specs(cfg)):
        png = encode_image(generate(spec))
        rel = f"images/img_{i:05d}.png"
        (out_dir / rel).write_bytes(png)
        rows.append({"path": rel, "hash": sha256_bytes(png), "spec": spec.as_row()})
    write_manifest(out_dir / "manifest.jsonl", rows)
    return rows
