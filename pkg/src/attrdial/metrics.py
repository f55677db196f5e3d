"""Raw attribute scores: brightness, detail, realism, safety.

Brightness and detail are direct pixel statistics. Realism and safety are
similarity scores against text anchors in an embedding space; the space is
abstracted behind a provider interface so the package never needs a neural
encoder. The bundled SyntheticEmbedder projects interpretable image summary
statistics through a fixed orthonormal map, which preserves cosines from
feature space exactly and makes the designed synthetic classes separable
by construction.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Protocol

import numpy as np

from .errors import ContractError
from .image import Image, histogram256, to_grayscale, value_channel

MAX_DETAIL = math.log(256.0)

DEFAULT_EMBEDDER_SEED = 101
DEFAULT_SAFETY_THRESHOLD = 0.25

DEFAULT_POSITIVE_PROMPT = "a real photograph, realistic details and natural lighting"
DEFAULT_NEGATIVE_PROMPT = (
    "a cartoon image, a human-created artistic representation, "
    "such as an illustration or painting"
)
DEFAULT_UNSAFE_PROMPT = "unsafe red dominant pattern"


class AttributeKind(str, Enum):
    BRIGHTNESS = "brightness"
    DETAIL = "detail"
    REALISM = "realism"
    SAFETY = "safety"


# Validation ranges per kind. Safety's exact range depends on the threshold,
# so it gets the loose envelope covering every threshold in (0, 1).
_RANGES = {
    AttributeKind.BRIGHTNESS: (0.0, 1.0),
    AttributeKind.DETAIL: (0.0, MAX_DETAIL),
    AttributeKind.REALISM: (-2.0, 2.0),
    AttributeKind.SAFETY: (-2.0, 1.0),
}
_RANGE_SLACK = 1e-9


@dataclass(frozen=True)
class RawScore:
    kind: AttributeKind
    value: float

    def __post_init__(self):
        lo, hi = _RANGES[self.kind]
        if not (lo - _RANGE_SLACK <= self.value <= hi + _RANGE_SLACK):
            raise ContractError(f"{self.kind.value} score {self.value} outside [{lo}, {hi}]")


class EmbeddingProvider(Protocol):
    """Maps images and text into one shared vector space of fixed dimension."""

    dim: int

    def embed_image(self, img: Image) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class RealismPrompts:
    positive: str = DEFAULT_POSITIVE_PROMPT
    negative: str = DEFAULT_NEGATIVE_PROMPT

    def __post_init__(self):
        if not self.positive or not self.negative:
            raise ContractError("realism prompts must be non-empty")


@dataclass(frozen=True)
class SafetyConcept:
    """Unit-norm embedding of the unsafe concept plus the similarity threshold."""

    concept_vector: np.ndarray
    threshold: float = DEFAULT_SAFETY_THRESHOLD

    def __post_init__(self):
        v = np.asarray(self.concept_vector, dtype=np.float64)
        n = float(np.linalg.norm(v))
        if not math.isclose(n, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ContractError(f"concept vector must be unit norm, got {n}")
        if not (0.0 < self.threshold < 1.0):
            raise ContractError("safety threshold must lie strictly in (0, 1)")
        object.__setattr__(self, "concept_vector", v)
        v.setflags(write=False)

    @classmethod
    def default(cls, provider: EmbeddingProvider, threshold: float = DEFAULT_SAFETY_THRESHOLD) -> "SafetyConcept":
        vec = np.asarray(provider.embed_text(DEFAULT_UNSAFE_PROMPT), dtype=np.float64)
        return cls(concept_vector=vec / np.linalg.norm(vec), threshold=threshold)


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

def brightness(img: Image) -> RawScore:
    """Mean HSV value channel over the image, scaled to [0, 1]."""
    v = float(value_channel(img).mean()) / 255.0
    return RawScore(AttributeKind.BRIGHTNESS, v)


def detail(img: Image) -> RawScore:
    """Shannon entropy (nats) of the 256-level grayscale histogram."""
    p = histogram256(to_grayscale(img)).probabilities()
    nz = p[p > 0]
    return RawScore(AttributeKind.DETAIL, float(-(nz * np.log(nz)).sum()))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"vector shapes differ: {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ContractError("cosine similarity undefined for zero vectors")
    return float(a @ b) / (na * nb)


def realism(img: Image, provider: EmbeddingProvider, prompts: RealismPrompts = RealismPrompts()) -> RawScore:
    """Similarity to the photographic anchor minus similarity to the stylized anchor."""
    e_img = provider.embed_image(img)
    score = cosine_similarity(e_img, provider.embed_text(prompts.positive)) - cosine_similarity(
        e_img, provider.embed_text(prompts.negative)
    )
    return RawScore(AttributeKind.REALISM, score)


def safety(img: Image, provider: EmbeddingProvider, concept: SafetyConcept) -> RawScore:
    """Negated excess similarity to the unsafe concept; higher is safer."""
    sim = cosine_similarity(provider.embed_image(img), concept.concept_vector)
    return RawScore(AttributeKind.SAFETY, -(sim - concept.threshold))


def score_all(
    img: Image,
    provider: Optional[EmbeddingProvider] = None,
    prompts: Optional[RealismPrompts] = None,
    concept: Optional[SafetyConcept] = None,
    kinds: Optional[list[AttributeKind]] = None,
) -> Mapping[AttributeKind, RawScore]:
    """Score the requested attributes (all four by default).

    Brightness and detail never touch the provider; realism and safety
    require one.
    """
    kinds = list(AttributeKind) if kinds is None else list(kinds)
    out: dict[AttributeKind, RawScore] = {}
    for kind in kinds:
        if kind is AttributeKind.BRIGHTNESS:
            out[kind] = brightness(img)
        elif kind is AttributeKind.DETAIL:
            out[kind] = detail(img)
        elif kind is AttributeKind.REALISM:
            if provider is None:
                raise ContractError("realism scoring requires an embedding provider")
            out[kind] = realism(img, provider, prompts or RealismPrompts())
        elif kind is AttributeKind.SAFETY:
            if provider is None:
                raise ContractError("safety scoring requires an embedding provider")
            out[kind] = safety(img, provider, concept if concept is not None else SafetyConcept.default(provider))
    return out


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------

_N_FEATURES = 9

# Feature slots: 0..2 channel means, 3 brightness, 4..6 channel dominance,
# 7 texture (normalized gray entropy), 8 flatness (its complement).
_TEXTURE_WORDS = ("photograph", "realistic", "natural")
_FLAT_WORDS = ("cartoon", "illustration", "painting", "artistic", "drawing")
_UNSAFE_WORDS = ("unsafe", "nsfw", "red")


def image_features(img: Image) -> np.ndarray:
    """Interpretable 9-dim summary-statistic vector; never the zero vector."""
    p = img.pixels.astype(np.float64)
    means = p.mean(axis=(0, 1)) / 255.0
    bright = float(value_channel(img).mean()) / 255.0
    sums = p.sum(axis=(0, 1))
    total = float(sums.sum())
    dom = sums / total if total > 0 else np.full(3, 1.0 / 3.0)
    texture = detail(img).value / MAX_DETAIL
    return np.array([*means, bright, *dom, texture, 1.0 - texture], dtype=np.float64)


def _text_features(text: str) -> Optional[np.ndarray]:
    phi = np.zeros(_N_FEATURES, dtype=np.float64)
    low = text.lower()
    matched = False
    for w in _TEXTURE_WORDS:
        if w in low:
            phi[7] += 1.0
            matched = True
    for w in _FLAT_WORDS:
        if w in low:
            phi[8] += 1.0
            matched = True
    for w in _UNSAFE_WORDS:
        if w in low:
            phi += np.array([0, 0, 0, 0, 1.0, -0.5, -0.5, 0, 0])
            matched = True
    if "bright" in low:
        phi[3] += 1.0
        matched = True
    elif "dark" in low:
        phi[3] -= 1.0
        matched = True
    if not matched or float(np.linalg.norm(phi)) < 1e-12:
        return None
    return phi


class SyntheticEmbedder:
    """Deterministic stand-in for a vision-language encoder.

    Image features (see `image_features`) pass through a fixed orthonormal
    projection, so cosines between embeddings equal cosines between feature
    vectors exactly. Text maps onto the same feature space via a small
    keyword table, with a seeded hash fallback for unknown phrases.
    """

    def __init__(self, dim: int = 64, seed: int = DEFAULT_EMBEDDER_SEED):
        if dim < _N_FEATURES:
            raise ContractError(f"dim must be >= {_N_FEATURES}")
        self.dim = dim
        self.seed = seed
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xE3BED])))
        q, _ = np.linalg.qr(rng.standard_normal((dim, _N_FEATURES)))
        self._projection = q  # (dim, 9), orthonormal columns

    def embed_features(self, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (_N_FEATURES,):
            raise ContractError(f"feature vector must have shape ({_N_FEATURES},)")
        return self._projection @ phi

    def embed_image(self, img: Image) -> np.ndarray:
        return self.embed_features(image_features(img))

    def embed_text(self, text: str) -> np.ndarray:
        phi = _text_features(text)
        if phi is None:
            digest = hashlib.sha512(f"{self.seed}:{text}".encode("utf-8")).digest()
            words = np.frombuffer(digest, dtype="<u4").astype(np.float64)
            phi = (words[:_N_FEATURES] / 2**32) - 0.5
            if float(np.linalg.norm(phi)) < 1e-12:  # astronomically unlikely
                phi = np.eye(_N_FEATURES)[0]
        return self.embed_features(phi)


class FileBackedEmbedder:
    """Provider serving precomputed embeddings from an on-disk cache.

    Images are keyed by `Image.content_hash()`, text by the SHA-256 of its
    UTF-8 bytes. Missing entries are contract errors: the cache is expected
    to be built for exactly the corpus being scored.
    """

    def __init__(self, dim: int, entries: Mapping[str, np.ndarray]):
        self.dim = dim
        self._entries = {k: np.asarray(v, dtype=np.float64) for k, v in entries.items()}
        for k, v in self._entries.items():
            if v.shape != (dim,):
                raise ContractError(f"cache entry {k} has shape {v.shape}, expected ({dim},)")

    @classmethod
    def from_file(cls, path) -> "FileBackedEmbedder":
        from .store import read_embedding_cache

        dim, entries = read_embedding_cache(path)
        return cls(dim, entries)

    def embed_image(self, img: Image) -> np.ndarray:
        key = "img:" + img.content_hash()
        if key not in self._entries:
            raise ContractError(f"no cached embedding for image {key}")
        return self._entries[key]

    def embed_text(self, text: str) -> np.ndarray:
        key = "text:" + hashlib.sha256(text.encode("utf-8")).hexdigest()
        if key not in self._entries:
            raise ContractError(f"no cached embedding for text {text!r}")
        return self._entries[key]
