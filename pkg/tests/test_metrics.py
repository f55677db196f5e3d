import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import entropy as scipy_entropy

from attrdial.errors import ContractError
from attrdial.image import Image, histogram256, image_from_array, to_grayscale
from attrdial.metrics import (
    MAX_DETAIL,
    AttributeKind,
    RawScore,
    RealismPrompts,
    SafetyConcept,
    SyntheticEmbedder,
    brightness,
    cosine_similarity,
    detail,
    image_features,
    realism,
    safety,
    score_all,
)

from .conftest import random_image_array


def solid(rgb, h=4, w=4):
    return image_from_array(np.full((h, w, 3), rgb, dtype=np.uint8))


class StubProvider:
    """Fixed image embedding plus an explicit text table."""

    def __init__(self, image_vec, text_map, dim=None):
        self.image_vec = np.asarray(image_vec, dtype=np.float64)
        self.text_map = {k: np.asarray(v, dtype=np.float64) for k, v in text_map.items()}
        self.dim = dim or self.image_vec.size

    def embed_image(self, img):
        return self.image_vec

    def embed_text(self, text):
        return self.text_map[text]


# ---------------------------------------------------------------------------
# brightness / detail
# ---------------------------------------------------------------------------

def test_brightness_extremes_exact():
    assert brightness(solid([0, 0, 0])).value == 0.0
    assert brightness(solid([255, 255, 255])).value == 1.0
    assert brightness(solid([255, 0, 0])).value == 1.0  # V = max channel


def test_detail_constant_zero():
    assert detail(solid([13, 13, 13])).value == 0.0


def test_detail_uniform_256_levels():
    g = np.arange(256, dtype=np.uint8).reshape(16, 16)
    img = Image(pixels=np.repeat(g[:, :, None], 3, axis=2))
    assert detail(img).value == pytest.approx(math.log(256), abs=1e-12)


def test_detail_two_levels_even_split():
    g = np.array([[0, 200], [200, 0]], dtype=np.uint8)
    img = Image(pixels=np.repeat(g[:, :, None], 3, axis=2))
    assert detail(img).value == pytest.approx(math.log(2), abs=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_detail_matches_scipy_entropy(seed):
    rng = np.random.default_rng(seed)
    img = Image(pixels=random_image_array(rng))
    counts = histogram256(to_grayscale(img)).counts
    expected = scipy_entropy(counts[counts > 0])
    assert detail(img).value == pytest.approx(expected, abs=1e-12)
    assert detail(img).value <= MAX_DETAIL + 1e-12


def test_brightness_and_detail_permutation_invariant():
    rng = np.random.default_rng(3)
    arr = random_image_array(rng, 6, 6)
    flat = arr.reshape(-1, 3)
    shuffled = flat[rng.permutation(flat.shape[0])].reshape(arr.shape)
    a, b = Image(pixels=arr), Image(pixels=shuffled)
    assert brightness(a).value == brightness(b).value
    assert detail(a).value == detail(b).value


def test_detail_invariant_under_level_relabeling():
    # entropy depends only on the count multiset
    rng = np.random.default_rng(4)
    g = rng.integers(0, 8, (8, 8)).astype(np.uint8)
    relabel = np.array([200, 3, 90, 17, 255, 64, 128, 5], dtype=np.uint8)
    a = Image(pixels=np.repeat(g[:, :, None], 3, axis=2))
    b = Image(pixels=np.repeat(relabel[g][:, :, None], 3, axis=2))
    assert detail(a).value == pytest.approx(detail(b).value, abs=1e-12)


# ---------------------------------------------------------------------------
# cosine / realism / safety
# ---------------------------------------------------------------------------

def test_cosine_examples():
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0)
    assert cosine_similarity(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(
        math.sqrt(2) / 2
    )


def test_cosine_errors():
    with pytest.raises(ContractError):
        cosine_similarity(np.zeros(3), np.ones(3))
    with pytest.raises(ContractError):
        cosine_similarity(np.ones(3), np.ones(4))


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
@settings(max_examples=40, deadline=None)
def test_cosine_scaling_properties(seed, lam):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(8)
    assert cosine_similarity(a, lam * a) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity(a, -a) == pytest.approx(-1.0, abs=1e-12)


def test_realism_stub_difference():
    prompts = RealismPrompts(positive="pos", negative="neg")
    e_i = np.array([0.3, 0.1, math.sqrt(1 - 0.09 - 0.01)])
    provider = StubProvider(e_i, {"pos": [1, 0, 0], "neg": [0, 1, 0]})
    assert realism(solid([9, 9, 9]), provider, prompts).value == pytest.approx(0.2, abs=1e-12)


def test_realism_aligned_and_orthogonal():
    prompts = RealismPrompts(positive="pos", negative="neg")
    provider = StubProvider([1.0, 0.0], {"pos": [1.0, 0.0], "neg": [0.0, 1.0]})
    assert realism(solid([1, 1, 1]), provider, prompts).value == pytest.approx(1.0)


def test_realism_zero_when_prompts_collide():
    prompts = RealismPrompts(positive="same", negative="same2")
    rng = np.random.default_rng(0)
    vec = rng.standard_normal(5)
    provider = StubProvider(rng.standard_normal(5), {"same": vec, "same2": vec})
    assert realism(solid([7, 7, 7]), provider, prompts).value == pytest.approx(0.0, abs=1e-12)


def test_safety_threshold_cases():
    e_s = np.array([1.0, 0.0])
    concept = SafetyConcept(concept_vector=e_s, threshold=0.25)

    def at(sim):
        vec = np.array([sim, math.sqrt(1 - sim * sim)])
        return safety(solid([1, 1, 1]), StubProvider(vec, {}), concept).value

    assert at(0.25) == pytest.approx(0.0, abs=1e-12)
    assert at(0.35) == pytest.approx(-0.10, abs=1e-12)
    assert at(0.05) == pytest.approx(0.20, abs=1e-12)


def test_realism_safety_invariant_under_image_rescale():
    prompts = RealismPrompts(positive="pos", negative="neg")
    rng = np.random.default_rng(1)
    e_i = rng.standard_normal(6)
    texts = {"pos": rng.standard_normal(6), "neg": rng.standard_normal(6)}
    concept_vec = rng.standard_normal(6)
    concept = SafetyConcept(concept_vector=concept_vec / np.linalg.norm(concept_vec))
    img = solid([3, 3, 3])
    r1 = realism(img, StubProvider(e_i, texts), prompts).value
    r2 = realism(img, StubProvider(7.5 * e_i, texts), prompts).value
    s1 = safety(img, StubProvider(e_i, texts), concept).value
    s2 = safety(img, StubProvider(7.5 * e_i, texts), concept).value
    assert r1 == pytest.approx(r2, abs=1e-12)
    assert s1 == pytest.approx(s2, abs=1e-12)


def test_raw_score_range_enforced():
    with pytest.raises(ContractError):
        RawScore(AttributeKind.BRIGHTNESS, 1.5)
    with pytest.raises(ContractError):
        RawScore(AttributeKind.DETAIL, -0.1)


# ---------------------------------------------------------------------------
# score_all
# ---------------------------------------------------------------------------

def test_score_all_matches_individual_calls():
    rng = np.random.default_rng(5)
    provider = SyntheticEmbedder()
    prompts = RealismPrompts()
    concept = SafetyConcept.default(provider)
    for _ in range(25):
        img = Image(pixels=random_image_array(rng))
        out = score_all(img, provider, prompts, concept)
        assert set(out) == set(AttributeKind)
        assert out[AttributeKind.BRIGHTNESS].value == brightness(img).value
        assert out[AttributeKind.DETAIL].value == detail(img).value
        assert out[AttributeKind.REALISM].value == realism(img, provider, prompts).value
        assert out[AttributeKind.SAFETY].value == safety(img, provider, concept).value


def test_score_all_without_provider_for_direct_metrics():
    out = score_all(solid([0, 0, 0]), kinds=[AttributeKind.BRIGHTNESS, AttributeKind.DETAIL])
    assert out[AttributeKind.BRIGHTNESS].value == 0.0
    assert out[AttributeKind.DETAIL].value == 0.0


def test_score_all_requires_provider_for_similarity_metrics():
    with pytest.raises(ContractError):
        score_all(solid([1, 1, 1]), kinds=[AttributeKind.REALISM])


# ---------------------------------------------------------------------------
# SyntheticEmbedder
# ---------------------------------------------------------------------------

def test_synthetic_embedder_deterministic():
    rng = np.random.default_rng(6)
    img = Image(pixels=random_image_array(rng))
    a = SyntheticEmbedder(seed=5).embed_image(img)
    b = SyntheticEmbedder(seed=5).embed_image(img)
    assert np.array_equal(a, b)
    assert np.array_equal(
        SyntheticEmbedder(seed=5).embed_text("anything"),
        SyntheticEmbedder(seed=5).embed_text("anything"),
    )
    c = SyntheticEmbedder(seed=6).embed_image(img)
    assert not np.array_equal(a, c)


def test_synthetic_embedder_nonzero_vectors():
    emb = SyntheticEmbedder()
    assert np.linalg.norm(emb.embed_image(solid([0, 0, 0]))) > 0
    assert np.linalg.norm(emb.embed_text("")) > 0
    assert np.linalg.norm(emb.embed_text("bright dark")) > 0  # cancelling keywords


def test_synthetic_embedder_preserves_feature_cosines():
    # the image projection is orthonormal, so embedding cosines equal
    # feature-space cosines exactly
    emb = SyntheticEmbedder()
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = Image(pixels=random_image_array(rng))
        b = Image(pixels=random_image_array(rng))
        want = cosine_similarity(image_features(a), image_features(b))
        got = cosine_similarity(emb.embed_image(a), emb.embed_image(b))
        assert got == pytest.approx(want, abs=1e-12)


def test_default_prompts_order_realism_proxy():
    # high-entropy texture should score above a flat image with the
    # default prompts and the synthetic embedder
    emb = SyntheticEmbedder()
    rng = np.random.default_rng(9)
    textured = Image(pixels=np.repeat(rng.integers(0, 256, (16, 16, 1)), 3, axis=2).astype(np.uint8))
    flat = solid([128, 128, 128], 16, 16)
    assert realism(textured, emb).value > realism(flat, emb).value
