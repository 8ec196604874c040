import numpy as np
import pytest

from gmark.codec import (
    detect_latent,
    detect_scores_batch,
    embed_batch,
    embed_latent,
    prepare,
)
from gmark.frequency import build_ring_pattern, inject_freq, score_freq
from gmark.keys import generate_key
from gmark.latents import sample_gaussian, sign_map
from gmark.shuffle import shuffle, unshuffle
from gmark.spatial import downsample, inject_spatial, score_spatial, upsample
from gmark.stats import bit_accuracy
from gmark.transforms import TransformSpec, apply_transform


@pytest.fixture(scope="module")
def km():
    return prepare(generate_key(seed=0))


def test_embed_detect_round_trip(km):
    z = sample_gaussian(km.key.latent_shape, 1)
    marked = embed_latent(z, km)
    result = detect_latent(marked, km)
    assert result.bit_accuracy == 1.0
    assert result.matched_bits == km.key.l
    assert result.watermarked
    assert result.fused_score is None


def test_detect_clean_noise_is_negative(km):
    result = detect_latent(sample_gaussian(km.key.latent_shape, 2), km)
    assert not result.watermarked
    assert 0.4 <= result.bit_accuracy <= 0.6


def test_different_carriers_same_message(km):
    a = embed_latent(sample_gaussian(km.key.latent_shape, 3), km)
    b = embed_latent(sample_gaussian(km.key.latent_shape, 4), km)
    assert np.any(a != b)
    assert detect_latent(a, km).bit_accuracy == 1.0
    assert detect_latent(b, km).bit_accuracy == 1.0


def test_embed_shape_mismatch(km):
    with pytest.raises(ValueError):
        embed_latent(np.zeros((4, 32, 32), dtype=np.float32), km)
    with pytest.raises(ValueError):
        detect_latent(np.zeros((4, 32, 32), dtype=np.float32), km)


def test_embed_batch_matches_single(km):
    zs = np.stack([sample_gaussian(km.key.latent_shape, 10 + i) for i in range(3)])
    batch = embed_batch(zs, km)
    for i in range(3):
        assert np.allclose(batch[i], embed_latent(zs[i], km), atol=1e-6)


def test_detect_equals_module_composition(km):
    """The codec layer must add nothing beyond the documented composition."""
    key = km.key
    z = sample_gaussian(key.latent_shape, 5)
    # embed by hand
    s = shuffle(upsample(key.bits, km.layout), key.cipher)
    fp = build_ring_pattern(key.latent_shape, s, key.freq_seed, key.ring_radius)
    marked = inject_freq(inject_spatial(z, s), fp)
    assert np.array_equal(marked, embed_latent(z, km))
    # detect by hand
    damaged = apply_transform(marked, TransformSpec.sign_flip(0.2, rng_seed=9))
    votes = downsample(unshuffle(sign_map(damaged), key.cipher), km.layout)
    r_s = score_spatial(votes, key.bits)
    r_f = score_freq(damaged, fp)
    acc = bit_accuracy(votes, key.bits)
    result = detect_latent(damaged, km)
    assert result.spatial_score == r_s
    assert result.freq_score == r_f
    assert result.bit_accuracy == acc
    assert np.array_equal(result.votes, votes)


def test_detect_scores_batch_matches_single(km):
    zs = np.stack(
        [embed_latent(sample_gaussian(km.key.latent_shape, 20 + i), km) for i in range(2)]
        + [sample_gaussian(km.key.latent_shape, 30 + i) for i in range(2)]
    )
    r_s, r_f, accs = detect_scores_batch(zs, km)
    for i in range(4):
        single = detect_latent(zs[i], km)
        assert r_s[i] == pytest.approx(single.spatial_score, rel=1e-12)
        assert r_f[i] == pytest.approx(single.freq_score, rel=1e-12)
        assert accs[i] == pytest.approx(single.bit_accuracy, rel=1e-12)


def test_summary_text(km):
    z = embed_latent(sample_gaussian(km.key.latent_shape, 40), km)
    text = detect_latent(z, km).summary()
    assert "bit accuracy" in text
    assert "watermarked   : yes" in text
