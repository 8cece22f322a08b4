import numpy as np
import pytest

from audiocolor.audio import Spectrogram
from audiocolor.colorspace import RgbImage
from audiocolor.errors import ValidationError
from audiocolor.losses_metrics import semantic_loss
from audiocolor.semantics import (AudioEncoder, AudioFeature, AudioToVisual,
                                  ConditionProjector, SemanticsConfig,
                                  VisualSemanticEncoder, audio_to_visual,
                                  encode_audio, extract_visual_semantics,
                                  l2_normalize, l2_normalize_backward,
                                  project_condition)
from conftest import check_grad

CFG = SemanticsConfig(embed_dim=16, audio_dim=24, cond_dim=12, image_size=32,
                      visual_channels=(4, 8, 8, 16), audio_channels=(4, 8, 8, 16),
                      visual_fc_hidden=32)


def test_visual_semantics_unit_norm(rng):
    enc = VisualSemanticEncoder(CFG, rng)
    img = RgbImage(rng.uniform(0, 1, size=(32, 32, 3)))
    sem = extract_visual_semantics(img, enc)
    assert abs(np.linalg.norm(sem.f) - 1.0) < 1e-6
    assert sem.f.shape == (16,)


def test_visual_semantics_deterministic(rng):
    enc = VisualSemanticEncoder(CFG, rng)
    img = RgbImage(rng.uniform(0, 1, size=(32, 32, 3)))
    a = extract_visual_semantics(img, enc)
    b = extract_visual_semantics(img, enc)
    assert np.array_equal(a.f, b.f)


def test_zero_raw_vector_is_error_not_nan(rng):
    enc = VisualSemanticEncoder(CFG, rng)
    # zero the final linear layer: raw output becomes exactly zero
    final = enc.net.layers[-1]
    final.w.value[:] = 0.0
    final.b.value[:] = 0.0
    img = RgbImage(np.full((32, 32, 3), 0.5))
    with pytest.raises(ValidationError):
        extract_visual_semantics(img, enc)


def test_wrong_image_size_rejected(rng):
    enc = VisualSemanticEncoder(CFG, rng)
    with pytest.raises(ValidationError):
        enc.forward(rng.uniform(0, 1, size=(1, 16, 16, 3)))


def test_normalize_gradient_matches_fd(rng):
    x = rng.normal(size=(3, 8))
    dy = rng.normal(size=(3, 8))
    unit, cache = l2_normalize(x)
    dx = l2_normalize_backward(cache, dy)

    def loss(xx):
        u, _ = l2_normalize(xx)
        return float((u * dy).sum())

    check_grad(loss, x, dx, rng)


def test_normalize_then_loss_gradient(rng):
    # Eq-3 style composite: normalize then squared distance to a target
    x = rng.normal(size=(2, 10))
    target = rng.normal(size=(2, 10))

    def loss(xx):
        u, _ = l2_normalize(xx)
        return float(((u - target) ** 2).sum())

    unit, cache = l2_normalize(x)
    dx = l2_normalize_backward(cache, 2.0 * (unit - target))
    check_grad(loss, x, dx, rng)


def test_semantic_loss_zero_on_equal_inputs(rng):
    f = rng.normal(size=12)
    assert semantic_loss(f, f).value == 0.0


def test_audio_encoder_shape_contract(rng):
    enc = AudioEncoder(CFG, rng)
    spec = Spectrogram(values=rng.normal(size=(98, 64)) - 10.0, sample_rate=16000,
                       n_mels=64, hop=160)
    feat = encode_audio(spec, enc)
    assert isinstance(feat, AudioFeature)
    assert feat.f.shape == (24,)
    assert np.all(np.isfinite(feat.f))


def test_audio_encoder_output_length_invariant_to_duration(rng):
    enc = AudioEncoder(CFG, rng)
    short = Spectrogram(values=rng.normal(size=(48, 64)), sample_rate=16000,
                        n_mels=64, hop=160)
    full = Spectrogram(values=rng.normal(size=(98, 64)), sample_rate=16000,
                       n_mels=64, hop=160)
    assert encode_audio(short, enc).f.shape == encode_audio(full, enc).f.shape


def test_audio_encoder_validation(rng):
    enc = AudioEncoder(CFG, rng)
    with pytest.raises(ValidationError):
        enc.forward(np.full((1, 98, 64, 1), np.nan))
    with pytest.raises(ValidationError):
        enc.forward(rng.normal(size=(1, 8, 8, 1)))  # below receptive field


def test_a2v_projection(rng):
    a2v = AudioToVisual(CFG, rng)
    f = AudioFeature(f=rng.normal(size=24))
    out = audio_to_visual(f, a2v)
    assert out.f.shape == (16,)
    zero = audio_to_visual(AudioFeature(f=np.zeros(24)), a2v)
    assert np.all(np.isfinite(zero.f))
    with pytest.raises(ValidationError):
        a2v.forward(rng.normal(size=(1, 10)))


def test_project_condition(rng):
    mlp = ConditionProjector(CFG, rng)
    enc = VisualSemanticEncoder(CFG, rng)
    img = RgbImage(rng.uniform(0, 1, size=(32, 32, 3)))
    sem = extract_visual_semantics(img, enc)
    c = project_condition(sem, mlp)
    assert c.shape == (12,)
    assert np.array_equal(c, project_condition(sem, mlp))
    with pytest.raises(ValidationError):
        mlp.forward(rng.normal(size=(1, 7)))


def test_distinct_semantics_distinct_conditions(rng):
    mlp = ConditionProjector(CFG, rng)
    seen = set()
    for _ in range(100):
        v = rng.normal(size=16)
        v /= np.linalg.norm(v)
        c = project_condition(v, mlp)
        key = c.tobytes()
        assert key not in seen
        seen.add(key)
