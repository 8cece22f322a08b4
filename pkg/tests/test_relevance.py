import numpy as np
import pytest

from audiocolor.data import AudioImagePair, DatasetManifest
from audiocolor.errors import ValidationError
from audiocolor.relevance import (LabeledPair, RelevanceNet, roc_auc,
                                  sample_negative_pairs)
from conftest import check_grad


def identity_net(dim=4):
    """Heads wired to the identity so cosine acts on the raw inputs."""
    net = RelevanceNet(dim, dim, np.random.default_rng(0), head_dim=dim)
    for head in (net.audio_head, net.visual_head):
        head.w.value = np.eye(dim)
        head.b.value[:] = 0.0
    return net


def test_equal_features_cosine_one_and_w0_gives_half(rng):
    net = identity_net()
    net.w.value[0] = 0.0
    f = rng.normal(size=(3, 4))
    cos, _ = net.cosine(f, f)
    assert np.allclose(cos, 1.0, atol=1e-7)
    r = net.forward(f, f)
    assert np.allclose(r, 0.5, atol=1e-12)


def test_orthogonal_features_cosine_zero():
    net = identity_net()
    u = np.array([[1.0, 0.0, 0.0, 0.0]])
    v = np.array([[0.0, 1.0, 0.0, 0.0]])
    cos, _ = net.cosine(u, v)
    assert abs(cos[0]) < 1e-9


def test_sigmoid_closed_form():
    net = identity_net()
    net.w.value[0] = 4.0
    net.bias.value[0] = 0.0
    f = np.array([[1.0, 2.0, 3.0, 4.0]])
    r = net.forward(f, f)  # cosine = 1
    assert abs(r[0] - 0.9820137900379085) < 1e-9


def test_cosine_scale_invariance(rng):
    net = identity_net()
    f = rng.normal(size=(1, 4))
    g = rng.normal(size=(1, 4))
    base, _ = net.cosine(f, g)
    for alpha in (0.1, 10.0):
        scaled, _ = net.cosine(alpha * f, g)
        assert abs(scaled[0] - base[0]) < 1e-6


def test_score_strictly_inside_unit_interval(rng):
    net = identity_net()
    net.w.value[0] = 1e6  # extreme weight; clip keeps sigmoid off 0/1
    f = rng.normal(size=(4, 4))
    r = net.forward(f, f)
    assert np.all(r > 0.0) and np.all(r < 1.0)
    r2 = net.forward(f, -f)
    assert np.all(r2 > 0.0) and np.all(r2 < 1.0)


def test_zero_norm_guarded(rng):
    net = identity_net()
    z = np.zeros((1, 4))
    f = rng.normal(size=(1, 4))
    cos, _ = net.cosine(z, f)
    assert np.isfinite(cos[0])
    r = net.forward(z, f)
    assert np.all(np.isfinite(r)) and 0.0 < r[0] < 1.0


def test_bce_gradient_wrt_w_matches_fd(rng):
    net = RelevanceNet(5, 6, rng, head_dim=4)
    f_a = rng.normal(size=(8, 5))
    f_v = rng.normal(size=(8, 6))
    h = rng.integers(0, 2, size=8).astype(np.float64)

    def loss_for_w(wv):
        old = net.w.value
        net.w.value = wv
        r = net.forward(f_a, f_v)
        out = float(-(h * np.log(r) + (1 - h) * np.log(1 - r)).mean())
        net.w.value = old
        return out

    net.zero_grad()
    r = net.forward(f_a, f_v, train=True)
    dr = (-h / r + (1 - h) / (1 - r)) / r.size
    net.backward(dr)
    check_grad(loss_for_w, net.w.value.copy(), net.w.grad, rng, n_checks=1)
    # and through the head parameters
    for name in ("audio_head/w", "visual_head/b"):
        p = net.named_params()[name]

        def loss_for_p(v, p=p):
            old = p.value
            p.value = v
            r = net.forward(f_a, f_v)
            out = float(-(h * np.log(r) + (1 - h) * np.log(1 - r)).mean())
            p.value = old
            return out

        check_grad(loss_for_p, p.value.copy(), p.grad, rng, n_checks=4)


def _manifest(n_videos, families=None):
    pairs = []
    for i in range(n_videos):
        fam = families[i % len(families)] if families else None
        pairs.append(AudioImagePair(image=f"img{i}.png", audio=f"aud{i}.wav",
                                    source_video=f"v{i}", family=fam,
                                    scene=f"{fam}:a" if fam else None))
    return DatasetManifest(pairs=pairs, split="train", seed=0)


def test_negative_pairs_cross_videos_and_balanced():
    m = _manifest(6)
    pairs = sample_negative_pairs(m, seed=0)
    pos = [p for p in pairs if p.h == 1]
    neg = [p for p in pairs if p.h == 0]
    assert len(pos) == len(neg) == 6
    for p in neg:
        assert m.pairs[p.image_index].source_video != m.pairs[p.audio_index].source_video


def test_negative_pairs_prefer_cross_family():
    m = _manifest(9, families=["disc", "box", "stripes"])
    pairs = sample_negative_pairs(m, seed=3)
    for p in pairs:
        if p.h == 0:
            assert m.pairs[p.image_index].family != m.pairs[p.audio_index].family


def test_negative_pairs_deterministic():
    m = _manifest(5)
    a = sample_negative_pairs(m, seed=7)
    b = sample_negative_pairs(m, seed=7)
    assert [(p.image_index, p.audio_index, p.h) for p in a] == \
           [(p.image_index, p.audio_index, p.h) for p in b]


def test_single_video_manifest_rejected():
    pairs = [AudioImagePair(image=f"i{k}.png", audio=f"a{k}.wav", source_video="v0")
             for k in range(3)]
    m = DatasetManifest(pairs=pairs, split="train", seed=0)
    with pytest.raises(ValidationError):
        sample_negative_pairs(m, seed=0)


def test_two_video_manifest_negatives_cross():
    m = _manifest(2)
    pairs = sample_negative_pairs(m, seed=0)
    for p in pairs:
        if p.h == 0:
            assert m.pairs[p.image_index].source_video != m.pairs[p.audio_index].source_video


def test_labeled_pair_validation():
    with pytest.raises(ValidationError):
        LabeledPair(image_index=0, audio_index=1, h=2)


def test_roc_auc_known_values():
    assert roc_auc(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0])) == 1.0
    assert roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([1, 1, 0, 0])) == 0.0
    # one inversion among 2x2 pairs -> 3/4
    assert roc_auc(np.array([0.9, 0.3, 0.4, 0.1]), np.array([1, 1, 0, 0])) == 0.75
    with pytest.raises(ValidationError):
        roc_auc(np.array([0.5, 0.6]), np.array([1, 1]))
