import numpy as np
import pytest

from audiocolor.conditioning import (AffineHeads, RelevanceScore, dsg_backward,
                                     dsg_forward, dsg_inject, sg_backward,
                                     sg_forward, sg_inject)
from audiocolor.errors import ValidationError
from conftest import check_grad


def make_heads(rng, dc=6, C=4, randomize=True):
    heads = AffineHeads(dc, C, rng)
    if randomize:
        heads.gamma_l2.w.value = rng.normal(0, 0.3, heads.gamma_l2.w.value.shape)
        heads.beta_l2.w.value = rng.normal(0, 0.3, heads.beta_l2.w.value.shape)
    return heads


def test_heads_start_as_identity(rng):
    heads = AffineHeads(5, 3, rng)
    g, b = heads.forward(rng.normal(size=(4, 5)))
    assert np.allclose(g, 1.0)
    assert np.allclose(b, 0.0)


def test_constant_input_yields_beta(rng):
    heads = make_heads(rng)
    x = np.ones((2, 3, 5, 4)) * rng.normal(size=(2, 1, 1, 4))  # constant per channel
    c = rng.normal(size=(2, 6))
    out = sg_inject(x, c, heads)
    _, beta = heads.forward(c)
    assert np.allclose(out, np.broadcast_to(beta[:, None, None, :], out.shape), atol=1e-12)


def test_hand_computed_normalization(rng):
    heads = AffineHeads(2, 1, rng)  # identity heads: gamma=1, beta=0
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
    out = sg_inject(x, np.zeros(2), heads, eps=0.0)
    expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / np.sqrt(2.0 / 3.0)
    assert np.allclose(out[:, :, 0].ravel(), expected, atol=1e-12)


def test_affine_composition(rng):
    heads1 = AffineHeads(2, 1, rng)
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
    z = sg_inject(x, np.zeros(2), heads1, eps=0.0)
    heads2 = AffineHeads(2, 1, rng)
    heads2.gamma_l2.b.value[:] = 2.0
    heads2.beta_l2.b.value[:] = 1.0
    out = sg_inject(x, np.zeros(2), heads2, eps=0.0)
    assert np.allclose(out, 2.0 * z + 1.0, atol=1e-12)


def test_sg_output_statistics(rng):
    heads = make_heads(rng)
    x = rng.normal(size=(3, 8, 9, 4)) * 3.0 + 1.0
    c = rng.normal(size=(3, 6))
    out = sg_inject(x, c, heads)
    gamma, beta = heads.forward(c)
    mean = out.mean(axis=(1, 2))
    std = out.std(axis=(1, 2))
    sigma = x.std(axis=(1, 2))
    expected_std = np.abs(gamma) * sigma / np.sqrt(sigma**2 + 1e-5)
    assert np.abs(mean - beta).max() < 1e-5
    assert np.abs(std - expected_std).max() < 1e-5


def test_dsg_zero_relevance_is_bitwise_identity(rng):
    heads = make_heads(rng)
    x = rng.normal(size=(2, 4, 4, 4))
    c = rng.normal(size=(2, 6))
    out = dsg_inject(x, c, 0.0, heads)
    assert np.array_equal(out, x)
    out = dsg_inject(x, c, RelevanceScore(0.0), heads)
    assert np.array_equal(out, x)


def test_dsg_one_equals_sg(rng):
    heads = make_heads(rng)
    x = rng.normal(size=(2, 4, 4, 4))
    c = rng.normal(size=(2, 6))
    assert np.array_equal(dsg_inject(x, c, 1.0, heads), sg_inject(x, c, heads))


def test_dsg_half_is_mean_of_branches(rng):
    heads = make_heads(rng)
    x = rng.normal(size=(1, 2, 2, 3))
    c = rng.normal(size=(1, 6))
    heads3 = make_heads(np.random.default_rng(3), dc=6, C=3)
    sg = sg_inject(x, c, heads3)
    blended = dsg_inject(x, c, 0.5, heads3)
    assert np.allclose(blended, 0.5 * sg + 0.5 * x, atol=1e-12)


def test_dsg_is_affine_in_r(rng):
    heads = make_heads(rng)
    x = rng.normal(size=(1, 3, 3, 4))
    c = rng.normal(size=(1, 6))
    outs = {r: dsg_inject(x, c, r, heads) for r in (0.0, 0.25, 0.5, 0.75, 1.0)}
    slope = outs[1.0] - outs[0.0]
    for r in (0.25, 0.5, 0.75):
        assert np.allclose(outs[r], outs[0.0] + r * slope, atol=1e-10)


def test_mixed_batch_r_zero_rows_pass_through(rng):
    heads = make_heads(rng)
    x = rng.normal(size=(3, 4, 4, 4))
    c = rng.normal(size=(3, 6))
    r = np.array([0.0, 1.0, 0.5])
    out, _ = dsg_forward(x, c, r, heads)
    assert np.array_equal(out[0], x[0])
    assert not np.array_equal(out[1], x[1])


def test_gradients_match_finite_differences(rng):
    heads = make_heads(rng)
    x = rng.normal(size=(2, 3, 4, 4))
    c = rng.normal(size=(2, 6))
    r = np.array([0.8, 0.3])
    dy = rng.normal(size=x.shape)

    def loss_x(xx):
        y, _ = dsg_forward(xx, c, r, heads)
        return float((y * dy).sum())

    def loss_c(cc):
        y, _ = dsg_forward(x, cc, r, heads)
        return float((y * dy).sum())

    _, cache = dsg_forward(x, c, r, heads, train=True)
    dx, dc = dsg_backward(cache, dy)
    check_grad(loss_x, x, dx, rng)
    check_grad(loss_c, c, dc, rng)
    for name, p in heads.named_params().items():
        def loss_p(v, p=p):
            old = p.value
            p.value = v
            out = loss_x(x)
            p.value = old
            return out

        check_grad(loss_p, p.value.copy(), p.grad, rng, n_checks=4)


def test_sg_backward_matches_fd_zero_grad_free(rng):
    heads = make_heads(rng)
    x = rng.normal(size=(1, 4, 5, 4))
    c = rng.normal(size=(1, 6))
    dy = rng.normal(size=x.shape)
    _, cache = sg_forward(x, c, heads, train=True)
    dx, dc = sg_backward(cache, dy)

    def loss(xx):
        y, _ = sg_forward(xx, c, heads)
        return float((y * dy).sum())

    check_grad(loss, x, dx, rng)


def test_validation_errors(rng):
    heads = make_heads(rng)
    x = rng.normal(size=(2, 4, 4, 5))  # channel mismatch: heads built for 4
    with pytest.raises(ValidationError):
        sg_inject(x, rng.normal(size=(2, 6)), heads)
    x_ok = rng.normal(size=(2, 4, 4, 4))
    with pytest.raises(ValidationError):
        sg_inject(x_ok, np.full((2, 6), np.nan), heads)
    with pytest.raises(ValidationError):
        sg_inject(x_ok, rng.normal(size=(2, 3)), heads)
    with pytest.raises(ValidationError):
        dsg_inject(x_ok, rng.normal(size=(2, 6)), 1.5, heads)
    with pytest.raises(ValidationError):
        RelevanceScore(-0.1)
    with pytest.raises(ValidationError):
        RelevanceScore(np.nan)


def test_single_image_surface(rng):
    heads = make_heads(rng)
    x = rng.normal(size=(5, 6, 4))
    c = rng.normal(size=6)
    out = sg_inject(x, c, heads)
    assert out.shape == x.shape
