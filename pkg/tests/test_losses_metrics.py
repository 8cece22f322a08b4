import math

import numpy as np
import pytest

from audiocolor import losses_metrics as lm
from audiocolor.errors import ValidationError
from conftest import check_grad


def test_color_loss_zero_at_equal(rng):
    x = rng.normal(size=(2, 4, 4, 2))
    assert lm.color_loss(x, x).value == 0.0


def test_color_loss_quadratic_branch_closed_form():
    pred = np.full((3, 3, 2), 0.5)
    true = np.zeros((3, 3, 2))
    assert lm.color_loss(pred, true).value == pytest.approx(0.125)


def test_color_loss_linear_branch():
    pred = np.full((2, 2, 2), 2.0)
    true = np.zeros((2, 2, 2))
    assert lm.color_loss(pred, true).value == pytest.approx(1.5)  # |2|-0.5


def test_color_loss_symmetry(rng):
    a = rng.normal(size=(4, 4, 2))
    b = rng.normal(size=(4, 4, 2))
    assert lm.color_loss(a, b).value == pytest.approx(lm.color_loss(b, a).value)


def test_color_loss_shape_mismatch():
    with pytest.raises(ValidationError):
        lm.color_loss(np.zeros((2, 2, 2)), np.zeros((2, 3, 2)))


def test_color_loss_gradient(rng):
    pred = rng.normal(size=(3, 4, 2)) * 1.5  # spans both branches
    true = rng.normal(size=(3, 4, 2))
    g = lm.color_loss_grad(pred, true)
    check_grad(lambda p: lm.color_loss(p, true).value, pred, g, rng)


def test_semantic_loss_example():
    v = lm.semantic_loss(np.array([0.6, 0.8]), np.array([0.0, 1.0])).value
    assert v == pytest.approx(0.40)


def test_semantic_loss_gradient_exact_and_fd(rng):
    a = rng.normal(size=8)
    b = rng.normal(size=8)
    g = lm.semantic_loss_grad(a, b)
    assert np.allclose(g, 2 * (a - b))
    check_grad(lambda x: lm.semantic_loss(x, b).value, a, g, rng)


def test_semantic_loss_length_mismatch():
    with pytest.raises(ValidationError):
        lm.semantic_loss(np.zeros(3), np.zeros(4))


def test_relevance_loss_values():
    assert lm.relevance_loss(0.5, 1).value == pytest.approx(0.6931471805599453)
    assert lm.relevance_loss(0.999999, 1).value < 1e-5
    assert lm.relevance_loss(1e-6, 0).value < 1e-5


def test_relevance_loss_symmetry_identity(rng):
    r = float(rng.uniform(0.05, 0.95))
    lhs = lm.relevance_loss(r, 1).value + lm.relevance_loss(1 - r, 0).value
    assert lhs == pytest.approx(2 * lm.relevance_loss(r, 1).value)


def test_relevance_loss_domain():
    with pytest.raises(ValidationError):
        lm.relevance_loss(0.0, 0)
    with pytest.raises(ValidationError):
        lm.relevance_loss(1.0, 1)
    with pytest.raises(ValidationError):
        lm.relevance_loss(0.5, 2)


def test_relevance_loss_gradient(rng):
    r = rng.uniform(0.1, 0.9, size=6)
    h = rng.integers(0, 2, size=6).astype(float)
    g = lm.relevance_loss_grad(r, h)
    check_grad(lambda rr: lm.relevance_loss(rr, h).value, r, g, rng)


def test_psnr_identical_is_infinite(rng):
    img = rng.uniform(0, 1, size=(8, 8, 3))
    assert math.isinf(lm.psnr(img, img))


def test_psnr_uniform_error_closed_form():
    a = np.zeros((16, 16, 3))
    b = np.full((16, 16, 3), 1.0 / 255.0)
    assert lm.psnr(a, b) == pytest.approx(20 * math.log10(255.0), abs=0.01)


def test_psnr_symmetry_and_errors(rng):
    a = rng.uniform(0, 1, size=(8, 8, 3))
    b = rng.uniform(0, 1, size=(8, 8, 3))
    assert lm.psnr(a, b) == pytest.approx(lm.psnr(b, a))
    with pytest.raises(ValidationError):
        lm.psnr(a, b[:4])


def test_ssim_identical_and_constant(rng):
    img = rng.uniform(0, 1, size=(16, 16, 3))
    assert lm.ssim(img, img) == pytest.approx(1.0)
    const = np.full((16, 16, 3), 0.5)
    assert lm.ssim(const, const) == pytest.approx(1.0)


def test_ssim_matches_reference_implementation(rng):
    from skimage.metrics import structural_similarity

    for _ in range(20):
        a = rng.uniform(0, 1, size=(24, 24, 3))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        ours = lm.ssim(a, b)
        ref = structural_similarity(
            lm.luma(a), lm.luma(b), data_range=1.0, gaussian_weights=True,
            sigma=1.5, use_sample_covariance=False, win_size=11)
        assert abs(ours - ref) < 1e-4


def test_ssim_negative_image_low_similarity(rng):
    from skimage.metrics import structural_similarity

    base = np.zeros((32, 32, 3))
    base[::2] = 1.0  # high-contrast stripes
    inv = 1.0 - base
    ours = lm.ssim(base, inv)
    ref = structural_similarity(lm.luma(base), lm.luma(inv), data_range=1.0,
                                gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, win_size=11)
    assert ours < 0.5
    assert abs(ours - ref) < 1e-4


def test_ssim_window_too_large():
    with pytest.raises(ValidationError):
        lm.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_psnr_matches_reference(rng):
    from skimage.metrics import peak_signal_noise_ratio

    for _ in range(20):
        a = rng.uniform(0, 1, size=(12, 12, 3))
        b = rng.uniform(0, 1, size=(12, 12, 3))
        assert abs(lm.psnr(a, b) - peak_signal_noise_ratio(a, b, data_range=1.0)) < 1e-4


def test_perceptual_registry(rng):
    with pytest.raises(ValidationError):
        lm.get_perceptual("nope")
    lm.register_perceptual("toy", lambda a, b: float(np.abs(a - b).mean()))
    fn = lm.get_perceptual("toy")
    assert fn(np.zeros((2, 2, 3)), np.ones((2, 2, 3))) == 1.0
    assert lm.get_perceptual(None) is None


def test_report_jsonl_and_summary(tmp_path, rng):
    report = lm.MetricsReport(mode="full")
    report.add("v0", 30.0, 0.9, extra={"r": 0.8})
    report.add("v1", math.inf, 1.0)
    path = tmp_path / "report.jsonl"
    report.write_jsonl(path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 3  # two rows + summary
    summary = report.summary()
    assert summary["count"] == 2
    assert summary["psnr_infinite_count"] == 1
    assert summary["psnr_mean_db"] == pytest.approx(30.0)
    assert summary["ssim_mean"] == pytest.approx(0.95)
    assert "omitted" in summary["perceptual"]
    assert "full" in report.format_table()
