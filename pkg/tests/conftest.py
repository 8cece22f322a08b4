import numpy as np
import pytest


def central_diff(f, x, idx, eps=1e-6):
    """Central finite difference of scalar f at x[idx]."""
    xp = x.copy()
    xp[idx] += eps
    xm = x.copy()
    xm[idx] -= eps
    return (f(xp) - f(xm)) / (2.0 * eps)


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_grad(f, x, grad, rng, n_checks=8, eps=1e-6, tol=1e-4, floor=1e-8):
    """Spot-check an analytic gradient against central differences."""
    worst = 0.0
    for _ in range(n_checks):
        idx = tuple(int(rng.integers(0, s)) for s in x.shape)
        fd = central_diff(f, x, idx, eps=eps)
        if abs(fd) < floor and abs(grad[idx]) < floor:
            continue
        worst = max(worst, rel_err(fd, grad[idx], floor))
    assert worst < tol, f"gradient mismatch: rel err {worst}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
