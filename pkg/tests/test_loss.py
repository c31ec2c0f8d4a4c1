import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roiattn.loss import LossConfig, bce, repulsive_loss, total_loss


def test_bce_examples():
    eps = 1e-7
    assert bce(1 - eps, 1, eps) == pytest.approx(0.0, abs=1e-6)
    assert abs(bce(0.5, 1) - math.log(2)) < 1e-12
    assert bce(0.9, 0) == pytest.approx(-math.log(0.1), abs=1e-12)


def test_bce_clamps():
    assert np.isfinite(bce(0.0, 1)) and np.isfinite(bce(1.0, 0))


def orthogonal_rows(k, d):
    X = np.zeros((k, d))
    X[0] = 1.0
    for i in range(1, k):
        X[i, i - 1] = float(i)
    return X


def test_repulsive_examples():
    X = np.tile(np.arange(1.0, 5.0), (5, 1))
    X[0] = [9, -1, 0, 2]
    assert abs(repulsive_loss(X) - 1.0) < 1e-12
    assert abs(repulsive_loss(orthogonal_rows(5, 6))) < 1e-12
    # B=1, K=2 with cosine 0.5
    X = np.array([[5.0, 5.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    assert repulsive_loss(X) == pytest.approx(0.25, abs=1e-12)


def test_repulsive_needs_two_fine_rois():
    with pytest.raises(ValueError, match="non-anchor"):
        repulsive_loss(np.ones((2, 3)))


def test_repulsive_anchor_gradient_is_exactly_zero(rng):
    _, g = repulsive_loss(rng.standard_normal((3, 6, 5)), grad=True)
    assert np.all(g[:, 0] == 0.0)


def test_total_loss_examples():
    X = np.tile(np.arange(1.0, 5.0), (4, 1))
    loss, _, d_XL = total_loss(0.5, 1, X, LossConfig(lambda_rep=0.0))
    assert loss == bce(0.5, 1) and d_XL is None
    loss, _, _ = total_loss(0.5, 1, X, LossConfig(lambda_rep=1.0))
    assert loss == pytest.approx(math.log(2) + 1.0, abs=1e-12)


def central_diff(f, X, h=1e-5):
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        g[idx] = (f(Xp) - f(Xm)) / (2 * h)
    return g


def test_total_loss_gradient_in_XL(rng):
    cfg = LossConfig(lambda_rep=0.7)
    X = rng.standard_normal((2, 5, 4))
    y_hat, y = np.array([0.3, 0.8]), np.array([1.0, 0.0])
    _, _, d_XL = total_loss(y_hat, y, X, cfg)
    numeric = central_diff(lambda Z: total_loss(y_hat, y, Z, cfg)[0], X)
    rel = np.linalg.norm(d_XL - numeric) / np.linalg.norm(numeric)
    assert rel < 1e-6


def test_total_loss_gradient_in_y_hat():
    cfg = LossConfig()
    X = np.eye(4)
    y = np.array([1.0, 0.0])
    y_hat = np.array([0.3, 0.6])
    _, d, _ = total_loss(y_hat, y, X[None].repeat(2, 0), cfg)
    h = 1e-6
    for i in range(2):
        up, dn = y_hat.copy(), y_hat.copy()
        up[i] += h
        dn[i] -= h
        num = (total_loss(up, y, X[None].repeat(2, 0), cfg)[0] - total_loss(dn, y, X[None].repeat(2, 0), cfg)[0]) / (2 * h)
        assert d[i] == pytest.approx(num, rel=1e-6)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(eps=0.1).validate()
    with pytest.raises(ValueError):
        LossConfig(lambda_rep=-1).validate()


rows = st.integers(3, 7)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), rows, st.integers(2, 6))
def test_repulsive_properties(seed, k, d):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2, k, d))
    base = repulsive_loss(X)
    assert 0.0 <= base <= 1.0 + 1e-12
    perm = np.r_[0, 1 + rng.permutation(k - 1)]
    assert repulsive_loss(X[:, perm]) == pytest.approx(base, abs=1e-12)
    scale = rng.uniform(0.1, 10.0, size=(2, k, 1))
    assert repulsive_loss(X * scale) == pytest.approx(base, abs=1e-12)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.sampled_from([0, 1]))
def test_bce_midpoint_convexity(p, q, y):
    assert bce((p + q) / 2, y) <= (bce(p, y) + bce(q, y)) / 2 + 1e-12


def test_repulsive_grad_matches_input_shape(rng):
    X = rng.standard_normal((5, 4))
    loss, g = repulsive_loss(X, grad=True)
    assert g.shape == X.shape and np.all(g[0] == 0.0)
    assert loss == repulsive_loss(X[None])
