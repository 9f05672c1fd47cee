import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saddlelab.extension import bump
from saddlelab.rescale import (PreconditionError, compose_horizontal, dual_map, horizontal_rescale,
                               identity_residual, norm_relation, short_rescale, vertical_rescale,
                               verify_operator_identity)

Ks = st.sampled_from([16.0, 64.0, 256.0, 1024.0])


def smooth_in(rect, pad=0.05):
    x0, y0, x1, y1 = rect
    x0, y0, x1, y1 = max(x0, 0.0), max(y0, 0.0), min(x1, 1.0), min(y1, 1.0)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    wx, wy = (x1 - x0) / 2 * (1 - pad), (y1 - y0) / 2 * (1 - pad)

    def f(x, y):
        return bump((x - cx) / wx) * bump((y - cy) / wy) * np.exp(1j * 3 * x) * (1 + y)

    return f


def random_uv(n, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 2, n), rng.uniform(0, 1, n)


def test_horizontal_b0_is_scaling():
    r = horizontal_rescale(0.8, 16, 0.0)
    assert r.gamma_out == pytest.approx(0.2)
    x, y = r.forward(0.3, 0.1)
    assert x == 0.3 and y == pytest.approx(0.2)


def test_horizontal_gamma_zero():
    assert horizontal_rescale(0.0, 64, 0.5).gamma_out == 0


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), Ks, st.floats(0, 1))
def test_horizontal_identity(g, K, b):
    r = horizontal_rescale(g, K, b)
    xp, yp = random_uv(10_000, 0)
    assert np.max(np.abs(identity_residual(r, xp, yp))) <= 1e-12 * max(1.0, K**0.25)


def test_horizontal_image_range():
    for g, K, b in itertools.product([-1, 0.3, 1], [16, 256], [0.0, 0.5, 1 - 256**-0.25]):
        r = horizontal_rescale(g, K, b)
        x0, y0, x1, y1 = r.image_domain
        assert -1 <= x0 and x1 <= 2 and (y0, y1) == (0.0, 1.0)
        xs, ys = np.meshgrid(np.linspace(0, 1, 21), np.linspace(b, b + K**-0.25, 21), indexing="ij")
        xp, yp = r.forward(xs, ys)
        assert xp.min() >= x0 - 1e-12 and xp.max() <= x1 + 1e-12
        assert yp.min() >= -1e-12 and yp.max() <= 1 + 1e-12


def test_vertical_examples():
    assert vertical_rescale(0.0, 1024, 0.3).gamma_out == 0
    with pytest.raises(PreconditionError):
        vertical_rescale(1.0, 16, 0.0)
    r = vertical_rescale(1 / 8, 16, 0.25)
    xp, yp = random_uv(10_000, 1)
    assert np.max(np.abs(identity_residual(r, xp, yp))) <= 1e-12
    # no constant in this identity
    assert abs(r.identity_terms(0.0, 0.0)) <= 1e-15


def test_short_examples():
    r = short_rescale(0.1, 64, 0.0, 0.0)
    assert r.gamma_out == 0.1 and r.forward(0.125, 64**-0.25) == pytest.approx((1.0, 1.0))
    with pytest.raises(PreconditionError):
        short_rescale(0.5, 16, 0.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(Ks, st.floats(0, 1), st.floats(0, 1), st.sampled_from([0.0, 1.0, -1.0]))
def test_short_identity(K, a, b, scale):
    g = scale * K**-0.5
    r = short_rescale(g, K, a, b)
    xp, yp = random_uv(10_000, 2)
    assert np.max(np.abs(identity_residual(r, xp, yp))) <= 1e-12 * K**0.75


def test_dual_examples():
    r = horizontal_rescale(0.7, 16, 0.0)
    assert np.all(dual_map(r, [0, 0, 0]) == 0)
    assert np.allclose(dual_map(r, [1.0, 2.0, 3.0]), [1.0, 2.0 / 2, 3.0 / 2])


def test_dual_image_box():
    R, K = 64.0, 256.0
    corners = np.array(list(itertools.product([-R, R], repeat=3)))
    r0 = horizontal_rescale(0.5, K, 0.0)
    ext = np.ptp(dual_map(r0, corners), axis=0)
    assert np.allclose(ext, [2 * R, 2 * R * K**-0.25, 2 * R * K**-0.25])
    # a nonzero b shears the box, at most doubling the first two sides
    ext = np.ptp(dual_map(horizontal_rescale(1.0, K, 0.75), corners), axis=0)
    assert np.all(ext <= np.array([4 * R, 4 * R * K**-0.25, 2 * R * K**-0.25]) + 1e-9)


@pytest.mark.parametrize("kind", ["horizontal", "vertical", "short"])
def test_dual_invertible_affine(kind):
    r = {"horizontal": horizontal_rescale(0.3, 64, 0.25), "vertical": vertical_rescale(0.1, 64, 0.5),
         "short": short_rescale(0.1, 64, 0.5, 0.25)}[kind]
    A = np.stack([dual_map(r, e) for e in np.eye(3)], axis=1)
    assert abs(np.linalg.det(A)) > 0
    x, y = np.random.default_rng(0).uniform(-5, 5, (2, 3))
    assert np.allclose(dual_map(r, x + 2 * y), dual_map(r, x) + 2 * dual_map(r, y))


@pytest.mark.parametrize("kind", ["horizontal", "vertical", "short"])
def test_forward_inverse(kind):
    r = {"horizontal": horizontal_rescale(-0.6, 256, 0.5), "vertical": vertical_rescale(0.05, 256, 0.25),
         "short": short_rescale(-0.06, 256, 0.25, 0.5)}[kind]
    x, y = np.random.default_rng(1).uniform(0, 1, (2, 100))
    assert np.allclose(r.inverse(*r.forward(x, y)), (x, y), atol=1e-13)


def test_operator_identity_strip_indicator_at_zero():
    K = 16.0
    r = horizontal_rescale(1.0, K, 0.5)
    x0, y0, x1, y1 = r.strip

    def ind(x, y):
        return ((x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)).astype(float)

    # midpoint sums of a jump converge at rate 1/n
    for n in (256, 1024):
        assert verify_operator_identity(r, ind, [[0.0, 0.0, 0.0]], n=n) <= 1.0 / n
    # both sides equal the strip area K^(-1/4)
    assert r.jacobian * 1.0 == pytest.approx((x1 - x0) * (y1 - y0))


@pytest.mark.parametrize("kind", ["horizontal", "vertical", "short"])
def test_operator_identity_smooth(kind):
    r = {"horizontal": horizontal_rescale(0.9, 16, 0.5), "vertical": vertical_rescale(0.2, 16, 0.25),
         "short": short_rescale(-0.25, 16, 0.5, 0.0)}[kind]
    xis = np.random.default_rng(2).uniform(-16, 16, (10, 3))
    assert verify_operator_identity(r, smooth_in(r.strip), xis, n=512) <= 1e-6


def test_operator_identity_vertical_gamma_zero_exact():
    r = vertical_rescale(0.0, 64, 0.125)
    xis = np.random.default_rng(3).uniform(-32, 32, (10, 3))
    assert verify_operator_identity(r, smooth_in(r.strip), xis, n=128) <= 1e-12


def test_operator_identity_rejects_support():
    r = horizontal_rescale(0.5, 16, 0.0)
    with pytest.raises(ValueError):
        verify_operator_identity(r, lambda x, y: np.ones_like(x), [[0, 0, 0]])


def test_norm_relation():
    K = 256.0
    r = horizontal_rescale(0.4, K, 0.25)
    up, down = norm_relation(r, smooth_in(r.strip), n=512)
    assert up == pytest.approx(K**0.125 * down, rel=1e-9)


def test_sup_norm_preserved():
    r = horizontal_rescale(0.4, 64, 0.25)
    f = smooth_in(r.strip)
    xp, yp = np.meshgrid(np.linspace(-1, 2, 301), np.linspace(0, 1, 301))
    x, y = r.inverse(xp, yp)
    g = np.linspace(0, 1, 301)
    X, Y = np.meshgrid(g, g)
    assert np.abs(f(x, y)).max() <= np.abs(f(X, Y)).max() + 1e-3


def test_composition():
    K1, K2, b1, b2, g = 16.0, 256.0, 0.5, 0.25, 0.8
    r1 = horizontal_rescale(g, K1, b1)
    r2 = horizontal_rescale(r1.gamma_out, K2, b2)
    r = compose_horizontal(r1, r2)
    assert r.K == K1 * K2 and r.gamma_out == pytest.approx(r2.gamma_out)
    x, y = np.random.default_rng(4).uniform(0, 1, (2, 50))
    x = x * 0.5
    y = b1 + K1**-0.25 * (b2 + K2**-0.25 * y)
    two = r2.forward(*r1.forward(x, y))
    one = r.forward(x, y)
    assert np.allclose(two[1], one[1])
    shift = two[0] - one[0]
    assert np.ptp(shift) <= 1e-12
    with pytest.raises(ValueError):
        compose_horizontal(r1, horizontal_rescale(0.5, K2, b2))


def test_as_row():
    row = short_rescale(0.0, 16, 0.25, 0.5).as_row()
    assert row["kind"] == "short" and row["jacobian"] == pytest.approx(16**-0.75)
