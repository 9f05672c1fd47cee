import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saddlelab.extension import (LABELS, Field3, SampledFunction, SamplingError, ScaleParams, SliceEngine,
                                 broad_mask, broad_norms, bump, classify_points, default_grid,
                                 direct_extension, evaluate_extension, freq_tile_audit, knapp,
                                 lattice_window, lp_norm, random_function, required_grid, restrict,
                                 stream_norms, strip_pieces, xi_axis)
from saddlelab.partition import make_strips


def probes(R, n, rng):
    return rng.uniform(-R, R, (n, 3))


def grid_values(F, idx):
    return np.array([F.values[i, j, k] for i, j, k in idx])


def test_constant_function_at_origin():
    f = SampledFunction(np.ones((64, 64)))
    assert direct_extension(f, 0.4, [[0, 0, 0]])[0] == pytest.approx(1.0)


def test_zero_function():
    F = evaluate_extension(SampledFunction(np.zeros((32, 32))), 1.0, 8, 16)
    assert not F.values.any()


def test_separable_at_zero_height():
    # E(g(x)h(y)) at xi_3 = 0 is the product of 1-D midpoint transforms
    N, R, M = 64, 16, 32
    x = (np.arange(N) + 0.5) / N
    g = np.cos(3 * x) + 1j * x
    h = np.exp(-((x - 0.4) ** 2) * 5)
    f = SampledFunction(np.outer(g, h))
    eng = SliceEngine(f, 0.8, R, M, method="fft")
    # the xi_3 grid is cell centred, so evaluate the direct product at one slice directly
    xi = xi_axis(R, M)
    want = np.outer(np.exp(1j * np.outer(xi, x)) @ g / N, np.exp(1j * np.outer(xi, x)) @ h / N)
    got = direct_extension(f, 0.8, np.stack(np.meshgrid(xi[:4], xi[:4], [0.0], indexing="ij"), -1).reshape(-1, 3))
    assert np.allclose(got.reshape(4, 4), want[:4, :4], atol=1e-12)
    assert eng.transform(f.values).shape == (M, M)


@pytest.mark.parametrize("method", ["fft", "dense"])
def test_grid_matches_direct(method):
    R, gamma = 32, 1.0
    N, M = default_grid(R)
    f = random_function(N, 3)
    F = evaluate_extension(f, gamma, R, M, method=method)
    rng = np.random.default_rng(0)
    idx = rng.integers(0, M, (40, 3))
    pts = F.axis[idx]
    want = direct_extension(f, gamma, pts)
    got = grid_values(F, idx)
    assert np.max(np.abs(got - want)) <= 1e-9 * np.max(np.abs(want))


def test_midpoint_against_refined_quadrature():
    # the sampled operator converges to the integral: compare N = 4R against 4x finer sampling
    R, gamma = 16, -0.7
    fn = lambda x, y: np.exp(2j * x) * (1 + y**2)
    coarse = SampledFunction.from_callable(fn, 4 * R)
    fine = SampledFunction.from_callable(fn, 16 * R)
    xi = probes(R, 100, np.random.default_rng(1))
    a, b = direct_extension(coarse, gamma, xi), direct_extension(fine, gamma, xi)
    # measured against the trivial bound |E f| <= ||f||_1
    assert np.max(np.abs(a - b)) <= 1e-3 * fine.norm1()


def test_sampling_rule_refusal():
    with pytest.raises(SamplingError) as exc:
        evaluate_extension(random_function(16, 0), 1.0, 32, 64)
    assert exc.value.N_min == required_grid(1.0, 32)[0]


def test_default_grid_satisfies_rule():
    for R in (8, 16, 64, 256):
        N, M = default_grid(R)
        Nm, Mm = required_grid(1.0, R)
        assert N >= Nm and M >= Mm and M & (M - 1) == 0


def test_linearity_and_conjugation():
    R, N, M = 16, 64, 32
    f, g = random_function(N, 1), random_function(N, 2)
    a, b = 0.3 - 1j, 2.0
    Ff, Fg = evaluate_extension(f, 0.5, R, M), evaluate_extension(g, 0.5, R, M)
    Fab = evaluate_extension(SampledFunction(a * f.values + b * g.values), 0.5, R, M)
    assert np.allclose(Fab.values, a * Ff.values + b * Fg.values, atol=1e-12)
    Fc = evaluate_extension(SampledFunction(np.conj(f.values)), 0.5, R, M)
    assert np.allclose(Fc.values[::-1, ::-1, ::-1], np.conj(Ff.values), atol=1e-12)


def test_restriction_consistency():
    R, N, M = 16, 64, 32
    f = random_function(N, 4)
    F = evaluate_extension(f, 0.0, R, M)
    for kind, s in make_strips(16, 0.0).items():
        total = sum(evaluate_extension(restrict(f, r), 0.0, R, M).values for r in s.rects)
        assert np.allclose(total, F.values, atol=1e-12), kind


def test_restrict_examples():
    f = random_function(32, 0)
    assert np.array_equal(restrict(f, (0, 0, 1, 1)).values, f.values)
    g = restrict(f, (0, 0, 0.5, 0.5))
    assert not restrict(g, (0.6, 0.6, 0.9, 0.9)).values.any()


def test_lp_norm_examples():
    v = np.full((8, 8, 8), 2.0)
    F = Field3(v.astype(complex), 4.0, 0.0)
    for p in (1, 2, 3.25):
        assert lp_norm(F, p) == pytest.approx(2.0 * 8.0 ** (3 / p))
    assert lp_norm(F, np.inf) == 2.0
    mask = np.zeros_like(v, dtype=bool)
    mask[:2] = True
    assert lp_norm(F, 2, mask) <= lp_norm(F, 2)
    with pytest.raises(ValueError):
        lp_norm(F, 0.5)


def test_lp_refinement():
    # smooth field: a Gaussian on B_R sampled at M and 2M
    R = 8.0
    vals = []
    for M in (32, 64):
        ax = xi_axis(R, M)
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        vals.append(lp_norm(Field3(np.exp(-(X**2 + Y**2 + Z**2) / 8).astype(complex), R, 0.0), 3.25))
    assert abs(vals[0] - vals[1]) <= 0.01 * vals[1]


def test_plancherel_bound():
    R = 32
    N, M = default_grid(R)
    worst = 0.0
    for s in range(5):
        f = random_function(N, s)
        worst = max(worst, lp_norm(evaluate_extension(f, 1.0, R, M), 2) / (R**0.5 * f.norm2()))
    assert worst <= 4


def _strip_function(N, K):
    # a short strip lies inside exactly one strip of every kind
    rect = make_strips(K, 0.0)["short_vertical"].rects[5]
    return restrict(random_function(N, 7), tuple(rect))


def test_single_strip_all_broad_for_alpha_one():
    R, K = 16, 16
    N, M = default_grid(R)
    f = _strip_function(N, K)
    bm = broad_mask(f, 0.0, ScaleParams(R, K, 0.2, alpha=1.0), M=M)
    assert bm.mask.all()


def test_single_strip_none_broad_for_small_alpha():
    R, K = 16, 16
    N, M = default_grid(R)
    f = _strip_function(N, K)
    bm = broad_mask(f, 0.0, ScaleParams(R, K, 0.2, alpha=0.99), M=M)
    nz = np.abs(bm.field.values) > 0
    assert not bm.mask[nz].any()


def test_broad_fraction_generic():
    R, K = 32, 16
    f = random_function(4 * R, 11)
    bm = broad_mask(f, 0.0, ScaleParams(R, K, 0.2), M=64)
    assert 0 < bm.mask.mean() < 1
    # mask semantics: strip max <= alpha |E f| where marked
    a = np.abs(bm.field.values)
    assert np.all(bm.strip_max[bm.mask] <= bm.alpha * a[bm.mask])


def test_broad_monotone_in_alpha():
    R, K = 16, 16
    N, M = default_grid(R)
    f = random_function(N, 5)
    masks = [broad_mask(f, 0.1, ScaleParams(R, K, 0.2, alpha=a), M=M).mask for a in (0.3, 0.5, 0.8, 1.0)]
    for lo, hi in zip(masks, masks[1:]):
        assert np.all(hi[lo])


def test_ragged_mode_runs():
    R, K = 16, 16
    N, M = default_grid(R)
    bm = broad_mask(random_function(N, 1), 0.0, ScaleParams(R, K, 0.2, mu=4), mode="ragged", M=M)
    assert bm.mode == "ragged" and bm.mask.shape == (M,) * 3


@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_labels_partition(gamma):
    R, K = 16, 16
    N, M = default_grid(R)
    lab, _ = classify_points(random_function(N, 2), gamma, ScaleParams(R, K, 0.2), M)
    counts = np.bincount(lab.ravel(), minlength=4)
    assert counts.sum() == M**3
    if abs(gamma) * K**0.5 >= 1:
        assert counts[LABELS["C"]] == counts[LABELS["D"]] == 0


def test_labels_alpha_one_single_strip():
    R, K = 16, 16
    N, M = default_grid(R)
    lab, F = classify_points(_strip_function(N, K), 0.0, ScaleParams(R, K, 0.2, alpha=1.0), M)
    assert np.all(lab[np.abs(F.values) > 0] == LABELS["A"])


def test_alpha_one_generic_not_all_broad():
    # cancellation between strips lets one |E f_L| exceed |E f|, so alpha = 1 is not enough
    R, K = 16, 16
    N, M = default_grid(R)
    lab, F = classify_points(random_function(N, 2), 0.0, ScaleParams(R, K, 0.2, alpha=1.0), M)
    assert 0 < np.mean(lab == LABELS["A"]) < 1


def test_broad_norms_agree_with_mask():
    R, K = 16, 16
    N, M = default_grid(R)
    f = random_function(N, 9)
    p = ScaleParams(R, K, 0.2)
    out = broad_norms(f, 0.0, p, [3.25], M=M, dtype=np.complex128)
    bm = broad_mask(f, 0.0, p, M=M)
    assert out["broad"][(p.alpha, 3.25)] == pytest.approx(lp_norm(bm.field, 3.25, bm.mask), rel=1e-9)
    assert out["full"][3.25] == pytest.approx(lp_norm(bm.field, 3.25), rel=1e-9)
    lab, _ = classify_points(f, 0.0, p, M)
    assert out["counts"][p.alpha] == np.bincount(lab.ravel(), minlength=4).tolist()


def test_stream_norms_agree():
    R = 16
    N, M = default_grid(R)
    f = random_function(N, 1)
    F = evaluate_extension(f, 1.0, R, M)
    s = stream_norms(f, 1.0, R, [2, 4, np.inf], M, dtype=np.complex128)
    for p in (2, 4, np.inf):
        assert s[p] == pytest.approx(lp_norm(F, p), rel=1e-9)


def test_knapp_examples():
    R = 64
    k = knapp(R)
    assert direct_extension(k, 1.0, [[0, 0, 0]])[0].real == pytest.approx(1 / R)
    assert k.norm2() == pytest.approx(R**-0.5)
    assert k.norm_inf() == 1.0
    with pytest.raises(ValueError):
        knapp(R, center=(0.01, 0.5))


def test_knapp_dual_box():
    R, c = 64, 0.1
    rng = np.random.default_rng(0)
    xi = np.stack([rng.uniform(-c * R**0.5, c * R**0.5, 400), rng.uniform(-c * R**0.5, c * R**0.5, 400),
                   rng.uniform(-c * R, c * R, 400)], axis=1)
    for g in (0.0, 1.0, -1.0):
        assert np.abs(direct_extension(knapp(R), g, xi)).min() >= 0.5 / R


def test_random_function_model():
    f = random_function(64, 0)
    assert f.norm_inf() <= 1 + 1e-12
    assert np.array_equal(f.values, random_function(64, 0).values)


@settings(max_examples=30, deadline=None)
@given(st.floats(-20, 20))
def test_lattice_window_sums_to_one(t):
    ks = np.arange(np.floor(t) - 3, np.floor(t) + 4)
    assert lattice_window(t - ks).sum() == pytest.approx(1.0, abs=1e-14)


def test_bump_support():
    assert bump(np.array([-1.0, 1.0, 2.0])).tolist() == [0.0, 0.0, 0.0]
    assert bump(np.array([0.0]))[0] == 1.0


def test_tile_single_window():
    # f whose spectrum sits in one window gives one tile
    N = 64
    x = (np.arange(N) + 0.5) / N
    f = SampledFunction(np.ones((N, N)))
    a = freq_tile_audit(f, 0.0, 16, n_dirs=4, n_heights=2, distances=(2.0, 4.0))
    assert a.tiles == 1 and a.pou_residual <= 1e-9 and len(x) == N


def test_tile_decay_smooth():
    f = SampledFunction.from_callable(lambda x, y: bump(2 * (x - 0.5)) * bump(2 * (y - 0.5)), 256)
    a = freq_tile_audit(f, 1.0, 64)
    assert a.pou_residual <= 1e-9
    assert a.ratio_at_4R <= 1e-2
    assert a.fitted_exponent >= 4


def test_strip_pieces_cover():
    p = strip_pieces(32, 0.0, 16)
    for kind, lst in p.items():
        total = sum(m.astype(int) for m, _, _ in lst)
        assert np.all(total == 1), kind
