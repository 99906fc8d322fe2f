import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavecqr.model import CoefficientSet, Dataset, build_design, check_loss
from wavecqr.prox import (
    SingularSystemError,
    prox_check,
    prox_sgl,
    prox_sgl_block,
    soft_threshold,
    solve_quadratic_step,
)


def grid_prox_check(c, tau, eta1, lo=-5.0, hi=5.0, step=1e-4):
    r = np.arange(lo, hi + step / 2, step)
    vals = check_loss(r, tau) + 0.5 * eta1 * (c - r) ** 2
    return r[np.argmin(vals)]


@pytest.mark.parametrize("c, tau, eta1, expected", [(2, 0.5, 1, 1.5), (0.3, 0.5, 1, 0.0), (-1, 0.9, 2, -0.95)])
def test_prox_check_examples(c, tau, eta1, expected):
    assert prox_check(c, tau, eta1) == pytest.approx(expected, abs=1e-15)
    assert grid_prox_check(c, tau, eta1) == pytest.approx(expected, abs=1e-4)


@pytest.mark.parametrize("tau, eta1", [(0, 1), (1, 1), (0.5, 0), (0.5, -1)])
def test_prox_check_rejects(tau, eta1):
    with pytest.raises(ValueError):
        prox_check(1.0, tau, eta1)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 0.99), st.floats(0.05, 20))
def test_prox_check_monotone_lipschitz(c1, c2, tau, eta1):
    p1, p2 = prox_check(c1, tau, eta1), prox_check(c2, tau, eta1)
    assert abs(p1 - p2) <= abs(c1 - c2) + 1e-12
    if c1 <= c2:
        assert p1 <= p2 + 1e-12


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold([3, -1], 1), [2, 0])
    v = np.array([0.3, -2.0, 5.0])
    np.testing.assert_array_equal(soft_threshold(v, 0), v)
    assert np.all(soft_threshold(v, 5.0) == 0)
    with pytest.raises(ValueError):
        soft_threshold(v, -1)


def sgl_block_inclusion_residual(c, b, t1, t2):
    """Distance from c - b to the subdifferential of t1||.||_1 + t2||.||_2 at b."""
    nb = np.linalg.norm(b)
    if nb == 0:
        return max(np.linalg.norm(soft_threshold(c, t1)) - t2, 0.0)
    g = c - b - t2 * b / nb
    nz = b != 0
    res = np.where(nz, g - t1 * np.sign(b), soft_threshold(g, t1))
    return float(np.linalg.norm(res))


def test_prox_sgl_block_examples():
    out = prox_sgl_block(np.array([3.0, -1.0]), 1, 1)
    np.testing.assert_allclose(out, [1, 0], atol=1e-15)
    assert sgl_block_inclusion_residual(np.array([3.0, -1.0]), out, 1, 1) < 1e-8
    assert np.all(prox_sgl_block(np.array([0.5, 0.5]), 1, 123.0) == 0)
    c = np.array([0.2, -4.0, 1.0])
    np.testing.assert_array_equal(prox_sgl_block(c, 0, 0), c)
    with pytest.raises(ValueError):
        prox_sgl_block(c, -1, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 16), st.floats(0, 3), st.floats(0, 3))
def test_prox_sgl_block_inclusion_and_nonexpansive(seed, N, t1, t2):
    r = np.random.default_rng(seed)
    c1, c2 = r.normal(scale=2, size=(2, N))
    b1 = prox_sgl_block(c1, t1, t2)
    assert sgl_block_inclusion_residual(c1, b1, t1, t2) < 1e-8
    assert np.linalg.norm(b1 - prox_sgl_block(c2, t1, t2)) <= np.linalg.norm(c1 - c2) + 1e-12


def test_prox_sgl_blockwise_matches_block(rng):
    theta = rng.normal(size=12)
    out = prox_sgl(theta, 0.3, 0.8, 3, 4)
    for l in range(3):
        np.testing.assert_allclose(out[4 * l:4 * l + 4], prox_sgl_block(theta[4 * l:4 * l + 4], 0.3, 0.8))


def quadratic_value(params, design, y, r, z, anchor, w, eta, eta1):
    T = y[None, :] - r + z
    fit = params.alpha[:, None] + (design.u @ params.gamma + design.v @ params.theta)[None, :]
    return 0.5 * eta * np.sum((params.theta - anchor + w) ** 2) + 0.5 * eta1 * np.sum((T - fit) ** 2)


def quadratic_gradient(params, design, y, r, z, anchor, w, eta, eta1):
    T = y[None, :] - r + z
    res = T - params.alpha[:, None] - (design.u @ params.gamma + design.v @ params.theta)[None, :]
    ga = -eta1 * res.sum(axis=1)
    gg = -eta1 * design.u.T @ res.sum(axis=0)
    gt = eta * (params.theta - anchor + w) - eta1 * design.v.T @ res.sum(axis=0)
    return np.concatenate([ga, gg, gt]), T


def _instance(rng, n=12, m=2, N=8, q=2, K=3):
    data = Dataset(rng.normal(size=(n, m, N)), rng.normal(size=(n, q)), rng.normal(size=n))
    design = build_design(data, "sym6")
    r, z = rng.normal(size=(2, K, n))
    anchor, w = rng.normal(size=(2, m * N))
    return data, design, r, z, anchor, w


def test_quadratic_step_stationary(rng):
    data, design, r, z, anchor, w = _instance(rng)
    sol = solve_quadratic_step(design, data.response, [0.2, 0.5, 0.8], r, z, anchor, w, 0.7, 1.3)
    g, T = quadratic_gradient(sol, design, data.response, r, z, anchor, w, 0.7, 1.3)
    assert np.linalg.norm(g) < 1e-8 * (1 + np.linalg.norm(T))


def test_quadratic_step_random_probes(rng):
    data, design, r, z, anchor, w = _instance(rng)
    args = (design, data.response, r, z, anchor, w, 1.0, 1.0)
    sol = solve_quadratic_step(design, data.response, [0.2, 0.5, 0.8], r, z, anchor, w, 1.0, 1.0)
    best = quadratic_value(sol, *args)
    for _ in range(1000):
        d = rng.normal(scale=rng.choice([1e-3, 1e-1, 1.0]), size=3 + 2 + 16)
        probe = CoefficientSet(sol.alpha + d[:3], sol.gamma + d[3:5], sol.theta + d[5:], 2, 8)
        assert quadratic_value(probe, *args) >= best - 1e-10


def test_quadratic_step_ridge_dominance(rng):
    data, design, _, _, _, _ = _instance(rng, K=1)
    zero = np.zeros((1, data.n))
    sol = solve_quadratic_step(design, data.response, [0.5], zero, zero, np.zeros(16), np.zeros(16), 1e8, 1.0)
    assert np.max(np.abs(sol.theta)) < 1e-3


def test_quadratic_step_without_curves_is_least_squares(rng):
    n, q = 15, 2
    data = Dataset(np.zeros((n, 0, 4)), rng.normal(size=(n, q)), rng.normal(size=n))
    design = build_design(data, "haar")
    zero = np.zeros((1, n))
    sol = solve_quadratic_step(design, data.response, [0.5], zero, zero, np.zeros(0), np.zeros(0), 1.0, 1.0)
    A = np.column_stack([np.ones(n), data.scalars])
    coef = np.linalg.solve(A.T @ A, A.T @ data.response)
    np.testing.assert_allclose(np.concatenate([sol.alpha, sol.gamma]), coef, atol=1e-8)


def test_quadratic_step_singular_scalars(rng):
    n = 10
    u = np.column_stack([rng.normal(size=n), np.ones(n)])  # constant column duplicates the intercept
    data = Dataset(rng.normal(size=(n, 1, 4)), u, rng.normal(size=n))
    design = build_design(data, "haar")
    zero = np.zeros((1, n))
    with pytest.raises(SingularSystemError) as info:
        solve_quadratic_step(design, data.response, [0.5], zero, zero, np.zeros(4), np.zeros(4), 1.0, 1.0)
    assert info.value.block == "gamma"
