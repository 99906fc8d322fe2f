import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavecqr.model import (
    CoefficientSet,
    Dataset,
    DimensionError,
    PenaltySpec,
    QuantileLevels,
    build_design,
    check_loss,
    objective,
    predict_quantile,
    reconstruct_beta,
    residuals,
    sgl_penalty,
)
from wavecqr.wavelet import dwt, idwt


def one_curve(curve, y=0.0):
    return Dataset(np.asarray(curve, dtype=float)[None, None, :], np.zeros((1, 0)), [y])


def test_design_constant_curve():
    d = build_design(one_curve([1, 1, 1, 1]), "haar")
    np.testing.assert_allclose(d.v[0], [0.5, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(d.rows[0], [1, 0.5, 0, 0, 0], atol=1e-15)
    assert d.num_columns == 1 + 4


def test_design_zero_curves():
    d = build_design(Dataset(np.zeros((3, 2, 8)), np.zeros((3, 1)), np.zeros(3)))
    assert np.all(d.v == 0)


def test_design_identity(rng):
    data = Dataset(rng.normal(size=(5, 3, 32)), rng.normal(size=(5, 2)), rng.normal(size=5))
    d = build_design(data, "sym6")
    theta = rng.normal(size=3 * 32)
    betas = np.array([idwt(theta[l * 32:(l + 1) * 32], "sym6") for l in range(3)])
    direct = np.einsum("ilt,lt->i", data.curves, betas) / 32
    np.testing.assert_allclose(d.v @ theta, direct, atol=1e-10)
    assert np.all(d.rows[:, 0] == 1)


def test_design_reversible(rng):
    curve = rng.normal(size=16)
    d = build_design(one_curve(curve), "sym6")
    np.testing.assert_allclose(idwt(16 * d.v[0], "sym6"), curve, atol=1e-12)


def test_dataset_validation():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 1, 6)), np.zeros((3, 0)), np.zeros(3))
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 1, 8)), np.zeros((2, 1)), np.zeros(3))
    with pytest.raises(ValueError):
        Dataset(np.full((1, 1, 2), np.nan), np.zeros((1, 0)), [0.0])


def test_standardize_scalars(rng):
    data = Dataset(rng.normal(size=(30, 1, 4)), rng.normal(scale=5, size=(30, 2)), rng.normal(size=30))
    d = build_design(data, "haar", standardize_scalars=True)
    np.testing.assert_allclose(d.u.std(axis=0), 1.0)
    np.testing.assert_allclose(build_design(data, "haar").u, data.scalars)


@pytest.mark.parametrize("r, tau, expected", [(-2, 0.5, 1.0), (2, 0.3, 0.6), (-2, 0.3, 1.4), (0, 0.7, 0.0)])
def test_check_loss_values(r, tau, expected):
    assert check_loss(r, tau) == pytest.approx(expected)


@pytest.mark.parametrize("tau", [0, 1, -0.1, 1.5])
def test_check_loss_rejects_tau(tau):
    with pytest.raises(ValueError):
        check_loss(1.0, tau)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(0.001, 0.999))
def test_check_loss_reflection(r, tau):
    assert check_loss(r, tau) == pytest.approx(check_loss(-r, 1 - tau), rel=1e-12, abs=1e-12)
    assert check_loss(r, tau) + check_loss(-r, tau) == pytest.approx(abs(r), rel=1e-12, abs=1e-12)
    assert check_loss(r, tau) >= 0


def test_sgl_penalty_values():
    assert sgl_penalty(np.array([3.0, 4.0]), PenaltySpec(1, 2)) == pytest.approx(17)
    assert sgl_penalty(np.zeros(6), PenaltySpec(1, 2), m=2) == 0
    assert sgl_penalty(np.arange(6.0), PenaltySpec(0, 0), m=2) == 0


def test_sgl_penalty_blockwise():
    theta = np.array([3.0, 4.0, 0.0, -1.0])
    assert sgl_penalty(theta, PenaltySpec(1, 1), m=2, N=2) == pytest.approx(8 + 5 + 1)
    with pytest.raises(DimensionError):
        sgl_penalty(theta, PenaltySpec(1, 1), m=3, N=2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sgl_penalty_triangle_and_homogeneity(seed):
    r = np.random.default_rng(seed)
    pen = PenaltySpec(*r.uniform(0, 2, 2))
    a, b = r.normal(size=(2, 12))
    assert sgl_penalty(a + b, pen, 3) <= sgl_penalty(a, pen, 3) + sgl_penalty(b, pen, 3) + 1e-12
    c = r.uniform(0, 5)
    assert sgl_penalty(c * a, pen, 3) == pytest.approx(c * sgl_penalty(a, pen, 3), rel=1e-12)


def test_penalty_spec_rejects_negative():
    with pytest.raises(ValueError):
        PenaltySpec(-1, 0)


def test_quantile_levels():
    np.testing.assert_allclose(QuantileLevels.equally_spaced(9).taus, np.arange(1, 10) / 10)
    for bad in ([0.5, 0.5], [0.7, 0.2], [0.0], [1.0], []):
        with pytest.raises(ValueError):
            QuantileLevels(bad)


def _single(y, alpha):
    data = Dataset(np.zeros((1, 1, 2)), np.zeros((1, 0)), [y])
    design = build_design(data, "haar")
    return design, CoefficientSet([alpha], [], np.zeros(2), 1, 2)


def test_objective_exact_fit():
    design, params = _single(3.0, 3.0)
    assert objective(params, design, [3.0], [0.5], PenaltySpec()) == 0


def test_objective_single_miss():
    design, params = _single(3.0, 1.0)
    assert objective(params, design, [3.0], [0.5], PenaltySpec()) == pytest.approx(1.0)


def test_objective_matches_term_by_term(tiny, rng):
    data, design = tiny
    taus = [0.2, 0.5, 0.9]
    params = CoefficientSet(rng.normal(size=3), rng.normal(size=1), rng.normal(size=8), 2, 4)
    pen = PenaltySpec(0.3, 0.7)
    total = 0.0
    for k, tau in enumerate(taus):
        for i in range(data.n):
            fit = params.alpha[k] + data.scalars[i] @ params.gamma
            for l in range(2):
                beta = idwt(params.theta[4 * l:4 * l + 4], "haar")
                fit += sum(data.curves[i, l, j] * beta[j] for j in range(4)) / 4
            r = data.response[i] - fit
            total += r * (tau - (r < 0))
    for l in range(2):
        b = params.theta[4 * l:4 * l + 4]
        total += 0.3 * np.abs(b).sum() + 0.7 * np.sqrt(b @ b)
    assert objective(params, design, data.response, taus, pen) == pytest.approx(total, rel=1e-12)


def test_objective_dimension_mismatch(tiny):
    data, design = tiny
    params = CoefficientSet.zeros(2, 1, 2, 4)
    with pytest.raises(DimensionError):
        objective(params, design, data.response, [0.5], PenaltySpec())
    with pytest.raises(DimensionError):
        objective(CoefficientSet.zeros(1, 1, 2, 4), design, data.response[:-1], [0.5], PenaltySpec())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
def test_objective_convex(seed, t):
    r = np.random.default_rng(seed)
    data = Dataset(r.normal(size=(8, 2, 4)), r.normal(size=(8, 1)), r.normal(size=8))
    design = build_design(data, "haar")
    taus, pen = [0.3, 0.6], PenaltySpec(0.2, 0.4)
    p1 = CoefficientSet(r.normal(size=2), r.normal(size=1), r.normal(size=8), 2, 4)
    p2 = CoefficientSet(r.normal(size=2), r.normal(size=1), r.normal(size=8), 2, 4)
    mix = CoefficientSet(t * p1.alpha + (1 - t) * p2.alpha, t * p1.gamma + (1 - t) * p2.gamma,
                         t * p1.theta + (1 - t) * p2.theta, 2, 4)
    f = lambda p: objective(p, design, data.response, taus, pen)  # noqa: E731
    assert f(mix) <= t * f(p1) + (1 - t) * f(p2) + 1e-9


def test_predict_quantile(tiny, rng):
    data, design = tiny
    params = CoefficientSet([1.5, -0.5], [0.0], np.zeros(8), 2, 4)
    np.testing.assert_allclose(predict_quantile(params, design, 1), -0.5)
    params = CoefficientSet(rng.normal(size=2), rng.normal(size=1), rng.normal(size=8), 2, 4)
    expected = params.alpha[0] + design.u @ params.gamma + design.v @ params.theta
    np.testing.assert_allclose(predict_quantile(params, design, 0), expected, atol=1e-14)
    with pytest.raises(IndexError):
        predict_quantile(params, design, 2)


def test_predict_reproduces_exact_fit(tiny, rng):
    data, design = tiny
    params = CoefficientSet([0.4], rng.normal(size=1), rng.normal(size=8), 2, 4)
    y = predict_quantile(params, design, 0)
    assert np.max(np.abs(residuals(params, design, y, [0.5]))) < 1e-14


def test_reconstruct_beta(rng):
    assert np.all(reconstruct_beta(np.zeros(8), "sym6") == 0)
    curve = rng.normal(size=16)
    np.testing.assert_allclose(reconstruct_beta(dwt(curve, "sym6").values, "sym6"), curve, atol=1e-12)
    np.testing.assert_allclose(reconstruct_beta([3.0, 0, 0, 0], "haar"), [1.5] * 4, atol=1e-15)


def test_coefficient_set_validation():
    with pytest.raises(DimensionError):
        CoefficientSet([0.0], [], np.zeros(5), 2, 4)
    with pytest.raises(ValueError):
        CoefficientSet([np.inf], [], np.zeros(8), 2, 4)
