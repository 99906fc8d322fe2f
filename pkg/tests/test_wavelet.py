import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavecqr.wavelet import (
    WaveletCoeffs,
    WaveletFilter,
    dwt,
    dwt_batch,
    get_filter,
    idwt,
    idwt_batch,
    wavelet_matrix,
)

FILTERS = ["haar", "sym6", "daubechies-4"]

# least-asymmetric 12-tap lowpass as tabulated in common wavelet toolboxes (rounded to 15 digits)
SYM6_REFERENCE = [
    0.015404109327027373, 0.0034907120842174702, -0.11799011114819057, -0.048311742585633,
    0.4910559419267466, 0.787641141030194, 0.3379294217276218, -0.07263752278646252,
    -0.021060292512300564, 0.04472490177066578, 0.0017677118642428036, -0.007800708325034148,
]


def test_haar_constant_signal():
    np.testing.assert_allclose(dwt([1, 1, 1, 1], "haar", 2).values, [2, 0, 0, 0], atol=1e-15)


def test_haar_alternating_pair():
    np.testing.assert_allclose(dwt([1, -1], "haar", 1).values, [0, np.sqrt(2)], atol=1e-15)


def test_idwt_of_constant_coefficients():
    np.testing.assert_allclose(idwt([2, 0, 0, 0], "haar"), [1, 1, 1, 1], atol=1e-15)


def test_idwt_zero_is_zero():
    assert np.all(idwt(np.zeros(64), "sym6") == 0)


def test_haar_matrix_n2():
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(wavelet_matrix(2, "haar"), [[s, s], [s, -s]], atol=1e-15)


@pytest.mark.parametrize("name", FILTERS)
def test_filter_invariants(name):
    f = get_filter(name)
    assert abs(f.lowpass.sum() - np.sqrt(2)) < 1e-12
    for taps in (f.lowpass, f.highpass):
        assert abs(taps @ taps - 1) < 1e-12
        for s in range(1, taps.size // 2):
            assert abs(taps[2 * s:] @ taps[:-2 * s]) < 1e-12


def test_sym6_matches_published_taps():
    np.testing.assert_allclose(get_filter("sym6").lowpass, SYM6_REFERENCE, atol=1e-12)


def test_daubechies_two_taps():
    # closed form (1 +- sqrt 3, 3 +- sqrt 3) / (4 sqrt 2)
    r3 = np.sqrt(3)
    expected = np.array([1 + r3, 3 + r3, 3 - r3, 1 - r3]) / (4 * np.sqrt(2))
    np.testing.assert_allclose(get_filter("db2").lowpass, expected, atol=1e-14)


def test_broken_filter_rejected():
    with pytest.raises(ValueError):
        WaveletFilter("bad", [0.5, 0.5], [0.5, -0.5])


def test_unknown_filter_rejected():
    with pytest.raises(ValueError):
        get_filter("coif3")


@pytest.mark.parametrize("bad", [3, 6, 12, 1])
def test_non_dyadic_rejected(bad):
    with pytest.raises(ValueError):
        dwt(np.ones(bad), "haar")


@pytest.mark.parametrize("levels", [0, 4])
def test_levels_out_of_range(levels):
    with pytest.raises(ValueError):
        dwt(np.ones(8), "haar", levels)


def test_idwt_rejects_conflicting_levels():
    c = dwt(np.arange(8.0), "haar", 2)
    with pytest.raises(ValueError):
        idwt(c, "haar", levels=3)


def test_layout_bands():
    c = dwt(np.arange(16.0), "sym6", 3)
    sizes = [s.stop - s.start for s in c.bands()]
    assert sizes == [2, 2, 4, 8]
    assert c.coarsest_level == 1
    assert c.approximation().size == 2


def test_coeffs_require_dyadic_length():
    with pytest.raises(ValueError):
        WaveletCoeffs(np.zeros(6), 1)


@pytest.mark.parametrize("name", FILTERS)
@pytest.mark.parametrize("N", [8, 16, 64, 256])
def test_round_trip_and_parseval(name, N, rng):
    x = rng.normal(size=(10, N))
    c = dwt_batch(x, name)
    np.testing.assert_allclose(idwt_batch(c, name), x, atol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(c, axis=1), np.linalg.norm(x, axis=1), rtol=1e-12)


@pytest.mark.parametrize("levels", [1, 2, 5])
def test_partial_depth_round_trip(levels, rng):
    x = rng.normal(size=32)
    np.testing.assert_allclose(idwt(dwt(x, "sym6", levels)), x, atol=1e-12)


def test_matrix_is_orthogonal_and_consistent(rng):
    W = wavelet_matrix(64, "sym6")
    np.testing.assert_allclose(W @ W.T, np.eye(64), atol=1e-10)
    for _ in range(10):
        x = rng.normal(size=64)
        np.testing.assert_allclose(W @ x, dwt(x, "sym6").values, atol=1e-12)


def test_sym6_vanishing_moments():
    N = 256
    t = np.arange(N) / N
    c = dwt(1 + 2 * t - 3 * t**2 + t**3 - 0.5 * t**4 + 0.2 * t**5, "sym6", 1)
    detail = c.values[N // 2:]
    # the last few coefficients wrap around the periodic boundary
    assert np.max(np.abs(detail[:-6])) < 1e-8
    assert np.max(np.abs(detail[-6:])) > 1e-3


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 8),
    st.integers(0, 2**32 - 1),
    st.floats(-10, 10),
    st.floats(-10, 10),
)
def test_linearity(J, seed, a, b):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(2, 2**J))
    lhs = dwt(a * x + b * y, "sym6").values
    rhs = a * dwt(x, "sym6").values + b * dwt(y, "sym6").values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)) * 10)
