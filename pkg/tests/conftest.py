import numpy as np
import pytest

from wavecqr.model import Dataset, build_design


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_dataset(rng, n=20, m=2, N=4, q=1, noise=0.3):
    x = rng.normal(size=(n, m, N))
    u = rng.normal(size=(n, q))
    y = x[:, 0, :].mean(axis=1) * 2 + (u @ np.ones(q) if q else 0) + noise * rng.normal(size=n)
    return Dataset(x, u, y)


@pytest.fixture
def tiny(rng):
    data = random_dataset(rng)
    return data, build_design(data, "haar")


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
