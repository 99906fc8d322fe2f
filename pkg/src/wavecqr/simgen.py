"""Simulation design with 12 correlated functional covariates and 2 scalars.

Four of the twelve slopes are nonzero: wavelet-thresholded, unit-norm
versions of a Beta-density mixture, the Heavi-Sine function and two smooth
trigonometric curves.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import Dataset
from .wavelet import _as_filter, dwt_batch, dyadic_exponent, idwt_batch

NOISE_FAMILIES = ("normal", "mixture", "t3", "cauchy")
M_FUNCTIONAL = 12
Q_SCALAR = 2
TRUE_GROUPS = (0, 1, 2, 3)
COEF_THRESHOLD = 0.1

# x_l = sum_j MIXING[l, j] * omega_j
MIXING = np.eye(M_FUNCTIONAL)
MIXING[0, 0], MIXING[0, 5] = np.sqrt(0.84), 0.4
MIXING[1, 1], MIXING[1, 0], MIXING[1, 4] = np.sqrt(0.98), 0.1, 0.1
MIXING[2, 2], MIXING[2, 3] = np.sqrt(0.84), 0.4
MIXING[4, 4], MIXING[4, 1] = np.sqrt(0.99), 0.1
MIXING.setflags(write=False)

DOMAINS = (
    (0.0, 1.0),
    (-1.0, 1.0),
    (0.0, np.pi / 3),
    (-2.0, 1.0),
    (0.0, np.pi / 3),
    (-1.0, 1.0),
) + ((0.0, 1.0),) * 6


def noise_family(name) -> str:
    """Accept ``1..4`` or a family name."""
    key = str(name).strip().lower()
    if key.isdigit() and 1 <= int(key) <= 4:
        return NOISE_FAMILIES[int(key) - 1]
    if key in NOISE_FAMILIES:
        return key
    raise ValueError(f"unknown noise family {name!r}; choose 1-4 or one of {NOISE_FAMILIES}")


@dataclass(frozen=True)
class SimConfig:
    n: int = 200
    snr: float = 5.0
    noise: str = "normal"
    seed: int = 0
    N: int = 256
    filter: str = "sym6"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        dyadic_exponent(self.N)
        object.__setattr__(self, "noise", noise_family(self.noise))


@dataclass
class SimulatedDataset:
    data: Dataset
    beta_true: np.ndarray
    theta_true: np.ndarray
    gamma_true: np.ndarray
    sigma: float
    noiseless_response: np.ndarray
    config: SimConfig | None = None
    alpha_true: float = 0.0
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def true_groups(self) -> set[int]:
        return {l for l in range(self.beta_true.shape[0]) if np.any(self.beta_true[l] != 0)}

    def subset(self, idx) -> "SimulatedDataset":
        idx = np.asarray(idx)
        return SimulatedDataset(self.data.subset(idx), self.beta_true, self.theta_true, self.gamma_true,
                                self.sigma, self.noiseless_response[idx], self.config, self.alpha_true)


def grid(N: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, N)


def raw_slope_functions(t) -> np.ndarray:
    """f1..f4 evaluated at t, shape (4, len(t))."""
    t = np.asarray(t, dtype=float)
    f1 = 0.03 * stats.beta.pdf(t, 20, 60) - 0.05 * stats.beta.pdf(t, 50, 20)
    f2 = 4 * np.sin(4 * np.pi * t) - np.sign(t - 0.3) - np.sign(0.72 - t)
    f3 = -3 * np.cos(2 * np.pi * t) + 3 * np.exp(t**2) / (t**3 + 1)
    s, c = np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)
    f4 = 0.1 * s + 0.2 * c + 0.3 * s**2 + 0.4 * c**3 + 0.5 * s**3
    return np.vstack([f1, f2, f3, f4])


def gen_true_betas(filt="sym6", N: int = 256):
    """Thresholded, unit-L2-norm slopes; returns (beta_true (12 x N), theta_true (12 x N))."""
    f = _as_filter(filt)
    coeffs = dwt_batch(raw_slope_functions(grid(N)), f)
    coeffs = np.where(np.abs(coeffs) > COEF_THRESHOLD, coeffs, 0.0)
    betas = idwt_batch(coeffs, f)
    scale = np.sqrt(np.mean(betas**2, axis=1))
    beta_true = np.zeros((M_FUNCTIONAL, N))
    theta_true = np.zeros((M_FUNCTIONAL, N))
    beta_true[:4] = betas / scale[:, None]
    theta_true[:4] = coeffs / scale[:, None]
    return beta_true, theta_true


def gen_latent_curves(n: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """The z-processes, shape (n, 12, N), each sampled on N points of its own domain."""
    z = np.empty((n, M_FUNCTIONAL, N))
    u01 = np.linspace(0.0, 1.0, N)
    T = [lo + (hi - lo) * u01 for lo, hi in DOMAINS]
    col = lambda a: a[:, None]  # noqa: E731

    a1, a2 = rng.normal(-4, 3, n), rng.normal(7, 1.5, n)
    z[:, 0] = np.cos(2 * np.pi * (T[0][None, :] - col(a1))) + col(a2)
    b1, b2, b3 = rng.normal(-3, 1.2, n), rng.normal(2, 0.5, n), rng.normal(-2, 1, n)
    t = T[1][None, :]
    z[:, 1] = col(b1) * t**3 + col(b2) * t**2 + col(b3) * t
    c1, c2 = rng.normal(-2, 1, n), rng.normal(3, 1.5, n)
    t = T[2][None, :]
    z[:, 2] = np.sin(2 * (t - col(c1))) + col(c2) * t
    d1, d2 = rng.uniform(2, 7, n), rng.normal(2, 0.4, n)
    t = T[3][None, :]
    z[:, 3] = col(d1) * np.cos(2 * t) + col(d2) * t
    e1, e2 = rng.uniform(3, 7, n), rng.normal(0, 1, n)
    t = T[4][None, :]
    z[:, 4] = col(e1) * np.sin(np.pi * t) + col(e2)
    f1, f2, f3 = rng.normal(4, 2, n), rng.normal(-3, 0.5, n), rng.normal(1, 1, n)
    t = T[5][None, :]
    z[:, 5] = col(f1) * np.exp(-t / 3) + col(f2) * t + col(f3)
    j = np.arange(1, 50)
    basis = np.cos(np.pi * j[:, None] * T[6][None, :])  # (49, N)
    for l in range(6, 12):
        g = rng.normal(0.0, 1.0, (n, 49)) / (j + 1)
        h = rng.normal(0.0, 1.0, n)
        z[:, l] = 5 * np.sqrt(2) * (g @ basis) + 5 * col(h)
    return z


def add_level_shifts(z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """omega = z + eps, eps a per-(sample, predictor) scalar with sd 5% of the batch range."""
    ranges = z.max(axis=(0, 2)) - z.min(axis=(0, 2))
    eps = rng.normal(0.0, 1.0, z.shape[:2]) * (0.05 * ranges)[None, :]
    return z + eps[:, :, None]


def mix_curves(omega: np.ndarray) -> np.ndarray:
    """Apply the fixed linear mixing that correlates predictors 1, 2, 3 and 5."""
    return np.einsum("lj,ijt->ilt", MIXING, omega)


def draw_noise(family: str, size: int, rng: np.random.Generator) -> np.ndarray:
    family = noise_family(family)
    if family == "normal":
        return rng.standard_normal(size)
    if family == "mixture":
        wide = rng.random(size) < 0.05
        return np.where(wide, rng.normal(0.0, np.sqrt(10.0), size), rng.normal(0.0, 1.0, size))
    if family == "t3":
        return rng.standard_t(3, size)
    return rng.standard_cauchy(size)


def sigma_from_snr(noiseless_response, snr: float, noise: str = "normal") -> float:
    """Noise scale |mean signal| / snr (used as the Cauchy scale for that family)."""
    noise_family(noise)
    if not snr > 0:
        raise ValueError("snr must be positive")
    mu = float(np.mean(noiseless_response))
    if abs(mu) < 1e-8:
        raise ValueError(f"signal mean {mu:.3g} is too close to zero for an SNR-based noise scale")
    return abs(mu) / snr


def noiseless_response(curves, scalars, beta_true, gamma_true, alpha: float = 0.0) -> np.ndarray:
    N = curves.shape[2]
    return alpha + scalars @ gamma_true + np.einsum("ilt,lt->i", curves, beta_true) / N


def gen_dataset(cfg: SimConfig, sigma: float | None = None) -> SimulatedDataset:
    """Draw one dataset; ``sigma`` overrides the SNR-calibrated noise scale."""
    rng = np.random.default_rng(cfg.seed)
    n, N = cfg.n, cfg.N
    beta_true, theta_true = gen_true_betas(cfg.filter, N)
    gamma_true = np.full(Q_SCALAR, 0.32 / 256)
    u = np.column_stack([rng.standard_normal(n), rng.binomial(1, 0.5, n).astype(float)])
    z = gen_latent_curves(n, N, rng)
    x = mix_curves(add_level_shifts(z, rng))
    signal = noiseless_response(x, u, beta_true, gamma_true)
    eps = draw_noise(cfg.noise, n, rng)
    if sigma is None:
        sigma = sigma_from_snr(signal, cfg.snr, cfg.noise)
    y = signal + sigma * eps
    return SimulatedDataset(Dataset(x, u, y), beta_true, theta_true, gamma_true, float(sigma), signal, cfg)
