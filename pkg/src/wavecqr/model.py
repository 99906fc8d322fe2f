"""Data containers, wavelet design construction and the penalized composite
quantile objective."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .wavelet import _as_filter, dwt_batch, dyadic_exponent, idwt_batch


class DimensionError(ValueError):
    """Array shapes disagree or a grid length is not dyadic."""


@dataclass(frozen=True)
class Dataset:
    """``curves`` is n x m x N, ``scalars`` n x q, ``response`` length n."""

    curves: np.ndarray
    scalars: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        curves = np.asarray(self.curves, dtype=float)
        scalars = np.asarray(self.scalars, dtype=float)
        response = np.asarray(self.response, dtype=float).reshape(-1)
        n = response.size
        if n < 1:
            raise DimensionError("dataset needs at least one observation")
        if curves.ndim != 3:
            raise DimensionError("curves must be an n x m x N array")
        if scalars.ndim == 1:
            scalars = scalars.reshape(n, -1) if scalars.size else np.zeros((n, 0))
        if curves.shape[0] != n or scalars.shape[0] != n:
            raise DimensionError(
                f"sample counts disagree: curves {curves.shape[0]}, "
                f"scalars {scalars.shape[0]}, response {n}"
            )
        if curves.shape[1] > 0:
            try:
                dyadic_exponent(curves.shape[2])
            except ValueError as exc:
                raise DimensionError(str(exc)) from None
        for name, arr in (("curves", curves), ("scalars", scalars), ("response", response)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "scalars", scalars)
        object.__setattr__(self, "response", response)

    @property
    def n(self) -> int:
        return self.response.size

    @property
    def m(self) -> int:
        return self.curves.shape[1]

    @property
    def grid_len(self) -> int:
        return self.curves.shape[2]

    @property
    def q(self) -> int:
        return self.scalars.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.curves[idx], self.scalars[idx], self.response[idx])


@dataclass(frozen=True, eq=False)
class Design:
    """Feature rows ``a_i = (1, v_i, u_i)``; ``v_i`` stacks dwt(curve)/N over predictors."""

    v: np.ndarray
    u: np.ndarray
    m: int
    N: int
    filter_name: str = "sym6"
    levels: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def q(self) -> int:
        return self.u.shape[1]

    @property
    def p_theta(self) -> int:
        return self.m * self.N

    @property
    def rows(self) -> np.ndarray:
        return np.hstack([np.ones((self.n, 1)), self.v, self.u])

    @property
    def num_columns(self) -> int:
        return 1 + self.p_theta + self.q

    def block(self, l: int) -> slice:
        return slice(l * self.N, (l + 1) * self.N)

    def subset(self, idx) -> "Design":
        idx = np.asarray(idx)
        return Design(self.v[idx], self.u[idx], self.m, self.N, self.filter_name, self.levels)


def build_design(data: Dataset, filt="sym6", levels=None, standardize_scalars=False) -> Design:
    f = _as_filter(filt)
    n, m, N = data.curves.shape
    if m:
        coeffs = dwt_batch(data.curves, f, levels) / N
        v = coeffs.reshape(n, m * N)
    else:
        v = np.zeros((n, 0))
    u = data.scalars.copy()
    if standardize_scalars and u.shape[1]:
        sd = u.std(axis=0)
        sd[sd == 0] = 1.0
        u = u / sd
    return Design(v, u, m, N, f.name, levels)


@dataclass(frozen=True)
class QuantileLevels:
    taus: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.taus, dtype=float))
        if t.ndim != 1 or t.size < 1:
            raise ValueError("need at least one quantile level")
        if np.any(t <= 0) or np.any(t >= 1):
            raise ValueError("quantile levels must lie in (0, 1)")
        if np.any(np.diff(t) <= 0):
            raise ValueError("quantile levels must be strictly increasing")
        object.__setattr__(self, "taus", t)

    @property
    def K(self) -> int:
        return self.taus.size

    @classmethod
    def equally_spaced(cls, K: int = 9) -> "QuantileLevels":
        return cls(np.arange(1, K + 1) / (K + 1))


def as_levels(taus) -> QuantileLevels:
    return taus if isinstance(taus, QuantileLevels) else QuantileLevels(taus)


@dataclass(frozen=True)
class PenaltySpec:
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ValueError("penalty parameters must be nonnegative")


@dataclass
class CoefficientSet:
    alpha: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    m: int
    N: int

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float)).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if self.theta.size != self.m * self.N:
            raise DimensionError(f"theta has {self.theta.size} entries, expected {self.m}x{self.N}")
        for arr in (self.alpha, self.gamma, self.theta):
            if not np.all(np.isfinite(arr)):
                raise ValueError("coefficients must be finite")

    @classmethod
    def zeros(cls, K, q, m, N) -> "CoefficientSet":
        return cls(np.zeros(K), np.zeros(q), np.zeros(m * N), m, N)

    def blocks(self) -> np.ndarray:
        return self.theta.reshape(self.m, self.N)

    def copy(self) -> "CoefficientSet":
        return CoefficientSet(self.alpha.copy(), self.gamma.copy(), self.theta.copy(), self.m, self.N)


def check_loss(r, tau):
    """Quantile check function ``r * (tau - 1{r < 0})``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0) or np.any(tau >= 1):
        raise ValueError("tau must lie in (0, 1)")
    r = np.asarray(r, dtype=float)
    out = np.where(r < 0, (tau - 1.0) * r, tau * r)
    return float(out) if out.ndim == 0 else out


def sgl_penalty(theta, pen: PenaltySpec, m: int | None = None, N: int | None = None) -> float:
    """lambda1 * sum ||b_l||_1 + lambda2 * sum ||b_l||_2 over the blocks of theta."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        if m is None and N is None:
            m, N = 1, theta.size
        elif m is None:
            m = theta.size // N
        elif N is None:
            N = theta.size // m if m else 0
        if m * N != theta.size:
            raise DimensionError("theta length is not m * N")
        blocks = theta.reshape(m, N)
    else:
        blocks = theta
    if blocks.size == 0:
        return 0.0
    return float(pen.lambda1 * np.abs(blocks).sum() + pen.lambda2 * np.linalg.norm(blocks, axis=1).sum())


def _check_dims(params: CoefficientSet, design: Design, y, taus: QuantileLevels):
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != design.n:
        raise DimensionError(f"response has {y.size} entries, design has {design.n} rows")
    if params.alpha.size != taus.K:
        raise DimensionError(f"{params.alpha.size} intercepts for {taus.K} quantile levels")
    if params.gamma.size != design.q:
        raise DimensionError(f"gamma has {params.gamma.size} entries, design has q={design.q}")
    if params.theta.size != design.p_theta or params.m != design.m:
        raise DimensionError("theta does not match the design's m x N layout")
    return y


def slope_part(params: CoefficientSet, design: Design) -> np.ndarray:
    """u_i' gamma + v_i' theta for every row."""
    return design.u @ params.gamma + design.v @ params.theta


def residuals(params: CoefficientSet, design: Design, y, taus) -> np.ndarray:
    """K x n matrix of y_i - alpha_k - u_i' gamma - v_i' theta."""
    taus = as_levels(taus)
    y = _check_dims(params, design, y, taus)
    return y[None, :] - params.alpha[:, None] - slope_part(params, design)[None, :]


def loss(params: CoefficientSet, design: Design, y, taus) -> float:
    taus = as_levels(taus)
    R = residuals(params, design, y, taus)
    return float(check_loss(R, taus.taus[:, None]).sum())


def objective(params: CoefficientSet, design: Design, y, taus, pen: PenaltySpec) -> float:
    """Composite check loss over all levels plus the sparse group lasso penalty on theta."""
    return loss(params, design, y, taus) + sgl_penalty(params.theta, pen, design.m, design.N)


def predict_quantile(params: CoefficientSet, design: Design, k: int) -> np.ndarray:
    """Fitted tau_k-quantile for every row; ``k`` is zero-based."""
    if not 0 <= k < params.alpha.size:
        raise IndexError(f"quantile index {k} out of range for K={params.alpha.size}")
    return params.alpha[k] + slope_part(params, design)


def reconstruct_beta(theta_block, filt="sym6", levels=None) -> np.ndarray:
    """Slope samples beta(t_j) from one block of wavelet coefficients."""
    return idwt_batch(np.asarray(theta_block, dtype=float), filt, levels)


def reconstruct_betas(params: CoefficientSet, filt="sym6", levels=None) -> np.ndarray:
    if params.m == 0:
        return np.zeros((0, params.N))
    return idwt_batch(params.blocks(), filt, levels)
