"""Orthonormal periodic discrete wavelet transform on dyadic-length signals.

Coefficients are stored coarsest-first: the ``2**j0`` approximation
coefficients, then detail bands of sizes ``2**j0, 2**(j0+1), ..., N/2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "WaveletFilter",
    "WaveletCoeffs",
    "get_filter",
    "dwt",
    "idwt",
    "dwt_batch",
    "idwt_batch",
    "wavelet_matrix",
    "dyadic_exponent",
]

# Least-asymmetric Daubechies filter with 6 vanishing moments.
_SYM6_LOWPASS = (
    0.015404109327044824299,
    0.0034907120842221625153,
    -0.1179901111485200254,
    -0.048311742585698054971,
    0.49105594192797373304,
    0.78764114102865099607,
    0.33792942172816583271,
    -0.072637522786376583464,
    -0.021060292512370847992,
    0.044724901770781384663,
    0.001767711864254007741,
    -0.0078007083250323804142,
)

_SQRT_HALF = 0.70710678118654752440


@dataclass(frozen=True)
class WaveletFilter:
    name: str
    lowpass: np.ndarray
    highpass: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lowpass, dtype=float)
        hi = np.asarray(self.highpass, dtype=float)
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lowpass", lo)
        object.__setattr__(self, "highpass", hi)
        _check_orthonormal(self.name, lo, hi)

    @property
    def length(self) -> int:
        return self.lowpass.size


def _check_orthonormal(name, lo, hi, tol=1e-12):
    if lo.size % 2 or lo.size != hi.size:
        raise ValueError(f"{name}: filters must have equal even length")
    if abs(lo.sum() - np.sqrt(2.0)) > tol:
        raise ValueError(f"{name}: lowpass taps do not sum to sqrt(2)")
    for f in (lo, hi):
        if abs(f @ f - 1.0) > tol:
            raise ValueError(f"{name}: filter taps are not unit norm")
        for s in range(1, f.size // 2):
            if abs(f[2 * s:] @ f[: f.size - 2 * s]) > tol:
                raise ValueError(f"{name}: even shifts are not orthogonal")
    for s in range(-(lo.size // 2) + 1, lo.size // 2):
        if s >= 0:
            ip = lo[2 * s:] @ hi[: lo.size - 2 * s]
        else:
            ip = hi[-2 * s:] @ lo[: lo.size + 2 * s]
        if abs(ip) > tol:
            raise ValueError(f"{name}: lowpass and highpass are not orthogonal")


def _qmf(lowpass):
    lo = np.asarray(lowpass, dtype=float)
    return lo[::-1] * (-1.0) ** np.arange(lo.size)


def _daubechies_lowpass(p):
    """Minimum-phase Daubechies taps via spectral factorization in extended precision."""
    import mpmath as mp

    with mp.workdps(60):
        coeffs = [mp.binomial(p - 1 + k, k) for k in range(p)]
        roots_y = mp.polyroots(coeffs[::-1], maxsteps=500, extraprec=300) if p > 1 else []
        zeros = []
        for y in roots_y:
            b = 2 - 4 * y
            z = (b + mp.sqrt(b * b - 4)) / 2
            zeros.append(z if abs(z) < 1 else 1 / z)
        poly = [mp.mpf(1)]
        for r in zeros + [mp.mpf(-1)] * p:
            nxt = [mp.mpc(0)] * (len(poly) + 1)
            for k, a in enumerate(poly):
                nxt[k] += a
                nxt[k + 1] -= a * r
            poly = nxt
        taps = [mp.re(a) for a in poly]
        scale = mp.sqrt(2) / sum(taps)
        return tuple(float(a * scale) for a in taps)


@lru_cache(maxsize=None)
def get_filter(name: str = "sym6") -> WaveletFilter:
    """Look up a filter by name: ``haar``, ``sym6`` or ``daubechies-<k>`` (``db<k>``)."""
    key = name.lower()
    if key in ("haar", "db1", "daubechies-1"):
        lo = (_SQRT_HALF, _SQRT_HALF)
        return WaveletFilter("haar", lo, _qmf(lo))
    if key == "sym6":
        return WaveletFilter("sym6", _SYM6_LOWPASS, _qmf(_SYM6_LOWPASS))
    for prefix in ("daubechies-", "db"):
        if key.startswith(prefix) and key[len(prefix):].isdigit():
            k = int(key[len(prefix):])
            if not 1 <= k <= 10:
                raise ValueError("daubechies order must be between 1 and 10")
            lo = _daubechies_lowpass(k)
            return WaveletFilter(f"daubechies-{k}", lo, _qmf(lo))
    raise ValueError(f"unknown wavelet filter {name!r}")


def _as_filter(filt) -> WaveletFilter:
    return get_filter(filt) if isinstance(filt, str) else filt


def dyadic_exponent(n: int) -> int:
    """Return J with n == 2**J, or raise ValueError."""
    n = int(n)
    if n < 1 or n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    return n.bit_length() - 1


@dataclass(frozen=True)
class WaveletCoeffs:
    values: np.ndarray
    levels: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        J = dyadic_exponent(vals.shape[-1])
        if not 0 <= self.levels <= J:
            raise ValueError(f"levels={self.levels} out of range for length {vals.shape[-1]}")
        object.__setattr__(self, "values", vals)

    @property
    def coarsest_level(self) -> int:
        return dyadic_exponent(self.values.shape[-1]) - self.levels

    def bands(self) -> list[slice]:
        """Slices of the approximation band followed by detail bands, coarse to fine."""
        j0 = self.coarsest_level
        n0 = 2**j0
        out = [slice(0, n0)]
        start = n0
        for j in range(j0, j0 + self.levels):
            out.append(slice(start, start + 2**j))
            start += 2**j
        return out

    def approximation(self) -> np.ndarray:
        return self.values[..., : 2**self.coarsest_level]


def _resolve_levels(n, levels):
    J = dyadic_exponent(n)
    if J < 1:
        raise ValueError("signal length must be at least 2")
    if levels is None:
        return J
    levels = int(levels)
    if not 1 <= levels <= J:
        raise ValueError(f"levels must be in [1, {J}], got {levels}")
    return levels


@lru_cache(maxsize=256)
def _tap_index(M, L):
    # idx[n, k] = (2k + n) mod M
    return (2 * np.arange(M // 2)[None, :] + np.arange(L)[:, None]) % M


def dwt_batch(x, filt="sym6", levels=None) -> np.ndarray:
    """Transform along the last axis; returns an array of the same shape."""
    f = _as_filter(filt)
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    levels = _resolve_levels(n, levels)
    out = np.empty_like(x)
    approx = x
    M = n
    for _ in range(levels):
        idx = _tap_index(M, f.length)
        windows = approx[..., idx]  # (..., L, M/2)
        a = np.einsum("...lk,l->...k", windows, f.lowpass)
        d = np.einsum("...lk,l->...k", windows, f.highpass)
        out[..., M // 2: M] = d
        approx = a
        M //= 2
    out[..., :M] = approx
    return out


def idwt_batch(c, filt="sym6", levels=None) -> np.ndarray:
    """Inverse of :func:`dwt_batch` along the last axis."""
    f = _as_filter(filt)
    c = np.asarray(c, dtype=float)
    n = c.shape[-1]
    levels = _resolve_levels(n, levels)
    M = n >> levels
    approx = c[..., :M]
    for _ in range(levels):
        d = c[..., M: 2 * M]
        M *= 2
        idx = _tap_index(M, f.length)
        rec = np.zeros(c.shape[:-1] + (M,))
        for t in range(f.length):
            rec[..., idx[t]] += f.lowpass[t] * approx + f.highpass[t] * d
        approx = rec
    return approx


def dwt(signal, filt="sym6", levels=None) -> WaveletCoeffs:
    """Orthonormal periodic DWT of a single dyadic-length signal."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise ValueError("dwt expects a 1-D signal; use dwt_batch for arrays")
    lv = _resolve_levels(x.size, levels)
    return WaveletCoeffs(dwt_batch(x, filt, lv), lv)


def idwt(coeffs, filt="sym6", levels=None) -> np.ndarray:
    """Inverse DWT. Accepts WaveletCoeffs or a raw vector plus ``levels``."""
    if isinstance(coeffs, WaveletCoeffs):
        if levels is not None and levels != coeffs.levels:
            raise ValueError("levels argument disagrees with coefficient layout")
        values, levels = coeffs.values, coeffs.levels
    else:
        values = np.asarray(coeffs, dtype=float)
    if values.ndim != 1:
        raise ValueError("idwt expects a 1-D coefficient vector")
    return idwt_batch(values, filt, _resolve_levels(values.size, levels))


def wavelet_matrix(N: int, filt="sym6", levels=None) -> np.ndarray:
    """Explicit N x N transform matrix W with W @ x == dwt(x)."""
    return dwt_batch(np.eye(N), filt, levels).T
