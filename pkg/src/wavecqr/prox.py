"""Proximal operators and the exact quadratic (ridge) step of the inner ADMM."""
from __future__ import annotations

import numpy as np

from .model import CoefficientSet, Design, DimensionError, as_levels


class SingularSystemError(np.linalg.LinAlgError):
    """The unpenalized part of the quadratic step is not identifiable."""

    def __init__(self, block: str, detail: str):
        super().__init__(f"singular normal equations in the {block} block: {detail}")
        self.block = block


def _check_tau_eta(tau, eta1):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0) or np.any(tau >= 1):
        raise ValueError("tau must lie in (0, 1)")
    if not np.all(np.asarray(eta1) > 0):
        raise ValueError("eta1 must be positive")
    return tau


def prox_check(c, tau, eta1):
    """argmin_r rho_tau(r) + (eta1/2)(c - r)^2, elementwise."""
    tau = _check_tau_eta(tau, eta1)
    c = np.asarray(c, dtype=float)
    hi = tau / eta1
    lo = (tau - 1.0) / eta1
    out = np.where(c > hi, c - hi, np.where(c < lo, c - lo, 0.0))
    return float(out) if out.ndim == 0 else out


def soft_threshold(v, t):
    """sgn(v) * max(|v| - t, 0); ties at |v| == t map to zero."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def prox_sgl_block(c, t1, t2):
    """Exact minimizer of t1*||b||_1 + t2*||b||_2 + 0.5*||b - c||^2."""
    if t1 < 0 or t2 < 0:
        raise ValueError("thresholds must be nonnegative")
    ups = soft_threshold(c, t1)
    nrm = np.linalg.norm(ups)
    if nrm <= t2 or nrm == 0.0:
        return np.zeros_like(ups)
    return ups * ((nrm - t2) / nrm)


def prox_sgl(theta, t1, t2, m, N):
    """Blockwise :func:`prox_sgl_block` over the m blocks of length N."""
    if t1 < 0 or t2 < 0:
        raise ValueError("thresholds must be nonnegative")
    blocks = soft_threshold(np.asarray(theta, dtype=float).reshape(m, N), t1)
    norms = np.linalg.norm(blocks, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > t2, (norms - t2) / norms, 0.0)
    return (blocks * scale[:, None]).reshape(-1)


class DesignFactors:
    """Iteration-invariant factorization of a design.

    Intercepts and scalar slopes are eliminated exactly (centering, then
    projection onto the orthogonal complement of the centered scalars); the
    remaining ridge system in theta is diagonalized by a thin SVD of the
    projected wavelet block. Built once per design, independent of the
    penalty parameters.
    """

    def __init__(self, design: Design):
        n = design.n
        U, V = design.u, design.v
        self.n, self.q, self.P = n, design.q, design.p_theta
        self.ubar = U.mean(axis=0) if n else np.zeros(self.q)
        self.vbar = V.mean(axis=0) if n else np.zeros(self.P)
        Ut = U - self.ubar
        Vt = V - self.vbar
        if self.q:
            if n <= self.q:
                raise SingularSystemError("gamma", f"{n} observations cannot identify {self.q} scalar slopes and an intercept")
            Q, Ru = np.linalg.qr(Ut)
            diag = np.abs(np.diag(Ru))
            scale = max(1.0, np.abs(Ut).max())
            bad = np.flatnonzero(diag <= 1e-10 * scale * np.sqrt(n))
            if bad.size:
                raise SingularSystemError(
                    "gamma", f"scalar covariate column {int(bad[0])} is constant or collinear with earlier columns"
                )
        else:
            Q, Ru = np.zeros((n, 0)), np.zeros((0, 0))
        self.Q, self.Ru = Q, Ru
        self.QtV = Q.T @ Vt
        if self.P:
            Vperp = Vt - Q @ self.QtV
            Us, s, Rt = np.linalg.svd(Vperp, full_matrices=False)
            self.Us, self.s, self.R = Us, s, Rt.T
        else:
            self.Us, self.s, self.R = np.zeros((n, 0)), np.zeros(0), np.zeros((0, 0))
        self.QtVR = self.QtV @ self.R
        self.vbarR = self.R.T @ self.vbar


def design_factors(design: Design) -> DesignFactors:
    fac = design._cache.get("factors")
    if fac is None:
        fac = DesignFactors(design)
        design._cache["factors"] = fac
    return fac


class QuadraticStep:
    """Exact minimizer of

        (eta/2)||theta - a||^2 + (eta1/2) sum_{k,i} (t_ki - alpha_k - u_i'gamma - v_i'theta)^2

    for a fixed anchor ``a`` and targets ``t``. Theta is represented as
    ``a + R @ omega`` so that repeated solves with the same anchor cost
    O(n * rank) instead of O(p^2).
    """

    def __init__(self, design: Design, K: int, eta: float, eta1: float):
        if eta <= 0 or eta1 <= 0:
            raise ValueError("eta and eta1 must be positive")
        self.fac = design_factors(design)
        self.K, self.eta, self.eta1 = K, eta, eta1
        c = eta1 * K
        s = self.fac.s
        denom = eta + c * s**2
        self.shrink = c * s**2 / denom
        self.gain = c * s / denom
        self.anchor = None

    def set_anchor(self, a):
        fac = self.fac
        a = np.asarray(a, dtype=float)
        self.anchor = a
        self._Ra = fac.R.T @ a
        self._QVa = fac.QtV @ a
        self._vbar_a = float(fac.vbar @ a) if fac.P else 0.0
        self._Vta = fac.Us @ (fac.s * self._Ra) + fac.Q @ self._QVa

    def solve(self, T):
        """Targets T (K x n) -> (alpha, gamma, omega, fitted K x n)."""
        fac = self.fac
        tbar = T.mean(axis=1)
        b = (T - tbar[:, None]).mean(axis=0)
        omega = -self.shrink * self._Ra + self.gain * (fac.Us.T @ b)
        Vt_theta = self._Vta + fac.Us @ (fac.s * omega) + fac.Q @ (fac.QtVR @ omega)
        proj = fac.Q.T @ (b - Vt_theta)
        gamma = np.linalg.solve(fac.Ru, proj) if fac.q else np.zeros(0)
        slope_centered = fac.Q @ proj + Vt_theta
        vbar_theta = self._vbar_a + fac.vbarR @ omega
        alpha = tbar - fac.ubar @ gamma - vbar_theta
        fitted = tbar[:, None] + slope_centered[None, :]
        return alpha, gamma, omega, fitted

    def theta(self, omega):
        return self.anchor + self.fac.R @ omega


def solve_quadratic_step(design: Design, y, taus, r, z, theta_anchor, w, eta, eta1) -> CoefficientSet:
    """Minimize (eta/2)||theta - theta_anchor + w||^2
    + (eta1/2) sum_{k,i} (y_i - alpha_k - u_i'gamma - v_i'theta - r_ki + z_ki)^2."""
    taus = as_levels(taus)
    y = np.asarray(y, dtype=float).reshape(-1)
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    if y.size != design.n or r.shape != (taus.K, design.n) or z.shape != r.shape:
        raise DimensionError("r and z must be K x n and agree with the design")
    step = QuadraticStep(design, taus.K, eta, eta1)
    step.set_anchor(np.asarray(theta_anchor, dtype=float) - np.asarray(w, dtype=float))
    alpha, gamma, omega, _ = step.solve(y[None, :] - r + z)
    return CoefficientSet(alpha, gamma, step.theta(omega), design.m, design.N)
