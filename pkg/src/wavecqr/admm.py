"""Nested ADMM for the sparse-group-lasso penalized composite quantile fit.

Outer loop: split theta = theta*, update (alpha, gamma, theta) by an inner
ADMM on the check loss, theta* by the blockwise sparse group lasso prox, then
the scaled dual w. Inner loop: split the residuals r = y - fit, prox the check
loss in r, solve the ridge step exactly, update the scaled dual z.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .model import (
    CoefficientSet,
    Design,
    DimensionError,
    PenaltySpec,
    as_levels,
    check_loss,
    objective,
    residuals,
    sgl_penalty,
)
from .prox import QuadraticStep, prox_check, prox_sgl, soft_threshold


@dataclass(frozen=True)
class SolverConfig:
    eta: float = 1.0
    eta1: float = 1.0
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    max_outer: int = 5000
    max_inner: int = 200
    warm_start: bool = True
    polish: bool = True
    polish_budget: int = 300  # outer iterations per tightening stage before a polish retry
    polish_max_dim: int = 1000  # larger Newton systems are not attempted

    def __post_init__(self):
        for name in ("eta", "eta1", "eps_abs", "eps_rel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer < 1 or self.max_inner < 1 or self.polish_budget < 0 or self.polish_max_dim < 0:
            raise ValueError("iteration limits must be at least 1")


@dataclass
class InnerState:
    """Inner-ADMM variables carried across outer iterations (and along a lambda path)."""

    r: np.ndarray
    z: np.ndarray
    fitted: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    omega: np.ndarray | None = None
    iters: int = 0

    @classmethod
    def zeros(cls, K, n, q):
        return cls(np.zeros((K, n)), np.zeros((K, n)), np.zeros((K, n)), np.zeros(K), np.zeros(q))


@dataclass
class FitResult:
    params: CoefficientSet
    theta_dense: np.ndarray
    dual: np.ndarray
    outer_iters: int
    inner_iters_total: int
    primal_residual: float
    dual_residual: float
    primal_tol: float
    dual_tol: float
    objective: float
    converged: bool
    pen: PenaltySpec
    polished: bool = False
    merit_increases: int = 0
    theta_star: np.ndarray | None = field(default=None, repr=False)
    inner: InnerState | None = field(default=None, repr=False)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.params.theta)

    def block_support(self) -> np.ndarray:
        """Indices of predictors whose coefficient block is not identically zero."""
        return np.flatnonzero(np.any(self.params.blocks() != 0, axis=1))

    def dense_support(self, threshold: float = 1e-6) -> np.ndarray:
        return np.flatnonzero(np.abs(self.theta_dense) > threshold)

    def summary(self) -> dict:
        return {
            "lambda1": self.pen.lambda1,
            "lambda2": self.pen.lambda2,
            "objective": self.objective,
            "converged": self.converged,
            "polished": self.polished,
            "outer_iters": self.outer_iters,
            "inner_iters_total": self.inner_iters_total,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "primal_tol": self.primal_tol,
            "dual_tol": self.dual_tol,
            "support_size": int(np.count_nonzero(self.params.theta)),
            "merit_increases": self.merit_increases,
        }


def _check_inputs(design: Design, y, taus):
    taus = as_levels(taus)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != design.n:
        raise DimensionError(f"response has {y.size} entries, design has {design.n} rows")
    return y, taus


def inner_quantile_step(step: QuadraticStep, Y, taus, state: InnerState, cfg: SolverConfig) -> InnerState:
    """Approximately minimize L_n(alpha, gamma, theta) + (eta/2)||theta - anchor||^2.

    ``step`` must already carry the anchor ``theta* - w``. ``Y`` is the K x n
    broadcast response. Returns the updated state; theta is ``step.theta(state.omega)``.
    """
    tau = taus.taus[:, None]
    eta1 = cfg.eta1
    r, z, fitted = state.r, state.z, state.fitted
    sqrt_dim = math.sqrt(Y.size)
    y_norm = np.linalg.norm(Y)
    alpha = gamma = omega = None
    j = 0
    for j in range(1, cfg.max_inner + 1):
        r = prox_check(Y - fitted + z, tau, eta1)
        alpha, gamma, omega, new_fit = step.solve(Y - r + z)
        gap = Y - new_fit - r
        z = z + gap
        prim = np.linalg.norm(gap)
        dual = eta1 * np.linalg.norm(new_fit - fitted)
        fitted = new_fit
        eps_pri = sqrt_dim * cfg.eps_abs + cfg.eps_rel * max(np.linalg.norm(fitted), np.linalg.norm(r), y_norm)
        eps_dual = sqrt_dim * cfg.eps_abs + cfg.eps_rel * eta1 * np.linalg.norm(z)
        if prim <= eps_pri and dual <= eps_dual:
            break
    return InnerState(r, z, fitted, alpha, gamma, omega, j)


def _emit(trace, record):
    if trace is None:
        return
    if callable(trace):
        trace(record)
    else:
        trace.write(json.dumps(record) + "\n")


class _OuterLoop:
    """Mutable outer-ADMM state so a converged run can be resumed at tighter tolerances."""

    def __init__(self, design, Y, taus, pen, cfg, init, trace):
        self.design, self.Y, self.taus, self.pen, self.cfg, self.trace = design, Y, taus, pen, cfg, trace
        K, n, q, P = taus.K, design.n, design.q, design.p_theta
        self.step = QuadraticStep(design, K, cfg.eta, cfg.eta1)
        if init is not None:
            self.theta_star = init.theta_star.copy()
            self.w = init.dual.copy()
            st = init.inner
            self.state = InnerState(st.r.copy(), st.z.copy(), st.fitted.copy(), st.alpha.copy(), st.gamma.copy())
        else:
            self.theta_star = np.zeros(P)
            self.w = np.zeros(P)
            self.state = InnerState.zeros(K, n, q)
        self.theta = self.theta_star.copy()
        self.iters = 0
        self.inner_total = 0
        self.merit_prev = None
        self.merit_increases = 0
        self.prim = self.dual = float("nan")

    def tolerances(self, eps_abs, eps_rel):
        P = self.design.p_theta
        K, q = self.taus.K, self.design.q
        r_primal = math.sqrt(P) * eps_abs + eps_rel * max(np.linalg.norm(self.theta), np.linalg.norm(self.theta_star))
        r_dual = math.sqrt(P + q + K) * eps_abs + eps_rel * float(np.linalg.norm(self.w))
        return float(r_primal), float(r_dual)

    def run(self, eps_abs, eps_rel, budget, inner_scale: int = 1) -> bool:
        cfg, pen, design = self.cfg, self.pen, self.design
        m, N, P = design.m, design.N, design.p_theta
        K, n, q = self.taus.K, design.n, design.q
        eta = cfg.eta
        t1, t2 = pen.lambda1 / eta, pen.lambda2 / eta
        taucol = self.taus.taus[:, None]
        inner_cfg = replace(cfg, eps_abs=eps_abs, eps_rel=eps_rel, max_inner=cfg.max_inner * inner_scale)
        for _ in range(budget):
            self.iters += 1
            self.step.set_anchor(self.theta_star - self.w)
            if not cfg.warm_start:
                self.state = InnerState.zeros(K, n, q)
            self.state = inner_quantile_step(self.step, self.Y, self.taus, self.state, inner_cfg)
            self.inner_total += self.state.iters
            theta = self.step.theta(self.state.omega)
            new_star = prox_sgl(theta + self.w, t1, t2, m, N) if P else self.theta_star
            diff = theta - new_star
            merit = (
                float(check_loss(self.Y - self.state.fitted, taucol).sum())
                + sgl_penalty(new_star, pen, m, N)
                + eta * float(self.w @ diff)
                + 0.5 * eta * float(diff @ diff)
            )
            if self.merit_prev is not None and merit > self.merit_prev + 1e-3 * (1 + abs(self.merit_prev)):
                self.merit_increases += 1
            self.merit_prev = merit
            self.w = self.w + diff
            self.prim = float(np.linalg.norm(diff))
            self.dual = float(eta * np.linalg.norm(new_star - self.theta_star))
            self.theta, self.theta_star = theta, new_star
            r_primal, r_dual = self.tolerances(eps_abs, eps_rel)
            _emit(self.trace, {"iteration": self.iters, "objective": merit, "primal_residual": self.prim,
                               "dual_residual": self.dual, "primal_tol": r_primal, "dual_tol": r_dual,
                               "inner_iters": self.state.iters})
            if self.prim <= r_primal and self.dual <= r_dual:
                return True
        return False

    def params(self) -> CoefficientSet:
        d = self.design
        return CoefficientSet(self.state.alpha, self.state.gamma, self.theta_star, d.m, d.N)


POLISH_REFINEMENTS = (0.1, 0.01, 1e-3, 1e-4)
POLISH_INNER_SCALE = 10


def fit(design: Design, y, taus, pen: PenaltySpec, cfg: SolverConfig | None = None,
        init: FitResult | None = None, trace=None) -> FitResult:
    """Solve the penalized composite quantile problem by nested ADMM.

    ``init`` warm-starts every variable from a previous fit on the same design
    (used along a lambda path). ``trace`` is a callable or writable text
    stream receiving one record per outer iteration.

    With ``cfg.polish`` the converged point is refined by an active-set Newton
    step; if the active set is not yet identified, ADMM continues at
    successively tighter tolerances (``POLISH_REFINEMENTS``, at most
    ``cfg.polish_budget`` outer iterations each) before retrying. The reported
    residuals and tolerances always refer to ``cfg.eps_abs`` / ``cfg.eps_rel`` at the final
    ADMM iterate.
    """
    cfg = cfg or SolverConfig()
    y, taus = _check_inputs(design, y, taus)
    Y = np.broadcast_to(y, (taus.K, design.n))
    loop = _OuterLoop(design, Y, taus, pen, cfg, init, trace)
    converged = loop.run(cfg.eps_abs, cfg.eps_rel, cfg.max_outer)

    params = loop.params()
    obj = objective(params, design, y, taus, pen)
    polished = False
    if cfg.polish and converged:
        for factor in (None,) + POLISH_REFINEMENTS:
            if _polish_dim(loop, design) > cfg.polish_max_dim:
                break
            if factor is not None:
                if not loop.run(cfg.eps_abs * factor, cfg.eps_rel * factor, cfg.polish_budget, POLISH_INNER_SCALE):
                    break
                params = loop.params()
                obj = objective(params, design, y, taus, pen)
            better = polish(design, y, taus, pen, params, loop.state.r, loop.state.z * cfg.eta1)
            if better is not None:
                new_obj = objective(better, design, y, taus, pen)
                if new_obj <= obj + 1e-12 * (1 + abs(obj)):
                    params, obj, polished = better, new_obj, True
                    break
    r_primal, r_dual = loop.tolerances(cfg.eps_abs, cfg.eps_rel)
    converged = converged and loop.prim <= r_primal and loop.dual <= r_dual

    return FitResult(
        params=params,
        theta_dense=loop.theta,
        dual=loop.w,
        outer_iters=loop.iters,
        inner_iters_total=loop.inner_total,
        primal_residual=loop.prim,
        dual_residual=loop.dual,
        primal_tol=r_primal,
        dual_tol=r_dual,
        objective=obj,
        converged=converged,
        pen=pen,
        polished=polished,
        merit_increases=loop.merit_increases,
        theta_star=loop.theta_star,
        inner=loop.state,
    )


def _polish_dim(loop: _OuterLoop, design: Design) -> int:
    return design.q + loop.taus.K + int(np.count_nonzero(loop.theta_star)) + int(np.count_nonzero(loop.state.r == 0))


def _stacked_rows(design: Design, K: int, cols_theta=None):
    """Rows (e_k, u_i, v_i[cols]) for all (k, i), k-major."""
    n = design.n
    v = design.v if cols_theta is None else design.v[:, cols_theta]
    E = np.repeat(np.eye(K), n, axis=0)
    return np.hstack([E, np.tile(design.u, (K, 1)), np.tile(v, (K, 1))])


def polish(design: Design, y, taus, pen: PenaltySpec, params: CoefficientSet, r_split, xi_guess):
    """Active-set refinement of an ADMM point.

    Residuals where the split variable is exactly zero are forced to zero;
    other residuals keep their sign; theta keeps its support and signs. The
    resulting square system (interpolation conditions plus stationarity on the
    free coordinates) is solved by Newton's method. Returns new coefficients
    when the refined point passes every sign/interval check, else None.
    """
    taus = as_levels(taus)
    K, n = taus.K, design.n
    m, N = design.m, design.N
    tau = np.repeat(taus.taus, n)
    zmask = (np.asarray(r_split) == 0).reshape(-1)
    rsign = np.sign(np.asarray(r_split)).reshape(-1)
    S = np.flatnonzero(params.theta)
    A = _stacked_rows(design, K, S)
    yy = np.tile(y, K)
    dF = A.shape[1]
    off = K + design.q
    AZ = A[zmask]
    nz = AZ.shape[0]
    xi_fixed = np.where(rsign > 0, tau, tau - 1.0)
    base = A[~zmask].T @ xi_fixed[~zmask]
    block_of = S // N if N else S
    sgn = np.sign(params.theta[S])

    def pen_grad(x):
        g = np.zeros(dF)
        th = x[off:]
        if th.size:
            norms = np.sqrt(np.bincount(block_of, weights=th**2, minlength=m))
            g[off:] = pen.lambda1 * sgn + pen.lambda2 * th / norms[block_of]
        return g, norms if th.size else None

    def pen_hess(x, norms):
        H = np.zeros((dF, dF))
        th = x[off:]
        if th.size and pen.lambda2 > 0:
            for l in np.unique(block_of):
                idx = np.flatnonzero(block_of == l)
                b = th[idx]
                nb = norms[l]
                H[np.ix_(off + idx, off + idx)] = pen.lambda2 * (np.eye(idx.size) / nb - np.outer(b, b) / nb**3)
        return H

    x = np.concatenate([params.alpha, params.gamma, params.theta[S]])
    xi = np.clip(np.asarray(xi_guess).reshape(-1)[zmask], tau[zmask] - 1, tau[zmask])
    scale = 1.0 + np.abs(yy).max()
    for _ in range(30):
        g, norms = pen_grad(x)
        F1 = AZ @ x - yy[zmask]
        F2 = g - AZ.T @ xi - base
        F = np.concatenate([F1, F2])
        if np.linalg.norm(F) <= 1e-12 * scale * math.sqrt(F.size + 1):
            break
        J = np.zeros((nz + dF, dF + nz))
        J[:nz, :dF] = AZ
        J[nz:, :dF] = pen_hess(x, norms)
        J[nz:, dF:] = -AZ.T
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(J, -F, rcond=None)[0]
        if not np.all(np.isfinite(delta)):
            return None
        x = x + delta[:dF]
        xi = xi + delta[dF:]
        if S.size and np.any(np.sign(x[off:]) != sgn):
            return None
    else:
        return None
    tol = 1e-9
    if np.any(xi < tau[zmask] - 1 - tol) or np.any(xi > tau[zmask] + tol):
        return None
    theta = np.zeros(m * N)
    theta[S] = x[off:]
    cand = CoefficientSet(x[:K], x[K:off], theta, m, N)
    R = residuals(cand, design, y, taus).reshape(-1)
    if np.any((R * rsign)[~zmask] < -1e-9 * scale):
        return None
    # the coordinates held at zero must satisfy their subgradient conditions too
    xi_full = xi_fixed.copy()
    xi_full[zmask] = xi
    c = _stacked_rows(design, K).T @ xi_full
    viol = np.abs(c[:off]).max(initial=0.0)
    if design.p_theta:
        viol = max(viol, np.abs(_project_subdifferential(c[off:], theta, pen, m, N)).max())
    if viol > 1e-8 * scale:
        return None
    return cand


def _project_subdifferential(c, theta, pen: PenaltySpec, m, N):
    """c - P_C(c), where C is the sparse-group-lasso subdifferential at theta, blockwise."""
    out = np.zeros_like(c)
    lam1, lam2 = pen.lambda1, pen.lambda2
    for l in range(m):
        sl = slice(l * N, (l + 1) * N)
        b, cl = theta[sl], c[sl]
        nb = np.linalg.norm(b)
        if nb == 0.0:
            st = soft_threshold(cl, lam1)
            ns = np.linalg.norm(st)
            if ns > lam2:
                out[sl] = st * (1 - lam2 / ns)
        else:
            nzb = b != 0
            o = soft_threshold(cl, lam1)
            o[nzb] = cl[nzb] - lam1 * np.sign(b[nzb]) - lam2 * b[nzb] / nb
            out[sl] = o
    return out


def kkt_residual(params: CoefficientSet, design: Design, y, taus, pen: PenaltySpec,
                 zero_tol: float | None = None) -> float:
    """Norm of the smallest element of the objective's subdifferential at ``params``.

    Residuals with ``|r| <= zero_tol`` count as zero and contribute a free
    subgradient in [tau - 1, tau]; the best choice is found by minimizing the
    squared stationarity error (smooth and convex) over that box. Zero means
    ``params`` is a global minimizer.
    """
    y, taus = _check_inputs(design, y, taus)
    K, n, q, P = taus.K, design.n, design.q, design.p_theta
    m, N = design.m, design.N
    if zero_tol is None:
        zero_tol = 1e-9 * (1.0 + float(np.abs(y).max()))
    R = residuals(params, design, y, taus).reshape(-1)
    tau = np.repeat(taus.taus, n)
    free = np.abs(R) <= zero_tol
    xi0 = np.where(R > 0, tau, tau - 1.0)
    lo, hi = tau[free] - 1.0, tau[free]
    A = _stacked_rows(design, K)  # (K n) x (K + q + P)
    Af = A[free]
    base = A[~free].T @ xi0[~free]
    theta = params.theta
    off = K + q

    def value_grad(xf):
        c = base + Af.T @ xf
        resid = np.empty_like(c)
        resid[:off] = c[:off]
        resid[off:] = _project_subdifferential(c[off:], theta, pen, m, N) if P else 0.0
        return float(resid @ resid), 2.0 * (Af @ resid)

    if not free.any():
        return math.sqrt(value_grad(np.zeros(0))[0])
    # least-squares subgradients on the smooth coordinates, clipped into the box
    rhs = -base.copy()
    if P:
        th_nz = theta != 0
        for l in range(m):
            sl = slice(l * N, (l + 1) * N)
            nb = np.linalg.norm(theta[sl])
            if nb > 0:
                idx = np.arange(sl.start, sl.stop)[th_nz[sl]]
                rhs[off + idx] += pen.lambda1 * np.sign(theta[idx]) + pen.lambda2 * theta[idx] / nb
    x_ls = np.linalg.lstsq(Af.T, rhs, rcond=None)[0]
    x0 = np.clip(x_ls, lo, hi)
    best = value_grad(x0)[0]
    res = minimize(value_grad, x0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   options={"maxiter": 5000, "ftol": 1e-16, "gtol": 1e-14})
    best = min(best, float(res.fun))
    return math.sqrt(max(best, 0.0))
