"""Penalty paths, GIC / validation tuning, and bootstrap stability selection."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .admm import FitResult, SolverConfig, fit
from .model import (
    Dataset,
    Design,
    PenaltySpec,
    as_levels,
    build_design,
    check_loss,
    predict_quantile,
    reconstruct_betas,
)
from .prox import soft_threshold

METHOD_RATIOS = {"qSGL": 0.5, "qL": math.inf, "qGL": 0.0}


def method_ratio(method: str) -> float:
    try:
        return METHOD_RATIOS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHOD_RATIOS)}") from None


def penalty_for(lam: float, ratio: float) -> PenaltySpec:
    """Map a path value to (lambda1, lambda2): ``(ratio*lam, lam)``, or ``(lam, 0)`` when ratio is inf."""
    if math.isinf(ratio):
        return PenaltySpec(lam, 0.0)
    return PenaltySpec(ratio * lam, lam)


@dataclass(frozen=True)
class TuningGrid:
    lambda_values: tuple
    ratio: float = 0.5
    criterion: str = "gic"
    phi_n: float | None = None

    def __post_init__(self):
        vals = tuple(float(v) for v in self.lambda_values)
        if not vals:
            raise ValueError("tuning grid is empty")
        if any(v <= 0 for v in vals) or any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid values must be positive and strictly descending")
        if not self.ratio >= 0:
            raise ValueError("ratio must be nonnegative")
        if self.criterion not in ("gic", "validation"):
            raise ValueError("criterion must be 'gic' or 'validation'")
        object.__setattr__(self, "lambda_values", vals)

    def penalties(self) -> list[PenaltySpec]:
        return [penalty_for(v, self.ratio) for v in self.lambda_values]


def phi_n_default(n: int, p: int, method: str = "qSGL") -> float:
    """5 p_n for qSGL and qL, p_n for qGL, with p_n = log(log n) log(log p) / (10 n)."""
    if n < 3 or p < 3:
        raise ValueError("phi_n needs n >= 3 and p >= 3")
    p_n = math.log(math.log(n)) * math.log(math.log(p)) / (10 * n)
    method_ratio(method)
    return p_n if method == "qGL" else 5 * p_n


def null_fit(design: Design, y, taus):
    """Unpenalized fit of intercepts and scalar slopes only (theta = 0), by linear programming.

    Returns (alpha, gamma, xi) where xi (K x n) are optimal check-loss
    subgradients, i.e. the LP duals of the residual equations.
    """
    taus = as_levels(taus)
    y = np.asarray(y, dtype=float)
    K, n, q = taus.K, design.n, design.q
    kn = K * n
    A_fit = np.hstack([np.repeat(np.eye(K), n, axis=0), np.tile(design.u, (K, 1))])
    A_eq = np.hstack([A_fit, np.eye(kn), -np.eye(kn)])
    tau = np.repeat(taus.taus, n)
    c = np.concatenate([np.zeros(K + q), tau, 1 - tau])
    bounds = [(None, None)] * (K + q) + [(0, None)] * (2 * kn)
    res = linprog(c, A_eq=A_eq, b_eq=np.tile(y, K), bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"null fit failed: {res.message}")
    xi = np.asarray(res.eqlin.marginals).reshape(K, n)
    return res.x[:K], res.x[K:K + q], xi


def lambda_max(design: Design, y, taus, ratio: float = 0.5, rtol: float = 1e-6) -> float:
    """Smallest path value at which every coefficient block is zero at the null fit."""
    if design.p_theta == 0:
        return 0.0
    _, _, xi = null_fit(design, y, taus)
    g = (xi.sum(axis=0) @ design.v).reshape(design.m, design.N)
    if math.isinf(ratio):
        return float(np.abs(g).max())
    norms = np.linalg.norm(g, axis=1)
    hi = float(norms.max())
    if ratio == 0 or hi == 0:
        return hi

    def all_zero(lam):
        return np.all(np.linalg.norm(soft_threshold(g, ratio * lam), axis=1) <= lam)

    lo = 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if all_zero(mid):
            hi = mid
        else:
            lo = mid
    return hi


def default_grid(design: Design, y, taus, method: str = "qSGL", criterion: str = "gic",
                 n_lambda: int = 30, min_ratio: float = 1e-3, ratio: float | None = None) -> TuningGrid:
    """``n_lambda`` log-spaced values from lambda_max down to ``min_ratio * lambda_max``.

    ``ratio`` overrides the method's lambda1/lambda2.
    """
    if n_lambda < 1 or not 0 < min_ratio <= 1:
        raise ValueError("need n_lambda >= 1 and 0 < min_ratio <= 1")
    ratio = method_ratio(method) if ratio is None else float(ratio)
    top = lambda_max(design, y, taus, ratio)
    if top <= 0:
        raise ValueError("lambda_max is zero; the response carries no signal for the curves")
    vals = np.geomspace(top, top * min_ratio, n_lambda)
    return TuningGrid(tuple(vals), ratio, criterion)


def mean_check_loss(fit_result: FitResult, design: Design, y, taus) -> np.ndarray:
    """Per-level average check loss, length K."""
    taus = as_levels(taus)
    y = np.asarray(y, dtype=float)
    out = np.empty(taus.K)
    for k, tau in enumerate(taus.taus):
        out[k] = np.mean(check_loss(y - predict_quantile(fit_result.params, design, k), tau))
    return out


def gic(fit_result: FitResult, design: Design, y, taus, phi_n: float) -> float:
    """(1/K) sum_k log(mean check loss at level k) + phi_n * ||theta*||_0.

    A level with zero average loss yields -inf (an interpolating fit).
    """
    losses = mean_check_loss(fit_result, design, y, taus)
    support = int(np.count_nonzero(fit_result.params.theta))
    if np.any(losses <= 0):
        return -math.inf
    return float(np.mean(np.log(losses))) + phi_n * support


@dataclass
class GridSearchResult:
    lambda1: float
    lambda2: float
    index: int
    criterion: str
    path: list[dict]
    fits: list[FitResult] = field(repr=False)
    refine: object = field(default=None, repr=False)  # FitResult -> FitResult, applied to selected fits
    _refined: dict = field(default_factory=dict, repr=False)

    @property
    def best(self) -> FitResult:
        return self.selected_fit(self.criterion)

    def select(self, criterion: str) -> int:
        key = "gic" if criterion == "gic" else "tune_loss"
        scores = np.array([row[key] for row in self.path])
        return int(np.argmin(scores))  # first minimum = largest lambda on a descending path

    def selected_fit(self, criterion: str) -> FitResult:
        i = self.select(criterion)
        if self.refine is None:
            return self.fits[i]
        if i not in self._refined:
            self._refined[i] = self.refine(self.fits[i])
        return self._refined[i]


def _as_design(data, filt) -> Design:
    return data if isinstance(data, Design) else build_design(data, filt)


def _response(data, y):
    if y is not None:
        return np.asarray(y, dtype=float)
    return data.response


def fit_path(design: Design, y, taus, grid: TuningGrid, cfg: SolverConfig | None = None) -> list[FitResult]:
    """Warm-started fits along the descending grid."""
    fits = []
    prev = None
    for pen in grid.penalties():
        prev = fit(design, y, taus, pen, cfg, init=prev)
        fits.append(prev)
    return fits


def grid_search(data_train, data_tune, grid: TuningGrid, taus, cfg: SolverConfig | None = None,
                filt="sym6", y_train=None, y_tune=None, method: str | None = None,
                gic_on: str = "tune") -> GridSearchResult:
    """Fit the whole path on the training data and pick the lambda minimizing the criterion.

    ``validation`` uses the mean check loss on the tuning data. ``gic`` adds
    ``phi_n * ||theta*||_0`` to the log check loss measured on the tuning data
    (``gic_on="tune"``, the default) or on the training data
    (``gic_on="train"``); without tuning data both fall back to training data.
    Datasets or prebuilt designs are accepted (designs need ``y_train`` /
    ``y_tune``). Ties go to the larger lambda.

    The path itself is fitted without polishing; when ``cfg.polish`` is set,
    only selected fits are polished (warm-started from their path fit).
    """
    if gic_on not in ("tune", "train"):
        raise ValueError("gic_on must be 'tune' or 'train'")
    taus = as_levels(taus)
    d_train = _as_design(data_train, filt)
    d_tune = _as_design(data_tune, filt) if data_tune is not None else d_train
    yt = _response(data_train, y_train)
    yv = _response(data_tune, y_tune) if data_tune is not None else yt
    if d_tune.m != d_train.m or d_tune.N != d_train.N or d_tune.q != d_train.q:
        raise ValueError("training and tuning data disagree on m, N or q")
    phi = grid.phi_n
    if phi is None:
        if method is None:
            method = {0.5: "qSGL", 0.0: "qGL"}.get(grid.ratio, "qL" if math.isinf(grid.ratio) else "qSGL")
        phi = phi_n_default(d_train.n, d_train.num_columns, method)
    d_gic, y_gic = (d_tune, yv) if gic_on == "tune" else (d_train, yt)
    cfg = cfg or SolverConfig()
    fits = fit_path(d_train, yt, taus, grid, replace(cfg, polish=False))
    path = []
    for lam, f in zip(grid.lambda_values, fits):
        row = f.summary()
        row["lambda"] = lam
        row["gic"] = gic(f, d_gic, y_gic, taus, phi)
        row["tune_loss"] = float(np.mean(mean_check_loss(f, d_tune, yv, taus)))
        path.append(row)
    refine = None
    if cfg.polish:
        def refine(f):
            return fit(d_train, yt, taus, f.pen, cfg, init=f)
    res = GridSearchResult(0.0, 0.0, 0, grid.criterion, path, fits, refine)
    res.index = res.select(grid.criterion)
    res.lambda1 = fits[res.index].pen.lambda1
    res.lambda2 = fits[res.index].pen.lambda2
    return res


def function_norms(fit_result: FitResult, filt="sym6") -> np.ndarray:
    """sqrt(mean beta_l(t_j)^2) for every predictor."""
    betas = reconstruct_betas(fit_result.params, filt)
    return np.sqrt(np.mean(betas**2, axis=1))


@dataclass
class StabilityReport:
    norms: np.ndarray  # B x m, NaN rows for degenerate resamples
    medians: np.ndarray
    selected: list[int]
    threshold: float
    degenerate: list[int]
    lambdas: list[tuple]

    def boxplot_rows(self) -> list[dict]:
        rows = []
        for l in range(self.norms.shape[1]):
            col = self.norms[:, l]
            col = col[np.isfinite(col)]
            if col.size:
                qs = np.quantile(col, [0, 0.25, 0.5, 0.75, 1.0])
            else:
                qs = [math.nan] * 5
            rows.append({"predictor": l + 1, "min": qs[0], "q1": qs[1], "median": qs[2],
                         "q3": qs[3], "max": qs[4], "selected": (l in self.selected)})
        return rows


def _bootstrap_job(args):
    data, idx, taus, method, n_lambda, min_ratio, cfg, filt = args
    boot = data.subset(idx)
    if np.ptp(boot.response) == 0:
        return None
    design = build_design(boot, filt)
    try:
        grid = default_grid(design, boot.response, taus, method, "gic", n_lambda, min_ratio)
    except ValueError:
        return np.zeros(design.m), (0.0, 0.0)
    # observations left out of the resample score the criterion
    oob = np.setdiff1d(np.arange(data.n), idx)
    tune = data.subset(oob) if oob.size else None
    res = grid_search(design, tune, grid, taus, cfg, filt, y_train=boot.response, method=method)
    return function_norms(res.best, filt), (res.lambda1, res.lambda2)


def stability_select(data: Dataset, taus, method: str = "qSGL", B: int = 100, norm_threshold: float = 1e-5,
                     seed: int = 0, cfg: SolverConfig | None = None, filt="sym6", n_lambda: int = 30,
                     min_ratio: float = 1e-3, jobs: int = 1) -> StabilityReport:
    """Bootstrap the observations B times, tune each refit by GIC, and keep
    the predictors whose median slope norm exceeds ``norm_threshold``.

    The GIC loss of each refit is measured on that resample's out-of-bag
    observations."""
    if B < 1:
        raise ValueError("B must be at least 1")
    taus = as_levels(taus)
    children = np.random.SeedSequence(seed).spawn(B)
    tasks = []
    for child in children:
        idx = np.random.default_rng(child).integers(0, data.n, data.n)
        tasks.append((data, idx, taus, method, n_lambda, min_ratio, cfg, filt))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_bootstrap_job, tasks))
    else:
        results = [_bootstrap_job(t) for t in tasks]
    norms = np.full((B, data.m), np.nan)
    degenerate, lambdas = [], []
    for b, out in enumerate(results):
        if out is None:
            degenerate.append(b)
            lambdas.append((math.nan, math.nan))
            continue
        norms[b], lam = out
        lambdas.append(lam)
    if len(degenerate) == B:
        medians = np.full(data.m, np.nan)
        selected = []
    else:
        medians = np.nanmedian(norms, axis=0)
        selected = [int(l) for l in np.flatnonzero(medians > norm_threshold)]
    return StabilityReport(norms, medians, selected, norm_threshold, degenerate, lambdas)
