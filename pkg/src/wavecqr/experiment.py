"""Seeded Monte Carlo harness for the simulation table rows.

Each repetition draws one batch of 12n observations and splits it into
training (n), tuning (n) and test (10n) parts that share the noise scale.
A single warm-started lambda path per method serves both the GIC and the
validation-set (gold standard) selections.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .admm import FitResult, SolverConfig
from .metrics import evaluate_fit
from .model import as_levels, build_design, predict_quantile, reconstruct_betas
from .simgen import SimConfig, gen_dataset
from .tuning import METHOD_RATIOS, default_grid, grid_search

CRITERIA = ("gic", "validation")
AGG_FIELDS = ("mise", "ga", "va", "mape") + tuple(f"ise_{l}" for l in range(1, 13))


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 200
    snr: float = 5.0
    noise: str = "normal"
    reps: int = 20
    methods: tuple = ("qSGL",)
    criteria: tuple = ("gic",)
    taus: tuple = (0.5,)
    seed: int = 0
    N: int = 256
    filter: str = "sym6"
    n_lambda: int = 30
    min_ratio: float = 1e-3
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        for m in self.methods:
            if m not in METHOD_RATIOS:
                raise ValueError(f"unknown method {m!r}")
        for c in self.criteria:
            if c not in CRITERIA:
                raise ValueError(f"unknown criterion {c!r}")
        SimConfig(n=self.n, snr=self.snr, noise=self.noise, N=self.N, filter=self.filter)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["solver"] = asdict(self.solver)
        return out


def rep_seeds(seed: int, reps: int) -> list[int]:
    """One 32-bit simulation seed per repetition, independent of how reps are scheduled."""
    return [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(reps)]


def stopping_rule_ok(fr: FitResult, K: int, q: int, eps_abs: float, eps_rel: float) -> bool:
    """True unless the fit claims convergence while its final residuals exceed the thresholds."""
    if not fr.converged:
        return True
    P = fr.theta_star.size
    prim = float(np.linalg.norm(fr.theta_dense - fr.theta_star))
    r_primal = math.sqrt(P) * eps_abs + eps_rel * max(np.linalg.norm(fr.theta_dense), np.linalg.norm(fr.theta_star))
    r_dual = math.sqrt(P + q + K) * eps_abs + eps_rel * float(np.linalg.norm(fr.dual))
    return prim <= r_primal and fr.dual_residual <= r_dual


def run_rep(cfg: ExperimentConfig, rep: int, sim_seed: int, method: str) -> list[dict]:
    taus = as_levels(cfg.taus)
    n = cfg.n
    sim = gen_dataset(SimConfig(n=12 * n, snr=cfg.snr, noise=cfg.noise, seed=sim_seed, N=cfg.N, filter=cfg.filter))
    train = sim.data.subset(np.arange(n))
    tune = sim.data.subset(np.arange(n, 2 * n))
    test = sim.data.subset(np.arange(2 * n, 12 * n))
    d_train = build_design(train, cfg.filter)
    d_test = build_design(test, cfg.filter)
    grid = default_grid(d_train, train.response, taus, method, cfg.criteria[0], cfg.n_lambda, cfg.min_ratio)
    res = grid_search(d_train, tune, grid, taus, cfg.solver, cfg.filter, y_train=train.response, method=method)
    k_mid = int(np.argmin(np.abs(taus.taus - 0.5)))
    eps = (cfg.solver.eps_abs, cfg.solver.eps_rel)
    violations = sum(not stopping_rule_ok(f, taus.K, d_train.q, *eps) for f in res.fits)
    rows = []
    for crit in cfg.criteria:
        fr = res.selected_fit(crit)
        betas = reconstruct_betas(fr.params, cfg.filter)
        rep_metrics = evaluate_fit(fr.params.theta, betas, sim.beta_true, sim.theta_true,
                                   predict_quantile(fr.params, d_test, k_mid), test.response)
        row = {"rep": rep, "seed": sim_seed, "method": method, "criterion": crit,
               "lambda1": fr.pen.lambda1, "lambda2": fr.pen.lambda2, "index": res.select(crit),
               "converged": fr.converged, "polished": fr.polished,
               "stopping_ok": stopping_rule_ok(fr, taus.K, d_train.q, *eps) and violations == 0,
               "path_converged": sum(f.converged for f in res.fits), "sigma": sim.sigma}
        row.update(rep_metrics.flat())
        rows.append(row)
    return rows


def _job(args):
    return run_rep(*args)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[dict]

    def aggregate(self) -> list[dict]:
        """Median and IQR of every metric per (method, criterion), in a fixed order."""
        out = []
        for method in self.config.methods:
            for crit in self.config.criteria:
                sel = sorted((r for r in self.rows if r["method"] == method and r["criterion"] == crit),
                             key=lambda r: r["rep"])
                rec = {"method": method, "criterion": crit, "n": self.config.n, "snr": self.config.snr,
                       "noise": self.config.noise, "reps": len(sel),
                       "converged": sum(bool(r["converged"]) for r in sel),
                       "stopping_violations": sum(not r["stopping_ok"] for r in sel)}
                for key in AGG_FIELDS:
                    vals = np.array([r[key] for r in sel if key in r], dtype=float)
                    if vals.size == 0:
                        continue
                    q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75])
                    rec[f"{key}_median"] = float(med)
                    rec[f"{key}_iqr"] = float(q3 - q1)
                out.append(rec)
        return out

    def median(self, method: str, criterion: str, key: str) -> float:
        for rec in self.aggregate():
            if rec["method"] == method and rec["criterion"] == criterion:
                return rec[f"{key}_median"]
        raise KeyError((method, criterion))


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """All repetitions for every method; results do not depend on ``jobs``."""
    seeds = rep_seeds(cfg.seed, cfg.reps)
    tasks = [(cfg, rep, seeds[rep], method) for rep in range(cfg.reps) for method in cfg.methods]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_job, tasks))
    else:
        chunks = [_job(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r["rep"], cfg.methods.index(r["method"]), cfg.criteria.index(r["criterion"])))
    return ExperimentResult(cfg, rows)
