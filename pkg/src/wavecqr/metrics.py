"""Selection accuracy and estimation / prediction error measures."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import DimensionError


def _proportion_correct(selected: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean(selected == truth)) if truth.size else 1.0


def group_accuracy(selected, true_groups, m: int, base: int = 0) -> float:
    """Share of the m predictors correctly kept or dropped.

    Supports are index sets within ``base .. base + m - 1``.
    """
    sel, tru = set(selected), set(true_groups)
    if any(not base <= l < base + m for l in sel | tru):
        raise ValueError(f"support indices must lie in {base}..{base + m - 1}")
    hits = len(sel & tru) + (m - len(sel | tru))
    return hits / m


def variable_accuracy(theta_hat, theta_true) -> float:
    """Share of coefficient indices whose zero / nonzero status matches."""
    a = np.asarray(theta_hat).reshape(-1)
    b = np.asarray(theta_true).reshape(-1)
    if a.size != b.size:
        raise DimensionError(f"coefficient vectors differ in length: {a.size} vs {b.size}")
    return _proportion_correct(a != 0, b != 0)


def mise_ise(beta_hat, beta_true):
    """ISE_l = mean_j (bhat_l(t_j) - b_l(t_j))^2 and their mean over predictors."""
    a = np.atleast_2d(np.asarray(beta_hat, dtype=float))
    b = np.atleast_2d(np.asarray(beta_true, dtype=float))
    if a.shape != b.shape:
        raise DimensionError(f"slope curves disagree in shape: {a.shape} vs {b.shape}")
    ise = np.mean((a - b) ** 2, axis=1)
    return float(ise.mean()) if ise.size else 0.0, ise


def mape(y_hat, y) -> float:
    a = np.asarray(y_hat, dtype=float).reshape(-1)
    b = np.asarray(y, dtype=float).reshape(-1)
    if a.size != b.size:
        raise DimensionError(f"prediction and response lengths differ: {a.size} vs {b.size}")
    return float(np.mean(np.abs(a - b)))


@dataclass
class MetricReport:
    mise: float
    mape: float
    ga: float
    va: float
    ise: np.ndarray

    def __post_init__(self):
        self.ise = np.asarray(self.ise, dtype=float)
        if self.mise < 0 or self.mape < 0 or np.any(self.ise < 0):
            raise ValueError("error measures must be nonnegative")
        if not (0 <= self.ga <= 1 and 0 <= self.va <= 1):
            raise ValueError("accuracies must lie in [0, 1]")

    def as_dict(self) -> dict:
        out = asdict(self)
        out["ise"] = [float(v) for v in self.ise]
        return out

    def flat(self) -> dict:
        row = {"mise": self.mise, "mape": self.mape, "ga": self.ga, "va": self.va}
        row.update({f"ise_{l + 1}": float(v) for l, v in enumerate(self.ise)})
        return row


def evaluate_fit(theta_hat, beta_hat, beta_true, theta_true, y_hat, y, group_norm_tol: float = 0.0) -> MetricReport:
    """All metrics for one fit; a predictor counts as selected when its
    coefficient block has any nonzero entry (norm above ``group_norm_tol``)."""
    beta_hat = np.atleast_2d(np.asarray(beta_hat, dtype=float))
    m, N = beta_hat.shape
    blocks = np.asarray(theta_hat, dtype=float).reshape(m, N)
    sel = {l for l in range(m) if np.linalg.norm(blocks[l]) > group_norm_tol}
    tru = {l for l in range(m) if np.any(np.asarray(theta_true).reshape(m, N)[l] != 0)}
    mise, ise = mise_ise(beta_hat, beta_true)
    return MetricReport(mise, mape(y_hat, y), group_accuracy(sel, tru, m), variable_accuracy(theta_hat, theta_true), ise)
