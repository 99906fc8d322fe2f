"""Second-order cone form of the penalized composite quantile problem.

Variables, in order: alpha (K, free), gamma (q, free), theta+ (mN), theta- (mN),
z (m cone heads), r+ (K*n), r- (K*n); everything after gamma is nonnegative.
The objective is linear; each (k, i) contributes two residual rows and each
predictor l one cone ``z_l >= ||(theta+_l, theta-_l)||_2``.

Text format (one record per line, floats printed with 17 significant digits)::

    WAVECQR-SOCP 1
    DIMS <num_vars> <num_rows> <num_cones>
    VAR <index> <name> FREE|NONNEG          (num_vars lines)
    OBJ <index> <coef>                       (nonzero objective entries)
    ROW <LE|EQ|GE> <rhs> <nnz> <idx>:<val> ...
    CONE <size> <head> <idx> ...
    END
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .model import CoefficientSet, Design, DimensionError, PenaltySpec, as_levels, residuals

MAGIC = "WAVECQR-SOCP 1"
SENSES = ("LE", "EQ", "GE")


class ParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class LinearRow:
    indices: np.ndarray
    values: np.ndarray
    sense: str
    rhs: float


@dataclass(frozen=True, eq=False)
class ConicProblem:
    num_vars: int
    objective: np.ndarray
    rows: tuple
    cones: tuple
    lower: np.ndarray  # 0.0 for nonnegative variables, -inf for free ones
    var_names: tuple

    def __post_init__(self):
        if self.objective.shape != (self.num_vars,) or self.lower.shape != (self.num_vars,):
            raise DimensionError("objective and bounds must have one entry per variable")
        if len(self.var_names) != self.num_vars:
            raise DimensionError("one name per variable required")
        if not np.all((self.lower == 0.0) | (self.lower == -math.inf)):
            raise ValueError("every variable must be free or nonnegative")
        for row in self.rows:
            if row.sense not in SENSES:
                raise ValueError(f"unknown row sense {row.sense!r}")
            if row.indices.size and (row.indices.min() < 0 or row.indices.max() >= self.num_vars):
                raise ValueError("row references an invalid variable")
        for cone in self.cones:
            if len(set(cone)) != len(cone):
                raise ValueError("cone indices must be distinct")
            if min(cone) < 0 or max(cone) >= self.num_vars:
                raise ValueError("cone references an invalid variable")

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    def row_matrix(self) -> sparse.csr_matrix:
        if not self.rows:
            return sparse.csr_matrix((0, self.num_vars))
        indptr = np.cumsum([0] + [r.indices.size for r in self.rows])
        idx = np.concatenate([r.indices for r in self.rows])
        val = np.concatenate([r.values for r in self.rows])
        return sparse.csr_matrix((val, idx, indptr), shape=(self.num_rows, self.num_vars))

    def same_structure(self, other: "ConicProblem") -> bool:
        if (self.num_vars, self.num_rows, len(self.cones)) != (other.num_vars, other.num_rows, len(other.cones)):
            return False
        if self.var_names != other.var_names or self.cones != other.cones:
            return False
        if not (np.array_equal(self.objective, other.objective) and np.array_equal(self.lower, other.lower)):
            return False
        return all(
            a.sense == b.sense and a.rhs == b.rhs and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.values, b.values)
            for a, b in zip(self.rows, other.rows)
        )


@dataclass(frozen=True)
class VariableLayout:
    K: int
    q: int
    m: int
    N: int
    n: int

    @property
    def P(self) -> int:
        return self.m * self.N

    @property
    def alpha(self) -> int:
        return 0

    @property
    def gamma(self) -> int:
        return self.K

    @property
    def theta_plus(self) -> int:
        return self.K + self.q

    @property
    def theta_minus(self) -> int:
        return self.theta_plus + self.P

    @property
    def z(self) -> int:
        return self.theta_minus + self.P

    @property
    def r_plus(self) -> int:
        return self.z + self.m

    @property
    def r_minus(self) -> int:
        return self.r_plus + self.K * self.n

    @property
    def num_vars(self) -> int:
        return self.r_minus + self.K * self.n

    def names(self) -> tuple:
        out = [f"alpha[{k}]" for k in range(self.K)]
        out += [f"gamma[{j}]" for j in range(self.q)]
        for tag in ("thp", "thm"):
            out += [f"{tag}[{l},{j}]" for l in range(self.m) for j in range(self.N)]
        out += [f"z[{l}]" for l in range(self.m)]
        for tag in ("rp", "rm"):
            out += [f"{tag}[{k},{i}]" for k in range(self.K) for i in range(self.n)]
        return tuple(out)


def layout_for(design: Design, K: int) -> VariableLayout:
    return VariableLayout(K, design.q, design.m, design.N, design.n)


def build_socp(design: Design, y, taus, pen: PenaltySpec) -> ConicProblem:
    taus = as_levels(taus)
    y = np.asarray(y, dtype=float).reshape(-1)
    if design.n == 0:
        raise DimensionError("cannot build a conic problem without observations")
    if y.size != design.n:
        raise DimensionError(f"response has {y.size} entries, design has {design.n} rows")
    lay = layout_for(design, taus.K)
    K, n, q, P, m = lay.K, lay.n, lay.q, lay.P, lay.m

    c = np.zeros(lay.num_vars)
    c[lay.theta_plus:lay.z] = pen.lambda1
    c[lay.z:lay.r_plus] = pen.lambda2
    c[lay.r_plus:lay.r_minus] = np.repeat(taus.taus, n)
    c[lay.r_minus:] = np.repeat(1.0 - taus.taus, n)

    lower = np.zeros(lay.num_vars)
    lower[:lay.theta_plus] = -math.inf

    gamma_idx = np.arange(lay.gamma, lay.gamma + q)
    thp_idx = np.arange(lay.theta_plus, lay.theta_plus + P)
    thm_idx = np.arange(lay.theta_minus, lay.theta_minus + P)
    rows = []
    for k in range(K):
        for i in range(n):
            vi = design.v[i]
            nz = np.flatnonzero(vi)
            base_idx = np.concatenate([[lay.alpha + k], gamma_idx, thp_idx[nz], thm_idx[nz]])
            base_val = np.concatenate([[1.0], design.u[i], vi[nz], -vi[nz]])
            j = k * n + i
            # fit + r+ >= y  and  fit - r- <= y
            rows.append(LinearRow(np.append(base_idx, lay.r_plus + j), np.append(base_val, 1.0), "GE", float(y[i])))
            rows.append(LinearRow(np.append(base_idx, lay.r_minus + j), np.append(base_val, -1.0), "LE", float(y[i])))
    cones = tuple(
        (lay.z + l,)
        + tuple(range(lay.theta_plus + l * lay.N, lay.theta_plus + (l + 1) * lay.N))
        + tuple(range(lay.theta_minus + l * lay.N, lay.theta_minus + (l + 1) * lay.N))
        for l in range(m)
    )
    return ConicProblem(lay.num_vars, c, tuple(rows), cones, lower, lay.names())


def lift(params: CoefficientSet, design: Design, y, taus) -> np.ndarray:
    """Point of the conic problem with complementary splits and tight slacks."""
    taus = as_levels(taus)
    lay = layout_for(design, taus.K)
    res = residuals(params, design, y, taus).reshape(-1)
    x = np.zeros(lay.num_vars)
    x[lay.alpha:lay.gamma] = params.alpha
    x[lay.gamma:lay.theta_plus] = params.gamma
    x[lay.theta_plus:lay.theta_minus] = np.maximum(params.theta, 0.0)
    x[lay.theta_minus:lay.z] = np.maximum(-params.theta, 0.0)
    x[lay.z:lay.r_plus] = np.linalg.norm(params.blocks(), axis=1) if lay.m else []
    x[lay.r_plus:lay.r_minus] = np.maximum(res, 0.0)
    x[lay.r_minus:] = np.maximum(-res, 0.0)
    return x


def canonicalize(point, design: Design, K: int) -> np.ndarray:
    """Replace (theta+, theta-) by the complementary split of their difference
    and shrink each cone head to its tail norm."""
    lay = layout_for(design, K)
    x = np.asarray(point, dtype=float).copy()
    theta = x[lay.theta_plus:lay.theta_minus] - x[lay.theta_minus:lay.z]
    x[lay.theta_plus:lay.theta_minus] = np.maximum(theta, 0.0)
    x[lay.theta_minus:lay.z] = np.maximum(-theta, 0.0)
    tails = np.concatenate([np.maximum(theta, 0.0).reshape(lay.m, lay.N), np.maximum(-theta, 0.0).reshape(lay.m, lay.N)], axis=1)
    x[lay.z:lay.r_plus] = np.linalg.norm(tails, axis=1) if lay.m else []
    return x


@dataclass
class FeasibilityReport:
    feasible: bool
    max_violation: float
    objective: float
    worst: str | None = None  # description of the most violated constraint


def verify_feasible(problem: ConicProblem, point, tol: float = 1e-9) -> FeasibilityReport:
    x = np.asarray(point, dtype=float).reshape(-1)
    if x.size != problem.num_vars:
        raise DimensionError(f"point has {x.size} entries, problem has {problem.num_vars} variables")
    worst, where = 0.0, None

    def note(v, label):
        nonlocal worst, where
        if v > worst:
            worst, where = v, label

    bound_gap = problem.lower - x
    if bound_gap.size:
        j = int(np.argmax(bound_gap))
        note(float(bound_gap[j]), f"bound {problem.var_names[j]} >= 0")
    if problem.rows:
        lhs = problem.row_matrix() @ x
        rhs = np.array([r.rhs for r in problem.rows])
        senses = np.array([r.sense for r in problem.rows])
        viol = np.where(senses == "LE", lhs - rhs, np.where(senses == "GE", rhs - lhs, np.abs(lhs - rhs)))
        j = int(np.argmax(viol))
        note(float(viol[j]), f"row {j}")
    for l, cone in enumerate(problem.cones):
        idx = np.asarray(cone)
        note(float(np.linalg.norm(x[idx[1:]]) - x[idx[0]]), f"cone {l}")
    return FeasibilityReport(worst <= tol, worst, float(problem.objective @ x), where if worst > tol else None)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps(problem: ConicProblem) -> str:
    lines = [MAGIC, f"DIMS {problem.num_vars} {problem.num_rows} {len(problem.cones)}"]
    for j, name in enumerate(problem.var_names):
        lines.append(f"VAR {j} {name} {'FREE' if problem.lower[j] == -math.inf else 'NONNEG'}")
    for j in np.flatnonzero(problem.objective):
        lines.append(f"OBJ {j} {_fmt(problem.objective[j])}")
    for r in problem.rows:
        terms = " ".join(f"{i}:{_fmt(v)}" for i, v in zip(r.indices, r.values))
        lines.append(f"ROW {r.sense} {_fmt(r.rhs)} {r.indices.size} {terms}".rstrip())
    for cone in problem.cones:
        lines.append(f"CONE {len(cone)} " + " ".join(str(i) for i in cone))
    lines.append("END")
    return "\n".join(lines) + "\n"


def export(problem: ConicProblem, path) -> None:
    Path(path).write_text(dumps(problem))


def loads(text: str) -> ConicProblem:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ParseError(1, f"expected header {MAGIC!r}")

    def ints(tokens, lineno):
        try:
            return [int(t) for t in tokens]
        except ValueError:
            raise ParseError(lineno, f"expected integers, got {' '.join(tokens)!r}") from None

    def num(tok, lineno):
        try:
            return float(tok)
        except ValueError:
            raise ParseError(lineno, f"bad number {tok!r}") from None

    if len(lines) < 2 or not lines[1].startswith("DIMS "):
        raise ParseError(2, "expected DIMS record")
    dims = lines[1].split()[1:]
    if len(dims) != 3:
        raise ParseError(2, "DIMS needs three integers")
    nv, nr, nc = ints(dims, 2)
    names, lower = [None] * nv, np.zeros(nv)
    c = np.zeros(nv)
    rows, cones = [], []
    ended = False
    for lineno, line in enumerate(lines[2:], start=3):
        if ended:
            if line.strip():
                raise ParseError(lineno, "content after END")
            continue
        tok = line.split()
        if not tok:
            raise ParseError(lineno, "blank line")
        kind = tok[0]
        if kind == "VAR":
            if len(tok) != 4 or tok[3] not in ("FREE", "NONNEG"):
                raise ParseError(lineno, "VAR needs index, name and FREE|NONNEG")
            (j,) = ints(tok[1:2], lineno)
            if not 0 <= j < nv or names[j] is not None:
                raise ParseError(lineno, f"variable index {j} out of range or repeated")
            names[j] = tok[2]
            lower[j] = -math.inf if tok[3] == "FREE" else 0.0
        elif kind == "OBJ":
            if len(tok) != 3:
                raise ParseError(lineno, "OBJ needs index and coefficient")
            (j,) = ints(tok[1:2], lineno)
            if not 0 <= j < nv:
                raise ParseError(lineno, f"variable index {j} out of range")
            c[j] = num(tok[2], lineno)
        elif kind == "ROW":
            if len(tok) < 4 or tok[1] not in SENSES:
                raise ParseError(lineno, "ROW needs sense, rhs and a term count")
            rhs = num(tok[2], lineno)
            (cnt,) = ints(tok[3:4], lineno)
            terms = tok[4:]
            if len(terms) != cnt:
                raise ParseError(lineno, f"ROW declares {cnt} terms but has {len(terms)}")
            idx, val = [], []
            for t in terms:
                a, sep, b = t.partition(":")
                if not sep:
                    raise ParseError(lineno, f"bad term {t!r}")
                idx.extend(ints([a], lineno))
                val.append(num(b, lineno))
            if idx and (min(idx) < 0 or max(idx) >= nv):
                raise ParseError(lineno, "row references an invalid variable")
            rows.append(LinearRow(np.array(idx, dtype=np.int64), np.array(val), tok[1], rhs))
        elif kind == "CONE":
            nums = ints(tok[1:], lineno)
            if not nums or nums[0] != len(nums) - 1:
                raise ParseError(lineno, "CONE size does not match its index list")
            cones.append(tuple(nums[1:]))
        elif kind == "END":
            ended = True
        else:
            raise ParseError(lineno, f"unknown record {kind!r}")
    if not ended:
        raise ParseError(len(lines), "missing END record")
    if any(nm is None for nm in names):
        raise ParseError(len(lines), "some variables were never declared")
    if len(rows) != nr or len(cones) != nc:
        raise ParseError(len(lines), "row or cone count disagrees with DIMS")
    try:
        return ConicProblem(nv, c, tuple(rows), tuple(cones), lower, tuple(names))
    except ValueError as exc:
        raise ParseError(len(lines), str(exc)) from None


def import_problem(path) -> ConicProblem:
    return loads(Path(path).read_text())
