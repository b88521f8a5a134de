from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-7
CS_TOL = 1e-6
GAP_TOL = 1e-6

RELATIONS = ("<=", "=", ">=")

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"
NODE_LIMIT = "node-limit"


@dataclass
class LinearProgram:
    """``min|max c^T x`` subject to ``A x (rel) b`` and ``lb <= x <= ub``.

    Indices in ``integers`` are binary variables.
    """

    c: np.ndarray
    A: np.ndarray
    rel: list[str]
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    sense: str = "min"
    integers: frozenset[int] = frozenset()
    var_names: list[str] | None = None
    con_names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        self.rel = list(self.rel)
        self.integers = frozenset(int(i) for i in self.integers)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_cons(self) -> int:
        return self.b.size

    def validate(self) -> "LinearProgram":
        m, n = self.A.shape
        if self.b.size != m or len(self.rel) != m:
            raise ValueError("constraint dimensions are inconsistent")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound dimensions are inconsistent")
        if self.sense not in ("min", "max"):
            raise ValueError(f"unknown objective sense {self.sense!r}")
        bad = [r for r in self.rel if r not in RELATIONS]
        if bad:
            raise ValueError(f"unknown relation {bad[0]!r}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("objective and constraint coefficients must be finite")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)) or np.any(self.lb == np.inf) \
                or np.any(self.ub == -np.inf):
            raise ValueError("invalid variable bounds")
        for j in self.integers:
            if not 0 <= j < n:
                raise ValueError(f"integer index {j} out of range")
            if self.lb[j] < 0 or self.ub[j] > 1:
                raise ValueError(f"binary variable {j} has bounds outside [0, 1]")
        if self.var_names is not None and len(self.var_names) != n:
            raise ValueError("var_names length mismatch")
        if self.con_names is not None and len(self.con_names) != m:
            raise ValueError("con_names length mismatch")
        return self

    def relaxation(self) -> "LinearProgram":
        return LinearProgram(self.c, self.A, self.rel, self.b, self.lb, self.ub, self.sense,
                             frozenset(), self.var_names, self.con_names)

    def with_bounds(self, lb, ub) -> "LinearProgram":
        return LinearProgram(self.c, self.A, self.rel, self.b, lb, ub, self.sense,
                             self.integers, self.var_names, self.con_names)

    def with_objective(self, c, sense=None) -> "LinearProgram":
        return LinearProgram(c, self.A, self.rel, self.b, self.lb, self.ub, sense or self.sense,
                             self.integers, self.var_names, self.con_names)

    def residuals(self, x) -> np.ndarray:
        """Per-constraint violation (>= 0) of a candidate point."""
        ax = self.A @ x
        out = np.zeros(self.n_cons)
        for i, r in enumerate(self.rel):
            if r == "<=":
                out[i] = max(0.0, ax[i] - self.b[i])
            elif r == ">=":
                out[i] = max(0.0, self.b[i] - ax[i])
            else:
                out[i] = abs(ax[i] - self.b[i])
        return out

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        bound = np.maximum(self.lb - x, 0.0).max(initial=0.0)
        bound = max(bound, np.maximum(x - self.ub, 0.0).max(initial=0.0))
        return max(float(self.residuals(x).max(initial=0.0)), float(bound))

    def to_json(self) -> str:
        def fin(v):
            return [None if not math.isfinite(t) else float(t) for t in v]

        return json.dumps({
            "sense": self.sense, "c": self.c.tolist(), "A": self.A.tolist(), "rel": self.rel,
            "b": self.b.tolist(), "lb": fin(self.lb), "ub": fin(self.ub),
            "integers": sorted(self.integers), "var_names": self.var_names,
            "con_names": self.con_names,
        })


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    duals: np.ndarray | None = None
    binding: list[int] = field(default_factory=list)
    iterations: int = 0
    reduced_costs: np.ndarray | None = None
    best_bound: float = math.nan
    gap: float = math.nan
    nodes: int = 0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class LPBuilder:
    """Incremental construction of a :class:`LinearProgram` by variable name."""

    def __init__(self, sense: str = "min"):
        self.sense = sense
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.cost: list[float] = []
        self.binary: set[int] = set()
        self.rows: list[dict[int, float]] = []
        self.rel: list[str] = []
        self.rhs: list[float] = []
        self.con_names: list[str] = []
        self._index: dict[str, int] = {}

    def var(self, name: str, lb: float = 0.0, ub: float = math.inf, cost: float = 0.0,
            binary: bool = False) -> int:
        if name in self._index:
            raise KeyError(f"duplicate variable {name}")
        j = len(self.names)
        self._index[name] = j
        self.names.append(name)
        self.lb.append(0.0 if binary else lb)
        self.ub.append(1.0 if binary else ub)
        self.cost.append(cost)
        if binary:
            self.binary.add(j)
        return j

    def index(self, name: str) -> int:
        return self._index[name]

    def set_cost(self, j: int, value: float):
        self.cost[j] = value

    def add(self, coefs: dict[int, float], rel: str, rhs: float, name: str = "") -> int:
        if rel not in RELATIONS:
            raise ValueError(rel)
        row = {}
        for j, v in coefs.items():
            v = float(v)
            if v != 0.0:
                row[j] = row.get(j, 0.0) + v
        self.rows.append(row)
        self.rel.append(rel)
        self.rhs.append(float(rhs))
        self.con_names.append(name or f"c{len(self.rows) - 1}")
        return len(self.rows) - 1

    def build(self) -> LinearProgram:
        n = len(self.names)
        A = np.zeros((len(self.rows), n))
        for i, row in enumerate(self.rows):
            for j, v in row.items():
                A[i, j] = v
        return LinearProgram(
            c=np.array(self.cost, dtype=float), A=A, rel=list(self.rel), b=np.array(self.rhs),
            lb=np.array(self.lb), ub=np.array(self.ub), sense=self.sense,
            integers=frozenset(self.binary), var_names=list(self.names),
            con_names=list(self.con_names),
        ).validate()


def dual_objective(lp: LinearProgram, y: np.ndarray) -> float:
    """Lagrangian dual value of ``y`` (reported in the LP's own sense).

    Variable bounds are dualized implicitly through the reduced costs. Returns
    ``+/-inf`` when a reduced cost pushes against an infinite bound beyond ``CS_TOL``.
    """
    sign = 1.0 if lp.sense == "min" else -1.0
    c = sign * lp.c
    ymin = sign * np.asarray(y, dtype=float)
    d = c - lp.A.T @ ymin
    total = float(lp.b @ ymin)
    for j, dj in enumerate(d):
        if dj > CS_TOL:
            if not math.isfinite(lp.lb[j]):
                return -sign * math.inf
            total += dj * lp.lb[j]
        elif dj < -CS_TOL:
            if not math.isfinite(lp.ub[j]):
                return -sign * math.inf
            total += dj * lp.ub[j]
        else:
            # tiny reduced cost; attach it to whichever bound is finite
            bnd = lp.lb[j] if math.isfinite(lp.lb[j]) else lp.ub[j] if math.isfinite(lp.ub[j]) else 0.0
            total += dj * bnd
    return sign * total
