"""Dense two-phase primal simplex.

Pricing starts with Dantzig's rule and switches permanently to Bland's rule
once a run of degenerate pivots is seen, so every solve terminates and the
pivot path depends only on the input. With ``lexicographic=True`` an optimum
with a non-unique optimal face is refined to the lexicographically smallest
vertex in the original variable order.
"""
from __future__ import annotations

import math

import numpy as np

from .model import (FEAS_TOL, INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, LinearProgram,
                    SolveResult)

PIV_TOL = 1e-9
OPT_TOL = 1e-9
DEGENERATE_STREAK = 10


class _Tableau:
    def __init__(self, M: np.ndarray, rhs: np.ndarray, basis: np.ndarray):
        self.T = np.hstack([M, rhs[:, None]])
        self.basis = basis
        self.bland = False
        self.streak = 0
        self.iterations = 0

    @property
    def rhs(self):
        return self.T[:, -1]

    def reduced(self, cost: np.ndarray) -> np.ndarray:
        return cost - cost[self.basis] @ self.T[:, :-1]

    def pivot(self, r: int, j: int, rows: list[np.ndarray]):
        T = self.T
        pr = T[r] / T[r, j]
        T[r] = pr
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, pr)
        T[:, j] = 0.0
        T[r, j] = 1.0
        for d in rows:
            d -= d[j] * pr[:-1]
            d[j] = 0.0
        self.basis[r] = j
        self.iterations += 1

    def run(self, d: np.ndarray, allowed: np.ndarray, max_iter: int, extra=()) -> str:
        """Primal simplex on reduced-cost row ``d`` (updated in place)."""
        rows = [d, *extra]
        while True:
            cand = np.flatnonzero(allowed & (d < -OPT_TOL))
            if cand.size == 0:
                return OPTIMAL
            if self.iterations >= max_iter:
                return ITERATION_LIMIT
            j = cand[0] if self.bland else cand[np.argmin(d[cand])]
            col = self.T[:, j]
            pos = np.flatnonzero(col > PIV_TOL)
            if pos.size == 0:
                return UNBOUNDED
            ratios = self.rhs[pos] / col[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12 * (1.0 + abs(best))]
            if self.bland or ties.size == 1:
                r = ties[np.argmin(self.basis[ties])]
            else:
                r = ties[np.argmax(col[ties])]
            if best <= 1e-12:
                self.streak += 1
                if self.streak >= DEGENERATE_STREAK:
                    self.bland = True
            else:
                self.streak = 0
            self.pivot(r, j, rows)


def solve_lp(lp: LinearProgram, *, lexicographic: bool = True, max_iter: int | None = None,
             feas_tol: float = FEAS_TOL) -> SolveResult:
    """Solve a continuous LP. Status codes are returned, never raised."""
    lp.validate()
    if lp.integers:
        raise ValueError("solve_lp does not handle integrality restrictions; use solve_milp")
    return _solve(lp, lexicographic, max_iter, feas_tol)


def _solve(lp: LinearProgram, lexicographic: bool, max_iter: int | None,
           feas_tol: float) -> SolveResult:
    n, m = lp.n_vars, lp.n_cons
    sign = 1.0 if lp.sense == "min" else -1.0
    cmin = sign * lp.c

    # column map x = Tmap @ x' + off with x' >= 0
    off = np.zeros(n)
    col_var: list[int] = []
    col_coef: list[float] = []
    ub_rows: list[tuple[int, float]] = []
    for j in range(n):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo > hi + feas_tol:
            return SolveResult(INFEASIBLE, message=f"empty bounds on variable {j}")
        if math.isfinite(lo) and math.isfinite(hi) and hi - lo <= 0.0:
            off[j] = lo
        elif math.isfinite(lo):
            off[j] = lo
            col_var.append(j)
            col_coef.append(1.0)
            if math.isfinite(hi):
                ub_rows.append((len(col_var) - 1, hi - lo))
        elif math.isfinite(hi):
            off[j] = hi
            col_var.append(j)
            col_coef.append(-1.0)
        else:
            col_var += [j, j]
            col_coef += [1.0, -1.0]
    p = len(col_var)
    Tmap = np.zeros((n, p))
    Tmap[col_var, np.arange(p)] = col_coef

    A1 = lp.A @ Tmap
    b1 = lp.b - lp.A @ off
    c1 = cmin @ Tmap

    rows_A = [A1[i] for i in range(m)]
    rows_rel = list(lp.rel)
    rows_b = list(b1)
    origin = list(range(m))          # original constraint index, -1 for bound rows
    for col, width in ub_rows:
        e = np.zeros(p)
        e[col] = 1.0
        rows_A.append(e)
        rows_rel.append("<=")
        rows_b.append(width)
        origin.append(-1)

    keep = []
    scale = 1.0 + max((abs(v) for v in rows_b), default=0.0)
    for i, row in enumerate(rows_A):
        if np.any(row != 0.0):
            keep.append(i)
            continue
        r, v = rows_rel[i], rows_b[i]
        bad = (r == "<=" and v < -feas_tol) or (r == ">=" and v > feas_tol) or (r == "=" and abs(v) > feas_tol)
        if bad:
            return SolveResult(INFEASIBLE, message=f"empty row {origin[i]} cannot be satisfied")

    mk = len(keep)
    flip = np.ones(mk)
    rel = []
    Ms = np.zeros((mk, p))
    bs = np.zeros(mk)
    for k, i in enumerate(keep):
        a, r, v = rows_A[i], rows_rel[i], rows_b[i]
        if v < 0:
            a, v, flip[k] = -a, -v, -1.0
            r = {"<=": ">=", ">=": "<=", "=": "="}[r]
        Ms[k] = a
        bs[k] = v
        rel.append(r)

    n_slack = sum(r != "=" for r in rel)
    n_art = sum(r != "<=" for r in rel)
    ncols = p + n_slack + n_art
    M0 = np.zeros((mk, ncols))
    M0[:, :p] = Ms
    basis = np.zeros(mk, dtype=int)
    is_art = np.zeros(ncols, dtype=bool)
    s_col = p
    a_col = p + n_slack
    for k, r in enumerate(rel):
        if r == "<=":
            M0[k, s_col] = 1.0
            basis[k] = s_col
            s_col += 1
        else:
            if r == ">=":
                M0[k, s_col] = -1.0
                s_col += 1
            M0[k, a_col] = 1.0
            is_art[a_col] = True
            basis[k] = a_col
            a_col += 1

    if max_iter is None:
        max_iter = 50 * (mk + ncols) + 1000
    tab = _Tableau(M0.copy(), bs.copy(), basis)

    if n_art:
        cost1 = is_art.astype(float)
        d1 = tab.reduced(cost1)
        status = tab.run(d1, np.ones(ncols, dtype=bool), max_iter)
        if status == ITERATION_LIMIT:
            return SolveResult(ITERATION_LIMIT, iterations=tab.iterations,
                               message="iteration limit in phase I")
        infeas = float(tab.rhs[is_art[tab.basis]].sum())
        if infeas > feas_tol * scale:
            return SolveResult(INFEASIBLE, iterations=tab.iterations,
                               message=f"phase I residual {infeas:.3g}")
        # drive zero-level artificials out of the basis; drop redundant rows
        drop = []
        for r in range(mk):
            if not is_art[tab.basis[r]]:
                continue
            row = np.abs(tab.T[r, :-1])
            row[is_art] = 0.0
            j = int(np.argmax(row))
            if row[j] > PIV_TOL:
                tab.pivot(r, j, [])
            else:
                drop.append(r)
        if drop:
            live = np.setdiff1d(np.arange(mk), drop)
            tab.T = tab.T[live]
            tab.basis = tab.basis[live]
            M0 = M0[live]
            bs = bs[live]
            flip = flip[live]
            keep = [keep[i] for i in live]

    cost2 = np.zeros(ncols)
    cost2[:p] = c1
    allowed = ~is_art
    d2 = tab.reduced(cost2)
    status = tab.run(d2, allowed, max_iter)
    if status == UNBOUNDED:
        return SolveResult(UNBOUNDED, iterations=tab.iterations)
    if status == ITERATION_LIMIT:
        return SolveResult(ITERATION_LIMIT, iterations=tab.iterations,
                           message="iteration limit in phase II")

    if lexicographic:
        _lex_refine(tab, d2, allowed, Tmap, p, ncols, max_iter)

    # recompute basic values and duals from the original columns
    B = M0[:, tab.basis]
    xs = np.zeros(ncols)
    try:
        xs[tab.basis] = np.linalg.solve(B, bs)
        y_std = np.linalg.solve(B.T, cost2[tab.basis])
    except np.linalg.LinAlgError:
        xs[tab.basis] = tab.rhs
        y_std = np.linalg.lstsq(B.T, cost2[tab.basis], rcond=None)[0]
    xs[:p] = np.maximum(xs[:p], 0.0)
    x = Tmap @ xs[:p] + off

    y = np.zeros(m)
    for k, i in enumerate(keep):
        if origin[i] >= 0:
            y[origin[i]] = flip[k] * y_std[k]
    duals = sign * y
    reduced = lp.c - lp.A.T @ duals
    obj = float(lp.c @ x)
    ax = lp.A @ x
    binding = [i for i in range(m) if abs(ax[i] - lp.b[i]) <= feas_tol * (1.0 + abs(lp.b[i]))]
    return SolveResult(OPTIMAL, x=x, objective=obj, duals=duals, binding=binding,
                       iterations=tab.iterations, reduced_costs=reduced)


def _lex_refine(tab: _Tableau, d2, allowed, Tmap, p, ncols, max_iter):
    nonbasic = np.ones(ncols, dtype=bool)
    nonbasic[tab.basis] = False
    frozen = ~allowed | (nonbasic & (d2 > OPT_TOL))
    levels = [d2]
    for j in range(Tmap.shape[0]):
        nonbasic = np.ones(ncols, dtype=bool)
        nonbasic[tab.basis] = False
        if not np.any(nonbasic & ~frozen):
            return
        cost = np.zeros(ncols)
        cost[:p] = Tmap[j]
        d = tab.reduced(cost)
        saved = tab.bland
        tab.bland = True
        status = tab.run(d, ~frozen, max_iter, extra=levels)
        tab.bland = saved
        if status != OPTIMAL:
            return
        nonbasic = np.ones(ncols, dtype=bool)
        nonbasic[tab.basis] = False
        frozen |= nonbasic & (d > OPT_TOL)
        levels.append(d)
