"""Branch-and-bound over binary variables on top of :func:`solve_lp`.

Nodes are explored depth-first along the rounding direction of the branching
variable; the sibling goes to a best-bound queue that is popped whenever a
dive ends. Node order depends only on the data, so results are reproducible.
"""
from __future__ import annotations

import heapq
import itertools
import math
import time

import numpy as np

from .model import (FEAS_TOL, GAP_TOL, INFEASIBLE, NODE_LIMIT, OPTIMAL, UNBOUNDED, LinearProgram,
                    SolveResult)
from .simplex import _solve

INT_TOL = 1e-6


def _relgap(incumbent: float, bound: float) -> float:
    if not math.isfinite(incumbent):
        return math.inf
    return max(0.0, incumbent - bound) / max(1.0, abs(incumbent))


def _round_heuristic(lp: LinearProgram, cmin: np.ndarray, x: np.ndarray, binaries: np.ndarray,
                     lb: np.ndarray, ub: np.ndarray):
    """Round fractional binaries one at a time while keeping each touched row satisfied."""
    x = x.copy()
    ax = lp.A @ x
    tol = FEAS_TOL
    for j in binaries:
        v = x[j]
        if abs(v - round(v)) <= INT_TOL:
            x[j] = round(v)
            continue
        col = lp.A[:, j]
        rows = np.flatnonzero(col)
        placed = False
        for target in ((0.0, 1.0) if v < 0.5 else (1.0, 0.0)):
            if target < lb[j] or target > ub[j]:
                continue
            trial = ax[rows] + col[rows] * (target - v)
            ok = True
            for i, val in zip(rows, trial):
                r = lp.rel[i]
                bi = lp.b[i]
                t = tol * (1.0 + abs(bi))
                if (r == "<=" and val > bi + t) or (r == ">=" and val < bi - t) or (r == "=" and abs(val - bi) > t):
                    ok = False
                    break
            if ok:
                ax[rows] = trial
                x[j] = target
                placed = True
                break
        if not placed:
            return None
    if lp.max_violation(x) > 10 * tol:
        return None
    return x, float(cmin @ x)


def solve_milp(lp: LinearProgram, gap_tol: float = GAP_TOL, node_limit: int = 200_000,
               time_limit: float | None = None) -> SolveResult:
    """Solve an LP with binary variables to a proven relative gap.

    ``nodes`` in the result counts child nodes created by branching (zero when
    the root relaxation is already integral). On ``node-limit`` the incumbent
    and the remaining gap are returned.
    """
    lp.validate()
    if not lp.integers:
        raise ValueError("solve_milp needs at least one binary variable; use solve_lp")
    sign = 1.0 if lp.sense == "min" else -1.0
    cmin = sign * lp.c
    binaries = np.array(sorted(lp.integers), dtype=int)
    relax = lp.relaxation()
    t0 = time.monotonic()

    incumbent = math.inf
    best_x = None
    created = 0
    lp_iters = 0
    counter = itertools.count()
    heap: list = []

    def node_lp(lb, ub):
        nonlocal lp_iters
        res = _solve(relax.with_bounds(lb, ub), False, None, FEAS_TOL)
        lp_iters += res.iterations
        return res

    root = node_lp(lp.lb.copy(), lp.ub.copy())
    if root.status == UNBOUNDED:
        return SolveResult(UNBOUNDED, iterations=lp_iters, message="LP relaxation unbounded")
    if root.status != OPTIMAL:
        return SolveResult(INFEASIBLE if root.status == INFEASIBLE else root.status,
                           iterations=lp_iters, message="root relaxation: " + root.status)

    # (bound, seq, lb, ub, result)
    work = [(sign * root.objective, next(counter), lp.lb.copy(), lp.ub.copy(), root)]
    stopped = False
    while work or heap:
        if work:
            bound, _, lb, ub, res = work.pop()
        else:
            bound, _, lb, ub = heapq.heappop(heap)
            if bound >= incumbent - gap_tol * max(1.0, abs(incumbent)):
                continue
            res = node_lp(lb, ub)
            if res.status != OPTIMAL:
                continue
            bound = sign * res.objective
        if bound >= incumbent - gap_tol * max(1.0, abs(incumbent)):
            continue
        x = res.x
        frac = np.abs(x[binaries] - np.round(x[binaries]))
        if frac.max(initial=0.0) <= INT_TOL:
            xi = x.copy()
            xi[binaries] = np.round(xi[binaries])
            incumbent, best_x = bound, xi
            continue
        heur = _round_heuristic(lp, cmin, x, binaries, lb, ub)
        if heur is not None and heur[1] < incumbent - 1e-12:
            best_x, incumbent = heur
        if created >= node_limit or (time_limit is not None and time.monotonic() - t0 > time_limit):
            stopped = True
            heapq.heappush(heap, (bound, next(counter), lb, ub))
            break
        # most fractional, ties to the lowest index
        k = int(binaries[np.argmax(frac - 1e-12 * np.arange(frac.size))])
        first = 1.0 if x[k] >= 0.5 else 0.0
        children = []
        for val in (first, 1.0 - first):
            clb, cub = lb.copy(), ub.copy()
            clb[k] = cub[k] = val
            children.append((clb, cub))
        created += 2
        # sibling waits in the heap with the parent bound; dive into the preferred child
        heapq.heappush(heap, (bound, next(counter), children[1][0], children[1][1]))
        cres = node_lp(*children[0])
        if cres.status == OPTIMAL:
            work.append((sign * cres.objective, next(counter), children[0][0], children[0][1], cres))

    open_bounds = [h[0] for h in heap]
    best_bound = min(open_bounds + [incumbent]) if stopped else incumbent
    if best_x is None:
        if stopped:
            return SolveResult(NODE_LIMIT, iterations=lp_iters, nodes=created,
                               best_bound=sign * best_bound, message="no incumbent found")
        return SolveResult(INFEASIBLE, iterations=lp_iters, nodes=created)
    gap = _relgap(incumbent, best_bound)
    status = OPTIMAL if (not stopped or gap <= gap_tol) else NODE_LIMIT
    ax = lp.A @ best_x
    binding = [i for i in range(lp.n_cons) if abs(ax[i] - lp.b[i]) <= FEAS_TOL * (1.0 + abs(lp.b[i]))]
    return SolveResult(status, x=best_x, objective=float(lp.c @ best_x), binding=binding,
                       iterations=lp_iters, best_bound=sign * best_bound, gap=gap, nodes=created)
