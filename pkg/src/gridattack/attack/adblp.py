"""Attacker-defender bi-level programs as single-level MILPs.

The operator's response (DCOPF or SCED) is an :class:`~gridattack.ems.InnerLP`
whose right-hand side moves with the injection shift ``s = B c``. It is
replaced by its KKT system; complementary slackness uses one binary per inner
inequality with a big-M bound on both the multiplier and the slack.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..ems import (DispatchSolution, EmsParams, InnerLP, SecurityConstraintSet, build_dcopf_inner,
                   build_sced_inner, solve_inner)
from ..estimation import C_ZERO_TOL, AttackVector, injection_shift
from ..grid import GridCase
from ..lp import INFEASIBLE, NODE_LIMIT, OPTIMAL, LinearProgram, LPBuilder, solve_milp
from ..sensitivity import SensitivitySet, active_limits, build_bus_susceptance

RESPONSE_MODELS = ("dcopf", "sced")
DEFAULT_SIGMA = 1e-3
DEFAULT_BIG_M = 1e4
MAX_BIG_M = 1e7
AMBIGUOUS_RATIO = 0.05


class AttackSpecError(ValueError):
    pass


class BigMError(RuntimeError):
    def __init__(self, big_m: float, worst: float, where: str):
        detail = f"reaches {worst:.6g} (>= 99% of M)" if math.isfinite(worst) else "has no solution"
        super().__init__(f"big-M {big_m:g} too small: {where} {detail}")
        self.big_m, self.worst, self.where = big_m, worst, where


@dataclass(frozen=True)
class AttackSpec:
    """What the attacker wants: the target flow, budget and stealth limits.

    ``N1`` is in radians. ``N1 = 0`` is accepted and forces ``c = 0``.
    """
    target_branch: str
    target_contingency: str | None = None
    N1: float = 1.0
    L_S: float = 0.1
    sigma: float = DEFAULT_SIGMA
    response_model: str = "sced"
    big_m: float = DEFAULT_BIG_M
    direction: int | None = None

    def __post_init__(self):
        if not (self.N1 >= 0 and math.isfinite(self.N1)):
            raise AttackSpecError(f"N1 must be a finite non-negative budget, got {self.N1}")
        if not 0.0 <= self.L_S <= 1.0:
            raise AttackSpecError(f"L_S must lie in [0, 1], got {self.L_S}")
        if self.sigma < 0:
            raise AttackSpecError("sigma must be non-negative")
        if self.response_model not in RESPONSE_MODELS:
            raise AttackSpecError(f"response_model must be one of {RESPONSE_MODELS}")
        if self.response_model == "dcopf" and self.target_contingency is not None:
            raise AttackSpecError("a DCOPF response has no contingency flows to target")
        if self.direction not in (None, 1, -1):
            raise AttackSpecError("direction must be +1, -1 or omitted")
        if self.big_m <= 0:
            raise AttackSpecError("big_m must be positive")

    def check(self, case: GridCase, scs: SecurityConstraintSet | None = None) -> list[str]:
        """Raise on unknown branches; return warnings about weak targets."""
        if self.target_branch not in case.branch_index:
            raise AttackSpecError(f"unknown target branch {self.target_branch!r}")
        warn = []
        if self.target_contingency is not None:
            if self.target_contingency not in case.branch_index:
                raise AttackSpecError(f"unknown target contingency {self.target_contingency!r}")
            if self.target_contingency == self.target_branch:
                raise AttackSpecError("target branch cannot be its own contingency")
            if (self.response_model == "sced" and scs is not None
                    and (self.target_contingency, self.target_branch) not in scs.pairs()):
                warn.append(f"({self.target_contingency}, {self.target_branch}) is not a critical pair "
                            "before the attack; the SCED has no constraint on it to exploit")
        return warn

    def with_(self, **kw) -> "AttackSpec":
        return AttackSpec(**{**asdict(self), **kw})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AttackSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise AttackSpecError(f"unknown attack spec keys: {sorted(extra)}")
        if "target_branch" not in data:
            raise AttackSpecError("attack spec needs a target_branch")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "AttackSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_toml(cls, text: str) -> "AttackSpec":
        from .._toml import loads

        data = loads(text)
        return cls.from_dict(data.get("attack", data))


@dataclass
class Target:
    weights: np.ndarray      # flow = weights @ (G_B P_G - P_D)
    limit: float
    label: str


def target_row(case: GridCase, sens: SensitivitySet, spec: AttackSpec,
               params: EmsParams = EmsParams()) -> Target:
    m = case.branch_index[spec.target_branch]
    pmax, pkmax = active_limits(case, params.shortterm_factor)
    if spec.target_contingency is None:
        return Target(sens.ptdf[m].copy(), float(pmax[m]), spec.target_branch)
    k = case.branch_index[spec.target_contingency]
    return Target(sens.otdf(k)[m].copy(), float(pkmax[m]),
                  f"{spec.target_branch}|{spec.target_contingency}")


def response_inner(case: GridCase, sens: SensitivitySet, scs: SecurityConstraintSet | None, prior,
                   loads, spec: AttackSpec, params: EmsParams = EmsParams()) -> InnerLP:
    if spec.response_model == "dcopf":
        return build_dcopf_inner(case, loads, sens, params)
    if scs is None:
        raise ValueError("a SCED response needs the attacker's security-constraint set")
    return build_sced_inner(case, loads, sens, scs, prior, params)


@dataclass
class Adblp:
    lp: LinearProgram
    inner: InnerLP
    target: Target
    direction: int
    loads: np.ndarray
    big_m: float
    cols: dict[str, slice]
    free_buses: np.ndarray   # bus indices carrying an attack component
    n_binaries: int


def build_adblp(case: GridCase, sens: SensitivitySet, scs: SecurityConstraintSet | None, prior,
                spec: AttackSpec, loads=None, direction: int = 1,
                params: EmsParams = EmsParams(), big_m: float | None = None) -> Adblp:
    """Single-level MILP of the attacker's problem for one flow orientation."""
    loads = case.loads() if loads is None else np.asarray(loads, dtype=float)
    prior = np.asarray(prior if not isinstance(prior, DispatchSolution) else prior.p_g, dtype=float)
    M = float(spec.big_m if big_m is None else big_m)
    inner = response_inner(case, sens, scs, prior, loads, spec, params)
    tgt = target_row(case, sens, spec, params)
    B, _, _ = build_bus_susceptance(case)
    free = np.array([i for i in range(case.n_bus) if i != case.slack_index], dtype=int)
    Bc = B[:, free]                 # s = Bc @ (c+ - c-)
    FB = inner.F @ Bc
    ny, nc, ni, ne = len(inner.var_names), free.size, inner.n_ineq, inner.e0.size
    gb = case.gen_incidence()
    flow_gen = tgt.weights @ gb

    lb = LPBuilder("max")
    y = [lb.var(n, -math.inf, math.inf) for n in inner.var_names]
    budget_ub = spec.N1 if spec.N1 > 0 else 0.0
    cp = [lb.var(f"c+:{case.buses[i].id}", 0.0, budget_ub, -spec.sigma) for i in free]
    cm = [lb.var(f"c-:{case.buses[i].id}", 0.0, budget_ub, -spec.sigma) for i in free]
    mu = [lb.var(f"mu:{n}", 0.0, M) for n in inner.ineq_names]
    nu = [lb.var(f"nu:{n}", -math.inf, math.inf) for n in inner.eq_names]
    z = [lb.var(f"z:{n}", binary=True) for n in inner.ineq_names]
    for g in range(case.n_gen):
        lb.set_cost(y[g], direction * flow_gen[g])

    def row(coefs):
        return {j: v for j, v in coefs if v != 0.0}

    for i in range(ni):
        # primal feasibility: G y - F B c <= h0
        terms = [(y[j], inner.G[i, j]) for j in range(ny)]
        terms += [(cp[t], -FB[i, t]) for t in range(nc)] + [(cm[t], FB[i, t]) for t in range(nc)]
        lb.add(row(terms), "<=", inner.h0[i], f"primal:{inner.ineq_names[i]}")
    for i in range(ne):
        lb.add(row((y[j], inner.E[i, j]) for j in range(ny)), "=", inner.e0[i],
               f"primal:{inner.eq_names[i]}")
    for j in range(ny):
        terms = [(mu[i], inner.G[i, j]) for i in range(ni)] + [(nu[i], inner.E[i, j]) for i in range(ne)]
        lb.add(row(terms), "=", -inner.cost[j], f"stationarity:{inner.var_names[j]}")
    for i in range(ni):
        lb.add({mu[i]: 1.0, z[i]: -M}, "<=", 0.0, f"cs_dual:{inner.ineq_names[i]}")
        # slack h0 + F B c - G y <= M (1 - z)
        terms = [(y[j], -inner.G[i, j]) for j in range(ny)]
        terms += [(cp[t], FB[i, t]) for t in range(nc)] + [(cm[t], -FB[i, t]) for t in range(nc)]
        terms.append((z[i], M))
        lb.add(row(terms), "<=", M - inner.h0[i], f"cs_slack:{inner.ineq_names[i]}")
    lb.add({**{j: 1.0 for j in cp}, **{j: 1.0 for j in cm}}, "<=", spec.N1, "budget")
    cap = spec.L_S * np.abs(loads)
    for i in range(case.n_bus):
        terms = row([(cp[t], Bc[i, t]) for t in range(nc)] + [(cm[t], -Bc[i, t]) for t in range(nc)])
        if not terms:
            continue
        bus = case.buses[i].id
        lb.add(terms, "<=", cap[i], f"shift_max:{bus}")
        lb.add({j: -v for j, v in terms.items()}, "<=", cap[i], f"shift_min:{bus}")
    lp = lb.build()
    off = 0
    cols = {}
    for key, n in (("y", ny), ("c+", nc), ("c-", nc), ("mu", ni), ("nu", ne), ("z", ni)):
        cols[key] = slice(off, off + n)
        off += n
    return Adblp(lp, inner, tgt, direction, loads, M, cols, free, ni)


@dataclass
class AttackResult:
    spec: AttackSpec
    status: str
    c: AttackVector
    direction: int
    objective: float
    predicted_flow: float
    limit: float
    pre_attack_flow: float
    inner_dispatch: DispatchSolution
    milp_gap: float
    stats: dict = field(default_factory=dict)

    @property
    def predicted_pct(self) -> float:
        return 100.0 * self.predicted_flow / self.limit

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, NODE_LIMIT)

    def to_dict(self) -> dict:
        case = self.c.case
        return {
            "spec": self.spec.to_dict(),
            "status": self.status,
            "direction": self.direction,
            "objective": self.objective,
            "predicted_flow_pu": self.predicted_flow,
            "predicted_pct": self.predicted_pct,
            "pre_attack_flow_pu": self.pre_attack_flow,
            "limit_pu": self.limit,
            "c": {str(b): float(v) for b, v in zip(case.bus_ids, self.c.c)},
            "l1": self.c.l1,
            "l0": self.c.l0,
            "center_buses": list(self.c.center_buses),
            "subgraph_buses": list(self.c.subgraph_buses),
            "inner_dispatch": self.inner_dispatch.to_dict(case),
            "milp_gap": self.milp_gap,
            # wall-clock time stays out so that reports are reproducible
            "stats": {k: v for k, v in self.stats.items() if k != "seconds"},
        }


def _check_big_m(model: Adblp, x: np.ndarray):
    M = model.big_m
    ni = model.inner.n_ineq
    mu = x[model.cols["mu"]]
    # the first ni rows are the inner inequalities, so b - A x is their slack
    slack = model.lp.b[:ni] - model.lp.A[:ni] @ x
    if mu.max(initial=0.0) >= 0.99 * M:
        raise BigMError(M, float(mu.max()), model.inner.ineq_names[int(np.argmax(mu))] + " multiplier")
    if slack.max(initial=0.0) >= 0.99 * M:
        raise BigMError(M, float(slack.max()), model.inner.ineq_names[int(np.argmax(slack))] + " slack")


def _solve_oriented(case, sens, scs, prior, spec, loads, direction, params, node_limit):
    M = spec.big_m
    while True:
        model = build_adblp(case, sens, scs, prior, spec, loads, direction, params, M)
        t0 = time.monotonic()
        res = solve_milp(model.lp, node_limit=node_limit)
        elapsed = time.monotonic() - t0
        if res.x is None:
            # c = 0 is feasible whenever the operator's LP is, so an infeasible
            # MILP with a feasible inner problem means M cuts off the multipliers
            if res.status == INFEASIBLE and solve_inner(model.inner).ok:
                if M * 10 > MAX_BIG_M:
                    raise BigMError(M, math.inf, "the KKT system")
                M *= 10
                continue
            return model, res, elapsed
        try:
            _check_big_m(model, res.x)
        except BigMError:
            if M * 10 > MAX_BIG_M:
                raise
            M *= 10
            continue
        return model, res, elapsed


def solve_attack(case: GridCase, sens: SensitivitySet, scs: SecurityConstraintSet | None, prior,
                 spec: AttackSpec, loads=None, params: EmsParams = EmsParams(),
                 node_limit: int = 200_000, c_zero_tol: float = C_ZERO_TOL) -> AttackResult:
    """Design the attack that maximizes the physical target flow."""
    spec.check(case, scs)
    loads = case.loads() if loads is None else np.asarray(loads, dtype=float)
    prior = np.asarray(prior if not isinstance(prior, DispatchSolution) else prior.p_g, dtype=float)
    tgt = target_row(case, sens, spec, params)
    gb = case.gen_incidence()
    pre = float(tgt.weights @ (gb @ prior - loads))
    if spec.direction is not None:
        dirs = [spec.direction]
    elif abs(pre / tgt.limit) < AMBIGUOUS_RATIO:
        dirs = [1, -1]
    else:
        dirs = [1 if pre > 0 else -1]

    best = None
    for d in dirs:
        model, res, elapsed = _solve_oriented(case, sens, scs, prior, spec, loads, d, params, node_limit)
        if res.x is None:
            cand = (res, model, elapsed, None)
        else:
            flow = float(tgt.weights @ (gb @ res.x[model.cols["y"]][: case.n_gen] - loads))
            cand = (res, model, elapsed, flow)
        if best is None or (cand[3] is not None and (best[3] is None or abs(cand[3]) > abs(best[3]))):
            best = cand
    res, model, elapsed, flow = best
    ng = case.n_gen
    stats = {"nodes": res.nodes, "lp_iterations": res.iterations, "big_m": model.big_m,
             "binaries": model.n_binaries, "seconds": round(elapsed, 6), "orientations": len(dirs)}
    if res.x is None:
        none = AttackVector.from_array(case, np.zeros(case.n_bus))
        nan = DispatchSolution(res.status, np.full(ng, np.nan), np.full(ng, np.nan), math.nan)
        return AttackResult(spec, res.status, none, model.direction, math.nan, math.nan, tgt.limit, pre,
                            nan, math.inf, stats)

    x = res.x
    c = np.zeros(case.n_bus)
    c[model.free_buses] = x[model.cols["c+"]] - x[model.cols["c-"]]
    av = AttackVector.from_array(case, c, c_zero_tol)
    yv = x[model.cols["y"]]
    pg = yv[:ng].copy()
    rg = yv[ng:2 * ng].copy() if model.inner.has_reserves else np.zeros(ng)
    inner_obj = float(model.inner.cost @ yv)
    binding = [model.inner.ineq_names[i] for i in range(model.inner.n_ineq) if x[model.cols["z"]][i] > 0.5]
    disp = DispatchSolution(OPTIMAL, pg, rg, inner_obj, binding)

    # the inner response at this c must be an inner optimum
    check = solve_inner(model.inner, injection_shift(case, c))
    stats["inner_objective_gap"] = abs(check.objective - inner_obj) if check.ok else math.inf
    stats["budget_binding"] = bool(av.l1 >= spec.N1 - 1e-7)
    l1_raw = float(np.sum(x[model.cols["c+"]] + x[model.cols["c-"]]))
    objective = model.direction * flow - spec.sigma * l1_raw
    return AttackResult(spec, res.status, av, model.direction, objective, flow, tgt.limit, pre, disp,
                        res.gap, stats)
