"""The operator side: contingency analysis, DCOPF and security-constrained dispatch.

Dispatch problems are assembled as :class:`InnerLP` objects, linear programs
whose right-hand sides depend affinely on a per-bus injection shift ``s``
(the ``Hc`` term of an attack). The operator solves them at ``s = 0`` with
its estimated loads; the attacker embeds the same rows in its bi-level model.

DC conventions: flows are ``PTDF @ (G_B P_G - P_D)``; the slack bus absorbs
the mismatch, i.e. system losses ``loss_fraction * sum(P_D)`` are withdrawn
at the slack.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import MeasurementSet, StateEstimate, estimate_state
from .grid import GridCase, contingency_set
from .lp import INFEASIBLE, OPTIMAL, LinearProgram, LPBuilder, export_lp, solve_lp
from .sensitivity import SensitivitySet, active_limits, build_bus_susceptance, build_sensitivities

BALANCE_TOL = 1e-7


@dataclass(frozen=True)
class EmsParams:
    tau: float = 0.90
    tau_base: float | None = None
    shortterm_factor: float = 1.15
    look_ahead_min: float = 15.0
    reserve_time_min: float = 10.0
    kv_floor: float = 100.0
    bdd_confidence: float = 0.99
    ctg_false_load_term: bool = True

    @property
    def base_threshold(self) -> float:
        return self.tau if self.tau_base is None else self.tau_base


# ---------------------------------------------------------------------------
# contingency analysis

@dataclass(frozen=True)
class BaseConstraint:
    branch: str
    flow: float
    limit: float

    @property
    def ratio(self) -> float:
        return self.flow / self.limit


@dataclass(frozen=True)
class CtgConstraint:
    contingency: str
    branch: str
    flow: float
    limit: float

    @property
    def ratio(self) -> float:
        return self.flow / self.limit


@dataclass
class SecurityConstraintSet:
    base_critical: list[BaseConstraint]
    ctg_critical: list[CtgConstraint]
    tau: float
    tau_base: float
    contingencies: list[str]
    base_flows: np.ndarray
    ctg_flows: dict[str, np.ndarray]
    pmax: np.ndarray
    pkmax: np.ndarray
    branch_ids: list[str] = field(default_factory=list)

    @property
    def violations(self) -> list:
        return [c for c in [*self.base_critical, *self.ctg_critical] if abs(c.ratio) > 1.0]

    def pairs(self) -> set[tuple[str, str]]:
        return {(c.contingency, c.branch) for c in self.ctg_critical}

    def ctg_flow(self, contingency: str, branch: str) -> float:
        return float(self.ctg_flows[contingency][self.branch_ids.index(branch)])

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "tau_base": self.tau_base,
            "base_critical": [
                {"branch": c.branch, "flow_pu": c.flow, "limit_pu": c.limit, "ratio": c.ratio}
                for c in self.base_critical
            ],
            "ctg_critical": [
                {"contingency": c.contingency, "branch": c.branch, "flow_pu": c.flow,
                 "limit_pu": c.limit, "ratio": c.ratio}
                for c in self.ctg_critical
            ],
            "violations": len(self.violations),
            "contingencies": list(self.contingencies),
        }


def run_rtca(case: GridCase, loads, dispatch, sens: SensitivitySet | None = None,
             tau: float | None = None, params: EmsParams = EmsParams()) -> SecurityConstraintSet:
    """Screen base-case and N-1 branch flows against ``tau`` times the limits."""
    sens = sens or build_sensitivities(case)
    tau = params.tau if tau is None else tau
    tau_base = tau if params.tau_base is None else params.tau_base
    pmax, pkmax = active_limits(case, params.shortterm_factor)
    gb = case.gen_incidence()
    p0 = sens.ptdf @ (gb @ np.asarray(dispatch, dtype=float) - np.asarray(loads, dtype=float))
    live = [m for m, br in enumerate(case.branches) if br.in_service]
    base = [
        BaseConstraint(case.branches[m].id, float(p0[m]), float(pmax[m]))
        for m in live if abs(p0[m]) >= tau_base * pmax[m]
    ]
    ctgs = contingency_set(case, params.kv_floor, sens.radial_map())
    flows: dict[str, np.ndarray] = {}
    ctg = []
    for kid in ctgs:
        k = case.branch_index[kid]
        pk = sens.outage_flows(p0, k)
        assert np.all(np.isfinite(pk)), f"outage of {kid} islands the network"
        flows[kid] = pk
        for m in live:
            if m != k and abs(pk[m]) >= tau * pkmax[m]:
                ctg.append(CtgConstraint(kid, case.branches[m].id, float(pk[m]), float(pkmax[m])))
    return SecurityConstraintSet(base, ctg, tau, tau_base, ctgs, p0, flows, pmax, pkmax,
                                 case.branch_ids)


# ---------------------------------------------------------------------------
# dispatch problems

@dataclass
class InnerLP:
    """``min cost @ y`` s.t. ``G y <= h0 + F s`` and ``E y = e0``; all ``y`` free."""
    var_names: list[str]
    cost: np.ndarray
    G: np.ndarray
    h0: np.ndarray
    F: np.ndarray
    ineq_names: list[str]
    E: np.ndarray
    e0: np.ndarray
    eq_names: list[str]
    n_gen: int
    has_reserves: bool

    @property
    def n_ineq(self) -> int:
        return self.h0.size

    def instantiate(self, shift=None) -> LinearProgram:
        n = len(self.var_names)
        h = self.h0 if shift is None else self.h0 + self.F @ np.asarray(shift, dtype=float)
        A = np.vstack([self.G, self.E])
        rel = ["<="] * self.n_ineq + ["="] * self.e0.size
        return LinearProgram(self.cost, A, rel, np.r_[h, self.e0], np.full(n, -np.inf),
                             np.full(n, np.inf), "min", frozenset(), list(self.var_names),
                             self.ineq_names + self.eq_names)


class _Rows:
    def __init__(self, nvar: int, nbus: int):
        self.nvar, self.nbus = nvar, nbus
        self.G, self.h, self.F, self.names = [], [], [], []

    def add(self, g, h, f, name):
        self.G.append(np.asarray(g, dtype=float))
        self.h.append(float(h))
        self.F.append(np.zeros(self.nbus) if f is None else np.asarray(f, dtype=float))
        self.names.append(name)

    def arrays(self):
        n = len(self.h)
        return (np.array(self.G).reshape(n, self.nvar), np.array(self.h),
                np.array(self.F).reshape(n, self.nbus), self.names)


def _balance(case: GridCase, loads, nvar: int, losses: bool):
    E = np.zeros((1, nvar))
    E[0, :case.n_gen] = 1.0
    scale = 1.0 + case.loss_fraction if losses else 1.0
    return E, np.array([scale * float(np.sum(loads))]), ["balance"]


def _gen_bounds(case: GridCase, lo, hi, rows: _Rows, nvar: int, tag: str):
    for g, gen in enumerate(case.generators):
        e = np.zeros(nvar)
        e[g] = 1.0
        rows.add(-e, -lo[g], None, f"{tag}_min:{gen.id}")
        rows.add(e, hi[g], None, f"{tag}_max:{gen.id}")


def build_dcopf_inner(case: GridCase, loads, sens: SensitivitySet,
                      params: EmsParams = EmsParams()) -> InnerLP:
    """DCOPF with base-case limits on every in-service branch; loads are not loss-scaled."""
    loads = np.asarray(loads, dtype=float)
    ng = case.n_gen
    pmax, _ = active_limits(case, params.shortterm_factor)
    gb = case.gen_incidence()
    rows = _Rows(ng, case.n_bus)
    for m, br in enumerate(case.branches):
        if not br.in_service:
            continue
        a = sens.ptdf[m] @ gb
        base = float(sens.ptdf[m] @ loads)
        rows.add(a, pmax[m] + base, -sens.ptdf[m], f"flow_max:{br.id}")
        rows.add(-a, pmax[m] - base, sens.ptdf[m], f"flow_min:{br.id}")
    lo = np.array([g.p_min for g in case.generators])
    hi = np.array([g.p_max for g in case.generators])
    _gen_bounds(case, lo, hi, rows, ng, "pg")
    G, h, F, names = rows.arrays()
    E, e0, en = _balance(case, loads, ng, losses=False)
    cost = np.array([g.cost for g in case.generators])
    return InnerLP([f"pg:{g.id}" for g in case.generators], cost, G, h, F, names, E, e0, en, ng, False)


def ramp_window(case: GridCase, prior, params: EmsParams = EmsParams()):
    prior = np.asarray(prior, dtype=float)
    ramp = np.array([g.ramp_rate for g in case.generators]) * params.look_ahead_min
    pmin = np.array([g.p_min for g in case.generators])
    pmax = np.array([g.p_max for g in case.generators])
    # upper bound uses min(); the printed max() form would never bind
    return np.maximum(prior - ramp, pmin), np.minimum(prior + ramp, pmax)


def build_sced_inner(case: GridCase, loads, sens: SensitivitySet, scs: SecurityConstraintSet,
                     prior, params: EmsParams = EmsParams()) -> InnerLP:
    """Hot-start SCED over ``[P_G, R_G]`` with screened security constraints."""
    loads = np.asarray(loads, dtype=float)
    prior = np.asarray(prior, dtype=float)
    ng, nb = case.n_gen, case.n_bus
    nvar = 2 * ng
    gb = case.gen_incidence()
    rows = _Rows(nvar, nb)

    def flow_rows(sens_row, s_row, p_start, limit, name):
        a = np.zeros(nvar)
        a[:ng] = sens_row @ gb
        hot = p_start - float(a[:ng] @ prior)
        rows.add(a, limit - hot, -s_row, f"{name}:max")
        rows.add(-a, limit + hot, s_row, f"{name}:min")

    for c in scs.base_critical:
        m = case.branch_index[c.branch]
        flow_rows(sens.ptdf[m], sens.ptdf[m], c.flow, c.limit, f"base:{c.branch}")
    for c in scs.ctg_critical:
        k = case.branch_index[c.contingency]
        m = case.branch_index[c.branch]
        otdf = sens.otdf(k)[m]
        s_row = otdf.copy()
        if params.ctg_false_load_term:
            s_row = s_row + sens.lodf[m, k] * sens.ptdf[k]
        flow_rows(otdf, s_row, c.flow, c.limit, f"ctg:{c.contingency}:{c.branch}")

    lo, hi = ramp_window(case, prior, params)
    _gen_bounds(case, lo, hi, rows, nvar, "ramp")
    rlim = np.array([g.ramp_rate for g in case.generators]) * params.reserve_time_min
    gmax = np.array([g.p_max for g in case.generators])
    for g, gen in enumerate(case.generators):
        e = np.zeros(nvar)
        e[ng + g] = 1.0
        rows.add(-e, 0.0, None, f"res_min:{gen.id}")
        rows.add(e, rlim[g], None, f"res_max:{gen.id}")
    for g, gen in enumerate(case.generators):
        e = np.zeros(nvar)
        e[g] = e[ng + g] = 1.0
        rows.add(e, gmax[g], None, f"cap:{gen.id}")
    for g, gen in enumerate(case.generators):
        # sum of all reserves >= P_g + R_g, as printed
        e = np.zeros(nvar)
        e[ng:] = -1.0
        e[g] += 1.0
        e[ng + g] += 1.0
        rows.add(e, 0.0, None, f"gen_ctg:{gen.id}")
    G, h, F, names = rows.arrays()
    E, e0, en = _balance(case, loads, nvar, losses=True)
    cost = np.r_[[g.cost for g in case.generators], [g.reserve_cost for g in case.generators]]
    var_names = [f"pg:{g.id}" for g in case.generators] + [f"rg:{g.id}" for g in case.generators]
    return InnerLP(var_names, cost, G, h, F, names, E, e0, en, ng, True)


@dataclass
class DispatchSolution:
    status: str
    p_g: np.ndarray
    r_g: np.ndarray
    objective: float
    binding: list[str] = field(default_factory=list)
    infeasibility: list[tuple[str, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def to_dict(self, case: GridCase | None = None) -> dict:
        ids = case and [g.id for g in case.generators]
        out = {"status": self.status, "objective": self.objective, "binding": list(self.binding),
               "p_g_pu": [float(v) for v in self.p_g], "r_g_pu": [float(v) for v in self.r_g]}
        if ids:
            out["generators"] = ids
        if self.infeasibility:
            out["infeasibility"] = [{"constraint": n, "violation": v} for n, v in self.infeasibility]
        return out


def _diagnose(lp: LinearProgram) -> list[tuple[str, float]]:
    """Elastic re-solve: constraints that must be violated, largest first."""
    b = LPBuilder()
    for j, name in enumerate(lp.var_names):
        b.var(name, -math.inf, math.inf)
    el = []
    for i in range(lp.n_cons):
        row = {j: v for j, v in enumerate(lp.A[i]) if v != 0.0}
        if lp.rel[i] in ("<=", "="):
            e = b.var(f"e+{i}", cost=1.0)
            el.append((i, e))
            b.add({**row, e: -1.0}, "<=", lp.b[i])
        if lp.rel[i] in (">=", "="):
            e = b.var(f"e-{i}", cost=1.0)
            el.append((i, e))
            b.add({**row, e: 1.0}, ">=", lp.b[i])
    res = solve_lp(b.build(), lexicographic=False)
    if not res.ok:
        return []
    out = [(lp.con_names[i], float(res.x[e])) for i, e in el if res.x[e] > 1e-7]
    return sorted(out, key=lambda t: -t[1])


def solve_inner(inner: InnerLP, shift=None, ng: int | None = None) -> DispatchSolution:
    lp = inner.instantiate(shift)
    res = solve_lp(lp)
    ng = inner.n_gen
    if not res.ok:
        diag = _diagnose(lp) if res.status == INFEASIBLE else []
        return DispatchSolution(res.status, np.full(ng, np.nan), np.full(ng, np.nan), math.nan,
                                infeasibility=diag)
    pg = res.x[:ng]
    rg = res.x[ng:2 * ng] if inner.has_reserves else np.zeros(ng)
    binding = [lp.con_names[i] for i in res.binding if i < inner.n_ineq]
    return DispatchSolution(OPTIMAL, pg.copy(), rg.copy(), res.objective, binding)


def solve_dcopf(case: GridCase, loads, sens: SensitivitySet | None = None,
                false_injection_shift=None, params: EmsParams = EmsParams()) -> DispatchSolution:
    sens = sens or build_sensitivities(case)
    return solve_inner(build_dcopf_inner(case, loads, sens, params), false_injection_shift)


def _prior_array(prior) -> np.ndarray:
    return np.asarray(prior.p_g if isinstance(prior, DispatchSolution) else prior, dtype=float)


def solve_sced(case: GridCase, loads, sens: SensitivitySet | None, scs: SecurityConstraintSet,
               prior, false_injection_shift=None, params: EmsParams = EmsParams()) -> DispatchSolution:
    sens = sens or build_sensitivities(case)
    inner = build_sced_inner(case, loads, sens, scs, _prior_array(prior), params)
    return solve_inner(inner, false_injection_shift)


def sced_lp_text(case: GridCase, loads, sens, scs, prior, params: EmsParams = EmsParams()) -> str:
    inner = build_sced_inner(case, loads, sens, scs, _prior_array(prior), params)
    return export_lp(inner.instantiate(None), title=f"SCED {case.name}")


def check_dispatch(case: GridCase, loads, sol: DispatchSolution, params: EmsParams = EmsParams(),
                   tol: float = BALANCE_TOL, losses: bool = True) -> list[str]:
    """Invariant violations of a dispatch solution (empty when sound)."""
    bad = []
    pmin = np.array([g.p_min for g in case.generators])
    pmax = np.array([g.p_max for g in case.generators])
    rlim = np.array([g.ramp_rate for g in case.generators]) * params.reserve_time_min
    if np.any(sol.p_g < pmin - tol):
        bad.append("output below p_min")
    if np.any(sol.p_g + sol.r_g > pmax + tol):
        bad.append("output plus reserve above p_max")
    if np.any(sol.r_g < -tol) or np.any(sol.r_g > rlim + tol):
        bad.append("reserve outside [0, ramp * T_r]")
    demand = (1.0 + case.loss_fraction if losses else 1.0) * float(np.sum(loads))
    if abs(float(np.sum(sol.p_g)) - demand) > tol:
        bad.append("power balance")
    return bad


# ---------------------------------------------------------------------------
# the EMS loop

def estimated_loads(case: GridCase, angles, dispatch) -> np.ndarray:
    """Loads implied by estimated angles given known generator set points.

    The slack entry is corrected for the losses it absorbs in the DC model.
    """
    B, _, _ = build_bus_susceptance(case)
    raw = case.gen_incidence() @ np.asarray(dispatch, dtype=float) - B @ np.asarray(angles, dtype=float)
    lam = case.loss_fraction
    raw[case.slack_index] -= lam / (1.0 + lam) * float(raw.sum())
    return raw


@dataclass
class EmsStep:
    state: StateEstimate
    loads: np.ndarray
    scs: SecurityConstraintSet
    dispatch: DispatchSolution

    @property
    def bdd_alarm(self) -> bool:
        return self.state.alarm


def ems_step(case: GridCase, measurements: MeasurementSet, prior_dispatch,
             params: EmsParams = EmsParams(), sens: SensitivitySet | None = None) -> EmsStep:
    """One pass of state estimation, load extraction, RTCA and SCED."""
    sens = sens or build_sensitivities(case)
    prior = _prior_array(prior_dispatch)
    se = estimate_state(measurements, params.bdd_confidence)
    loads = estimated_loads(case, se.angles, prior)
    scs = run_rtca(case, loads, prior, sens, params=params)
    disp = solve_sced(case, loads, sens, scs, prior, None, params)
    return EmsStep(se, loads, scs, disp)


def steady_state(case: GridCase, params: EmsParams = EmsParams(), max_rounds: int = 100,
                 tol: float = 1e-9) -> GridCase:
    """Iterate RTCA + SCED on the true loads until the dispatch stops moving."""
    sens = build_sensitivities(case)
    loads = case.loads()
    p = case.dispatch0()
    for _ in range(max_rounds):
        scs = run_rtca(case, loads, p, sens, params=params)
        sol = solve_sced(case, loads, sens, scs, p, None, params)
        if not sol.ok:
            raise RuntimeError(f"SCED {sol.status} while settling {case.name}: {sol.infeasibility[:3]}")
        if np.max(np.abs(sol.p_g - p)) <= tol:
            return case.with_dispatch(sol.p_g)
        p = sol.p_g
    raise RuntimeError(f"dispatch of {case.name} did not settle in {max_rounds} rounds")


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False)
