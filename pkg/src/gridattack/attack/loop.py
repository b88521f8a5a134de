"""Closed-loop evaluation: the attacker designs ``c`` from what it measures,
the operator runs its EMS on falsified data, and the physical grid responds."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..ems import EmsParams, SecurityConstraintSet, ems_step, estimated_loads, run_rtca
from ..estimation import MeasurementSet, apply_attack, estimate_state, measure
from ..grid import GridCase
from ..sensitivity import build_sensitivities, injection, solve_dc_flow
from .adblp import AttackResult, AttackSpec, solve_attack, target_row

BDD_TOL = 1e-8
MAX_RERTCA_ROUNDS = 5


@dataclass
class FlowView:
    """Target flow plus the worst ratio over every monitored element."""
    target_pu: float
    target_pct: float
    max_base_pct: float
    max_ctg_pct: float
    worst: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def flow_view(scs: SecurityConstraintSet, target_branch: str, target_ctg: str | None,
              limit: float, direction: int = 1) -> FlowView:
    """``target_pct`` is oriented so that the attacker pushes it upward."""
    ids = scs.branch_ids
    m = ids.index(target_branch)
    tgt = scs.base_flows[m] if target_ctg is None else scs.ctg_flows[target_ctg][m]
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.abs(scs.base_flows) / scs.pmax
    base = np.nan_to_num(base)
    worst = f"base:{ids[int(np.argmax(base))]}"
    wctg = 0.0
    for k, fl in scs.ctg_flows.items():
        kk = ids.index(k)
        r = np.abs(fl) / scs.pkmax
        r[kk] = 0.0
        j = int(np.argmax(r))
        if r[j] > wctg:
            wctg = float(r[j])
            if wctg > base.max():
                worst = f"ctg:{k}:{ids[j]}"
    return FlowView(float(tgt), 100.0 * direction * float(tgt) / limit, 100.0 * float(base.max()), 100.0 * wctg, worst)


@dataclass
class LoopRound:
    round: int
    bdd_clean_J: float
    bdd_attacked_J: float
    bdd_alarm: bool
    false_loads: np.ndarray
    scs: SecurityConstraintSet
    dispatch: np.ndarray | None
    dispatch_status: str | None
    measurements: MeasurementSet

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "bdd": {"clean_J": self.bdd_clean_J, "attacked_J": self.bdd_attacked_J,
                    "alarm": self.bdd_alarm},
            "false_loads_pu": [float(v) for v in self.false_loads],
            "security_constraints": self.scs.to_dict(),
            "dispatch_pu": None if self.dispatch is None else [float(v) for v in self.dispatch],
            "dispatch_status": self.dispatch_status,
            "measurements": [float(v) for v in self.measurements.values],
        }


@dataclass
class LoopReport:
    spec: AttackSpec
    attack: AttackResult
    rounds: list[LoopRound]
    predicted: float
    cyber: FlowView
    physical: FlowView
    limit: float
    limit_kind: str
    attacker_rertca_rounds: int = 1
    notes: list[str] = field(default_factory=list)

    @property
    def predicted_pct(self) -> float:
        return 100.0 * self.attack.direction * self.predicted / self.limit

    @property
    def bdd_max_delta(self) -> float:
        return max(abs(r.bdd_attacked_J - r.bdd_clean_J) for r in self.rounds)

    @property
    def any_alarm(self) -> bool:
        return any(r.bdd_alarm for r in self.rounds)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "limit_pu": self.limit,
            "limit_kind": self.limit_kind,
            "flows": {
                "predicted_pu": self.predicted, "predicted_pct": self.predicted_pct,
                "cyber": self.cyber.to_dict(), "physical": self.physical.to_dict(),
            },
            "bdd_max_delta": self.bdd_max_delta,
            "attacker_rertca_rounds": self.attacker_rertca_rounds,
            "attack": self.attack.to_dict(),
            "rounds": [r.to_dict() for r in self.rounds],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _true_point(case: GridCase, sens, dispatch):
    inj = injection(case, dispatch, case.loads())
    return solve_dc_flow(case, inj)


def _rertca_attack(case, sens, p_g0, spec, loads, params, rounds, first_scs):
    """Re-run RTCA on the attacker's predicted dispatch and fold in new constraints."""
    scs = first_scs
    res = solve_attack(case, sens, scs, p_g0, spec, loads, params)
    used = 1
    for _ in range(rounds - 1):
        if not res.ok:
            break
        after = run_rtca(case, loads, res.inner_dispatch.p_g, sens, params=params)
        new = [c for c in after.ctg_critical if (c.contingency, c.branch) not in scs.pairs()]
        newb = [c for c in after.base_critical if c.branch not in {b.branch for b in scs.base_critical}]
        if not new and not newb:
            break
        # the added rows still hot-start from the pre-attack flows
        pre = run_rtca(case, loads, p_g0, sens, tau=0.0, params=params)
        lookup = {(c.contingency, c.branch): c for c in pre.ctg_critical}
        blook = {c.branch: c for c in pre.base_critical}
        scs = SecurityConstraintSet(
            scs.base_critical + [blook[c.branch] for c in newb],
            scs.ctg_critical + [lookup[(c.contingency, c.branch)] for c in new],
            scs.tau, scs.tau_base, scs.contingencies, scs.base_flows, scs.ctg_flows, scs.pmax,
            scs.pkmax, scs.branch_ids)
        res = solve_attack(case, sens, scs, p_g0, spec, loads, params)
        used += 1
    return res, used


def run_attack_loop(case: GridCase, spec: AttackSpec, params: EmsParams = EmsParams(),
                    rounds: int = 2, noise_seed: int = 0, rertca_rounds: int = 1,
                    attack: AttackResult | None = None) -> LoopReport:
    """Run the measure, attack, EMS, measure sequence for ``rounds`` rounds.

    Every round but the last ends with an SCED re-dispatch the plant follows;
    the last one stops after the operator's contingency analysis, whose flows
    are the cyber flows of the report.
    """
    if rounds < 2:
        raise ValueError("the loop needs at least two measurement rounds")
    if not 1 <= rertca_rounds <= MAX_RERTCA_ROUNDS:
        raise ValueError(f"rertca_rounds must be in 1..{MAX_RERTCA_ROUNDS}")
    sens = build_sensitivities(case)
    p_g = case.dispatch0()
    tgt = target_row(case, sens, spec, params)

    point = _true_point(case, sens, p_g)
    z1 = measure(case, point.flows, point.angles, noise_seed)
    se1 = estimate_state(z1, params.bdd_confidence)
    att_loads = estimated_loads(case, se1.angles, p_g)
    att_scs = run_rtca(case, att_loads, p_g, sens, params=params)
    notes = spec.check(case, att_scs)
    used = 1
    if attack is None:
        attack, used = _rertca_attack(case, sens, p_g, spec, att_loads, params, rertca_rounds, att_scs)
    if not attack.ok:
        raise RuntimeError(f"attack design failed: {attack.status}")
    c = attack.c

    history = []
    for r in range(1, rounds + 1):
        seed = noise_seed + r - 1 if noise_seed else 0
        point = _true_point(case, sens, p_g)
        z = measure(case, point.flows, point.angles, seed)
        zbar = apply_attack(z, c)
        clean = estimate_state(z, params.bdd_confidence)
        if r < rounds:
            step = ems_step(case, zbar, p_g, params, sens)
            if not step.dispatch.ok:
                notes.append(f"round {r}: SCED {step.dispatch.status}; dispatch held")
            else:
                p_g_next = step.dispatch.p_g
            history.append(LoopRound(r, clean.J, step.state.J, step.state.alarm, step.loads, step.scs,
                                     step.dispatch.p_g if step.dispatch.ok else None,
                                     step.dispatch.status, zbar))
            if step.dispatch.ok:
                p_g = p_g_next
        else:
            se = estimate_state(zbar, params.bdd_confidence)
            fl = estimated_loads(case, se.angles, p_g)
            cyber_scs = run_rtca(case, fl, p_g, sens, params=params)
            history.append(LoopRound(r, clean.J, se.J, se.alarm, fl, cyber_scs, None, None, zbar))

    phys_scs = run_rtca(case, case.loads(), p_g, sens, params=params)
    d = attack.direction
    cyber = flow_view(history[-1].scs, spec.target_branch, spec.target_contingency, tgt.limit, d)
    phys = flow_view(phys_scs, spec.target_branch, spec.target_contingency, tgt.limit, d)
    kind = "long-term" if spec.target_contingency is None else "short-term"
    return LoopReport(spec, attack, history, attack.predicted_flow, cyber, phys, tgt.limit, kind,
                      used, notes)
