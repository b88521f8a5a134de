from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import linprog

from conftest import TRIANGLE
from gridattack.ems import (EmsParams, build_sced_inner, check_dispatch, ems_step, estimated_loads,
                            ramp_window, run_rtca, solve_dcopf, solve_sced, steady_state)
from gridattack.estimation import apply_attack, injection_shift, measure
from gridattack.grid import bundled_case, parse_case
from gridattack.lp import INFEASIBLE
from gridattack.sensitivity import build_sensitivities, injection, solve_dc_flow
from oracles import dispatch_lp, rtca_pairs


def _meter(case, dispatch=None):
    p = case.dispatch0() if dispatch is None else dispatch
    pt = solve_dc_flow(case, injection(case, p, case.loads()))
    return measure(case, pt.flows, pt.angles)


def _oracle_objective(case, loads, model, prior, shift=None, crit=None):
    shift = np.zeros(case.n_bus) if shift is None else shift
    cost, A, b, Ae, be, bounds, _ = dispatch_lp(case, loads, shift, model, prior, crit)
    r = linprog(cost, A_ub=A, b_ub=b, A_eq=Ae, b_eq=be, bounds=bounds, method="highs")
    return r


# -- RTCA -------------------------------------------------------------------

def test_triangle_outage_ratio_below_threshold(triangle):
    sens = build_sensitivities(triangle)
    scs = run_rtca(triangle, triangle.loads(), [1.0, 0.0], sens)
    assert scs.base_critical == [] and scs.ctg_critical == []
    assert scs.ctg_flow("L12", "L13") == pytest.approx(1.0)
    everything = run_rtca(triangle, triangle.loads(), [1.0, 0.0], sens, tau=0.0)
    ratio = {(c.contingency, c.branch): c.ratio for c in everything.ctg_critical}
    assert ratio[("L12", "L13")] == pytest.approx(1.0 / 1.15)


def test_rtca_violation_with_unit_shortterm_limit(triangle):
    scs = run_rtca(triangle, triangle.loads(), [1.0, 0.0], params=EmsParams(shortterm_factor=1.0))
    assert ("L12", "L13") in scs.pairs()
    assert any(c.contingency == "L12" and c.branch == "L13" for c in scs.violations)


def test_tau_zero_lists_every_pair(five_bus):
    scs = run_rtca(five_bus, five_bus.loads(), five_bus.dispatch0(), tau=0.0)
    n = five_bus.n_branch
    assert len(scs.base_critical) == n
    assert len(scs.ctg_critical) == len(scs.contingencies) * (n - 1)


def test_zero_load_gives_empty_set(triangle):
    scs = run_rtca(triangle, np.zeros(3), np.zeros(2))
    assert scs.base_critical == [] and scs.ctg_critical == []


def test_separate_base_threshold(five_bus):
    loose = run_rtca(five_bus, five_bus.loads(), five_bus.dispatch0(), params=EmsParams(tau_base=0.5))
    assert {c.branch for c in loose.base_critical} >= {"L14"}
    assert loose.pairs() == run_rtca(five_bus, five_bus.loads(), five_bus.dispatch0()).pairs()


@pytest.mark.parametrize("name", ["five_bus", "ieee14"])
def test_rtca_matches_brute_force(name):
    case = bundled_case(name)
    loads, p = case.loads(), case.dispatch0()
    scs = run_rtca(case, loads, p)
    base, flows, base_crit, ctg, _ = rtca_pairs(case, loads, p)
    ids = case.branch_ids
    assert {c.branch for c in scs.base_critical} == {ids[m] for m in base_crit}
    assert scs.pairs() == {(ids[k], ids[m]) for k, m in ctg}
    assert set(scs.contingencies) == {ids[k] for k in flows}
    for k, f in flows.items():
        np.testing.assert_allclose(scs.ctg_flows[ids[k]], f, atol=1e-9)


# -- DCOPF ------------------------------------------------------------------

def test_triangle_dcopf_cheap_unit_serves_load(triangle):
    sol = solve_dcopf(triangle, triangle.loads())
    np.testing.assert_allclose(sol.p_g, [1.0, 0.0], atol=1e-9)
    assert sol.objective == pytest.approx(10.0)


def test_triangle_dcopf_binding_line_splits_dispatch():
    # flow(1-2) = (P1 + 1) / 3 with the slack at bus 3, so a 0.5 pu limit caps P1 at 0.5
    tight = parse_case(TRIANGLE.replace("L12 1 2 0.1 100", "L12 1 2 0.1 50"))
    sol = solve_dcopf(tight, tight.loads())
    ref = _oracle_objective(tight, tight.loads(), "dcopf", tight.dispatch0())
    assert sol.objective == pytest.approx(ref.fun, abs=1e-9)
    np.testing.assert_allclose(sol.p_g, [0.5, 0.5], atol=1e-9)
    assert "flow_max:L12" in sol.binding


def test_triangle_dcopf_limit_03_is_infeasible():
    # (P1 + 1) / 3 <= 0.3 would need P1 < 0
    tight = parse_case(TRIANGLE.replace("L12 1 2 0.1 100", "L12 1 2 0.1 30"))
    sol = solve_dcopf(tight, tight.loads())
    assert sol.status == INFEASIBLE
    assert sol.infeasibility and "L12" in sol.infeasibility[0][0]


def test_dcopf_zero_load(triangle):
    sol = solve_dcopf(triangle, np.zeros(3))
    np.testing.assert_allclose(sol.p_g, 0.0, atol=1e-12)
    assert sol.objective == pytest.approx(0.0)


@pytest.mark.parametrize("scale", [0.6, 1.0, 1.3])
def test_dcopf_matches_highs_on_five_bus(five_bus, scale):
    loads = five_bus.loads() * scale
    rng = np.random.default_rng(int(scale * 10))
    shift = rng.normal(scale=0.05, size=5)
    shift -= shift.mean()
    sol = solve_dcopf(five_bus, loads, false_injection_shift=shift)
    ref = _oracle_objective(five_bus, loads, "dcopf", five_bus.dispatch0(), shift)
    if ref.status == 2:
        assert sol.status == INFEASIBLE
    else:
        assert sol.objective == pytest.approx(ref.fun, rel=1e-9, abs=1e-9)
        assert check_dispatch(five_bus, loads, sol, losses=False) == []


# -- SCED -------------------------------------------------------------------

def test_sced_steady_state_is_a_no_op(five_bus, ieee14):
    for case in (five_bus, ieee14):
        sens = build_sensitivities(case)
        p = case.dispatch0()
        scs = run_rtca(case, case.loads(), p, sens)
        sol = solve_sced(case, case.loads(), sens, scs, p)
        again = solve_sced(case, case.loads(), sens, run_rtca(case, case.loads(), sol.p_g, sens), sol.p_g)
        np.testing.assert_allclose(sol.p_g, p, atol=1e-9)
        assert again.objective == pytest.approx(sol.objective, abs=1e-7)


def _ctg_triangle(rating_13):
    return parse_case(TRIANGLE.replace("L13 1 3 0.1 100", f"L13 1 3 0.1 {rating_13}"))


def test_triangle_contingency_shifts_generation_to_bus3():
    case = _ctg_triangle(80)
    loads, prior = case.loads(), case.dispatch0()
    sens = build_sensitivities(case)
    scs = run_rtca(case, loads, prior, sens)
    assert ("L12", "L13") in scs.pairs()
    sol = solve_sced(case, loads, sens, scs, prior)
    # post-contingency, all of G1 reaches bus 2 over L13: P1 <= 1.15 * 0.8
    np.testing.assert_allclose(sol.p_g, [0.92, 0.08], atol=1e-9)
    base, flows, bc, ctg, _ = rtca_pairs(case, loads, prior)
    ref = _oracle_objective(case, loads, "sced", prior, crit=(base, flows, bc, ctg))
    assert sol.objective == pytest.approx(ref.fun, abs=1e-9)
    assert sol.objective == pytest.approx(10 * 0.92 + 20 * 0.08 + 1 * 0.08 + 2 * 0.92)
    lo, hi = ramp_window(case, prior)
    assert np.all(sol.p_g >= lo - 1e-12) and np.all(sol.p_g <= hi + 1e-12)


def test_triangle_contingency_beyond_ramp_is_infeasible():
    # G1 would have to drop below 100 - 5 * 15 = 25 MW
    case = _ctg_triangle(20)
    sens = build_sensitivities(case)
    scs = run_rtca(case, case.loads(), case.dispatch0(), sens)
    sol = solve_sced(case, case.loads(), sens, scs, case.dispatch0())
    assert sol.status == INFEASIBLE
    names = [n for n, _ in sol.infeasibility]
    assert any("ramp_min:G1" in n or "ctg:L12:L13" in n for n in names)


def _reserve_case(ramp2):
    # G1 must run at 100 MW or more and G2 is cheaper, so the dispatch is (1.0, 0.2)
    text = f"""loss_fraction 0
BUS
1 138 0 0 1
2 138 120 0 0
BRANCH
L 1 2 0.1 500 0 0 1
GEN
G1 1 100 200 100 10 0 10
G2 2 0 200 20 5 0 {ramp2}
"""
    return parse_case(text)


@pytest.mark.parametrize("ramp2, feasible", [(5, False), (11, True)])
def test_generator_contingency_reserve_coverage(ramp2, feasible):
    # covering the loss of G1 needs R2 >= 1.0 pu, and R2 <= M2 * T_r
    case = _reserve_case(ramp2)
    sens = build_sensitivities(case)
    prior = np.array([1.0, 0.2])
    scs = run_rtca(case, case.loads(), prior, sens)
    sol = solve_sced(case, case.loads(), sens, scs, prior)
    base, flows, bc, ctg, _ = rtca_pairs(case, case.loads(), prior)
    ref = _oracle_objective(case, case.loads(), "sced", prior, crit=(base, flows, bc, ctg))
    if feasible:
        assert sol.ok and sol.objective == pytest.approx(ref.fun, abs=1e-9)
        np.testing.assert_allclose(sol.p_g, prior, atol=1e-9)
        assert sol.r_g[1] >= sol.p_g[0] - 1e-9 and sol.r_g[0] >= sol.p_g[1] - 1e-9
    else:
        assert ref.status == 2
        assert sol.status == INFEASIBLE
        assert any(n.startswith(("gen_ctg", "res_max")) for n, _ in sol.infeasibility)


@pytest.mark.parametrize("seed", range(6))
def test_sced_matches_highs_with_false_shift(five_bus, seed):
    rng = np.random.default_rng(seed)
    sens = build_sensitivities(five_bus)
    loads, prior = five_bus.loads(), five_bus.dispatch0()
    scs = run_rtca(five_bus, loads, prior, sens, tau=0.5)
    c = rng.normal(scale=0.003, size=5)
    c[five_bus.slack_index] = 0.0
    shift = injection_shift(five_bus, c)
    sol = solve_sced(five_bus, loads, sens, scs, prior, false_injection_shift=shift)
    base, flows, bc, ctg, _ = rtca_pairs(five_bus, loads, prior, tau=0.5)
    ref = _oracle_objective(five_bus, loads, "sced", prior, shift, (base, flows, bc, ctg))
    if ref.status == 2:
        assert sol.status == INFEASIBLE
    else:
        assert sol.ok and sol.objective == pytest.approx(ref.fun, rel=1e-9, abs=1e-9)
        assert check_dispatch(five_bus, loads, sol) == []


def test_sced_inner_dimensions(five_bus):
    sens = build_sensitivities(five_bus)
    scs = run_rtca(five_bus, five_bus.loads(), five_bus.dispatch0(), sens)
    inner = build_sced_inner(five_bus, five_bus.loads(), sens, scs, five_bus.dispatch0())
    ng = five_bus.n_gen
    n_flow = 2 * (len(scs.base_critical) + len(scs.ctg_critical))
    assert inner.n_ineq == n_flow + 2 * ng + 2 * ng + ng + ng
    assert inner.G.shape[1] == 2 * ng and inner.F.shape == (inner.n_ineq, five_bus.n_bus)


# -- EMS loop ---------------------------------------------------------------

def test_estimated_loads_recover_truth(five_bus, ieee14):
    for case in (five_bus, ieee14):
        z = _meter(case)
        step = ems_step(case, z, case.dispatch0())
        np.testing.assert_allclose(step.loads, case.loads(), atol=1e-9)
        assert not step.bdd_alarm


def test_estimated_loads_see_attack_as_load_shift(five_bus):
    z = _meter(five_bus)
    c = np.array([0.002, -0.001, 0.0, 0.001, 0.0])
    from gridattack.estimation import estimate_state

    theta = estimate_state(apply_attack(z, c)).angles
    got = estimated_loads(five_bus, theta, five_bus.dispatch0())
    np.testing.assert_allclose(got, five_bus.loads() - injection_shift(five_bus, c), atol=1e-9)


def test_ems_fixed_point_over_five_steps(five_bus):
    p = five_bus.dispatch0()
    obj = None
    for _ in range(5):
        step = ems_step(five_bus, _meter(five_bus, p), p)
        assert step.dispatch.ok
        if obj is not None:
            assert abs(step.dispatch.objective - obj) <= 1e-7
        obj = step.dispatch.objective
        np.testing.assert_allclose(step.dispatch.p_g, p, atol=1e-9)
        p = step.dispatch.p_g


def test_attack_on_untouched_constraint_leaves_dispatch(five_bus):
    """A shift that changes no screened constraint keeps the re-dispatch where it was."""
    p = five_bus.dispatch0()
    z = _meter(five_bus, p)
    sens = build_sensitivities(five_bus)
    # the shift from bus 2 does not reach the screened L14 | L45 row
    c = np.array([0.0, 0.003, 0.0, 0.0, 0.0])
    step = ems_step(five_bus, apply_attack(z, c), p, sens=sens)
    clean = ems_step(five_bus, z, p, sens=sens)
    assert step.dispatch.ok
    assert step.scs.pairs() == clean.scs.pairs()
    assert abs(step.dispatch.objective - clean.dispatch.objective) <= 1e-7
    np.testing.assert_allclose(step.dispatch.p_g, clean.dispatch.p_g, atol=1e-9)


def test_attack_on_binding_constraint_moves_dispatch(five_bus):
    p = five_bus.dispatch0()
    z = _meter(five_bus, p)
    sens = build_sensitivities(five_bus)
    c = np.array([0.001, 0.0, 0.0, 0.0, 0.0])
    step = ems_step(five_bus, apply_attack(z, c), p, sens=sens)
    assert step.dispatch.ok
    assert np.max(np.abs(step.dispatch.p_g - p)) > 1e-4
    base, flows, bc, ctg, _ = rtca_pairs(five_bus, step.loads, p)
    ref = _oracle_objective(five_bus, step.loads, "sced", p, crit=(base, flows, bc, ctg))
    assert step.dispatch.objective == pytest.approx(ref.fun, rel=1e-9, abs=1e-9)


def test_steady_state_is_fixed(five_bus):
    settled = steady_state(five_bus)
    np.testing.assert_allclose(settled.dispatch0(), five_bus.dispatch0(), atol=1e-9)
    far = five_bus.with_dispatch([1.0, 1.1805])
    moved = steady_state(far)
    np.testing.assert_allclose(moved.dispatch0().sum(), 1.02 * five_bus.loads().sum(), atol=1e-9)


def test_params_are_frozen():
    p = EmsParams()
    with pytest.raises(Exception):
        p.tau = 0.5
    assert replace(p, tau=0.8).base_threshold == 0.8
