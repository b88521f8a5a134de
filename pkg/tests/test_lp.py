import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from gridattack.lp import (INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, LPBuilder, dual_objective,
                           export_lp, solve_lp, solve_milp)
from oracles import milp_enumeration, vertex_enumeration


def random_lp(rng, n, m, m_eq=0, sense="min"):
    A = rng.integers(-5, 6, size=(m, n)).astype(float)
    x0 = rng.uniform(-2, 2, n)
    # offsets around a known point keep most instances feasible
    b = A @ x0 + rng.uniform(-1.0, 3.0, m)
    Ae = rng.integers(-3, 4, size=(m_eq, n)).astype(float)
    be = Ae @ x0
    lo = np.full(n, -5.0)
    hi = np.full(n, 5.0)
    c = rng.integers(-9, 10, n).astype(float)
    lp = LinearProgram(c, np.vstack([A, Ae]), ["<="] * m + ["="] * m_eq, np.r_[b, be], lo, hi, sense)
    return lp, (c, A, b, Ae if m_eq else None, be if m_eq else None, lo, hi)


def test_max_single_var():
    b = LPBuilder("max")
    x = b.var("x", cost=1.0)
    b.add({x: 1.0}, "<=", 3.0)
    res = solve_lp(b.build())
    assert res.status == OPTIMAL
    assert res.x[0] == pytest.approx(3.0) and res.objective == pytest.approx(3.0)
    assert res.duals[0] == pytest.approx(1.0)


def test_degenerate_face_picks_smallest_vertex():
    b = LPBuilder()
    x, y = b.var("x", cost=1.0), b.var("y", cost=1.0)
    b.add({x: 1.0, y: 1.0}, ">=", 2.0)
    first = solve_lp(b.build())
    assert first.objective == pytest.approx(2.0)
    # lexicographically smallest optimal vertex of the face x + y = 2
    np.testing.assert_allclose(first.x, [0.0, 2.0], atol=1e-12)
    again = solve_lp(b.build())
    np.testing.assert_array_equal(first.x, again.x)


def test_infeasible_and_unbounded():
    b = LPBuilder()
    x = b.var("x")
    b.add({x: 1.0}, ">=", 2.0)
    b.add({x: 1.0}, "<=", 1.0)
    assert solve_lp(b.build()).status == INFEASIBLE
    u = LPBuilder("max")
    y = u.var("y", cost=1.0)
    u.add({y: 1.0}, ">=", 0.0)
    assert solve_lp(u.build()).status == UNBOUNDED


def test_rejects_binaries():
    b = LPBuilder()
    b.var("z", binary=True)
    with pytest.raises(ValueError):
        solve_lp(b.build())


@pytest.mark.parametrize("seed", range(200))
def test_random_small_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    m = int(rng.integers(2, 7))
    m_eq = int(rng.integers(0, 2))
    sense = "min" if seed % 2 else "max"
    lp, (c, A, b, Ae, be, lo, hi) = random_lp(rng, n, m, m_eq, sense)
    ref = vertex_enumeration(c, A, b, Ae, be, lo, hi, sense)
    res = solve_lp(lp)
    if ref is None:
        assert res.status == INFEASIBLE
        return
    assert res.status == OPTIMAL
    assert abs(res.objective - ref) <= 1e-6 * max(1.0, abs(ref))
    assert lp.max_violation(res.x) <= 1e-7
    # strong duality on every optimal solve
    assert dual_objective(lp, res.duals) == pytest.approx(res.objective, rel=1e-7, abs=1e-7)


@pytest.mark.parametrize("seed", range(20))
def test_random_20x30_lp_matches_highs(seed):
    rng = np.random.default_rng(1000 + seed)
    lp, (c, A, b, _, _, lo, hi) = random_lp(rng, 20, 30)
    ref = linprog(c, A_ub=A, b_ub=b, bounds=list(zip(lo, hi)), method="highs")
    res = solve_lp(lp)
    if ref.status == 2:
        assert res.status == INFEASIBLE
        return
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(ref.fun, rel=1e-6, abs=1e-6)
    assert dual_objective(lp, res.duals) == pytest.approx(res.objective, rel=1e-7, abs=1e-7)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_free_variables_and_ge_rows(seed):
    """LPs mixing free variables, >= rows and one-sided bounds against HiGHS."""
    rng = np.random.default_rng(seed)
    n, m = 5, 7
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    rel = list(rng.choice(["<=", ">="], m))
    slack = rng.uniform(0, 1, m)
    b = A @ x0 + np.where(np.array(rel) == "<=", slack, -slack)
    lb = np.where(rng.random(n) < 0.4, -np.inf, -3.0)
    ub = np.where(rng.random(n) < 0.4, np.inf, 3.0)
    lb, ub = np.minimum(lb, x0), np.maximum(ub, x0)
    c = rng.normal(size=n)
    lp = LinearProgram(c, A, rel, b, lb, ub)
    sgn = np.where(np.array(rel) == "<=", 1.0, -1.0)
    ref = linprog(c, A_ub=A * sgn[:, None], b_ub=b * sgn,
                  bounds=[(None if math.isinf(l) else l, None if math.isinf(u) else u) for l, u in zip(lb, ub)],
                  method="highs")
    res = solve_lp(lp)
    if ref.status == 3:
        assert res.status == UNBOUNDED
        return
    assert ref.status == 0 and res.status == OPTIMAL
    assert res.objective == pytest.approx(ref.fun, rel=1e-6, abs=1e-6)
    assert dual_objective(lp, res.duals) == pytest.approx(res.objective, rel=1e-6, abs=1e-6)


def test_knapsack():
    b = LPBuilder("max")
    a, c = b.var("a", cost=3.0, binary=True), b.var("b", cost=2.0, binary=True)
    b.add({a: 1.0, c: 1.0}, "<=", 1.0)
    res = solve_milp(b.build())
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, [1.0, 0.0])
    assert res.objective == pytest.approx(3.0)


def test_integral_relaxation_needs_no_branching():
    b = LPBuilder("max")
    z = [b.var(f"z{i}", cost=float(i + 1), binary=True) for i in range(3)]
    b.add({j: 1.0 for j in z}, "<=", 2.0)
    res = solve_milp(b.build())
    assert res.objective == pytest.approx(5.0)
    assert res.nodes == 0


def _random_milp(rng, n_bin, n_cont, integer=False):
    n = n_bin + n_cont
    m = int(rng.integers(2, 6))
    A = rng.integers(-4, 6, size=(m, n)).astype(float)
    b = rng.integers(0, 8, m).astype(float)
    c = rng.integers(-6, 10, n).astype(float)
    if not integer:
        A += rng.normal(scale=0.1, size=A.shape)
        c += rng.normal(scale=0.1, size=n)
    lo = np.zeros(n)
    hi = np.r_[np.ones(n_bin), np.full(n_cont, 4.0)]
    lp = LinearProgram(c, A, ["<="] * m, b, lo, hi, "max", integers=range(n_bin))
    return lp, c, A, b, lo, hi


@pytest.mark.parametrize("seed", range(50))
def test_random_milp_matches_enumeration(seed):
    rng = np.random.default_rng(5000 + seed)
    n_bin = int(rng.integers(3, 9))
    pure = seed % 2 == 0
    lp, c, A, b, lo, hi = _random_milp(rng, n_bin, 0 if pure else int(rng.integers(1, 4)), integer=pure)
    ref = milp_enumeration(c, A, b, lo, hi, list(range(n_bin)), "max")
    res = solve_milp(lp)
    if ref is None:
        assert res.status == INFEASIBLE
        return
    assert res.status == OPTIMAL
    if pure:
        assert res.objective == ref
    else:
        assert res.objective == pytest.approx(ref, rel=1e-9, abs=1e-9)
    assert np.all(np.isin(np.round(res.x[:n_bin], 9), [0.0, 1.0]))


def test_milp_requires_binaries():
    b = LPBuilder()
    b.var("x", cost=1.0)
    with pytest.raises(ValueError):
        solve_milp(b.build())


def test_export_sections_and_free_var():
    b = LPBuilder()
    x = b.var("x", cost=1.0)
    y = b.var("y", -math.inf, math.inf, cost=-1.0)
    b.add({x: 1.0, y: 1.0}, "<=", 4.0, name="cap")
    b.add({y: 1.0}, "<=", 2.0)
    text = export_lp(b.build(), "two-var")
    for section in ("Minimize", "Subject To", "Bounds", "End"):
        assert section in text
    assert " y free" in text
    assert "cap: 1.0 x + 1.0 y <= 4.0" in text


def _highs_read(tmp_path, text):
    highspy = pytest.importorskip("highspy")
    path = tmp_path / "model.lp"
    path.write_text(text)
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.readModel(str(path))
    h.run()
    return h.getInfo().objective_function_value


@pytest.mark.parametrize("seed", range(5))
def test_export_read_back_by_external_solver(tmp_path, seed):
    rng = np.random.default_rng(seed)
    lp, _ = random_lp(rng, 6, 8, 1)
    res = solve_lp(lp)
    if res.status != OPTIMAL:
        pytest.skip("random instance infeasible")
    assert _highs_read(tmp_path, export_lp(lp)) == pytest.approx(res.objective, rel=1e-6, abs=1e-6)


def test_sced_export_matches_external_solver(tmp_path, five_bus):
    from gridattack.ems import run_rtca, sced_lp_text, solve_sced
    from gridattack.sensitivity import build_sensitivities

    sens = build_sensitivities(five_bus)
    loads, p0 = five_bus.loads(), five_bus.dispatch0()
    scs = run_rtca(five_bus, loads, p0, sens)
    ours = solve_sced(five_bus, loads, sens, scs, p0)
    assert ours.ok
    ext = _highs_read(tmp_path, sced_lp_text(five_bus, loads, sens, scs, p0))
    assert ext == pytest.approx(ours.objective, rel=1e-6, abs=1e-6)
