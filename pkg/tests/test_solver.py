import numpy as np
import pytest

from pevgame.instances import compare_with_enumeration, random_player_program
from pevgame.model import LinearExpr, MixedIntegerQP, QuadraticObjective, check_feasible, ge, le
from pevgame.patterns import expr_bounds, pattern_geq
from pevgame.pev import AggregateSignals, GridParams, PevParams, build_player_program
from pevgame.solver import (
    BnBNode,
    RelaxStatus,
    SolveOptions,
    SolveStatus,
    brute_force,
    solve,
    solve_qp_relaxation,
)

var = LinearExpr.var


def test_relaxation_active_bound():
    p = MixedIntegerQP()
    p.add_continuous(1, 2)
    p.set_objective(QuadraticObjective({(0, 0): 1.0}))
    r = solve_qp_relaxation(p)
    assert r.status is RelaxStatus.OPTIMAL
    assert r.point[0] == pytest.approx(1.0, abs=1e-8)
    assert r.true_objective == pytest.approx(1.0, abs=1e-8)


def test_relaxation_interior_with_pattern_rows():
    p = MixedIntegerQP()
    u = p.add_continuous(-7.5, 7.5)
    d = p.add_binary()
    p.add_constraint(ge(var(u), 0.0))
    p.add_constraint(le(var(u) - 7.5 * var(d), 0.0))
    p.add_constraints(pattern_geq(p.add_binary(), var(u), 0.0, expr_bounds(var(u), p.vars)))
    obj = QuadraticObjective()
    obj.add_square(var(u) - 1.0)
    p.set_objective(obj)
    r = solve_qp_relaxation(p)
    assert r.point[u] == pytest.approx(1.0, abs=1e-6)
    assert r.true_objective == pytest.approx(0.0, abs=1e-9)


def test_relaxation_contradictory_rows():
    p = MixedIntegerQP()
    p.add_continuous(-5, 5)
    p.add_constraint(le(var(0), 0.0))
    p.add_constraint(ge(var(0), 1.0))
    r = solve_qp_relaxation(p)
    assert r.status is RelaxStatus.INFEASIBLE and r.certificate


def test_no_binaries_equals_relaxation():
    p = MixedIntegerQP()
    a, b = p.add_continuous(-3, 3), p.add_continuous(-3, 3)
    p.add_constraint(ge(var(a) + var(b), 1.0))
    obj = QuadraticObjective()
    obj.add_square(var(a) - var(b) + 0.5)
    obj.add_square(var(a), 0.1)
    p.set_objective(obj)
    res, rel = solve(p), solve_qp_relaxation(p)
    assert res.status is SolveStatus.OPTIMAL and res.nodes_explored == 1
    assert res.objective == pytest.approx(rel.true_objective, abs=1e-9)
    assert brute_force(p).objective == pytest.approx(res.objective, abs=1e-9)


def test_single_slot_player_rests():
    grid = GridParams(1.09e-3, 1e-5, [30.0], 45.0, 5, -7.5, 7.5)
    pev = PevParams(0.85, 50.0, 0.23, [0.23], [0.0], 1e-3, 0.5e-3, 1)
    p, pv = build_player_program(pev, grid, AggregateSignals.isolated(grid))
    res = solve(p)
    assert res.status is SolveStatus.OPTIMAL
    assert res.objective == pytest.approx(0.0, abs=1e-9)
    assert abs(res.assignment[pv.u[0]]) <= 1e-6 and res.assignment[pv.delta[0]] == 0.0
    assert brute_force(p).objective == pytest.approx(0.0, abs=1e-9)


def _two_binary_program():
    # minimize (x - 2)^2 + 3 b1 + b2 with x <= 1 + b1 + b2 and b1 + b2 <= 1
    p = MixedIntegerQP()
    x = p.add_continuous(0, 5)
    b1, b2 = p.add_binary(), p.add_binary()
    p.add_constraint(le(var(x) - var(b1) - var(b2), 1.0))
    p.add_constraint(le(var(b1) + var(b2), 1.0))
    obj = QuadraticObjective()
    obj.add_square(var(x) - 2.0)
    obj.add_linear(3.0 * var(b1) + 0.5 * var(b2))
    p.set_objective(obj)
    return p


def test_two_binary_exhaustion():
    p = _two_binary_program()
    ref = brute_force(p)
    assert ref.nodes_explored == 3  # (1, 1) is dropped before any QP solve
    assert ref.objective == pytest.approx(0.5, abs=1e-8)
    res = solve(p)
    assert res.objective == pytest.approx(0.5, abs=1e-8)
    assert list(res.assignment[1:]) == [0.0, 1.0]


def test_enumeration_cap():
    p = MixedIntegerQP()
    for _ in range(5):
        p.add_binary()
    with pytest.raises(ValueError):
        brute_force(p, cap=4)


def test_infeasible_program():
    p = MixedIntegerQP()
    b = p.add_binary()
    x = p.add_continuous(0, 1)
    p.add_constraint(ge(var(x) + var(b), 2.5))
    assert solve(p).status is SolveStatus.INFEASIBLE
    assert brute_force(p).status is SolveStatus.INFEASIBLE


def test_node_fixings_consistent():
    n = BnBNode((), 0.0).child(3, 1, 0.5)
    with pytest.raises(ValueError):
        n.child(3, 0, 0.7)


def test_options_validated():
    with pytest.raises(ValueError):
        SolveOptions(abs_gap=0.0)
    with pytest.raises(ValueError):
        SolveOptions(node_limit=0)
    o = SolveOptions(time_limit=5.0)
    assert SolveOptions.from_dict(o.to_dict()) == o
    assert SolveOptions.from_dict(SolveOptions().to_dict()) == SolveOptions()


def test_node_limit_reports_incumbent_and_bound():
    rng = np.random.default_rng(11)
    p = random_player_program(rng, 14)
    res = solve(p, SolveOptions(node_limit=1))
    assert res.nodes_explored == 1
    assert res.status in (SolveStatus.NODE_LIMIT, SolveStatus.OPTIMAL, SolveStatus.INFEASIBLE)


def test_trace_tree_bounds_monotone():
    rng = np.random.default_rng(5)
    for _ in range(10):
        p = random_player_program(rng, 14)
        res = solve(p, SolveOptions(trace=True))
        by_fix = {rec["fixings"]: rec["bound"] for rec in res.tree}
        for fix, bound in by_fix.items():
            # the parent fixes one variable fewer; fixings are stored sorted, so try each removal
            for k in range(len(fix)):
                sub = fix[:k] + fix[k + 1:]
                if sub in by_fix and np.isfinite(bound) and np.isfinite(by_fix[sub]):
                    assert bound >= by_fix[sub] - 1e-7 * max(1.0, abs(bound))


def test_warm_start_does_not_change_objective():
    rng = np.random.default_rng(2)
    for _ in range(8):
        p = random_player_program(rng, 14)
        cold = solve(p)
        if not cold.has_solution:
            continue
        warm = solve(p, incumbent=cold.assignment)
        assert warm.objective == pytest.approx(cold.objective, abs=1e-6)


def test_result_invariants_and_determinism():
    rng = np.random.default_rng(9)
    opts = SolveOptions()
    for _ in range(10):
        p = random_player_program(rng, 14)
        a, b = solve(p, opts), solve(p, opts)
        assert (a.status, a.nodes_explored, a.objective) == (b.status, b.nodes_explored, b.objective)
        if a.status is SolveStatus.OPTIMAL:
            assert a.reg_objective - a.best_bound <= opts.gap(a.reg_objective) + 1e-12
            assert check_feasible(p, a.assignment, opts.integrality_tol)


def test_matches_enumeration_on_random_programs():
    rng = np.random.default_rng(123)
    for _ in range(25):
        c = compare_with_enumeration(rng, 14)
        assert c.difference <= 1e-6, c
