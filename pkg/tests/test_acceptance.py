"""Acceptance gate.  Each test prints one PASS/FAIL line and asserts its criterion."""

import itertools
import time

import numpy as np
import pytest

from pevgame.game import (
    CollectiveStrategy,
    Game,
    certify_mine,
    joint_violations,
    player_cost,
    player_program,
    potential,
    run_algorithm,
)
from pevgame.instances import compare_with_enumeration
from pevgame.model import LinearExpr, MixedIntegerQP, check_feasible
from pevgame.patterns import DEFAULT_EPS, expr_bounds, pattern_and, pattern_geq, pattern_implies, pattern_leq
from pevgame.pev import GridParams, PevParams, rest_strategy
from pevgame.scenario import default_scenario

from _oracles import complete_strategy, runs_ok
from conftest import record

EPS = DEFAULT_EPS


# -- 1. exact potential ------------------------------------------------------------------------

def _feasible_profile(rng, pev, T):
    """Random exchange profile whose completion is feasible for ``pev`` in isolation."""
    driving = np.asarray(pev.mu) > 0
    while True:
        word = (rng.random(T) < 0.6) & ~driving
        if not runs_ok(tuple(int(w) for w in word), pev.h_min):
            continue
        u = np.where(word, rng.uniform(0.1, 3.5, T) * rng.choice([-1.0, 1.0], T), 0.0)
        x = pev.x0 + np.concatenate([[0.0], np.cumsum(pev.b * u - (~word) * np.asarray(pev.mu))])
        if np.all(x[:-1] >= np.asarray(pev.x_ref)) and np.all(x <= 1.0) and x[-1] >= pev.x_ref[-1]:
            return u


def _random_scenario(rng):
    N, T = int(rng.choice([2, 3, 4])), int(rng.integers(2, 7))
    grid = GridParams(1.09e-3, 1.23e-3, [float(v) for v in rng.uniform(15, 30, T)], 45.0, 5, -7.5, 7.5)
    pevs = []
    for _ in range(N):
        h = int(rng.integers(1, min(T, 3) + 1))
        mu = np.where(rng.random(T) < 0.2, rng.uniform(0.01, 0.05, T), 0.0)
        pevs.append(PevParams(0.85, float(rng.uniform(40, 75)), float(rng.uniform(0.4, 0.8)),
                              [float(v) for v in rng.uniform(0.0, 0.3, T)], mu,
                              1e-3, 0.5e-3, h))
    return Game(grid, pevs)


def test_exact_potential_identity():
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    worst, count = 0.0, 0
    while count < 1000:
        game = _random_scenario(rng)
        z = CollectiveStrategy([complete_strategy(p, game.grid, _feasible_profile(rng, p, game.T))
                                for p in game.pevs])
        assert joint_violations(game, z) == []
        P = potential(game, z)
        for _ in range(5):
            i = int(rng.integers(game.N))
            y = z.replace(i, complete_strategy(game.pevs[i], game.grid,
                                               _feasible_profile(rng, game.pevs[i], game.T)))
            assert joint_violations(game, y) == []
            dP = potential(game, y) - P
            dJ = player_cost(game, y, i) - player_cost(game, z, i)
            worst = max(worst, abs(dP - dJ) / max(1.0, abs(P)))
            count += 1
    elapsed = time.perf_counter() - started
    ok = worst <= 1e-9 and elapsed <= 120
    record(1, "exact potential identity", ok, f"({count} deviations, worst {worst:.2e}, {elapsed:.1f}s)")
    assert ok


# -- 2. pattern equivalence --------------------------------------------------------------------

def _holds(rows, a):
    a = np.asarray(a, dtype=float)
    return all(r.residual(a) <= 1e-12 for r in rows)


def _grid(c, m, M, n=1000):
    pts = np.concatenate([np.linspace(m, M, n), c + EPS * np.linspace(-3, 3, 25)])
    return [float(f) for f in pts if m <= f <= M]


def test_pattern_equivalence():
    started = time.perf_counter()
    failures = []
    checked = 0
    boxes = [(-7.5, 7.5), (0.0, 10.0), (-3.0, 0.0)]
    for m, M in boxes:
        p = MixedIntegerQP()
        p.add_continuous(m, M)  # x0: f
        p.add_binary()          # x1: delta
        f = LinearExpr.var(0)
        bd = expr_bounds(f, p.vars)
        for c in (m, 0.5 * (m + M), M, 0.0 if m < 0 < M else m):
            for lit, flip in ((1, False), (1.0 - LinearExpr.var(1), True)):
                geq = pattern_geq(lit, f, c, bd)
                leq = pattern_leq(lit, f, c, bd)
                for fv in _grid(c, m, M):
                    for d in (0, 1):
                        val = 1 - d if flip else d
                        want_geq = fv >= c if val else fv <= c - EPS
                        want_leq = fv <= c if val else fv >= c + EPS
                        checked += 2
                        if _holds(geq, [fv, d]) != want_geq:
                            failures.append(("geq", m, M, c, fv, d))
                        if _holds(leq, [fv, d]) != want_leq:
                            failures.append(("leq", m, M, c, fv, d))
        # implication: g = f if delta else 0, with g sharing the box of f
        q = MixedIntegerQP()
        q.add_continuous(m, M); q.add_continuous(m, M); q.add_binary()
        rows = pattern_implies(0, LinearExpr.var(1), 2, expr_bounds(LinearExpr.var(1), q.vars))
        vals = np.linspace(m, M, 33)
        for g, fv in itertools.product(vals, vals):
            for d in (0, 1):
                checked += 1
                want = (g == fv) if d else (g == 0.0)
                if _holds(rows, [g, fv, d]) != want:
                    failures.append(("implies", m, M, g, fv, d))
    for lits in itertools.product((0, 1), repeat=3):
        rows = pattern_and(0, 1, 2)
        checked += 1
        if _holds(rows, lits) != (lits[0] == (lits[1] and lits[2])):
            failures.append(("and", lits))
        neg = pattern_and(1.0 - LinearExpr.var(0), 1, 2)
        checked += 1
        if _holds(neg, lits) != ((1 - lits[0]) == (lits[1] and lits[2])):
            failures.append(("and-negated", lits))
    elapsed = time.perf_counter() - started
    ok = not failures and elapsed <= 30
    record(2, "pattern equivalence", ok, f"({checked} checks, {len(failures)} mismatches, {elapsed:.1f}s)")
    assert ok, failures[:5]


# -- 3. solver oracle --------------------------------------------------------------------------

def test_solver_matches_enumeration():
    rng = np.random.default_rng(7)
    started = time.perf_counter()
    results = [compare_with_enumeration(rng, max_binaries=14) for _ in range(200)]
    elapsed = time.perf_counter() - started
    worst = max(r.difference for r in results)
    feasible = sum(np.isfinite(r.enumeration) for r in results)
    agree_status = all(np.isfinite(r.bnb) == np.isfinite(r.enumeration) for r in results)
    ok = worst <= 1e-6 and agree_status and elapsed <= 300
    record(3, "branch-and-bound matches enumeration", ok,
           f"(200 programs, {feasible} feasible, worst diff {worst:.2e}, {elapsed:.1f}s)")
    assert ok


# -- 4-6. desk scenario --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk():
    cfg = default_scenario("desk", seed=0)
    game = cfg.game()
    started = time.perf_counter()
    state = run_algorithm(game, epsilon=cfg.epsilon, max_sweeps=cfg.max_sweeps,
                          opts=cfg.solve_options(), selection=cfg.selection, seed=cfg.seed)
    cert = certify_mine(game, state.strategies, cfg.epsilon, cfg.solve_options())
    return cfg, game, state, cert, time.perf_counter() - started


def test_desk_convergence(desk):
    cfg, game, state, cert, elapsed = desk
    eps = cfg.epsilon
    trace = [state.initial_potential] + [r.potential_after for r in state.records]
    non_increasing = all(b <= a for a, b in zip(trace, trace[1:]))
    steps = [a - b for a, b, r in zip(trace, trace[1:], state.records) if r.accepted]
    big_steps = all(s >= eps - 1e-6 for s in steps)
    ok = (cfg.N == 6 and cfg.T == 12 and eps == 1e-4 and state.converged
          and state.sweeps <= 10 * cfg.N and non_increasing and big_steps and cert.is_mine and elapsed <= 600)
    record(4, "desk convergence and certificate", ok,
           f"(sweeps {state.sweeps}, accepted {len(steps)}, smallest step {min(steps, default=np.nan):.2e}, "
           f"worst gain {cert.worst_improvement:.2e}, {elapsed:.1f}s)")
    assert ok


def test_valley_filling(desk):
    cfg, game, state, _, _ = desk
    d = np.asarray(game.grid.d)
    t_star = int(np.argmax(d))
    fleet = state.strategies.stack("u").sum(axis=0)[t_star]
    headroom = game.grid.d_bar - d[t_star]
    violations = joint_violations(game, state.strategies, tol=1e-6)
    ok = (d[t_star] == pytest.approx(1.1 * game.grid.d_bar) and headroom < 0
          and fleet <= headroom + 1e-6 and not violations)
    record(5, "valley filling at the peak", ok,
           f"(slot {t_star + 1}: fleet {fleet:.3f} kWh <= d_bar - d = {headroom:.3f} kWh)")
    assert ok


def test_local_invariants(desk):
    cfg, game, state, _, _ = desk
    z = state.strategies
    problems = []
    for i, (pev, s) in enumerate(zip(game.pevs, z.players)):
        x_ref = np.asarray(pev.x_ref)
        if np.any(s.x[:-1] < x_ref - 1e-9) or np.any(s.x > 1 + 1e-9) or s.x[-1] < x_ref[-1] - 1e-9:
            problems.append(f"pev {i}: SoC outside [x_ref, 1]")
        word = tuple(int(v) for v in s.delta)
        if not runs_ok(word, pev.h_min, pev.delta_prev):
            problems.append(f"pev {i}: short plug-in run {word}")
        for t in range(game.T):
            if s.delta[t] == 0 and s.u[t] != 0.0:
                problems.append(f"pev {i} slot {t + 1}: exchange while unplugged")
            if s.delta[t] == 1 and abs(s.u[t]) < EPS - 1e-9:
                problems.append(f"pev {i} slot {t + 1}: plugged with |u| inside the band")
        resid = s.x[1:] - s.x[:-1] - pev.b * s.f + (1 - s.delta) * np.asarray(pev.mu)
        if np.max(np.abs(resid)) > 1e-12:
            problems.append(f"pev {i}: SoC residual {np.max(np.abs(resid)):.2e}")
        p, _ = player_program(game, z, i)
        if not check_feasible(p, s.values, 1e-6):
            problems.append(f"pev {i}: program rows violated")
    plugged = z.stack("delta").sum(axis=0)
    if np.any(plugged > game.grid.v_bar):
        problems.append("too many vehicles plugged")
    ok = not problems
    record(6, "local-constraint invariants", ok, f"({len(problems)} problems)" + (f" {problems[:3]}" if problems else ""))
    assert ok, problems


# -- 7. rest cost --------------------------------------------------------------------------------

def test_rest_cost_zero():
    costs, potentials = [], []
    for seed in range(3):
        game = default_scenario("desk", seed=seed).game()
        z = CollectiveStrategy([rest_strategy(p, game.grid) for p in game.pevs])
        costs += [player_cost(game, z, i) for i in range(game.N)]
        potentials.append(potential(game, z))
    ok = all(c == 0.0 for c in costs) and all(P == 0.0 for P in potentials)
    record(7, "rest strategy costs nothing", ok, f"(max |J_i| {max(map(abs, costs)):.1e}, P {potentials})")
    assert ok
