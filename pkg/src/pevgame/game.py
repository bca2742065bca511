"""The charging game: aggregator signals, costs, exact potential and sequential best response.

Costs split as ``J_i = phi_i(z_i) + sum_{j != i} omega_ij(z_i, z_j)`` where the
pairwise term collects both aggregate-dependent prices,

    omega_ij = c <l_i, l_j> + r_bar <g_i, g_j>,

``l`` being the charged energy ``u+`` and ``g`` the discharged energy ``u-``.
Because ``omega`` is symmetric, ``P = sum_i (phi_i + sum_{j<i} omega_ij)`` is an
exact potential even with the demand-dependent v2g reward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .model import LinearExpr, MixedIntegerQP, QuadraticObjective, check_feasible, eval_objective
from .patterns import DEFAULT_EPS
from .pev import (
    AggregateSignals,
    GridParams,
    PevParams,
    PlayerStrategy,
    PlayerVariables,
    build_player_program,
    pack_strategy,
    rest_strategy,
    layout_variables,
)
from .solver import SolveOptions, SolveResult, SolveStatus, solve

log = logging.getLogger(__name__)

PHASE0_ENERGY_WEIGHT = 1e-2  # per kWh traded, relative to one plug slot

DEFAULT_EPSILON = 1e-4  # EUR


class GameError(RuntimeError):
    pass


class BestResponseInfeasible(GameError):
    """``player`` is the 0-based index; messages count players from 1."""

    def __init__(self, player: int, detail: str):
        super().__init__(f"player {player + 1}: best-response program infeasible ({detail})")
        self.player = player
        self.detail = detail


@dataclass(frozen=True)
class Game:
    grid: GridParams
    pevs: tuple[PevParams, ...]
    pattern_eps: float = DEFAULT_EPS
    terminal_ref: bool = True

    def __post_init__(self):
        object.__setattr__(self, "pevs", tuple(self.pevs))
        if not self.pevs:
            raise GameError("a game needs at least one player")
        for i, pev in enumerate(self.pevs):
            if pev.horizon != self.grid.horizon:
                raise GameError(f"player {i + 1} horizon {pev.horizon} != grid horizon {self.grid.horizon}")

    @property
    def N(self) -> int:
        return len(self.pevs)

    @property
    def T(self) -> int:
        return self.grid.horizon


@dataclass
class CollectiveStrategy:
    players: list[PlayerStrategy]

    @property
    def N(self) -> int:
        return len(self.players)

    @property
    def T(self) -> int:
        return self.players[0].vars.T

    def replace(self, i: int, strategy: PlayerStrategy) -> CollectiveStrategy:
        players = list(self.players)
        players[i] = strategy
        return CollectiveStrategy(players)

    def stack(self, name: str) -> NDArray[np.float64]:
        """``N x T`` array of one per-slot quantity (``"u"``, ``"delta"``, ...)."""
        return np.vstack([getattr(s, name) for s in self.players])


def _others(z: CollectiveStrategy, i: int, name: str) -> NDArray[np.float64]:
    rows = [getattr(s, name) for j, s in enumerate(z.players) if j != i]
    return np.sum(rows, axis=0) if rows else np.zeros(z.T)


def aggregate_demand(z: CollectiveStrategy, i: int) -> NDArray[np.float64]:
    """Energy charged by everybody but player ``i``, per slot."""
    return _others(z, i, "l")


def price_signal(z: CollectiveStrategy, grid: GridParams, i: int) -> NDArray[np.float64]:
    return grid.c_price * (np.asarray(grid.d) + aggregate_demand(z, i))


def plug_signal(z: CollectiveStrategy, grid: GridParams, i: int) -> NDArray[np.int64]:
    """Charging points left for player ``i`` (its own plug is not counted)."""
    used = np.rint(_others(z, i, "delta")).astype(np.int64)
    return np.maximum(grid.v_bar - used, 0)


def reward_signal(z: CollectiveStrategy, grid: GridParams, i: int) -> NDArray[np.float64]:
    rows = [np.minimum(s.u, 0.0) for j, s in enumerate(z.players) if j != i]
    discharged = np.sum(rows, axis=0) if rows else np.zeros(z.T)
    return grid.r_bar * (discharged + np.asarray(grid.d))


def exchange_bounds(z: CollectiveStrategy, grid: GridParams, i: int) -> list[tuple[float, float]]:
    """Interval for ``u_i(t)`` that keeps ``d + sum_j u_j`` inside ``[0, d_bar]``."""
    rest = np.asarray(grid.d) + _others(z, i, "u")
    return [(float(-r), float(grid.d_bar - r)) for r in rest]


def signals_for(game: Game, z: CollectiveStrategy, i: int) -> AggregateSignals:
    return AggregateSignals(
        price=tuple(price_signal(z, game.grid, i)),
        plugs_free=tuple(int(v) for v in plug_signal(z, game.grid, i)),
        reward=tuple(reward_signal(z, game.grid, i)),
        exchange_bounds=tuple(exchange_bounds(z, game.grid, i)),
    )


def player_program(game: Game, z: CollectiveStrategy, i: int,
                   sig: AggregateSignals | None = None) -> tuple[MixedIntegerQP, PlayerVariables]:
    sig = sig or signals_for(game, z, i)
    return build_player_program(game.pevs[i], game.grid, sig, game.T,
                                eps=game.pattern_eps, terminal_ref=game.terminal_ref)


def player_cost(game: Game, z: CollectiveStrategy, i: int) -> float:
    """``J_i`` of player ``i``'s current strategy under the signals generated by the others."""
    p, _ = player_program(game, z, i)
    return eval_objective(p.objective, z.players[i].values)


def local_cost(game: Game, i: int, zi: PlayerStrategy) -> float:
    """Self-dependent part ``phi_i``: base-load price, base reward and degradation."""
    pev, d = game.pevs[i], np.asarray(game.grid.d)
    base = game.grid.c_price * d @ zi.l + game.grid.r_bar * d @ zi.g
    wear = pev.rho_minus * np.sum((zi.g - zi.s) ** 2) + pev.rho_plus * np.sum((zi.l - zi.kappa) ** 2)
    return float(base + wear)


def interaction(game: Game, zi: PlayerStrategy, zj: PlayerStrategy) -> float:
    return float(game.grid.c_price * zi.l @ zj.l + game.grid.r_bar * zi.g @ zj.g)


def potential(game: Game, z: CollectiveStrategy) -> float:
    total = 0.0
    for i, zi in enumerate(z.players):
        total += local_cost(game, i, zi)
        for j in range(i):
            total += interaction(game, zi, z.players[j])
    return total


def joint_violations(game: Game, z: CollectiveStrategy, tol: float = 1e-6) -> list[str]:
    """Every local or coupling requirement that ``z`` breaks by more than ``tol``."""
    out = []
    for i in range(z.N):
        p, _ = player_program(game, z, i)
        rep = check_feasible(p, z.players[i].values, tol)
        out += [f"player {i + 1}: {v.kind} {v.label} by {v.amount:.3g}" for v in rep.violations]
    net = np.asarray(game.grid.d) + z.stack("u").sum(axis=0)
    plugged = z.stack("delta").sum(axis=0)
    for t in range(z.T):
        if net[t] < -tol or net[t] > game.grid.d_bar + tol:
            out.append(f"slot {t + 1}: net load {net[t]:.6g} outside [0, {game.grid.d_bar}]")
        if plugged[t] > game.grid.v_bar + tol:
            out.append(f"slot {t + 1}: {plugged[t]:.0f} vehicles plugged, limit {game.grid.v_bar}")
    return out


def game_options(epsilon: float, opts: SolveOptions | None = None) -> SolveOptions:
    """Solver options whose absolute gap is at most ``epsilon / 100``."""
    opts = opts or SolveOptions(abs_gap=epsilon / 100.0)
    if opts.abs_gap > epsilon / 100.0:
        raise GameError(f"solver abs_gap {opts.abs_gap} must not exceed epsilon/100 = {epsilon / 100.0}")
    return opts


def _slot_diagnostics(sig: AggregateSignals) -> str:
    notes = []
    for t, ((lo, hi), free) in enumerate(zip(sig.exchange_bounds, sig.plugs_free)):
        if lo > 0 or hi < 0:
            notes.append(f"slot {t + 1} needs exchange in [{lo:.3g}, {hi:.3g}]")
        if free <= 0:
            notes.append(f"slot {t + 1} has no free plug")
    return "; ".join(notes) or "no forced slots; check reference SoC against drain and charging time"


@dataclass
class BestResponse:
    strategy: PlayerStrategy
    cost: float
    result: SolveResult


def best_response(game: Game, z: CollectiveStrategy, i: int, opts: SolveOptions | None = None,
                  warm_start: bool = True) -> BestResponse:
    """Optimal strategy of player ``i`` with everybody else frozen."""
    opts = opts or SolveOptions()
    sig = signals_for(game, z, i)
    p, pv = player_program(game, z, i, sig)
    start = z.players[i].values if warm_start else None
    res = solve(p, opts, incumbent=start)
    if res.status is SolveStatus.INFEASIBLE:
        raise BestResponseInfeasible(i, _slot_diagnostics(sig))
    if not res.has_solution:
        raise GameError(f"player {i + 1}: solver stopped ({res.status.value}) without a feasible point")
    if res.status is not SolveStatus.OPTIMAL:
        log.warning("player %d: best response not proven optimal (%s)", i, res.status.value)
    strategy = pack_strategy(p, pv, res.assignment, pev=game.pevs[i])
    return BestResponse(strategy, eval_objective(p.objective, strategy.values), res)


def initialize(game: Game, opts: SolveOptions | None = None) -> CollectiveStrategy:
    """Phase-0: players in turn pick a feasible plan given those already placed.

    Players not yet placed are treated as absent (at rest).  The pass is a
    feasibility search, but with no objective at all an early player may occupy
    plugs and grid headroom it does not need and lock later players out; each
    player therefore takes the plan using the fewest plug slots, then the least
    traded energy, with plug slots priced by how many others already use them.

    The first pass goes in index order.  When a player finds no feasible plan,
    the pass restarts with that player moved to the front; after ``N`` failed
    passes the scenario is rejected with the last diagnostics.
    """
    opts = opts or SolveOptions()
    order = list(range(game.N))
    failure = None
    for _ in range(game.N):
        z, failure = _phase_zero_pass(game, order, opts)
        if failure is None:
            return z
        log.info("phase-0: player %d has no feasible plan, moving it to the front", failure.player)
        order.remove(failure.player)
        order.insert(0, failure.player)
    raise failure


def _phase_zero_pass(game: Game, order: list[int], opts: SolveOptions):
    z = CollectiveStrategy([rest_strategy(pev, game.grid) for pev in game.pevs])
    for i in order:
        sig = signals_for(game, z, i)
        p, pv = player_program(game, z, i, sig)
        p.set_objective(_frugal_objective(pv, game.grid.v_bar - np.asarray(sig.plugs_free)))
        res = solve(p, opts)
        if not res.has_solution:
            return z, BestResponseInfeasible(i, "phase-0: " + _slot_diagnostics(sig))
        z = z.replace(i, pack_strategy(p, pv, res.assignment, pev=game.pevs[i]))
    return z, None


def _frugal_objective(pv, plugs_used) -> QuadraticObjective:
    """Plug slots, dearer where predecessors already sit, plus a little traded energy."""
    obj = QuadraticObjective()
    for k, used in zip(pv.delta, plugs_used):
        obj.add_linear((1.0 + float(used)) * LinearExpr.var(k))
    for k in pv.l + pv.g:
        obj.add_linear(PHASE0_ENERGY_WEIGHT * LinearExpr.var(k))
    return obj


@dataclass(frozen=True)
class IterationRecord:
    k: int
    player: int
    old_cost: float
    new_cost: float
    accepted: bool
    potential_after: float
    nodes: int = 0


@dataclass
class GameState:
    strategies: CollectiveStrategy
    potential: float
    iteration: int = 0
    last_accepted: int = 0  # iterations since the last accepted update
    sweeps: int = 0
    converged: bool = False
    initial_potential: float = np.nan
    records: list[IterationRecord] = field(default_factory=list)


def selection_order(N: int, policy: str, rng: np.random.Generator) -> list[int]:
    if policy == "round_robin":
        return list(range(N))
    if policy == "random":
        return [int(v) for v in rng.permutation(N)]
    raise ValueError(f"unknown selection policy {policy!r}")


def run_algorithm(game: Game, z0: CollectiveStrategy | None = None, epsilon: float = DEFAULT_EPSILON,
                  max_sweeps: int | None = None, opts: SolveOptions | None = None,
                  selection: str = "round_robin", seed: int = 0) -> GameState:
    """Sequential best response until a full sweep yields no epsilon-improvement."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    opts = game_options(epsilon, opts)
    max_sweeps = 10 * game.N if max_sweeps is None else max_sweeps
    rng = np.random.default_rng(seed)
    z = initialize(game, opts) if z0 is None else z0
    P = potential(game, z)
    state = GameState(z, P, initial_potential=P)
    k = 0
    while state.sweeps < max_sweeps:
        state.sweeps += 1
        accepted_any = False
        for i in selection_order(game.N, selection, rng):
            k += 1
            old = player_cost(game, z, i)
            br = best_response(game, z, i, opts)
            accepted = old - br.cost >= epsilon
            if accepted:
                z = z.replace(i, br.strategy)
                P_new = potential(game, z)
                if abs((P - P_new) - (old - br.cost)) > 1e-7 * max(1.0, abs(P)):
                    log.warning("potential change %.3g differs from cost change %.3g", P - P_new, old - br.cost)
                P = P_new
                state.last_accepted = 0
                accepted_any = True
            else:
                state.last_accepted += 1
            rec = IterationRecord(k, i, old, br.cost, accepted, P, br.result.nodes_explored)
            state.records.append(rec)
            log.info("k=%d player=%d J_old=%.6f J_new=%.6f %s P=%.6f", k, i, old, br.cost,
                     "accept" if accepted else "keep", P)
        if not accepted_any:
            state.converged = True
            break
    state.strategies, state.potential, state.iteration = z, P, k
    return state


@dataclass(frozen=True)
class MineCertificate:
    is_mine: bool
    worst_improvement: float
    improvements: tuple[float, ...]
    violations: tuple[str, ...] = ()  # a point breaking a constraint is never an equilibrium


def certify_mine(game: Game, z: CollectiveStrategy, epsilon: float = DEFAULT_EPSILON,
                 opts: SolveOptions | None = None) -> MineCertificate:
    """True iff ``z`` is feasible and no player can lower its cost by ``epsilon`` or more."""
    opts = game_options(epsilon, opts)
    violations = tuple(joint_violations(game, z, tol=1e-6))
    gains = []
    for i in range(z.N):
        br = best_response(game, z, i, opts)
        gains.append(player_cost(game, z, i) - br.cost)
    worst = max(gains)
    return MineCertificate(worst < epsilon and not violations, worst, tuple(gains), violations)


def collective_from_values(game: Game, values: Sequence[Sequence[float]]) -> CollectiveStrategy:
    """Rebuild a collective strategy from raw per-player decision vectors."""
    players = []
    for pev, vals in zip(game.pevs, values):
        pv = layout_variables(MixedIntegerQP(), pev, game.grid, game.T)
        vals = np.asarray(vals, dtype=float)
        if len(vals) != pv.num_vars:
            raise GameError(f"strategy vector has {len(vals)} entries, expected {pv.num_vars}")
        players.append(PlayerStrategy(pv, vals))
    return CollectiveStrategy(players)
