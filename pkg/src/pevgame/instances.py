"""Random small player programs for cross-checking the solver against enumeration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MixedIntegerQP
from .pev import AggregateSignals, GridParams, PevParams, build_player_program
from .solver import SolveOptions, brute_force, solve


def binary_count(T: int, h_min: int) -> int:
    """Binaries of one player program: four per slot plus the persistence auxiliaries."""
    return 4 * T + sum(min(h_min, T - 1 - t) for t in range(T))


def random_pev(rng: np.random.Generator, T: int, h_min: int) -> PevParams:
    x0 = float(rng.uniform(0.2, 0.9))
    driving = rng.random(T) < 0.3
    delta_prev = int(rng.random() < 0.3)
    return PevParams(
        eta=float(rng.uniform(0.8, 0.95)),
        capacity=float(rng.uniform(40, 75)),
        x0=x0,
        x_ref=[float(v) for v in rng.uniform(0.0, 0.4, T)],
        mu=[float(v) for v in np.where(driving, rng.uniform(0.01, 0.1, T), 0.0)],
        rho_plus=float(rng.uniform(0, 2e-3)),
        rho_minus=float(rng.uniform(0, 2e-3)),
        h_min=h_min,
        delta_prev=delta_prev,
        u_prev=float(rng.uniform(-7.5, 7.5)) if delta_prev else 0.0,
    )


def random_grid(rng: np.random.Generator, T: int) -> GridParams:
    return GridParams(
        c_price=float(rng.uniform(0.5e-3, 2e-3)),
        r_bar=float(rng.uniform(0.5e-3, 2e-3)),
        d=[float(v) for v in rng.uniform(5, 40, T)],
        d_bar=45.0,
        v_bar=5,
        u_min=-7.5,
        u_max=7.5,
    )


def random_signals(rng: np.random.Generator, grid: GridParams) -> AggregateSignals:
    """Signals as if some other vehicles were charging or discharging."""
    T = grid.horizon
    others_l = rng.uniform(0, 20, T)
    others_u = rng.uniform(-5, 10, T)
    rest = np.asarray(grid.d) + others_u
    return AggregateSignals(
        price=tuple(grid.c_price * (np.asarray(grid.d) + others_l)),
        plugs_free=tuple(int(v) for v in rng.choice([0, 1, 1, 2, 2], T)),
        reward=tuple(grid.r_bar * (np.asarray(grid.d) + np.minimum(others_u, 0))),
        exchange_bounds=tuple((float(-r), float(grid.d_bar - r)) for r in rest),
    )


def random_player_program(rng: np.random.Generator, max_binaries: int = 14) -> MixedIntegerQP:
    shapes = [(T, h) for T in (1, 2, 3, 4) for h in (1, 2, 3)
              if h <= T and binary_count(T, h) <= max_binaries]
    if not shapes:
        raise ValueError(f"no program shape has at most {max_binaries} binaries")
    T, h = shapes[int(rng.integers(len(shapes)))]
    grid = random_grid(rng, T)
    p, _ = build_player_program(random_pev(rng, T, h), grid, random_signals(rng, grid))
    return p


@dataclass(frozen=True)
class Comparison:
    binaries: int
    bnb: float  # inf when infeasible
    enumeration: float
    nodes: int

    @property
    def difference(self) -> float:
        if np.isinf(self.bnb) and np.isinf(self.enumeration):
            return 0.0
        return abs(self.bnb - self.enumeration)


def compare_with_enumeration(rng: np.random.Generator, max_binaries: int = 14,
                             opts: SolveOptions | None = None) -> Comparison:
    p = random_player_program(rng, max_binaries)
    a, b = solve(p, opts), brute_force(p, opts)
    return Comparison(len(p.binaries), a.objective, b.objective, a.nodes_explored)
