"""Independent reference computations used by the tests.

Nothing here goes through the constraint builder: strategies are completed
from an exchange profile by direct formulas and plug-in rules are checked on
the raw 0/1 word.
"""

from __future__ import annotations

import numpy as np

from pevgame.game import CollectiveStrategy, Game
from pevgame.model import MixedIntegerQP
from pevgame.pev import GridParams, PevParams, PlayerStrategy, layout_variables


def runs_ok(word, h_min: int, delta_prev: int = 0) -> bool:
    """Every plug-in at slot t is followed by min(h_min, T-1-t) plugged slots."""
    T = len(word)
    for t in range(T):
        before = delta_prev if t == 0 else word[t - 1]
        if word[t] == 1 and before == 0:
            need = min(h_min, T - 1 - t)
            if not all(word[t + h] == 1 for h in range(1, need + 1)):
                return False
    return True


def complete_strategy(pev: PevParams, grid: GridParams, u) -> PlayerStrategy:
    """Fill every auxiliary variable implied by the exchange profile ``u``."""
    T = pev.horizon
    pv = layout_variables(MixedIntegerQP(), pev, grid, T)
    u = np.asarray(u, dtype=float)
    a = np.zeros(pv.num_vars)
    delta = (u != 0).astype(float)
    x = pev.x0
    a[pv.x[0]] = x
    for t in range(T):
        before_u = pev.u_prev if t == 0 else u[t - 1]
        before_d = pev.delta_prev if t == 0 else delta[t - 1]
        dc, dd = float(u[t] >= 0), float(u[t] <= 0)
        a[pv.u[t]] = u[t]
        a[pv.delta[t]], a[pv.delta_c[t]], a[pv.delta_d[t]] = delta[t], dc, dd
        a[pv.f[t]] = u[t]
        a[pv.g[t]] = min(u[t], 0.0)
        a[pv.l[t]] = max(u[t], 0.0)
        a[pv.s[t]] = (1 - dc) * before_u
        a[pv.kappa[t]] = (1 - dd) * before_u
        alpha = delta[t] * (1 - before_d)
        a[pv.alpha[t]] = alpha
        for h in range(1, pv.h_eff(t) + 1):
            a[pv.beta[(t, h)]] = alpha * delta[t + h]
        x = x + pev.b * u[t] - (1 - delta[t]) * pev.mu[t]
        a[pv.x[t + 1]] = x
    return PlayerStrategy(pv, a)


def direct_cost(game: Game, z: CollectiveStrategy, i: int) -> float:
    """Player cost from the signal formulas, written out slot by slot."""
    g, zi = game.grid, z.players[i]
    pev = game.pevs[i]
    total = 0.0
    for t in range(game.T):
        others_l = sum(z.players[j].l[t] for j in range(z.N) if j != i)
        others_dis = sum(min(z.players[j].u[t], 0.0) for j in range(z.N) if j != i)
        price = g.c_price * (g.d[t] + others_l)
        reward = g.r_bar * (others_dis + g.d[t])
        total += price * zi.l[t] + reward * zi.g[t]
        total += pev.rho_minus * (zi.g[t] - zi.s[t]) ** 2 + pev.rho_plus * (zi.l[t] - zi.kappa[t]) ** 2
    return total


def random_exchange(rng: np.random.Generator, T: int, p_plug: float = 0.5, lo=-7.5, hi=7.5):
    """Exchange profile whose nonzero entries stay clear of the sign band."""
    u = rng.uniform(lo, hi, T)
    u = np.where(np.abs(u) < 0.1, 0.1, u)
    return np.where(rng.random(T) < p_plug, u, 0.0)


def quiet_pev(rng: np.random.Generator, T: int, h_min: int = 1, x0: float | None = None) -> PevParams:
    """A vehicle with zero reference SoC and no trips, so resting is always feasible."""
    return PevParams(
        eta=float(rng.uniform(0.8, 0.95)),
        capacity=float(rng.uniform(40, 75)),
        x0=float(rng.uniform(0.3, 0.7)) if x0 is None else x0,
        x_ref=[0.0] * T,
        mu=[0.0] * T,
        rho_plus=float(rng.uniform(0, 2e-3)),
        rho_minus=float(rng.uniform(0, 2e-3)),
        h_min=h_min,
    )


def small_grid(rng: np.random.Generator, T: int, v_bar: int = 5) -> GridParams:
    return GridParams(
        c_price=1.09e-3,
        r_bar=1.23e-3,
        d=[float(v) for v in rng.uniform(10, 40, T)],
        d_bar=45.0,
        v_bar=v_bar,
        u_min=-7.5,
        u_max=7.5,
    )
