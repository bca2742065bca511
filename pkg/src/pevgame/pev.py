"""One vehicle's mixed-integer quadratic program.

The builder lays out the variables of a single PEV over the horizon, adds the
SoC recursion, the logical rules compiled through :mod:`pevgame.patterns`, the
coupling boxes received from the aggregator and the quadratic cost.

Slots are 1-based in labels (``u[1]`` ... ``u[T]``) and 0-based in arrays.
The SoC vector has ``T + 1`` entries: ``x[1]`` is the initial state (fixed by
its bounds) and ``x[t + 1]`` is the state after slot ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .model import (
    Assignment,
    LinearExpr,
    MixedIntegerQP,
    ModelError,
    QuadraticObjective,
    VarId,
    check_feasible,
    eq,
    ge,
    le,
)
from .patterns import DEFAULT_EPS, expr_bounds, pattern_and, pattern_geq, pattern_implies, pattern_leq


@dataclass(frozen=True)
class PevParams:
    eta: float
    capacity: float  # kWh
    x0: float
    x_ref: tuple[float, ...]
    mu: tuple[float, ...]  # SoC fraction drained per driving slot
    rho_plus: float  # EUR/kWh^2
    rho_minus: float  # EUR/kWh^2
    h_min: int
    delta_prev: int = 0
    u_prev: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x_ref", tuple(float(v) for v in self.x_ref))
        object.__setattr__(self, "mu", tuple(float(v) for v in self.mu))
        T = len(self.x_ref)
        if len(self.mu) != T:
            raise ModelError(f"mu has length {len(self.mu)}, x_ref has length {T}")
        if not (0 < self.eta <= 1):
            raise ModelError(f"efficiency must lie in (0, 1], got {self.eta}")
        if not self.capacity > 0:
            raise ModelError(f"capacity must be positive, got {self.capacity}")
        if not 0 <= self.x0 <= 1:
            raise ModelError(f"initial SoC must lie in [0, 1], got {self.x0}")
        if any(not 0 <= v <= 1 for v in self.x_ref):
            raise ModelError("reference SoC values must lie in [0, 1]")
        if any(v < 0 for v in self.mu):
            raise ModelError("drain values must be nonnegative")
        if not 1 <= self.h_min <= max(T, 1):
            raise ModelError(f"h_min must lie in 1..{T}, got {self.h_min}")
        if self.delta_prev not in (0, 1):
            raise ModelError("delta_prev must be 0 or 1")
        if self.rho_plus < 0 or self.rho_minus < 0:
            raise ModelError("degradation weights must be nonnegative")

    @property
    def b(self) -> float:
        return self.eta / self.capacity

    @property
    def horizon(self) -> int:
        return len(self.x_ref)

    def driving(self, t: int) -> bool:
        """Whether 0-based slot ``t`` is a driving slot."""
        return self.mu[t] > 0


@dataclass(frozen=True)
class GridParams:
    c_price: float  # EUR/kWh
    r_bar: float  # EUR/kWh
    d: tuple[float, ...]  # kWh non-PEV load per slot
    d_bar: float  # kWh per slot
    v_bar: int
    u_min: float
    u_max: float

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))
        if any(v < 0 for v in self.d):
            raise ModelError("non-PEV load must be nonnegative")
        if not self.d_bar > 0:
            raise ModelError("grid capacity must be positive")
        if self.v_bar < 1:
            raise ModelError("at least one charging point is required")
        if not self.u_min < 0 < self.u_max:
            raise ModelError("need u_min < 0 < u_max")
        if self.c_price <= 0:
            raise ModelError("energy cost must be positive")

    @property
    def horizon(self) -> int:
        return len(self.d)


@dataclass(frozen=True)
class AggregateSignals:
    """What the aggregator broadcasts to one player, already excluding that player."""

    price: tuple[float, ...]  # EUR/kWh
    plugs_free: tuple[int, ...]
    reward: tuple[float, ...]  # EUR/kWh
    exchange_bounds: tuple[tuple[float, float], ...]  # admissible u_i(t) from the grid-capacity rows

    @property
    def horizon(self) -> int:
        return len(self.price)

    @classmethod
    def isolated(cls, grid: GridParams) -> AggregateSignals:
        """Signals seen by a player when every other player is at rest."""
        return cls(
            price=tuple(grid.c_price * d for d in grid.d),
            plugs_free=(grid.v_bar,) * grid.horizon,
            reward=tuple(grid.r_bar * d for d in grid.d),
            exchange_bounds=tuple((-d, grid.d_bar - d) for d in grid.d),
        )


SLOT_FIELDS = ("u", "delta", "delta_c", "delta_d", "f", "g", "s", "l", "kappa", "alpha")


@dataclass
class PlayerVariables:
    """Variable ids of one player's program, grouped per symbol."""

    T: int
    h_min: int
    u: list[VarId] = field(default_factory=list)
    x: list[VarId] = field(default_factory=list)  # T + 1 entries
    delta: list[VarId] = field(default_factory=list)
    delta_c: list[VarId] = field(default_factory=list)
    delta_d: list[VarId] = field(default_factory=list)
    f: list[VarId] = field(default_factory=list)
    g: list[VarId] = field(default_factory=list)
    s: list[VarId] = field(default_factory=list)
    l: list[VarId] = field(default_factory=list)
    kappa: list[VarId] = field(default_factory=list)
    alpha: list[VarId] = field(default_factory=list)
    beta: dict[tuple[int, int], VarId] = field(default_factory=dict)  # (slot, h), slot 0-based
    index: dict[str, VarId] = field(default_factory=dict)

    @property
    def num_vars(self) -> int:
        return len(self.index)

    def h_eff(self, t: int) -> int:
        """Persistence requirement after a plug-in at 0-based slot ``t``, clamped to the horizon."""
        return min(self.h_min, self.T - 1 - t)


def _declare(p: MixedIntegerQP, pv: PlayerVariables, name: str, t: int, lower=None, upper=None) -> VarId:
    label = f"{name}[{t}]"
    vid = p.add_binary(label) if lower is None else p.add_continuous(lower, upper, label)
    pv.index[label] = vid
    return vid


def layout_variables(p: MixedIntegerQP, pev: PevParams, grid: GridParams, T: int) -> PlayerVariables:
    """Declare the player's variables in canonical order ``u, x, delta, ..., alpha, beta``."""
    pv = PlayerVariables(T=T, h_min=pev.h_min)
    lo, hi = grid.u_min, grid.u_max
    pv.u = [_declare(p, pv, "u", t + 1, lo, hi) for t in range(T)]
    pv.x = [_declare(p, pv, "x", 1, pev.x0, pev.x0)]
    pv.x += [_declare(p, pv, "x", t + 1, 0.0, 1.0) for t in range(1, T + 1)]
    for name in ("delta", "delta_c", "delta_d"):
        setattr(pv, name, [_declare(p, pv, name, t + 1) for t in range(T)])
    for name in ("f", "g", "s", "l", "kappa"):
        setattr(pv, name, [_declare(p, pv, name, t + 1, lo, hi) for t in range(T)])
    pv.alpha = [_declare(p, pv, "alpha", t + 1) for t in range(T)]
    for t in range(T):
        for h in range(1, pv.h_eff(t) + 1):
            label = f"beta[{t + 1},{h}]"
            pv.beta[(t, h)] = vid = p.add_binary(label)
            pv.index[label] = vid
    return pv


def build_player_program(pev: PevParams, grid: GridParams, sig: AggregateSignals, T: int | None = None,
                         eps: float = DEFAULT_EPS, terminal_ref: bool = True, implied_rows: bool = True
                         ) -> tuple[MixedIntegerQP, PlayerVariables]:
    """Assemble the full MIQP of one vehicle given the aggregator's signals.

    With ``terminal_ref`` the final state ``x[T+1]`` must also stay above
    ``x_ref[T]``, which stops end-of-horizon battery dumping.

    ``implied_rows`` adds ``f = u``, ``l + g = u``, ``g <= 0`` and ``l >= 0``.
    Every integer-feasible point already satisfies them, but the big-M
    relaxation does not: with fractional sign binaries it can book discharge
    revenue on ``g`` while ``u`` charges.  They cut the branch-and-bound tree
    by one to two orders of magnitude without changing the optimum.
    """
    T = pev.horizon if T is None else T
    if T < 1:
        raise ModelError("horizon must be at least one slot")
    for name, n in (("pev", pev.horizon), ("grid", grid.horizon), ("signals", sig.horizon)):
        if n != T:
            raise ModelError(f"{name} horizon {n} does not match T={T}")
    if len(sig.plugs_free) != T or len(sig.reward) != T or len(sig.exchange_bounds) != T:
        raise ModelError("signal sequences must all have length T")

    p = MixedIntegerQP(name="pev")
    pv = layout_variables(p, pev, grid, T)
    V = p.vars
    var = LinearExpr.var
    u_box = expr_bounds(var(pv.u[0]), V)
    prev_box_const = expr_bounds(LinearExpr.const(pev.u_prev), V)

    for t in range(T):
        tag = f"t{t + 1}"
        u, x, x_next = var(pv.u[t]), var(pv.x[t]), var(pv.x[t + 1])
        delta, dc, dd = var(pv.delta[t]), var(pv.delta_c[t]), var(pv.delta_d[t])
        f = var(pv.f[t])
        mu = pev.mu[t]

        # SoC recursion: x(t+1) = x(t) + b f(t) - (1 - delta(t)) mu(t)
        p.add_constraint(eq(x_next - x - pev.b * f - mu * delta, -mu, label=f"{tag}:soc"))
        p.add_constraint(ge(x, pev.x_ref[t], label=f"{tag}:xref"))

        # exchange only while plugged; driving slots cannot plug
        p.add_constraint(ge(u - grid.u_min * delta, 0.0, label=f"{tag}:u.lo"))
        p.add_constraint(le(u - grid.u_max * delta, 0.0, label=f"{tag}:u.hi"))
        if pev.driving(t):
            p.add_constraint(le(delta, 0.0, label=f"{tag}:driving"))

        p.add_constraints(pattern_geq(dc, u, 0.0, u_box, eps, label=f"{tag}:dc"))
        p.add_constraints(pattern_leq(dd, u, 0.0, u_box, eps, label=f"{tag}:dd"))

        u_before = LinearExpr.const(pev.u_prev) if t == 0 else var(pv.u[t - 1])
        before_box = prev_box_const if t == 0 else u_box
        p.add_constraints(pattern_implies(pv.f[t], u, delta, u_box, label=f"{tag}:f"))
        p.add_constraints(pattern_implies(pv.g[t], u, 1.0 - dc, u_box, label=f"{tag}:g"))
        p.add_constraints(pattern_implies(pv.s[t], u_before, 1.0 - dc, before_box, label=f"{tag}:s"))
        p.add_constraints(pattern_implies(pv.l[t], u, 1.0 - dd, u_box, label=f"{tag}:l"))
        p.add_constraints(pattern_implies(pv.kappa[t], u_before, 1.0 - dd, before_box, label=f"{tag}:kappa"))

        # unplugged exactly when neither charging nor discharging
        p.add_constraints(pattern_and(1.0 - delta, dc, dd, label=f"{tag}:rest"))

        # plug-in detection and minimum connection time
        delta_before = LinearExpr.const(float(pev.delta_prev)) if t == 0 else var(pv.delta[t - 1])
        alpha = var(pv.alpha[t])
        p.add_constraints(pattern_and(alpha, 1.0 - delta_before, delta, label=f"{tag}:alpha"))
        h_eff = pv.h_eff(t)
        if h_eff > 0:
            total = LinearExpr()
            for h in range(1, h_eff + 1):
                beta = pv.beta[(t, h)]
                p.add_constraints(pattern_and(beta, alpha, pv.delta[t + h], label=f"{tag}:beta{h}"))
                total = total + var(beta)
            p.add_constraint(eq(total - h_eff * alpha, 0.0, label=f"{tag}:persist"))

        # coupling boxes received from the aggregator
        lo, hi = sig.exchange_bounds[t]
        p.add_constraint(ge(u, lo, label=f"{tag}:grid.lo"))
        p.add_constraint(le(u, hi, label=f"{tag}:grid.hi"))
        p.add_constraint(le(delta, float(min(1, sig.plugs_free[t])), label=f"{tag}:plugs"))

        if implied_rows:
            g, l = var(pv.g[t]), var(pv.l[t])
            p.add_constraint(eq(f - u, 0.0, label=f"{tag}:implied.f"))
            p.add_constraint(eq(l + g - u, 0.0, label=f"{tag}:implied.split"))
            p.add_constraint(le(g, 0.0, label=f"{tag}:implied.g"))
            p.add_constraint(ge(l, 0.0, label=f"{tag}:implied.l"))

    if terminal_ref:
        p.add_constraint(ge(var(pv.x[T]), pev.x_ref[T - 1], label=f"t{T}:xref.terminal"))

    p.set_objective(build_cost(pev, sig, pv))
    return p, pv


def build_cost(pev: PevParams, sig: AggregateSignals, vars: PlayerVariables) -> QuadraticObjective:
    """Purchase cost, v2g reward and degradation terms of one vehicle."""
    obj = QuadraticObjective()
    var = LinearExpr.var
    lin = LinearExpr()
    for t in range(vars.T):
        lin = lin + sig.price[t] * var(vars.l[t]) + sig.reward[t] * var(vars.g[t])
        obj.add_square(var(vars.g[t]) - var(vars.s[t]), pev.rho_minus)
        obj.add_square(var(vars.l[t]) - var(vars.kappa[t]), pev.rho_plus)
    obj.add_linear(lin)
    return obj


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class PlayerStrategy:
    """A player's full decision vector ``z_i`` plus named per-slot views."""

    vars: PlayerVariables
    values: NDArray[np.float64]

    def _take(self, ids) -> NDArray[np.float64]:
        return self.values[np.asarray(ids, dtype=int)]

    @property
    def u(self):
        return self._take(self.vars.u)

    @property
    def x(self):
        return self._take(self.vars.x)

    @property
    def delta(self):
        return self._take(self.vars.delta)

    @property
    def delta_c(self):
        return self._take(self.vars.delta_c)

    @property
    def delta_d(self):
        return self._take(self.vars.delta_d)

    @property
    def f(self):
        return self._take(self.vars.f)

    @property
    def g(self):
        return self._take(self.vars.g)

    @property
    def s(self):
        return self._take(self.vars.s)

    @property
    def l(self):
        return self._take(self.vars.l)

    @property
    def kappa(self):
        return self._take(self.vars.kappa)

    @property
    def alpha(self):
        return self._take(self.vars.alpha)

    def beta(self, t: int, h: int) -> float:
        return float(self.values[self.vars.beta[(t, h)]])


def _require_feasible(program: MixedIntegerQP, a: Assignment, tol: float, what: str) -> None:
    report = check_feasible(program, a, tol)
    if not report:
        worst = max(report.violations, key=lambda v: v.amount)
        raise StrategyError(
            f"{what} infeasible ({len(report.violations)} violations, worst {worst.kind} "
            f"{worst.label!r} by {worst.amount:.3g})"
        )


def pack_strategy(program: MixedIntegerQP, vars: PlayerVariables, a: Assignment,
                  tol: float = 1e-6, pev: PevParams | None = None) -> PlayerStrategy:
    """Validate a solver assignment and wrap it as a :class:`PlayerStrategy`.

    Binary entries are snapped to exact 0/1 after the integrality check.  With
    ``pev`` the continuous part is also made exact: once the binaries are
    integral, the products ``f, g, s, l, kappa`` and the SoC path are functions
    of ``u``, so they are recomputed (and ``u`` zeroed where unplugged) instead of
    keeping the solver's ~1e-12 noise.  The result is checked again.
    """
    a = np.array(a, dtype=float)
    _require_feasible(program, a, tol, "assignment")
    bins = program.binaries
    a[bins] = np.round(a[bins]) + 0.0  # no negative zeros
    if pev is not None:
        _make_exact(a, vars, pev)
        _require_feasible(program, a, tol, "cleaned assignment")
    return PlayerStrategy(vars, a)


def _make_exact(a: NDArray[np.float64], pv: PlayerVariables, pev: PevParams) -> None:
    take = lambda ids: a[np.asarray(ids, dtype=int)]
    delta, dc, dd = take(pv.delta), take(pv.delta_c), take(pv.delta_d)
    u = np.where(delta == 1.0, take(pv.u), 0.0)
    before = np.concatenate([[pev.u_prev], u[:-1]])
    a[pv.u] = u
    a[pv.f] = u * delta
    a[pv.g] = u * (1 - dc)
    a[pv.l] = u * (1 - dd)
    a[pv.s] = before * (1 - dc)
    a[pv.kappa] = before * (1 - dd)
    x = a[pv.x[0]]
    for t in range(pv.T):
        x = x + pev.b * a[pv.f[t]] - (1 - delta[t]) * pev.mu[t]
        a[pv.x[t + 1]] = x


def rest_strategy(pev: PevParams, grid: GridParams) -> PlayerStrategy:
    """Never plugged: zero exchange, SoC driven only by the drain."""
    p = MixedIntegerQP()
    pv = layout_variables(p, pev, grid, pev.horizon)
    a = np.zeros(p.num_vars)
    x = pev.x0
    a[pv.x[0]] = x
    for t in range(pev.horizon):
        x = x - pev.mu[t]
        a[pv.x[t + 1]] = x
        a[pv.delta_c[t]] = 1.0
        a[pv.delta_d[t]] = 1.0
    return PlayerStrategy(pv, a)
