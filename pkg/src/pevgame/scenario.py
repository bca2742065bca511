"""Scenario files, default fleets, batch runs and CSV output.

A scenario is a JSON document whose field names carry their units
(``capacity_kwh``, ``drain_soc`` ...).  ``run`` executes the Phase-0
initialization and the sequential best-response algorithm, then writes
plain CSV tables and a manifest from which the run can be reproduced.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .game import (
    DEFAULT_EPSILON,
    CollectiveStrategy,
    Game,
    GameState,
    collective_from_values,
    game_options,
    run_algorithm,
)
from .model import ModelError
from .pev import GridParams, PevParams
from .solver import SolveOptions

FORMAT = "pevgame-scenario/1"
SELECTIONS = ("round_robin", "random")


class ConfigError(ValueError):
    """Invalid scenario file; the message starts with the offending field path."""


@dataclass(frozen=True)
class DemandCurve:
    """Base load plus a morning and an evening Gaussian bump, in kWh per slot.

    The whole curve is rescaled so that its largest slot value equals
    ``peak_ratio * d_bar``; the slot closest to the evening peak gets exactly
    that value.
    """

    base_kwh: float = 15.0
    morning_kwh: float = 15.0
    morning_hour: float = 8.0
    morning_width_h: float = 1.5
    evening_kwh: float = 34.5
    evening_hour: float = 19.0
    evening_width_h: float = 2.0
    peak_ratio: float = 1.1

    def raw(self, hours: np.ndarray) -> np.ndarray:
        bump = lambda a, mu, s: a * np.exp(-0.5 * ((hours - mu) / s) ** 2)
        return (self.base_kwh + bump(self.morning_kwh, self.morning_hour, self.morning_width_h)
                + bump(self.evening_kwh, self.evening_hour, self.evening_width_h))

    def sample(self, T: int, slot_minutes: float, d_bar: float) -> list[float]:
        hours = (np.arange(T) + 0.5) * slot_minutes / 60.0
        d = self.raw(hours)
        peak = self.peak_ratio * d_bar
        d = d * (peak / d.max())
        d[int(np.argmin(np.abs(hours - self.evening_hour)))] = peak
        return [float(v) for v in d]


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    slot_minutes: float
    grid: GridParams
    pevs: tuple[PevParams, ...]
    epsilon: float = DEFAULT_EPSILON
    solver: SolveOptions | None = None  # None: defaults with abs_gap = epsilon / 100
    selection: str = "round_robin"
    seed: int = 0
    max_sweeps: int | None = None  # None: 10 * N
    demand_curve: DemandCurve | None = None  # how grid.d was generated, if synthetic

    def __post_init__(self):
        object.__setattr__(self, "pevs", tuple(self.pevs))
        _validate(self)

    @property
    def N(self) -> int:
        return len(self.pevs)

    @property
    def T(self) -> int:
        return self.grid.horizon

    def game(self) -> Game:
        return Game(self.grid, self.pevs)

    def solve_options(self) -> SolveOptions:
        return game_options(self.epsilon, self.solver)

    def hours(self) -> list[float]:
        """Start time of every slot in hours."""
        return [t * self.slot_minutes / 60.0 for t in range(self.T)]


def _validate(cfg: ScenarioConfig) -> None:
    if not cfg.pevs:
        raise ConfigError("pevs: at least one vehicle is required")
    for i, pev in enumerate(cfg.pevs):
        if pev.horizon != cfg.T:
            raise ConfigError(f"pevs[{i}]: horizon {pev.horizon} does not match the demand profile length {cfg.T}")
    if not cfg.slot_minutes > 0:
        raise ConfigError("slot_minutes: must be positive")
    if not cfg.epsilon > 0:
        raise ConfigError("epsilon_eur: must be positive")
    if cfg.selection not in SELECTIONS:
        raise ConfigError(f"selection: expected one of {SELECTIONS}, got {cfg.selection!r}")
    if cfg.max_sweeps is not None and cfg.max_sweeps < 1:
        raise ConfigError("max_sweeps: must be at least 1")
    if cfg.solver is not None and cfg.solver.abs_gap > cfg.epsilon / 100.0:
        raise ConfigError("solver.abs_gap: must not exceed epsilon_eur / 100")


# ---------------------------------------------------------------- JSON schema

def _pev_to_json(p: PevParams) -> dict:
    return {
        "capacity_kwh": p.capacity,
        "efficiency": p.eta,
        "soc_initial": p.x0,
        "soc_ref": list(p.x_ref),
        "drain_soc": list(p.mu),
        "degradation_charge_eur_per_kwh2": p.rho_plus,
        "degradation_discharge_eur_per_kwh2": p.rho_minus,
        "min_plugged_slots": p.h_min,
        "plugged_before": p.delta_prev,
        "exchange_before_kwh": p.u_prev,
    }


def _solver_to_json(s: SolveOptions) -> dict:
    d = s.to_dict()
    d["time_limit_s"] = d.pop("time_limit")
    return d


def to_json(cfg: ScenarioConfig) -> dict:
    g = cfg.grid
    return {
        "format": FORMAT,
        "name": cfg.name,
        "N": cfg.N,
        "T": cfg.T,
        "slot_minutes": cfg.slot_minutes,
        "seed": cfg.seed,
        "epsilon_eur": cfg.epsilon,
        "selection": cfg.selection,
        "max_sweeps": cfg.max_sweeps,
        "solver": None if cfg.solver is None else _solver_to_json(cfg.solver),
        "grid": {
            "energy_cost_eur_per_kwh2": g.c_price,
            "reward_eur_per_kwh2": g.r_bar,
            "capacity_kwh": g.d_bar,
            "max_plugged": g.v_bar,
            "exchange_min_kwh": g.u_min,
            "exchange_max_kwh": g.u_max,
        },
        "demand": {
            "profile_kwh": list(g.d),
            "curve": None if cfg.demand_curve is None else dict(vars(cfg.demand_curve)),
        },
        "pevs": [_pev_to_json(p) for p in cfg.pevs],
    }


class _Reader:
    """Field access on a JSON object that reports the full path on failure."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path or '<root>'}: expected an object")
        self.data, self.path = data, path

    def _p(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, kind, default=...):
        if key not in self.data:
            if default is ...:
                raise ConfigError(f"{self._p(key)}: missing")
            return default
        v = self.data[key]
        if v is None and default is not ... and default is None:
            return None
        try:
            if kind is int:
                if isinstance(v, bool) or not float(v).is_integer():
                    raise TypeError
                return int(v)
            if kind is float:
                if isinstance(v, bool):
                    raise TypeError
                return float(v)
            if kind is str:
                if not isinstance(v, str):
                    raise TypeError
                return v
            if kind is list:
                if not isinstance(v, list):
                    raise TypeError
                return [float(x) for x in v]
        except (TypeError, ValueError):
            raise ConfigError(f"{self._p(key)}: expected {kind.__name__}, got {v!r}") from None
        return v

    def sub(self, key: str, default=...):
        if key not in self.data or self.data[key] is None:
            if default is ...:
                raise ConfigError(f"{self._p(key)}: missing")
            return default
        return _Reader(self.data[key], self._p(key))


def from_json(data: Any) -> ScenarioConfig:
    r = _Reader(data, "")
    fmt = r.get("format", str, FORMAT)
    if fmt != FORMAT:
        raise ConfigError(f"format: unsupported {fmt!r}, expected {FORMAT!r}")

    dem = r.sub("demand")
    d = dem.get("profile_kwh", list)
    T = r.get("T", int, len(d))
    if len(d) != T:
        raise ConfigError(f"demand.profile_kwh: has {len(d)} entries, T = {T}")
    curve = None
    cr = dem.sub("curve", None)
    if cr is not None:
        try:
            curve = DemandCurve(**{k: float(v) for k, v in cr.data.items()})
        except TypeError as exc:
            raise ConfigError(f"demand.curve: {exc}") from None

    gr = r.sub("grid")
    try:
        grid = GridParams(
            c_price=gr.get("energy_cost_eur_per_kwh2", float),
            r_bar=gr.get("reward_eur_per_kwh2", float),
            d=d,
            d_bar=gr.get("capacity_kwh", float),
            v_bar=gr.get("max_plugged", int),
            u_min=gr.get("exchange_min_kwh", float),
            u_max=gr.get("exchange_max_kwh", float),
        )
    except ModelError as exc:
        raise ConfigError(f"grid: {exc}") from None

    raw_pevs = data.get("pevs")
    if not isinstance(raw_pevs, list):
        raise ConfigError("pevs: expected a list")
    N = r.get("N", int, len(raw_pevs))
    if N != len(raw_pevs):
        raise ConfigError(f"pevs: N = {N} but {len(raw_pevs)} entries given")
    pevs = []
    for i, raw in enumerate(raw_pevs):
        pr = _Reader(raw, f"pevs[{i}]")
        x_ref, mu = pr.get("soc_ref", list), pr.get("drain_soc", list)
        for key, seq in (("soc_ref", x_ref), ("drain_soc", mu)):
            if len(seq) != T:
                raise ConfigError(f"pevs[{i}].{key}: has {len(seq)} entries, T = {T}")
        try:
            pevs.append(PevParams(
                eta=pr.get("efficiency", float),
                capacity=pr.get("capacity_kwh", float),
                x0=pr.get("soc_initial", float),
                x_ref=x_ref,
                mu=mu,
                rho_plus=pr.get("degradation_charge_eur_per_kwh2", float),
                rho_minus=pr.get("degradation_discharge_eur_per_kwh2", float),
                h_min=pr.get("min_plugged_slots", int),
                delta_prev=pr.get("plugged_before", int, 0),
                u_prev=pr.get("exchange_before_kwh", float, 0.0),
            ))
        except ModelError as exc:
            raise ConfigError(f"pevs[{i}]: {exc}") from None

    solver = None
    sr = r.sub("solver", None)
    if sr is not None:
        opts = dict(sr.data)
        if "time_limit_s" in opts:
            opts["time_limit"] = opts.pop("time_limit_s")
        try:
            solver = SolveOptions.from_dict(opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"solver: {exc}") from None

    return ScenarioConfig(
        name=r.get("name", str, "scenario"),
        slot_minutes=r.get("slot_minutes", float),
        grid=grid,
        pevs=tuple(pevs),
        epsilon=r.get("epsilon_eur", float, DEFAULT_EPSILON),
        solver=solver,
        selection=r.get("selection", str, "round_robin"),
        seed=r.get("seed", int, 0),
        max_sweeps=r.get("max_sweeps", int, None),
        demand_curve=curve,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_json(data)


def write_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_json(cfg), indent=2) + "\n")


# ---------------------------------------------------------- default fleets

@dataclass(frozen=True)
class _Scale:
    N: int
    T: int
    slot_minutes: float
    h_min: int
    target_range: tuple[float, float]  # final reference SoC


SCALES = {
    "full": _Scale(N=6, T=48, slot_minutes=30, h_min=5, target_range=(0.2, 0.85)),
    "desk": _Scale(N=6, T=12, slot_minutes=120, h_min=2, target_range=(0.2, 0.4)),
}

STATION_GRID = dict(c_price=1.09e-3, r_bar=1.23e-3, d_bar=45.0, v_bar=5, u_min=-7.5, u_max=7.5)
FLEET_PEV = dict(eta=0.85, x0=0.23, rho_plus=1e-3, rho_minus=0.5e-3)
CAPACITY_RANGE = (40.0, 75.0)
SOC_FLOOR = 0.2
TRIP_KWH = (3.0, 6.0)
FIRST_DEPARTURE_H = (7.0, 13.0)  # first trips are staggered over this window
DEPARTURE_JITTER_H = 0.5
RETURN_AFTER_H = (4.0, 5.0)
TRIP_MINUTES = (30.0, 90.0)


def _trip_slots(start_h: float, minutes: float, slot_minutes: float, T: int) -> list[int]:
    first = int(start_h * 60 // slot_minutes)
    last = int(math.ceil((start_h * 60 + minutes) / slot_minutes)) - 1
    return [t for t in range(first, max(first, last) + 1) if t < T]


def default_scenario(scale: str = "desk", seed: int = 0) -> ScenarioConfig:
    """Fleet with the reference station physics and seeded heterogeneous vehicles.

    Every vehicle makes an outbound and a return trip and must end the day
    above a target SoC; everywhere else the reference is the 0.2 floor.
    Departures are staggered across the fleet so that the vehicles do not all
    need the charging points in the same night slots, and every trip
    ends at least an hour before the evening demand peak.
    """
    if scale not in SCALES:
        raise ConfigError(f"scale: expected one of {tuple(SCALES)}, got {scale!r}")
    sc = SCALES[scale]
    rng = np.random.default_rng(seed)
    curve = DemandCurve()
    grid = GridParams(d=curve.sample(sc.T, sc.slot_minutes, STATION_GRID["d_bar"]), **STATION_GRID)

    peak_h = curve.evening_hour
    pevs = []
    for i in range(sc.N):
        capacity = float(rng.uniform(*CAPACITY_RANGE))
        target = float(rng.uniform(*sc.target_range))
        lo, hi = FIRST_DEPARTURE_H
        first = lo + (hi - lo) * i / max(sc.N - 1, 1) + float(rng.uniform(-1, 1)) * DEPARTURE_JITTER_H
        second = first + float(rng.uniform(*RETURN_AFTER_H))
        mu = np.zeros(sc.T)
        for start in (first, second):
            minutes = float(rng.uniform(*TRIP_MINUTES))
            if start + minutes / 60.0 > peak_h - 1.0:
                start = peak_h - 1.0 - minutes / 60.0  # home an hour before the evening peak
            slots = _trip_slots(start, minutes, sc.slot_minutes, sc.T)
            energy = float(rng.uniform(*TRIP_KWH))
            mu[slots] = energy / capacity / len(slots)
        x_ref = [SOC_FLOOR] * (sc.T - 1) + [target]
        pevs.append(PevParams(capacity=capacity, x_ref=x_ref, mu=[float(v) for v in mu],
                              h_min=sc.h_min, **FLEET_PEV))
    return ScenarioConfig(name=scale, slot_minutes=sc.slot_minutes, grid=grid, pevs=tuple(pevs),
                          seed=seed, demand_curve=curve)


# ------------------------------------------------------------------ runs

@dataclass
class OutputBundle:
    config: ScenarioConfig
    state: GameState
    trajectories: list[dict] = field(default_factory=list)
    aggregate: list[dict] = field(default_factory=list)
    iterations: list[dict] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def converged(self) -> bool:
        return self.state.converged

    def summary(self) -> dict:
        return {
            "converged": self.state.converged,
            "sweeps": self.state.sweeps,
            "iterations": self.state.iteration,
            "accepted_updates": sum(r.accepted for r in self.state.records),
            "initial_potential_eur": self.state.initial_potential,
            "final_potential_eur": self.state.potential,
        }


def tables(cfg: ScenarioConfig, state: GameState) -> tuple[list[dict], list[dict], list[dict]]:
    z = state.strategies
    traj = []
    for i, s in enumerate(z.players):
        for t in range(cfg.T):
            traj.append({
                "player": i + 1, "t": t + 1, "x": s.x[t], "x_next": s.x[t + 1], "u_kwh": s.u[t],
                "delta": int(s.delta[t]), "delta_c": int(s.delta_c[t]), "delta_d": int(s.delta_d[t]),
                "drain_soc": cfg.pevs[i].mu[t], "x_ref": cfg.pevs[i].x_ref[t],
            })
    d = np.asarray(cfg.grid.d)
    su = z.stack("u").sum(axis=0)
    plugged = z.stack("delta").sum(axis=0)
    agg = [{"t": t + 1, "hour": cfg.hours()[t], "d_kwh": d[t], "fleet_u_kwh": su[t],
            "net_load_kwh": d[t] + su[t], "d_bar_kwh": cfg.grid.d_bar, "plugged": int(round(plugged[t]))}
           for t in range(cfg.T)]
    its = [{"k": 0, "player": "", "potential_eur": state.initial_potential, "j_old_eur": "",
            "j_new_eur": "", "accepted": "", "nodes": ""}]
    for r in state.records:
        its.append({"k": r.k, "player": r.player + 1, "potential_eur": r.potential_after,
                     "j_old_eur": r.old_cost, "j_new_eur": r.new_cost, "accepted": int(r.accepted),
                     "nodes": r.nodes})
    return traj, agg, its


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v) + 0.0  # no negative zero
        return repr(v)
    return str(v)


def write_csv(path: Path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _versions() -> dict:
    import clarabel
    import scipy

    return {"pevgame": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "clarabel": clarabel.__version__}


def run(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> OutputBundle:
    """Phase-0 initialization plus the sequential best-response algorithm.

    With ``out_dir`` the tables, the final strategy, the scenario and a
    manifest are written there.  Raises ``BestResponseInfeasible`` when the
    initialization finds no feasible plan for some vehicle.
    """
    started = time.perf_counter()
    state = run_algorithm(cfg.game(), epsilon=cfg.epsilon, max_sweeps=cfg.max_sweeps,
                          opts=cfg.solve_options(), selection=cfg.selection, seed=cfg.seed)
    traj, agg, its = tables(cfg, state)
    bundle = OutputBundle(cfg, state, traj, agg, its, time.perf_counter() - started)
    if out_dir is not None:
        write_outputs(bundle, out_dir)
    return bundle


def write_outputs(bundle: OutputBundle, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "trajectories.csv", bundle.trajectories)
    write_csv(out / "aggregate.csv", bundle.aggregate)
    write_csv(out / "iterations.csv", bundle.iterations)
    write_scenario(bundle.config, out / "scenario.json")
    save_strategy(bundle.state.strategies, out / "strategy.json")
    manifest = {
        "scenario": to_json(bundle.config),
        "seed": bundle.config.seed,
        "solver": _solver_to_json(bundle.config.solve_options()),
        "summary": bundle.summary(),
        "versions": _versions(),
        "wall_time_s": bundle.wall_time_s,
        "files": ["trajectories.csv", "aggregate.csv", "iterations.csv", "scenario.json", "strategy.json"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    emit_plotdata(bundle, out)


def save_strategy(z: CollectiveStrategy, path: str | Path) -> None:
    data = {"players": [[float(v) + 0.0 for v in s.values] for s in z.players]}
    Path(path).write_text(json.dumps(data) + "\n")


def load_strategy(game: Game, path: str | Path) -> CollectiveStrategy:
    try:
        data = json.loads(Path(path).read_text())
        values = data["players"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a strategy file ({exc})") from None
    if len(values) != game.N:
        raise ConfigError(f"{path}: {len(values)} players, scenario has {game.N}")
    return collective_from_values(game, values)


def emit_plotdata(bundle: OutputBundle, out_dir: str | Path) -> list[Path]:
    """Columnar data for the SoC, load and potential plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "plot_soc.csv", out / "plot_load.csv", out / "plot_potential.csv"]
    write_csv(files[0], bundle.trajectories, ["player", "t", "x", "delta", "drain_soc", "x_ref"])
    write_csv(files[1], bundle.aggregate, ["t", "hour", "d_kwh", "fleet_u_kwh", "net_load_kwh", "d_bar_kwh"])
    write_csv(files[2], bundle.iterations, ["k", "player", "potential_eur"])
    return files
