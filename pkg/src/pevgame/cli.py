"""Command line entry point.

Exit codes: 0 converged (or check passed), 1 oracle mismatch or certificate
refused, 2 not converged, 3 infeasible scenario, 4 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .game import BestResponseInfeasible, certify_mine
from .scenario import SCALES, ConfigError, ScenarioConfig, default_scenario, load_scenario, load_strategy, run, write_scenario

EXIT_OK, EXIT_CHECK_FAILED, EXIT_NOT_CONVERGED, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 1, 2, 3, 4

log = logging.getLogger("pevgame")


def _scenario(args) -> ScenarioConfig:
    if args.scenario:
        cfg = load_scenario(args.scenario)
    else:
        cfg = default_scenario(args.scale, args.seed if args.seed is not None else 0)
    changes = {}
    if args.epsilon is not None:
        changes["epsilon"] = args.epsilon
    if args.seed is not None and args.scenario:
        changes["seed"] = args.seed
    if getattr(args, "max_sweeps", None) is not None:
        changes["max_sweeps"] = args.max_sweeps
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _scenario(args)
    out = Path(args.out or "pevgame-out")
    try:
        bundle = run(cfg, out)
    except BestResponseInfeasible as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    s = bundle.summary()
    print(f"{cfg.name}: N={cfg.N} T={cfg.T} converged={s['converged']} sweeps={s['sweeps']} "
          f"iterations={s['iterations']} accepted={s['accepted_updates']} "
          f"P={s['final_potential_eur']:.6g} EUR ({bundle.wall_time_s:.1f} s) -> {out}")
    return EXIT_OK if s["converged"] else EXIT_NOT_CONVERGED


def cmd_init(args) -> int:
    cfg = default_scenario(args.scale, args.seed if args.seed is not None else 0)
    if args.epsilon is not None:
        cfg = dataclasses.replace(cfg, epsilon=args.epsilon)
    target = Path(args.out or f"{args.scale}.json")
    write_scenario(cfg, target)
    print(f"wrote {target}")
    return EXIT_OK


def cmd_certify(args) -> int:
    out = Path(args.out or "pevgame-out")
    if not args.scenario:
        args.scenario = str(out / "scenario.json")
    cfg = _scenario(args)
    game = cfg.game()
    z = load_strategy(game, args.strategy or out / "strategy.json")
    cert = certify_mine(game, z, cfg.epsilon, cfg.solve_options())
    for i, gain in enumerate(cert.improvements):
        print(f"player {i + 1}: best improvement {gain:.3e} EUR")
    for v in cert.violations:
        print(f"infeasible: {v}")
    verdict = "is" if cert.is_mine else "is NOT"
    print(f"strategy {verdict} an epsilon-equilibrium (epsilon={cfg.epsilon:g}, worst={cert.worst_improvement:.3e})")
    return EXIT_OK if cert.is_mine else EXIT_CHECK_FAILED


def cmd_oracle(args) -> int:
    from .instances import compare_with_enumeration

    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    worst = 0.0
    for k in range(args.count):
        cmp = compare_with_enumeration(rng, max_binaries=args.max_binaries)
        worst = max(worst, cmp.difference)
        print(f"program {k + 1}: {cmp.binaries} binaries, branch-and-bound {cmp.bnb:.10g}, "
              f"enumeration {cmp.enumeration:.10g}, difference {cmp.difference:.2e}")
    ok = worst <= args.tolerance
    print(f"{'agree' if ok else 'MISMATCH'}: worst difference {worst:.2e} (tolerance {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pevgame", description="Charging game of a PEV fleet: scenarios, runs, checks.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log every best-response iteration")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, sweeps=True):
        p.add_argument("--scenario", help="scenario JSON file (default: built-in scenario of --scale)")
        p.add_argument("--scale", choices=sorted(SCALES), default="desk", help="built-in scenario size (default: desk)")
        p.add_argument("--out", help="output directory (file for init)")
        p.add_argument("--epsilon", type=float, help="acceptance threshold in EUR")
        p.add_argument("--seed", type=int, help="seed for the built-in fleet and random selection")
        if sweeps:
            p.add_argument("--max-sweeps", type=int, dest="max_sweeps", help="stop after this many sweeps")

    p = sub.add_parser("run", help="initialize and run sequential best responses")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("init", help="write a default scenario file")
    common(p, sweeps=False)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("certify", help="check that a saved strategy is an epsilon-equilibrium")
    common(p, sweeps=False)
    p.add_argument("--strategy", help="strategy JSON (default: OUT/strategy.json)")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("oracle", help="compare branch-and-bound with enumeration on random small programs")
    common(p, sweeps=False)
    p.add_argument("--count", type=int, default=20, help="number of random programs")
    p.add_argument("--max-binaries", type=int, default=14, dest="max_binaries", help="largest program to enumerate")
    p.add_argument("--tolerance", type=float, default=1e-6, help="largest accepted objective difference")
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
