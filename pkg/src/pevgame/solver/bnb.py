"""Branch-and-bound for convex MIQPs over binary variables, plus an enumeration oracle.

Both routes optimize the *regularized* objective (true objective plus
``regularization * |x|^2``), so they search for the same optimum; the reported
``objective`` is always the true objective at the returned point.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from ..model import MixedIntegerQP, check_feasible
from .options import SolveOptions
from .qp import DenseProgram, solve_relaxation

log = logging.getLogger(__name__)

BRUTE_FORCE_CAP = 20


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NODE_LIMIT = "node_limit"
    TIME_LIMIT = "time_limit"


@dataclass(frozen=True)
class BnBNode:
    fixings: tuple[tuple[int, int], ...]  # sorted (var id, value) pairs
    parent_bound: float
    depth: int = 0

    def child(self, var: int, value: int, bound: float) -> BnBNode:
        if any(k == var for k, _ in self.fixings):
            raise ValueError(f"variable {var} already fixed at this node")
        return BnBNode(tuple(sorted(self.fixings + ((var, value),))), bound, self.depth + 1)


@dataclass
class SolveResult:
    status: SolveStatus
    assignment: NDArray[np.float64] | None
    objective: float
    best_bound: float
    nodes_explored: int
    reg_objective: float = np.inf
    tree: list[dict] = field(default_factory=list, repr=False)

    @property
    def has_solution(self) -> bool:
        return self.assignment is not None

    def format_tree(self) -> str:
        """Node log as indented text, one line per explored node."""
        lines = []
        for rec in self.tree:
            fix = ",".join(f"x{k}={v}" for k, v in rec["fixings"])
            lines.append(f"{'  ' * rec['depth']}#{rec['node']} [{fix}] {rec['outcome']} bound={rec['bound']:.10g}")
        return "\n".join(lines)


def _most_fractional(x: NDArray, candidates: NDArray) -> tuple[int, float]:
    """Binary closest to 1/2 among ``candidates``; ties go to the lowest id."""
    vals = x[candidates]
    frac = np.minimum(vals - np.floor(vals), np.ceil(vals) - vals)
    pos = int(np.argmax(frac))  # argmax returns the first maximum, i.e. the lowest id
    return int(candidates[pos]), float(frac[pos])


def solve(p: MixedIntegerQP, opts: SolveOptions | None = None,
          incumbent: NDArray | None = None) -> SolveResult:
    """Global optimum of a convex MIQP by best-first branch-and-bound.

    ``incumbent`` is an optional known feasible point used as the starting
    upper bound (it is ignored if it fails the feasibility check).
    """
    opts = opts or SolveOptions()
    dp = DenseProgram(p, opts.regularization)
    started = time.perf_counter()
    tree: list[dict] = []

    best_x: NDArray | None = None
    best_val = np.inf
    if incumbent is not None:
        cand = np.array(incumbent, dtype=float)
        if check_feasible(p, cand, opts.integrality_tol):
            cand[dp.binaries] = np.round(cand[dp.binaries])
            best_x, best_val = cand, dp.reg_objective(cand)
        else:
            log.debug("warm-start point rejected as infeasible")

    counter = itertools.count()
    heap: list[tuple[float, int, BnBNode]] = [(-np.inf, next(counter), BnBNode((), -np.inf))]
    nodes = 0
    status = None
    open_bound = np.inf

    while heap:
        bound, _, node = heap[0]
        if best_x is not None and bound >= best_val - opts.gap(best_val):
            open_bound = bound
            break
        if nodes >= opts.node_limit:
            status = SolveStatus.NODE_LIMIT
            break
        if time.perf_counter() - started > opts.time_limit:
            status = SolveStatus.TIME_LIMIT
            break
        heapq.heappop(heap)
        nodes += 1
        fixings = dict(node.fixings)
        lb, ub = dp.bounds_with(fixings)
        relax = solve_relaxation(dp, lb, ub, opts)
        outcome, cand = _process(dp, p, relax, node, lb, ub, opts, heap, counter, best_val)
        if cand is not None and cand[0] < best_val:
            best_val, best_x = cand
        if opts.trace:
            tree.append({"node": nodes, "depth": node.depth, "fixings": node.fixings,
                         "bound": relax.objective, "outcome": outcome})

    if status is None:
        status = SolveStatus.OPTIMAL if best_x is not None else SolveStatus.INFEASIBLE
    if heap and status is not SolveStatus.OPTIMAL:
        open_bound = min(b for b, _, _ in heap)
    best_bound = min(best_val, open_bound)
    if best_x is None:
        return SolveResult(status, None, np.inf, best_bound, nodes, tree=tree)
    best_x, best_val = _finalize(dp, best_x, best_val, opts)
    best_bound = min(best_bound, best_val)
    return SolveResult(status, best_x, dp.objective(best_x), best_bound, nodes, best_val, tree)


def _finalize(dp: DenseProgram, x: NDArray, val: float, opts: SolveOptions) -> tuple[NDArray, float]:
    """Snap binaries and re-solve the continuous part with active-set polishing."""
    lb, ub = dp.lb.copy(), dp.ub.copy()
    lb[dp.binaries] = ub[dp.binaries] = np.round(x[dp.binaries]) + 0.0
    leaf = solve_relaxation(dp, lb, ub, opts, polish=True)
    if leaf.feasible and leaf.objective <= val + opts.gap(val):
        return leaf.point, leaf.objective
    return x, val


def _process(dp, p, relax, node, lb, ub, opts, heap, counter, best_val):
    """Evaluate one node; returns ``(outcome, candidate)`` where candidate is ``(value, x)`` or None."""
    if not relax.feasible:
        return "infeasible", None
    bound = relax.objective
    if bound >= best_val - opts.gap(best_val):
        return "pruned", None
    x = relax.point
    free_bins = dp.binaries[lb[dp.binaries] < ub[dp.binaries]]
    if free_bins.size == 0:
        return "integral", (bound, x)

    var, frac = _most_fractional(x, free_bins)
    if frac > opts.integrality_tol:
        _branch(node, var, x, bound, heap, counter)
        return "branched", None

    # near-integral: fix every binary at its rounded value and re-solve the continuous part
    lb2, ub2 = lb.copy(), ub.copy()
    lb2[free_bins] = ub2[free_bins] = np.round(x[free_bins])
    leaf = solve_relaxation(dp, lb2, ub2, opts)
    cand = (leaf.objective, leaf.point) if leaf.feasible else None
    if frac == 0.0 or (cand is not None and leaf.objective <= bound + opts.gap(bound)):
        return "integral", cand
    _branch(node, var, x, bound, heap, counter)
    return "branched", cand


def _branch(node, var, x, bound, heap, counter):
    first = int(round(float(x[var])))
    for value in (first, 1 - first):
        heapq.heappush(heap, (bound, next(counter), node.child(var, value, bound)))


def brute_force(p: MixedIntegerQP, opts: SolveOptions | None = None,
                cap: int = BRUTE_FORCE_CAP) -> SolveResult:
    """Enumerate every binary assignment and solve the continuous QP for each.

    Assignments violating a row that involves only binaries (and fixed
    variables) are discarded with a direct check before any QP is solved.
    """
    opts = opts or SolveOptions()
    dp = DenseProgram(p, opts.regularization)
    bins = dp.binaries
    nb = bins.size
    if nb > cap:
        raise ValueError(f"{nb} binaries exceed the enumeration cap of {cap}")

    words = np.array(list(itertools.product((0.0, 1.0), repeat=nb)), dtype=float).reshape(2**nb, nb)
    ok = _binary_rows_ok(dp, words, opts.qp_tol)

    best_x, best_val, solved = None, np.inf, 0
    for w in words[ok]:
        lb, ub = dp.lb.copy(), dp.ub.copy()
        lb[bins] = ub[bins] = w
        res = solve_relaxation(dp, lb, ub, opts)
        solved += 1
        if res.feasible and res.objective < best_val:
            best_val, best_x = res.objective, res.point
    if best_x is None:
        return SolveResult(SolveStatus.INFEASIBLE, None, np.inf, np.inf, solved)
    best_x, best_val = _finalize(dp, best_x, best_val, opts)
    return SolveResult(SolveStatus.OPTIMAL, best_x, dp.objective(best_x), best_val, solved, best_val)


def _binary_rows_ok(dp: DenseProgram, words: NDArray, tol: float) -> NDArray[np.bool_]:
    """Mask of binary words that satisfy every row free of non-fixed continuous variables."""
    known = dp.is_binary | (dp.lb == dp.ub)
    fixed_cont = (~dp.is_binary) & (dp.lb == dp.ub)
    ok = np.ones(len(words), dtype=bool)
    for A, b, is_eq in ((dp.A_eq, dp.b_eq, True), (dp.A_in, dp.b_in, False)):
        if not A.size:
            continue
        pure = ~np.any(A[:, ~known] != 0.0, axis=1)
        if not pure.any():
            continue
        rows = A[pure]
        rhs = b[pure] - rows[:, fixed_cont] @ dp.lb[fixed_cont]
        lhs = words @ rows[:, dp.binaries].T
        if is_eq:
            ok &= np.all(np.abs(lhs - rhs) <= tol, axis=1)
        else:
            ok &= np.all(lhs - rhs <= tol, axis=1)
    return ok
