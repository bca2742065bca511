"""Convex QP relaxations of a :class:`MixedIntegerQP`.

The program is converted once to dense arrays; each branch-and-bound node then
only changes variable bounds.  Fixed variables are substituted out before the
subsolver runs (the Clarabel interior-point method).  An infeasibility verdict
is only accepted with a verified Farkas ray, or failing that, a Phase-1 linear
program (HiGHS) whose minimum total row violation exceeds the QP tolerance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import clarabel
from numpy.typing import NDArray
from scipy import sparse
from scipy.optimize import linprog

from ..model import MixedIntegerQP, Sense, VarKind
from .options import SolveOptions

# settings tried in order when a solve ends short of the residual tolerance;
# equilibration and the static KKT regularization occasionally leave ~1e-8 drift
_RETRY_SETTINGS = (
    {},
    {"static_regularization_constant": 1e-12},
    {"equilibrate_enable": False},
    {"static_regularization_enable": False, "max_iter": 500},
)


class SolverFailure(RuntimeError):
    """The QP subsolver could not produce a verified answer."""


class RelaxStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass
class RelaxationResult:
    status: RelaxStatus
    point: NDArray[np.float64] | None = None
    objective: float = np.inf  # regularized objective, the value branch-and-bound works with
    true_objective: float = np.inf
    primal_residual: float = 0.0
    certificate: str = ""

    @property
    def feasible(self) -> bool:
        return self.status is RelaxStatus.OPTIMAL


class DenseProgram:
    """Dense matrix view of a program.

    Objective: ``x' H x / 2 + q' x + const``; rows ``A_eq x = b_eq`` and
    ``A_in x <= b_in``.  ``H_reg`` carries the diagonal regularization so the
    regularized objective equals the true one plus ``reg * |x|^2``.
    """

    def __init__(self, p: MixedIntegerQP, regularization: float):
        n = p.num_vars
        self.n = n
        self.reg = float(regularization)
        self.H = p.objective.hessian(n)
        self.H_reg = self.H + 2.0 * self.reg * np.eye(n)
        self.q = np.zeros(n)
        for k, v in p.objective.linear.coeffs.items():
            self.q[k] = v
        self.const = p.objective.linear.constant
        self.lb = p.lower_bounds()
        self.ub = p.upper_bounds()
        self.is_binary = np.array([v.kind is VarKind.BINARY for v in p.vars], dtype=bool)
        self.binaries = np.flatnonzero(self.is_binary)

        eq_rows, in_rows, eq_b, in_b, eq_lab, in_lab = [], [], [], [], [], []
        for row in p.constraints:
            dense = np.zeros(n)
            for k, v in row.expr.coeffs.items():
                dense[k] = v
            if row.sense is Sense.EQ:
                eq_rows.append(dense); eq_b.append(row.rhs); eq_lab.append(row.label)
            elif row.sense is Sense.LE:
                in_rows.append(dense); in_b.append(row.rhs); in_lab.append(row.label)
            else:
                in_rows.append(-dense); in_b.append(-row.rhs); in_lab.append(row.label)
        self.A_eq = np.array(eq_rows).reshape(len(eq_rows), n)
        self.b_eq = np.array(eq_b, dtype=float)
        self.A_in = np.array(in_rows).reshape(len(in_rows), n)
        self.b_in = np.array(in_b, dtype=float)
        self.eq_labels = eq_lab
        self.in_labels = in_lab
        # column slices of these are what every node works with
        self.A_eq_sp = sparse.csc_matrix(self.A_eq)
        self.A_in_sp = sparse.csc_matrix(self.A_in)

    def objective(self, x: NDArray) -> float:
        return float(0.5 * x @ self.H @ x + self.q @ x + self.const)

    def reg_objective(self, x: NDArray) -> float:
        return self.objective(x) + self.reg * float(x @ x)

    def bounds_with(self, fixings: Mapping[int, float]) -> tuple[NDArray, NDArray]:
        lb, ub = self.lb.copy(), self.ub.copy()
        for k, v in fixings.items():
            lb[k] = ub[k] = v
        return lb, ub


def _phase_one(A_eq, b_eq, A_in, b_in, lb, ub) -> float:
    """Minimum total violation of the rows over the box (0 when consistent)."""
    n, me, mi = A_eq.shape[1], A_eq.shape[0], A_in.shape[0]
    # variables: x, eq slack plus, eq slack minus, ineq slack
    c = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
    I_e, I_i = sparse.identity(me, format="csc"), sparse.identity(mi, format="csc")
    Aeq = sparse.hstack([A_eq, I_e, -I_e, sparse.csc_matrix((me, mi))], format="csc") if me else None
    Aub = sparse.hstack([A_in, sparse.csc_matrix((mi, 2 * me)), -I_i], format="csc") if mi else None
    bounds = list(zip(lb, ub)) + [(0, None)] * (2 * me + mi)
    res = linprog(c, A_ub=Aub, b_ub=b_in if mi else None, A_eq=Aeq, b_eq=b_eq if me else None,
                  bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise SolverFailure(f"phase-1 LP failed: {res.message}")
    return float(res.fun)


_IPM_TOL = 1e-10  # interior-point stopping tolerance, independent of the acceptance tolerance
# A relaxation counts as infeasible when no point violates its rows by less than
# this in total.  It is far below the acceptance tolerance for returned points:
# the epsilon band of the logical patterns produces regions that are empty by
# only ~1e-8, which the interior-point method rightly reports as infeasible.
INFEASIBLE_VIOLATION = 1e-9


def _clarabel_settings(**extra) -> clarabel.DefaultSettings:
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.tol_gap_abs = st.tol_gap_rel = st.tol_feas = _IPM_TOL
    st.max_iter = 300
    for k, v in extra.items():
        setattr(st, k, v)
    return st


def _certified_infeasible(A: NDArray, b: NDArray, z: NDArray, meq: int, tol: float) -> bool:
    """Check a Farkas ray: ``A' z = 0``, ``b' z < 0``, inequality part of ``z`` nonnegative."""
    bz = float(b @ z)
    if not bz < 0:
        return False
    z = z / -bz  # now b'z = -1
    if z[meq:].min(initial=0.0) < -tol:
        return False
    return float(np.abs(A.T @ z).max(initial=0.0)) <= 1e-7


def solve_relaxation(dp: DenseProgram, lb: NDArray, ub: NDArray, opts: SolveOptions,
                     polish: bool = False) -> RelaxationResult:
    """Solve the continuous relaxation over the box ``[lb, ub]``."""
    tol = opts.qp_tol
    if np.any(lb > ub + INFEASIBLE_VIOLATION):
        k = int(np.argmax(lb - ub))
        return RelaxationResult(RelaxStatus.INFEASIBLE, certificate=f"empty box for variable {k}")
    fixed = lb >= ub
    free = ~fixed
    xF = lb[fixed]

    A_eq_f, A_in_f = dp.A_eq_sp[:, free].tocsr(), dp.A_in_sp[:, free].tocsr()
    b_eq = dp.b_eq - dp.A_eq_sp[:, fixed] @ xF
    b_in = dp.b_in - dp.A_in_sp[:, fixed] @ xF

    # rows left without free variables are constants: check them directly
    live_eq = np.diff(A_eq_f.indptr) > 0
    live_in = np.diff(A_in_f.indptr) > 0
    dead_eq = np.abs(b_eq[~live_eq])
    dead_in = -b_in[~live_in]
    if dead_eq.size and dead_eq.max() > INFEASIBLE_VIOLATION:
        lab = np.asarray(dp.eq_labels, dtype=object)[~live_eq][int(dead_eq.argmax())]
        return RelaxationResult(RelaxStatus.INFEASIBLE, certificate=f"fixed row {lab} violated by {dead_eq.max():.3g}")
    if dead_in.size and dead_in.max() > INFEASIBLE_VIOLATION:
        lab = np.asarray(dp.in_labels, dtype=object)[~live_in][int(dead_in.argmax())]
        return RelaxationResult(RelaxStatus.INFEASIBLE, certificate=f"fixed row {lab} violated by {dead_in.max():.3g}")
    A_eq_f, b_eq = A_eq_f[live_eq], b_eq[live_eq]
    A_in_f, b_in = A_in_f[live_in], b_in[live_in]

    lb_f, ub_f = lb[free], ub[free]
    nf = int(free.sum())
    x = lb.copy()
    if nf == 0:
        return _finish(dp, x, lb, ub)

    H_ff = dp.H[np.ix_(free, free)]
    q_f = dp.q[free] + dp.H[np.ix_(free, fixed)] @ xF
    fin_lb, fin_ub = np.isfinite(lb_f), np.isfinite(ub_f)
    eye = sparse.identity(nf, format="csr")
    meq = A_eq_f.shape[0]
    A_sp = sparse.vstack([A_eq_f, A_in_f, eye[fin_ub], -eye[fin_lb]], format="csc")
    b = np.concatenate([b_eq, b_in, ub_f[fin_ub], -lb_f[fin_lb]])
    cones = [clarabel.ZeroConeT(meq), clarabel.NonnegativeConeT(A_sp.shape[0] - meq)]
    if meq == 0:
        cones = cones[1:]

    G = H_ff + 2.0 * dp.reg * np.eye(nf)
    # the objective is normalized to unit scale; a tiny objective (e.g. only
    # the regularizer) otherwise stalls the interior-point iterations
    scale = 1.0 / max(np.abs(G).max(), np.abs(q_f).max(initial=0.0))
    P = sparse.csc_matrix(np.triu(G * scale))
    phase_one_done = False
    for extra in _RETRY_SETTINGS:
        sol = clarabel.DefaultSolver(P, q_f * scale, A_sp, b, cones, _clarabel_settings(**extra)).solve()
        status = str(sol.status)
        if status.endswith("PrimalInfeasible"):
            if _certified_infeasible(A_sp, b, np.asarray(sol.z), meq, tol):
                return RelaxationResult(RelaxStatus.INFEASIBLE, certificate="Farkas ray on the active rows")
        elif status.endswith("Solved"):  # AlmostSolved too, judged by the measured residual
            xf = np.asarray(sol.x)
            if polish:
                xf = _polish(G, q_f, A_sp.toarray(), b, meq, xf, tol)
            x[free] = xf
            x[fixed] = xF
            res = _finish(dp, x, lb, ub)
            if res.primal_residual <= tol:
                return res
        if not phase_one_done:
            viol = _phase_one(A_eq_f, b_eq, A_in_f, b_in, lb_f, ub_f)
            if viol > INFEASIBLE_VIOLATION:
                return RelaxationResult(RelaxStatus.INFEASIBLE,
                                        certificate=f"phase-1 minimum violation {viol:.3g}")
            phase_one_done = True
    raise SolverFailure("QP relaxation did not reach the residual tolerance with any solver setting")


def _polish(G, q, A, b, meq, x, tol) -> NDArray:
    """Re-solve the equality-constrained KKT system on the detected active set.

    Returns the polished point only if it stays feasible and does not worsen the
    objective; otherwise the interior-point answer is kept.
    """
    slack = b - A @ x
    scale = np.maximum(1.0, np.abs(A).max(axis=1))
    active = np.abs(slack) <= 1e-7 * scale
    active[:meq] = True
    Aa, ba = A[active], b[active]
    n, m = G.shape[0], Aa.shape[0]
    K = np.block([[G, Aa.T], [Aa, np.zeros((m, m))]])
    rhs = np.concatenate([-q, ba])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    xp = sol[:n]
    viol = (A[meq:] @ xp - b[meq:]).max(initial=0.0)
    viol = max(viol, np.abs(A[:meq] @ xp - b[:meq]).max(initial=0.0))
    f = lambda v: 0.5 * v @ G @ v + q @ v
    if viol <= tol * 1e-2 and f(xp) <= f(x) + tol:
        return xp
    return x


def _finish(dp: DenseProgram, x, lb, ub) -> RelaxationResult:
    r_eq = np.abs(dp.A_eq @ x - dp.b_eq).max(initial=0.0)
    r_in = (dp.A_in @ x - dp.b_in).max(initial=0.0)
    r_box = max((lb - x).max(initial=0.0), (x - ub).max(initial=0.0))
    resid = max(r_eq, r_in, r_box, 0.0)
    return RelaxationResult(
        RelaxStatus.OPTIMAL,
        point=x,
        objective=dp.reg_objective(x),
        true_objective=dp.objective(x),
        primal_residual=float(resid),
    )


def solve_qp_relaxation(p: MixedIntegerQP, fixings: Mapping[int, float] | None = None,
                        opts: SolveOptions | None = None) -> RelaxationResult:
    """Relax every unfixed binary to ``[0, 1]`` and solve the convex QP."""
    opts = opts or SolveOptions()
    dp = DenseProgram(p, opts.regularization)
    lb, ub = dp.bounds_with(fixings or {})
    return solve_relaxation(dp, lb, ub, opts)
