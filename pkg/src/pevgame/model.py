"""Decision variables, linear expressions, constraints and convex quadratic objectives.

Everything in the package builds on :class:`MixedIntegerQP`, a plain registry of
bounded continuous/binary variables, rhs-normalized linear rows and a quadratic
objective.  Assignments are dense ``numpy`` vectors indexed by variable id.

Quadratic convention: the pair-map stores each unordered pair ``(i, j)`` with
``i <= j`` exactly once at full weight, and the quadratic part evaluates to
``sum(q_ij * x_i * x_j)`` over the stored entries.  A dense symmetric matrix
``Q`` (as in ``z' Q z``) therefore maps to ``q_ii = Q_ii`` and ``q_ij = 2 Q_ij``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

import numpy as np
from numpy.typing import NDArray

VarId = int
Assignment = NDArray[np.float64]

DEFAULT_FEAS_TOL = 1e-6


class ModelError(ValueError):
    """Raised on malformed model construction (bad bounds, unknown ids)."""


class VarKind(enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Sense(enum.Enum):
    LE = "<="
    EQ = "=="
    GE = ">="


@dataclass(frozen=True)
class VarSpec:
    kind: VarKind
    lower: float
    upper: float
    label: str = ""

    def __post_init__(self):
        if math.isnan(self.lower) or math.isnan(self.upper) or self.lower > self.upper:
            raise ModelError(f"invalid bounds for {self.label or 'variable'}: [{self.lower}, {self.upper}]")
        if self.kind is VarKind.BINARY and (self.lower != 0.0 or self.upper != 1.0):
            raise ModelError(f"binary variable {self.label!r} must have bounds [0, 1]")

    @classmethod
    def continuous(cls, lower: float, upper: float, label: str = "") -> VarSpec:
        return cls(VarKind.CONTINUOUS, float(lower), float(upper), label)

    @classmethod
    def binary(cls, label: str = "") -> VarSpec:
        return cls(VarKind.BINARY, 0.0, 1.0, label)


Operand = Union["LinearExpr", float, int]


class LinearExpr:
    """Sparse affine form ``sum(coeff * x) + constant``.

    Zero coefficients are never stored, so two equal forms have equal
    ``coeffs`` dicts.  Instances are treated as immutable.
    """

    __slots__ = ("coeffs", "constant")

    def __init__(self, coeffs: Mapping[VarId, float] | None = None, constant: float = 0.0):
        clean: dict[VarId, float] = {}
        for k, v in (coeffs or {}).items():
            if k < 0:
                raise ModelError(f"negative variable id {k}")
            v = float(v)
            if v != 0.0:
                clean[int(k)] = v
        self.coeffs = clean
        self.constant = float(constant)

    @classmethod
    def var(cls, vid: VarId, coeff: float = 1.0) -> LinearExpr:
        return cls({vid: coeff})

    @classmethod
    def const(cls, value: float) -> LinearExpr:
        return cls(None, value)

    @staticmethod
    def coerce(obj: Operand | VarId) -> LinearExpr:
        """Numbers become constants; use :meth:`var` for variable ids."""
        if isinstance(obj, LinearExpr):
            return obj
        if isinstance(obj, (int, float, np.floating, np.integer)):
            return LinearExpr.const(float(obj))
        raise TypeError(f"cannot build a linear expression from {type(obj).__name__}")

    def __add__(self, other: Operand) -> LinearExpr:
        other = LinearExpr.coerce(other)
        coeffs = dict(self.coeffs)
        for k, v in other.coeffs.items():
            coeffs[k] = coeffs.get(k, 0.0) + v
        return LinearExpr(coeffs, self.constant + other.constant)

    __radd__ = __add__

    def __neg__(self) -> LinearExpr:
        return LinearExpr({k: -v for k, v in self.coeffs.items()}, -self.constant)

    def __sub__(self, other: Operand) -> LinearExpr:
        return self + (-LinearExpr.coerce(other))

    def __rsub__(self, other: Operand) -> LinearExpr:
        return LinearExpr.coerce(other) + (-self)

    def __mul__(self, scalar: float) -> LinearExpr:
        if isinstance(scalar, LinearExpr):
            raise TypeError("product of two linear expressions is not linear")
        s = float(scalar)
        return LinearExpr({k: s * v for k, v in self.coeffs.items()}, s * self.constant)

    __rmul__ = __mul__

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LinearExpr):
            return NotImplemented
        return self.coeffs == other.coeffs and self.constant == other.constant

    def __hash__(self):
        return hash((tuple(sorted(self.coeffs.items())), self.constant))

    def __repr__(self) -> str:
        terms = " + ".join(f"{v:g}*x{k}" for k, v in sorted(self.coeffs.items()))
        if self.constant or not terms:
            terms = f"{terms} + {self.constant:g}" if terms else f"{self.constant:g}"
        return f"LinearExpr({terms})"

    @property
    def is_constant(self) -> bool:
        return not self.coeffs

    def max_var(self) -> int:
        return max(self.coeffs, default=-1)


def eval_expr(expr: LinearExpr, a: Assignment) -> float:
    total = expr.constant
    n = len(a)
    for k, v in expr.coeffs.items():
        if k >= n:
            raise ModelError(f"variable id {k} out of range for assignment of length {n}")
        total += v * float(a[k])
    return total


@dataclass(frozen=True)
class LinearConstraint:
    """Row ``expr (sense) rhs`` with the expression constant folded into ``rhs``."""

    expr: LinearExpr
    sense: Sense
    rhs: float
    label: str = ""

    @classmethod
    def make(cls, lhs: Operand, sense: Sense | str, rhs: Operand = 0.0, label: str = "") -> LinearConstraint:
        """Build ``lhs (sense) rhs`` from arbitrary affine operands."""
        diff = LinearExpr.coerce(lhs) - LinearExpr.coerce(rhs)
        return cls(LinearExpr(diff.coeffs), Sense(sense), -diff.constant, label)

    def __post_init__(self):
        if self.expr.constant != 0.0:
            raise ModelError("stored constraint expressions must have zero constant; use LinearConstraint.make")

    def residual(self, a: Assignment) -> float:
        """Amount by which the row is violated (0 when satisfied)."""
        lhs = eval_expr(self.expr, a)
        if self.sense is Sense.LE:
            return max(0.0, lhs - self.rhs)
        if self.sense is Sense.GE:
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


def le(lhs: Operand, rhs: Operand = 0.0, label: str = "") -> LinearConstraint:
    return LinearConstraint.make(lhs, Sense.LE, rhs, label)


def ge(lhs: Operand, rhs: Operand = 0.0, label: str = "") -> LinearConstraint:
    return LinearConstraint.make(lhs, Sense.GE, rhs, label)


def eq(lhs: Operand, rhs: Operand = 0.0, label: str = "") -> LinearConstraint:
    return LinearConstraint.make(lhs, Sense.EQ, rhs, label)


@dataclass
class QuadraticObjective:
    """``sum_{i<=j} quad[i,j] x_i x_j + linear(x)`` (see module docstring)."""

    quad: dict[tuple[VarId, VarId], float] = field(default_factory=dict)
    linear: LinearExpr = field(default_factory=LinearExpr)

    def add_quad(self, i: VarId, j: VarId, coeff: float) -> None:
        key = (i, j) if i <= j else (j, i)
        v = self.quad.get(key, 0.0) + float(coeff)
        if v == 0.0:
            self.quad.pop(key, None)
        else:
            self.quad[key] = v

    def add_linear(self, expr: Operand) -> None:
        self.linear = self.linear + expr

    def add_square(self, expr: LinearExpr, weight: float = 1.0) -> None:
        """Add ``weight * expr**2`` expanded into quadratic, linear and constant parts."""
        items = sorted(expr.coeffs.items())
        for p, (i, ci) in enumerate(items):
            self.add_quad(i, i, weight * ci * ci)
            for j, cj in items[p + 1:]:
                self.add_quad(i, j, 2.0 * weight * ci * cj)
        c0 = expr.constant
        if c0:
            self.linear = self.linear + LinearExpr(
                {i: 2.0 * weight * c0 * ci for i, ci in items}, weight * c0 * c0
            )

    @classmethod
    def from_dense(cls, Q: NDArray, q: NDArray | None = None, constant: float = 0.0) -> QuadraticObjective:
        """Objective ``x' Q x + q' x + constant`` for a symmetric dense ``Q``."""
        Q = np.asarray(Q, dtype=float)
        if not np.allclose(Q, Q.T):
            raise ModelError("quadratic matrix must be symmetric")
        obj = cls()
        n = Q.shape[0]
        for i in range(n):
            if Q[i, i]:
                obj.add_quad(i, i, Q[i, i])
            for j in range(i + 1, n):
                if Q[i, j]:
                    obj.add_quad(i, j, 2.0 * Q[i, j])
        coeffs = {} if q is None else dict(enumerate(np.asarray(q, dtype=float)))
        obj.linear = LinearExpr(coeffs, constant)
        return obj

    def hessian(self, n: int) -> NDArray[np.float64]:
        """Dense ``H`` such that the quadratic part equals ``x' H x / 2``."""
        H = np.zeros((n, n))
        for (i, j), v in self.quad.items():
            if i == j:
                H[i, i] += 2.0 * v
            else:
                H[i, j] += v
                H[j, i] += v
        return H

    def max_var(self) -> int:
        m = self.linear.max_var()
        for i, j in self.quad:
            m = max(m, j)
        return m


def eval_objective(obj: QuadraticObjective, a: Assignment) -> float:
    total = eval_expr(obj.linear, a)
    for (i, j), v in obj.quad.items():
        total += v * float(a[i]) * float(a[j])
    return total


@dataclass(frozen=True)
class Violation:
    kind: str  # "row", "bound" or "integrality"
    index: int
    label: str
    amount: float


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    violations: list[Violation]

    def __bool__(self) -> bool:
        return self.feasible

    @property
    def worst(self) -> float:
        return max((v.amount for v in self.violations), default=0.0)


class MixedIntegerQP:
    """Registry of variables, linear rows and a convex quadratic objective.

    Built once by a model builder and then only read; solvers never mutate it.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self.vars: list[VarSpec] = []
        self.constraints: list[LinearConstraint] = []
        self.objective = QuadraticObjective()

    @property
    def num_vars(self) -> int:
        return len(self.vars)

    @property
    def binaries(self) -> list[VarId]:
        return [i for i, v in enumerate(self.vars) if v.kind is VarKind.BINARY]

    def add_var(self, spec: VarSpec) -> VarId:
        self.vars.append(spec)
        return len(self.vars) - 1

    def add_continuous(self, lower: float, upper: float, label: str = "") -> VarId:
        return self.add_var(VarSpec.continuous(lower, upper, label))

    def add_binary(self, label: str = "") -> VarId:
        return self.add_var(VarSpec.binary(label))

    def add_constraint(self, row: LinearConstraint) -> None:
        if row.expr.max_var() >= self.num_vars:
            raise ModelError(f"constraint {row.label!r} references unknown variable {row.expr.max_var()}")
        self.constraints.append(row)

    def add_constraints(self, rows: Iterable[LinearConstraint]) -> None:
        for row in rows:
            self.add_constraint(row)

    def set_objective(self, obj: QuadraticObjective) -> None:
        if obj.max_var() >= self.num_vars:
            raise ModelError(f"objective references unknown variable {obj.max_var()}")
        self.objective = obj

    def labels(self) -> list[str]:
        return [v.label for v in self.vars]

    def lower_bounds(self) -> NDArray[np.float64]:
        return np.array([v.lower for v in self.vars], dtype=float)

    def upper_bounds(self) -> NDArray[np.float64]:
        return np.array([v.upper for v in self.vars], dtype=float)

    def __repr__(self) -> str:
        return (f"MixedIntegerQP({self.name!r}, vars={self.num_vars}, "
                f"binaries={len(self.binaries)}, rows={len(self.constraints)})")


def check_feasible(p: MixedIntegerQP, a: Assignment, tol: float = DEFAULT_FEAS_TOL) -> FeasibilityReport:
    """List every row, bound and integrality requirement violated by more than ``tol``."""
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    a = np.asarray(a, dtype=float)
    if len(a) != p.num_vars:
        raise ModelError(f"assignment has length {len(a)}, program has {p.num_vars} variables")
    out: list[Violation] = []
    for i, spec in enumerate(p.vars):
        v = float(a[i])
        gap = max(spec.lower - v, v - spec.upper, 0.0)
        if gap > tol:
            out.append(Violation("bound", i, spec.label, gap))
        if spec.kind is VarKind.BINARY:
            frac = min(abs(v), abs(v - 1.0))
            if frac > tol:
                out.append(Violation("integrality", i, spec.label, frac))
    for r, row in enumerate(p.constraints):
        res = row.residual(a)
        if res > tol:
            out.append(Violation("row", r, row.label, res))
    return FeasibilityReport(not out, out)
