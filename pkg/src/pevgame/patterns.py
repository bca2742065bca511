"""Big-M inequality families that turn logical propositions into linear rows.

Each generator returns plain :class:`~pevgame.model.LinearConstraint` rows.  The
binary arguments may be variable ids or affine forms such as ``1 - delta`` so
that negated literals need no extra variables.  Big-M constants are always the
interval-arithmetic extremes of the linear form, never hand-tuned numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .model import LinearConstraint, LinearExpr, ModelError, VarId, VarSpec, ge, le

DEFAULT_EPS = 1e-6


class DegeneratePropositionError(ModelError):
    """The threshold lies outside the range of the form, so the literal is constant."""


@dataclass(frozen=True)
class ExprBounds:
    M: float  # max of f over the variable box
    m: float  # min of f over the variable box

    def __post_init__(self):
        if self.m > self.M:
            raise ModelError(f"empty range: m={self.m} > M={self.M}")


def expr_bounds(f: LinearExpr, variables: Sequence[VarSpec]) -> ExprBounds:
    hi = lo = f.constant
    for k, c in f.coeffs.items():
        spec = variables[k]
        if c > 0:
            hi += c * spec.upper
            lo += c * spec.lower
        else:
            hi += c * spec.lower
            lo += c * spec.upper
    return ExprBounds(M=hi, m=lo)


def _lit(x: VarId | LinearExpr) -> LinearExpr:
    return LinearExpr.var(x) if isinstance(x, int) else LinearExpr.coerce(x)


def _check_eps(eps: float) -> float:
    if not eps > 0:
        raise ValueError(f"tolerance must be strictly positive, got {eps}")
    return float(eps)


def _check_threshold(c: float, b: ExprBounds) -> None:
    if c > b.M or c < b.m:
        raise DegeneratePropositionError(
            f"threshold {c} outside [{b.m}, {b.M}]; fix the binary with a bound instead"
        )


def pattern_geq(delta, f: LinearExpr, c: float, b: ExprBounds, eps: float = DEFAULT_EPS,
                label: str = "") -> list[LinearConstraint]:
    """``[delta = 1] <=> [f >= c]``; ``delta = 0`` forces ``f <= c - eps``."""
    eps = _check_eps(eps)
    _check_threshold(c, b)
    d, f = _lit(delta), LinearExpr.coerce(f)
    return [
        le((c - b.m) * d, f - b.m, label=f"{label}:geq.lo"),
        ge((b.M - c + eps) * d, f - c + eps, label=f"{label}:geq.hi"),
    ]


def pattern_leq(delta, f: LinearExpr, c: float, b: ExprBounds, eps: float = DEFAULT_EPS,
                label: str = "") -> list[LinearConstraint]:
    """``[delta = 1] <=> [f <= c]``; ``delta = 0`` forces ``f >= c + eps``."""
    eps = _check_eps(eps)
    _check_threshold(c, b)
    d, f = _lit(delta), LinearExpr.coerce(f)
    return [
        le((b.M - c) * d, b.M - f, label=f"{label}:leq.hi"),
        ge((c + eps - b.m) * d, eps + c - f, label=f"{label}:leq.lo"),
    ]


def pattern_and(delta, sigma, gamma, label: str = "") -> list[LinearConstraint]:
    """``[delta = 1] <=> [sigma = 1] and [gamma = 1]`` over binary literals."""
    d, s, g = _lit(delta), _lit(sigma), _lit(gamma)
    return [
        le(d - s, 0.0, label=f"{label}:and.1"),
        le(d - g, 0.0, label=f"{label}:and.2"),
        le(s + g - d, 1.0, label=f"{label}:and.3"),
    ]


def pattern_implies(g, f: LinearExpr, delta, b: ExprBounds, label: str = "") -> list[LinearConstraint]:
    """Product ``g = f * delta``: ``delta = 0`` gives ``g = 0``, ``delta = 1`` gives ``g = f``.

    ``g`` must be a continuous variable whose box contains ``[b.m, b.M]``.
    """
    gv, f, d = _lit(g), LinearExpr.coerce(f), _lit(delta)
    one_minus = 1.0 - d
    return [
        le(b.m * d, gv, label=f"{label}:imp.1"),
        le(gv, b.M * d, label=f"{label}:imp.2"),
        le(-b.M * one_minus, gv - f, label=f"{label}:imp.3"),
        le(gv - f, -b.m * one_minus, label=f"{label}:imp.4"),
    ]
