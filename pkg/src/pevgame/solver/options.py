from __future__ import annotations

import math
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class SolveOptions:
    rel_gap: float = 1e-8
    abs_gap: float = 1e-9
    integrality_tol: float = 1e-6
    qp_tol: float = 1e-7  # largest row or bound violation accepted from a relaxation
    regularization: float = 1e-9
    node_limit: int = 200_000
    time_limit: float = math.inf  # seconds
    trace: bool = False  # keep a per-node log for debugging dumps

    def __post_init__(self):
        for name in ("rel_gap", "abs_gap", "integrality_tol", "qp_tol", "regularization", "time_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.node_limit < 1:
            raise ValueError("node_limit must be at least 1")

    def gap(self, incumbent: float) -> float:
        return max(self.abs_gap, self.rel_gap * abs(incumbent))

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.time_limit):
            d["time_limit"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SolveOptions:
        d = dict(d)
        if d.get("time_limit") is None:
            d.pop("time_limit", None)
        return cls(**d)
