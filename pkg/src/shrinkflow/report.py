from __future__ import annotations

import math
from dataclasses import dataclass, field

HOLDS = "holds"
VIOLATED = "violated"
HYPOTHESIS_NOT_MET = "hypothesis-not-met"
DEGENERATE = "degenerate"


def _clean(v):
    if isinstance(v, float):
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if hasattr(v, "item"):  # numpy scalar
        return _clean(v.item())
    return v


@dataclass
class AuditReport:
    """Outcome of one checked implication.

    ``margin`` is positive when the conclusion holds with room to spare.
    """

    name: str
    hypotheses: bool
    verdict: str
    margin: float = float("nan")
    quantities: dict = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        return self.verdict == VIOLATED

    def to_dict(self) -> dict:
        return _clean({
            "name": self.name,
            "hypotheses": bool(self.hypotheses),
            "quantities": self.quantities,
            "margin": float(self.margin),
            "verdict": self.verdict,
        })


def jsonable(obj):
    return _clean(obj)
