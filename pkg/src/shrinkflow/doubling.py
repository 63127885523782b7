"""Doubling and frequency audits on computed trajectories.

These routines check, on concrete sampled trajectories, the implications used
to bound the decay order ``N(tau) = log(D(tau) / D(tau + 1))``:

* the frequency-monotonicity step over windows ``tau, tau+L, tau+2L``;
* the shrinking-scale iteration ``L_i = 2^{-i/A} L_0`` with its two branches;
* the infinite-order classifier comparing ``D`` against ``exp(-k tau)``.

They verify; they do not prove anything about data that was not audited.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, UndefinedOrderError, WindowError
from .flow import Trajectory
from .linear import GapChoice
from .report import DEGENERATE, HOLDS, HYPOTHESIS_NOT_MET, VIOLATED, AuditReport, jsonable

ZERO_FLOOR = 1e-12
DEFAULT_GAMMA0 = 0.5
L_SCAN = 256


def default_A(B: float, gamma0: float = DEFAULT_GAMMA0) -> float:
    """Exponent ``A = (B - 1) / gamma0`` tying the window size to the distance."""
    if not gamma0 > 0:
        raise InvalidInputError("gamma0 must be positive")
    return (B - 1.0) / gamma0


def _excess_drop(traj: Trajectory, tau: float) -> float:
    A = traj.excess
    if np.all(np.isnan(A)):
        return 0.0
    return float(np.interp(tau, traj.taus, A) - np.interp(tau + 1, traj.taus, A))


def prop31_window_check(traj: Trajectory, tau: float, choice: GapChoice, A: float,
                        epsilon: float = 0.1) -> AuditReport:
    """If ``D(tau)/(2C0) <= D(tau+L) <= L0^A`` then ``D(tau+L)/(2C0) <= D(tau+2L)``."""
    L, L0, C0 = choice.L, choice.L0, choice.C0
    lo, hi = traj.span
    if tau < lo - 1e-12 or tau + 2 * L > hi + 1e-12:
        raise WindowError(f"window [{tau}, {tau + 2 * L}] exceeds trajectory span [{lo}, {hi}]")
    d0, d1, d2 = (traj.distance_at(tau + j * L) for j in range(3))
    inside = traj.distances[(traj.taus >= tau - 1e-12) & (traj.taus <= tau + 2 * L + 1e-12)]
    if not (all(math.isfinite(d) for d in (d0, d1, d2)) and np.all(np.isfinite(inside))):
        raise WindowError(f"infinite distance inside the window starting at tau={tau}")
    q = {"tau": tau, "L": L, "D0": d0, "DL": d1, "D2L": d2, "C0": C0, "A": A}
    if d0 <= 0:
        return AuditReport("prop31", False, DEGENERATE, float("nan"), q)
    drop = _excess_drop(traj, tau) if tau + 1 <= hi + 1e-12 else 0.0
    q["excess_drop"] = drop
    pre = d0 < epsilon and drop < epsilon and d1 <= L0**A
    hyp = d0 / (2 * C0) <= d1
    q["preconditions"] = pre
    if not (pre and hyp):
        return AuditReport("prop31", False, HYPOTHESIS_NOT_MET, float("nan"), q)
    margin = d2 - d1 / (2 * C0)
    return AuditReport("prop31", True, HOLDS if margin >= 0 else VIOLATED, margin, q)


def prop31_scan(traj: Trajectory, choice: GapChoice, A: float, taus, Ls=None,
                epsilon: float = 0.1) -> dict:
    """Window checks over a grid of start times and window sizes in ``[L0/2, L0]``."""
    Ls = np.linspace(choice.L0 / 2, choice.L0, 16) if Ls is None else Ls
    counts = {"checked": 0, "hypothesis_met": 0, "violations": 0}
    worst = math.inf
    for L in Ls:
        c = dataclasses.replace(choice, L=float(L))
        for tau in taus:
            rep = prop31_window_check(traj, float(tau), c, A, epsilon)
            counts["checked"] += 1
            if rep.hypotheses:
                counts["hypothesis_met"] += 1
                counts["violations"] += rep.violated
                worst = min(worst, rep.margin)
    counts["min_margin"] = worst
    return counts


def windowed_ratios(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """``D(tau) / D(tau + 1)`` at every sample with ``tau + 1`` inside the span."""
    end = traj.taus[-1]
    taus = traj.taus[traj.taus + 1 <= end + 1e-12]
    ratios = np.array([traj.distance_at(t) / traj.distance_at(t + 1) for t in taus])
    return taus, ratios


def doubling_constant(traj: Trajectory) -> float:
    """``sup_tau D(tau) / D(tau + 1)`` over the sampled span."""
    lo, hi = traj.span
    if hi - lo < 1 - 1e-12:
        raise WindowError("trajectory shorter than one unit of time")
    d = traj.distances
    if np.any(d <= 0):
        raise UndefinedOrderError("degenerate: zero distance on the span")
    if not np.all(np.isfinite(d)):
        raise UndefinedOrderError("degenerate: infinite distance on the span")
    return float(np.max(windowed_ratios(traj)[1]))


@dataclass
class DoublingAudit:
    trajectory: Trajectory = field(repr=False)
    C0: float
    A: float
    L0: float
    B: float | None
    scale_sequence: list
    branch_history: list
    doubling_constant: float
    verdict: str
    scale_sum: float
    prop31: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return jsonable({
            "schema_version": 1,
            "branch_history": self.branch_history,
            "scale_sequence": self.scale_sequence,
            "scale_sum": self.scale_sum,
            "constants": {"C0": self.C0, "A": self.A, "B": self.B, "L0": self.L0},
            "doubling_constant": self.doubling_constant,
            "prop31": self.prop31,
            "verdict": self.verdict,
        })

    def ratio_rows(self):
        yield ("tau", "ratio")
        taus, ratios = windowed_ratios(self.trajectory)
        for t, r in zip(taus, ratios):
            yield (repr(float(t)), repr(float(r)))


def scale_series(L0: float, A: float, tol: float = 1e-17) -> tuple[list[float], float]:
    """Scales ``L_i = 2^{-i/A} L0`` summed until the terms stop mattering."""
    q = 0.5 ** (1.0 / A)
    terms, total = [], 0.0
    L = L0
    while L > tol * max(total, L0):
        terms.append(L)
        total += L
        L *= q
    return terms, math.fsum(terms)


def _chain_length(Li: float) -> int:
    # steps of size >= Li/2 needed to cover one unit of time plus one scale
    return math.ceil(2.0 / Li) + 1


def theorem11_certificate(traj: Trajectory, L0: float, A: float, C0: float,
                          B: float | None = None, choice: GapChoice | None = None,
                          epsilon: float = 0.1, scan: int = L_SCAN) -> DoublingAudit:
    """Run the shrinking-scale case analysis along ``traj``.

    At stage ``i`` with start ``T`` and scale ``L_i``: if some ``L`` in
    ``[L_i/2, L_i]`` has ``D(T) >= 2 C0 D(T+L)`` the scale shrinks and ``T``
    advances by ``L_i``; otherwise the ratio is bounded on the remaining span
    by the chain constant ``(2 C0)^m C0^2``.
    """
    if not 0 < L0 < 0.5:
        raise InvalidInputError(f"L0 must lie in (0, 1/2), got {L0}")
    if A <= 0:
        raise InvalidInputError("A must be positive")
    lo, hi = traj.span
    _, total = scale_series(L0, A)
    q = 0.5 ** (1.0 / A)
    if hi - lo < L0 * (1 + q + q * q):
        raise WindowError("trajectory too short for three scale stages")
    finite = np.isfinite(traj.distances)
    if np.all(traj.distances[finite] <= ZERO_FLOOR) and np.all(finite):
        return DoublingAudit(traj, C0, A, L0, B, [], [{"stage": 0, "T": lo, "branch": "zero"}],
                             float("nan"), "degenerate", total)
    history, scales = [], []
    prop31 = {"checked": 0, "hypothesis_met": 0, "violations": 0}
    T = lo
    verdict = "exhausted"
    i = 0
    while True:
        Li = L0 * q**i
        if T + Li > hi + 1e-12:
            break
        scales.append(Li)
        Ls = np.linspace(Li / 2, Li, scan)
        dT = traj.distance_at(T)
        dL = np.array([traj.distance_at(T + L) for L in Ls])
        if not (math.isfinite(dT) and np.all(np.isfinite(dL))):
            verdict = "partial"
            history.append({"stage": i, "T": T, "L_i": Li, "branch": "left-graphical-regime"})
            break
        if dT <= ZERO_FLOOR:
            verdict = "degenerate"
            history.append({"stage": i, "T": T, "L_i": Li, "branch": "zero"})
            break
        if choice is not None:
            for L in Ls[:: max(scan // 16, 1)]:
                if T + 2 * L <= hi + 1e-12:
                    rep = prop31_window_check(traj, T, dataclasses.replace(choice, L=float(L), L0=Li), A, epsilon)
                    prop31["checked"] += 1
                    prop31["hypothesis_met"] += rep.hypotheses
                    prop31["violations"] += rep.violated
        shrink = dT >= 2 * C0 * dL
        if np.any(shrink):
            witness = float(Ls[np.argmax(shrink)])
            d_next = traj.distance_at(T + Li)
            history.append({
                "stage": i, "T": T, "L_i": Li, "branch": "shrink", "L": witness,
                "start_below_scale": bool(dT <= Li**A),
                "D_next": d_next, "half_scale_bound": 0.5 * Li**A,
                "bound_holds": bool(d_next <= 0.5 * Li**A),
            })
            T += Li
            i += 1
            continue
        m = _chain_length(Li)
        chain = (2 * C0) ** m * C0**2
        sel = (traj.taus >= T - 1e-12) & (traj.taus + 1 <= hi + 1e-12)
        ratios = [traj.distance_at(t) / traj.distance_at(t + 1) for t in traj.taus[sel]]
        worst = max(ratios) if ratios else float("nan")
        ok = not ratios or worst <= chain
        history.append({
            "stage": i, "T": T, "L_i": Li, "branch": "bounded", "m": m,
            "chain_constant": chain, "max_ratio": worst, "chain_bounds_ratios": bool(ok),
        })
        verdict = "bounded" if ok else "violated"
        break
    try:
        dc = doubling_constant(traj)
    except (UndefinedOrderError, WindowError):
        dc = float("nan")
    if prop31["violations"]:
        verdict = "violated"
    return DoublingAudit(traj, C0, A, L0, B, scales, history, dc, verdict, total, prop31)


def infinite_order_classifier(traj: Trajectory, K: int = 8, tol: float = 0.1) -> dict:
    """Compare ``D`` against ``exp(-k tau)`` for ``k = 1..K``.

    ``C_k = sup D(tau) e^{k tau}`` is called bounded when its running supremum
    grows at exponential rate at most ``tol`` over the second half of the span.
    """
    d = traj.distances
    if not np.all(np.isfinite(d)):
        raise InvalidInputError("classifier needs finite distances on the whole span")
    lo, hi = traj.span
    if hi - lo < 2.0:
        raise WindowError(f"span {hi - lo} too short; at least 2 units are needed")
    if np.all(d <= ZERO_FLOOR):
        return {"verdict": "zero", "k_star": None, "growth": {}}
    mid = lo + (hi - lo) / 2
    first = traj.taus <= mid
    with np.errstate(divide="ignore"):
        logd = np.log(d)
    growth = {}
    k_star = 0
    for k in range(1, K + 1):
        vals = logd + k * traj.taus
        g = (np.max(vals) - np.max(vals[first])) / (hi - mid)
        growth[k] = float(g)
        if g <= tol:
            k_star = k
        else:
            break
    if k_star == K:
        verdict = "vanishes-beyond-K"
    else:
        verdict = "finite-order"
    return {"verdict": verdict, "k_star": k_star, "growth": growth}
