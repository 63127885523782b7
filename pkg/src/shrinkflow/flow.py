"""Rescaled mean curvature flow of radial graphs over the round shrinker.

The height ``u`` of the graph evolves by ``du/dtau = M u`` where

    M u = W (-H + <x, nu> / 2),   W = sqrt(1 + |grad log r|^2).

The splitting ``M u = L u + Q u`` is integrated with ETDRK4 (the exponential
fourth-order Runge-Kutta scheme of Cox and Matthews): ``L`` is diagonal in the
Fourier / spherical-harmonic coefficients and is propagated exactly, ``Q`` is
evaluated on the grid.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    DegenerateGraphError,
    InvalidInputError,
    StiffnessError,
    UndefinedOrderError,
    WindowError,
)
from .geometry import RadialGraph, excess, gaussian_area, graph_geometry, proxy_norm
from .report import DEGENERATE, HOLDS, HYPOTHESIS_NOT_MET, VIOLATED, AuditReport
from .spectral import ModeVector, drift_operator, synthesize

INFINITE = math.inf


def rescaled_velocity(M: RadialGraph) -> np.ndarray:
    """Height speed ``M u`` of the rescaled flow at each node."""
    geo = graph_geometry(M)
    return -geo.slope * geo.mean_curvature + 0.5 * (M.shrinker.radius + M.samples)


def normal_speed(M: RadialGraph) -> np.ndarray:
    geo = graph_geometry(M)
    return -geo.mean_curvature + 0.5 * geo.support


def q_remainder(M: RadialGraph) -> np.ndarray:
    """Nonlinear part ``Q u = M u - L u``."""
    return rescaled_velocity(M) - drift_operator(M.samples, M.grid)


def q_bound_constant(M: RadialGraph) -> float:
    """Smallest ``C`` with ``|Qu| <= C (|u|+|grad u|)^2 + C (|u|+|grad u|) |Hess u|`` at every node."""
    q = np.abs(q_remainder(M))
    grad, hess = M.grid.derivatives(M.samples)
    R = M.shrinker.radius
    first = np.abs(M.samples) + np.sqrt(np.sum(grad**2, axis=0)) / R
    second = np.sqrt(np.sum(hess**2, axis=(0, 1))) / R**2
    denom = first**2 + first * second
    live = denom > 0
    if not np.any(live):
        return 0.0
    return float(np.max(q[live] / denom[live]))


def dissipation(M: RadialGraph) -> float:
    """``int_M |H + x^perp/2|^2 rho``, the rate of Gaussian-area loss."""
    geo = graph_geometry(M)
    v = -geo.mean_curvature + 0.5 * geo.support
    n = M.shrinker.n
    r = M.shrinker.radius + M.samples
    rho = (4 * np.pi) ** (-n / 2) * np.exp(-r * r / 4)
    return float(np.sum(M.grid.unit_weights * geo.area_element * rho * v * v))


def default_c0(shrinker) -> float:
    return 0.2 * shrinker.radius


def distance(M: RadialGraph, c0: float | None = None) -> float:
    """Gaussian L2 distance to the shrinker, or ``inf`` outside the small-graph regime.

    The regime is ``sup|u| + sup|grad u| + sup|Hess u| <= c0``.
    """
    c0 = default_c0(M.shrinker) if c0 is None else c0
    if not np.all(np.isfinite(M.samples)) or np.min(M.samples) <= -M.shrinker.radius or proxy_norm(M) > c0:
        return INFINITE
    w = M.node_weights * M.shrinker.weight
    return math.sqrt(float(np.sum(w * M.samples**2)))


def unstable_fraction(M: RadialGraph) -> float:
    """Share of ``D^2`` carried by modes with negative eigenvalue (degree <= 1)."""
    u = M.samples
    total = float(np.sum(M.node_weights * u * u))
    if total == 0:
        return 0.0
    low = M.grid.lowpass(u, 1)
    return float(np.sum(M.node_weights * low * low)) / total


@dataclass(frozen=True, eq=False)
class FlowState:
    graph: RadialGraph
    tau: float
    distance: float
    excess: float

    @classmethod
    def of(cls, graph: RadialGraph, tau: float = 0.0, c0: float | None = None) -> "FlowState":
        d = distance(graph, c0)
        return cls(graph, float(tau), d, excess(graph) if math.isfinite(d) else _or_nan(excess, graph))

    @property
    def is_small(self) -> bool:
        return math.isfinite(self.distance)


@dataclass(frozen=True)
class FlowSettings:
    dtau: float = 1e-3
    c0: float | None = None
    excess_tol: float = 1e-8
    max_rejections: int = 5
    dtau_max: float = 0.05


# ---------------------------------------------------------------------------
# ETDRK4


@lru_cache(maxsize=32)
def _etd_coefficients(lin_key: bytes, shape: tuple, h: float):
    lin = np.frombuffer(lin_key).reshape(shape)
    hL = h * lin
    roots = np.exp(2j * np.pi * (np.arange(64) + 0.5) / 64)
    z = hL[..., None] + roots
    ez = np.exp(z)
    E = np.exp(hL)
    E2 = np.exp(hL / 2)
    Qc = h * np.real(np.mean((np.exp(z / 2) - 1) / z, axis=-1))
    f1 = h * np.real(np.mean((-4 - z + ez * (4 - 3 * z + z * z)) / z**3, axis=-1))
    f2 = h * np.real(np.mean((2 + z + ez * (z - 2)) / z**3, axis=-1))
    f3 = h * np.real(np.mean((-4 - 3 * z - z * z + ez * (4 - z)) / z**3, axis=-1))
    return E, E2, Qc, f1, f2, f3


def _etdrk4(graph: RadialGraph, h: float) -> np.ndarray:
    grid = graph.grid
    lin = np.ascontiguousarray(grid.lin_eigs(), dtype=float)
    E, E2, Qc, f1, f2, f3 = _etd_coefficients(lin.tobytes(), lin.shape, h)

    def N(v):
        u = grid.inverse(v)
        return grid.forward(rescaled_velocity(graph.with_samples(u))) - lin * v

    v = grid.forward(graph.samples)
    Nv = N(v)
    a = E2 * v + Qc * Nv
    Na = N(a)
    b = E2 * v + Qc * Na
    Nb = N(b)
    c = E2 * a + Qc * (2 * Nb - Nv)
    Nc = N(c)
    v = E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3
    return grid.inverse(v)


def step(state: FlowState, dtau: float, settings: FlowSettings = FlowSettings(),
         log: dict | None = None) -> FlowState:
    """Advance by ``dtau``; a step that raises the excess beyond tolerance is redone as two halves."""
    if not 0 < dtau <= settings.dtau_max:
        raise InvalidInputError(f"dtau must lie in (0, {settings.dtau_max}], got {dtau}")
    return _step(state, dtau, settings, log, depth=0)


def _step(state, dtau, settings, log, depth):
    u = _etdrk4(state.graph, dtau)
    if not np.all(np.isfinite(u)):
        raise DegenerateGraphError(f"non-finite heights after a step at tau={state.tau}")
    g = state.graph.with_samples(u)
    new_excess = excess(g)
    if new_excess > state.excess + settings.excess_tol:
        if depth >= settings.max_rejections:
            raise StiffnessError(
                f"step at tau={state.tau} rejected {depth} times (excess rose by {new_excess - state.excess:.3e})")
        if log is not None:
            log["rejected"] = log.get("rejected", 0) + 1
        half = _step(state, dtau / 2, settings, log, depth + 1)
        return _step(half, dtau / 2, settings, log, depth + 1)
    if log is not None:
        log["accepted"] = log.get("accepted", 0) + 1
        log["min_dtau"] = min(log.get("min_dtau", dtau), dtau)
    return FlowState(g, state.tau + dtau, distance(g, settings.c0), new_excess)


# ---------------------------------------------------------------------------
# trajectories


TRAJECTORY_COLUMNS = ("tau", "distance", "excess", "gaussian_area", "decay_order", "unstable_fraction")


@dataclass(eq=False)
class Trajectory:
    """Sampled time series of a rescaled flow (or of any distance profile)."""

    taus: np.ndarray
    distances: np.ndarray
    excess: np.ndarray
    gaussian_area: np.ndarray
    dissipation: np.ndarray
    unstable_fraction: np.ndarray
    states: list = field(default_factory=list, repr=False)
    step_log: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float)
        for name in ("distances", "excess", "gaussian_area", "dissipation", "unstable_fraction"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != self.taus.shape:
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {self.taus.shape}")
            setattr(self, name, arr)
        if np.any(np.diff(self.taus) <= 0):
            raise InvalidInputError("trajectory times must be strictly increasing")

    @classmethod
    def from_distances(cls, taus, distances) -> "Trajectory":
        taus = np.asarray(taus, dtype=float)
        nan = np.full(taus.shape, np.nan)
        return cls(taus, distances, nan, nan, nan, nan)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.taus[0]), float(self.taus[-1])

    def __len__(self):
        return len(self.taus)

    def distance_at(self, tau: float) -> float:
        lo, hi = self.span
        if tau < lo - 1e-12 or tau > hi + 1e-12:
            raise WindowError(f"tau={tau} outside trajectory span [{lo}, {hi}]")
        i = int(np.searchsorted(self.taus, tau))
        if i < len(self.taus) and abs(self.taus[i] - tau) <= 1e-12:
            return float(self.distances[i])
        if i > 0 and abs(self.taus[i - 1] - tau) <= 1e-12:
            return float(self.distances[i - 1])
        i = min(max(i, 1), len(self.taus) - 1)
        t0, t1 = self.taus[i - 1], self.taus[i]
        d0, d1 = self.distances[i - 1], self.distances[i]
        if not (math.isfinite(d0) and math.isfinite(d1)):
            return INFINITE
        return float(d0 + (d1 - d0) * (tau - t0) / (t1 - t0))

    @classmethod
    def from_csv(cls, text: str, manifest: dict | None = None) -> "Trajectory":
        """Inverse of :meth:`csv_rows`; dissipation is taken from the manifest if given."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TRAJECTORY_COLUMNS:
            raise InvalidInputError(f"line 1: expected header {','.join(TRAJECTORY_COLUMNS)}")
        cols = {c: [] for c in TRAJECTORY_COLUMNS}
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(TRAJECTORY_COLUMNS):
                raise InvalidInputError(f"line {lineno}: expected {len(TRAJECTORY_COLUMNS)} fields, got {len(row)}")
            for name, cell in zip(TRAJECTORY_COLUMNS, row):
                try:
                    cols[name].append(float(cell) if cell else math.nan)
                except ValueError:
                    raise InvalidInputError(f"line {lineno}, field {name!r}: cannot parse {cell!r}") from None
        if not cols["tau"]:
            raise InvalidInputError("trajectory file has no samples")
        diss = [math.nan] * len(cols["tau"])
        settings, log = {}, {}
        if manifest is not None:
            raw = manifest.get("dissipation")
            if raw is not None:
                if len(raw) != len(diss):
                    raise InvalidInputError(
                        f"manifest field 'dissipation' has {len(raw)} entries, trajectory has {len(diss)}")
                diss = [math.nan if v is None else float(v) for v in raw]
            settings = manifest.get("settings", {})
            log = manifest.get("step_log", {})
        return cls(cols["tau"], cols["distance"], cols["excess"], cols["gaussian_area"], diss,
                   cols["unstable_fraction"], step_log=log, settings=settings)

    def decay_orders(self) -> np.ndarray:
        out = np.full(self.taus.shape, np.nan)
        end = self.taus[-1]
        for i, t in enumerate(self.taus):
            if t + 1 <= end + 1e-12:
                try:
                    out[i] = decay_order(self, t)
                except UndefinedOrderError:
                    pass
        return out

    def csv_rows(self):
        yield TRAJECTORY_COLUMNS
        orders = self.decay_orders()
        for row in zip(self.taus, self.distances, self.excess, self.gaussian_area, orders,
                       self.unstable_fraction):
            yield tuple(_fmt(v) for v in row)

    def manifest(self) -> dict:
        return {
            "schema_version": 1,
            "settings": self.settings,
            "step_log": self.step_log,
            "samples": len(self.taus),
            "dissipation": [_num(v) for v in self.dissipation],
        }


def _fmt(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return "inf"
    return repr(v)


def _num(v):
    v = float(v)
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf"
    return v


def _or_nan(f, g):
    # geometry of a graph outside the small regime may not exist (r <= 0)
    try:
        return f(g)
    except DegenerateGraphError:
        return math.nan


def _record(traj_cols, state: FlowState, settings: FlowSettings):
    g = state.graph
    traj_cols["taus"].append(state.tau)
    traj_cols["distances"].append(state.distance)
    traj_cols["excess"].append(state.excess)
    traj_cols["gaussian_area"].append(_or_nan(gaussian_area, g))
    traj_cols["dissipation"].append(_or_nan(dissipation, g))
    traj_cols["unstable_fraction"].append(unstable_fraction(g))


def run(initial: RadialGraph, tau_end: float, sample_dtau: float,
        settings: FlowSettings = FlowSettings(), keep_states: bool = False) -> Trajectory:
    """Integrate from ``tau = 0`` to ``tau_end``, stopping early if the graph leaves the regime."""
    h = settings.dtau
    every = int(round(sample_dtau / h))
    if every < 1 or abs(every * h - sample_dtau) > 1e-9 * sample_dtau:
        raise InvalidInputError(f"sample_dtau={sample_dtau} must be a multiple of dtau={h}")
    nsteps = int(round(tau_end / h))
    cols = {k: [] for k in ("taus", "distances", "excess", "gaussian_area", "dissipation", "unstable_fraction")}
    states = []
    log: dict = {"accepted": 0, "rejected": 0, "min_dtau": h}
    state = FlowState.of(initial, 0.0, settings.c0)
    _record(cols, state, settings)
    if keep_states:
        states.append(state)
    for k in range(1, nsteps + 1):
        if not state.is_small:
            log["stopped"] = "left small-graph regime"
            break
        state = step(state, h, settings, log)
        state = FlowState(state.graph, k * h, state.distance, state.excess)
        if k % every == 0 or not state.is_small:
            _record(cols, state, settings)
            if keep_states:
                states.append(state)
    traj = Trajectory(**cols, states=states, step_log=log,
                      settings={**asdict(settings), "tau_end": tau_end, "sample_dtau": sample_dtau,
                                "grid": initial.grid.describe(), "n": initial.shrinker.n})
    return traj


def linear_trajectory(a: ModeVector, taus) -> Trajectory:
    """Trajectory of the linearized flow, with distances from the Plancherel sum."""
    taus = np.asarray(taus, dtype=float)
    mus = a.eigenvalues
    c = a.coefficients
    d = np.sqrt(np.sum(c[None, :] ** 2 * np.exp(-2 * np.outer(taus, mus)), axis=1))
    low = a.spectrum.levels <= 1
    num = np.sum(c[None, low] ** 2 * np.exp(-2 * np.outer(taus, mus[low])), axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(d > 0, num / d**2, 0.0)
    nan = np.full(taus.shape, np.nan)
    return Trajectory(taus, d, nan, nan, nan, frac)


# ---------------------------------------------------------------------------
# audits


def decay_order(traj: Trajectory, tau: float) -> float:
    """``log(D(tau) / D(tau + 1))`` with linear interpolation between samples."""
    d0 = traj.distance_at(tau)
    d1 = traj.distance_at(tau + 1)
    if not (math.isfinite(d0) and math.isfinite(d1)) or d0 <= 0 or d1 <= 0:
        raise UndefinedOrderError(f"decay order undefined at tau={tau}: D={d0}, D(+1)={d1}")
    return math.log(d0 / d1)


def monotonicity_audit(traj: Trajectory, tol: float = FlowSettings.excess_tol) -> AuditReport:
    """Compare the centred difference of the Gaussian area with minus the dissipation.

    The verdict is violated when the excess rises by more than ``tol`` between
    consecutive samples; the defect is reported as a margin, not gated.
    """
    if len(traj) < 3:
        raise InvalidInputError("monotonicity audit needs at least 3 samples")
    t, A, D = traj.taus, traj.excess, traj.dissipation
    if np.any(np.isnan(A)) or np.any(np.isnan(D)):
        raise InvalidInputError("trajectory carries no excess/dissipation data")
    dA = (A[2:] - A[:-2]) / (t[2:] - t[:-2])
    defect = np.abs(dA + D[1:-1])
    increases = np.diff(A)
    worst = float(np.max(defect))
    q = {"defect": worst, "max_excess_increase": float(np.max(increases)),
         "interior_samples": int(defect.size), "max_dissipation": float(np.max(D))}
    verdict = VIOLATED if q["max_excess_increase"] > tol else HOLDS
    return AuditReport("monotonicity", True, verdict, -worst, q)


def semicontinuity_audit(traj: Trajectory, epsilon: float) -> AuditReport:
    """Empirical ``C0`` with ``D(tau + s) <= C0 D(tau)`` for ``s`` in ``[0, 1]``.

    Only start times where ``D(tau)`` and the unit-time excess drop are below
    ``epsilon`` are used.
    """
    t, D, A = traj.taus, traj.distances, traj.excess
    end = t[-1]
    best, used = 0.0, 0
    for i, tau in enumerate(t):
        if tau + 1 > end + 1e-12 or not (0 < D[i] < epsilon):
            continue
        j = int(np.searchsorted(t, tau + 1 - 1e-12))
        drop = A[i] - A[j] if not np.isnan(A[i]) else 0.0
        if not drop < epsilon:
            continue
        window = D[i:j + 1]
        if not np.all(np.isfinite(window)):
            continue
        used += 1
        best = max(best, float(np.max(window)) / D[i])
    if used == 0:
        return AuditReport("lemma25", False, HYPOTHESIS_NOT_MET, float("nan"), {"C0": float("nan"), "windows": 0})
    return AuditReport("lemma25", True, HOLDS, float("nan"), {"C0": best, "windows": used})
