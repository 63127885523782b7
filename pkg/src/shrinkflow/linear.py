"""Linear drift-heat theory on the round shrinker.

A solution of ``(d/ds - L) u = 0`` with initial coefficients ``a_i`` is
``sum_i a_i exp(-mu_i s) phi_i``, so its weighted norm is

    I(u, s)^2 = sum_i a_i^2 exp(-2 mu_i s).

This module evaluates that profile, checks the three-annulus statements on it,
selects the eigenvalue-free gap used by the quantitative three-annulus
estimate, and builds the Galerkin right inverse of ``d/dt - L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    CutoffError,
    DimensionError,
    InsufficientSpectrumError,
    InvalidInputError,
    OutOfContractError,
    SpectralRangeError,
    ZeroSolutionError,
)
from .report import DEGENERATE, HOLDS, HYPOTHESIS_NOT_MET, VIOLATED, AuditReport
from .spectral import ModeVector, Spectrum

_EXP_MAX = 709.0
# relative slack for inequalities that can be saturated exactly by construction
ROUNDING = 1e-12


def evolve_linear(a: ModeVector, s: float) -> ModeVector:
    """Drift-heat flow for time ``s``: ``a_i -> a_i exp(-mu_i s)``."""
    expo = -a.eigenvalues * s
    live = a.coefficients != 0
    log_mag = np.full(a.spectrum.size, -np.inf)
    log_mag[live] = np.log(np.abs(a.coefficients[live])) + expo[live]
    if np.any(log_mag > _EXP_MAX):
        bad = int(np.argmax(log_mag))
        raise SpectralRangeError(
            f"mode {bad} (mu={a.eigenvalues[bad]}) overflows after time {s}", mode=bad)
    out = np.zeros(a.spectrum.size)
    out[live] = np.sign(a.coefficients[live]) * np.exp(log_mag[live])
    return ModeVector(out, a.spectrum)


def log_norm(a: ModeVector, s) -> np.ndarray:
    """``log I(u, s)`` evaluated stably for an array of times."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    c = a.coefficients
    live = c != 0
    if not np.any(live):
        return np.full(s.shape, -np.inf)
    la = 2 * np.log(np.abs(c[live]))
    mus = a.eigenvalues[live]
    return 0.5 * logsumexp(la[None, :] - 2 * np.outer(s, mus), axis=1)


def norm_at(a: ModeVector, s: float) -> float:
    return float(np.exp(log_norm(a, s)[0]))


def single_eigenvalue(a: ModeVector) -> bool:
    live = a.coefficients != 0
    return bool(np.any(live)) and np.unique(a.eigenvalues[live]).size == 1


@dataclass(frozen=True, eq=False)
class LinearEvolution:
    initial: ModeVector
    times: np.ndarray
    profile: np.ndarray
    log_profile: np.ndarray

    @property
    def is_zero(self) -> bool:
        return not np.any(self.initial.coefficients)

    def second_differences(self) -> np.ndarray:
        if self.is_zero:
            return np.zeros(max(len(self.times) - 2, 0))
        return np.diff(self.log_profile, 2)


def l2_profile(a: ModeVector, s_grid) -> LinearEvolution:
    s = np.asarray(s_grid, dtype=float)
    if s.size == 0:
        raise InvalidInputError("empty time grid")
    if np.any(np.diff(s) < 0):
        raise InvalidInputError("time grid must be sorted")
    lp = log_norm(a, s)
    return LinearEvolution(a, s, np.exp(lp), lp)


# ---------------------------------------------------------------------------
# three-annulus lemma


def growth_threshold(spectrum: Spectrum) -> float:
    """Smallest positive growth rate ``min{-mu : mu < 0}``.

    For ``0 < delta_1`` below this value no single eigenmode grows at exactly
    rate ``delta_1``, which is what forces ``delta_2 > delta_1``.
    """
    neg = spectrum.eigenvalues[spectrum.eigenvalues < 0]
    if neg.size == 0:
        raise InsufficientSpectrumError("spectrum has no growing modes")
    return float(np.min(-neg))


def dichotomy_delta(spectrum: Spectrum) -> float:
    """Certified ``delta`` for the forward/backward growth dichotomy.

    With every eigenvalue satisfying ``|mu| >= g``,
    ``I(t+1)^2 + I(t-1)^2 >= 2 cosh(2g) I(t)^2``, so one side grows by at least
    ``exp(log(cosh(2g)) / 2)``.  Equal weight on ``mu = g`` and ``mu = -g``
    attains the bound.
    """
    nz = np.abs(spectrum.eigenvalues[spectrum.eigenvalues != 0])
    return 0.5 * math.log(math.cosh(2 * float(np.min(nz))))


def _nonzero(a: ModeVector):
    if not np.any(a.coefficients):
        raise ZeroSolutionError("the zero solution has no growth rate")


def three_annulus_check(a: ModeVector, t: float, delta1: float) -> AuditReport:
    """If ``I(t+1) >= e^{d1} I(t)`` then ``I(t+2) >= e^{d2} I(t+1)`` with ``d2 > d1``."""
    _nonzero(a)
    delta = growth_threshold(a.spectrum)
    if not 0 < delta1 < delta:
        raise InvalidInputError(f"delta1 must lie in (0, {delta}), got {delta1}")
    l0, l1, l2 = log_norm(a, [t, t + 1, t + 2])
    step1, step2 = l1 - l0, l2 - l1
    q = {"delta": delta, "delta1": delta1, "delta2": step2, "first_step": step1}
    if step1 < delta1:
        return AuditReport("three-annulus", False, HYPOTHESIS_NOT_MET, float("nan"), q)
    ok = step2 > delta1
    return AuditReport("three-annulus", True, HOLDS if ok else VIOLATED, step2 - delta1, q)


def zero_mode_dichotomy(a: ModeVector, t: float, delta: float | None = None) -> AuditReport:
    """``I(t+1) >= e^delta I(t)`` or ``I(t-1) >= e^delta I(t)``."""
    _nonzero(a)
    spec = a.spectrum
    delta = dichotomy_delta(spec) if delta is None else delta
    zero_modes = spec.eigenvalues == 0
    hyp = not np.any(a.coefficients[zero_modes])
    lm, l0, lp = log_norm(a, [t - 1, t, t + 1])
    fwd, bwd = lp - l0, lm - l0
    q = {"delta": delta, "forward": fwd, "backward": bwd,
         "branch": "forward" if fwd >= bwd else "backward"}
    if not hyp:
        return AuditReport("dichotomy", False, HYPOTHESIS_NOT_MET, float("nan"), q)
    best = max(fwd, bwd)
    # exact saturation (balanced +-g pair) is legitimate; allow rounding
    ok = best >= delta * (1 - ROUNDING)
    return AuditReport("dichotomy", True, HOLDS if ok else VIOLATED, best - delta, q)


# ---------------------------------------------------------------------------
# quantitative three-annulus estimate


@dataclass(frozen=True)
class GapChoice:
    """Scale ``L`` in ``[L0/2, L0]`` keeping ``ln(2 C0)/L`` away from the spectrum."""

    L0: float
    L: float
    C0: float
    B: float
    gap: float
    C1: float
    m: float
    C1_effective: float
    cosh_gain: float  # cosh(2 L gap) - 1

    @property
    def threshold(self) -> float:
        return math.log(2 * self.C0) / self.L

    @property
    def bound(self) -> float:
        return 1.0 - self.L**self.B

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in
                ("L0", "L", "C0", "B", "gap", "C1", "m", "C1_effective", "cosh_gain")}


def choose_gap_L(spectrum: Spectrum, L0: float, C0: float, candidates: int = 10_000) -> GapChoice:
    if not 0 < L0 < 0.5:
        raise InvalidInputError(f"L0 must lie in (0, 1/2), got {L0}")
    if not C0 > 1:
        raise InvalidInputError(f"C0 must exceed 1, got {C0}")
    mus = np.unique(spectrum.eigenvalues)
    top_threshold = 2 * math.log(2 * C0) / L0
    if mus[-1] <= top_threshold:
        raise InsufficientSpectrumError(
            f"thresholds reach {top_threshold:.3f} but the largest resolved eigenvalue is {mus[-1]}")
    Ls = np.linspace(L0 / 2, L0, candidates)
    x = math.log(2 * C0) / Ls
    pos = np.searchsorted(mus, x)
    below = np.abs(x - mus[np.clip(pos - 1, 0, mus.size - 1)])
    above = np.abs(mus[np.clip(pos, 0, mus.size - 1)] - x)
    gaps = np.minimum(below, above)
    i = int(np.argmax(gaps))
    L, gap = float(Ls[i]), float(gaps[i])
    C1, m = spectrum.weyl_constants
    required = L ** (m - 1) / C1
    if gap < required:
        raise InsufficientSpectrumError(
            f"best gap {gap:.3g} at L={L:.4f} is below the Weyl certificate {required:.3g}")
    kappa = math.cosh(2 * L * gap) - 1.0
    C1_eff = max(C1, L**m / kappa)
    target = 1.0 / (1.0 + L**m / C1_eff)
    B_min = math.log(1.0 - math.sqrt(target)) / math.log(L)
    B = B_min + 0.01
    return GapChoice(L0=L0, L=L, C0=C0, B=B, gap=gap, C1=C1, m=m,
                     C1_effective=C1_eff, cosh_gain=kappa)


def cosh_sum(a: ModeVector, L: float, C0: float) -> float:
    """``sum a_j^2 e^{-2 mu_j L} cosh(2 mu_j L - ln 4 C0^2)``, evaluated without overflow."""
    c2 = a.coefficients**2
    mus = a.eigenvalues
    k = math.log(4 * C0 * C0)
    with np.errstate(under="ignore"):
        return float(0.5 * np.sum(c2 * (math.exp(-k) + np.exp(np.minimum(-4 * mus * L + k, _EXP_MAX)))))


def quantitative_three_annulus(a: ModeVector, choice: GapChoice) -> AuditReport:
    """If ``I(0) <= 2 C0`` and ``I(2L) <= 1/(2 C0)`` then ``I(L) <= 1 - L^B``."""
    L, C0 = choice.L, choice.C0
    if not np.any(a.coefficients):
        return AuditReport("quantitative-three-annulus", True, HOLDS, choice.bound,
                           {"I0": 0.0, "IL": 0.0, "I2L": 0.0, "cosh_sum": 0.0, "bound": choice.bound})
    i0, iL, i2L = np.exp(log_norm(a, [0.0, L, 2 * L]))
    q = {"I0": i0, "IL": iL, "I2L": i2L, "bound": choice.bound}
    hyp = i0 <= 2 * C0 * (1 + ROUNDING) and i2L <= (1 + ROUNDING) / (2 * C0)
    if not hyp:
        return AuditReport("quantitative-three-annulus", False, HYPOTHESIS_NOT_MET, float("nan"), q)
    cs = cosh_sum(a, L, C0)
    q["cosh_sum"] = cs
    margin = choice.bound - iL
    ok = margin > 0 and cs <= 1 + ROUNDING
    return AuditReport("quantitative-three-annulus", True, HOLDS if ok else VIOLATED, margin, q)


def admissible_scale(a: ModeVector, choice: GapChoice) -> ModeVector:
    """Rescale ``a`` so that the tighter of the two hypotheses holds with equality."""
    i0, i2L = np.exp(log_norm(a, [0.0, 2 * choice.L]))
    s = min(2 * choice.C0 / i0, 1.0 / (2 * choice.C0 * i2L))
    return ModeVector(a.coefficients * s, a.spectrum)


# ---------------------------------------------------------------------------
# Galerkin right inverse of d/dt - L


@dataclass(frozen=True, eq=False)
class ModeSeries:
    """Mode coefficients sampled on a uniform time grid starting at 0."""

    times: np.ndarray
    coefficients: np.ndarray  # (len(times), modes)
    spectrum: Spectrum

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim != 2 or c.shape[0] != t.size:
            raise DimensionError(f"coefficients shape {c.shape} does not match {t.size} times")
        if t.size < 5 or t[0] != 0 or not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-9, atol=0):
            raise InvalidInputError("times must be a uniform grid starting at 0 with at least 5 points")
        if c.shape[1] > self.spectrum.size:
            raise CutoffError(
                f"source has {c.shape[1]} modes; the spectrum resolves only {self.spectrum.size}")
        if c.shape[1] < self.spectrum.size:
            c = np.pad(c, ((0, 0), (0, self.spectrum.size - c.shape[1])))
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "coefficients", c)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.coefficients, axis=1)

    def csv_rows(self):
        yield ("t", "index", "coefficient")
        for t, row in zip(self.times, self.coefficients):
            for i, c in enumerate(row):
                if c != 0:
                    yield (repr(float(t)), i, repr(float(c)))


def sample_source(spectrum: Spectrum, func, t_end: float = 1.0, dt: float = 1e-3) -> ModeSeries:
    """Tabulate ``func(t) -> coefficient array`` on ``0, dt, ..., t_end``."""
    steps = int(round(t_end / dt))
    times = np.arange(steps + 1) * dt
    return ModeSeries(times, np.array([func(t) for t in times]), spectrum)


def _product_weights(mus: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Weights of ``a_k, a_{k+1}`` in ``int_0^dt e^{-mu (dt - s)} a(s) ds`` for linear ``a``."""
    z = mus * dt
    one_minus_E = -np.expm1(-z)
    E = 1.0 - one_minus_E
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    w0 = np.where(small, 0.5 - z / 3 + z * z / 8 - z**3 / 30,
                  (one_minus_E - zs * E) / zs**2)
    w1 = np.where(small, 0.5 - z / 6 + z * z / 24 - z**3 / 120,
                  (zs - one_minus_E) / zs**2)
    return dt * w0, dt * w1


def duhamel_coefficients(mus, a: np.ndarray, dt: float) -> np.ndarray:
    """``b_i(t) = e^{-mu_i t} int_0^t e^{mu_i s} a_i(s) ds`` on a uniform grid.

    The source is interpolated linearly between samples and the exponential is
    integrated exactly (product trapezoidal rule), so sources that are linear
    in time are reproduced to rounding.  ``mu_i = 0`` reduces to the ordinary
    trapezoidal integral of ``a_i``.
    """
    mus = np.asarray(mus, dtype=float)
    E = np.exp(-mus * dt)
    w0, w1 = _product_weights(mus, dt)
    b = np.zeros_like(a)
    for k in range(a.shape[0] - 1):
        b[k + 1] = E * b[k] + w0 * a[k] + w1 * a[k + 1]
    return b


@dataclass(frozen=True, eq=False)
class DuhamelResult:
    solution: ModeSeries
    residual: np.ndarray  # ||(d/dt - L) w - f|| at interior times t_2 .. t_{N-2}
    bound_constant: float  # sup_t ||w(t)|| / (t sup_{s<=t} ||f(s)||)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if self.residual.size else 0.0


def duhamel_inverse(f: ModeSeries, t_end: float | None = None) -> DuhamelResult:
    """Solve ``(d/dt - L) w = f``, ``w(0) = 0`` mode by mode on ``[0, t_end]``."""
    t_end = float(f.times[-1]) if t_end is None else float(t_end)
    if t_end > 1.0 + 1e-12:
        raise OutOfContractError(f"the right inverse is only used for t <= 1, got t_end={t_end}")
    keep = f.times <= t_end + 1e-12
    times, a = f.times[keep], f.coefficients[keep]
    mus = f.spectrum.eigenvalues
    dt = f.dt
    b = duhamel_coefficients(mus, a, dt)
    # fourth-order central differences at interior times
    db = (b[:-4] - 8 * b[1:-3] + 8 * b[3:-1] - b[4:]) / (12 * dt)
    resid = np.linalg.norm(db + mus * b[2:-2] - a[2:-2], axis=1)
    fn = np.maximum.accumulate(np.linalg.norm(a, axis=1))
    wn = np.linalg.norm(b, axis=1)
    live = (times > 0) & (fn > 0)
    C = float(np.max(wn[live] / (times[live] * fn[live]))) if np.any(live) else 0.0
    return DuhamelResult(ModeSeries(times, b, f.spectrum), resid, C)


# ---------------------------------------------------------------------------
# randomized batteries


def random_mode_vector(spectrum: Spectrum, rng: np.random.Generator, max_level: int = 8) -> ModeVector:
    """Random band-limited coefficients on a random subset of low levels."""
    levels = spectrum.levels
    top = int(rng.integers(1, max_level + 1))
    pool = np.flatnonzero(levels <= top)
    keep = pool[rng.random(pool.size) < 0.6]
    if keep.size == 0:
        keep = rng.choice(pool, size=1)
    a = np.zeros(spectrum.size)
    a[keep] = rng.standard_normal(keep.size) / (1.0 + levels[keep])
    return ModeVector(a, spectrum)


def random_two_mode(spectrum: Spectrum, rng: np.random.Generator, max_level: int = 6) -> ModeVector:
    pool = np.flatnonzero(spectrum.levels <= max_level)
    i, j = rng.choice(pool, size=2, replace=False)
    a = np.zeros(spectrum.size)
    a[i], a[j] = rng.standard_normal(2)
    return ModeVector(a, spectrum)


def straddling_vector(spectrum: Spectrum, choice: GapChoice, rng: np.random.Generator) -> ModeVector:
    """Two modes on either side of ``ln(2 C0)/L`` with random weights."""
    mus = spectrum.eigenvalues
    x = choice.threshold
    lo = np.flatnonzero(mus < x)
    hi = np.flatnonzero(mus > x)
    a = np.zeros(spectrum.size)
    a[lo[-1]] = rng.uniform(0.1, 1.0)
    a[hi[0]] = rng.uniform(0.1, 1.0)
    return ModeVector(a, spectrum)


def log_convexity_battery(spectrum: Spectrum, trials: int, seed: int,
                          s_grid=None) -> dict:
    rng = np.random.default_rng(seed)
    s_grid = np.round(np.arange(0, 2.0 + 1e-9, 0.05), 12) if s_grid is None else s_grid
    worst = math.inf
    mismatches = 0
    for _ in range(trials):
        if rng.random() < 0.2:
            lvl = int(rng.integers(0, 6))
            idx = np.flatnonzero(spectrum.levels == lvl)
            a = np.zeros(spectrum.size)
            a[idx] = rng.standard_normal(idx.size)
            a = ModeVector(a, spectrum)
        else:
            a = random_mode_vector(spectrum, rng)
        d2 = l2_profile(a, s_grid).second_differences()
        worst = min(worst, float(np.min(d2)))
        flat = bool(np.all(np.abs(d2) <= 1e-10))
        if flat != single_eigenvalue(a):
            mismatches += 1
    return {"trials": trials, "min_second_difference": worst,
            "linearity_mismatches": mismatches,
            "violations": int(worst < -1e-10) + mismatches}


def dichotomy_battery(spectrum: Spectrum, trials: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    delta = dichotomy_delta(spectrum)
    violations, worst = 0, math.inf
    for _ in range(trials):
        a = random_mode_vector(spectrum, rng)
        rep = zero_mode_dichotomy(a, float(rng.uniform(-2, 2)), delta)
        violations += rep.violated
        worst = min(worst, rep.margin)
    return {"trials": trials, "delta": delta, "min_margin": worst, "violations": violations}


def three_annulus_battery(spectrum: Spectrum, trials: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    delta = growth_threshold(spectrum)
    tested = violations = 0
    worst = math.inf
    for _ in range(trials):
        a = random_two_mode(spectrum, rng)
        rep = three_annulus_check(a, float(rng.uniform(-2, 2)), float(rng.uniform(1e-3, delta * (1 - 1e-3))))
        if rep.hypotheses:
            tested += 1
            violations += rep.violated
            worst = min(worst, rep.margin)
    return {"trials": trials, "delta": delta, "hypothesis_met": tested,
            "min_margin": worst, "violations": violations}


def prop24_battery(spectrum: Spectrum, C0_values, L0_values, trials: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    settings = []
    total = 0
    for C0 in C0_values:
        for L0 in L0_values:
            choice = choose_gap_L(spectrum, L0, C0)
            bad = cosh_bad = 0
            worst = math.inf
            for t in range(trials):
                r = t % 3
                if r == 0:
                    a = straddling_vector(spectrum, choice, rng)
                elif r == 1:
                    a = random_two_mode(spectrum, rng, max_level=12)
                else:
                    a = random_mode_vector(spectrum, rng, max_level=12)
                a = admissible_scale(a, choice)
                rep = quantitative_three_annulus(a, choice)
                if not rep.hypotheses or rep.violated:
                    bad += 1
                if rep.quantities.get("cosh_sum", 0.0) > 1 + ROUNDING:
                    cosh_bad += 1
                worst = min(worst, rep.margin)
            total += bad + cosh_bad
            settings.append({"C0": C0, "L0": L0, "choice": choice.to_dict(), "trials": trials,
                             "violations": bad, "cosh_violations": cosh_bad, "min_margin": worst})
    return {"settings": settings, "violations": total}


def duhamel_battery(spectrum: Spectrum, trials: int, seed: int, dt: float = 1e-3,
                    max_level: int | None = None) -> dict:
    """Bound constant of the right inverse over random smooth sources on all resolved modes."""
    rng = np.random.default_rng(seed)
    levels = spectrum.levels
    max_level = int(levels.max()) if max_level is None else max_level
    sel = np.flatnonzero(levels <= max_level)
    worst_C = 0.0
    for _ in range(trials):
        amp = np.zeros(spectrum.size)
        amp[sel] = rng.standard_normal(sel.size) / (1.0 + levels[sel]) ** 2
        freq = np.zeros(spectrum.size)
        freq[sel] = rng.uniform(0, 2 * np.pi, sel.size)
        phase = np.zeros(spectrum.size)
        phase[sel] = rng.uniform(0, 2 * np.pi, sel.size)
        f = sample_source(spectrum, lambda t: amp * np.cos(freq * t + phase), 1.0, dt)
        worst_C = max(worst_C, duhamel_inverse(f, 1.0).bound_constant)
    return {"trials": trials, "bound_constant": worst_C}
