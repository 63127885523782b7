"""Eigentheory of the drift operator ``L = Delta - x.grad/2 + |A|^2 + 1/2``.

On the round shrinker the eigenfunctions of ``-L`` are Fourier modes (circle)
or spherical harmonics (2-sphere), orthonormal for the unnormalized weight
``exp(-|x|^2/4)``:

=========  ==========================  ============
shrinker   eigenvalue of level ``k``    multiplicity
=========  ==========================  ============
S^1(√2)    k^2/2 - 1                    1, 2, 2, ...
S^2(2)     k(k+1)/4 - 1                 2k + 1
=========  ==========================  ============

Within a level, modes are ordered by harmonic index ``m`` and then parity
(cosine before sine).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    InsufficientSpectrumError,
    InvalidInputError,
    UnsupportedGeometryError,
)
from .geometry import CircleGrid, Shrinker, SphereGrid, make_grid

DEFAULT_CUTOFF = {1: 64, 2: 32}
WEYL_OFFSET = 2.0


def level_eigenvalue(n: int, k: int) -> float:
    if n == 1:
        return k * k / 2.0 - 1.0
    if n == 2:
        return k * (k + 1) / 4.0 - 1.0
    raise UnsupportedGeometryError(f"no closed-form spectrum for n={n}")


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues ``mu_1 <= mu_2 <= ...`` of ``-L`` with sampled eigenfunctions."""

    shrinker: Shrinker
    grid: object
    cutoff: int
    eigenvalues: np.ndarray
    labels: tuple  # (level, m, parity) per mode
    basis: np.ndarray = field(repr=False)  # (nodes, modes)
    weyl_constants: tuple  # (C1, m)
    weyl_offset: float = WEYL_OFFSET

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    @property
    def levels(self) -> np.ndarray:
        return np.array([lab[0] for lab in self.labels])

    def distinct(self) -> list[tuple[float, int]]:
        out: list[tuple[float, int]] = []
        for mu in self.eigenvalues:
            if out and out[-1][0] == mu:
                out[-1] = (mu, out[-1][1] + 1)
            else:
                out.append((float(mu), 1))
        return out

    def index(self, level: int, m: int = 0, parity: str = "cos") -> int:
        """Mode index of a labelled eigenfunction."""
        try:
            return self.labels.index((level, m, parity))
        except ValueError:
            raise InvalidInputError(f"no mode {(level, m, parity)} below cutoff") from None

    def to_dict(self) -> dict:
        C1, m = self.weyl_constants
        return {
            "schema_version": 1,
            "shrinker": self.shrinker.to_dict(),
            "cutoff": self.cutoff,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "levels": [{"eigenvalue": v, "multiplicity": k} for v, k in self.distinct()],
            "weyl": {"C1": C1, "m": m, "offset": self.weyl_offset},
        }


@dataclass(frozen=True, eq=False)
class ModeVector:
    """Coefficients of a function in the eigenbasis of a :class:`Spectrum`."""

    coefficients: np.ndarray
    spectrum: Spectrum

    def __post_init__(self):
        a = np.array(self.coefficients, dtype=float)
        if a.shape != (self.spectrum.size,):
            raise DimensionError(f"expected {self.spectrum.size} coefficients, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("mode coefficients must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "coefficients", a)

    @classmethod
    def zeros(cls, spectrum: Spectrum) -> "ModeVector":
        return cls(np.zeros(spectrum.size), spectrum)

    @classmethod
    def unit(cls, spectrum: Spectrum, i: int, value: float = 1.0) -> "ModeVector":
        a = np.zeros(spectrum.size)
        a[i] = value
        return cls(a, spectrum)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.spectrum.eigenvalues

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def csv_rows(self):
        yield ("index", "eigenvalue", "coefficient")
        for i, (mu, a) in enumerate(zip(self.spectrum.eigenvalues, self.coefficients)):
            yield (i, repr(float(mu)), repr(float(a)))


# ---------------------------------------------------------------------------
# construction


def _circle_basis(grid: CircleGrid, cutoff: int):
    if cutoff - 1 >= grid.size // 2:
        raise InsufficientSpectrumError(
            f"{cutoff} levels need more than {2 * (cutoff - 1)} circle nodes, grid has {grid.size}")
    cols, labels = [np.full(grid.size, 1 / math.sqrt(2 * math.pi))], [(0, 0, "cos")]
    for k in range(1, cutoff):
        cols.append(np.cos(k * grid.theta) / math.sqrt(math.pi))
        labels.append((k, k, "cos"))
        cols.append(np.sin(k * grid.theta) / math.sqrt(math.pi))
        labels.append((k, k, "sin"))
    return cols, labels


def _sphere_basis(grid: SphereGrid, cutoff: int):
    lmax = cutoff - 1
    if lmax > grid.lmax:
        raise InsufficientSpectrumError(
            f"{cutoff} levels need a sphere grid of degree {lmax}, grid has degree {grid.lmax}")
    cols, labels = [], []
    lat = np.repeat(np.arange(grid.n_lat), grid.n_lon)
    for l in range(lmax + 1):
        for m in range(l + 1):
            p = grid.P[m, l][lat]
            if m == 0:
                cols.append(p / math.sqrt(2 * math.pi))
                labels.append((l, 0, "cos"))
            else:
                cols.append(p * np.cos(m * grid.phi) / math.sqrt(math.pi))
                labels.append((l, m, "cos"))
                cols.append(p * np.sin(m * grid.phi) / math.sqrt(math.pi))
                labels.append((l, m, "sin"))
    return cols, labels


def build_spectrum(shrinker: Shrinker, cutoff: int | None = None, grid=None) -> Spectrum:
    """Closed-form spectrum of ``-L`` with eigenfunctions sampled on ``grid``.

    ``cutoff`` counts distinct eigenvalue levels (at least 4).
    """
    if shrinker.n not in (1, 2):
        raise UnsupportedGeometryError(f"no closed-form spectrum for n={shrinker.n}")
    cutoff = DEFAULT_CUTOFF[shrinker.n] if cutoff is None else int(cutoff)
    if cutoff < 4:
        raise InvalidInputError(f"cutoff must retain at least 4 eigenvalue levels, got {cutoff}")
    if grid is None:
        grid = make_grid(shrinker, lmax=max(cutoff - 1, 8)) if shrinker.n == 2 else make_grid(shrinker)
    if shrinker.n == 1:
        cols, labels = _circle_basis(grid, cutoff)
    else:
        cols, labels = _sphere_basis(grid, cutoff)
    scale = math.sqrt(1.0 / (shrinker.weight * shrinker.radius**shrinker.n))
    basis = np.stack(cols, axis=1) * scale
    basis.setflags(write=False)
    mus = np.array([level_eigenvalue(shrinker.n, lab[0]) for lab in labels])
    mus.setflags(write=False)
    C1, m = weyl_fit(mus, shrinker.n)
    return Spectrum(shrinker, grid, cutoff, mus, tuple(labels), basis, (C1, m))


# ---------------------------------------------------------------------------
# operators


def _grid_of(spectrum: Spectrum, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (spectrum.grid.size,):
        raise DimensionError(f"grid function has shape {u.shape}, spectrum grid has {spectrum.grid.size} nodes")
    return u


def inner(u, v, spectrum: Spectrum) -> float:
    """Weighted inner product ``int_Sigma u v exp(-|x|^2/4)``."""
    w = spectrum.grid.weights * spectrum.shrinker.weight
    return float(np.sum(w * _grid_of(spectrum, u) * _grid_of(spectrum, v)))


def weighted_norm(u, spectrum: Spectrum) -> float:
    return math.sqrt(max(inner(u, u, spectrum), 0.0))


def drift_term(u, grid) -> np.ndarray:
    """``x . grad_Sigma u`` evaluated in ambient coordinates."""
    grad, _ = grid.derivatives(u)
    R = grid.radius
    tangent = np.einsum("ik,ikd->kd", grad / R, grid.frame)
    position = R * grid.omega
    return np.einsum("kd,kd->k", position, tangent)


def laplacian(u, grid) -> np.ndarray:
    """Intrinsic Laplacian on ``S^n(R)`` (trace of the covariant Hessian)."""
    _, hess = grid.derivatives(u)
    return np.einsum("iik->k", hess) / grid.radius**2


def drift_operator(u, grid) -> np.ndarray:
    """``L u`` on any shrinker grid; ``|A|^2 = n / R^2`` for the round sphere."""
    A2 = grid.n / grid.radius**2
    return laplacian(u, grid) - 0.5 * drift_term(u, grid) + (A2 + 0.5) * u


def apply_L(u, spectrum: Spectrum) -> np.ndarray:
    """``Delta u - x.grad u / 2 + |A|^2 u + u / 2`` on the spectrum's grid."""
    return drift_operator(_grid_of(spectrum, u), spectrum.grid)


def project(u, spectrum: Spectrum) -> ModeVector:
    """Plancherel coefficients ``a_i = <u, phi_i>``."""
    u = _grid_of(spectrum, u)
    w = spectrum.grid.weights * spectrum.shrinker.weight
    return ModeVector(spectrum.basis.T @ (w * u), spectrum)


def synthesize(a: ModeVector) -> np.ndarray:
    return a.spectrum.basis @ a.coefficients


# ---------------------------------------------------------------------------
# Weyl counting


def weyl_fit(eigenvalues, n: int) -> tuple[float, float]:
    """Tightest ``C1`` with ``#{mu_j <= N} <= C1 N^m`` for ``1 < N <= mu_max``.

    The exponent is fixed at ``m = n/2 + 1/2``.  The supremum of the ratio is
    approached from the right at ``N = 1`` or attained at an eigenvalue.
    """
    mus = np.sort(np.asarray(eigenvalues, dtype=float))
    m = n / 2 + 0.5
    candidates = [1.0] + [float(v) for v in np.unique(mus) if v > 1.0]
    best = 0.0
    for N in candidates:
        count = np.searchsorted(mus, N, side="right")
        best = max(best, count / N**m)
    return float(best), float(m)


def weyl_count(spectrum: Spectrum, N: float) -> int:
    """Number of eigenvalues ``mu_j <= N`` (with multiplicity)."""
    mus = spectrum.eigenvalues
    if N > mus[-1]:
        raise InsufficientSpectrumError(
            f"N={N} exceeds the largest resolved eigenvalue {mus[-1]}; raise the cutoff")
    return int(np.searchsorted(mus, N, side="right"))
