"""Round shrinkers, quadrature grids and the geometry of radial graphs.

A radial graph over the round shrinker ``S^n(R)`` is the hypersurface
``{(R + u(w)) w : w in S^n}``.  Everything here is evaluated node-wise on a
spectral quadrature grid: a uniform angular grid on the circle, and a
Gauss-Legendre (latitude) by uniform (longitude) product grid on the 2-sphere.

Sign conventions
----------------
``H`` is the sum of the principal curvatures with respect to the outward
normal, so a round sphere of radius ``r`` has ``H = n / r``.  The rescaled
normal speed is ``-H + <x, nu> / 2``, which vanishes on the shrinker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGraphError,
    DimensionError,
    InvalidInputError,
    UnsupportedGeometryError,
)

SUPPORTED_DIMENSIONS = (1, 2)


def _sphere_area(n: int, radius: float) -> float:
    # |S^n(r)| = 2 pi^{(n+1)/2} / Gamma((n+1)/2) r^n
    return 2.0 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2) * radius**n


@dataclass(frozen=True)
class Shrinker:
    """The round compact self-shrinker ``S^n(sqrt(2n))``."""

    n: int
    radius: float
    second_fundamental_norm_sq: float
    gaussian_area: float

    def __post_init__(self):
        if self.n not in SUPPORTED_DIMENSIONS:
            raise UnsupportedGeometryError(
                f"only round shrinkers with n in {SUPPORTED_DIMENSIONS} are supported, got n={self.n}"
            )
        if not math.isclose(self.radius**2, 2 * self.n, rel_tol=1e-14):
            raise UnsupportedGeometryError(
                f"radius {self.radius!r} is not sqrt(2n); S^{self.n}(r) is a shrinker only for r^2 = 2n"
            )
        if not math.isclose(self.second_fundamental_norm_sq, 0.5, rel_tol=1e-14):
            raise InvalidInputError("|A|^2 of a round shrinker is n / r^2 = 1/2")

    @classmethod
    def round(cls, n: int) -> "Shrinker":
        if n not in SUPPORTED_DIMENSIONS:
            raise UnsupportedGeometryError(
                f"only round shrinkers with n in {SUPPORTED_DIMENSIONS} are supported, got n={n}"
            )
        radius = math.sqrt(2.0 * n)
        area = _sphere_area(n, radius) * (4 * math.pi) ** (-n / 2) * math.exp(-radius**2 / 4)
        return cls(n=n, radius=radius, second_fundamental_norm_sq=n / radius**2, gaussian_area=area)

    @property
    def intrinsic_area(self) -> float:
        return _sphere_area(self.n, self.radius)

    @property
    def rho(self) -> float:
        """Gaussian weight on the shrinker itself (``|x| = R``)."""
        return (4 * math.pi) ** (-self.n / 2) * math.exp(-self.radius**2 / 4)

    @property
    def weight(self) -> float:
        """Unnormalized inner-product weight ``exp(-|x|^2/4)`` on the shrinker."""
        return math.exp(-self.radius**2 / 4)

    def to_dict(self) -> dict:
        return {"n": self.n, "radius": self.radius}


def gaussian_weight(x, n: int) -> float | np.ndarray:
    """Gaussian weight ``(4 pi)^{-n/2} exp(-|x|^2 / 4)``.

    ``x`` is a point (or an array of points along the last axis) in
    ``R^{n+1}``; ``n`` is the intrinsic dimension fixing the normalization.
    """
    x = np.asarray(x, dtype=float)
    sq = np.sum(x * x, axis=-1)
    out = (4 * np.pi) ** (-n / 2) * np.exp(-sq / 4)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# quadrature grids


def normalized_legendre(lmax: int, x: np.ndarray):
    """Orthonormal associated Legendre functions and their theta-derivatives.

    Returns ``P, dP`` of shape ``(lmax+1, lmax+1, len(x))`` indexed ``[m, l, i]``
    with ``int_{-1}^{1} P[m, l]^2 dx = 1`` (no Condon-Shortley phase) and
    ``dP = d/dtheta`` where ``x = cos(theta)``.  Entries with ``l < m`` are zero.
    The derivative formula divides by ``sin(theta)``, so ``x`` must avoid the poles.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(1.0 - x * x)
    P = np.zeros((lmax + 1, lmax + 1, x.size))
    diag = np.full_like(x, 1.0 / math.sqrt(2.0))
    for m in range(lmax + 1):
        if m > 0:
            diag = math.sqrt((2 * m + 1) / (2 * m)) * s * diag
        P[m, m] = diag
        if m + 1 <= lmax:
            P[m, m + 1] = math.sqrt(2 * m + 3) * x * diag
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[m, l] = a * (x * P[m, l - 1] - b * P[m, l - 2])
    dP = np.zeros_like(P)
    for m in range(lmax + 1):
        for l in range(m, lmax + 1):
            term = l * x * P[m, l]
            if l > m:
                term = term - math.sqrt((2 * l + 1) * (l * l - m * m) / (2 * l - 1)) * P[m, l - 1]
            dP[m, l] = term / s
    return P, dP


class _GridBase:
    n: int
    radius: float
    size: int
    unit_weights: np.ndarray
    omega: np.ndarray  # unit directions, shape (size, n+1)
    frame: np.ndarray  # orthonormal tangent frame on the unit sphere, shape (n, size, n+1)

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights in the intrinsic measure of ``S^n(R)``."""
        return self.unit_weights * self.radius**self.n

    def check(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.size,):
            raise DimensionError(f"expected {self.size} grid samples, got shape {u.shape}")
        return u

    def lin_eigs(self) -> np.ndarray:
        """Eigenvalues of ``L`` on the coefficients produced by :meth:`forward`."""
        R2 = self.radius**2
        return -self._degree_eigs() / R2 + self.n / R2 + 0.5

    def lowpass(self, u, degree: int) -> np.ndarray:
        c = self.forward(u)
        c[self._degrees() > degree] = 0.0
        return self.inverse(c)

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f))


class CircleGrid(_GridBase):
    """Uniform grid on the circle of radius ``sqrt(2)``; FFT differentiation."""

    kind = "uniform-circle"

    def __init__(self, size: int, radius: float = math.sqrt(2.0)):
        if size < 16 or size % 2:
            raise InvalidInputError(f"circle grid needs an even size >= 16, got {size}")
        self.n = 1
        self.radius = radius
        self.size = size
        self.theta = 2 * np.pi * np.arange(size) / size
        self.unit_weights = np.full(size, 2 * np.pi / size)
        self.omega = np.stack([np.cos(self.theta), np.sin(self.theta)], axis=-1)
        self.frame = np.stack([-np.sin(self.theta), np.cos(self.theta)], axis=-1)[None]
        self.k = np.arange(size // 2 + 1)

    def describe(self) -> dict:
        return {"kind": self.kind, "size": self.size}

    def _degrees(self):
        return self.k

    def _degree_eigs(self):
        return self.k.astype(float) ** 2

    def forward(self, u) -> np.ndarray:
        return np.fft.rfft(self.check(u))

    def inverse(self, c) -> np.ndarray:
        return np.fft.irfft(c, n=self.size)

    def derivatives(self, u):
        """Gradient ``(1, size)`` and covariant Hessian ``(1, 1, size)`` on the unit circle."""
        c = self.forward(u)
        ik = 1j * self.k
        d1 = ik * c
        d1[-1] = 0.0  # Nyquist mode has no odd derivative
        du = np.fft.irfft(d1, n=self.size)
        ddu = np.fft.irfft(-(self.k**2) * c, n=self.size)
        return du[None], ddu[None, None]


class SphereGrid(_GridBase):
    """Gauss-Legendre x uniform-longitude grid on the sphere of radius 2.

    Samples are stored flattened row-major from an ``(n_lat, n_lon)`` array.
    Functions are band-limited to spherical-harmonic degree ``lmax``.
    """

    kind = "gauss-legendre-sphere"

    def __init__(self, lmax: int, n_lat: int | None = None, n_lon: int | None = None,
                 radius: float = 2.0):
        n_lat = lmax + 1 if n_lat is None else n_lat
        n_lon = 2 * lmax + 2 if n_lon is None else n_lon
        if n_lat < lmax + 1 or n_lon < 2 * lmax + 2:
            raise InvalidInputError("sphere grid too coarse for its degree: need n_lat > lmax, n_lon > 2 lmax + 1")
        if n_lat * n_lon < 16:
            raise InvalidInputError("grid size must be at least 16 nodes")
        self.n = 2
        self.radius = radius
        self.lmax = lmax
        self.n_lat, self.n_lon = n_lat, n_lon
        self.size = n_lat * n_lon
        x, w = np.polynomial.legendre.leggauss(n_lat)
        x, w = x[::-1], w[::-1]  # north to south
        self.x = x
        self.lat_weights = w
        self.theta_lat = np.arccos(x)
        self.phi_lon = 2 * np.pi * np.arange(n_lon) / n_lon
        th, ph = np.meshgrid(self.theta_lat, self.phi_lon, indexing="ij")
        self.theta = th.ravel()
        self.phi = ph.ravel()
        self.unit_weights = np.repeat(w, n_lon) * (2 * np.pi / n_lon)
        st, ct = np.sin(self.theta), np.cos(self.theta)
        sp, cp = np.sin(self.phi), np.cos(self.phi)
        self.omega = np.stack([st * cp, st * sp, ct], axis=-1)
        e_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
        e_phi = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
        self.frame = np.stack([e_theta, e_phi])
        self.P, self.dP = normalized_legendre(lmax, x)
        ls = np.arange(lmax + 1)
        self.m = np.arange(lmax + 1)
        # d^2/dtheta^2 from the associated Legendre equation
        sin = np.sqrt(1 - x * x)
        cot = x / sin
        self.d2P = (-cot * self.dP
                    - (ls[None, :, None] * (ls[None, :, None] + 1)
                       - (self.m[:, None, None] / sin) ** 2) * self.P)
        self.d2P[self.P == 0] = 0.0
        self._sin_lat, self._cot_lat = sin, cot
        self._ls = ls

    def describe(self) -> dict:
        return {"kind": self.kind, "lmax": self.lmax, "n_lat": self.n_lat, "n_lon": self.n_lon}

    def _degrees(self):
        return np.broadcast_to(self._ls[:, None], (self.lmax + 1, self.lmax + 1))

    def _degree_eigs(self):
        l = self._degrees().astype(float)
        return l * (l + 1)

    def _fourier(self, u):
        u = self.check(u).reshape(self.n_lat, self.n_lon)
        return np.fft.rfft(u, axis=1)[:, : self.lmax + 1] / self.n_lon

    def _from_fourier(self, g):
        full = np.zeros((self.n_lat, self.n_lon // 2 + 1), dtype=complex)
        full[:, : self.lmax + 1] = g
        return np.fft.irfft(full * self.n_lon, n=self.n_lon, axis=1).ravel()

    def forward(self, u) -> np.ndarray:
        """Coefficients ``C[l, m]`` (complex, ``m >= 0``) of a band-limited function."""
        g = self._fourier(u)
        return np.einsum("mli,i,im->lm", self.P, self.lat_weights, g)

    def _synth(self, table, c):
        return np.einsum("mli,lm->im", table, c)

    def inverse(self, c) -> np.ndarray:
        return self._from_fourier(self._synth(self.P, c))

    def derivatives(self, u):
        """Gradient ``(2, size)`` and covariant Hessian ``(2, 2, size)`` on the unit sphere.

        Components are taken in the orthonormal frame ``(e_theta, e_phi)``.
        """
        c = self.forward(u)
        im = 1j * self.m
        g_t = self._synth(self.dP, c)
        g_tt = self._synth(self.d2P, c)
        g = self._synth(self.P, c)
        u_t = self._from_fourier(g_t)
        u_p = self._from_fourier(im * g)
        u_tt = self._from_fourier(g_tt)
        u_tp = self._from_fourier(im * g_t)
        u_pp = self._from_fourier(-(self.m**2) * g)
        sin = np.sin(self.theta)
        cot = np.cos(self.theta) / sin
        grad = np.stack([u_t, u_p / sin])
        h12 = (u_tp - cot * u_p) / sin
        h22 = u_pp / sin**2 + cot * u_t
        hess = np.array([[u_tt, h12], [h12, h22]])
        return grad, hess


def make_grid(shrinker: Shrinker, size: int | None = None, lmax: int | None = None):
    """Default quadrature grid for a shrinker.

    ``size`` is the node count on the circle; ``lmax`` the harmonic degree on the sphere.
    """
    if shrinker.n == 1:
        return CircleGrid(256 if size is None else size, shrinker.radius)
    if shrinker.n == 2:
        return SphereGrid(31 if lmax is None else lmax, radius=shrinker.radius)
    raise UnsupportedGeometryError(f"no grid for n={shrinker.n}")


def grid_from_dict(shrinker: Shrinker, d: dict):
    kind = d.get("kind")
    if kind == CircleGrid.kind and shrinker.n == 1:
        return CircleGrid(int(d["size"]), shrinker.radius)
    if kind == SphereGrid.kind and shrinker.n == 2:
        return SphereGrid(int(d["lmax"]), int(d["n_lat"]), int(d["n_lon"]), shrinker.radius)
    raise InvalidInputError(f"grid kind {kind!r} does not match a shrinker with n={shrinker.n}")


# ---------------------------------------------------------------------------
# radial graphs


@dataclass(frozen=True, eq=False)
class RadialGraph:
    """Heights ``u`` of the graph ``(R + u) w`` sampled at the grid nodes."""

    shrinker: Shrinker
    grid: object
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.shape != (self.grid.size,):
            raise DimensionError(f"expected {self.grid.size} samples, got shape {s.shape}")
        if self.grid.n != self.shrinker.n or not math.isclose(self.grid.radius, self.shrinker.radius):
            raise DimensionError("grid does not live on this shrinker")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def zero(cls, shrinker: Shrinker, grid=None) -> "RadialGraph":
        grid = make_grid(shrinker) if grid is None else grid
        return cls(shrinker, grid, np.zeros(grid.size))

    @property
    def node_weights(self) -> np.ndarray:
        return self.grid.weights

    def with_samples(self, u) -> "RadialGraph":
        return RadialGraph(self.shrinker, self.grid, u)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "shrinker": self.shrinker.to_dict(),
            "grid": self.grid.describe(),
            "samples": [float(v) for v in self.samples],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RadialGraph":
        try:
            sh = d["shrinker"]
            shrinker = Shrinker.round(int(sh["n"]))
            if "radius" in sh and not math.isclose(float(sh["radius"]), shrinker.radius, rel_tol=1e-12):
                raise UnsupportedGeometryError(f"radius {sh['radius']} is not a round shrinker radius")
            grid = grid_from_dict(shrinker, d["grid"])
            samples = np.asarray(d["samples"], dtype=float)
        except KeyError as exc:
            raise InvalidInputError(f"radial graph document is missing field {exc}") from None
        return cls(shrinker, grid, samples)


@dataclass(frozen=True, eq=False)
class GraphGeometry:
    """Node-wise geometric data of a radial graph."""

    mean_curvature: np.ndarray
    normal: np.ndarray
    position: np.ndarray
    area_element: np.ndarray  # per unit-sphere measure
    support: np.ndarray  # <x, nu>
    slope: np.ndarray  # sqrt(1 + |grad log r|^2), the graph factor w_u
    slope_sq_minus_one: np.ndarray  # |grad log r|^2, kept separately to avoid cancellation


def _finite(u):
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("graph samples must be finite")


def graph_geometry(M: RadialGraph) -> GraphGeometry:
    """Mean curvature, outward normal, position and area element of ``M``.

    Uses ``psi = log r`` on the unit sphere::

        H = (n - (delta_ij - psi_i psi_j / W^2) psi_ij) / (r W),   W^2 = 1 + |grad psi|^2
        nu = (w - grad psi) / W,   <x, nu> = r / W,   dA = r^n W dw
    """
    grid = M.grid
    u = M.samples
    _finite(u)
    r = M.shrinker.radius + u
    if np.any(r <= 0):
        raise DegenerateGraphError("radial graph passes through the origin (r <= 0)")
    grad, hess = grid.derivatives(u)
    n = M.shrinker.n
    psi1 = grad / r
    psi2 = hess / r - grad[:, None] * grad[None, :] / r**2
    g2 = np.sum(psi1**2, axis=0)
    W2 = 1.0 + g2
    W = np.sqrt(W2)
    trace = np.einsum("iik->k", psi2)
    quad = np.einsum("ik,ijk,jk->k", psi1, psi2, psi1)
    H = (n - trace + quad / W2) / (r * W)
    tang = np.einsum("ik,ikd->kd", psi1, grid.frame)
    normal = (grid.omega - tang) / W[:, None]
    return GraphGeometry(
        mean_curvature=H,
        normal=normal,
        position=r[:, None] * grid.omega,
        area_element=r**n * W,
        support=r / W,
        slope=W,
        slope_sq_minus_one=g2,
    )


def _relative_integrand(M: RadialGraph) -> tuple[np.ndarray, GraphGeometry]:
    """``rho(x) dA_M / (rho_Sigma dA_Sigma) - 1`` per node, computed without cancellation."""
    geo = graph_geometry(M)
    R = M.shrinker.radius
    u = M.samples
    g2 = geo.slope_sq_minus_one
    log_ratio = (M.shrinker.n * np.log1p(u / R)
                 + 0.5 * np.log1p(g2)
                 - u * (2 * R + u) / 4.0)
    return np.expm1(log_ratio), geo


def gaussian_area(M: RadialGraph) -> float:
    """Gaussian area ``int_M rho dH^n`` using the induced area element of the graph."""
    delta, _ = _relative_integrand(M)
    base = M.shrinker.rho * M.node_weights
    return float(np.sum(base) + np.dot(base, delta))


def excess(M: RadialGraph) -> float:
    """Signed excess ``F(M) - F(Sigma)``; exactly zero for ``u = 0``.

    The reference ``F(Sigma)`` is the quadrature on the same grid, which agrees
    with the closed form to rounding.
    """
    delta, _ = _relative_integrand(M)
    return float(np.dot(M.shrinker.rho * M.node_weights, delta))


def proxy_norm(M: RadialGraph) -> float:
    """``sup|u| + sup|grad u| + sup|Hess u|`` with derivatives taken on ``Sigma``."""
    u = M.samples
    _finite(u)
    grad, hess = M.grid.derivatives(u)
    R = M.shrinker.radius
    g = np.sqrt(np.sum(grad**2, axis=0)) / R
    h = np.sqrt(np.sum(hess**2, axis=(0, 1))) / R**2
    return float(np.max(np.abs(u)) + np.max(g) + np.max(h))
