import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigh

from shrinkflow.errors import DimensionError, InsufficientSpectrumError, InvalidInputError, UnsupportedGeometryError
from shrinkflow.geometry import Shrinker, make_grid
from shrinkflow.spectral import (
    ModeVector,
    apply_L,
    build_spectrum,
    drift_term,
    inner,
    level_eigenvalue,
    project,
    synthesize,
    weighted_norm,
    weyl_count,
    weyl_fit,
)


def fd_circle_eigenvalues(nodes=512, count=10):
    """Lowest eigenvalues of -L on S^1(sqrt 2) from a 4th-order periodic stencil."""
    h = 2 * math.pi / nodes
    D2 = np.zeros((nodes, nodes))
    for off, c in ((0, -30), (1, 16), (-1, 16), (2, -1), (-2, -1)):
        D2 += c * np.roll(np.eye(nodes), off, axis=1)
    D2 /= 12 * h * h
    minus_L = -(0.5 * D2 + np.eye(nodes))  # Laplacian on radius sqrt(2) is d^2/dtheta^2 / 2
    return np.sort(np.linalg.eigvalsh(minus_L))[:count]


def ritz_sphere_eigenvalues(degree=5, count=25):
    """Rayleigh-Ritz for -L on S^2(2) over restrictions of ambient polynomials."""
    R = 2.0
    x, w = np.polynomial.legendre.leggauss(24)
    phi = 2 * np.pi * np.arange(48) / 48
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    wt = np.repeat(w, 48) * (2 * np.pi / 48) * R * R
    st_ = np.sqrt(1 - ct.ravel() ** 2)
    om = np.stack([st_ * np.cos(ph.ravel()), st_ * np.sin(ph.ravel()), ct.ravel()], axis=-1)
    exps = [e for e in itertools.product(range(degree + 1), repeat=3) if sum(e) <= degree]
    vals, grads = [], []
    for a, b, c in exps:
        X, Y, Z = om.T
        vals.append(X**a * Y**b * Z**c)
        g = np.stack([a * X ** max(a - 1, 0) * Y**b * Z**c,
                      b * X**a * Y ** max(b - 1, 0) * Z**c,
                      c * X**a * Y**b * Z ** max(c - 1, 0)], axis=-1)
        g = g - np.sum(g * om, axis=-1, keepdims=True) * om  # tangential part on the unit sphere
        grads.append(g / R)
    V = np.array(vals)
    G = np.array(grads)
    M = (V * wt) @ V.T
    K = np.einsum("ikd,jkd,k->ij", G, G, wt)
    s, U = np.linalg.eigh(M)
    keep = s > 1e-10 * s.max()
    T = U[:, keep] / np.sqrt(s[keep])
    lam = eigh(T.T @ K @ T, eigvals_only=True)
    return np.sort(lam - 1.0)[:count]


# --- eigenvalues --------------------------------------------------------------


def test_circle_first_eigenvalues(circle_spectrum):
    expected = [k * k / 2 - 1 for k in (0, 1, 1, 2, 2, 3, 3, 4, 4, 5)]
    np.testing.assert_allclose(circle_spectrum.eigenvalues[:10], expected, atol=1e-8)
    np.testing.assert_allclose(circle_spectrum.eigenvalues[:7], [-1, -0.5, -0.5, 1, 1, 3.5, 3.5])


def test_circle_eigenvalues_against_finite_differences(circle_spectrum):
    np.testing.assert_allclose(fd_circle_eigenvalues(), circle_spectrum.eigenvalues[:10], atol=1e-4)


def test_sphere_first_eigenvalues(sphere_spectrum):
    np.testing.assert_allclose(sphere_spectrum.eigenvalues[:9], [-1] + [-0.5] * 3 + [0.5] * 5)
    for k, (mu, mult) in enumerate(sphere_spectrum.distinct()[:8]):
        assert mu == pytest.approx(k * (k + 1) / 4 - 1, abs=1e-8)
        assert mult == 2 * k + 1


def test_sphere_eigenvalues_against_ritz(sphere_spectrum):
    np.testing.assert_allclose(ritz_sphere_eigenvalues(), sphere_spectrum.eigenvalues[:25], atol=1e-8)


def test_level_eigenvalue_unsupported():
    with pytest.raises(UnsupportedGeometryError):
        level_eigenvalue(3, 1)


def test_build_spectrum_cutoff_too_small(circle):
    with pytest.raises(InvalidInputError):
        build_spectrum(circle, cutoff=3)


def test_build_spectrum_needs_enough_nodes(circle):
    with pytest.raises(InsufficientSpectrumError):
        build_spectrum(circle, cutoff=20, grid=make_grid(circle, size=32))


def test_tie_breaking_is_deterministic(sphere_spectrum):
    labels = sphere_spectrum.labels
    assert labels[:4] == ((0, 0, "cos"), (1, 0, "cos"), (1, 1, "cos"), (1, 1, "sin"))
    assert build_spectrum(Shrinker.round(2)).labels == labels


# --- eigenfunctions ------------------------------------------------------------


def test_orthonormality(spectrum):
    w = spectrum.grid.weights * spectrum.shrinker.weight
    gram = spectrum.basis.T @ (w[:, None] * spectrum.basis)
    assert np.max(np.abs(gram - np.eye(spectrum.size))) <= 1e-10


def test_eigen_residual(spectrum):
    worst = 0.0
    for i in range(spectrum.size):
        phi = spectrum.basis[:, i]
        r = apply_L(phi, spectrum) + spectrum.eigenvalues[i] * phi
        worst = max(worst, weighted_norm(r, spectrum))
    assert worst <= 1e-8


def test_drift_term_vanishes(spectrum):
    rng = np.random.default_rng(3)
    for _ in range(5):
        u = spectrum.grid.lowpass(rng.standard_normal(spectrum.grid.size), 12)
        assert weighted_norm(drift_term(u, spectrum.grid), spectrum) <= 1e-10


def test_constant_is_growing_mode(spectrum):
    one = np.ones(spectrum.grid.size)
    np.testing.assert_allclose(apply_L(one, spectrum), one, atol=1e-12)
    assert spectrum.eigenvalues[0] == -1


def test_apply_L_on_cos2(circle_spectrum):
    # [DERIVED] L cos(2t) = cos''(2t)/2 + cos(2t) = -cos(2t)
    theta = circle_spectrum.grid.theta
    np.testing.assert_allclose(apply_L(np.cos(2 * theta), circle_spectrum), -np.cos(2 * theta), atol=1e-12)


def test_apply_L_zero(spectrum):
    assert np.all(apply_L(np.zeros(spectrum.grid.size), spectrum) == 0)


def test_apply_L_grid_mismatch(circle_spectrum):
    with pytest.raises(DimensionError):
        apply_L(np.zeros(10), circle_spectrum)


# --- projection ------------------------------------------------------------------


def test_project_scaled_basis_vector(spectrum):
    a = project(3 * spectrum.basis[:, 1], spectrum).coefficients
    assert a[1] == pytest.approx(3, abs=1e-10)
    assert np.max(np.abs(np.delete(a, 1))) <= 1e-10


def test_project_sum(spectrum):
    a = project(spectrum.basis[:, 0] + spectrum.basis[:, 3], spectrum).coefficients
    assert a[0] == pytest.approx(1, abs=1e-10)
    assert a[3] == pytest.approx(1, abs=1e-10)


def test_plancherel_against_quadrature(spectrum):
    rng = np.random.default_rng(5)
    u = spectrum.grid.lowpass(rng.standard_normal(spectrum.grid.size), 10)
    a = project(u, spectrum)
    assert abs(inner(u, u, spectrum) - np.sum(a.coefficients**2)) <= 1e-10


def test_synthesize_unit_and_zero(spectrum):
    np.testing.assert_array_equal(synthesize(ModeVector.unit(spectrum, 0)), spectrum.basis[:, 0])
    assert not np.any(synthesize(ModeVector.zeros(spectrum)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_project_synthesize_round_trip(seed):
    sp = build_spectrum(Shrinker.round(1), cutoff=16, grid=make_grid(Shrinker.round(1), size=64))
    rng = np.random.default_rng(seed)
    a = ModeVector(rng.standard_normal(sp.size), sp)
    back = project(synthesize(a), sp)
    assert np.max(np.abs(back.coefficients - a.coefficients)) <= 1e-10


def test_mode_vector_validation(circle_spectrum):
    with pytest.raises(DimensionError):
        ModeVector(np.zeros(3), circle_spectrum)
    bad = np.zeros(circle_spectrum.size)
    bad[0] = np.inf
    with pytest.raises(InvalidInputError):
        ModeVector(bad, circle_spectrum)


def test_mode_vector_csv(circle_spectrum):
    rows = list(ModeVector.unit(circle_spectrum, 3, 2.0).csv_rows())
    assert rows[0] == ("index", "eigenvalue", "coefficient")
    assert rows[4] == (3, "1.0", "2.0")


def test_spectrum_json(sphere_spectrum):
    d = sphere_spectrum.to_dict()
    assert d["schema_version"] == 1
    assert d["levels"][2] == {"eigenvalue": 0.5, "multiplicity": 5}
    assert set(d["weyl"]) == {"C1", "m", "offset"}


# --- Weyl counting ------------------------------------------------------------------


def test_weyl_count_examples(circle_spectrum):
    assert weyl_count(circle_spectrum, 1) == 5
    assert weyl_count(circle_spectrum, 0) == 3
    assert weyl_count(circle_spectrum, -1.5) == 0


def test_weyl_count_beyond_cutoff(circle_spectrum):
    with pytest.raises(InsufficientSpectrumError):
        weyl_count(circle_spectrum, 1e6)


def test_weyl_exponent(spectrum):
    C1, m = spectrum.weyl_constants
    assert m == spectrum.shrinker.n / 2 + 0.5
    assert C1 > 0


@given(st.floats(1.0, 1983.5, exclude_min=True))
def test_weyl_bound_holds(N):
    sp = _circle_spectrum_cached()
    C1, m = sp.weyl_constants
    assert weyl_count(sp, N) <= C1 * N**m


@given(st.floats(1.0, 239.0, exclude_min=True))
def test_weyl_bound_holds_sphere(N):
    sp = _sphere_spectrum_cached()
    C1, m = sp.weyl_constants
    assert weyl_count(sp, N) <= C1 * N**m


def test_weyl_fit_is_tight(circle_spectrum):
    # the supremum of count/N^m over N > 1 is approached at N -> 1+ or attained at an eigenvalue
    C1, m = circle_spectrum.weyl_constants
    mus = circle_spectrum.eigenvalues
    Ns = [1.0] + [float(v) for v in np.unique(mus[mus > 1])]
    best = max(np.searchsorted(mus, N, side="right") / N**m for N in Ns)
    assert best == C1
    assert weyl_fit(mus, 1) == (C1, m)


_CACHE = {}


def _circle_spectrum_cached():
    if "c" not in _CACHE:
        _CACHE["c"] = build_spectrum(Shrinker.round(1))
    return _CACHE["c"]


def _sphere_spectrum_cached():
    if "s" not in _CACHE:
        _CACHE["s"] = build_spectrum(Shrinker.round(2))
    return _CACHE["s"]
