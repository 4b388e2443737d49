import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from conftest import random_field, rel
from fourthnls.spectral import (
    Epsilon,
    Field,
    Grid,
    MultiplierSymbol,
    NonFiniteSymbolError,
    SupportGuardError,
    apply_multiplier,
    check_support,
    dispersion_relation,
    fractional_derivative,
    gaussian,
    laplacian,
    outside_mass_fraction,
    partial_derivative,
    plane_wave,
    propagate,
    propagator_symbol,
)

grids = st.sampled_from([Grid(1, 64, 5.0), Grid(1, 256, 20.0), Grid(2, 32, 4.0), Grid(2, (16, 32), (3.0, 6.0))])
seeds = st.integers(0, 2**31)
eps_values = st.sampled_from([-1, 0, 1])


# grid and field plumbing


def test_grid_lattice():
    g = Grid(1, 8, math.pi)
    assert g.spacing == (2 * math.pi / 8,)
    assert g.size == 8
    assert sorted(g.mode_indices[0]) == [-4, -3, -2, -1, 0, 1, 2, 3]
    np.testing.assert_allclose(sorted(g.frequencies[0]), np.arange(-4, 4))


def test_grid_two_dim_counts():
    g = Grid(2, (16, 32), (1.0, 2.0))
    assert g.shape == (16, 32)
    assert g.size == 512
    assert g.spacing == (0.125, 0.125)


@pytest.mark.parametrize("kw", [dict(dim=3), dict(dim=1, points_per_axis=12), dict(dim=1, half_length=-1.0),
                                dict(dim=2, points_per_axis=(8, 8, 8))])
def test_grid_rejects_bad(kw):
    with pytest.raises(ValueError):
        Grid(**kw)


def test_epsilon_coerce():
    assert Epsilon.coerce(-1) is Epsilon.MINUS
    assert Epsilon.coerce(" 0 ") == 0
    assert Epsilon.coerce(1.0) == 1
    for bad in (2, 0.5, True, "x", None):
        with pytest.raises(ValueError):
            Epsilon.coerce(bad)


@given(grids, seeds)
def test_round_trip(grid, seed):
    f = random_field(grid, seed)
    back = Field.from_spectrum(grid, f.spectrum)
    assert rel(back.samples, f.samples) <= 1e-12


@given(grids, seeds)
def test_parseval(grid, seed):
    f = random_field(grid, seed)
    assert abs(f.spectral_norm() - f.norm()) <= 1e-12 * f.norm()


def test_field_is_immutable(grid1):
    f = gaussian(grid1)
    with pytest.raises(ValueError):
        f.samples[0] = 1.0


# multipliers


@given(grids, seeds)
def test_identity_multiplier(grid, seed):
    f = random_field(grid, seed)
    g = apply_multiplier(f, MultiplierSymbol.identity())
    np.testing.assert_allclose(g.samples, f.samples, rtol=0, atol=1e-12 * f.sup())


@pytest.mark.parametrize("grid,mode", [(Grid(1, 64, 5.0), (7,)), (Grid(2, 32, 4.0), (3, -5))])
def test_plane_wave_eigenfunction(grid, mode):
    f = plane_wave(grid, mode)
    sym = MultiplierSymbol(lambda xi: 1.0 + sum(k**3 for k in xi) - 2j * xi[0])
    xi = [math.pi / L * m for L, m in zip(grid.half_length, mode)]
    expected = 1.0 + sum(k**3 for k in xi) - 2j * xi[0]
    np.testing.assert_allclose(apply_multiplier(f, sym).samples, expected * f.samples, atol=1e-11)


def test_laplacian_matches_finite_differences():
    grid = Grid(1, 256, 20.0)
    f = gaussian(grid, 2.0)
    u, h = f.samples.real, grid.spacing[0]

    def stencil(s):
        return (-np.roll(u, -2 * s) + 16 * np.roll(u, -s) - 30 * u + 16 * np.roll(u, s) - np.roll(u, 2 * s)) / (
            12 * (s * h) ** 2
        )

    # fourth-order stencil, Richardson-combined over h and 2h
    oracle = (16 * stencil(1) - stencil(2)) / 15
    m = MultiplierSymbol(lambda xi: sum(k**2 for k in xi))
    assert rel(apply_multiplier(f, m).samples, -oracle) <= 1e-6


def test_nonfinite_symbol_reported():
    grid = Grid(1, 16, 1.0)
    with pytest.raises(NonFiniteSymbolError) as exc, np.errstate(divide="ignore"):
        apply_multiplier(gaussian(grid, 0.2), MultiplierSymbol(lambda xi: 1 / np.abs(xi[0]), tag="inv"))
    assert exc.value.xi == (0.0,)


def test_odd_symbol_zeroes_nyquist():
    grid = Grid(1, 16, 1.0)
    f = random_field(grid, 3)
    out = partial_derivative(f, (1,))
    assert out.spectrum[grid.nyquist_index[0]] == 0
    even = partial_derivative(f, (2,))
    assert even.spectrum[grid.nyquist_index[0]] != 0


# propagator


@given(grids, seeds, st.floats(-10, 10), eps_values)
def test_unitarity(grid, seed, t, eps):
    f = random_field(grid, seed)
    assert abs(propagate(f, t, eps).norm() - f.norm()) <= 1e-12 * f.norm()


@given(grids, seeds, st.floats(-5, 5), st.floats(-5, 5), eps_values)
def test_group_law(grid, seed, s, t, eps):
    f = random_field(grid, seed)
    two_step = propagate(propagate(f, s, eps), t, eps)
    assert rel(two_step.samples, propagate(f, s + t, eps).samples) <= 1e-11


@given(grids, seeds, st.floats(-3, 3), eps_values, st.floats(0, 3))
def test_derivative_commutes_with_flow(grid, seed, t, eps, gamma):
    f = random_field(grid, seed)
    a = fractional_derivative(propagate(f, t, eps), gamma)
    b = propagate(fractional_derivative(f, gamma), t, eps)
    assert rel(a.samples, b.samples) <= 1e-11


def test_propagate_zero_time_identity(grid1):
    f = gaussian(grid1)
    assert propagate(f, 0.0, 1) is f


@pytest.mark.parametrize("eps", [-1, 0, 1])
@pytest.mark.parametrize("t", [-1.0, -0.3, 0.7, 1.0])
def test_plane_wave_dispersion(eps, t):
    # phase of every mode |m| <= N/4 against a 40-digit evaluation of t (eps xi^2 + xi^4)
    mpmath.mp.dps = 40
    grid = Grid(1, 128, 10.0)
    for m in range(-32, 33):
        f = plane_wave(grid, (m,))
        out = propagate(f, t, eps)
        xi = mpmath.pi * m / 10
        theta = mpmath.mpf(t) * (eps * xi**2 + xi**4)
        exact = complex(mpmath.exp(-1j * theta))
        idx = m % 128
        ratio = out.spectrum[idx] / f.spectrum[idx]
        assert abs(np.angle(ratio / exact)) <= 1e-12
        assert abs(abs(ratio) - 1) <= 1e-12
        assert np.max(np.abs(np.delete(out.spectrum, idx))) <= 1e-13


def test_dispersion_relation_values():
    grid = Grid(1, 8, math.pi)
    k = grid.frequencies[0]
    np.testing.assert_allclose(dispersion_relation(grid, -1), -(k**2) + k**4)


def test_propagator_symbol_matches_propagate(grid2):
    f = random_field(grid2, 11, band=6)
    a = apply_multiplier(f, propagator_symbol(0.2, -1))
    assert rel(a.samples, propagate(f, 0.2, -1).samples) <= 1e-12


def test_propagate_matches_fourier_quadrature():
    # width 2 keeps the dispersed wave inside the box, so the torus and line answers coincide
    grid = Grid(1, 256, 20.0)
    w, t = 2.0, 0.1
    out = propagate(gaussian(grid, w), t, 0)
    xs = grid.axes[0][::8]

    def fhat(k):
        return math.sqrt(2 * math.pi) * w * math.exp(-0.5 * (w * k) ** 2)

    edges = np.linspace(-9.0 / w, 9.0 / w, 41)
    ref = []
    for x in xs:
        v = 0j
        for a, b in zip(edges[:-1], edges[1:]):
            v += integrate.quad(lambda k: math.cos(x * k - t * k**4) * fhat(k), a, b, epsabs=1e-14, epsrel=1e-12)[0]
            v += 1j * integrate.quad(lambda k: math.sin(x * k - t * k**4) * fhat(k), a, b, epsabs=1e-14,
                                     epsrel=1e-12)[0]
        ref.append(v / (2 * math.pi))
    assert rel(out.samples[::8], np.array(ref)) <= 1e-8


# derivatives


def test_fractional_derivative_on_plane_wave():
    grid = Grid(2, 32, 4.0)
    f = plane_wave(grid, (2, -3))
    d2 = fractional_derivative(f, 2.0)
    assert rel(d2.samples, (-laplacian(f)).samples) <= 1e-12
    assert fractional_derivative(f, 0.0) is f


@given(grids, seeds)
def test_fractional_semigroup(grid, seed):
    f = random_field(grid, seed, band=grid.points_per_axis[0] // 4)
    once = fractional_derivative(f, 1.5)
    twice = fractional_derivative(fractional_derivative(f, 0.75), 0.75)
    assert rel(twice.samples, once.samples) <= 1e-10


def test_fractional_derivative_rejects_negative(grid1):
    with pytest.raises(ValueError):
        fractional_derivative(gaussian(grid1), -0.5)


@given(seeds)
def test_mixed_partials_commute(seed):
    grid = Grid(2, 32, 4.0)
    f = random_field(grid, seed, band=8)
    a = partial_derivative(partial_derivative(f, (1, 0)), (0, 1))
    b = partial_derivative(partial_derivative(f, (0, 1)), (1, 0))
    assert rel(a.samples, b.samples) <= 1e-12
    assert partial_derivative(f, (0, 0)) is f


@given(grids, seeds)
def test_laplacian_from_partials(grid, seed):
    f = random_field(grid, seed, band=4)
    total = sum((partial_derivative(f, tuple(2 * (i == ax) for i in range(grid.dim))) for ax in range(grid.dim)),
                Field.zeros(grid))
    assert rel(total.samples, laplacian(f).samples) <= 1e-12


@pytest.mark.parametrize("alpha", [(1, 0, 0), (-1,), (5,)])
def test_partial_derivative_rejects(alpha):
    with pytest.raises(ValueError):
        partial_derivative(gaussian(Grid(1, 16, 2.0)), alpha)


# support guard


def test_support_guard():
    grid = Grid(1, 256, 20.0)
    narrow = gaussian(grid, 1.0)
    assert outside_mass_fraction(narrow) < 1e-10
    assert check_support(narrow) is narrow
    with pytest.raises(SupportGuardError):
        check_support(gaussian(grid, 6.0))
    assert outside_mass_fraction(Field.zeros(grid)) == 0.0
