import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_field, rel
from fourthnls.nonlinearity import (
    NonlinearityError,
    ParseError,
    PolynomialNonlinearity,
    dealias_mask,
    degree_scaling_exponent,
    evaluate,
    parse,
)
from fourthnls.spectral import Field, Grid, gaussian, plane_wave

ATOMS_1D = ["u", "d(1)u", "d(1,1)u", "lap(u)"]
ATOMS_2D = ATOMS_1D + ["d(2)u", "d(1,2)u", "d(2,1)u", "d(2,2)u"]


def factor_strings(atoms):
    return st.sampled_from(atoms).flatmap(lambda a: st.sampled_from([a, f"conj({a})"]))


def monomials(atoms, degree):
    return st.lists(factor_strings(atoms), min_size=degree, max_size=degree).map("*".join)


def homogeneous_sources(atoms, degree):
    coef = st.floats(-3, 3, allow_nan=False).filter(lambda c: abs(c) > 1e-3)
    term = st.tuples(coef, monomials(atoms, degree))

    def join(terms):
        out = f"{terms[0][0]!r}*{terms[0][1]}"
        for c, body in terms[1:]:
            out += f" - {-c!r}*{body}" if c < 0 else f" + {c!r}*{body}"
        return out

    return st.lists(term, min_size=1, max_size=3).map(join)


# parsing


def test_model_source_shapes():
    p = parse("d(1,1)u * d(2,2)u * d(1,2)u")
    assert len(p.terms) == 1
    assert p.terms[0].degree == 3
    assert p.l == p.h == 3
    q = parse("lap(u)*conj(lap(u))")
    assert q.l == q.h == 2
    assert degree_scaling_exponent(q) == 2


def test_mixed_degrees():
    p = parse("u*u - 0.5*u*u*conj(u)")
    assert (p.l, p.h) == (2, 3)
    assert not p.is_homogeneous()
    assert degree_scaling_exponent(p) is None


@pytest.mark.parametrize("source", ["u", "2*d(1)u", "1.5", "u*u + conj(u)"])
def test_linear_or_constant_rejected(source):
    with pytest.raises(NonlinearityError):
        parse(source)


@pytest.mark.parametrize("source,position", [("u*+u", 2), ("u*u +", 5), ("d(0)u*u", 2), ("u*v", 2),
                                             ("d(1,2,1)u*u", 7), ("conj(u*u", 6)])
def test_parse_error_positions(source, position):
    with pytest.raises(ParseError) as exc:
        parse(source)
    assert exc.value.position == position
    assert f"at position {position}" in str(exc.value)
    assert exc.value.source == source


def test_sugars_expand():
    assert parse("|u|^2") == parse("u*conj(u)")
    assert parse("d(1)u^3") == parse("d(1)u*d(1)u*d(1)u")
    assert parse("|lap(u)|^2") == parse("lap(u)*conj(lap(u))")


def test_complex_coefficients_and_merge():
    p = parse("(0,1)*u*u + 2*u*u")
    assert len(p.terms) == 1
    assert p.terms[0].coefficient == complex(2, 1)
    assert parse("d(2,1)u*u") == parse("u*d(1,2)u")


def test_zero_coefficient_kept():
    p = parse("0*u*u")
    assert p.is_zero
    assert p.l == 2
    assert np.all(evaluate(p, gaussian(Grid(1, 32, 4.0))).samples == 0)


def test_json_golden():
    p = parse("lap(u)*conj(lap(u))")
    data = json.loads(p.dumps())
    assert data == {
        "l": 2,
        "h": 2,
        "terms": [{
            "coefficient": [1.0, 0.0],
            "factors": [
                {"conjugated": False, "alpha": [], "laplacian": True},
                {"conjugated": True, "alpha": [], "laplacian": True},
            ],
        }],
    }


@given(homogeneous_sources(ATOMS_2D, 3) | homogeneous_sources(ATOMS_2D, 2))
def test_canonical_round_trips(source):
    p = parse(source)
    assert parse(p.canonical()) == p
    assert PolynomialNonlinearity.from_json(json.loads(p.dumps())) == p


# evaluation


def test_square_of_plane_wave():
    grid = Grid(1, 64, 5.0)
    u = plane_wave(grid, (5,))
    out = evaluate(parse("u*u"), u)
    np.testing.assert_allclose(out.samples, plane_wave(grid, (10,)).samples, atol=1e-13)


def test_modulus_of_laplacian_is_real():
    grid = Grid(2, 128, 8.0)
    out = evaluate(parse("lap(u)*conj(lap(u))"), gaussian(grid, 1.0, amplitude=2.0 + 1.0j))
    assert np.max(np.abs(out.samples.imag)) <= 1e-12 * np.max(np.abs(out.samples))
    assert np.min(out.samples.real) >= -1e-12 * np.max(np.abs(out.samples))


def test_cube_of_second_derivative_matches_finite_differences():
    grid = Grid(1, 512, 10.0)
    u = random_field(grid, 5, band=6)
    v, h = u.samples, grid.spacing[0]
    d2 = (-np.roll(v, -2) + 16 * np.roll(v, -1) - 30 * v + 16 * np.roll(v, 1) - np.roll(v, 2)) / (12 * h * h)
    out = evaluate(parse("d(1,1)u * d(1,1)u * d(1,1)u"), u)
    assert rel(out.samples, d2**3) <= 1e-5


def test_axis_beyond_dimension_rejected():
    with pytest.raises(NonlinearityError):
        evaluate(parse("d(2)u*u"), gaussian(Grid(1, 32, 4.0)))


@given(homogeneous_sources(ATOMS_2D, 2) | homogeneous_sources(ATOMS_2D, 3), st.floats(0.05, 20.0),
       st.integers(0, 2**20))
def test_degree_scaling(source, lam, seed):
    p = parse(source)
    grid = Grid(2, 32, 4.0)
    u = random_field(grid, seed, band=6)
    base = evaluate(p, u)
    if base.norm() == 0:
        return
    scaled = evaluate(p, u * lam)
    assert rel(scaled.samples, lam**p.h * base.samples) <= 1e-10


def test_conjugate_phase_bookkeeping():
    # u -> e^{i a} u multiplies a monomial by e^{i a (plain - conjugated)}
    grid = Grid(1, 64, 5.0)
    u = random_field(grid, 2, band=8)
    p = parse("u*u*conj(d(1)u)")
    a = 0.7
    out = evaluate(p, u * np.exp(1j * a))
    assert rel(out.samples, np.exp(1j * a) * evaluate(p, u).samples) <= 1e-12


@pytest.mark.parametrize("source", ["u*u", "u*conj(u)*u", "u*u*u*u", "lap(u)*d(1)u"])
@given(st.integers(1, 63))
def test_dealiasing_leaves_no_aliased_energy(source, k):
    grid = Grid(1, 128, 6.0)
    p = parse(source)
    if k * (p.h + 1) >= 128:
        return
    out = evaluate(p, plane_wave(grid, (k,)))
    spec = out.spectrum
    # plain factors add +k, conjugated ones -k; only that mode may carry energy
    term = p.terms[0]
    target = k * sum(-1 if f.conjugated else 1 for f in term.factors)
    xi = np.pi / 6.0 * k
    scale = np.prod([xi ** f.order for f in term.factors])
    keep = dealias_mask(grid, p.h)
    assert np.all(spec[~keep] == 0)
    others = np.delete(np.abs(spec), target % 128)
    assert np.all(others <= 1e-12 * scale)


def test_dealias_mask_cutoff():
    grid = Grid(1, 16, 1.0)
    mask = dealias_mask(grid, 2)
    kept = sorted(grid.mode_indices[0][mask])
    assert kept == [-5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5]


def test_evaluate_returns_field_on_same_grid(grid2):
    u = gaussian(grid2)
    out = evaluate(parse("u*d(1,2)u"), u)
    assert isinstance(out, Field) and out.grid == grid2
