import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from fourthnls.lab import fit_scaling
from fourthnls.nonlinearity import evaluate, parse
from fourthnls.norms import SpaceTimeTrace, linear_trace
from fourthnls.solver import (
    BlowUpError,
    SolverConfig,
    SolverError,
    duhamel_apply,
    solve_picard,
    solve_splitstep,
)
from fourthnls.spectral import Field, Grid, gaussian, propagate

MODEL = "lap(u)*conj(lap(u))"


@pytest.fixture(scope="module")
def small_case():
    grid = Grid(1, 256, 20.0)
    u0 = gaussian(grid, 1.0, amplitude=0.01)
    cfg = SolverConfig(eps=1, P=MODEL, T=0.05, substeps=64)
    return u0, cfg, solve_picard(u0, cfg)


# configuration


@pytest.mark.parametrize("kw", [dict(T=0.0), dict(T=math.inf), dict(substeps=2), dict(delta=0.4),
                                dict(contraction_target=1.0), dict(max_iter=0), dict(E=-1.0), dict(eps=2)])
def test_config_validation(kw):
    base = dict(eps=0, P="u*u", T=0.1)
    base.update(kw)
    with pytest.raises(ValueError):
        SolverConfig(**base)


def test_config_parses_nonlinearity():
    cfg = SolverConfig(eps="-1", P="u*u", T=0.1)
    assert cfg.eps == -1
    assert cfg.P == parse("u*u")
    assert cfg.monitor_index(1) == 3.5
    assert SolverConfig(eps=0, P="u*u", T=0.1, s0=2.0).monitor_index(2) == 2.0


# Duhamel map


def test_zero_source_gives_linear_flow():
    grid = Grid(1, 128, 10.0)
    u0 = gaussian(grid, 1.0)
    times = np.linspace(0, 0.2, 9)
    v = SpaceTimeTrace(grid, times, np.zeros((9,) + grid.shape))
    out = duhamel_apply(v, u0, SolverConfig(eps=1, P="u*u", T=0.2))
    ref = linear_trace(u0, times, 1)
    assert out.sup_l2_distance(ref) <= 1e-15 * u0.norm()


def test_zero_data_output_vanishes_at_start():
    grid = Grid(1, 128, 10.0)
    times = np.linspace(0, 0.1, 17)
    v = linear_trace(gaussian(grid, 1.0), times, 0)
    out = duhamel_apply(v, Field.zeros(grid), SolverConfig(eps=0, P="u*u", T=0.1))
    assert np.all(out.samples[0] == 0)
    assert out.field(16).norm() > 0


def test_trace_must_start_at_zero():
    grid = Grid(1, 32, 4.0)
    u0 = gaussian(grid)
    v = linear_trace(u0, [0.1, 0.2], 0)
    with pytest.raises(ValueError):
        duhamel_apply(v, u0, SolverConfig(eps=0, P="u*u", T=0.1))


def test_duhamel_against_dense_quadrature():
    grid = Grid(1, 256, 20.0)
    u0 = gaussian(grid, 1.0, amplitude=0.1)
    T, eps, P = 0.05, 0, parse("u*u")
    times = np.linspace(0, T, 65)
    out = duhamel_apply(linear_trace(u0, times, eps), u0, SolverConfig(eps=eps, P=P, T=T))

    # independent oracle: Simpson rule on 8x the instants of tau -> S(T - tau) P(S(tau) u0)
    taus = np.linspace(0, T, 8 * 64 + 1)
    integrand = np.stack([propagate(evaluate(P, propagate(u0, tau, eps)), T - tau, eps).spectrum for tau in taus])
    duhamel = integrate.simpson(integrand, x=taus, axis=0)
    oracle = Field.from_spectrum(grid, propagate(u0, T, eps).spectrum - 1j * duhamel)
    err = (out.field(64) - oracle).norm() / oracle.norm()
    assert err <= 1e-5


# Picard iteration


def test_zero_data_converges_immediately():
    grid = Grid(1, 64, 8.0)
    sol = solve_picard(Field.zeros(grid), SolverConfig(eps=0, P=MODEL, T=0.1))
    assert sol.report.iterations == 1
    assert np.all(sol.trace.samples == 0)


def test_linear_problem_reproduces_flow():
    grid = Grid(1, 128, 10.0)
    u0 = gaussian(grid, 1.0)
    cfg = SolverConfig(eps=-1, P="0*u*u", T=0.3, substeps=16)
    sol = solve_picard(u0, cfg)
    assert sol.report.ratios == [0.0]
    ref = linear_trace(u0, sol.trace.times, -1)
    assert sol.trace.sup_l2_distance(ref) == 0.0


def test_model_case_contracts(small_case):
    u0, cfg, sol = small_case
    rep = sol.report
    assert rep.halvings <= 3
    assert rep.ratios and rep.ratios[-1] <= 0.5
    ref = solve_splitstep(u0, cfg, T=rep.accepted_T)
    err = (sol.final - ref.final).norm() / sol.final.norm()
    assert err <= 1e-4


def test_fixed_point(small_case):
    u0, cfg, sol = small_case
    again = duhamel_apply(sol.trace, u0, cfg)
    assert again.sup_l2_distance(sol.trace) <= 10 * cfg.tol * u0.norm()


def test_workspace_components(small_case):
    u0, cfg, sol = small_case
    rep = sol.report
    assert len(rep.lambda_components) == rep.iterations + 1
    for comp in rep.lambda_components:
        for key in ("sup_sobolev", "smoothing", "maximal_d2"):
            assert math.isfinite(comp[key]) and comp[key] > 0
        assert comp["in_workspace"]
    diffs = rep.lambda_diff_components
    for key in ("sup_sobolev", "smoothing", "maximal_d2"):
        for a, b in zip(diffs, diffs[1:]):
            assert b[key] <= cfg.contraction_target * a[key]
    assert rep.smoothing_order <= cfg.monitor_index(1) + 0.5
    assert json.loads(json.dumps(rep.to_json()))["method"] == "picard"


def test_weighted_component_recorded():
    grid = Grid(1, 256, 20.0)
    u0 = gaussian(grid, 2.0, amplitude=0.01)
    rep = solve_picard(u0, SolverConfig(eps=1, P=MODEL, T=0.05)).report
    assert rep.weighted_flag == "l=9,j=2"
    assert rep.weighted_component > 0
    # a wide profile trips the support guard; the component is then omitted with a flag
    wide = solve_picard(gaussian(grid, 4.0, amplitude=0.01), SolverConfig(eps=1, P=MODEL, T=0.05)).report
    assert wide.weighted_flag == "omitted-support-guard"
    assert wide.weighted_component is None
    cubic = solve_picard(u0, SolverConfig(eps=1, P="u*u*u", T=0.05)).report
    assert cubic.weighted_flag == "not-applicable"


def test_contraction_ratio_shrinks_with_T():
    grid = Grid(1, 256, 20.0)
    u0 = gaussian(grid, 1.0, amplitude=0.05)
    ratios = []
    for T in (0.04, 0.02, 0.01):
        rep = solve_picard(u0, SolverConfig(eps=1, P=MODEL, T=T, substeps=32)).report
        assert rep.halvings == 0
        ratios.append(rep.ratios[0])
    assert ratios[0] >= ratios[1] >= ratios[2]


@pytest.mark.parametrize("source,degree", [(MODEL, 2), ("u*u*conj(u)", 3)])
def test_first_iterate_scales_with_degree(source, degree):
    grid = Grid(1, 256, 20.0)
    lams = np.array([1e-3, 2e-3, 4e-3, 8e-3])
    diffs = []
    for lam in lams:
        rep = solve_picard(gaussian(grid, 1.0, amplitude=lam), SolverConfig(eps=0, P=source, T=0.02, substeps=16))
        diffs.append(rep.report.differences[0])
    assert abs(fit_scaling(lams, diffs).slope - degree) <= 0.1


def test_large_data_exhausts_halvings():
    grid = Grid(1, 64, 8.0)
    with pytest.raises(SolverError):
        solve_picard(gaussian(grid, 1.0, amplitude=50.0), SolverConfig(eps=0, P=MODEL, T=1.0, max_halvings=2))


def test_iteration_budget():
    grid = Grid(1, 128, 10.0)
    u0 = gaussian(grid, 1.0, amplitude=0.01)
    with pytest.raises(SolverError, match="no convergence"):
        solve_picard(u0, SolverConfig(eps=0, P=MODEL, T=0.05, max_iter=1))


def test_blow_up_detected():
    grid = Grid(1, 64, 8.0)
    u0 = gaussian(grid, 1.0, amplitude=1e120)
    with np.errstate(all="ignore"), pytest.raises(BlowUpError) as exc:
        solve_picard(u0, SolverConfig(eps=0, P="u*u*u", T=0.1))
    assert exc.value.t >= 0
    with np.errstate(all="ignore"), pytest.raises(BlowUpError):
        solve_splitstep(u0, SolverConfig(eps=0, P="u*u*u", T=0.1))


def test_non_finite_data_rejected():
    grid = Grid(1, 16, 2.0)
    bad = Field(grid, np.full(16, np.nan))
    with pytest.raises(ValueError):
        solve_picard(bad, SolverConfig(eps=0, P="u*u", T=0.1))


# split-step reference


@settings(max_examples=10)
@given(st.sampled_from([-1, 0, 1]), st.sampled_from([4, 7, 32]), st.floats(0.01, 2.0))
def test_splitstep_exact_for_linear_problem(eps, substeps, T):
    grid = Grid(1, 64, 8.0)
    u0 = gaussian(grid, 1.0)
    sol = solve_splitstep(u0, SolverConfig(eps=eps, P="0*u*u", T=T, substeps=substeps))
    ref = propagate(u0, T, eps)
    assert (sol.final - ref).norm() <= 1e-12 * u0.norm()


def test_splitstep_second_order():
    grid = Grid(1, 256, 20.0)
    u0 = gaussian(grid, 1.0, amplitude=0.05)
    ref = solve_splitstep(u0, SolverConfig(eps=1, P=MODEL, T=0.05, substeps=256)).final
    steps = [16, 32, 64]
    errs = [(solve_splitstep(u0, SolverConfig(eps=1, P=MODEL, T=0.05, substeps=m)).final - ref).norm()
            for m in steps]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2) <= 0.3)
