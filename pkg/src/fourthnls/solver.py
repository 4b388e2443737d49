"""Local-in-time solutions by Picard iteration on the Duhamel formula.

The fixed-point map is

    T(v)(t) = S(t) u0 - i int_0^t S(t - tau) P(v(tau)) dtau,

discretised with the trapezoid rule on the substep instants.  Working in the
interaction picture (``G(tau) = S(-tau) P(v(tau))``) the quadrature for all
instants is a single cumulative sum, followed by one application of ``S(t_m)``
per instant.

The contraction is monitored empirically: when the ratio of successive
iterate differences stays above the target after three iterations, the
horizon is halved and the iteration restarts.  A Strang split-step
integrator provides an independent reference solution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .nonlinearity import PolynomialNonlinearity, evaluate, parse
from .norms import CubeDecomposition, SpaceTimeTrace, linear_trace, multi_indices, weighted_norm
from .spectral import Epsilon, Field, SupportGuardError, outside_mass_fraction, propagator_phase

__all__ = [
    "SolverConfig",
    "PicardReport",
    "WaveformSolution",
    "SolverError",
    "BlowUpError",
    "duhamel_apply",
    "solve_picard",
    "solve_splitstep",
    "workspace_components",
]

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class BlowUpError(SolverError):
    def __init__(self, t: float):
        self.t = t
        super().__init__(f"non-finite values in the nonlinearity at t={t:.6g}")


@dataclass(frozen=True)
class SolverConfig:
    eps: int
    P: PolynomialNonlinearity
    T: float
    substeps: int = 64
    max_iter: int = 50
    delta: float = 0.25
    E: Optional[float] = None
    contraction_target: float = 0.5
    s0: Optional[float] = None
    tol: float = 1e-9
    cube_side: float = 1.0
    max_halvings: int = 20

    def __post_init__(self):
        object.__setattr__(self, "eps", int(Epsilon.coerce(self.eps)))
        if isinstance(self.P, str):
            object.__setattr__(self, "P", parse(self.P))
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive, got {self.T}")
        if self.substeps < 4:
            raise ValueError(f"substeps must be >= 4, got {self.substeps}")
        if not 0 < self.delta < 1 / 3:
            raise ValueError(f"delta must lie in (0, 1/3), got {self.delta}")
        if not 0 < self.contraction_target < 1:
            raise ValueError(f"contraction_target must lie in (0, 1), got {self.contraction_target}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.E is not None and not self.E > 0:
            raise ValueError("E must be positive")

    def monitor_index(self, dim: int) -> float:
        """Sobolev index of the monitor norm; defaults to ``n + 5/2``."""
        return float(self.s0) if self.s0 is not None else dim + 2.5


@dataclass
class PicardReport:
    accepted_T: float
    iterations: int
    ratios: list[float]
    lambda_components: list[dict]
    halvings: int
    differences: list[float] = field(default_factory=list)
    lambda_diff_components: list[dict] = field(default_factory=list)
    smoothing_order: float = float("nan")
    workspace_radius: float = float("nan")
    weighted_component: Optional[float] = None
    weighted_flag: str = "not-applicable"
    method: str = "picard"

    def to_json(self) -> dict:
        def clean(x):
            if isinstance(x, float) and not math.isfinite(x):
                return None
            return x

        return {
            "method": self.method,
            "accepted_T": self.accepted_T,
            "iterations": self.iterations,
            "halvings": self.halvings,
            "ratios": [clean(r) for r in self.ratios],
            "differences": self.differences,
            "lambda_components": self.lambda_components,
            "lambda_diff_components": self.lambda_diff_components,
            "smoothing_order": clean(self.smoothing_order),
            "workspace_radius": clean(self.workspace_radius),
            "weighted_component": self.weighted_component,
            "weighted_flag": self.weighted_flag,
        }


@dataclass
class WaveformSolution:
    trace: SpaceTimeTrace
    report: PicardReport

    @property
    def final(self) -> Field:
        return self.trace.field(len(self.trace) - 1)


def _nonlinear_spectra(P: PolynomialNonlinearity, v: SpaceTimeTrace) -> np.ndarray:
    out = np.empty_like(v.samples)
    for i, t in enumerate(v.times):
        g = evaluate(P, v.field(i))
        if not np.all(np.isfinite(g.samples)):
            raise BlowUpError(float(t))
        out[i] = g.spectrum
    return out


def duhamel_apply(v: SpaceTimeTrace, u0: Field, cfg: SolverConfig) -> SpaceTimeTrace:
    """One application of the Duhamel map to the trace ``v``."""
    if v.grid != u0.grid:
        raise ValueError("trace and initial data live on different grids")
    times = v.times
    if times[0] != 0.0:
        raise ValueError("trace must start at t = 0")
    grid = u0.grid
    if cfg.P.is_zero:
        return linear_trace(u0, times, cfg.eps)
    g = _nonlinear_spectra(cfg.P, v)
    pulled = np.stack([propagator_phase(grid, -t, cfg.eps) for t in times]) * g
    dt = np.diff(times).reshape((-1,) + (1,) * grid.dim)
    increments = 0.5 * dt * (pulled[1:] + pulled[:-1])
    integral = np.concatenate([np.zeros((1,) + grid.shape, dtype=complex), np.cumsum(increments, axis=0)])
    spectra = np.stack(
        [propagator_phase(grid, t, cfg.eps) * (u0.spectrum - 1j * integral[m]) for m, t in enumerate(times)]
    )
    return SpaceTimeTrace.from_spectra(grid, times, spectra)


def _representable_order(grid, degree: int) -> float:
    """Largest half-integer order whose amplification at the dealias cutoff stays below 1e8."""
    cut = min(
        (np.pi / L) * ((n - 1) // (degree + 1))
        for L, n in zip(grid.half_length, grid.points_per_axis)
    )
    if cut <= 1.0:
        return math.inf
    return math.floor(2 * 8 * math.log(10) / math.log(cut)) / 2


def workspace_components(trace: SpaceTimeTrace, s0: float, smoothing_order: float, T: float,
                         delta: float, E: float, cubes: CubeDecomposition) -> dict:
    """The three monitor norms: sup-in-time Sobolev, scaled cube smoothing, cube maximal of ``D^2``."""
    grid = trace.grid
    axes = tuple(range(1, grid.dim + 1))
    spectra = trace.spectra
    weight = (1.0 + grid.xi_squared) ** s0
    sobolev = float(np.sqrt(np.max(np.sum(weight * np.abs(spectra) ** 2, axis=axes)) * grid.box_volume))

    sym = np.sqrt(grid.xi_squared) ** smoothing_order
    dens = np.abs(np.fft.ifftn(spectra * sym, axes=axes) * grid.size) ** 2
    per_time = cubes.cube_sums(dens) * grid.cell_volume
    smoothing = float(np.sqrt(np.max(np.trapezoid(per_time, trace.times, axis=0))))

    d2 = np.abs(np.fft.ifftn(spectra * (-grid.xi_squared), axes=axes) * grid.size)
    maximal = float(np.sqrt(np.sum(cubes.cube_max(d2.max(axis=0)) ** 2)))
    return {
        "sup_sobolev": sobolev,
        "smoothing": T ** (-delta) * smoothing,
        "maximal_d2": maximal,
        "in_workspace": bool(max(sobolev, T ** (-delta) * smoothing, maximal) <= E),
    }


def _weighted_component(trace: SpaceTimeTrace, P: PolynomialNonlinearity) -> tuple[Optional[float], str]:
    n = trace.grid.dim
    if P.l != 2:
        return None, "not-applicable"
    l = n + n // 2 + 8
    j = 2 * (n // 2) + 2
    stride = max(1, (len(trace) - 1) // 8)
    picks = list(range(0, len(trace), stride))
    if picks[-1] != len(trace) - 1:
        picks.append(len(trace) - 1)
    if any(outside_mass_fraction(trace.field(i)) > 1e-10 for i in picks):
        return None, "omitted-support-guard"
    best = 0.0
    for i in picks:
        try:
            best = max(best, weighted_norm(trace.field(i), l, j))
        except SupportGuardError:
            return None, "omitted-support-guard"
    return best, f"l={l},j={j}"


def _check_data(u0: Field):
    if not np.all(np.isfinite(u0.samples)):
        raise ValueError("initial data must be finite")


def solve_picard(u0: Field, cfg: SolverConfig) -> WaveformSolution:
    """Iterate the Duhamel map from ``S(t) u0`` until the iterates settle."""
    _check_data(u0)
    grid = u0.grid
    cubes = CubeDecomposition(grid, cfg.cube_side)
    s0 = cfg.monitor_index(grid.dim)
    order = min(s0 + 0.5, _representable_order(grid, cfg.P.h))
    E = cfg.E if cfg.E is not None else 2.0 * max(
        float(np.sqrt(np.sum((1 + grid.xi_squared) ** s0 * np.abs(u0.spectrum) ** 2) * grid.box_volume)),
        np.finfo(float).tiny,
    )
    scale = u0.norm()
    T = cfg.T
    halvings = 0
    while True:
        times = np.linspace(0.0, T, cfg.substeps + 1)
        step_cfg = replace(cfg, T=T)
        u = linear_trace(u0, times, cfg.eps)
        lam = [workspace_components(u, s0, order, T, cfg.delta, E, cubes)]
        lam_diff: list[dict] = []
        diffs: list[float] = []
        ratios: list[float] = []
        converged = False
        restart = False
        for k in range(cfg.max_iter):
            new = duhamel_apply(u, u0, step_cfg)
            d = new.sup_l2_distance(u)
            if not math.isfinite(d):
                raise BlowUpError(float(times[-1]))
            if diffs:
                ratios.append(d / diffs[-1] if diffs[-1] > 0 else 0.0)
            elif d == 0.0:
                ratios.append(0.0)
            diffs.append(d)
            delta_trace = SpaceTimeTrace(grid, times, new.samples - u.samples)
            lam_diff.append(workspace_components(delta_trace, s0, order, T, cfg.delta, E, cubes))
            u = new
            lam.append(workspace_components(u, s0, order, T, cfg.delta, E, cubes))
            logger.debug("T=%g iter=%d diff=%.3e ratio=%s", T, k + 1, d, ratios[-1] if ratios else None)
            if d == 0.0 or (d <= cfg.tol * scale and ratios and ratios[-1] <= cfg.contraction_target):
                converged = True
                break
            if k + 1 >= 3 and ratios and ratios[-1] > cfg.contraction_target:
                restart = True
                break
        if converged:
            break
        if not restart:
            raise SolverError(f"no convergence within {cfg.max_iter} iterations at T={T:g}")
        halvings += 1
        if halvings > cfg.max_halvings:
            raise SolverError(
                f"contraction not reached after {cfg.max_halvings} halvings of T; data too large for local theory"
            )
        logger.info("contraction ratio %.3g > %.3g; halving T to %g", ratios[-1], cfg.contraction_target, T / 2)
        T = T / 2

    weighted, flag = _weighted_component(u, cfg.P)
    report = PicardReport(
        accepted_T=T,
        iterations=len(diffs),
        ratios=ratios,
        lambda_components=lam,
        halvings=halvings,
        differences=diffs,
        lambda_diff_components=lam_diff,
        smoothing_order=order,
        workspace_radius=E,
        weighted_component=weighted,
        weighted_flag=flag,
    )
    return WaveformSolution(u, report)


def solve_splitstep(u0: Field, cfg: SolverConfig, T: Optional[float] = None) -> WaveformSolution:
    """Strang splitting: half linear step, explicit nonlinear step, half linear step."""
    _check_data(u0)
    T = cfg.T if T is None else float(T)
    grid = u0.grid
    dt = T / cfg.substeps
    half = propagator_phase(grid, 0.5 * dt, cfg.eps)
    times = np.linspace(0.0, T, cfg.substeps + 1)
    spectra = np.empty((times.size,) + grid.shape, dtype=complex)
    spec = np.array(u0.spectrum)
    spectra[0] = spec
    for m in range(1, times.size):
        spec = spec * half
        if not cfg.P.is_zero:
            g = evaluate(cfg.P, Field.from_spectrum(grid, spec))
            if not np.all(np.isfinite(g.samples)):
                raise BlowUpError(float(times[m]))
            spec = spec - 1j * dt * g.spectrum
        spec = spec * half
        spectra[m] = spec
    trace = SpaceTimeTrace.from_spectra(grid, times, spectra)
    report = PicardReport(
        accepted_T=T, iterations=0, ratios=[], lambda_components=[], halvings=0, method="splitstep"
    )
    return WaveformSolution(trace, report)
