"""Sobolev and weighted norms, cube partitions and space-time functionals."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from .spectral import Epsilon, Field, Grid, propagator_phase, check_support, partial_derivative

__all__ = [
    "CubeDecomposition",
    "SpaceTimeTrace",
    "NormSpec",
    "sobolev_norm",
    "homogeneous_norm",
    "weighted_norm",
    "compute_norm",
    "local_smoothing_norm",
    "cube_space_time_norms",
    "maximal_l2_norm",
    "maximal_l1_norm",
    "linear_trace",
    "time_instants",
    "multi_indices",
]


class CubeDecomposition:
    """Tiling of ``[-L, L)^n`` by cubes of side ``R``.

    Cubes are anchored at the lower box corner, ``Q_a = -L + R a + [0, R)^n``;
    when ``L/R`` is an integer this is the lattice ``R a + [0, R)^n``.
    """

    def __init__(self, grid: Grid, R: float):
        R = float(R)
        if not R > 0:
            raise ValueError(f"cube side must be positive, got {R}")
        counts = []
        for L in grid.half_length:
            ratio = Fraction(2 * L / R).limit_denominator(10**6)
            if ratio.denominator != 1 or abs(float(ratio) - 2 * L / R) > 1e-9 * (2 * L / R):
                raise ValueError(f"box side {2 * L} is not an integer multiple of R={R}")
            counts.append(int(ratio))
        self.grid = grid
        self.R = R
        self.cubes_per_axis = tuple(counts)

    @property
    def count(self) -> int:
        return int(np.prod(self.cubes_per_axis))

    @cached_property
    def labels(self) -> np.ndarray:
        """Flat cube index of every grid point (exact integer arithmetic)."""
        per_axis = [
            (np.arange(n) * m) // n for n, m in zip(self.grid.points_per_axis, self.cubes_per_axis)
        ]
        mesh = np.meshgrid(*per_axis, indexing="ij")
        return np.ravel_multi_index(mesh, self.cubes_per_axis)

    def index_of(self, label: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(label, self.cubes_per_axis))

    def cube_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum a grid-shaped array (or a stack of them) over each cube."""
        flat = self.labels.ravel()
        values = np.asarray(values)
        if values.shape == self.grid.shape:
            return np.bincount(flat, weights=values.ravel(), minlength=self.count)
        stack = values.reshape(values.shape[0], -1)
        out = np.zeros((stack.shape[0], self.count))
        for i, row in enumerate(stack):
            out[i] = np.bincount(flat, weights=row, minlength=self.count)
        return out

    def cube_max(self, values: np.ndarray) -> np.ndarray:
        """Max of a grid-shaped array (or stack) over each cube."""
        flat = self.labels.ravel()
        values = np.asarray(values)
        stack = values.reshape(-1, self.grid.size) if values.shape != self.grid.shape else values.reshape(1, -1)
        out = np.full(self.count, -np.inf)
        for row in stack:
            np.maximum.at(out, flat, row)
        return out


class SpaceTimeTrace:
    """Fields at strictly increasing instants, stored as one array.

    ``samples`` has shape ``(len(times),) + grid.shape``.
    """

    def __init__(self, grid: Grid, times, samples):
        times = np.asarray(times, dtype=float)
        samples = np.asarray(samples, dtype=np.complex128)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("a trace needs at least two instants")
        if np.any(np.diff(times) <= 0):
            raise ValueError("trace instants must be strictly increasing")
        if samples.shape != (times.size,) + grid.shape:
            raise ValueError(f"samples shape {samples.shape} does not match {times.size} x {grid.shape}")
        times.setflags(write=False)
        samples.setflags(write=False)
        self.grid = grid
        self.times = times
        self.samples = samples

    @classmethod
    def from_fields(cls, times, fields: Sequence[Field]) -> "SpaceTimeTrace":
        grid = fields[0].grid
        if any(f.grid != grid for f in fields):
            raise ValueError("all fields of a trace must share one grid")
        return cls(grid, times, np.stack([f.samples for f in fields]))

    @classmethod
    def from_spectra(cls, grid: Grid, times, spectra) -> "SpaceTimeTrace":
        axes = tuple(range(1, grid.dim + 1))
        return cls(grid, times, np.fft.ifftn(spectra, axes=axes) * grid.size)

    def __len__(self):
        return self.times.size

    @property
    def fields(self) -> list[Field]:
        return [Field(self.grid, s) for s in self.samples]

    def field(self, i: int) -> Field:
        return Field(self.grid, self.samples[i])

    @cached_property
    def spectra(self) -> np.ndarray:
        axes = tuple(range(1, self.grid.dim + 1))
        return np.fft.fftn(self.samples, axes=axes) / self.grid.size

    def sup_l2_distance(self, other: "SpaceTimeTrace") -> float:
        diff = self.samples - other.samples
        axes = tuple(range(1, self.grid.dim + 1))
        return float(np.sqrt(np.max(np.sum(np.abs(diff) ** 2, axis=axes)) * self.grid.cell_volume))

    def apply_spectral(self, symbol: np.ndarray) -> "SpaceTimeTrace":
        return SpaceTimeTrace.from_spectra(self.grid, self.times, self.spectra * symbol)


@dataclass(frozen=True)
class NormSpec:
    kind: str
    s: float = 0.0
    l: int = 0
    j: int = 0

    KINDS = ("sobolev_s", "homogeneous_s", "weighted_l_2_j")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}; expected one of {self.KINDS}")
        if not math.isfinite(self.s):
            raise ValueError("norm parameter s must be finite")
        if self.kind == "weighted_l_2_j" and (self.j < 0 or self.j % 2 or self.l < 0):
            raise ValueError("weighted norm needs l >= 0 and an even j >= 0")

    def params(self) -> str:
        if self.kind == "weighted_l_2_j":
            return f"l={self.l};j={self.j}"
        return f"s={self.s!r}"


def _spectral_weighted_sum(f: Field, weight: np.ndarray) -> float:
    return float(np.sum(weight * np.abs(f.spectrum) ** 2)) * f.grid.box_volume


def sobolev_norm(f: Field, s: float) -> float:
    """``(sum (1+|xi|^2)^s |f_hat|^2)^{1/2}`` with the Parseval measure."""
    return math.sqrt(_spectral_weighted_sum(f, (1.0 + f.grid.xi_squared) ** float(s)))


def homogeneous_norm(f: Field, s: float) -> float:
    """Homogeneous Sobolev norm; for ``s < 0`` the data must have zero mean."""
    s = float(s)
    k2 = f.grid.xi_squared
    if s == 0:
        return f.norm()
    weight = np.zeros_like(k2)
    nz = k2 > 0
    weight[nz] = k2[nz] ** s
    if s < 0 and abs(f.mean()) * math.sqrt(f.grid.box_volume) > 1e-12 * f.norm():
        raise ValueError(
            f"negative-order homogeneous norm needs mean-zero data (mean={f.mean():.3e})"
        )
    return math.sqrt(_spectral_weighted_sum(f, weight))


def multi_indices(dim: int, order: int) -> list[tuple[int, ...]]:
    """All multi-indices with ``|gamma| <= order``, sorted by order."""
    out = [g for g in itertools.product(range(order + 1), repeat=dim) if sum(g) <= order]
    return sorted(out, key=lambda g: (sum(g), tuple(-x for x in g)))


def _derivative_any_order(f: Field, gamma: tuple[int, ...]) -> Field:
    # partial_derivative caps |alpha| at 4; chain for higher orders
    remaining = list(gamma)
    out = f
    while sum(remaining) > 0:
        step = []
        budget = 4
        for a in remaining:
            take = min(a, budget)
            step.append(take)
            budget -= take
        out = partial_derivative(out, step)
        remaining = [a - b for a, b in zip(remaining, step)]
    return out


def weighted_norm(f: Field, l: int, j: int, guard: bool = True) -> float:
    """``sum_{|gamma|<=l} (int |d^gamma f|^2 |x|^j dx)^{1/2}``."""
    if l < 0 or j < 0 or j % 2:
        raise ValueError(f"need l >= 0 and even j >= 0, got l={l}, j={j}")
    if guard:
        check_support(f)
    weight = f.grid.radius**j * f.grid.cell_volume
    total = 0.0
    for gamma in multi_indices(f.grid.dim, l):
        d = _derivative_any_order(f, gamma)
        total += math.sqrt(float(np.sum(np.abs(d.samples) ** 2 * weight)))
    return total


def compute_norm(f: Field, spec: NormSpec) -> float:
    if spec.kind == "sobolev_s":
        return sobolev_norm(f, spec.s)
    if spec.kind == "homogeneous_s":
        return homogeneous_norm(f, spec.s)
    return weighted_norm(f, spec.l, spec.j)


def _check_cubes(trace_grid: Grid, cubes: CubeDecomposition):
    if trace_grid != cubes.grid:
        raise ValueError("trace and cube decomposition live on different grids")


def cube_space_time_norms(trace: SpaceTimeTrace, gamma: float, cubes: CubeDecomposition) -> np.ndarray:
    """Per-cube ``(int_0^T int_Q |D^gamma u|^2)^{1/2}``, trapezoid rule in time."""
    _check_cubes(trace.grid, cubes)
    grid = trace.grid
    if gamma == 0:
        dens = np.abs(trace.samples) ** 2
    else:
        sym = np.sqrt(grid.xi_squared) ** float(gamma)
        dens = np.abs(trace.apply_spectral(sym).samples) ** 2
    per_time = cubes.cube_sums(dens) * grid.cell_volume
    integral = np.trapezoid(per_time, trace.times, axis=0)
    return np.sqrt(np.maximum(integral, 0.0))


def local_smoothing_norm(trace: SpaceTimeTrace, gamma: float, cubes: CubeDecomposition) -> float:
    """``sup_a (int_0^T int_{Q_a} |D^gamma u|^2 dx dt)^{1/2}``."""
    return float(np.max(cube_space_time_norms(trace, gamma, cubes)))


def time_instants(T: float, time_samples: int) -> np.ndarray:
    """``time_samples`` equal intervals on ``[0, T]`` (``time_samples + 1`` instants).

    Doubling ``time_samples`` yields a superset of instants.
    """
    if T == 0:
        return np.zeros(1)
    return np.linspace(0.0, float(T), int(time_samples) + 1)


def linear_trace(u0: Field, times, eps) -> SpaceTimeTrace:
    """``S(t) u0`` at each instant."""
    eps = int(Epsilon.coerce(eps))
    spectra = np.stack([u0.spectrum * propagator_phase(u0.grid, t, eps) for t in times])
    return SpaceTimeTrace.from_spectra(u0.grid, times, spectra)


def _cube_sup_of_flow(u0: Field, T: float, eps, time_samples: int, cubes: CubeDecomposition,
                      chunk: int = 64) -> np.ndarray:
    if cubes.grid != u0.grid:
        raise ValueError("data and cube decomposition live on different grids")
    if time_samples < 8:
        raise ValueError(f"time_samples must be >= 8, got {time_samples}")
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    eps = int(Epsilon.coerce(eps))
    grid = u0.grid
    axes = tuple(range(1, grid.dim + 1))
    best = np.zeros(cubes.count)
    times = time_instants(T, time_samples)
    for start in range(0, times.size, chunk):
        block = times[start : start + chunk]
        spectra = np.stack([u0.spectrum * propagator_phase(grid, t, eps) for t in block])
        mod = np.abs(np.fft.ifftn(spectra, axes=axes) * grid.size)
        best = np.maximum(best, cubes.cube_max(mod.max(axis=0)))
    return best


def maximal_l2_norm(u0: Field, T: float, eps, time_samples: int, cubes: CubeDecomposition) -> float:
    """``(sum_a sup_{t} sup_{x in Q_a} |S(t) u0(x)|^2)^{1/2}`` over sampled instants."""
    return float(np.sqrt(np.sum(_cube_sup_of_flow(u0, T, eps, time_samples, cubes) ** 2)))


def maximal_l1_norm(u0: Field, T: float, eps, time_samples: int, cubes: CubeDecomposition) -> float:
    """``sum_a sup_{t} sup_{x in Q_a} |S(t) u0(x)|`` over sampled instants."""
    return float(np.sum(_cube_sup_of_flow(u0, T, eps, time_samples, cubes)))
