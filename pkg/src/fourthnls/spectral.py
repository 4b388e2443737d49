"""Periodic grids, sampled fields and Fourier multipliers.

The whole space is approximated by the torus ``[-L, L)^n``.  Fields carry
both a physical view (samples at the grid points) and a spectral view
(Fourier coefficients).  The forward transform carries ``1/N^n`` so that a
single lattice mode ``exp(i k.x)`` has coefficient exactly one.

The linear group of the fourth-order equation,

    i u_t = -eps Lap u + Lap^2 u,

is the multiplier ``exp(-i t (eps |xi|^2 + |xi|^4))`` (``Lap <-> -|xi|^2``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Epsilon",
    "Grid",
    "Field",
    "MultiplierSymbol",
    "NonFiniteSymbolError",
    "SupportGuardError",
    "apply_multiplier",
    "propagate",
    "propagator_symbol",
    "dispersion_relation",
    "propagator_phase",
    "fractional_derivative",
    "partial_derivative",
    "laplacian",
    "multiply_by_coordinate",
    "gaussian",
    "plane_wave",
    "check_support",
    "outside_mass_fraction",
]

# pi to long-double precision; numpy's np.pi is only a float64
_PI_LD = np.longdouble("3.14159265358979323846264338327950288")
_TWO_PI_LD = 2 * _PI_LD


class Epsilon(enum.IntEnum):
    """Sign of the second-order dispersion term."""

    MINUS = -1
    ZERO = 0
    PLUS = 1

    @classmethod
    def coerce(cls, value) -> "Epsilon":
        try:
            if isinstance(value, str):
                value = int(value.strip())
            if isinstance(value, bool) or int(value) != value:
                raise ValueError
            return cls(int(value))
        except (ValueError, TypeError):
            raise ValueError(f"eps must be one of -1, 0, 1, got {value!r}") from None


class NonFiniteSymbolError(ValueError):
    """A multiplier symbol evaluated to inf/nan on the lattice."""

    def __init__(self, tag: str, xi: tuple[float, ...]):
        self.tag = tag
        self.xi = xi
        super().__init__(f"symbol {tag!r} is not finite at xi={xi}")


class SupportGuardError(ValueError):
    """Data has too much mass near the box boundary to stand in for R^n."""


def _per_axis(value, dim: int, cast) -> tuple:
    if np.ndim(value) == 0:
        return (cast(value),) * dim
    values = tuple(cast(v) for v in value)
    if len(values) != dim:
        raise ValueError(f"expected {dim} per-axis values, got {len(values)}")
    return values


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L, L)^n``.

    ``points_per_axis`` and ``half_length`` accept a scalar (same on every
    axis) or one value per axis.
    """

    dim: int
    points_per_axis: tuple[int, ...] = dc_field(default=(256,))
    half_length: tuple[float, ...] = dc_field(default=(math.pi,))

    MAX_DIM = 2

    def __post_init__(self):
        if self.dim not in range(1, self.MAX_DIM + 1):
            raise ValueError(f"dim must be 1..{self.MAX_DIM}, got {self.dim}")
        npts = _per_axis(self.points_per_axis, self.dim, int)
        half = _per_axis(self.half_length, self.dim, float)
        for n in npts:
            if n < 2 or n & (n - 1):
                raise ValueError(f"points per axis must be a power of two >= 2, got {n}")
        for L in half:
            if not (L > 0 and math.isfinite(L)):
                raise ValueError(f"half_length must be positive and finite, got {L}")
        object.__setattr__(self, "points_per_axis", npts)
        object.__setattr__(self, "half_length", half)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points_per_axis

    @property
    def size(self) -> int:
        return int(np.prod(self.points_per_axis))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(2 * L / n for L, n in zip(self.half_length, self.points_per_axis))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def box_volume(self) -> float:
        return float(np.prod([2 * L for L in self.half_length]))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        """1-D coordinate arrays, ``x = -L + i h``."""
        return tuple(
            -L + h * np.arange(n)
            for L, h, n in zip(self.half_length, self.spacing, self.points_per_axis)
        )

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x**2 for x in self.coords))

    @cached_property
    def mode_indices(self) -> tuple[np.ndarray, ...]:
        """Integer mode numbers per axis in FFT order, ``-N/2 .. N/2-1``."""
        return tuple(np.fft.fftfreq(n, d=1.0 / n).astype(np.int64) for n in self.points_per_axis)

    @cached_property
    def frequencies(self) -> tuple[np.ndarray, ...]:
        """Per-axis lattice ``(pi/L) m`` in FFT order."""
        return tuple((math.pi / L) * m for L, m in zip(self.half_length, self.mode_indices))

    @cached_property
    def wavevectors(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.frequencies, indexing="ij"))

    @cached_property
    def xi_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.wavevectors)

    @cached_property
    def _xi_squared_ld(self) -> np.ndarray:
        per_axis = [
            ((_PI_LD / np.longdouble(L)) * m.astype(np.longdouble)) ** 2
            for L, m in zip(self.half_length, self.mode_indices)
        ]
        return sum(np.meshgrid(*per_axis, indexing="ij"))

    @cached_property
    def nyquist_index(self) -> tuple[int, ...]:
        return tuple(n // 2 for n in self.points_per_axis)

    def xi_at(self, index: tuple[int, ...]) -> tuple[float, ...]:
        return tuple(float(f[i]) for f, i in zip(self.frequencies, index))


class Field:
    """Complex field sampled on a :class:`Grid`; immutable.

    ``spectrum`` holds coefficients ``c_m`` with
    ``f(x) = sum_m c_m exp(i xi_m . x)``; the discrete Parseval identity
    reads ``sum |f|^2 h^n = (2L)^n sum |c_m|^2``.
    """

    __slots__ = ("grid", "_samples", "_spectrum")

    def __init__(self, grid: Grid, samples):
        arr = np.array(samples, dtype=np.complex128)
        if arr.shape != grid.shape:
            raise ValueError(f"samples shape {arr.shape} does not match grid {grid.shape}")
        arr.setflags(write=False)
        self.grid = grid
        self._samples = arr
        self._spectrum = None

    @classmethod
    def from_spectrum(cls, grid: Grid, spectrum) -> "Field":
        spec = np.array(spectrum, dtype=np.complex128)
        if spec.shape != grid.shape:
            raise ValueError(f"spectrum shape {spec.shape} does not match grid {grid.shape}")
        out = cls(grid, np.fft.ifftn(spec) * grid.size)
        spec.setflags(write=False)
        out._spectrum = spec
        return out

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def spectrum(self) -> np.ndarray:
        if self._spectrum is None:
            spec = np.fft.fftn(self._samples) / self.grid.size
            spec.setflags(write=False)
            self._spectrum = spec
        return self._spectrum

    def norm(self) -> float:
        """Discrete L^2 norm of the samples."""
        return math.sqrt(float(np.sum(np.abs(self._samples) ** 2)) * self.grid.cell_volume)

    def spectral_norm(self) -> float:
        """L^2 norm computed from the spectrum (Parseval)."""
        return math.sqrt(float(np.sum(np.abs(self.spectrum) ** 2)) * self.grid.box_volume)

    def sup(self) -> float:
        return float(np.max(np.abs(self._samples)))

    def mean(self) -> complex:
        return complex(self.spectrum[(0,) * self.grid.dim])

    def conj(self) -> "Field":
        return Field(self.grid, np.conj(self._samples))

    def _coerce(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other._samples
        return other

    def __add__(self, other):
        return Field(self.grid, self._samples + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self._samples - self._coerce(other))

    def __rsub__(self, other):
        return Field(self.grid, self._coerce(other) - self._samples)

    def __mul__(self, other):
        return Field(self.grid, self._samples * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self._samples / self._coerce(other))

    def __neg__(self):
        return Field(self.grid, -self._samples)

    def __repr__(self):
        return f"Field(grid={self.grid!r}, norm={self.norm():.6g})"


@dataclass(frozen=True)
class MultiplierSymbol:
    """Scalar symbol ``m(xi)`` acting as a Fourier multiplier.

    ``func`` receives the tuple of frequency meshes and returns an array
    broadcastable to the grid shape.  ``odd_axes`` lists the axes in which
    the symbol is odd; the unpaired Nyquist mode is zeroed along them.
    """

    func: Callable[[tuple[np.ndarray, ...]], np.ndarray]
    tag: str = "symbol"
    odd_axes: tuple[int, ...] = ()

    def evaluate(self, grid: Grid) -> np.ndarray:
        values = np.asarray(self.func(grid.wavevectors), dtype=np.complex128)
        return np.broadcast_to(values, grid.shape)

    @classmethod
    def identity(cls) -> "MultiplierSymbol":
        return cls(lambda xi: np.ones(()), tag="identity")


def _zero_nyquist(spec: np.ndarray, grid: Grid, axes: Sequence[int]) -> None:
    for ax in axes:
        idx = [slice(None)] * grid.dim
        idx[ax] = grid.nyquist_index[ax]
        spec[tuple(idx)] = 0.0


def apply_multiplier(f: Field, m: MultiplierSymbol) -> Field:
    values = m.evaluate(f.grid)
    finite = np.isfinite(values)
    if not finite.all():
        bad = tuple(int(i) for i in np.argwhere(~finite)[0])
        raise NonFiniteSymbolError(m.tag, f.grid.xi_at(bad))
    spec = f.spectrum * values
    if m.odd_axes:
        _zero_nyquist(spec, f.grid, m.odd_axes)
    return Field.from_spectrum(f.grid, spec)


def dispersion_relation(grid: Grid, eps) -> np.ndarray:
    """``eps |xi|^2 + |xi|^4`` on the lattice (float64)."""
    eps = Epsilon.coerce(eps)
    k2 = grid.xi_squared
    return eps * k2 + k2**2


def propagator_phase(grid: Grid, t: float, eps: int) -> np.ndarray:
    # reduce t * omega modulo 2 pi in long double: the raw product reaches
    # 1e6 rad, where float64 rounding alone would cost ~1e-10 in phase
    k2 = grid._xi_squared_ld
    omega = np.longdouble(eps) * k2 + k2 * k2
    theta = np.fmod(np.longdouble(t) * omega, _TWO_PI_LD)
    return np.exp(-1j * theta.astype(np.float64))


def propagator_symbol(t: float, eps) -> MultiplierSymbol:
    """Symbol of ``S(t)``: ``exp(-i t (eps |xi|^2 + |xi|^4))``."""
    eps = int(Epsilon.coerce(eps))
    t = float(t)

    def func(xi):
        k2 = sum(k**2 for k in xi)
        return np.exp(-1j * t * (eps * k2 + k2**2))

    return MultiplierSymbol(func, tag=f"S(t={t:g}, eps={eps})")


def propagate(f: Field, t: float, eps) -> Field:
    """Exact linear evolution ``S(t) f``."""
    t = float(t)
    if not math.isfinite(t):
        raise ValueError(f"t must be finite, got {t}")
    eps = int(Epsilon.coerce(eps))
    if t == 0.0:
        return f
    return Field.from_spectrum(f.grid, f.spectrum * propagator_phase(f.grid, t, eps))


def fractional_derivative(f: Field, gamma: float) -> Field:
    """Homogeneous derivative ``D^gamma``, symbol ``|xi|^gamma``."""
    gamma = float(gamma)
    if not gamma >= 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if gamma == 0:
        return f

    def func(xi):
        return np.sqrt(sum(k**2 for k in xi)) ** gamma

    return apply_multiplier(f, MultiplierSymbol(func, tag=f"|xi|^{gamma:g}"))


def partial_derivative(f: Field, alpha: Sequence[int]) -> Field:
    """``d^alpha f`` with ``alpha`` a multi-index (one entry per axis)."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != f.grid.dim:
        raise ValueError(f"multi-index {alpha} does not match dim {f.grid.dim}")
    if any(a < 0 for a in alpha):
        raise ValueError(f"multi-index entries must be >= 0, got {alpha}")
    if sum(alpha) > 4:
        raise ValueError(f"|alpha| <= 4 required, got {alpha}")
    if sum(alpha) == 0:
        return f

    def func(xi):
        out = np.ones(())
        for k, a in zip(xi, alpha):
            if a:
                out = out * (1j * k) ** a
        return out

    odd = tuple(ax for ax, a in enumerate(alpha) if a % 2)
    return apply_multiplier(f, MultiplierSymbol(func, tag=f"d^{alpha}", odd_axes=odd))


def laplacian(f: Field) -> Field:
    return apply_multiplier(f, MultiplierSymbol(lambda xi: -sum(k**2 for k in xi), tag="laplacian"))


def multiply_by_coordinate(f: Field, axis: int) -> Field:
    """Multiply by the sawtooth coordinate ``x_axis`` of the fundamental domain."""
    return Field(f.grid, f.samples * f.grid.coords[axis])


def gaussian(grid: Grid, width: float = 1.0, center=0.0, amplitude: complex = 1.0) -> Field:
    """``amplitude * exp(-|x - center|^2 / (2 width^2))``."""
    center = _per_axis(center, grid.dim, float)
    r2 = sum((x - c) ** 2 for x, c in zip(grid.coords, center))
    return Field(grid, amplitude * np.exp(-r2 / (2.0 * width**2)))


def plane_wave(grid: Grid, modes: Sequence[int], amplitude: complex = 1.0) -> Field:
    """Single lattice mode ``exp(i xi_m . x)`` with integer mode numbers ``modes``."""
    modes = _per_axis(modes, grid.dim, int)
    phase = sum((math.pi / L) * m * x for L, m, x in zip(grid.half_length, modes, grid.coords))
    return Field(grid, amplitude * np.exp(1j * phase))


def outside_mass_fraction(f: Field) -> float:
    """Fraction of ``|f|^2`` lying outside the half box ``[-L/2, L/2)^n``."""
    total = float(np.sum(np.abs(f.samples) ** 2))
    if total == 0.0:
        return 0.0
    inside = np.ones(f.grid.shape, dtype=bool)
    for x, L in zip(f.grid.coords, f.grid.half_length):
        inside &= (x >= -L / 2) & (x < L / 2)
    return float(np.sum(np.abs(f.samples[~inside]) ** 2)) / total


def check_support(f: Field, tol: float = 1e-10) -> Field:
    """Raise :class:`SupportGuardError` unless ``f`` is concentrated in the half box."""
    frac = outside_mass_fraction(f)
    if frac > tol:
        raise SupportGuardError(
            f"mass fraction {frac:.3e} outside [-L/2, L/2)^n exceeds {tol:.1e}; enlarge the box"
        )
    return f
