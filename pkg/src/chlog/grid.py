"""Periodic torus grid, Fourier transforms and spectral operators.

The torus is [-pi, pi)^2 sampled at ``x_j = -pi + j*h`` with ``h = 2*pi/n``.
Fourier coefficients are normalised so that ``coeff(k)`` approximates
``(2*pi)**-2 * integral f(x) exp(-i k.x) dx`` and hence ``coeff(0, 0)`` is
the mean of the field.  Coefficient arrays are stored in FFT order: index
``[a, b]`` holds the mode ``(k1[a], k2[b])`` where ``k1, k2`` come from
``numpy.fft.fftfreq(n, 1/n)``.

Axis 0 of every sample array runs along x1, axis 1 along x2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

MAX_GRID_N = 4096
MEAN_ZERO_RTOL = 1e-10

TWO_PI = 2.0 * np.pi
TORUS_AREA = TWO_PI**2


class GridMismatchError(ValueError):
    """Two operands live on different grids."""


class MeanZeroError(ValueError):
    """A negative-order operator was applied to a field with nonzero mean."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform n x n grid on the torus [-pi, pi)^2.

    Immutable after construction; all tables are read-only arrays.
    """

    n: int
    max_n: int = MAX_GRID_N
    k1: np.ndarray = field(init=False, repr=False)
    k2: np.ndarray = field(init=False, repr=False)
    ksq: np.ndarray = field(init=False, repr=False)
    phase: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
            raise TypeError(f"n must be an integer, got {n!r}")
        if n % 2:
            raise ValueError(f"n must be even, got {n}")
        if n < 4:
            raise ValueError(f"n must be >= 4, got {n}")
        if n > self.max_n:
            raise ValueError(f"n must be <= {self.max_n}, got {n}")
        k = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        ksq = (k1**2 + k2**2).astype(np.float64)
        # grid starts at -pi: exp(-i k x_j) = (-1)^k exp(-2 pi i k j / n)
        phase = np.where((k1 + k2) % 2 == 0, 1.0, -1.0)
        for name, arr in (("k1", k1), ("k2", k2), ("ksq", ksq), ("phase", phase)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n", int(n))

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    @property
    def quad_weight(self) -> float:
        """Rectangle-rule weight (2*pi/n)^2 of a single sample."""
        return self.h**2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample coordinates (x1, x2), each of shape (n, n)."""
        x = -np.pi + self.h * np.arange(self.n)
        return np.meshgrid(x, x, indexing="ij")

    def index_of(self, k1: int, k2: int) -> tuple[int, int]:
        """Array index of wavenumber (k1, k2), aliased into the grid's range."""
        return (int(k1) % self.n, int(k2) % self.n)

    def wavenumber_at(self, idx: tuple[int, int]) -> tuple[int, int]:
        return (int(self.k1[idx]), int(self.k2[idx]))

    def __eq__(self, other):
        return isinstance(other, Grid) and other.n == self.n

    def __hash__(self):
        return hash(("Grid", self.n))


def make_grid(n: int, max_n: int = MAX_GRID_N) -> Grid:
    return Grid(n, max_n=max_n)


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples on a grid, shape (n, n)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"values must have shape {self.grid.shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(v))[0])
            raise ValueError(f"non-finite sample at index {bad}")
        object.__setattr__(self, "values", v)

    def mean(self) -> float:
        return float(np.mean(self.values))

    def __add__(self, other: "Field") -> "Field":
        _check_same(self.grid, other.grid)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same(self.grid, other.grid)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Complex Fourier coefficients of a field, FFT ordering."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != self.grid.shape:
            raise ValueError(f"coeffs must have shape {self.grid.shape}, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    def coeff(self, k1: int, k2: int) -> complex:
        return complex(self.coeffs[self.grid.index_of(k1, k2)])

    def __add__(self, other: "Spectrum") -> "Spectrum":
        _check_same(self.grid, other.grid)
        return Spectrum(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "Spectrum") -> "Spectrum":
        _check_same(self.grid, other.grid)
        return Spectrum(self.grid, self.coeffs - other.coeffs)


def _check_same(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatchError(f"grid mismatch: n={a.n} vs n={b.n}")


def forward(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Normalised coefficients of a raw sample array (no validation)."""
    return np.fft.fft2(values) * (grid.phase / grid.n**2)


def backward(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Real samples from a normalised coefficient array (no validation).

    The imaginary part, roundoff for conjugate-symmetric input, is dropped.
    """
    return np.fft.ifft2(coeffs * (grid.phase * grid.n**2)).real


def transform(f: Field) -> Spectrum:
    return Spectrum(f.grid, forward(f.grid, f.values))


def inverse_transform(spec: Spectrum) -> Field:
    return Field(spec.grid, backward(spec.grid, spec.coeffs))


Symbol = Union[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def symbol_table(grid: Grid, symbol: Symbol) -> np.ndarray:
    """Evaluate a symbol on the grid's wavenumber table.

    ``symbol`` is either an (n, n) array in FFT order or a callable taking
    integer arrays ``(k1, k2)``.
    """
    if callable(symbol):
        table = np.asarray(symbol(grid.k1, grid.k2), dtype=np.float64)
        table = np.broadcast_to(table, grid.shape)
    else:
        table = np.asarray(symbol, dtype=np.float64)
        if table.shape != grid.shape:
            raise ValueError(f"symbol table must have shape {grid.shape}, got {table.shape}")
    if not np.all(np.isfinite(table)):
        idx = tuple(np.argwhere(~np.isfinite(table))[0])
        raise ValueError(f"symbol is not finite at mode k={grid.wavenumber_at(idx)}")
    return table


def apply_symbol(spec: Spectrum, symbol: Symbol) -> Spectrum:
    return Spectrum(spec.grid, symbol_table(spec.grid, symbol) * spec.coeffs)


def laplacian_symbol(grid: Grid) -> np.ndarray:
    return -grid.ksq


def bilaplacian_symbol(grid: Grid) -> np.ndarray:
    return grid.ksq**2


def fractional_symbol(grid: Grid, s: float) -> np.ndarray:
    """|k|^s; for s < 0 the zero mode is set to 0 (mean-zero convention)."""
    if s >= 0:
        return np.sqrt(grid.ksq) ** s
    out = np.zeros(grid.shape)
    nz = grid.ksq > 0
    out[nz] = grid.ksq[nz] ** (0.5 * s)
    return out


def laplacian(f: Field) -> Field:
    return inverse_transform(apply_symbol(transform(f), laplacian_symbol(f.grid)))


def _require_mean_zero(f: Field) -> None:
    m = abs(f.mean())
    if m > MEAN_ZERO_RTOL * l2_norm(f):
        raise MeanZeroError(
            f"field must be mean-zero (|mean| = {m:.3e} exceeds "
            f"{MEAN_ZERO_RTOL:g} * ||f||_2)"
        )


def inverse_laplacian_meanzero(f: Field) -> Field:
    """Solve Delta v = f for mean-zero v; f must itself be mean-zero."""
    _require_mean_zero(f)
    inv = np.zeros(f.grid.shape)
    nz = f.grid.ksq > 0
    inv[nz] = -1.0 / f.grid.ksq[nz]
    return inverse_transform(apply_symbol(transform(f), inv))


def galerkin_mask(grid: Grid, cutoff_n: int) -> np.ndarray:
    if not 0 < cutoff_n <= grid.n // 2:
        raise ValueError(f"cutoff must satisfy 0 < N <= {grid.n // 2}, got {cutoff_n}")
    return (np.abs(grid.k1) <= cutoff_n) & (np.abs(grid.k2) <= cutoff_n)


def galerkin_project(spec: Spectrum, cutoff_n: int) -> Spectrum:
    """Zero every mode with max(|k1|, |k2|) > cutoff_n."""
    mask = galerkin_mask(spec.grid, cutoff_n)
    return Spectrum(spec.grid, np.where(mask, spec.coeffs, 0.0))


# -- norms -----------------------------------------------------------------

def lp_norm(f: Field, p: float) -> float:
    if p == np.inf:
        return linf_norm(f)
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float((f.grid.quad_weight * np.sum(np.abs(f.values) ** p)) ** (1.0 / p))


def l2_norm(f: Field) -> float:
    return float(np.sqrt(f.grid.quad_weight * np.sum(f.values**2)))


def linf_norm(f: Field) -> float:
    """Max over grid samples; can undershoot the continuum supremum."""
    return float(np.max(np.abs(f.values)))


def spectral_sum(grid: Grid, coeffs: np.ndarray, weight: np.ndarray | float = 1.0) -> float:
    """(2 pi)^2 * sum_k weight(k) |c(k)|^2."""
    return float(TORUS_AREA * np.sum(weight * (coeffs.real**2 + coeffs.imag**2)))


def hs_norm(f: Field, s: float, spec: Spectrum | None = None) -> float:
    c = transform(f).coeffs if spec is None else spec.coeffs
    return float(np.sqrt(spectral_sum(f.grid, c, (1.0 + f.grid.ksq) ** s)))


def grad_l2_norm(f: Field, spec: Spectrum | None = None) -> float:
    c = transform(f).coeffs if spec is None else spec.coeffs
    return float(np.sqrt(spectral_sum(f.grid, c, f.grid.ksq)))


def neg_grad_l2_norm(f: Field, spec: Spectrum | None = None) -> float:
    """|| |nabla|^{-1} f ||_2 for a mean-zero field."""
    _require_mean_zero(f)
    c = transform(f).coeffs if spec is None else spec.coeffs
    return float(np.sqrt(spectral_sum(f.grid, c, fractional_symbol(f.grid, -2.0))))


def norms(f: Field, p: float = 4.0, s: float = 1.0, neg_grad: bool = False) -> dict:
    """Bundle of norms of ``f``.

    ``neg_grad_l2`` is only computed when ``neg_grad`` is true, since it
    requires a mean-zero field; otherwise it is reported as None.
    """
    spec = transform(f)
    return {
        "l2": l2_norm(f),
        "linf": linf_norm(f),
        "lp": lp_norm(f, p),
        "h_s": hs_norm(f, s, spec),
        "grad_l2": grad_l2_norm(f, spec),
        "neg_grad_l2": neg_grad_l2_norm(f, spec) if neg_grad else None,
    }
