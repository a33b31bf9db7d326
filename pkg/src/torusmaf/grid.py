"""Periodic grids on the unit torus and spectral calculus.

The torus of complex dimension ``n`` is sampled on ``[0, 1)^(2n)`` with axes
ordered ``(x1, y1, x2, y2)`` and holomorphic coordinates ``z_j = x_j + i y_j``.
Integration uses the normalized measure (total volume 1), so the integral of a
field is the mean of its samples.

All derivatives are Fourier multipliers.  The Nyquist wavenumber is zeroed on
every axis, which keeps every multiplier Hermitian-symmetric: real fields map
to real fields and the complex Hessian composes exactly from the first
derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.fft as sfft

PI2 = np.pi * np.pi


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n: int
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise GridError(f"unsupported complex dimension {self.n}; expected 1 or 2")
        if self.N < 8 or self.N & (self.N - 1):
            raise GridError(f"resolution must be a power of two >= 8, got {self.N}")

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.ndim

    @property
    def size(self) -> int:
        return self.N ** self.ndim

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return (self.N,) * (self.ndim - 1) + (self.N // 2 + 1,)

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per real axis."""
        x = np.arange(self.N) / self.N
        out = []
        for ax in range(self.ndim):
            s = [1] * self.ndim
            s[ax] = self.N
            out.append(x.reshape(s))
        return out

    @cached_property
    def wavenumbers(self) -> list[np.ndarray]:
        """Integer wavenumbers per axis in ``rfftn`` layout, Nyquist zeroed."""
        ks = []
        for ax in range(self.ndim):
            if ax == self.ndim - 1:
                k = np.arange(self.N // 2 + 1, dtype=float)
                k[-1] = 0.0
            else:
                k = sfft.fftfreq(self.N, 1.0 / self.N)
                k[self.N // 2] = 0.0
            s = [1] * self.ndim
            s[ax] = k.size
            ks.append(k.reshape(s))
        return ks

    @cached_property
    def trace_symbol(self) -> np.ndarray:
        """Symbol of ``-trace(complex_hessian)``: ``pi^2 |k|^2`` (nonnegative)."""
        out = np.zeros(self.spectral_shape)
        for k in self.wavenumbers:
            out = out + PI2 * k * k
        return out

    @cached_property
    def hessian_symbols(self) -> dict[str, np.ndarray]:
        """Real multipliers producing the Hessian entries from ``rfftn(phi)``.

        Keys ``"jj"`` give the diagonal entries, ``"12re"``/``"12im"`` the
        real and imaginary parts of the off-diagonal entry (n = 2 only).
        """
        k = self.wavenumbers
        sym = {}
        for j in range(self.n):
            a, b = k[2 * j], k[2 * j + 1]
            sym[f"{j}{j}"] = np.broadcast_to(-PI2 * (a * a + b * b), self.spectral_shape).copy()
        if self.n == 2:
            a1, b1, a2, b2 = k
            sym["12re"] = np.broadcast_to(-PI2 * (a1 * a2 + b1 * b2), self.spectral_shape).copy()
            sym["12im"] = np.broadcast_to(-PI2 * (a1 * b2 - b1 * a2), self.spectral_shape).copy()
        return sym

    def fft(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfftn(values)

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.irfftn(coeffs, s=self.shape)


def make_grid(n: int, N: int) -> Grid:
    return Grid(int(n), int(N))


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("scalar field contains non-finite values")
        self.values = v

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def _other(self, other):
        return other.values if isinstance(other, ScalarField) else other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass
class HermitianField:
    """Per-sample Hermitian ``n x n`` matrices.

    ``diag`` holds the real diagonal with shape ``(n, *grid.shape)``; ``off``
    is the complex entry ``g_{1 2bar}`` for n = 2 (``g_{2 1bar}`` is its
    conjugate by construction) and ``None`` for n = 1.
    """

    grid: Grid
    diag: np.ndarray
    off: np.ndarray | None = None

    def entry(self, j: int, k: int) -> np.ndarray:
        if j == k:
            return self.diag[j]
        if self.off is None:
            raise IndexError("off-diagonal entry requested for n = 1")
        return self.off if (j, k) == (0, 1) else np.conj(self.off)

    def entries(self) -> Iterable[np.ndarray]:
        for j in range(self.grid.n):
            for k in range(self.grid.n):
                yield self.entry(j, k)

    def trace(self) -> np.ndarray:
        return self.diag.sum(axis=0)

    def add_constant(self, A: np.ndarray) -> "HermitianField":
        A = np.asarray(A, dtype=complex).reshape(self.grid.n, self.grid.n)
        diag = self.diag + np.real(np.diag(A)).reshape((self.grid.n,) + (1,) * self.grid.ndim)
        off = None if self.off is None else self.off + A[0, 1]
        return HermitianField(self.grid, diag, off)

    def __add__(self, other: "HermitianField") -> "HermitianField":
        off = None if self.off is None else self.off + other.off
        return HermitianField(self.grid, self.diag + other.diag, off)

    def __mul__(self, s: float) -> "HermitianField":
        off = None if self.off is None else self.off * s
        return HermitianField(self.grid, self.diag * s, off)

    __rmul__ = __mul__

    def as_matrices(self) -> np.ndarray:
        """Dense ``(*shape, n, n)`` complex array; for tests and small grids."""
        n = self.grid.n
        out = np.zeros(self.grid.shape + (n, n), dtype=complex)
        for j in range(n):
            for k in range(n):
                out[..., j, k] = self.entry(j, k)
        return out


def _check_wave(grid: Grid, k: Sequence[int]) -> np.ndarray:
    k = np.asarray(k, dtype=int)
    if k.shape != (grid.ndim,):
        raise GridError(f"frequency vector {k.tolist()} must have {grid.ndim} components")
    if np.any(np.abs(k) >= grid.N // 2):
        raise GridError(f"frequency {k.tolist()} aliases on a {grid.N}-point grid")
    return k


def synth(grid: Grid, waves: Iterable[Sequence]) -> ScalarField:
    """Sum of ``a cos(2 pi k.x + theta)`` over ``(k, a, theta)`` triples."""
    xs = grid.coords()
    out = np.zeros(grid.shape)
    for k, a, theta in waves:
        k = _check_wave(grid, k)
        arg = sum(2.0 * np.pi * ki * xi for ki, xi in zip(k, xs))
        out = out + float(a) * np.cos(arg + float(theta))
    return ScalarField(grid, out)


def integrate(f: ScalarField | np.ndarray) -> float:
    v = f.values if isinstance(f, ScalarField) else f
    return float(np.mean(v))


def hessian_from_coeffs(grid: Grid, phat: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Hessian entries ``(diag, off)`` as raw arrays from spectral coefficients."""
    sym = grid.hessian_symbols
    diag = np.stack([grid.ifft(sym[f"{j}{j}"] * phat) for j in range(grid.n)])
    off = None
    if grid.n == 2:
        off = grid.ifft(sym["12re"] * phat) + 1j * grid.ifft(sym["12im"] * phat)
    return diag, off


def complex_hessian(phi: ScalarField) -> HermitianField:
    """Coefficients ``d^2 phi / dz_j dzbar_k`` of ``i ddbar phi``."""
    g = phi.grid
    diag, off = hessian_from_coeffs(g, g.fft(phi.values))
    return HermitianField(g, diag, off)


def gradient_from_coeffs(grid: Grid, fhat: np.ndarray) -> np.ndarray:
    k = grid.wavenumbers
    out = np.empty((grid.n,) + grid.shape, dtype=complex)
    for j in range(grid.n):
        dx = grid.ifft(2j * np.pi * k[2 * j] * fhat)
        dy = grid.ifft(2j * np.pi * k[2 * j + 1] * fhat)
        out[j] = 0.5 * (dx - 1j * dy)
    return out


def spectral_gradient_z(f: ScalarField) -> np.ndarray:
    """``df/dz_j = (d/dx_j - i d/dy_j) f / 2`` with shape ``(n, *grid.shape)``."""
    g = f.grid
    return gradient_from_coeffs(g, g.fft(f.values))


def _complex_derivative(grid: Grid, values: np.ndarray, axis: int) -> np.ndarray:
    """Spectral d/d(axis) of a complex-valued array (full FFT, Nyquist zeroed)."""
    k = sfft.fftfreq(grid.N, 1.0 / grid.N)
    k[grid.N // 2] = 0.0
    s = [1] * grid.ndim
    s[axis] = grid.N
    return sfft.ifftn(2j * np.pi * k.reshape(s) * sfft.fftn(values))


def d_zbar(grid: Grid, values: np.ndarray, j: int) -> np.ndarray:
    """``d/dzbar_j`` of a complex field given as raw samples."""
    return 0.5 * (_complex_derivative(grid, values, 2 * j)
                  + 1j * _complex_derivative(grid, values, 2 * j + 1))
