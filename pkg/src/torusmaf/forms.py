"""Closed (1,1)-forms on the torus: constant class matrix plus i ddbar of a potential."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .grid import Grid, HermitianField, ScalarField, complex_hessian, hessian_from_coeffs, integrate


class FormError(ValueError):
    pass


def hermitian_matrix(A, n: int) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    if A.shape != (n, n):
        raise FormError(f"class matrix must be {n}x{n}, got shape {A.shape}")
    if not np.allclose(A, A.conj().T, atol=1e-14, rtol=0):
        raise FormError("class matrix is not Hermitian")
    return 0.5 * (A + A.conj().T)


@dataclass
class Background:
    """The form with coefficients ``A + complex_hessian(psi0)``."""

    A: np.ndarray
    psi0: ScalarField

    def __post_init__(self):
        self.A = hermitian_matrix(self.A, self.psi0.grid.n)
        m = integrate(self.psi0)
        if abs(m) > 1e-13:
            raise FormError(f"shape potential must have mean zero (mean = {m:.3e})")

    @classmethod
    def from_parts(cls, grid: Grid, A, psi0: ScalarField | None = None) -> "Background":
        if psi0 is None:
            psi0 = ScalarField.constant(grid, 0.0)
        else:
            psi0 = psi0 - integrate(psi0)
        return cls(A, psi0)

    @property
    def grid(self) -> Grid:
        return self.psi0.grid

    @cached_property
    def hessian(self) -> HermitianField:
        return complex_hessian(self.psi0)

    def coefficients(self) -> HermitianField:
        return self.hessian.add_constant(self.A)


def _combine(a: Background, b: Background, sa: float, sb: float) -> Background:
    return Background(sa * a.A + sb * b.A, ScalarField(a.grid, sa * a.psi0.values + sb * b.psi0.values))


@dataclass
class Pencil:
    """Reference family ``omega_t = omegaInf + exp(-t) chi`` with volume form ``Omega``."""

    omega0: Background
    omegaInf: Background
    Omega: ScalarField
    normalized_class: bool = True
    integral_class: bool | None = None  # metadata only

    def __post_init__(self):
        m = integrate(self.Omega)
        if abs(m - 1.0) > 1e-12:
            raise FormError(f"volume form must have total mass 1 (got {m!r})")
        if np.min(self.Omega.values) <= 0.0:
            raise FormError("volume form must be positive")
        if self.normalized_class:
            v = class_volume(self.omegaInf)
            if abs(v - 1.0) > 1e-12:
                raise FormError(f"limit class volume must be 1 (got {v!r})")
        lam = float(np.min(min_eigenvalue_field(self.omega0.coefficients()).values))
        if lam <= 0.0:
            raise FormError(f"initial form is not Kahler (min eigenvalue {lam:.3e})")

    @property
    def grid(self) -> Grid:
        return self.Omega.grid

    @property
    def n(self) -> int:
        return self.grid.n

    @cached_property
    def chi(self) -> Background:
        return _combine(self.omega0, self.omegaInf, 1.0, -1.0)

    def A_at(self, t: float) -> np.ndarray:
        return self.omegaInf.A + math.exp(-t) * self.chi.A

    def volume_at(self, t: float) -> float:
        return float(np.real(np.linalg.det(self.A_at(t))))

    @cached_property
    def _base_parts(self):
        """Raw coefficient arrays of omegaInf and chi (diag, off) for the hot path."""
        inf = self.omegaInf.coefficients()
        chi = self.chi.coefficients()
        return inf.diag, inf.off, chi.diag, chi.off

    def base_arrays(self, t: float):
        """Raw ``(diag, off)`` of the reference form at time ``t``."""
        d_inf, o_inf, d_chi, o_chi = self._base_parts
        e = math.exp(-t)
        diag = d_inf + e * d_chi
        off = None if o_inf is None else o_inf + e * o_chi
        return diag, off


def reference_form_at(pencil: Pencil, t: float) -> Background:
    if t < 0:
        raise FormError(f"time must be nonnegative, got {t}")
    if math.isinf(t):
        return pencil.omegaInf
    return _combine(pencil.omegaInf, pencil.chi, 1.0, math.exp(-t))


def metric_field(bg: Background, phi: ScalarField) -> HermitianField:
    g = bg.grid
    diag, off = hessian_from_coeffs(g, g.fft(bg.psi0.values + phi.values))
    return HermitianField(g, diag, off).add_constant(bg.A)


def det_arrays(diag: np.ndarray, off: np.ndarray | None) -> np.ndarray:
    if off is None:
        return diag[0]
    return _kernels.det2(diag[0], diag[1], off)


def mineig_arrays(diag: np.ndarray, off: np.ndarray | None) -> np.ndarray:
    if off is None:
        return diag[0]
    return _kernels.mineig2(diag[0], diag[1], off)


def ma_density(g: HermitianField) -> ScalarField:
    """Pointwise determinant of the coefficient matrix (may be negative)."""
    return ScalarField(g.grid, det_arrays(g.diag, g.off))


def min_eigenvalue_field(g: HermitianField) -> ScalarField:
    return ScalarField(g.grid, mineig_arrays(g.diag, g.off))


def class_volume(bg: Background) -> float:
    """``[omega]^n``: determinant of the constant class matrix."""
    return float(np.real(np.linalg.det(bg.A)))


def mixed_class_pairing(A, B) -> float:
    """Mixed determinant ``det(A + B) - det A - det B`` (n = 2) or ``A`` (n = 1)."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    B = np.atleast_2d(np.asarray(B, dtype=complex))
    if A.shape != B.shape or A.shape[0] != A.shape[1] or A.shape[0] not in (1, 2):
        raise FormError(f"pairing needs equal 1x1 or 2x2 matrices, got {A.shape} and {B.shape}")
    if A.shape[0] == 1:
        return float(A[0, 0].real)
    v = A[0, 0] * B[1, 1] + A[1, 1] * B[0, 0] - A[0, 1] * B[1, 0] - A[1, 0] * B[0, 1]
    return float(v.real)


def ricci_form(density: ScalarField) -> HermitianField:
    """Coefficients of ``-i ddbar log density``."""
    if np.min(density.values) <= 0:
        raise FormError("Ricci form needs a positive density")
    return complex_hessian(ScalarField(density.grid, -np.log(density.values)))
