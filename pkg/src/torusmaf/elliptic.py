"""Elliptic solver for the limit equation ``det(omegaInf + i ddbar psi) = Omega``.

Damped Newton on ``G(psi, c) = log det(g + H psi) - log Omega - c`` along a
regularization path ``omegaInf + delta * omega_reg``.  The scalar ``c`` absorbs
the class-volume mismatch at ``delta > 0`` and is updated every iterate so the
linearized equation is solvable.  The linear step solves

    -tr(cof(g~) H h) = det(g~) (G - dc)

matrix-free by preconditioned conjugate gradients; the preconditioner is the
constant-coefficient operator built from ``cof(A)``, exact for n = 1.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, gmres

from . import _kernels
from .forms import Background, det_arrays, mineig_arrays
from .grid import PI2, Grid, ScalarField, gradient_from_coeffs, hessian_from_coeffs

log = logging.getLogger(__name__)

DEGENERATE_SCHEDULE = (1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001)
KAHLER_SCHEDULE = (0.0,)


class SolvabilityError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


class PositivityLoss(ArithmeticError):
    pass


@dataclass
class EllipticSolution:
    psi: ScalarField
    residual_sup: float
    reg_final: float
    iterations: int
    c_final: float = 0.0
    history: list[float] = field(default_factory=list)
    path: list[dict] = field(default_factory=list)


def _normalize(psi: np.ndarray, Omega: np.ndarray) -> np.ndarray:
    return psi - np.mean(psi * Omega)


def poisson_oracle_n1(omegaInf: Background, Omega: ScalarField) -> ScalarField:
    """Exact solve for n = 1, where the equation is ``A + H(psi0 + psi) = Omega``."""
    g = Omega.grid
    if g.n != 1:
        raise ValueError("the linear oracle exists only for n = 1")
    f_inf = omegaInf.coefficients().diag[0]
    mismatch = float(np.mean(Omega.values)) - float(np.real(omegaInf.A[0, 0]))
    if abs(mismatch) > 1e-10:
        raise SolvabilityError(f"mean(Omega) differs from the class volume by {mismatch:.3e}")
    rhs_hat = g.fft(Omega.values - f_inf)
    S = g.trace_symbol
    psi_hat = np.zeros_like(rhs_hat)
    nz = S > 0
    psi_hat[nz] = -rhs_hat[nz] / S[nz]
    psi = g.ifft(psi_hat)
    return ScalarField(g, _normalize(psi, Omega.values))


def _cofactor_symbol(grid: Grid, A: np.ndarray) -> np.ndarray:
    """Symbol of ``-tr(cof(A) H .)``: ``pi^2 zeta^H cof(A) zeta`` with ``zeta = a - i b``."""
    if grid.n == 1:
        return grid.trace_symbol
    a1, b1, a2, b2 = grid.wavenumbers
    z1 = a1 - 1j * b1
    z2 = a2 - 1j * b2
    cof = np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]])
    q = (np.conj(z1) * cof[0, 0] * z1 + np.conj(z1) * cof[0, 1] * z2
         + np.conj(z2) * cof[1, 0] * z1 + np.conj(z2) * cof[1, 1] * z2)
    return PI2 * np.real(q)


class _Problem:
    def __init__(self, omegaInf: Background, Omega: ScalarField, A: np.ndarray, psi0: np.ndarray):
        self.grid = Omega.grid
        self.Omega = Omega.values
        self.logOmega = np.log(self.Omega)
        self.A = A
        self.base_hat = self.grid.fft(psi0)
        self.V = float(np.real(np.linalg.det(A)))
        self.pre = _cofactor_symbol(self.grid, A)

    def metric(self, psi: np.ndarray):
        g = self.grid
        diag, off = hessian_from_coeffs(g, self.base_hat + g.fft(psi))
        for j in range(g.n):
            diag[j] = diag[j] + self.A[j, j].real
        if off is not None:
            off = off + self.A[0, 1]
        return diag, off

    def residual(self, psi: np.ndarray, c: float):
        diag, off = self.metric(psi)
        det = det_arrays(diag, off)
        lam = float(np.min(mineig_arrays(diag, off)))
        if lam <= 0.0 or float(np.min(det)) <= 0.0:
            return None, diag, off, det
        G = _kernels.logratio(det, self.Omega) - c
        return G, diag, off, det

    def apply_operator(self, diag, off, h: np.ndarray) -> np.ndarray:
        """``-tr(cof(g) H h)`` in divergence form, ``-Re sum_j d_j (cof^T conj(dh))_j``.

        Writing it through the first derivatives makes the discrete operator
        exactly symmetric; it agrees with the nondivergence form up to aliasing.
        """
        g = self.grid
        if g.n == 1:
            hd, _ = hessian_from_coeffs(g, g.fft(h))
            return -hd[0]
        k = g.wavenumbers
        v = gradient_from_coeffs(g, g.fft(h))
        cv1, cv2 = np.conj(v[0]), np.conj(v[1])
        u1 = diag[1] * cv1 - np.conj(off) * cv2
        u2 = diag[0] * cv2 - off * cv1
        acc = np.zeros(g.spectral_shape, dtype=complex)
        for j, u in enumerate((u1, u2)):
            acc += 1j * np.pi * (k[2 * j] * g.fft(u.real) + k[2 * j + 1] * g.fft(u.imag))
        return -g.ifft(acc)

    def precondition(self, r: np.ndarray) -> np.ndarray:
        g = self.grid
        rh = g.fft(r)
        out = np.zeros_like(rh)
        nz = self.pre > 0
        out[nz] = rh[nz] / self.pre[nz]
        return g.ifft(out)

    def linear_solve(self, diag, off, b: np.ndarray, rtol: float) -> np.ndarray:
        g = self.grid
        size = g.size
        if g.n == 1:
            # the cofactor of a 1x1 metric is 1: the operator is exactly -H
            return self.precondition(b)
        # Nyquist modes and constants are outside the range of the operator
        rh = g.fft(b)
        rh[self.pre <= 0] = 0.0
        b = g.ifft(rh)
        op = LinearOperator((size, size), dtype=float,
                            matvec=lambda v: self.apply_operator(diag, off, v.reshape(g.shape)).ravel())
        M = LinearOperator((size, size), dtype=float,
                           matvec=lambda v: self.precondition(v.reshape(g.shape)).ravel())
        x, info = cg(op, b.ravel(), rtol=rtol, atol=0.0, maxiter=500, M=M)
        if info != 0:
            x, info = gmres(op, b.ravel(), rtol=rtol, atol=0.0, restart=60, maxiter=20, M=M)
            if info != 0:
                log.warning("linear solve stopped early (info=%d)", info)
        x = x.reshape(g.shape)
        return x - np.mean(x)


def newton_ma_solve(omegaInf: Background, Omega: ScalarField, reg_schedule=KAHLER_SCHEDULE,
                    tol: float = 1e-11, reg_form: Background | None = None,
                    max_iter: int = 200, psi_init: ScalarField | None = None) -> EllipticSolution:
    """Solve along the regularization path; returns the normalized final ``psi``."""
    g = Omega.grid
    schedule = [float(d) for d in reg_schedule]
    if any(d < 0 for d in schedule) or any(b > a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("regularization schedule must be nonnegative and nonincreasing")
    if reg_form is None:
        reg_form = Background.from_parts(g, np.eye(g.n))
    if float(np.min(Omega.values)) <= 0:
        raise PositivityLoss("volume form must be positive")

    psi = np.zeros(g.shape) if psi_init is None else psi_init.values - np.mean(psi_init.values)
    history: list[float] = []
    path = []
    total_iters = 0
    c = 0.0
    for delta in schedule:
        A = omegaInf.A + delta * reg_form.A
        prob = _Problem(omegaInf, Omega, A, omegaInf.psi0.values + delta * reg_form.psi0.values)
        c = math.log(prob.V) if prob.V > 0 else 0.0
        G, diag, off, det = prob.residual(psi, c)
        if G is None:
            raise PositivityLoss(f"warm start not admissible at delta={delta}")
        res = float(np.max(np.abs(G)))
        hist = [res]
        it = 0
        while it == 0 or res > tol:
            if it >= max_iter:
                raise NonConvergence(f"no convergence at delta={delta} after {max_iter} iterations "
                                     f"(residual {res:.3e})")
            dc = float(np.mean(det * G)) / prob.V
            b = det * (G - dc)
            b = b - np.mean(b)
            h = prob.linear_solve(diag, off, b, rtol=min(1e-3, 1e-2 * res) if res > 1e-6 else 1e-12)
            s = 1.0
            while True:
                G_new, d_new, o_new, det_new = prob.residual(psi + s * h, c + s * dc)
                if G_new is not None:
                    r_new = float(np.max(np.abs(G_new)))
                    if r_new < res or r_new <= tol:
                        break
                s *= 0.5
                if s < 2.0 ** -20:
                    if G_new is None:
                        raise PositivityLoss(f"Newton iterate lost positivity at delta={delta}")
                    raise NonConvergence(f"line search failed at delta={delta} (residual {res:.3e})")
            psi = psi + s * h
            psi = psi - np.mean(psi)
            c = c + s * dc
            G, diag, off, det = G_new, d_new, o_new, det_new
            res = r_new
            hist.append(res)
            it += 1
        total_iters += it
        history.extend(hist)
        path.append({"delta": delta, "iterations": it, "residual": res, "c": c})
        log.debug("delta=%g converged in %d iterations, residual %.3e, c=%.6g", delta, it, res, c)

    psi = _normalize(psi, Omega.values)
    G, *_ = prob.residual(psi, c)
    res = float(np.max(np.abs(G)))
    return EllipticSolution(ScalarField(g, psi), res, schedule[-1], total_iters,
                            c, history, path)


def residual(omegaInf: Background, psi: ScalarField, Omega: ScalarField,
             mask: np.ndarray | None = None) -> float:
    """Sup over unmasked samples of ``|log(det(omegaInf + H psi) / Omega)|``."""
    g = Omega.grid
    diag, off = hessian_from_coeffs(g, g.fft(omegaInf.psi0.values + psi.values))
    for j in range(g.n):
        diag[j] = diag[j] + omegaInf.A[j, j].real
    if off is not None:
        off = off + omegaInf.A[0, 1]
    det = det_arrays(diag, off)
    keep = np.ones(g.shape, dtype=bool) if mask is None else ~mask
    if float(np.min(det[keep])) <= 0.0:
        return math.inf
    return float(np.max(np.abs(np.log(det[keep] / Omega.values[keep]))))
