"""Pointwise kernels shared by the flow, the functionals and the solver.

The matrix kernels exist twice: a numba ``@njit`` loop and a vectorized
numpy expression.  ``TORUSMAF_BACKEND=numpy`` forces the fallback; otherwise numba
is used when it imports.  Both paths evaluate the same formulas, so results
agree to rounding; a fixed backend is bitwise reproducible.
"""
import os

import numpy as np

_requested = os.environ.get("TORUSMAF_BACKEND", "numba").strip().lower()

try:
    if _requested == "numpy":
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# numpy path -----------------------------------------------------------------

def _det2_np(g11, g22, g12):
    return g11 * g22 - (g12.real * g12.real + g12.imag * g12.imag)


def _mineig2_np(g11, g22, g12):
    h = 0.5 * (g11 - g22)
    return 0.5 * (g11 + g22) - np.sqrt(h * h + g12.real * g12.real + g12.imag * g12.imag)


def _gradform2_np(g11, g22, g12, v1, v2):
    # 2 * (v^H cof(g) v) for the 2x2 Hermitian metric g
    cross = (g12 * np.conj(v1) * v2).real
    return 2.0 * (g22 * (v1.real ** 2 + v1.imag ** 2)
                  + g11 * (v2.real ** 2 + v2.imag ** 2) - 2.0 * cross)


def _logratio_np(det, omega):
    return np.log(det / omega)


# numba path -----------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _det2_nb(g11, g22, g12):
        a = g11.ravel()
        b = g22.ravel()
        c = g12.ravel()
        out = np.empty(a.size)
        for i in range(a.size):
            out[i] = a[i] * b[i] - (c[i].real * c[i].real + c[i].imag * c[i].imag)
        return out.reshape(g11.shape)

    @njit(cache=True)
    def _mineig2_nb(g11, g22, g12):
        a = g11.ravel()
        b = g22.ravel()
        c = g12.ravel()
        out = np.empty(a.size)
        for i in range(a.size):
            h = 0.5 * (a[i] - b[i])
            r = np.sqrt(h * h + c[i].real * c[i].real + c[i].imag * c[i].imag)
            out[i] = 0.5 * (a[i] + b[i]) - r
        return out.reshape(g11.shape)

    @njit(cache=True)
    def _gradform2_nb(g11, g22, g12, v1, v2):
        a = g11.ravel()
        b = g22.ravel()
        c = g12.ravel()
        p = v1.ravel()
        q = v2.ravel()
        out = np.empty(a.size)
        for i in range(a.size):
            cross = (c[i] * np.conj(p[i]) * q[i]).real
            out[i] = 2.0 * (b[i] * (p[i].real ** 2 + p[i].imag ** 2)
                            + a[i] * (q[i].real ** 2 + q[i].imag ** 2) - 2.0 * cross)
        return out.reshape(g11.shape)


def _contig(*arrays):
    return tuple(np.ascontiguousarray(a) for a in arrays)


if HAVE_NUMBA:

    def det2(g11, g22, g12):
        return _det2_nb(*_contig(g11, g22, g12))

    def mineig2(g11, g22, g12):
        return _mineig2_nb(*_contig(g11, g22, g12))

    def gradform2(g11, g22, g12, v1, v2):
        return _gradform2_nb(*_contig(g11, g22, g12, v1, v2))

else:
    det2 = _det2_np
    mineig2 = _mineig2_np
    gradform2 = _gradform2_np

# numpy's vectorized log beats a compiled scalar loop (see benchmarks/), so
# both backends share this one
logratio = _logratio_np


NUMPY_KERNELS = {
    "det2": _det2_np,
    "mineig2": _mineig2_np,
    "gradform2": _gradform2_np,
    "logratio": _logratio_np,
}

NUMBA_KERNELS = {"det2": det2, "mineig2": mineig2, "gradform2": gradform2} if HAVE_NUMBA else {}
