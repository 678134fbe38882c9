# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Numerov kernel; same contract as rydmol._numerov_py.integrate."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs


def integrate(long k_start, double h, int l, double energy, double r_core):
    cdef double ll = (2 * l + 0.5) * (2 * l + 1.5)
    cdef double r_tp = 0.0
    if l > 0:
        r_tp = (1.0 - sqrt(1.0 + 2.0 * energy * l * (l + 1))) / (-2.0 * energy)
    cdef double h2 = h * h / 12.0
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(k_start + 1)
    cdef double x, x2, fm, f0, fp, val, x_next, r_next, g0
    cdef long k, n

    x = k_start * h
    g0 = ll / (x * x) - 8.0 - 8.0 * x * x * energy
    out[0] = 1e-10
    out[1] = 1e-10 * (1.0 + h * sqrt(g0 if g0 > 0.0 else 0.0))
    x = k_start * h
    x2 = x * x
    fm = 1.0 - h2 * (ll / x2 - 8.0 - 8.0 * x2 * energy)
    x = (k_start - 1) * h
    x2 = x * x
    f0 = 1.0 - h2 * (ll / x2 - 8.0 - 8.0 * x2 * energy)
    n = 2
    k = k_start - 1
    while k > 1:
        x_next = (k - 1) * h
        r_next = x_next * x_next
        if r_next < r_core:
            break
        fp = 1.0 - h2 * (ll / r_next - 8.0 - 8.0 * r_next * energy)
        val = ((12.0 - 10.0 * f0) * out[n - 1] - fm * out[n - 2]) / fp
        if r_next < r_tp and fabs(val) > fabs(out[n - 1]):
            break
        out[n] = val
        n += 1
        fm = f0
        f0 = fp
        k -= 1
    return k_start - n + 1, out[:n].copy()
