"""Pure-Python Numerov kernel; used when the compiled extension is absent."""

import math

import numpy as np


def integrate(k_start, h, l, energy, r_core):
    """Integrate the scaled radial equation inward on the grid x = k*h.

    Solves X'' = g(x) X with x = sqrt(r) and R(r) = X / r**(3/4). Returns
    ``(k_stop, X)`` where ``X[i]`` belongs to grid index ``k_start - i``.
    """
    ll = (2 * l + 0.5) * (2 * l + 1.5)
    if l > 0:
        r_tp = (1.0 - math.sqrt(1.0 + 2.0 * energy * l * (l + 1))) / (-2.0 * energy)
    else:
        r_tp = 0.0
    h2 = h * h / 12.0
    out = np.empty(k_start + 1)

    def f(k):
        x = k * h
        x2 = x * x
        return 1.0 - h2 * (ll / x2 - 8.0 - 8.0 * x2 * energy)

    x0 = k_start * h
    g0 = ll / (x0 * x0) - 8.0 - 8.0 * x0 * x0 * energy
    out[0] = 1e-10
    out[1] = 1e-10 * (1.0 + h * math.sqrt(max(g0, 0.0)))
    fm, f0 = f(k_start), f(k_start - 1)
    n = 2
    k = k_start - 1
    while k > 1:
        x_next = (k - 1) * h
        r_next = x_next * x_next
        if r_next < r_core:
            break
        fp = f(k - 1)
        val = ((12.0 - 10.0 * f0) * out[n - 1] - fm * out[n - 2]) / fp
        if r_next < r_tp and abs(val) > abs(out[n - 1]):
            break
        out[n] = val
        n += 1
        fm, f0 = f0, fp
        k -= 1
    return k_start - n + 1, out[:n].copy()
