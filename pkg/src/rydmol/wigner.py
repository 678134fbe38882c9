"""Wigner 3j/6j symbols and related angular factors.

Floating-point Racah formulas on doubled (integer) angular momenta. Results are
memoised; arguments may be integers or half-integers.
"""

from functools import lru_cache
from math import factorial, sqrt


def _twice(x):
    t = round(2 * x)
    if abs(2 * x - t) > 1e-9:
        raise ValueError(f"{x!r} is not an integer or half-integer")
    return t


def _tri(a, b, c):
    # doubled arguments; returns None unless triangle + integer-sum hold
    if (a + b + c) % 2 or c > a + b or c < abs(a - b):
        return None
    return (factorial((a + b - c) // 2) * factorial((a - b + c) // 2)
            * factorial((-a + b + c) // 2)) / factorial((a + b + c) // 2 + 1)


@lru_cache(maxsize=None)
def _w3j(j1, j2, j3, m1, m2, m3):
    if m1 + m2 + m3 != 0:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    if (j1 - m1) % 2 or (j2 - m2) % 2 or (j3 - m3) % 2:
        return 0.0
    delta = _tri(j1, j2, j3)
    if delta is None:
        return 0.0
    pre = sqrt(delta * factorial((j1 + m1) // 2) * factorial((j1 - m1) // 2)
               * factorial((j2 + m2) // 2) * factorial((j2 - m2) // 2)
               * factorial((j3 + m3) // 2) * factorial((j3 - m3) // 2))
    kmin = max(0, (j2 - j3 - m1) // 2, (j1 - j3 + m2) // 2)
    kmax = min((j1 + j2 - j3) // 2, (j1 - m1) // 2, (j2 + m2) // 2)
    s = 0
    for k in range(kmin, kmax + 1):
        s += (-1) ** k / (factorial(k) * factorial((j1 + j2 - j3) // 2 - k)
                          * factorial((j1 - m1) // 2 - k)
                          * factorial((j2 + m2) // 2 - k)
                          * factorial((j3 - j2 + m1) // 2 + k)
                          * factorial((j3 - j1 - m2) // 2 + k))
    sign = -1 if ((j1 - j2 - m3) // 2) % 2 else 1
    return sign * pre * s


@lru_cache(maxsize=None)
def _w6j(j1, j2, j3, j4, j5, j6):
    tris = [_tri(j1, j2, j3), _tri(j1, j5, j6), _tri(j4, j2, j6), _tri(j4, j5, j3)]
    if any(t is None for t in tris):
        return 0.0
    pre = sqrt(tris[0] * tris[1] * tris[2] * tris[3])
    a1 = (j1 + j2 + j3) // 2
    a2 = (j1 + j5 + j6) // 2
    a3 = (j4 + j2 + j6) // 2
    a4 = (j4 + j5 + j3) // 2
    b1 = (j1 + j2 + j4 + j5) // 2
    b2 = (j2 + j3 + j5 + j6) // 2
    b3 = (j3 + j1 + j6 + j4) // 2
    s = 0
    for t in range(max(a1, a2, a3, a4), min(b1, b2, b3) + 1):
        s += (-1) ** t * factorial(t + 1) / (
            factorial(t - a1) * factorial(t - a2) * factorial(t - a3)
            * factorial(t - a4) * factorial(b1 - t) * factorial(b2 - t)
            * factorial(b3 - t))
    return pre * s


def wigner_3j(j1, j2, j3, m1, m2, m3):
    """Wigner 3j symbol (j1 j2 j3; m1 m2 m3)."""
    return _w3j(_twice(j1), _twice(j2), _twice(j3),
                _twice(m1), _twice(m2), _twice(m3))


def wigner_6j(j1, j2, j3, j4, j5, j6):
    """Wigner 6j symbol {j1 j2 j3; j4 j5 j6}."""
    return _w6j(_twice(j1), _twice(j2), _twice(j3),
                _twice(j4), _twice(j5), _twice(j6))


def clebsch_gordan(j1, m1, j2, m2, j, m):
    """<j1 m1; j2 m2 | j m>."""
    if _twice(m1) + _twice(m2) != _twice(m):
        return 0.0
    phase = -1 if (_twice(j1) - _twice(j2) + _twice(m)) // 2 % 2 else 1
    return phase * sqrt(2 * j + 1) * wigner_3j(j1, j2, j, m1, m2, -m)


def rotor_c1(n_up, m_up, n_lo, m_lo, p):
    """<n_up m_up | C^1_p | n_lo m_lo> for a rigid rotor."""
    if m_up != m_lo + p:
        return 0.0
    phase = -1 if m_up % 2 else 1
    return (phase * sqrt((2 * n_lo + 1) * (2 * n_up + 1))
            * wigner_3j(n_up, 1, n_lo, -m_up, p, m_lo)
            * wigner_3j(n_up, 1, n_lo, 0, 0, 0))
