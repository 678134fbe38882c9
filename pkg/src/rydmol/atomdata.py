"""Single-atom Rydberg structure for alkali atoms.

Energies come from the Rydberg-Ritz quantum-defect formula; radial functions
from inward Numerov integration of the Coulomb problem at those energies, in
the scaled coordinate x = sqrt(r). Angular factors use the standard
fine-structure (L, S=1/2, J, mJ) reduction.
"""

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from importlib import resources
import math
import os

import numpy as np

from . import numerov
from .errors import DomainError
from .units import CM_TO_MHZ
from .wigner import wigner_3j, wigner_6j

DEFAULT_STEP = 0.01


def _is_half_odd(x):
    return abs(2 * x - round(2 * x)) < 1e-9 and round(2 * x) % 2 == 1


@dataclass(frozen=True, order=True)
class RydbergLevel:
    """Fine-structure basis state |n, L, J, mJ>."""

    n: int
    L: int
    J: float
    mJ: float

    def __post_init__(self):
        n, L, J, mJ = self.n, self.L, self.J, self.mJ
        if n < 1 or L < 0 or L >= n:
            raise DomainError(f"invalid n, L = {n}, {L}")
        if not _is_half_odd(J) or not _is_half_odd(mJ):
            raise DomainError(f"J and mJ must be half-integers, got {J}, {mJ}")
        if abs(J - (L + 0.5)) > 1e-9 and abs(J - (L - 0.5)) > 1e-9 or J < 0:
            raise DomainError(f"J = {J} incompatible with L = {L}")
        if abs(mJ) > J + 1e-9:
            raise DomainError(f"|mJ| = {abs(mJ)} exceeds J = {J}")
        # canonical float storage keeps hashing consistent across int/float input
        object.__setattr__(self, "J", float(J))
        object.__setattr__(self, "mJ", float(mJ))

    @property
    def nlj(self):
        return (self.n, self.L, self.J)

    def label(self):
        return f"{self.n}{'SPDFGHIK'[self.L]}{int(2 * self.J)}/2,mJ={int(2 * self.mJ)}/2"

    def partner(self):
        """Fine-structure partner differing only in J, or None for S1/2."""
        if self.L == 0:
            return None
        J2 = self.L + 0.5 if self.J < self.L else self.L - 0.5
        if abs(self.mJ) > J2:
            return None
        return RydbergLevel(self.n, self.L, J2, self.mJ)


@dataclass(frozen=True)
class QuantumDefectTable:
    """Rydberg-Ritz coefficients for one species."""

    species: str
    rydberg_cm: float
    core_polarizability: float
    records: tuple = field(default=())  # ((L, J, d0, d2, d4), ...)

    @cached_property
    def _lookup(self):
        return {(int(L), float(J)): (d0, d2, d4) for L, J, d0, d2, d4 in self.records}

    @property
    def rydberg_mhz(self):
        return self.rydberg_cm * CM_TO_MHZ

    def defect(self, n, L, J):
        coeffs = self._lookup.get((int(L), float(J)))
        if coeffs is None:
            return 0.0
        d0, d2, d4 = coeffs
        m = (n - d0) ** 2
        return d0 + d2 / m + d4 / (m * m)

    def effective_n(self, n, L, J):
        return n - self.defect(n, L, J)

    @classmethod
    def load(cls, species, path=None):
        """Read one species block from a defect file (default: shipped table)."""
        tables = read_defect_file(path)
        try:
            return tables[species]
        except KeyError:
            raise DomainError(f"species {species!r} not in defect file") from None


def read_defect_file(path=None):
    if path is None:
        text = resources.files("rydmol").joinpath("data/quantum_defects.dat").read_text()
    else:
        with open(os.fspath(path)) as fh:
            text = fh.read()
    tables = {}
    current = None
    rows = []

    def flush():
        if current is not None:
            tables[current[0]] = QuantumDefectTable(current[0], current[1], current[2], tuple(rows))

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "species":
                flush()
                current = (parts[1], float(parts[2]), float(parts[3]))
                rows = []
            else:
                if current is None:
                    raise ValueError("record before species header")
                L, J, d0, d2, d4 = parts
                rows.append((int(L), float(J), float(d0), float(d2), float(d4)))
        except (ValueError, IndexError) as exc:
            raise DomainError(f"defect file line {lineno}: {exc}") from None
    flush()
    return tables


def level_energy(level, defects):
    """Binding energy -Ry*/(n - delta)^2 in MHz (relative to the ionisation limit)."""
    if not isinstance(level, RydbergLevel):
        raise DomainError("level_energy expects a RydbergLevel")
    return nlj_energy(level.n, level.L, level.J, defects)


def nlj_energy(n, L, J, defects):
    return -defects.rydberg_mhz / defects.effective_n(n, L, J) ** 2


@lru_cache(maxsize=4096)
def radial_wavefunction(n, L, J, defects, step=DEFAULT_STEP):
    """Normalised scaled radial function on the grid x = k*step.

    Returns ``(k_lo, X)`` with ``X[i]`` the value at ``x = (k_lo + i)*step``
    (ascending). The physical radial function is R(r) = X / r**(3/4).
    """
    nstar = defects.effective_n(n, L, J)
    energy = -0.5 / nstar**2
    k_start = int(math.sqrt(2.0 * n * (n + 15.0)) / step)
    r_core = defects.core_polarizability ** (1.0 / 3.0)
    k_stop, X = numerov.integrate(k_start, step, L, energy, r_core)
    X = X[::-1]
    x = (k_stop + np.arange(X.size)) * step
    edge = _edge(k_stop, X, step, L, energy, r_core ** 0.5)
    norm = math.sqrt(2.0 * _edge_integral(X * X * x * x, k_stop, step, edge))
    X = X / norm
    X.setflags(write=False)
    return k_stop, X


def _inner_turning_point(L, energy):
    if L == 0:
        return 0.0
    return (1.0 - math.sqrt(1.0 + 2.0 * energy * L * (L + 1))) / (-2.0 * energy)


def _edge(k_lo, X, step, L, energy, x_core):
    """Inner end of the integration domain in scaled units.

    The kernel stops at the core radius, at the inner turning point, or at the
    inward minimum of |X|. The edge is placed at the exact stopping location
    (parabolic vertex for a minimum), so it does not move with the grid.
    """
    x_lo = k_lo * step
    x_tp = math.sqrt(_inner_turning_point(L, energy))
    for x_stop in (x_core, x_tp):
        if x_lo - step < x_stop <= x_lo:
            return x_stop
    if X.size < 2 or k_lo < 2:
        return x_lo
    # one more Numerov step gives the rejected point past the minimum
    ll = (2 * L + 0.5) * (2 * L + 1.5)

    def fac(k):
        x2 = (k * step) ** 2
        return 1.0 - step * step / 12.0 * (ll / x2 - 8.0 - 8.0 * x2 * energy)

    x_m = ((12.0 - 10.0 * fac(k_lo)) * X[0] - fac(k_lo + 1) * X[1]) / fac(k_lo - 1)
    y_m, y0, y1 = abs(x_m), abs(X[0]), abs(X[1])
    curv = y_m - 2.0 * y0 + y1
    if curv <= 0.0:
        return x_lo
    t = 0.5 * (y_m - y1) / curv  # vertex offset in grid units
    return x_lo + step * min(max(t, -1.0), 1.0)


def _wf_edge(n, L, J, defects, step):
    k, X = radial_wavefunction(n, L, J, defects, step)
    nstar = defects.effective_n(n, L, J)
    return _edge(k, X, step, L, -0.5 / nstar**2, defects.core_polarizability ** (1.0 / 6.0))


def _edge_integral(f, k_lo, step, edge):
    """Integral of grid samples f (starting at x = k_lo*step) from `edge` outward.

    Trapezoid rule with the Euler-Maclaurin h^2 end correction, plus the sliver
    [edge, x_lo] from a linear extrapolation; f is negligible at the outer end.
    """
    if f.size < 3:
        return step * float(np.sum(f))
    slope = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * step)
    delta = k_lo * step - edge
    trap = step * (float(np.sum(f)) - 0.5 * f[0])
    return trap + step * step / 12.0 * slope + delta * (f[0] - 0.5 * slope * delta)


def _radial_nlj(a, b, defects, step=DEFAULT_STEP):
    ka, Xa = radial_wavefunction(*a, defects, step)
    kb, Xb = radial_wavefunction(*b, defects, step)
    lo = max(ka, kb)
    hi = min(ka + Xa.size, kb + Xb.size)
    if hi <= lo:
        return 0.0
    xa = Xa[lo - ka:hi - ka]
    xb = Xb[lo - kb:hi - kb]
    x = (lo + np.arange(hi - lo)) * step
    edge = max(_wf_edge(*a, defects, step), _wf_edge(*b, defects, step))
    return 2.0 * _edge_integral(xa * xb * x**4, lo, step, min(edge, lo * step))


@lru_cache(maxsize=None)
def radial_nlj(a, b, defects, step=DEFAULT_STEP):
    """Radial integral <a|r|b> for (n, L, J) tuples, in units of a0."""
    if a > b:
        a, b = b, a
    return _radial_nlj(a, b, defects, step)


def radial_matrix_element(a, b, defects, step=DEFAULT_STEP):
    """Integral of R_a r R_b r^2 dr for two dipole-coupled levels (a.u.)."""
    if abs(a.L - b.L) != 1:
        raise DomainError(f"{a.label()} and {b.label()} are not dipole coupled")
    return radial_nlj(a.nlj, b.nlj, defects, step)


def angular_factor(a, b, p):
    """<b|d_p|a> divided by the radial integral."""
    if abs(b.mJ - (a.mJ + p)) > 1e-9 or abs(a.L - b.L) != 1:
        return 0.0
    la, ja, ma = a.L, a.J, a.mJ
    lb, jb, mb = b.L, b.J, b.mJ
    m_part = (-1) ** round(jb - mb) * wigner_3j(jb, 1, ja, -mb, p, ma)
    if m_part == 0.0:
        return 0.0
    j_part = ((-1) ** round(lb + 0.5 + ja + 1) * math.sqrt((2 * ja + 1) * (2 * jb + 1))
              * wigner_6j(lb, jb, 0.5, ja, la, 1))
    l_part = (-1) ** lb * math.sqrt((2 * la + 1) * (2 * lb + 1)) * wigner_3j(lb, 1, la, 0, 0, 0)
    return m_part * j_part * l_part


def reduced_dipole(a, b, defects, step=DEFAULT_STEP):
    """<b J_b || d || a J_a> (a.u.), Wigner-Eckart convention of angular_factor."""
    if abs(a.L - b.L) != 1:
        return 0.0
    j_part = ((-1) ** round(b.L + 0.5 + a.J + 1) * math.sqrt((2 * a.J + 1) * (2 * b.J + 1))
              * wigner_6j(b.L, b.J, 0.5, a.J, a.L, 1))
    l_part = (-1) ** b.L * math.sqrt((2 * a.L + 1) * (2 * b.L + 1)) * wigner_3j(b.L, 1, a.L, 0, 0, 0)
    return j_part * l_part * radial_nlj(a.nlj, b.nlj, defects, step)


def transition_dipole(a, b, p, defects, step=DEFAULT_STEP):
    """<b|d_p|a> in units of e*a0; zero whenever a selection rule fails."""
    ang = angular_factor(a, b, p)
    if ang == 0.0:
        return 0.0
    return ang * radial_nlj(a.nlj, b.nlj, defects, step)


@dataclass(frozen=True)
class FineStructureRatios:
    """Dipole ratios and fine-structure offsets for six-level dressing.

    ``f_*``/``g_*`` follow the six-level Hamiltonian layout; ratios whose primed
    state does not exist are ``None``. Offsets are E(primed) - E(unprimed) in MHz.
    """

    f_pi: float | None
    f_sigma: float | None
    g_pi: float | None
    g_sigma: float | None
    g_pi_p: float | None
    g_sigma_p: float | None
    delta_r: float | None
    delta_pi: float | None
    delta_sigma: float | None
    mu_pi: float
    mu_sigma: float
    q_sigma: int = 1

    @property
    def M(self):
        return abs(self.mu_pi / self.mu_sigma)

    def as_array(self):
        """Six ratios with absent entries replaced by zero."""
        vals = (self.f_pi, self.f_sigma, self.g_pi, self.g_sigma, self.g_pi_p, self.g_sigma_p)
        return np.array([0.0 if v is None else v for v in vals])


def fine_structure_ratios(r, rpi, rsigma, defects, q_sigma=1, step=DEFAULT_STEP):
    """Ratios f_pi, f_sigma, g_pi, g_sigma, g_pi', g_sigma' and primed offsets."""
    mu_pi = transition_dipole(r, rpi, 0, defects, step)
    mu_sigma = transition_dipole(r, rsigma, q_sigma, defects, step)
    if mu_pi == 0.0 or mu_sigma == 0.0:
        raise DomainError("reference transitions r->r_pi / r->r_sigma are not dipole allowed")
    rp, rpip, rsp = r.partner(), rpi.partner(), rsigma.partner()

    def ratio(lo, hi, q, ref):
        if lo is None or hi is None:
            return None
        return transition_dipole(lo, hi, q, defects, step) / ref

    def offset(s, sp):
        if sp is None:
            return None
        return level_energy(sp, defects) - level_energy(s, defects)

    return FineStructureRatios(
        f_pi=ratio(r, rpip, 0, mu_pi),
        f_sigma=ratio(r, rsp, q_sigma, mu_sigma),
        g_pi=ratio(rp, rpi, 0, mu_pi),
        g_sigma=ratio(rp, rsigma, q_sigma, mu_sigma),
        g_pi_p=ratio(rp, rpip, 0, mu_pi),
        g_sigma_p=ratio(rp, rsp, q_sigma, mu_sigma),
        delta_r=offset(r, rp),
        delta_pi=offset(rpi, rpip),
        delta_sigma=offset(rsigma, rsp),
        mu_pi=mu_pi,
        mu_sigma=mu_sigma,
        q_sigma=q_sigma,
    )
