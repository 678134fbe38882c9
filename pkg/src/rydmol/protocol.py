"""Nondestructive molecule readout through an entangled Rydberg atom.

Interactions are ordinary frequencies in MHz and times in us, so a coupling
``V`` applied for ``t`` gives the phase ``2*pi*V*t``. The molecule qubit is
written in its dressed basis |+>, |->; the atom carries |g>, |g'> and the
interacting Rydberg state |a>.

Arrays are simulated in the Ising reduction: every site holds a molecule spin
(z = +1 for |+>) and an atom spin (n = 1 for |a>), and all interactions are
diagonal. Pi pulses are instantaneous and flip both spins of the pulsed sites.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import DomainError

MAX_SPINS = 14

_HY = np.array([[1, 1j], [1j, 1]]) / math.sqrt(2)  # |g> -> (|g> + i|a>)/sqrt2
_HX = np.array([[1, 1], [1, -1]]) / math.sqrt(2)


@dataclass(frozen=True)
class ErrorModel:
    """Rydberg decay as pure damping of the |g>/|a> coherence.

    Parameters
    ----------
    tau_a : float
        Lifetime of |a> in us. The superposition lives ``2*tau_a``.
    drive_errors : dict, optional
        Fractional drive-parameter errors, carried for reporting only.
    """

    tau_a: float
    drive_errors: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.tau_a > 0:
            raise DomainError("tau_a must be positive")

    @property
    def coherence_lifetime(self):
        return 2.0 * self.tau_a

    def damping(self, t):
        return math.exp(-t / self.coherence_lifetime)

    def lifetime_ratio(self, t):
        """Superposition lifetime over interaction time, 2 tau_a / t."""
        return self.coherence_lifetime / t


def interaction_strength(C3, r_am, theta_am=math.pi / 2):
    """V_am = C3 (1 - 3 cos^2 theta) / r^3, normalised so theta = pi/2 gives C3/r^3."""
    if not r_am > 0:
        raise DomainError("r_am must be positive")
    return C3 * (1.0 - 3.0 * math.cos(theta_am) ** 2) / r_am**3


def cz_time(C3, r_am, theta_am=math.pi / 2):
    """Interaction time (us) after which the |+>|a> and |->|a> branches differ by pi.

    Each branch picks up ``2*pi*|V|*t = pi/2``, i.e. ``t = 1/(4|V|)``.
    """
    V = interaction_strength(C3, r_am, theta_am)
    if abs(V) < 1e-12 * max(abs(C3), 1e-300) / r_am**3:
        raise DomainError("V_am vanishes at this angle (magic-angle geometry)")
    return 1.0 / (4.0 * abs(V))


# ---------------------------------------------------------------- single pair


@dataclass
class MeasurementResult:
    """Joint molecule-atom density matrix after the readout sequence.

    Index order is (molecule, atom) with molecule 0 = |+>, 1 = |-> and
    atom 0 = |g>, 1 = |g'>.
    """

    rho: np.ndarray
    p_g: float
    p_gprime: float
    fidelity: float
    readout_error: float
    t: float
    lifetime_ratio: float

    def molecule_state(self, outcome):
        """Normalised molecule density matrix conditioned on an atom outcome (0 or 1)."""
        r = self.rho.reshape(2, 2, 2, 2)[:, outcome, :, outcome]
        p = np.trace(r).real
        if p <= 0:
            raise DomainError(f"outcome {outcome} has zero probability")
        return r / p


def _measurement_rho(alpha, beta, V, t, d):
    psi = np.kron([alpha, beta], [1.0, 0.0]).astype(complex)
    psi = np.kron(np.eye(2), _HY) @ psi
    # Ising phase on the |a> branch: +V for |+>, -V for |->
    ph = np.exp(-2j * np.pi * V * t * np.array([0.0, 1.0, 0.0, -1.0]))
    psi = ph * psi
    rho = np.outer(psi, psi.conj())
    atom = np.array([0, 1, 0, 1])
    rho = np.where(atom[:, None] != atom[None, :], rho * d, rho)
    U = np.kron(np.eye(2), _HX)
    return U @ rho @ U.conj().T


def simulate_measurement(alpha, beta, V_am, t=None, error_model=None):
    """Run H_Y, conditional phase, H_X on one pair and return the joint state.

    Parameters
    ----------
    alpha, beta : complex
        Molecule amplitudes on |+>, |->; must be normalised.
    V_am : float
        Interaction strength in MHz; only its magnitude enters.
    t : float, optional
        Interaction time in us, default the controlled-Z time.
    error_model : ErrorModel, optional
        Adds coherence damping of the atom superposition.
    """
    if abs(abs(alpha) ** 2 + abs(beta) ** 2 - 1.0) > 1e-12:
        raise DomainError("molecule amplitudes must be normalised")
    V = abs(V_am)
    if V == 0:
        raise DomainError("V_am must be nonzero")
    t = 1.0 / (4.0 * V) if t is None else float(t)
    d = 1.0 if error_model is None else error_model.damping(t)
    rho = _measurement_rho(alpha, beta, V, t, d)
    p = np.real(np.diag(rho))
    ideal = np.array([alpha, 0.0, 0.0, beta], dtype=complex)
    fid = float(np.real(ideal.conj() @ rho @ ideal))
    # wrong-outcome probability for the two basis inputs
    e_plus = np.real(_measurement_rho(1.0, 0.0, V, t, d)[1, 1])
    e_minus = np.real(_measurement_rho(0.0, 1.0, V, t, d)[2, 2])
    ratio = error_model.lifetime_ratio(t) if error_model else math.inf
    return MeasurementResult(rho, float(p[0] + p[2]), float(p[1] + p[3]), fid,
                             float(0.5 * (e_plus + e_minus)), t, ratio)


# ---------------------------------------------------------------- parity


@dataclass
class ParityResult:
    p_even: float
    p_odd: float
    post_even: np.ndarray | None
    post_odd: np.ndarray | None


def simulate_parity(amplitudes, couplings, t=None):
    """Measure the |-> parity of several molecules coupled to one atom.

    ``amplitudes`` has length 2**n with bit i (most significant first) set when
    molecule i is in |->. All couplings must share one magnitude V. At the
    default time each molecule contributes a branch phase of -+pi/2, so the
    atom is prepared in (|g> + i^n |a>)/sqrt2 (H_Y for one molecule); H_X then
    sends even parity to |g> and odd parity to |g'>.
    """
    psi = np.asarray(amplitudes, dtype=complex)
    V = np.abs(np.asarray(couplings, dtype=float))
    n = V.size
    if psi.shape != (2**n,):
        raise DomainError(f"expected {2**n} amplitudes for {n} molecules")
    if abs(np.linalg.norm(psi) - 1) > 1e-12:
        raise DomainError("molecule state must be normalised")
    if n == 0 or V[0] == 0 or np.any(np.abs(V - V[0]) > 1e-12 * V[0]):
        raise DomainError("parity readout needs equal nonzero coupling magnitudes")
    t = 1.0 / (4.0 * V[0]) if t is None else float(t)
    bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)) & 1
    s = n - 2 * bits.sum(axis=1)  # sum of z over molecules
    branch = (1j) ** n * np.exp(-2j * np.pi * V[0] * t * s)
    # amplitudes on |g>, |g'> after H_X
    g = psi * (1 + branch) / 2
    gp = psi * (1 - branch) / 2
    pe, po = float(np.vdot(g, g).real), float(np.vdot(gp, gp).real)
    return ParityResult(pe, po, g / math.sqrt(pe) if pe > 1e-15 else None,
                        gp / math.sqrt(po) if po > 1e-15 else None)


# ---------------------------------------------------------------- echo schedule


@dataclass(frozen=True)
class PulseSchedule:
    """Spin-echo schedule for ``classes`` pulse classes over total time ``T``.

    Class 0 is never pulsed. Class k >= 1 is pulsed at the odd multiples of
    T/2^k, and class 1 also at T so that every site ends in its original basis.
    ``instants`` lists each pulse time with the set of classes it flips; the
    terminal instant T is always present.
    """

    classes: int
    T: float
    instants: tuple

    @property
    def pulse_count(self):
        return len(self.instants)

    def pulses_for(self, k):
        return tuple(t for t, ks in self.instants if k in ks)

    def flips(self):
        """Number of flips per class; all even."""
        return [len(self.pulses_for(k)) for k in range(self.classes)]

    def sign(self, k, t):
        """Toggling-frame sign of class k at time t in [0, T)."""
        return (-1) ** sum(1 for p in self.pulses_for(k) if p <= t)

    def segments(self):
        """(duration, cumulative flip parity per class) over [0, T]."""
        out, t0 = [], 0.0
        state = [0] * self.classes
        for t, ks in self.instants:
            if t > t0:
                out.append((t - t0, tuple(state)))
            for k in ks:
                state[k] ^= 1
            t0 = t
        return out

    def overlap(self, j, k):
        """Time average of s_j(t) s_k(t)."""
        return sum(dt * (-1) ** (f[j] + f[k]) for dt, f in self.segments()) / self.T

    def pulse_fraction(self, pulse_time):
        """Total pulse time relative to T for finite pulses of length ``pulse_time``."""
        return self.pulse_count * pulse_time / self.T


def build_echo_schedule(c, T):
    if c < 1:
        raise DomainError("need at least one pulse class")
    if not T > 0:
        raise DomainError("T must be positive")
    slots = {}
    for k in range(1, c):
        step = T / 2**k
        for m in range(1, 2**k, 2):
            slots.setdefault(m * step, set()).add(k)
    slots.setdefault(T, set())
    if c > 1:
        slots[T].add(1)
    instants = tuple((t, frozenset(slots[t])) for t in sorted(slots))
    return PulseSchedule(c, float(T), instants)


# ---------------------------------------------------------------- arrays


@dataclass(frozen=True)
class ArrayLayout:
    """Atom and molecule positions (um) in the plane normal to the quantisation axis."""

    atoms: np.ndarray
    molecules: np.ndarray
    classes: tuple

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        m = np.asarray(self.molecules, dtype=float)
        if a.ndim != 2 or a.shape != m.shape or a.shape[1] != 2:
            raise DomainError("atoms and molecules must be matching (n, 2) arrays")
        if len(self.classes) != a.shape[0]:
            raise DomainError("one class label per site")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "molecules", m)
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))

    @property
    def n_sites(self):
        return self.atoms.shape[0]

    @classmethod
    def chain(cls, n, spacing, r_am, n_classes=2):
        """Straight chain; molecules sit r_am to the side of their atoms."""
        x = np.arange(n) * float(spacing)
        atoms = np.column_stack([x, np.zeros(n)])
        mols = np.column_stack([x, np.full(n, float(r_am))])
        return cls(atoms, mols, tuple(i % n_classes for i in range(n)))


def _distances(p, q):
    return np.linalg.norm(p[:, None, :] - q[None, :, :], axis=-1)


@dataclass
class InteractionTable:
    """Ising couplings (MHz) of an array.

    ``V_ma[i, j]`` couples molecule i to atom j (diagonal: the pair V_am);
    ``V_aa`` and ``V_mm`` are symmetric with zero diagonal.
    """

    V_ma: np.ndarray
    V_aa: np.ndarray
    V_mm: np.ndarray
    dispersion: tuple = (0.0, 0.0, 0.0)

    @property
    def V_am(self):
        return np.diag(self.V_ma).copy()

    def v_aa(self, r):
        C6, C9, C12 = self.dispersion
        r = np.asarray(r, dtype=float)
        return C6 / r**6 + C9 / r**9 + C12 / r**12

    @classmethod
    def from_layout(cls, layout, C3, C6=0.0, C9=0.0, C12=0.0, C3_mm=None):
        """Couplings from C3/r^3 (molecule-atom, optional molecule-molecule) and the atom series."""
        r_ma = _distances(layout.molecules, layout.atoms)
        V_ma = C3 / r_ma**3
        r_aa = _distances(layout.atoms, layout.atoms)
        n = layout.n_sites
        off = ~np.eye(n, dtype=bool)
        V_aa = np.zeros((n, n))
        rr = r_aa[off]
        V_aa[off] = C6 / rr**6 + C9 / rr**9 + C12 / rr**12
        V_mm = np.zeros((n, n))
        if C3_mm is not None:
            V_mm[off] = C3_mm / _distances(layout.molecules, layout.molecules)[off] ** 3
        return cls(V_ma, V_aa, V_mm, (C6, C9, C12))


def _ising_energy(n, V_ma, V_aa, V_mm):
    """Diagonal energy over all 2^(2n) configurations; qubit order m0, a0, m1, a1, ..."""
    N = 2 * n
    idx = np.arange(2**N)
    bits = (idx[:, None] >> np.arange(N - 1, -1, -1)) & 1
    z = 1 - 2 * bits[:, 0::2].astype(float)  # molecules
    na = bits[:, 1::2].astype(float)         # atoms
    E = np.einsum("ci,ij,cj->c", z, V_ma, na)
    E += 0.5 * np.einsum("ci,ij,cj->c", na, V_aa, na)
    E += 0.5 * np.einsum("ci,ij,cj->c", z, V_mm, z)
    return E


def _scheduled_phase(n, classes, schedule, V_ma, V_aa, V_mm):
    """Accumulated phase per initial configuration in the toggling frame."""
    N = 2 * n
    idx = np.arange(2**N)
    E = _ising_energy(n, V_ma, V_aa, V_mm)
    phi = np.zeros(2**N)
    for dt, flips in schedule.segments():
        mask = 0
        for i, c in enumerate(classes):
            if flips[c]:
                mask |= 0b11 << (N - 2 - 2 * i)
        phi += 2 * np.pi * dt * E[idx ^ mask]
    return phi


def _single_site_fit(dphi, N):
    """Split a phase function into constant + single-qubit terms and a residual."""
    idx = np.arange(2**N)
    bits = ((idx[:, None] >> np.arange(N - 1, -1, -1)) & 1).astype(float)
    A = np.column_stack([np.ones(2**N), bits])
    coef, *_ = np.linalg.lstsq(A, dphi, rcond=None)
    return coef, dphi - A @ coef


@dataclass
class ArrayResult:
    """Outcome of an echoed array evolution.

    ``corrections`` are the single-qubit Z phases (rad, qubit order m0, a0, ...)
    removed from the final state; ``cross_class_residual`` is the largest phase
    left by cross-class couplings after that correction.
    """

    state: np.ndarray
    ideal: np.ndarray
    pair_fidelity: np.ndarray
    fidelity: float
    corrections: np.ndarray
    cross_class_residual: float
    residual_phase: float


def _pair_reduced(psi, n, i):
    t = psi.reshape([4] * n)
    t = np.moveaxis(t, i, 0).reshape(4, -1)
    return t @ t.conj().T


def simulate_array(layout, table, schedule, states=None):
    """Exact evolution of an echoed array in the Ising reduction.

    Parameters
    ----------
    layout : ArrayLayout
    table : InteractionTable
    schedule : PulseSchedule
        Its time ``T`` is the interaction time.
    states : sequence of array_like, optional
        Per-site initial 4-vectors over (molecule, atom) = (+g, +a, -g, -a).
        Default (|+> + |->)/sqrt2 (x) (|g> + i|a>)/sqrt2.

    Returns
    -------
    ArrayResult
        Per-pair fidelity is against the isolated pair with the same
        schedule, after single-qubit phase correction.
    """
    n = layout.n_sites
    N = 2 * n
    if N > MAX_SPINS:
        raise DomainError(f"{N} spins exceed the limit of {MAX_SPINS}")
    if max(layout.classes) >= schedule.classes:
        raise DomainError("site class label outside the schedule")
    if states is None:
        states = [np.kron([1, 1], [1, 1j]) / 2] * n
    psi0 = np.array([1.0 + 0j])
    for s in states:
        s = np.asarray(s, dtype=complex)
        if s.shape != (4,) or abs(np.linalg.norm(s) - 1) > 1e-12:
            raise DomainError("site states must be normalised 4-vectors")
        psi0 = np.kron(psi0, s)
    cls = layout.classes
    phi = _scheduled_phase(n, cls, schedule, table.V_ma, table.V_aa, table.V_mm)
    # isolated pairs: only the diagonal molecule-atom couplings
    zero = np.zeros((n, n))
    phi_iso = _scheduled_phase(n, cls, schedule, np.diag(table.V_am), zero, zero)
    coef, resid = _single_site_fit(phi - phi_iso, N)
    # class-block-diagonal reference for the echo residual
    same = np.equal.outer(cls, cls)
    phi_blk = _scheduled_phase(n, cls, schedule, np.where(same, table.V_ma, 0),
                               np.where(same, table.V_aa, 0), np.where(same, table.V_mm, 0))
    _, cross = _single_site_fit(phi - phi_blk, N)
    ideal = np.exp(-1j * phi_iso) * psi0
    idx = np.arange(2**N)
    bits = ((idx[:, None] >> np.arange(N - 1, -1, -1)) & 1).astype(float)
    state = np.exp(-1j * (phi - bits @ coef[1:] - coef[0])) * psi0
    pf = np.empty(n)
    for i in range(n):
        rho = _pair_reduced(state, n, i)
        ideal_i = np.asarray(states[i], dtype=complex) * np.exp(
            -1j * 2 * np.pi * _pair_phase(table.V_am[i], cls[i], schedule))
        pf[i] = float(np.real(ideal_i.conj() @ rho @ ideal_i))
    fid = float(abs(np.vdot(ideal, state)) ** 2)
    return ArrayResult(state, ideal, pf, fid, coef[1:], float(np.max(np.abs(cross))),
                       float(np.max(np.abs(resid))))


def _pair_phase(V, k, schedule):
    """Phase/(2 pi) of the isolated pair on its configurations (+g, +a, -g, -a)."""
    z = np.array([1.0, 1.0, -1.0, -1.0])
    na = np.array([0.0, 1.0, 0.0, 1.0])
    out = np.zeros(4)
    for dt, flips in schedule.segments():
        if flips[k]:
            out += dt * V * (-z) * (1 - na)
        else:
            out += dt * V * z * na
    return out


# ---------------------------------------------------------------- measurement rounds


@dataclass
class MeasurementRound:
    sites: tuple
    r_min: float
    v_max: float


def alternating_measurement_plan(layout, k, table):
    """Split sites into k rounds by index modulo k.

    Each round reports the smallest active atom-atom distance (um) and the
    largest residual |V_aa| (MHz) at the active distances.
    """
    if k < 1:
        raise DomainError("stride must be at least 1")
    rounds = []
    for j in range(k):
        sites = tuple(range(j, layout.n_sites, k))
        if len(sites) < 2:
            rounds.append(MeasurementRound(sites, math.inf, 0.0))
            continue
        r = _distances(layout.atoms[list(sites)], layout.atoms[list(sites)])
        r = r[~np.eye(len(sites), dtype=bool)]
        rounds.append(MeasurementRound(sites, float(r.min()),
                                       float(np.max(np.abs(table.v_aa(r))))))
    return rounds
