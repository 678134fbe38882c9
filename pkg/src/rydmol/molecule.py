"""Rotational qubit of a bialkali molecule and its nuclear hyperfine structure."""

from dataclasses import dataclass, field, replace
from importlib import resources
import math
import os

import numpy as np

from .errors import DomainError
from .wigner import clebsch_gordan, rotor_c1, wigner_3j


@dataclass(frozen=True)
class MoleculeSpec:
    """Molecular constants; frequencies in MHz, dipole in Debye."""

    name: str
    B0: float
    d: float
    I1: float
    I2: float
    eQq1: float = 0.0
    eQq2: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    c4: float = 0.0

    def __post_init__(self):
        if not self.B0 > 0:
            raise DomainError("B0 must be positive")
        if self.I1 < 0 or self.I2 < 0:
            raise DomainError("nuclear spins must be non-negative")
        vals = (self.B0, self.d, self.eQq1, self.eQq2, self.c1, self.c2, self.c3, self.c4)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError("molecular constants must be finite")

    @classmethod
    def load(cls, name, path=None):
        specs = read_molecule_file(path)
        try:
            return specs[name]
        except KeyError:
            raise DomainError(f"molecule {name!r} not in constants file") from None


def read_molecule_file(path=None):
    """Parse a molecule constants file; see data/molecules.dat for the layout."""
    if path is None:
        text = resources.files("rydmol").joinpath("data/molecules.dat").read_text()
    else:
        with open(os.fspath(path)) as fh:
            text = fh.read()
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 11:
            raise DomainError(f"molecule file line {lineno}: expected 11 fields")
        name = parts[0]
        B0, d, I1, I2, q1, q2, c1, c2, c3, c4 = map(float, parts[1:])
        out[name] = MoleculeSpec(name, B0, d, I1, I2, q1 * 1e-3, q2 * 1e-3,
                                 c1 * 1e-6, c2 * 1e-6, c3 * 1e-6, c4 * 1e-6)
    return out


@dataclass(frozen=True, order=True)
class RotorState:
    N: int
    mN: int

    def __post_init__(self):
        if self.N < 0 or abs(self.mN) > self.N:
            raise DomainError(f"invalid rotor state N={self.N}, mN={self.mN}")


@dataclass(frozen=True)
class QubitEncoding:
    """Pair of rotor states dressed into |+-> = (|lower> +- |upper>)/sqrt(2).

    ``upper_components`` lists the rotational content of the upper qubit state;
    it is just ``((upper, 1.0),)`` unless an auxiliary drive mixes in a third
    rotor state. ``shifts`` holds light shifts (MHz) that suppress mN-changing
    hyperfine couplings in the lower/upper manifolds.
    """

    lower: RotorState
    upper: RotorState
    polarization: str
    mu_m: float
    omega_m: float
    upper_components: tuple = ()
    shifts: tuple = (None, None)

    def components(self):
        return self.upper_components or ((self.upper, 1.0),)


def _polarization(lower, upper):
    dm = upper.mN - lower.mN
    return "pi" if dm == 0 else "sigma"


def qubit_states(spec, lower, upper):
    """Build the |+-> encoding for a dipole-coupled pair of rotor states."""
    if abs(upper.N - lower.N) != 1 or abs(upper.mN - lower.mN) > 1:
        raise DomainError(f"rotor states {lower} and {upper} are not dipole coupled")
    p = upper.mN - lower.mN
    mu = spec.d * abs(rotor_c1(upper.N, upper.mN, lower.N, lower.mN, p))
    omega = spec.B0 * (upper.N * (upper.N + 1) - lower.N * (lower.N + 1))
    return QubitEncoding(lower, upper, _polarization(lower, upper), mu, omega)


def auxiliary_pi_dressing(spec, encoding, omega_aux, polarization="pi"):
    """Resonantly dress the upper qubit state with the next rotational level.

    The upper state becomes (|N', m'> + |N'+1, m''>)/sqrt(2), halving the
    transferred population and so dividing mu_m by sqrt(2). The auxiliary
    dressed pair is split by +-omega_aux, recorded as the upper-manifold shift.
    """
    if omega_aux == 0:
        return encoding
    up = encoding.upper
    m_aux = up.mN if polarization == "pi" else up.mN + 1
    aux = RotorState(up.N + 1, m_aux)
    amp = 1.0 / math.sqrt(2.0)
    return replace(encoding, mu_m=encoding.mu_m / math.sqrt(2.0),
                   upper_components=((up, amp), (aux, amp)),
                   shifts=(encoding.shifts[0], abs(omega_aux)))


# ---------------------------------------------------------------- hyperfine


def _spin_ops(I):
    """Spherical components (I_-1, I_0, I_+1) on |I m>, m descending."""
    ms = np.arange(I, -I - 1, -1)
    dim = ms.size
    Iz = np.diag(ms)
    Ip = np.zeros((dim, dim))
    for k in range(1, dim):
        m = ms[k]
        Ip[k - 1, k] = math.sqrt(I * (I + 1) - m * (m + 1))
    Im = Ip.T.copy()
    return {-1: Im / math.sqrt(2.0), 0: Iz, 1: -Ip / math.sqrt(2.0)}, ms


def _rot_basis(Nmax):
    return [(N, mN) for N in range(Nmax + 1) for mN in range(N, -N - 1, -1)]


def _rot_ops(Nmax):
    basis = _rot_basis(Nmax)
    dim = len(basis)
    C2 = {q: np.zeros((dim, dim)) for q in range(-2, 3)}
    Nsph = {q: np.zeros((dim, dim)) for q in (-1, 0, 1)}
    for i, (N1, m1) in enumerate(basis):
        for j, (N2, m2) in enumerate(basis):
            q = m1 - m2
            if abs(q) <= 2:
                val = ((-1) ** m1 * math.sqrt((2 * N1 + 1) * (2 * N2 + 1))
                       * wigner_3j(N1, 2, N2, -m1, q, m2) * wigner_3j(N1, 2, N2, 0, 0, 0))
                C2[q][i, j] = val
            if N1 == N2 and abs(q) <= 1:
                # <N m1|N_q|N m2> via Wigner-Eckart with <N||N||N> = sqrt(N(N+1)(2N+1))
                red = math.sqrt(N1 * (N1 + 1) * (2 * N1 + 1))
                Nsph[q][i, j] = (-1) ** (N1 - m1) * wigner_3j(N1, 1, N1, -m1, q, m2) * red
    return basis, C2, Nsph


def _rank2(A, B):
    return {q: sum(clebsch_gordan(1, p, 1, q - p, 2, q) * (A[p] @ B[q - p])
                   for p in (-1, 0, 1) if abs(q - p) <= 1)
            for q in range(-2, 3)}


def _dot2(T, U):
    return sum((-1) ** q * (T[q] @ U[-q]) for q in range(-2, 3))


def _dot1(A, B):
    return sum((-1) ** q * (A[q] @ B[-q]) for q in (-1, 0, 1))


def hyperfine_basis(spec, Nmax):
    """Labels (N, mN, m1, m2) in the order used by :func:`hyperfine_hamiltonian`."""
    _, m1s = _spin_ops(spec.I1)
    _, m2s = _spin_ops(spec.I2)
    return [(N, mN, m1, m2) for (N, mN) in _rot_basis(Nmax) for m1 in m1s for m2 in m2s]


def hyperfine_hamiltonian(spec, Nmax=3):
    """H_Q + H_IN + H_t + H_sc (MHz) on |N mN>|m1>|m2>, N <= Nmax."""
    if Nmax < 0:
        raise DomainError("Nmax must be non-negative")
    _, C2, Nsph = _rot_ops(Nmax)
    s1, _ = _spin_ops(spec.I1)
    s2, _ = _spin_ops(spec.I2)
    d1, d2 = s1[0].shape[0], s2[0].shape[0]
    e1, e2 = np.eye(d1), np.eye(d2)
    er = np.eye(C2[0].shape[0])

    def on_rot(A):
        return np.kron(np.kron(A, e1), e2)

    def on_1(A):
        return np.kron(np.kron(er, A), e2)

    def on_2(A):
        return np.kron(np.kron(er, e1), A)

    C = {q: on_rot(C2[q]) for q in C2}
    Nv = {q: on_rot(Nsph[q]) for q in Nsph}
    I1 = {q: on_1(s1[q]) for q in s1}
    I2 = {q: on_2(s2[q]) for q in s2}

    H = np.zeros_like(C[0])
    for eQq, I, spin in ((spec.eQq1, I1, spec.I1), (spec.eQq2, I2, spec.I2)):
        if eQq and spin >= 1:
            H += eQq * math.sqrt(6.0) / (4 * spin * (2 * spin - 1)) * _dot2(C, _rank2(I, I))
    H += spec.c1 * _dot1(Nv, I1) + spec.c2 * _dot1(Nv, I2)
    if spec.c3:
        H += -spec.c3 * math.sqrt(6.0) * _dot2(C, _rank2(I1, I2))
    H += spec.c4 * _dot1(I1, I2)
    return 0.5 * (H + H.conj().T)


def rotational_hamiltonian(spec, Nmax=3):
    labels = hyperfine_basis(spec, Nmax)
    return np.diag([spec.B0 * N * (N + 1) for (N, _, _, _) in labels])


def _nuclear_block(spec, H, labels, rot, shift):
    """Nuclear-spin operator for a fixed rotor state, optionally with the
    second-order correction from mN-changing couplings across a light shift."""
    idx_p = [i for i, lab in enumerate(labels) if lab[:2] == (rot.N, rot.mN)]
    idx_q = [i for i, lab in enumerate(labels) if lab[0] == rot.N and lab[1] != rot.mN]
    Hp = H[np.ix_(idx_p, idx_p)]
    if shift and idx_q:
        Hpq = H[np.ix_(idx_p, idx_q)]
        Hp = Hp - Hpq @ Hpq.conj().T / shift
    return Hp, [labels[i][2:] for i in idx_p]


def _nuclear_eigenbasis(Hn, spins):
    """Eigenvectors of a nuclear operator diagonalised within m1+m2 blocks."""
    M = np.array([m1 + m2 for m1, m2 in spins])
    vecs, vals, Ms = [], [], []
    dim = len(spins)
    for Mval in sorted(set(M), reverse=True):
        idx = np.where(np.abs(M - Mval) < 1e-9)[0]
        w, v = np.linalg.eigh(Hn[np.ix_(idx, idx)])
        for k in range(w.size):
            full = np.zeros(dim, dtype=v.dtype)
            full[idx] = v[:, k]
            vecs.append(full)
            vals.append(w[k])
            Ms.append(Mval)
    return np.array(vals), np.array(vecs).T, np.array(Ms)


@dataclass(frozen=True)
class OverlapResult:
    lower_index: int
    upper_index: int
    M: float
    overlap: float
    stretched: bool


def nuclear_overlap_analysis(spec, encoding, dressing_shifts=None, Nmax=3):
    """Best nuclear-spin overlap of each lower-manifold hyperfine state with an
    upper-manifold one, with mN held fixed by the encoding.

    ``dressing_shifts`` = (lower, upper) light shifts in MHz; ``None`` entries
    mean the plain fixed-mN projection. Returns :class:`OverlapResult` records
    sorted by descending overlap.
    """
    shifts = dressing_shifts if dressing_shifts is not None else encoding.shifts
    H = hyperfine_hamiltonian(spec, Nmax)
    labels = hyperfine_basis(spec, Nmax)
    Hl, spins = _nuclear_block(spec, H, labels, encoding.lower, shifts[0])
    Hu = np.zeros_like(Hl)
    for rot, amp in encoding.components():
        block, spins_u = _nuclear_block(spec, H, labels, rot, shifts[1])
        if spins_u != spins:
            raise DomainError("nuclear bases differ between manifolds")
        Hu = Hu + abs(amp) ** 2 * block
    _, vl, Ml = _nuclear_eigenbasis(Hl, spins)
    _, vu, _ = _nuclear_eigenbasis(Hu, spins)
    ov = np.abs(vl.conj().T @ vu) ** 2
    Mmax = spec.I1 + spec.I2
    out = []
    for i in range(ov.shape[0]):
        j = int(np.argmax(ov[i]))
        out.append(OverlapResult(i, j, float(Ml[i]), float(min(ov[i, j], 1.0)),
                                 bool(abs(abs(Ml[i]) - Mmax) < 1e-9)))
    out.sort(key=lambda r: -r.overlap)
    return out


def count_overlaps(results, threshold):
    """Number of non-stretched pairs with overlap >= threshold."""
    return sum(1 for r in results if not r.stretched and r.overlap >= threshold)


#: Auxiliary Rabi frequencies (MHz) scanned for overlap counts: 0 and half decades 1 kHz - 100 MHz.
AUX_SCAN_MHZ = (0.0,) + tuple(float(x) for x in np.round(np.logspace(-3, 2, 11), 12))


def overlap_count_scan(spec, encoding, thresholds=(0.97, 0.99), omegas=AUX_SCAN_MHZ,
                       polarization="pi", Nmax=3):
    """Overlap counts versus auxiliary drive strength.

    Returns a list of ``(omega_aux, {threshold: count})``; omega_aux = 0 is the
    undressed encoding.
    """
    out = []
    for w in omegas:
        enc = auxiliary_pi_dressing(spec, encoding, w, polarization)
        res = nuclear_overlap_analysis(spec, enc, Nmax=Nmax)
        out.append((float(w), {t: count_overlaps(res, t) for t in thresholds}))
    return out
