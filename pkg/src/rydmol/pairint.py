"""Dressed-state pair interactions in a multi-tone rotating frame.

Single-atom picture. The dressed manifold (the three or six Rydberg levels
coupled by the pi and sigma drives) is diagonalized in the rotating frame;
every bare level carries a photon label k = (k_pi, k_sigma): (0, 0) for r and
r', (1, 0) for r_pi, r_pi' and (0, 1) for r_sigma, r_sigma'. All other levels
in the truncation window are undressed and carry k = (0, 0). A state's
quasi-energy is E_bare - E_r - k.w with w = (w_pi, w_sigma) the drive
frequencies.

Pair picture. A pair state (mu, nu, K) is the product of single-atom states
mu and nu shifted by K photons in total; its quasi-energy is
eps_mu + eps_nu - K.w. The static dipole-dipole operator couples
(mu, nu, K) -> (mu', nu', K') through bare transitions m <- c, m' <- c' whose
label changes add to K' - K, i.e. total photon number is conserved and no
counter-rotating terms appear. Every reachable K replica is kept, which is the
second-order Floquet treatment and is independent of how labels are assigned
to the undressed levels.

Units: energies in MHz, distances in um, dipoles in e*a0 internally;
C6 in MHz um^6 (divide by 1e3 for GHz um^6).
"""

from dataclasses import dataclass, field
from functools import cached_property
import itertools
import math

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import dressing
from .atomdata import RydbergLevel, level_energy, transition_dipole
from .errors import ConvergenceError, DegeneracyError, DomainError
from .units import DD_MHZ_UM3

PHOTON_LABELS = {"r": (0, 0), "r'": (0, 0), "rpi": (1, 0), "rsigma": (0, 1),
                 "rpi'": (1, 0), "rsigma'": (0, 1)}
OVERLAP_THRESHOLD = 0.05
# default deficit cut for dispersion fits; keeps avoided crossings out of the fit
FIT_DEFICIT = 5e-3


@dataclass(frozen=True)
class PairTruncation:
    lmax: int
    nmin: int
    nmax: int
    cutoff: float  # MHz, |E_pair - E_aa| <= cutoff

    def __post_init__(self):
        if self.nmin > self.nmax:
            raise DomainError("nmin must not exceed nmax")
        if not self.cutoff > 0:
            raise DomainError("pair-energy cutoff must be positive")
        if self.lmax < 0:
            raise DomainError("lmax must be non-negative")


@dataclass(frozen=True)
class PairGeometry:
    r_aa: float = 1.0
    theta: float = math.pi / 2
    phi: float = 0.0

    def __post_init__(self):
        if not self.r_aa > 0:
            raise DomainError("r_aa must be positive")


@dataclass(frozen=True)
class DispersionSet:
    """Dispersion coefficients; C_n in MHz um^n, P_n in um^n."""

    C3: float = 0.0
    C6: float = 0.0
    C9: float = 0.0
    C12: float = 0.0
    P6: float = 0.0
    P12: float = 0.0

    def __post_init__(self):
        vals = (self.C3, self.C6, self.C9, self.C12, self.P6, self.P12)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError("dispersion coefficients must be finite")
        if self.P6 < 0 or self.P12 < 0:
            raise DomainError("P6 and P12 must be non-negative")

    def interaction(self, r):
        r = np.asarray(r, dtype=float)
        return self.C6 / r**6 + self.C9 / r**9 + self.C12 / r**12

    def overlap_deficit(self, r):
        r = np.asarray(r, dtype=float)
        return self.P6 / r**6 + self.P12 / r**12


# ---------------------------------------------------------------- angular part


def dd_tensor(theta=math.pi / 2, phi=0.0):
    """W[p, p'] with V = sum_pp' W d1_p d2_p' / r^3 (index p + 1)."""
    n = {0: math.cos(theta),
         1: -math.sin(theta) * np.exp(1j * phi) / math.sqrt(2.0),
         -1: math.sin(theta) * np.exp(-1j * phi) / math.sqrt(2.0)}
    W = np.zeros((3, 3), dtype=complex)
    for p, q in itertools.product((-1, 0, 1), repeat=2):
        val = (-1) ** p * (1.0 if p == -q else 0.0) - 3.0 * (-1) ** (p + q) * n[-p] * n[-q]
        W[p + 1, q + 1] = val
    return W


# ---------------------------------------------------------------- single atom


def window_levels(trunc):
    """All fine-structure levels (every mJ) with nmin <= n <= nmax and L <= lmax."""
    out = []
    for n in range(trunc.nmin, trunc.nmax + 1):
        for L in range(0, min(trunc.lmax, n - 1) + 1):
            for J in ((0.5,) if L == 0 else (L - 0.5, L + 0.5)):
                for k in range(int(2 * J) + 1):
                    out.append(RydbergLevel(n, L, J, J - k))
    return out


def manifold_levels(triple, six=True):
    """Bare manifold levels and their role names, in six-level order."""
    r, rpi, rsig = triple
    levels = {"r": r, "rpi": rpi, "rsigma": rsig}
    if six:
        for name, lev in (("r'", r.partner()), ("rpi'", rpi.partner()), ("rsigma'", rsig.partner())):
            if lev is not None:
                levels[name] = lev
    return levels


@dataclass
class FloquetAtom:
    """Single-atom rotating-frame states.

    ``U[j, b]`` is the amplitude of bare level b in single-atom state j,
    ``eps[j]`` its quasi-energy (MHz, relative to E_r), ``k[b]`` the photon
    label of bare level b and ``dip[p][m, c] = <m|d_p|c>``.
    """

    bare: list
    k: np.ndarray
    U: np.ndarray
    eps: np.ndarray
    dip: np.ndarray
    omega: np.ndarray
    a: int
    n_manifold: int
    names: list

    @cached_property
    def deltas(self):
        labels = np.unique(self.k, axis=0)
        diffs = {(int(x[0]), int(x[1])) for x in (labels[:, None, :] - labels[None, :, :]).reshape(-1, 2)}
        return sorted(diffs)

    @cached_property
    def D(self):
        """D[p][d][j', j] = sum_{k_c - k_m = delta_d} conj(U[j', m]) U[j, c] <m|d_p|c>."""
        kd = self.k[None, :, :] - self.k[:, None, :]  # [m, c] -> k_c - k_m
        out = np.zeros((3, len(self.deltas), self.U.shape[0], self.U.shape[0]), dtype=complex)
        Uc = self.U.conj()
        for d, delta in enumerate(self.deltas):
            mask = np.all(kd == np.array(delta), axis=-1)
            for p in range(3):
                out[p, d] = Uc @ (self.dip[p] * mask) @ self.U.T
        return out

    @cached_property
    def Da(self):
        """Da[p, d, j'] = D[p][d][j', a], without forming the full D."""
        kd = self.k[None, :, :] - self.k[:, None, :]
        out = np.zeros((3, len(self.deltas), self.U.shape[0]), dtype=complex)
        ua = self.U[self.a]
        for d, delta in enumerate(self.deltas):
            mask = np.all(kd == np.array(delta), axis=-1)
            for p in range(3):
                out[p, d] = self.U.conj() @ ((self.dip[p] * mask) @ ua)
        return out

    def delta_index(self):
        return {d: i for i, d in enumerate(self.deltas)}

    def label(self, j):
        return self.names[j]


_DIP_CACHE = {}


def _dipole_tables(levels, defects):
    key = (tuple(levels), defects)
    dip = _DIP_CACHE.get(key)
    if dip is None:
        if len(_DIP_CACHE) > 16:
            _DIP_CACHE.clear()
        dip = _DIP_CACHE[key] = _dipole_table_uncached(levels, defects)
    return dip


def _dipole_table_uncached(levels, defects):
    nb = len(levels)
    dip = np.zeros((3, nb, nb))
    for m, c in itertools.product(range(nb), repeat=2):
        lm, lc = levels[m], levels[c]
        if abs(lm.L - lc.L) != 1:
            continue
        p = lm.mJ - lc.mJ
        if abs(p) > 1:
            continue
        dip[int(round(p)) + 1, m, c] = transition_dipole(lc, lm, int(round(p)), defects)
    return dip


def floquet_atom(triple, drive, defects, trunc, ratios=None, six=True, reference=None,
                 phases=(0.0, 0.0)):
    """Single-atom rotating-frame states for a dressing ``drive``.

    ``ratios`` (FineStructureRatios) enables the six-level manifold. The
    dressed state |a> is the manifold eigenvector with the largest overlap with
    ``reference`` (bare amplitudes in three- or six-level label order), by default the
    three-level state of ``drive`` closest to dipolar nullification.
    ``phases`` multiplies the pi and sigma Rabi frequencies by exp(i*phase).
    """
    six = six and ratios is not None
    man = manifold_levels(triple, six)
    names = list(man)
    man_levels = [man[n] for n in names]
    outside = [lev for lev in window_levels(trunc) if lev not in set(man_levels)]
    bare = man_levels + outside
    nm = len(man_levels)
    k = np.array([PHOTON_LABELS[n] for n in names] + [(0, 0)] * len(outside))

    e_r = level_energy(triple[0], defects)
    e_bare = np.array([level_energy(lev, defects) - e_r for lev in bare])
    omega = np.array([e_bare[names.index("rpi")] + drive.delta_pi,
                      e_bare[names.index("rsigma")] + drive.delta_sigma])

    if six:
        Hm = dressing.six_level_hamiltonian(drive, ratios).astype(complex)
        order = [dressing.SIX_LABELS.index(n) for n in names]
        Hm = Hm[np.ix_(order, order)]
    else:
        Hm = dressing.three_level_hamiltonian(drive).astype(complex)
    # complex drive phases on the r -> r_pi / r_sigma type couplings: H -> P^+ H P
    ph = np.array([np.exp(1j * phases[0]) if n.startswith("rpi")
                   else np.exp(1j * phases[1]) if n.startswith("rsigma") else 1.0
                   for n in names])
    Hm = Hm * np.outer(ph.conj(), ph)
    w, V = np.linalg.eigh(Hm)

    if reference is None:
        three = min(dressing.dressed_state(drive),
                    key=lambda st: abs(dressing.dipolar_residual(st, 1.0, 1.0 / _m_ratio(triple, defects))))
        reference = three.coefficients
    reference = np.asarray(reference, dtype=complex)
    if reference.size not in (3, 6):
        raise DomainError("reference must list 3 or 6 bare amplitudes")
    src = dressing.LABELS if reference.size == 3 else dressing.SIX_LABELS
    ref = np.zeros(nm, dtype=complex)
    for i, n in enumerate(src):
        if n in names:
            ref[names.index(n)] = reference[i]
    reference = ph.conj() * ref  # eigenvectors transform as P^+ v
    a = int(np.argmax(np.abs(V.conj().T @ reference)))

    nb = len(bare)
    U = np.zeros((nm + len(outside), nb), dtype=complex)
    U[:nm, :nm] = V.T
    U[nm:, nm:] = np.eye(len(outside))
    # quasi-energies: dressed eigenvalues; undressed levels sit at bare energy
    eps = np.concatenate([w, e_bare[nm:]])
    st_names = [("a" if j == a else f"dressed{j}") for j in range(nm)] + [lev.label() for lev in outside]
    dip = _dipole_tables(bare, defects)
    return FloquetAtom(bare, k, U, eps, dip, omega, a, nm, st_names)


def _m_ratio(triple, defects):
    r, rpi, rsig = triple
    mu_pi = transition_dipole(r, rpi, 0, defects)
    mu_sig = transition_dipole(r, rsig, int(round(rsig.mJ - r.mJ)), defects)
    return abs(mu_pi / mu_sig)


# ---------------------------------------------------------------- pair basis


@dataclass
class PairBasis:
    """Symmetrized pair states (mu <= nu, K) of one FloquetAtom.

    ``energy`` is relative to the dressed pair |aa>, which is index ``aa``.
    """

    atom: FloquetAtom
    mu: np.ndarray
    nu: np.ndarray
    K: np.ndarray
    energy: np.ndarray
    aa: int
    cutoff: float
    keys: np.ndarray = None

    def __len__(self):
        return self.mu.size

    def label(self, i):
        K = tuple(int(x) for x in self.K[i])
        return f"|{self.atom.names[self.mu[i]]}, {self.atom.names[self.nu[i]]}; K={K}>"


def _first_order_amplitudes(atom, W):
    """amp[K][mu, nu] = <mu nu; K|V|aa> at r = 1 (e a0)^2, ordered product states."""
    key = W.tobytes()
    cache = atom.__dict__.setdefault("_amp_cache", {})
    if key in cache:
        return cache[key]
    Da = atom.Da
    out = {}
    for (d1, del1), (d2, del2) in itertools.product(enumerate(atom.deltas), repeat=2):
        A, B = Da[:, d1, :], Da[:, d2, :]
        if not (np.any(A) and np.any(B)):
            continue
        K = (del1[0] + del2[0], del1[1] + del2[1])
        blk = A.T @ W @ B
        out[K] = out.get(K, 0) + blk
    cache[key] = out
    return out


_KS = 1 << 16  # additive code for photon shifts: code(K) = K_pi * _KS + K_sigma


def _kcode(K):
    return int(K[0]) * _KS + int(K[1])


def _kdecode(code):
    code = np.asarray(code, dtype=np.int64)
    k0 = np.round(code / _KS).astype(np.int64)
    return np.stack([k0, code - k0 * _KS], axis=-1)


def _sparse_terms(atom, W, tol=0.0):
    """(weight, A, B, code(dK)) for every dipole-dipole term with nonzero parts."""
    cache = atom.__dict__.setdefault("_csc_cache", {})
    if not cache:
        for p in range(3):
            for d in range(len(atom.deltas)):
                M = atom.D[p, d]
                if np.any(M):
                    cache[(p, d)] = scipy.sparse.csc_matrix(M)
    terms = []
    for (p, d1), A in cache.items():
        for (q, d2), B in cache.items():
            if abs(W[p, q]) <= tol:
                continue
            dK = (atom.deltas[d1][0] + atom.deltas[d2][0], atom.deltas[d1][1] + atom.deltas[d2][1])
            terms.append((W[p, q], A, B, _kcode(dK)))
    return terms


def _expand(terms, mu, nu, kc, chunk=20000):
    """Targets of ordered kets (mu, nu, K) under V: yields (ket, mu', nu', code(K'), amp)."""
    for lo in range(0, mu.size, chunk):
        m, n, k = mu[lo:lo + chunk], nu[lo:lo + chunk], kc[lo:lo + chunk]
        for w, A, B, dk in terms:
            na = A.indptr[m + 1] - A.indptr[m]
            nb = B.indptr[n + 1] - B.indptr[n]
            cnt = na * nb
            tot = int(cnt.sum())
            if tot == 0:
                continue
            ket = np.repeat(np.arange(m.size), cnt)
            t = np.arange(tot) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            nbr = nb[ket]
            pa = A.indptr[m[ket]] + t // nbr
            pb = B.indptr[n[ket]] + t % nbr
            yield (ket + lo, A.indices[pa], B.indices[pb], k[ket] + dk,
                   w * A.data[pa] * B.data[pb])


def _pair_energy(atom, m, n, kc):
    K = _kdecode(kc)
    return (atom.eps[m] + atom.eps[n] - K[..., 0] * atom.omega[0] - K[..., 1] * atom.omega[1]
            - 2.0 * atom.eps[atom.a])


def _pair_key(m, n, kc, ns):
    lo, hi = np.minimum(m, n), np.maximum(m, n)
    return (np.asarray(kc, dtype=np.int64) * ns + lo) * ns + hi


def build_pair_basis(trunc, atom, geometry=None, order=1, include_manifold=True, rel_tol=1e-12,
                     replicas="all"):
    """Symmetrized pair states reachable from |aa> in at most ``order`` dipole-dipole
    steps, each within ``trunc.cutoff`` of the dressed pair energy.

    With ``include_manifold`` all pairs of dressed-manifold states at the
    reachable photon shifts are added as well. |aa> is always retained.

    ``replicas="all"`` keeps every photon shift K of a pair (mu, nu);
    ``"nearest"`` keeps only the K with the smallest |quasi-energy|, so that
    couplings to the other shifts are dropped as counter-rotating.
    """
    if replicas not in ("all", "nearest"):
        raise DomainError("replicas must be 'all' or 'nearest'")
    geometry = geometry or PairGeometry()
    if order < 1:
        raise DomainError("order must be >= 1")
    W = dd_tensor(geometry.theta, geometry.phi)
    terms = _sparse_terms(atom, W)
    ns = atom.U.shape[0]
    scale = max((float(np.max(np.abs(A.data))) for _, A, _, _ in terms), default=0.0) ** 2
    keys = {int(_pair_key(np.array([atom.a]), np.array([atom.a]), np.array([0]), ns)[0])}
    fm, fn, fk = np.array([atom.a]), np.array([atom.a]), np.array([0], dtype=np.int64)
    for _ in range(order):
        # both orderings of the frontier
        om, on, ok = np.concatenate([fm, fn]), np.concatenate([fn, fm]), np.concatenate([fk, fk])
        new = []
        for _, m2, n2, k2, amp in _expand(terms, om, on, ok):
            sel = np.abs(amp) > rel_tol * scale
            m2, n2, k2 = m2[sel], n2[sel], k2[sel]
            sel = np.abs(_pair_energy(atom, m2, n2, k2)) <= trunc.cutoff
            new.append(_pair_key(m2[sel], n2[sel], k2[sel], ns))
        new = np.unique(np.concatenate(new)) if new else np.array([], dtype=np.int64)
        new = np.array([x for x in new.tolist() if x not in keys], dtype=np.int64)
        keys.update(new.tolist())
        fk, rest = np.divmod(new, ns * ns)
        fm, fn = np.divmod(rest, ns)
        if new.size == 0:
            break
    if include_manifold:
        nm = atom.n_manifold
        kset = {int(k) for k in np.array(sorted(keys), dtype=np.int64) // (ns * ns)}
        mm, nn = np.triu_indices(nm)
        for kc in kset:
            kk = np.full(mm.size, kc, dtype=np.int64)
            sel = np.abs(_pair_energy(atom, mm, nn, kk)) <= trunc.cutoff
            keys.update(_pair_key(mm[sel], nn[sel], kk[sel], ns).tolist())
    allkeys = np.array(sorted(keys), dtype=np.int64)
    kc, rest = np.divmod(allkeys, ns * ns)
    mu, nu = np.divmod(rest, ns)
    energy = _pair_energy(atom, mu, nu, kc)
    if replicas == "nearest":
        aa_key = _pair_key(np.array([atom.a]), np.array([atom.a]), np.array([0]), ns)[0]
        order_ = np.lexsort((np.abs(energy), rest))
        first = np.ones(order_.size, dtype=bool)
        first[1:] = rest[order_][1:] != rest[order_][:-1]
        keep = np.zeros(allkeys.size, dtype=bool)
        keep[order_[first]] = True
        keep[allkeys == aa_key] = True
        if keep[allkeys == aa_key].any():
            # |aa> displaces any other replica of (a, a)
            same = (rest == rest[allkeys == aa_key][0]) & (allkeys != aa_key)
            keep[same] = False
        allkeys, kc, mu, nu, energy = allkeys[keep], kc[keep], mu[keep], nu[keep], energy[keep]
    aa = int(np.searchsorted(allkeys, _pair_key(np.array([atom.a]), np.array([atom.a]),
                                                 np.array([0]), ns)[0]))
    return PairBasis(atom, mu, nu, _kdecode(kc), energy, aa, trunc.cutoff, allkeys)


def dipole_dipole_operator(basis, geometry=None):
    """Hermitian V at r = 1 um (MHz um^3) on the symmetrized pair basis, as a sparse matrix."""
    geometry = geometry or PairGeometry()
    atom = basis.atom
    terms = _sparse_terms(atom, dd_tensor(geometry.theta, geometry.phi))
    ns = atom.U.shape[0]
    keys = basis.keys
    kc = keys // (ns * ns)
    # |S> = c_S (|mu nu> + |nu mu>) with one ordering kept when mu == nu
    diff = basis.mu != basis.nu
    om = np.concatenate([basis.mu, basis.nu[diff]])
    on = np.concatenate([basis.nu, basis.mu[diff]])
    ok = np.concatenate([kc, kc[diff]])
    col = np.concatenate([np.arange(len(basis)), np.nonzero(diff)[0]])
    c_ket = np.where(diff, 1 / math.sqrt(2.0), 1.0)
    # dense lookup (K index, mu, nu) -> basis index, filled for both orderings
    ucodes = np.unique(kc)
    table = np.full((ucodes.size, ns, ns), -1, dtype=np.int64)
    ki = np.searchsorted(ucodes, kc)
    table[ki, basis.mu, basis.nu] = np.arange(len(basis))
    table[ki, basis.nu, basis.mu] = np.arange(len(basis))
    rows, cols, vals = [], [], []
    for ket, m2, n2, k2, amp in _expand(terms, om, on, ok):
        kpos = np.searchsorted(ucodes, k2)
        kpos[kpos >= ucodes.size] = 0
        pos = np.where(ucodes[kpos] == k2, table[kpos, m2, n2], -1)
        hit = pos >= 0
        c = col[ket[hit]]
        b = np.where(m2[hit] != n2[hit], 1 / math.sqrt(2.0), 1.0)
        rows.append(pos[hit])
        cols.append(c)
        vals.append(amp[hit] * b * c_ket[c])
    B = len(basis)
    if rows:
        V = scipy.sparse.coo_matrix((np.concatenate(vals) * DD_MHZ_UM3,
                                     (np.concatenate(rows), np.concatenate(cols))), shape=(B, B)).tocsr()
    else:
        V = scipy.sparse.csr_matrix((B, B), dtype=complex)
    return (0.5 * (V + V.conj().T)).tocsr()


def coupling_to_aa(basis, geometry=None):
    """Column <S|V|aa> (MHz um^3) without building the full operator."""
    geometry = geometry or PairGeometry()
    amps = _first_order_amplitudes(basis.atom, dd_tensor(geometry.theta, geometry.phi))
    col = np.zeros(len(basis), dtype=complex)
    for i, (m, n, K) in enumerate(zip(basis.mu, basis.nu, map(tuple, basis.K))):
        blk = amps.get(K)
        if blk is None:
            continue
        col[i] = blk[m, n] + blk[n, m]
    norm = np.where(basis.mu == basis.nu, 2.0, 1.0)
    return col / np.sqrt(2.0 * norm) * DD_MHZ_UM3


def perturbative_c6(basis, V=None, geometry=None, guard=1e-6):
    """(C6 [MHz um^6], P6 [um^6]) from second-order sums over the pair basis.

    Raises DegeneracyError if a coupled pair state lies within
    ``guard * cutoff`` of |aa>.
    """
    if V is None:
        col = coupling_to_aa(basis, geometry)
    else:
        col = np.asarray(scipy.sparse.csc_matrix(V)[:, [basis.aa]].toarray()).ravel()
    col[basis.aa] = 0.0
    E = basis.energy
    mask = np.abs(col) > 0
    near = mask & (np.abs(E) < guard * basis.cutoff)
    if near.any():
        i = int(np.nonzero(near)[0][0])
        raise DegeneracyError(f"pair state {basis.label(i)} is degenerate with |aa> "
                              f"(gap {E[i]:.3g} MHz)", basis.label(i))
    w = np.abs(col[mask]) ** 2
    C6 = float(np.sum(w / (-E[mask])))
    P6 = float(np.sum(w / E[mask] ** 2))
    return C6, P6


def first_order_c3(basis, V=None, geometry=None):
    """Diagonal dipolar shift <aa|V|aa> (MHz um^3); zero for a nullified state."""
    if V is None:
        V = dipole_dipole_operator(basis, geometry)
    return float(np.real(scipy.sparse.csr_matrix(V)[basis.aa, basis.aa]))


def r_crit(P6, threshold=OVERLAP_THRESHOLD):
    """Distance where P6 / r^6 reaches ``threshold``."""
    return (P6 / threshold) ** (1.0 / 6.0)


# ---------------------------------------------------------------- exact scan


@dataclass
class ExactScan:
    r: np.ndarray
    V: np.ndarray
    overlap: np.ndarray
    diabatic: np.ndarray
    basis_size: int


def exact_scan(r_grid, basis, V=None, geometry=None, block=4, tol=1e-8, max_iter=100):
    """Track the |aa>-adiabatic pair eigenstate on a descending r grid.

    At each r the pair Hamiltonian is factorized once around the previous
    eigenvalue and a small block of vectors, seeded with the previous
    eigenvectors, is refined by inverse iteration with Rayleigh-Ritz. Small
    bases are diagonalized densely.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.size == 0 or np.any(np.diff(r_grid) > 0) or np.any(r_grid <= 0):
        raise DomainError("r grid must be positive and descending")
    if V is None:
        V = dipole_dipole_operator(basis, geometry)
    V = scipy.sparse.csc_matrix(V)
    if V.nnz and not np.any(V.data.imag):
        V = V.real
    n = len(basis)
    H0 = scipy.sparse.diags(basis.energy, format="csc")
    prev = np.zeros(n, dtype=V.dtype)
    prev[basis.aa] = 1.0
    X = None
    e_prev = 0.0
    energies, ovs, flags = [], [], []
    for r in r_grid:
        H = (H0 + V / r**3).tocsc()
        if n <= 400:
            w, vecs = np.linalg.eigh(H.toarray())
        else:
            # linear predictor for the tracked energy
            guess = e_prev
            if len(energies) >= 2:
                r1, r0 = r_grid[len(energies) - 1], r_grid[len(energies) - 2]
                guess = e_prev + (e_prev - energies[-2]) * (r - r1) / (r1 - r0)
            try:
                w, vecs, X = _track_block(H, guess, prev, X, block, tol, max_iter)
            except ConvergenceError:
                w, vecs = scipy.sparse.linalg.eigsh(H, k=min(4 * block, n - 2), sigma=guess + 1e-7)
                X = None
        ov = np.abs(vecs.conj().T @ prev) ** 2
        k = int(np.argmax(ov))
        flags.append(bool(ov[k] < 0.5))
        prev = vecs[:, k]
        e_prev = float(w[k])
        energies.append(e_prev)
        ovs.append(float(abs(prev[basis.aa]) ** 2))
    return ExactScan(r_grid, np.array(energies), np.array(ovs), np.array(flags), n)


def _track_block(H, shift, prev, X, block, tol, max_iter):
    """Eigenpairs of sparse H nearest ``shift`` by block inverse iteration."""
    n = H.shape[0]
    sigma = shift + 1e-7 * (1.0 + abs(shift))
    lu = scipy.sparse.linalg.splu((H - sigma * scipy.sparse.identity(n, format="csc")).tocsc(),
                                  permc_spec="MMD_AT_PLUS_A")
    if X is None:
        rng = np.random.default_rng(0)
        X = np.column_stack([prev] + [rng.standard_normal(n) for _ in range(block - 1)]).astype(H.dtype)
    else:
        X = X.copy()
        X[:, 0] = prev
    for _ in range(max_iter):
        Q, _ = np.linalg.qr(lu.solve(X))
        w, c = np.linalg.eigh(Q.conj().T @ (H @ Q))
        X = Q @ c
        k = int(np.argmax(np.abs(X.conj().T @ prev)))
        # eigenvalue error is ~ residual^2 / gap, so this is far below 1 Hz
        if np.linalg.norm(H @ X[:, k] - w[k] * X[:, k]) < tol:
            break
    else:
        raise ConvergenceError(f"inverse iteration did not converge near {shift:.6g} MHz")
    return w, X, X


# ---------------------------------------------------------------- fits


@dataclass
class FitResult:
    C9: float
    C12: float
    P12: float
    residual_V: float
    residual_overlap: float
    n_points: int
    exponent_outer: float
    exponent_inner: float


def fit_dispersion(r, V, overlap, C6=0.0, P6=0.0, min_abs_v=1e-5, max_deficit=FIT_DEFICIT,
                   min_points=6, max_cond=1e12):
    """Least-squares C9, C12 (V - C6/r^6 on r^-9, r^-12) and P12 (deficit - P6/r^6 on r^-12)."""
    r = np.asarray(r, dtype=float)
    V = np.asarray(V, dtype=float)
    deficit = 1.0 - np.asarray(overlap, dtype=float)
    sel = (deficit < max_deficit) & (np.abs(V) > min_abs_v)
    if sel.sum() < min_points:
        raise DomainError(f"only {int(sel.sum())} perturbative points (need {min_points})")
    rs, Vs, ds = r[sel], V[sel], deficit[sel]
    # scale columns for conditioning
    r0 = float(np.min(rs))
    A = np.column_stack([(r0 / rs) ** 9, (r0 / rs) ** 12])
    if np.linalg.cond(A) > max_cond:
        raise DomainError("ill-conditioned fit design matrix")
    y = Vs - C6 / rs**6
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    C9, C12 = coef[0] * r0**9, coef[1] * r0**12
    yd = ds - P6 / rs**6
    p12 = float(np.dot((r0 / rs) ** 12, yd) / np.dot((r0 / rs) ** 12, (r0 / rs) ** 12)) * r0**12
    fitV = C6 / rs**6 + C9 / rs**9 + C12 / rs**12
    rv = float(np.sqrt(np.mean((Vs - fitV) ** 2)) / max(np.max(np.abs(Vs)), 1e-300))
    rd = float(np.sqrt(np.mean((ds - P6 / rs**6 - p12 / rs**12) ** 2)))
    outer, inner = _local_exponents(rs, y, C9)
    return FitResult(float(C9), float(C12), max(p12, 0.0), rv, rd, int(sel.sum()), outer, inner)


def _local_exponents(r, y, C9):
    """Log-log slopes: of y over the outer half, and of y - C9/r^9 over the inner half."""
    order = np.argsort(r)
    r, y = r[order], y[order]
    half = max(3, r.size // 2)
    outer = inner = float("nan")
    yo, ro = y[-half:], r[-half:]
    if np.all(yo != 0) and np.all(np.sign(yo) == np.sign(yo[0])):
        outer = float(np.polyfit(np.log(ro), np.log(np.abs(yo)), 1)[0])
    yi = (y - C9 / r**9)[:half]
    ri = r[:half]
    if np.all(yi != 0) and np.all(np.sign(yi) == np.sign(yi[0])):
        inner = float(np.polyfit(np.log(ri), np.log(np.abs(yi)), 1)[0])
    return outer, inner


def excess_interaction(J6_component, eps, r):
    """Residual interaction |J6_i| eps / r^6 for a fractional parameter error eps."""
    if not r > 0:
        raise DomainError("r must be positive")
    return abs(J6_component) * eps / r**6


# ---------------------------------------------------------------- scenario level


def dressed_pair(problem, drive=None, phases=(0.0, 0.0), geometry=None, order=1):
    """(FloquetAtom, PairBasis) for a solved Problem at its (or a given) drive."""
    atom = problem.floquet_atom(drive, phases)
    return atom, build_pair_basis(problem.scenario.truncation, atom, geometry, order=order)


@dataclass
class Crossing:
    beta: float
    C6: float
    P6: float
    r_crit: float


@dataclass
class BetaScan:
    beta: np.ndarray
    C6: np.ndarray
    P6: np.ndarray
    r_crit: np.ndarray
    crossings: list
    poles: list
    failures: dict = field(default_factory=dict)

    @property
    def max_abs_c6(self):
        finite = np.isfinite(self.C6)
        return float(np.max(np.abs(self.C6[finite]))) if finite.any() else float("nan")


def c6_at_beta(scenario, beta, geometry=None):
    """(C6, P6) of the scenario dressed at ``beta``."""
    from .scenario import Problem
    prob = Problem(scenario, beta=beta)
    _, basis = dressed_pair(prob, geometry=geometry)
    return perturbative_c6(basis, geometry=geometry)


def _safe_c6(scenario, beta, geometry):
    try:
        return c6_at_beta(scenario, beta, geometry), None
    except (DomainError, DegeneracyError, ConvergenceError) as exc:
        return (float("nan"), float("nan")), f"{type(exc).__name__}: {exc}"


def beta_scan(betas, scenario, geometry=None, threads=1, rel_tol=1e-6, max_iter=200):
    """C6 and r_crit over a beta grid, with sign changes refined by bisection.

    A sign change whose bisection ends with |C6| <= rel_tol * max|C6| is a zero
    crossing; one where |C6| grows instead is a pole (a resonant pair state
    crossing the dressed pair) and is listed in ``poles``.
    """
    import warnings
    betas = np.asarray(betas, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", dressing.RWAWarning)
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(threads) as ex:
                res = list(ex.map(lambda b: _safe_c6(scenario, b, geometry), betas))
        else:
            res = [_safe_c6(scenario, b, geometry) for b in betas]
        C6 = np.array([x[0][0] for x in res])
        P6 = np.array([x[0][1] for x in res])
        failures = {float(b): x[1] for b, x in zip(betas, res) if x[1]}
        finite = np.isfinite(C6)
        scale = float(np.max(np.abs(C6[finite]))) if finite.any() else 0.0
        crossings, poles = [], []
        for i in range(betas.size - 1):
            c0, c1 = C6[i], C6[i + 1]
            if not (np.isfinite(c0) and np.isfinite(c1)) or np.sign(c0) == np.sign(c1):
                continue
            lo, hi, flo = betas[i], betas[i + 1], c0
            c_mid = p_mid = float("nan")
            for _ in range(max_iter):
                mid = 0.5 * (lo + hi)
                (c_mid, p_mid), err = _safe_c6(scenario, mid, geometry)
                if err or not np.isfinite(c_mid):
                    break
                if abs(c_mid) <= rel_tol * scale or hi - lo < 1e-14:
                    break
                if np.sign(c_mid) == np.sign(flo):
                    lo, flo = mid, c_mid
                else:
                    hi = mid
            if np.isfinite(c_mid) and abs(c_mid) <= rel_tol * max(scale, abs(c0), abs(c1)):
                crossings.append(Crossing(float(mid), float(c_mid), float(p_mid), r_crit(p_mid)))
            else:
                poles.append(float(mid))
    rc = np.where(np.isfinite(P6), (np.abs(P6) / OVERLAP_THRESHOLD) ** (1 / 6), np.nan)
    return BetaScan(betas, C6, P6, rc, crossings, poles, failures)


def nullifying_beta(scenario, threads=1):
    """Zero crossing of C6 in the scenario window with the smallest r_crit."""
    betas = np.linspace(scenario.beta_min, scenario.beta_max, scenario.beta_points)
    scan = beta_scan(betas, scenario, threads=threads)
    if not scan.crossings:
        raise ConvergenceError(f"no C6 zero crossing for beta in [{betas[0]}, {betas[-1]}]")
    return min(scan.crossings, key=lambda c: c.r_crit), scan


def default_r_grid(scenario):
    """Descending log-spaced grid from r_max to r_min."""
    return np.geomspace(scenario.r_max, scenario.r_min, scenario.r_points)


def scan_problem(problem, r_grid=None, geometry=None, phases=(0.0, 0.0), order=2):
    """Exact scan of a solved Problem; returns (ExactScan, C6, P6).

    The scan basis holds pair states up to ``order`` dipole-dipole steps from
    |aa>; order 2 is the lowest that captures the r^-12 terms.
    """
    atom, basis = dressed_pair(problem, phases=phases, geometry=geometry, order=order)
    V = dipole_dipole_operator(basis, geometry)
    C6, P6 = perturbative_c6(basis, V)
    grid = default_r_grid(problem.scenario) if r_grid is None else r_grid
    return exact_scan(grid, basis, V), C6, P6


def _c6_of_drive(problem, drive):
    _, basis = dressed_pair(problem, drive=drive)
    return perturbative_c6(basis)[0]


def sensitivity_jacobian(problem, which="C3", rel_step=1e-5, ratio_tol=0.10):
    """J_i = v_i dC/dv_i for v = (W_pi, W_sigma, D_pi, D_sigma).

    Central differences with step ``rel_step * |v_i|``, repeated at half step.
    The two estimates must agree to ``ratio_tol`` (relative to the largest
    component, so that vanishing components do not fail the test).
    """
    import warnings
    if which not in ("C3", "C6"):
        raise DomainError("which must be 'C3' or 'C6'")
    v0 = problem.drive.as_vector()
    f = problem.c3 if which == "C3" else (lambda d: _c6_of_drive(problem, d))

    def jac(step):
        out = np.zeros(4)
        for i in range(4):
            h = step * abs(v0[i]) if v0[i] else step
            vp, vm = v0.copy(), v0.copy()
            vp[i] += h
            vm[i] -= h
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", dressing.RWAWarning)
                out[i] = v0[i] * (f(problem.drive.with_vector(vp)) - f(problem.drive.with_vector(vm))) / (2 * h)
        return out

    J1, J2 = jac(rel_step), jac(rel_step / 2)
    scale = float(np.max(np.abs(J2))) or 1.0
    bad = np.abs(J1 - J2) > ratio_tol * np.maximum(np.abs(J2), 1e-3 * scale)
    if np.any(bad):
        raise ConvergenceError(f"finite-difference Jacobian not converged: {J1} vs {J2}")
    return J2


@dataclass
class RobustnessReport:
    toggles: list
    C6: np.ndarray
    C9: np.ndarray
    C12: np.ndarray

    def variation(self, name):
        x = getattr(self, name)
        ref = x[0]
        if ref == 0:
            return float(np.max(np.abs(x - ref)))
        return float(np.max(np.abs(x - ref)) / abs(ref))


def phase_robustness(problem, drive_phases=((0.0, 0.0), (0.7, 0.0), (0.0, 1.3), (2.1, -0.9)),
                     azimuths=(0.0, 0.5, 1.9), r_grid=None, exact=True):
    """Dispersion coefficients under complex drive phases and azimuth rotations.

    The first entry of each toggle list is the reference configuration. Drive
    phases and the azimuth are varied separately, never jointly.
    """
    toggles = [("phase", ph) for ph in drive_phases] + [("phi", a) for a in azimuths[1:]]
    c6s, c9s, c12s = [], [], []
    for kind, val in toggles:
        phases = val if kind == "phase" else (0.0, 0.0)
        geom = PairGeometry(phi=val) if kind == "phi" else PairGeometry()
        if exact:
            scan, C6, P6 = scan_problem(problem, r_grid, geom, phases)
            fit = fit_dispersion(scan.r, scan.V, scan.overlap, C6, P6)
            c9s.append(fit.C9)
            c12s.append(fit.C12)
        else:
            _, basis = dressed_pair(problem, phases=phases, geometry=geom)
            C6, P6 = perturbative_c6(basis, geometry=geom)
            c9s.append(0.0)
            c12s.append(0.0)
        c6s.append(C6)
    return RobustnessReport(toggles, np.array(c6s), np.array(c9s), np.array(c12s))
