"""Microwave-dressed Rydberg state with nullified dipolar self-interaction.

Three bare states |r>, |r_pi>, |r_sigma> are coupled by a pi and a sigma drive.
In the rotating frame (frequencies in MHz)::

    H = [[0,        W_pi,     W_sigma ],
         [W_pi,    -D_pi,     0       ],
         [W_sigma,  0,       -D_sigma ]]

The dressed state |a> ~ |r> + a_pi|r_pi> + a_sigma|r_sigma> has no first-order
dipolar interaction with another |a> atom when
|a_pi|^2 mu_pi^2 = |a_sigma|^2 mu_sigma^2 / 2, i.e. a_sigma = +-sqrt(2) M a_pi
with M = |mu_pi / mu_sigma|. Writing a_pi = alpha / sqrt(1 + 2M^2) leaves the
overall scale alpha (or beta = 1/alpha - alpha) free.

Closed form used by :func:`solve_three_level`. The eigenvector conditions
H v = E v for v = (1, a_pi, a_sigma) read::

    W_pi a_pi + W_sigma a_sigma = E
    W_pi - D_pi a_pi = E a_pi
    W_sigma - D_sigma a_sigma = E a_sigma

With the molecule-coupled drive (W_p, D_p) given, the third (or second) line
fixes E = W_p / a_p - D_p, the first gives the other Rabi frequency
W_q = (E - W_p a_p) / a_q, and the remaining line gives D_q = W_q / a_q - E.
"""

from dataclasses import dataclass, replace
import math
import warnings

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConvergenceError, DomainError
from .units import DD_MHZ_UM3, debye_to_au

LABELS = ("r", "rpi", "rsigma")
SIX_LABELS = ("r", "r'", "rpi", "rsigma", "rpi'", "rsigma'")
RWA_WARN = 0.10
RWA_LIMIT = 0.15
STALL_TOL = 1e-10


class RWAWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DriveConfig:
    """Rydberg drive parameters (MHz) and the molecule drive they imply.

    ``omega_mol`` is the molecular transition frequency; ``omega_pi_t`` and
    ``omega_sigma_t`` are the atomic r->r_pi and r->r_sigma transition
    frequencies. When all are known the molecule-coupled detuning must obey
    D_p = omega_mol - omega_p_t.
    """

    omega_pi: float
    delta_pi: float
    omega_sigma: float
    delta_sigma: float
    omega_m: float = 0.0
    polarization: str = "sigma"
    omega_mol: float | None = None
    omega_pi_t: float | None = None
    omega_sigma_t: float | None = None

    def __post_init__(self):
        if self.polarization not in ("pi", "sigma"):
            raise DomainError(f"polarization must be 'pi' or 'sigma', not {self.polarization!r}")
        vals = (self.omega_pi, self.delta_pi, self.omega_sigma, self.delta_sigma, self.omega_m)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError("drive parameters must be finite")
        t_p = self.omega_pi_t if self.polarization == "pi" else self.omega_sigma_t
        if self.omega_mol is not None and t_p is not None:
            expect = self.omega_mol - t_p
            if abs(self.molecule_detuning - expect) > 1e-9 * max(abs(self.omega_mol), 1.0):
                raise DomainError(
                    f"molecule-coupled detuning {self.molecule_detuning} != omega_m - omega_p = {expect}")
        for w, t, name in ((self.omega_pi, self.omega_pi_t, "pi"),
                           (self.omega_sigma, self.omega_sigma_t, "sigma")):
            if t:
                ratio = abs(w / t)
                if ratio > RWA_LIMIT:
                    raise DomainError(f"{name} Rabi frequency is {ratio:.3f} of its transition (RWA limit {RWA_LIMIT})")
                if ratio > RWA_WARN:
                    warnings.warn(f"{name} Rabi frequency is {ratio:.3f} of its transition frequency",
                                  RWAWarning, stacklevel=3)

    @property
    def molecule_detuning(self):
        return self.delta_pi if self.polarization == "pi" else self.delta_sigma

    def as_vector(self):
        """(W_pi, W_sigma, D_pi, D_sigma), the ordering used for Jacobians."""
        return np.array([self.omega_pi, self.omega_sigma, self.delta_pi, self.delta_sigma])

    def with_vector(self, v):
        return replace(self, omega_pi=float(v[0]), omega_sigma=float(v[1]),
                       delta_pi=float(v[2]), delta_sigma=float(v[3]),
                       omega_mol=None, omega_pi_t=None, omega_sigma_t=None)


@dataclass(frozen=True)
class DressedAtomState:
    """Eigenvector (leading |r> component set to 1 where nonzero) and quasi-energy."""

    coefficients: np.ndarray
    energy: float
    label: str = "r"
    alpha: float | None = None
    degenerate: bool = False

    @property
    def beta(self):
        return None if self.alpha is None else 1.0 / self.alpha - self.alpha

    @property
    def normalized(self):
        v = np.asarray(self.coefficients, dtype=complex)
        return v / np.linalg.norm(v)

    @property
    def a_pi(self):
        return self.coefficients[1]

    @property
    def a_sigma(self):
        return self.coefficients[2]


def three_level_hamiltonian(cfg):
    return np.array([[0.0, cfg.omega_pi, cfg.omega_sigma],
                     [cfg.omega_pi, -cfg.delta_pi, 0.0],
                     [cfg.omega_sigma, 0.0, -cfg.delta_sigma]])


def eigen_residual(H, v, E):
    v = np.asarray(v)
    return float(np.linalg.norm(H @ v - E * v) / np.linalg.norm(v))


def _label_states(V, labels):
    # unique labels by maximal weight assignment
    rows, cols = linear_sum_assignment(-np.abs(V) ** 2)
    out = [None] * V.shape[1]
    for bare, k in zip(rows, cols):
        out[k] = labels[bare]
    return out


def dressed_state(cfg):
    """All three eigenpairs of the three-level drive Hamiltonian."""
    w, V = np.linalg.eigh(three_level_hamiltonian(cfg))
    labels = _label_states(V, LABELS)
    scale = max(1.0, float(np.max(np.abs(w))))
    out = []
    for k in range(3):
        v = V[:, k]
        if abs(v[0]) > 1e-14:
            v = v / v[0]
        degen = any(abs(w[k] - w[j]) < 1e-9 * scale for j in range(3) if j != k)
        out.append(DressedAtomState(v, float(w[k]), labels[k], degenerate=degen))
    return out


def dipolar_residual(state, mu_pi, mu_sigma):
    """|a_pi|^2 mu_pi^2 - |a_sigma|^2 mu_sigma^2 / 2 on the normalized vector."""
    v = state.normalized if isinstance(state, DressedAtomState) else np.asarray(state) / np.linalg.norm(state)
    return float(abs(v[1]) ** 2 * mu_pi**2 - abs(v[2]) ** 2 * mu_sigma**2 / 2.0)


def nullifying_coefficients(alpha, sign, M):
    a_pi = alpha / math.sqrt(1.0 + 2.0 * M * M)
    return a_pi, sign * math.sqrt(2.0) * M * a_pi


def solve_three_level(alpha, sign, omega_drive, M, delta_fixed, polarization="sigma"):
    """Drive parameters making v = (1, a_pi, sign*sqrt(2)*M*a_pi) an exact eigenvector.

    ``omega_drive`` and ``delta_fixed`` are the Rabi frequency and detuning of
    the molecule-coupled drive (polarization ``polarization``); the other
    drive's Rabi frequency and detuning are returned.
    """
    if alpha == 0 or not math.isfinite(alpha):
        raise DomainError("alpha must be finite and nonzero (alpha = 0 is the bare |r> state)")
    if not M > 0:
        raise DomainError("M must be positive")
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    a_pi, a_sig = nullifying_coefficients(alpha, sign, M)
    if polarization == "sigma":
        W_s, D_s = omega_drive, delta_fixed
        E = W_s / a_sig - D_s
        W_p = (E - W_s * a_sig) / a_pi
        D_p = W_p / a_pi - E
    elif polarization == "pi":
        W_p, D_p = omega_drive, delta_fixed
        E = W_p / a_pi - D_p
        W_s = (E - W_p * a_pi) / a_sig
        D_s = W_s / a_sig - E
    else:
        raise DomainError(f"unknown polarization {polarization!r}")
    cfg = DriveConfig(W_p, D_p, W_s, D_s, polarization=polarization)
    state = DressedAtomState(np.array([1.0, a_pi, a_sig]), E, "r", alpha=alpha)
    return cfg, state


def alpha_from_beta(beta):
    """Positive root of 1/alpha - alpha = beta."""
    return (-beta + math.sqrt(beta * beta + 4.0)) / 2.0


C_POL = {"pi": 1.0, "sigma": -0.5}


def molecule_atom_c3(state, mu_m, mu_pi, M, polarization="sigma"):
    """Atom-molecule C3 (MHz um^3) seen by the molecule in |+>; |-> has the opposite sign.

    C3 = c_p mu_m |mu_p| a_p / N^2 with c_pi = 1, c_sigma = -1/2 and N^2 the
    squared norm of (1, a_pi, a_sigma). On the nullifying branch
    a_sigma = sqrt(2) M a_pi this is sgn(c_p) |c_p|^(1/2) mu_m |mu_pi| a_pi / N^2.
    |+> is the +Omega_m eigenstate of the molecular drive, and the atom and
    molecule drives derive from one field, so Omega_m / Omega_p > 0.
    ``mu_m`` in Debye, ``mu_pi`` in e*a0.
    """
    if isinstance(state, DressedAtomState):
        v = np.asarray(state.coefficients) / state.coefficients[0]
    else:
        a_pi = state
        v = np.array([1.0, a_pi, math.sqrt(2.0) * M * a_pi])
    n2 = float(np.sum(np.abs(v) ** 2))
    mu_p, a_p = (abs(mu_pi), v[1]) if polarization == "pi" else (abs(mu_pi) / M, v[2])
    val = C_POL[polarization] * debye_to_au(mu_m) * mu_p * a_p / n2
    return float(np.real(val)) * DD_MHZ_UM3


def c3_max(mu_m, mu_pi, M, polarization="sigma"):
    """Largest |C3| over the nullifying family, reached at beta = 0."""
    c = abs(C_POL[polarization])
    return math.sqrt(c) * debye_to_au(mu_m) * abs(mu_pi) / (2.0 * math.sqrt(1.0 + 2.0 * M * M)) * DD_MHZ_UM3


# ---------------------------------------------------------------- six levels


def six_level_hamiltonian(cfg, ratios):
    """Rotating-frame Hamiltonian on (r, r', r_pi, r_sigma, r_pi', r_sigma').

    Primed levels sit at their fine-structure offsets from the unprimed ones;
    absent partners (S1/2) are decoupled by zero ratios.
    """
    f_pi, f_s, g_pi, g_s, g_pp, g_sp = ratios.as_array()
    d_r = ratios.delta_r or 0.0
    d_pi = ratios.delta_pi or 0.0
    d_s = ratios.delta_sigma or 0.0
    Wp, Ws = cfg.omega_pi, cfg.omega_sigma
    H = np.diag([0.0, d_r, -cfg.delta_pi, -cfg.delta_sigma,
                 -cfg.delta_pi + d_pi, -cfg.delta_sigma + d_s])
    for i, j, v in ((0, 2, Wp), (0, 3, Ws), (0, 4, f_pi * Wp), (0, 5, f_s * Ws),
                    (1, 2, g_pi * Wp), (1, 3, g_s * Ws), (1, 4, g_pp * Wp), (1, 5, g_sp * Ws)):
        H[i, j] = H[j, i] = v
    return H


def effective_couplings(v, ratios):
    """(S_pi, S_sigma): the amplitudes entering the six-level nullification condition."""
    f_pi, f_s, g_pi, g_s, g_pp, g_sp = ratios.as_array()
    a, ap, asg, app, asp = v[1] / v[0], v[2] / v[0], v[3] / v[0], v[4] / v[0], v[5] / v[0]
    s_pi = ap + f_pi * app + a * (g_pi * ap + g_pp * app)
    s_sig = asg + f_s * asp + a * (g_s * asg + g_sp * asp)
    return s_pi, s_sig


def six_level_residual(v, ratios):
    """|S_pi|^2 mu_pi^2 - |S_sigma|^2 mu_sigma^2 / 2 with v normalized to v[0] = 1."""
    s_pi, s_sig = effective_couplings(v, ratios)
    return float(abs(s_pi) ** 2 * ratios.mu_pi**2 - abs(s_sig) ** 2 * ratios.mu_sigma**2 / 2.0)


@dataclass(frozen=True)
class SixLevelConfig:
    drive: DriveConfig
    ratios: object
    coefficients: np.ndarray
    energy: float
    eigen_residual: float
    null_residual: float
    steps: int = 0

    @property
    def normalized(self):
        return self.coefficients / np.linalg.norm(self.coefficients)


def _track(H, ref):
    w, V = np.linalg.eigh(H)
    k = int(np.argmax(np.abs(V.T @ ref)))
    return w[k], V[:, k], float(abs(V[:, k] @ ref))


def _scaled(cfg, lam, free, offset):
    v = cfg.as_vector() * lam
    v[2 if free == "pi" else 3] += offset
    return cfg.with_vector(v)


def solve_six_level(target, ratios, ramp_steps=50, reference=None, tol=1e-12, max_iter=100):
    """Continue a three-level solution to the six-level (fine-structure) problem.

    All four drive parameters are ramped together from a small fraction of
    ``target`` up to ``target``. At each step only the detuning of the drive
    that is not coupled to the molecule is adjusted, by damped Newton on the
    nullification residual of the eigenvector tracked by overlap.
    """
    if ramp_steps < 1:
        raise DomainError("ramp_steps must be >= 1")
    free = "sigma" if target.polarization == "pi" else "pi"
    if reference is None:
        # the three-level eigenvector closest to nullification
        three = min(dressed_state(target),
                    key=lambda st: abs(dipolar_residual(st, ratios.mu_pi, ratios.mu_sigma)))
        reference = three.coefficients
    ref = np.zeros(6)
    ref[[0, 2, 3]] = np.real(np.asarray(reference))[:3]
    ref /= np.linalg.norm(ref)
    scale = ratios.mu_pi**2
    lams = np.linspace(1.0 / ramp_steps, 1.0, ramp_steps)
    offset = 0.0
    last_ok = None

    def resid(lam, off, ref):
        cfg = _scaled(target, lam, free, off)
        E, vec, ov = _track(six_level_hamiltonian(cfg, ratios), ref)
        vec = vec / vec[0]
        return six_level_residual(vec, ratios) / scale, E, vec, cfg

    for step, lam in enumerate(lams, 1):
        r, E, vec, cfg = resid(lam, offset, ref)
        width = max(abs(target.delta_pi), abs(target.delta_sigma), 1.0)
        for it in range(max_iter):
            if abs(r) < tol:
                break
            h = 1e-6 * width
            rp = resid(lam, offset + h, ref)[0]
            rm = resid(lam, offset - h, ref)[0]
            deriv = (rp - rm) / (2 * h)
            if deriv == 0 or not math.isfinite(deriv):
                raise ConvergenceError(f"flat nullification residual at ramp step {step}", last_ok)
            stepd = -r / deriv
            damp = 1.0
            while damp > 1e-4:
                rn, En, vn, cn = resid(lam, offset + damp * stepd, ref)
                if abs(rn) < abs(r):
                    break
                damp /= 2
            else:
                if abs(r) < STALL_TOL:  # at the rounding floor
                    break
                raise ConvergenceError(f"line search failed at ramp step {step} (residual {r:.3e})", last_ok)
            offset += damp * stepd
            r, E, vec, cfg = rn, En, vn, cn
        else:
            raise ConvergenceError(f"no convergence at ramp step {step} (lambda={lam:.3f})", last_ok)
        ref = vec / np.linalg.norm(vec)
        last_ok = (step, float(lam), offset)
    H = six_level_hamiltonian(cfg, ratios)
    drive = replace(target, **{("delta_pi" if free == "pi" else "delta_sigma"):
                               (target.delta_pi if free == "pi" else target.delta_sigma) + offset})
    return SixLevelConfig(drive, ratios, vec, float(E), eigen_residual(H, vec, E),
                          abs(r), ramp_steps)


def six_level_c3(six, mu_m, polarization="sigma"):
    """Atom-molecule C3 (MHz um^3) of a six-level dressed state, |+> molecule.

    Same convention as :func:`molecule_atom_c3`, with a_p replaced by the
    effective amplitude S_p of the nullification condition.
    """
    v = six.coefficients / six.coefficients[0]
    n2 = float(np.sum(np.abs(v) ** 2))
    s_pi, s_sig = effective_couplings(v, six.ratios)
    if polarization == "pi":
        mu_p, s_p = abs(six.ratios.mu_pi), s_pi
    else:
        mu_p, s_p = abs(six.ratios.mu_sigma), s_sig
    val = C_POL[polarization] * debye_to_au(mu_m) * mu_p * s_p / n2
    return float(np.real(val)) * DD_MHZ_UM3
