"""Scenario files and assembly of a complete dressed atom-molecule problem.

A scenario is a plain ``key = value`` file; ``#`` starts a comment. Levels are
written ``n L J mJ`` and rotor states ``N mN``. Frequencies are MHz, times us,
distances um. See ``scenarios/`` for complete examples.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
import math
from pathlib import Path

import numpy as np

from . import dressing
from .atomdata import (RydbergLevel, QuantumDefectTable, fine_structure_ratios,
                       level_energy, transition_dipole)
from .errors import DomainError
from .units import debye_to_au
from .molecule import (MoleculeSpec, RotorState, auxiliary_pi_dressing,
                       qubit_states)
from .pairint import PairTruncation


def _level(text):
    parts = text.split()
    if len(parts) != 4:
        raise ValueError("expected 'n L J mJ'")
    n, L = int(parts[0]), int(parts[1])
    return RydbergLevel(n, L, float(_frac(parts[2])), float(_frac(parts[3])))


def _frac(s):
    if "/" in s:
        a, b = s.split("/")
        return float(a) / float(b)
    return float(s)


def _rotor(text):
    parts = text.split()
    if len(parts) != 2:
        raise ValueError("expected 'N mN'")
    return RotorState(int(parts[0]), int(parts[1]))


def _beta(text):
    return None if text.strip().lower() == "auto" else float(text)


def _sign(text):
    v = int(text)
    if v not in (1, -1):
        raise ValueError("must be +1 or -1")
    return v


def _positive(conv):
    def f(text):
        v = conv(text)
        if not v > 0:
            raise ValueError("must be positive")
        return v
    return f


def _nonneg_float(text):
    v = float(text)
    if v < 0:
        raise ValueError("must be non-negative")
    return v


# key -> (converter, default); a default of ... marks a required key
_KEYS = {
    "name": (str, ...),
    "species": (str, ...),
    "molecule": (str, ...),
    "r": (_level, ...),
    "rpi": (_level, ...),
    "rsigma": (_level, ...),
    "lower": (_rotor, ...),
    "upper": (_rotor, ...),
    "rabi_fraction": (_positive(float), 0.1),
    "rabi_sign": (_sign, -1),
    "beta": (_beta, None),
    "branch": (_sign, 1),
    "six_level": (lambda s: s.strip().lower() in ("1", "yes", "true"), True),
    "ramp_steps": (_positive(int), 50),
    "aux_drive": (_nonneg_float, 0.0),
    "aux_polarization": (str, "pi"),
    "lmax": (int, 3),
    "nmin": (int, ...),
    "nmax": (int, ...),
    "cutoff": (_positive(float), ...),
    "beta_min": (float, -2.0),
    "beta_max": (float, 2.0),
    "beta_points": (_positive(int), 41),
    "r_min": (_positive(float), 0.3),
    "r_max": (_positive(float), 3.0),
    "r_points": (_positive(int), 60),
    "lifetime": (_positive(float), ...),
    "r_am": (_positive(float), 1.0),
    "n_molecules": (_positive(int), 4),
    "spacing": (_positive(float), 1.0),
    "echo_classes": (_positive(int), 2),
    "c3_am": (float, None),
    "c6_aa": (float, 0.0),
    "c9_aa": (float, None),
    "c12_aa": (float, None),
    "defects_file": (str, None),
    "molecules_file": (str, None),
}


@dataclass(frozen=True)
class Scenario:
    name: str
    species: str
    molecule: str
    r: RydbergLevel
    rpi: RydbergLevel
    rsigma: RydbergLevel
    lower: RotorState
    upper: RotorState
    nmin: int
    nmax: int
    cutoff: float
    lifetime: float
    rabi_fraction: float = 0.1
    rabi_sign: int = -1
    beta: float | None = None
    branch: int = 1
    six_level: bool = True
    ramp_steps: int = 50
    aux_drive: float = 0.0
    aux_polarization: str = "pi"
    lmax: int = 3
    beta_min: float = -2.0
    beta_max: float = 2.0
    beta_points: int = 41
    r_min: float = 0.3
    r_max: float = 3.0
    r_points: int = 60
    r_am: float = 1.0
    n_molecules: int = 4
    spacing: float = 1.0
    echo_classes: int = 2
    c3_am: float | None = None
    c6_aa: float = 0.0
    c9_aa: float | None = None
    c12_aa: float | None = None
    defects_file: str | None = None
    molecules_file: str | None = None
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.beta_min >= self.beta_max:
            raise DomainError("beta_min must be below beta_max")
        if self.r_min >= self.r_max:
            raise DomainError("r_min must be below r_max")
        if self.aux_polarization not in ("pi", "sigma"):
            raise DomainError("aux_polarization must be 'pi' or 'sigma'")

    @property
    def truncation(self):
        return PairTruncation(self.lmax, self.nmin, self.nmax, self.cutoff)

    @property
    def triple(self):
        return (self.r, self.rpi, self.rsigma)

    def with_beta(self, beta):
        return replace(self, beta=beta)


def parse_scenario(text, source="<string>"):
    """Parse scenario text; errors name the offending line."""
    values = {}
    where = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise DomainError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise DomainError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _KEYS[key][0](val)
        except (ValueError, DomainError) as exc:
            raise DomainError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
        where[key] = lineno
    missing = [k for k, (_, d) in _KEYS.items() if d is ... and k not in values]
    if missing:
        raise DomainError(f"{source}: missing required keys: {', '.join(missing)}")
    try:
        return Scenario(**values, source=source)
    except DomainError as exc:
        raise DomainError(f"{source}: {exc}") from None


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DomainError(f"cannot read scenario {path}: {exc.strerror}") from None
    return parse_scenario(text, str(path))


class Problem:
    """All derived quantities of a scenario: atom data, molecule and dressing.

    The molecule-coupled drive is the sigma drive: its frequency is fixed by
    omega_m, its Rabi frequency is ``rabi_sign * rabi_fraction * omega_m`` and
    its detuning omega_m - omega_sigma. The pi drive follows from beta.
    """

    def __init__(self, scenario, beta=None):
        self.scenario = scenario
        s = scenario
        self.defects = QuantumDefectTable.load(s.species, s.defects_file)
        self.spec = MoleculeSpec.load(s.molecule, s.molecules_file)
        enc = qubit_states(self.spec, s.lower, s.upper)
        if s.aux_drive:
            enc = auxiliary_pi_dressing(self.spec, enc, s.aux_drive, s.aux_polarization)
        self.encoding = enc
        q = int(round(s.rsigma.mJ - s.r.mJ))
        self.ratios = fine_structure_ratios(s.r, s.rpi, s.rsigma, self.defects, q_sigma=q)
        e_r = level_energy(s.r, self.defects)
        self.omega_pi_t = level_energy(s.rpi, self.defects) - e_r
        self.omega_sigma_t = level_energy(s.rsigma, self.defects) - e_r
        self.beta = s.beta if beta is None else beta
        if self.beta is None:
            self.beta = auto_beta(s)

    @property
    def M(self):
        return self.ratios.M

    @property
    def mu_pi(self):
        return self.ratios.mu_pi

    @property
    def mu_sigma(self):
        return self.ratios.mu_sigma

    @cached_property
    def three_level(self):
        s = self.scenario
        w_m = self.encoding.omega_m
        omega = s.rabi_sign * s.rabi_fraction * w_m
        delta = w_m - self.omega_sigma_t
        alpha = dressing.alpha_from_beta(self.beta)
        cfg, state = dressing.solve_three_level(alpha, s.branch, omega, self.M, delta, "sigma")
        # transition frequencies enable the detuning and RWA checks
        cfg = dressing.DriveConfig(cfg.omega_pi, cfg.delta_pi, cfg.omega_sigma, cfg.delta_sigma,
                                   polarization="sigma", omega_mol=w_m,
                                   omega_pi_t=self.omega_pi_t, omega_sigma_t=self.omega_sigma_t)
        return cfg, state

    @cached_property
    def six_level(self):
        cfg, state = self.three_level
        return dressing.solve_six_level(cfg, self.ratios, self.scenario.ramp_steps,
                                        reference=state.coefficients)

    @property
    def drive(self):
        """Final drive: six-level solution if enabled, else the three-level one."""
        if self.scenario.six_level:
            return self.six_level.drive
        return self.three_level[0]

    @property
    def reference(self):
        """Bare-amplitude vector of |a> used to pick it among dressed states."""
        if self.scenario.six_level:
            return self.six_level.coefficients
        return self.three_level[1].coefficients

    @property
    def omega_m(self):
        """Molecular Rabi frequency (MHz) of the sigma field: Omega_sigma mu_m / mu_sigma."""
        return self.drive.omega_sigma * debye_to_au(self.encoding.mu_m) / self.mu_sigma

    def c3(self, drive=None):
        """Atom-molecule C3 (MHz um^3) for the |+> molecular state."""
        mu_m = self.encoding.mu_m
        if not self.scenario.six_level:
            if drive is None:
                return dressing.molecule_atom_c3(self.three_level[1], mu_m, self.mu_pi, self.M)
            st = _tracked_three(drive, self.three_level[1].coefficients)
            return dressing.molecule_atom_c3(st, mu_m, self.mu_pi, self.M)
        six = self.six_level
        if drive is not None:
            six = _tracked_six(drive, self.ratios, six.coefficients)
        return dressing.six_level_c3(six, mu_m, "sigma")

    def floquet_atom(self, drive=None, phases=(0.0, 0.0)):
        from .pairint import floquet_atom
        drive = drive or self.drive
        return floquet_atom(self.scenario.triple, drive, self.defects, self.scenario.truncation,
                            ratios=self.ratios if self.scenario.six_level else None,
                            six=self.scenario.six_level, reference=self.reference, phases=phases)


def _tracked_three(drive, ref):
    H = dressing.three_level_hamiltonian(drive)
    w, V = np.linalg.eigh(H)
    k = int(np.argmax(np.abs(V.T @ np.asarray(ref) / np.linalg.norm(ref))))
    v = V[:, k] / V[0, k]
    return dressing.DressedAtomState(v, float(w[k]))


def _tracked_six(drive, ratios, ref):
    H = dressing.six_level_hamiltonian(drive, ratios)
    w, V = np.linalg.eigh(H)
    k = int(np.argmax(np.abs(V.T @ np.asarray(ref) / np.linalg.norm(ref))))
    v = V[:, k]
    return dressing.SixLevelConfig(drive, ratios, v, float(w[k]),
                                   dressing.eigen_residual(H, v, w[k]),
                                   abs(dressing.six_level_residual(v / v[0], ratios)), 0)


_AUTO_CACHE = {}


def auto_beta_scan(scenario, threads=1):
    """(Crossing, BetaScan) behind ``beta = auto``, cached per scenario."""
    from .pairint import nullifying_beta
    key = replace(scenario, beta=None)
    if key not in _AUTO_CACHE:
        _AUTO_CACHE[key] = nullifying_beta(key, threads)
    return _AUTO_CACHE[key]


def auto_beta(scenario, threads=1):
    """Nullifying beta for ``beta = auto``: the C6 zero with the smallest r_crit."""
    return auto_beta_scan(scenario, threads)[0].beta
