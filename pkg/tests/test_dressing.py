import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydmol import dressing
from rydmol.atomdata import fine_structure_ratios
from rydmol.dressing import (
    DriveConfig, DressedAtomState, RWAWarning, alpha_from_beta, c3_max, dipolar_residual,
    dressed_state, eigen_residual, molecule_atom_c3, nullifying_coefficients,
    six_level_hamiltonian, six_level_residual, solve_six_level, solve_three_level,
    three_level_hamiltonian,
)
from rydmol.errors import ConvergenceError, DomainError


def _draws(n, seed=7):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        alpha = rng.choice([-1, 1]) * 10 ** rng.uniform(-1.5, 1.5)
        M = 10 ** rng.uniform(-2, 1)
        omega = rng.choice([-1, 1]) * 10 ** rng.uniform(0, 3)
        delta = rng.uniform(-500, 500)
        pol = rng.choice(["pi", "sigma"])
        sign = int(rng.choice([-1, 1]))
        out.append((float(alpha), sign, float(omega), float(M), float(delta), str(pol)))
    return out


DRAWS = _draws(1000)


def _check_draw(alpha, sign, omega, M, delta, pol):
    cfg, state = solve_three_level(alpha, sign, omega, M, delta, pol)
    H = three_level_hamiltonian(cfg)
    v = state.coefficients
    scale = max(1.0, float(np.max(np.abs(H))))
    mu_pi = M
    mu_sig = 1.0
    null = dipolar_residual(state, mu_pi, mu_sig) / (mu_pi**2 * abs(state.normalized[1]) ** 2 + 1e-300)
    return cfg, state, eigen_residual(H, v, state.energy) / scale, abs(null)


def test_nullification_exact_on_random_draws():
    for draw in DRAWS:
        _, _, eig, null = _check_draw(*draw)
        assert null < 1e-12, draw
        assert eig < 1e-10, draw


def test_closed_form_matches_numeric_eigensolve():
    for draw in DRAWS:
        cfg, state, _, _ = _check_draw(*draw)
        w, V = np.linalg.eigh(three_level_hamiltonian(cfg))
        k = int(np.argmin(np.abs(w - state.energy)))
        scale = max(1.0, float(np.max(np.abs(w))))
        assert abs(w[k] - state.energy) <= 1e-9 * scale
        ref = state.normalized
        # same eigenvector up to phase unless the eigenvalue is degenerate
        others = np.delete(w, k)
        if np.min(np.abs(others - w[k])) > 1e-6 * scale:
            assert abs(abs(np.vdot(V[:, k], ref)) - 1.0) < 1e-9


def test_spot_value():
    cfg, state = solve_three_level(1.0, 1, 100.0, 1.0, 0.0, "pi")
    assert cfg.omega_sigma == pytest.approx(100 * math.sqrt(2), rel=1e-12)
    assert cfg.delta_sigma == pytest.approx(0.0, abs=1e-10)
    assert state.energy == pytest.approx(100 * math.sqrt(3), rel=1e-12)


def test_alpha_sign_invariance():
    for alpha, _, omega, M, delta, _ in DRAWS[:200]:
        c1, s1 = solve_three_level(alpha, 1, omega, M, delta, "sigma")
        c2, s2 = solve_three_level(-alpha, 1, -omega, M, delta, "sigma")
        scale = max(1.0, abs(c1.omega_pi), abs(c1.delta_pi), abs(s1.energy))
        assert abs(c2.delta_pi - c1.delta_pi) <= 1e-9 * scale
        assert abs(c2.delta_sigma - c1.delta_sigma) <= 1e-9 * scale
        assert abs(s2.energy - s1.energy) <= 1e-9 * scale
        assert abs(c2.omega_pi + c1.omega_pi) <= 1e-9 * scale


def test_branch_sign_flips_sigma_coupling():
    c1, s1 = solve_three_level(0.8, 1, 50.0, 0.3, 10.0, "pi")
    c2, s2 = solve_three_level(0.8, -1, 50.0, 0.3, 10.0, "pi")
    assert c2.omega_sigma == pytest.approx(-c1.omega_sigma)
    assert np.sign(s1.a_sigma) == -np.sign(s2.a_sigma)


def test_invalid_inputs():
    with pytest.raises(DomainError):
        solve_three_level(0.0, 1, 1.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        solve_three_level(1.0, 2, 1.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        solve_three_level(1.0, 1, 1.0, -1.0, 0.0)
    with pytest.raises(DomainError):
        DriveConfig(1.0, 0.0, 1.0, 0.0, polarization="x")
    with pytest.raises(DomainError):
        DriveConfig(float("nan"), 0.0, 1.0, 0.0)


def test_molecule_detuning_must_match_transitions():
    with pytest.raises(DomainError, match="detuning"):
        DriveConfig(1.0, 0.0, 1.0, 5.0, omega_mol=100.0, omega_sigma_t=90.0)
    DriveConfig(1.0, 0.0, 1.0, 10.0, omega_mol=100.0, omega_sigma_t=90.0)


def test_rwa_limits():
    with pytest.warns(RWAWarning):
        DriveConfig(12.0, 0.0, 1.0, 0.0, omega_pi_t=100.0)
    with pytest.raises(DomainError, match="RWA"):
        DriveConfig(20.0, 0.0, 1.0, 0.0, omega_pi_t=100.0)


def test_undriven_levels_are_bare():
    cfg = DriveConfig(0.0, 3.0, 0.0, -7.0)
    energies = sorted(s.energy for s in dressed_state(cfg))
    assert energies == pytest.approx(sorted([0.0, -3.0, 7.0]))


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-300, 300), st.floats(-300, 300))
def test_trace_identity(wp, ws, dp, ds):
    cfg = DriveConfig(wp, dp, ws, ds)
    total = sum(s.energy for s in dressed_state(cfg))
    assert total == pytest.approx(-(dp + ds), abs=1e-9 * (1 + abs(dp) + abs(ds) + abs(wp) + abs(ws)))


@given(st.floats(0.05, 5.0), st.floats(0.01, 3.0))
def test_beta_parametrization(alpha, M):
    beta = 1 / alpha - alpha
    assert alpha_from_beta(beta) == pytest.approx(alpha, rel=1e-12)
    a_pi, a_sig = nullifying_coefficients(alpha, 1, M)
    assert abs(a_sig) ** 2 == pytest.approx(2 * M * M * a_pi**2, rel=1e-12)


# --------------------------------------------------------------- C3


@given(st.floats(0.0, 20.0), st.floats(0.01, 3.0), st.sampled_from(["pi", "sigma"]))
@settings(max_examples=200)
def test_c3_symmetric_in_beta(beta, M, pol):
    def c3(b):
        a_pi, _ = nullifying_coefficients(alpha_from_beta(b), 1, M)
        return molecule_atom_c3(a_pi, 1.0, 100.0, M, pol)

    assert abs(c3(beta) - c3(-beta)) <= 1e-10 * abs(c3(0.0))


@pytest.mark.parametrize("pol", ["pi", "sigma"])
@pytest.mark.parametrize("M", [0.1, 1.0, 2.5])
def test_c3_maximum_at_beta_zero(pol, M):
    betas = np.linspace(-4, 4, 801)
    vals = [abs(molecule_atom_c3(nullifying_coefficients(alpha_from_beta(b), 1, M)[0], 1.0, 100.0, M, pol))
            for b in betas]
    k = int(np.argmax(vals))
    assert betas[k] == pytest.approx(0.0, abs=1e-12)
    assert vals[k] == pytest.approx(c3_max(1.0, 100.0, M, pol), rel=1e-10)


@given(st.floats(-10, 10), st.floats(0.01, 3.0))
def test_c3_beta_form(beta, M):
    # |C3| ~ 1/sqrt(4 + beta^2) across the nullifying family
    a_pi, _ = nullifying_coefficients(alpha_from_beta(beta), 1, M)
    ratio = molecule_atom_c3(a_pi, 1.0, 100.0, M, "pi") / c3_max(1.0, 100.0, M, "pi")
    assert abs(ratio) == pytest.approx(2 / math.sqrt(4 + beta * beta), rel=1e-10)


def test_c3_state_and_amplitude_forms_agree():
    cfg, state = solve_three_level(0.7, 1, -50.0, 0.2, 12.0, "sigma")
    a = molecule_atom_c3(state, 1.0, 100.0, 0.2, "sigma")
    b = molecule_atom_c3(state.a_pi, 1.0, 100.0, 0.2, "sigma")
    assert a == pytest.approx(b, rel=1e-12)


def test_c3_sign_convention():
    # |+> couples with the same sign as the atomic drive; sigma picks up -1/2
    _, state = solve_three_level(0.7, 1, -50.0, 0.2, 12.0, "sigma")
    assert molecule_atom_c3(state, 1.0, 100.0, 0.2, "pi") > 0
    assert molecule_atom_c3(state, 1.0, 100.0, 0.2, "sigma") < 0


# --------------------------------------------------------------- six levels


@pytest.fixture(scope="module")
def ratios(cs, nacs_triple):
    return fine_structure_ratios(*nacs_triple, cs)


def test_six_level_hamiltonian_layout(ratios):
    cfg = DriveConfig(10.0, 3.0, 20.0, -4.0)
    H = six_level_hamiltonian(cfg, ratios)
    assert np.allclose(H, H.T)
    assert H[0, 2] == 10.0 and H[0, 3] == 20.0
    assert H[1, 1] == pytest.approx(ratios.delta_r)
    assert H[4, 4] == pytest.approx(-3.0 + ratios.delta_pi)
    assert H[1, 4] == pytest.approx(ratios.g_pi_p * 10.0)


def test_six_level_weak_drive_limit(ratios):
    # at weak drive the fine-structure partners decouple and three levels suffice
    cfg, state = solve_three_level(0.8, 1, -0.01, ratios.M, 5.0, "sigma")
    six = solve_six_level(cfg, ratios, ramp_steps=5)
    d = six.drive
    assert d.delta_pi == pytest.approx(cfg.delta_pi, rel=1e-3)
    v = six.coefficients / six.coefficients[0]
    assert v[2] == pytest.approx(state.a_pi, rel=1e-3)


def test_six_level_solution_residuals(ratios):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RWAWarning)
        cfg, _ = solve_three_level(alpha_from_beta(-0.67), 1, -348.0, ratios.M, 22.5, "sigma")
        six = solve_six_level(cfg, ratios)
    assert six.eigen_residual < 1e-9
    assert six.null_residual < 1e-10
    H = six_level_hamiltonian(six.drive, ratios)
    assert eigen_residual(H, six.coefficients, six.energy) < 1e-9
    assert abs(six_level_residual(six.coefficients / six.coefficients[0], ratios)) < 1e-10 * ratios.mu_pi**2
    # only the free (pi) detuning moves
    assert six.drive.omega_pi == cfg.omega_pi
    assert six.drive.delta_sigma == cfg.delta_sigma


def test_six_level_failure_reports_progress(ratios):
    cfg, _ = solve_three_level(0.8, 1, -10.0, ratios.M, 5.0, "sigma")
    with pytest.raises(ConvergenceError) as err:
        solve_six_level(cfg, ratios, ramp_steps=3, max_iter=0)
    assert err.value.last is None
    with pytest.raises(DomainError):
        solve_six_level(cfg, ratios, ramp_steps=0)
