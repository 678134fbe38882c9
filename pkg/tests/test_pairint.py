import math
import types
import warnings

import numpy as np
import pytest
import scipy.sparse
from hypothesis import given, settings
from hypothesis import strategies as st

from rydmol.dressing import RWAWarning
from rydmol.errors import DegeneracyError, DomainError
from rydmol.pairint import (
    DispersionSet, PairBasis, PairGeometry, PairTruncation, beta_scan, build_pair_basis,
    dd_tensor, dipole_dipole_operator, dressed_pair, excess_interaction, exact_scan,
    first_order_c3, fit_dispersion, perturbative_c6, r_crit,
)
from rydmol.scenario import Problem, load_scenario

NACS_BETA = -0.6745501708984375


def _toy_basis(energy, aa=0):
    n = len(energy)
    atom = types.SimpleNamespace(names=[f"s{i}" for i in range(n)])
    z = np.arange(n)
    return PairBasis(atom, z, z, np.zeros((n, 2), int), np.asarray(energy, float), aa, 100.0)


@pytest.fixture(scope="module")
def nacs():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RWAWarning)
        prob = Problem(load_scenario("scenarios/nacs.scn"), beta=NACS_BETA)
        atom, basis = dressed_pair(prob)
    return prob, atom, basis


# ---------------------------------------------------------------- toy oracle


def test_toy_second_order_oracle():
    # |aa> coupled to two states: C6 = -sum |V|^2 / E, P6 = sum |V|^2 / E^2
    basis = _toy_basis([0.0, 50.0, -20.0])
    V = scipy.sparse.csr_matrix(np.array([[0, 3.0, 2.0j], [3.0, 0, 1.0], [-2.0j, 1.0, 0]]))
    C6, P6 = perturbative_c6(basis, V)
    assert C6 == pytest.approx(-9 / 50 + 4 / 20, rel=1e-14)
    assert P6 == pytest.approx(9 / 2500 + 4 / 400, rel=1e-14)


def test_zero_couplings_give_zero():
    basis = _toy_basis([0.0, 50.0, -20.0])
    assert perturbative_c6(basis, scipy.sparse.csr_matrix((3, 3))) == (0.0, 0.0)


def test_degenerate_state_is_named():
    basis = _toy_basis([0.0, 1e-9, -20.0])
    V = scipy.sparse.csr_matrix(np.array([[0, 1.0, 1.0], [1.0, 0, 0], [1.0, 0, 0]]))
    with pytest.raises(DegeneracyError, match="s1"):
        perturbative_c6(basis, V)


def test_toy_exact_scan_matches_dense():
    basis = _toy_basis([0.0, 50.0, -20.0])
    V = scipy.sparse.csr_matrix(np.array([[0, 30.0, 20.0], [30.0, 0, 5.0], [20.0, 5.0, 0]]))
    r = np.geomspace(10, 1, 15)
    scan = exact_scan(r, basis, V)
    for ri, e in zip(r, scan.V):
        w = np.linalg.eigvalsh(np.diag(basis.energy) + V.toarray() / ri**3)
        assert np.min(np.abs(w - e)) < 1e-10
    # large r recovers C6 / r^6
    C6, _ = perturbative_c6(basis, V)
    assert scan.V[0] == pytest.approx(C6 / r[0] ** 6, rel=1e-2)


def test_descending_grid_required():
    basis = _toy_basis([0.0, 50.0])
    V = scipy.sparse.csr_matrix(np.array([[0, 1.0], [1.0, 0]]))
    with pytest.raises(DomainError):
        exact_scan([1.0, 2.0], basis, V)


# ---------------------------------------------------------------- angular part


def test_dd_tensor_hermitian_structure():
    W = dd_tensor(0.7, 1.3)
    assert np.allclose(W, W.T)
    # theta = 0: W is diagonal-antidiagonal with W_00 = -2
    W0 = dd_tensor(0.0, 0.0)
    assert W0[1, 1] == pytest.approx(-2.0)
    assert W0[0, 2] == pytest.approx(-1.0) and W0[2, 0] == pytest.approx(-1.0)


def test_magic_angle_kills_pi_pi():
    W = dd_tensor(math.acos(1 / math.sqrt(3)), 0.3)
    assert abs(W[1, 1]) < 1e-14


# ---------------------------------------------------------------- real atom


def test_truncation_validation():
    with pytest.raises(DomainError):
        PairTruncation(3, 70, 60, 1000.0)
    with pytest.raises(DomainError):
        PairTruncation(3, 60, 70, -1.0)
    with pytest.raises(DomainError):
        PairGeometry(r_aa=0.0)


def test_dressed_state_is_nullified(nacs):
    _, _, basis = nacs
    V = dipole_dipole_operator(basis)
    assert abs(first_order_c3(basis, V)) < 1e-9 * abs(V).max()


def test_operator_hermitian(nacs):
    _, _, basis = nacs
    V = dipole_dipole_operator(basis, PairGeometry(theta=1.1, phi=0.4))
    assert abs(V - V.conj().T).max() < 1e-12 * abs(V).max()


def test_aa_retained_and_basis_grows_with_cutoff(nacs):
    prob, atom, basis = nacs
    assert basis.energy[basis.aa] == 0.0
    small = PairTruncation(3, 60, 67, 4000.0)
    b_small = build_pair_basis(small, atom)
    assert len(b_small) < len(basis)
    assert b_small.energy[b_small.aa] == 0.0


def test_r6_scaling_of_exact_tail(nacs):
    _, _, basis = nacs
    V = dipole_dipole_operator(basis)
    C6, _ = perturbative_c6(basis, V)
    # NaCs at its nullifying beta has |C6| tiny; check the operator scales as 1/r^3 instead
    H1 = V / 10.0**3
    H2 = V / 20.0**3
    assert abs(H1 - 8 * H2).max() < 1e-12 * abs(H1).max()
    assert abs(C6) < 10.0


def test_gauge_invariance_of_c6(nacs):
    prob, _, basis = nacs
    ref = perturbative_c6(basis)[0]
    scale = 1e3  # typical |C6| over the beta window, MHz um^6
    for ph in ((0.7, 0.0), (0.0, 1.3), (2.1, -0.9)):
        _, b = dressed_pair(prob, phases=ph)
        assert abs(perturbative_c6(b)[0] - ref) < 1e-9 * scale


def test_beta_scan_detects_crossing():
    scn = load_scenario("scenarios/nacs.scn")
    scan = beta_scan(np.linspace(-0.70, -0.65, 3), scn)
    assert len(scan.crossings) == 1
    c = scan.crossings[0]
    assert c.beta == pytest.approx(NACS_BETA, abs=1e-6)
    assert abs(c.C6) < 1e-3 * scan.max_abs_c6


# ---------------------------------------------------------------- fits


def test_synthetic_fit_recovers_coefficients():
    r = np.geomspace(12, 3, 40)
    A, B, P = 163e3, -105e6, 3.49**12
    V = A / r**9 + B / r**12
    ov = 1 - P / r**12
    f = fit_dispersion(r, V, ov, max_deficit=1.0)
    assert f.C9 == pytest.approx(A, rel=1e-9)
    assert f.C12 == pytest.approx(B, rel=1e-9)
    assert f.P12 == pytest.approx(P, rel=1e-9)


@given(st.floats(1e3, 1e6), st.floats(-1e8, 1e8))
@settings(max_examples=30, deadline=None)
def test_fit_is_exact_on_model_data(A, B):
    r = np.geomspace(15, 4, 25)
    V = A / r**9 + B / r**12
    f = fit_dispersion(r, V, np.ones_like(r), min_abs_v=0.0)
    assert f.C9 == pytest.approx(A, rel=1e-7, abs=1e-6 * abs(B) / 4**3)
    assert f.C12 == pytest.approx(B, rel=1e-6, abs=1e-6 * A * 4**3)


def test_fit_needs_points():
    r = np.geomspace(12, 3, 4)
    with pytest.raises(DomainError):
        fit_dispersion(r, 1 / r**9, np.ones(4))


def test_fit_rejects_ill_conditioned_design():
    r = np.full(10, 5.0)
    with pytest.raises(DomainError, match="ill-conditioned"):
        fit_dispersion(r, 1 / r**9, np.ones(10), min_abs_v=0.0)


def test_excess_interaction_arithmetic():
    # 0.1% error on a 175 GHz um^6 sensitivity at 4 um
    assert excess_interaction(175e3, 1e-3, 4.0) == pytest.approx(175e3 * 1e-3 / 4**6)
    with pytest.raises(DomainError):
        excess_interaction(1.0, 1e-3, 0.0)


def test_r_crit_and_dispersion_set():
    assert r_crit(2.06**6) == pytest.approx(2.06 / 0.05 ** (1 / 6))
    d = DispersionSet(C9=163e3, C12=-105e6, P6=2.06**6, P12=3.49**12)
    assert float(d.interaction(6.0)) == pytest.approx(163e3 / 6**9 - 105e6 / 6**12)
    assert float(d.overlap_deficit(4.0)) > 0
    with pytest.raises(DomainError):
        DispersionSet(P6=-1.0)
