import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydmol.errors import DomainError
from rydmol.molecule import (
    MoleculeSpec, RotorState, auxiliary_pi_dressing, count_overlaps, hyperfine_basis,
    hyperfine_hamiltonian, nuclear_overlap_analysis, qubit_states, read_molecule_file,
)


@pytest.fixture(scope="module")
def nacs():
    return MoleculeSpec.load("NaCs")


@pytest.fixture(scope="module")
def rbcs():
    return MoleculeSpec.load("RbCs")


def test_constants_file_units(rbcs):
    assert rbcs.B0 == pytest.approx(490.173994)
    assert rbcs.eQq1 == pytest.approx(-0.80929)  # kHz column -> MHz
    assert rbcs.c4 == pytest.approx(19019.0e-6)  # Hz column -> MHz


def test_constants_file_errors(tmp_path):
    f = tmp_path / "m.dat"
    f.write_text("X 1 2 3\n")
    with pytest.raises(DomainError, match="line 1"):
        read_molecule_file(f)
    with pytest.raises(DomainError):
        MoleculeSpec("bad", -1.0, 1.0, 0.5, 0.5)


def test_invalid_rotor():
    with pytest.raises(DomainError):
        RotorState(1, 2)


def test_mu_ground_to_stretched(nacs):
    enc = qubit_states(nacs, RotorState(0, 0), RotorState(1, 1))
    assert enc.mu_m == pytest.approx(nacs.d / math.sqrt(3), rel=1e-14)
    assert enc.omega_m == pytest.approx(2 * nacs.B0)
    assert enc.polarization == "sigma"


def test_rbcs_encoding(rbcs):
    enc = qubit_states(rbcs, RotorState(1, 1), RotorState(2, 2))
    assert enc.mu_m == pytest.approx(rbcs.d * math.sqrt(2 / 5), rel=1e-14)
    assert enc.omega_m == pytest.approx(4 * rbcs.B0)


def test_pi_encoding(nacs):
    enc = qubit_states(nacs, RotorState(0, 0), RotorState(1, 0))
    assert enc.polarization == "pi"


@pytest.mark.parametrize("lo,up", [((0, 0), (2, 0)), ((1, 1), (2, -1)), ((1, 0), (1, 1))])
def test_non_dipole_pair(nacs, lo, up):
    with pytest.raises(DomainError):
        qubit_states(nacs, RotorState(*lo), RotorState(*up))


@given(st.floats(0.01, 20.0))
@settings(max_examples=25, deadline=None)
def test_mu_linear_in_d(d):
    a = MoleculeSpec("x", 1000.0, d, 0.0, 0.0)
    b = MoleculeSpec("x", 1000.0, 2 * d, 0.0, 0.0)
    ea = qubit_states(a, RotorState(1, 1), RotorState(2, 2))
    eb = qubit_states(b, RotorState(1, 1), RotorState(2, 2))
    assert eb.mu_m == 2 * ea.mu_m


def test_auxiliary_dressing(nacs):
    enc = qubit_states(nacs, RotorState(0, 0), RotorState(1, 1))
    assert auxiliary_pi_dressing(nacs, enc, 0.0) is enc
    aux = auxiliary_pi_dressing(nacs, enc, 5.0)
    assert aux.mu_m == pytest.approx(enc.mu_m / math.sqrt(2), rel=1e-15)
    comps = dict(aux.components())
    assert set(comps) == {RotorState(1, 1), RotorState(2, 1)}
    assert all(v == pytest.approx(2 ** -0.5) for v in comps.values())
    assert aux.shifts == (None, 5.0)


# ---------------------------------------------------------------- hyperfine


def test_no_nuclear_spin_zero():
    spec = MoleculeSpec("x", 1000.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    H = hyperfine_hamiltonian(spec, 2)
    assert np.all(H == 0)


def test_scalar_only_spectrum():
    I1, I2, c4 = 1.5, 3.5, 0.0190
    spec = MoleculeSpec("x", 1000.0, 1.0, I1, I2, c4=c4)
    H = hyperfine_hamiltonian(spec, 2)
    w = np.linalg.eigvalsh(H)
    expect = []
    for N in range(3):
        for F in np.arange(abs(I1 - I2), I1 + I2 + 1):
            e = c4 / 2 * (F * (F + 1) - I1 * (I1 + 1) - I2 * (I2 + 1))
            expect += [e] * int((2 * F + 1) * (2 * N + 1))
    np.testing.assert_allclose(w, np.sort(expect), atol=1e-13)


@pytest.mark.parametrize("name", ["NaCs", "RbCs"])
def test_hermitian_and_mf_blocks(name):
    spec = MoleculeSpec.load(name)
    H = hyperfine_hamiltonian(spec, 3)
    assert np.array_equal(H, H.conj().T)
    mF = np.array([sum(lab[1:]) for lab in hyperfine_basis(spec, 3)])
    cross = np.abs(mF[:, None] - mF[None, :]) > 1e-9
    assert np.all(H[cross] == 0.0)


def test_each_term_conserves_mf(rbcs):
    labels = hyperfine_basis(rbcs, 2)
    mF = np.array([sum(lab[1:]) for lab in labels])
    cross = np.abs(mF[:, None] - mF[None, :]) > 1e-9
    for field in ("eQq1", "eQq2", "c1", "c2", "c3", "c4"):
        kw = {f: 0.0 for f in ("eQq1", "eQq2", "c1", "c2", "c3", "c4")}
        kw[field] = 1.0
        H = hyperfine_hamiltonian(MoleculeSpec("x", 1.0, 1.0, 1.5, 3.5, **kw), 2)
        assert np.all(H[cross] == 0.0), field
        assert np.abs(H).max() > 0


def test_quadrupole_diagonal_element():
    # <N=1,mN=0; m_I|H_Q|...> = eQq <P2> (3m^2 - I(I+1)) / (4I(2I-1)), <P2> = 2/5
    spec = MoleculeSpec("x", 1000.0, 1.0, 1.5, 0.0, eQq1=1.0)
    H = hyperfine_hamiltonian(spec, 1)
    labels = hyperfine_basis(spec, 1)
    i = labels.index((1, 0, 1.5, 0.0))
    assert H[i, i] == pytest.approx(0.4 * (3 * 2.25 - 3.75) / 12.0, rel=1e-12)


def test_overlaps_bounded_and_stretched(rbcs):
    enc = qubit_states(rbcs, RotorState(1, 1), RotorState(2, 2))
    res = nuclear_overlap_analysis(rbcs, enc)
    assert len(res) == int((2 * rbcs.I1 + 1) * (2 * rbcs.I2 + 1))
    assert all(0.0 <= r.overlap <= 1.0 for r in res)
    stretched = [r for r in res if r.stretched]
    assert len(stretched) == 2
    assert all(abs(r.overlap - 1.0) < 1e-12 for r in stretched)
    assert [r.overlap for r in res] == sorted((r.overlap for r in res), reverse=True)


def test_count_overlaps_excludes_stretched(nacs):
    enc = qubit_states(nacs, RotorState(0, 0), RotorState(1, 1))
    res = nuclear_overlap_analysis(nacs, enc)
    assert count_overlaps(res, 0.0) == len(res) - 2
