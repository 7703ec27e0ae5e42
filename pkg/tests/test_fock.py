import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gkpqudit import fock
from gkpqudit.errors import DimensionMismatch, NonHermitianError, TruncationWarning
from gkpqudit.fock import HilbertSpace

small_complex = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)


def _series_exp(A, terms=200):
    out = np.eye(A.shape[0], dtype=complex)
    term = np.eye(A.shape[0], dtype=complex)
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


class TestHilbertSpace:
    def test_dims(self):
        s = HilbertSpace(7)
        assert s.total_dim == 14
        assert s.scaled().cavity_dim == 9

    @pytest.mark.parametrize("n", [0, 1, 2.5])
    def test_rejects_bad_cutoff(self, n):
        with pytest.raises(ValueError):
            HilbertSpace(n)

    def test_rejects_qutrit_ancilla(self):
        with pytest.raises(ValueError):
            HilbertSpace(4, ancilla_dim=3)


class TestLadder:
    def test_two_level(self):
        np.testing.assert_array_equal(fock.annihilation(2), [[0, 1], [0, 0]])

    def test_kills_vacuum(self):
        a = fock.annihilation(10)
        assert np.allclose(a @ fock.fock_ket(10, 0), 0)

    def test_commutator_interior(self):
        a = fock.annihilation(30)
        c = a @ a.conj().T - a.conj().T @ a
        assert np.max(np.abs(c[:29, :29] - np.eye(29))) < 1e-12

    def test_quadratures(self):
        q, p = fock.quadratures(30)
        v = fock.fock_ket(30, 0)
        assert abs(np.vdot(v, q @ v)) < 1e-15
        assert np.vdot(v, q @ q @ v).real == pytest.approx(0.5)
        c = q @ p - p @ q
        assert np.max(np.abs(c[:29, :29] - 1j * np.eye(29))) < 1e-12
        assert fock.is_hermitian(q) and fock.is_hermitian(p)


class TestMatrixExp:
    def test_zero(self):
        np.testing.assert_allclose(fock.matrix_exp(np.zeros((3, 3))), np.eye(3))

    def test_pauli_z(self):
        np.testing.assert_allclose(fock.matrix_exp(1j * math.pi / 2 * fock.SIGMA_Z), np.diag([1j, -1j]), atol=1e-14)

    def test_matches_series_for_small_norm(self, rng):
        A = 0.3 * (rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6)))
        np.testing.assert_allclose(fock.matrix_exp(A), _series_exp(A), atol=1e-12)

    def test_scaling_branch(self, rng):
        A = 4.0 * (rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5)))
        B = fock.matrix_exp(A / 8)
        np.testing.assert_allclose(fock.matrix_exp(A), np.linalg.matrix_power(B, 8), rtol=1e-9, atol=1e-9)

    def test_skew_hermitian_is_unitary(self, rng):
        H = rng.normal(size=(20, 20)) + 1j * rng.normal(size=(20, 20))
        H = H + H.conj().T
        assert fock.is_unitary(fock.matrix_exp(1j * H), tol=1e-10)

    def test_rejects_non_square(self):
        with pytest.raises(DimensionMismatch):
            fock.matrix_exp(np.zeros((2, 3)))


def _coherent(alpha, n):
    k = np.arange(n)
    logf = np.array([math.lgamma(j + 1) for j in k])
    amp = np.exp(-abs(alpha) ** 2 / 2 + k * np.log(complex(alpha)) - 0.5 * logf) if alpha != 0 else (k == 0) * 1.0
    return amp.astype(complex)


class TestDisplacement:
    def test_zero_is_identity(self):
        np.testing.assert_array_equal(fock.displacement(10, 0), np.eye(10))

    def test_vacuum_overlap(self):
        D = fock.displacement(40, 1.0)
        assert abs(D[0, 0]) == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_coherent_state_oracle(self):
        alpha = 0.8 - 0.6j
        D = fock.displacement(60, alpha)
        np.testing.assert_allclose(D[:, 0], _coherent(alpha, 60), atol=1e-10)

    def test_matches_exp_of_generator(self):
        G = fock.displacement_generator(30, 0.5 + 0.2j)
        np.testing.assert_allclose(fock.displacement(30, 0.5 + 0.2j), _series_exp(G), atol=1e-10)

    def test_commutation_phase(self):
        a1, a2 = 1.0, 1j
        D1, D2 = fock.displacement(60, a1), fock.displacement(60, a2)
        A = (a1 * np.conj(a2)).imag
        # check on the well-represented low-energy block
        diff = D1 @ D2 - np.exp(2j * A) * D2 @ D1
        assert np.max(np.abs(diff[:30, :30])) < 1e-8

    @given(small_complex, small_complex)
    def test_composition(self, a1, a2):
        n = 80
        lhs = fock.displacement(n, a1) @ fock.displacement(n, a2)
        rhs = np.exp(1j * (a1 * np.conj(a2)).imag) * fock.displacement(n, a1 + a2)
        assert np.max(np.abs((lhs - rhs)[:30, :30])) < 1e-7

    def test_unitary_at_moderate_amplitude(self):
        assert fock.is_unitary(fock.displacement(100, 1.5 + 1j), tol=1e-8)

    def test_warns_beyond_quarter_cutoff(self):
        with pytest.warns(TruncationWarning):
            fock.displacement(8, 2.0)

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_geometric_phase_identity(self, d):
        n = 140
        ell = math.sqrt(math.pi * d)
        lhs = fock.displacement(n, np.exp(1j * math.pi / 4) * math.sqrt(2 * math.pi * d))
        rhs = (-1) ** d * fock.displacement(n, ell) @ fock.displacement(n, 1j * ell)
        assert np.max(np.abs((lhs - rhs)[:40, :40])) < 1e-5


class TestEnvelope:
    def test_entries(self):
        E = fock.envelope(20, 0.3)
        assert E[0, 0] == 1
        assert E[10, 10].real == pytest.approx(0.40657, abs=1e-5)

    def test_ladder_conjugation(self):
        n, delta = 30, 0.3
        E = fock.envelope(n, delta)
        Einv = np.diag(1 / np.diag(E))
        a = fock.annihilation(n)
        np.testing.assert_allclose(E @ a @ Einv, math.exp(delta**2) * a, atol=1e-12)

    def test_conjugate_identity_and_zero_width(self):
        np.testing.assert_allclose(fock.envelope_conjugate(np.eye(5), 0.4), np.eye(5))
        np.testing.assert_allclose(fock.envelope_conjugate(fock.displacement(30, 1.0), 0.0), fock.displacement(30, 1.0))

    def test_generator_route_matches_diagonal_route(self):
        n, delta, alpha = 40, 0.25, 0.7 + 0.3j
        direct = fock.envelope_conjugate(fock.displacement(n, alpha), delta)
        gen = fock.displacement_finite(n, alpha, delta)
        assert np.max(np.abs((direct - gen)[:15, :15])) < 1e-6

    def test_overflow(self):
        with pytest.raises(OverflowError):
            fock.envelope_conjugate(np.ones((200, 200)), 0.5)


class TestGroundState:
    def test_number_operator(self):
        e, v = fock.ground_state(fock.number(10))
        assert e == 0
        assert abs(v[0]) == pytest.approx(1)

    def test_cosine_potential_matches_full_diagonalization(self):
        n = 60
        H = -(fock.displacement(n, 1.0) + fock.displacement(n, -1.0)) / 2
        H = 0.5 * (H + H.conj().T)
        e, v = fock.ground_state(H)
        assert e == pytest.approx(np.linalg.eigvalsh(H)[0], abs=1e-12)
        assert np.linalg.norm(H @ v - e * v) < 1e-8

    def test_degenerate_identity(self):
        e, v = fock.ground_state(np.eye(4))
        assert e == pytest.approx(1)
        assert np.linalg.norm(v) == pytest.approx(1)

    def test_rejects_non_hermitian(self):
        with pytest.raises(NonHermitianError):
            fock.ground_state(np.array([[0, 1], [0, 0]], dtype=complex))


class TestComposite:
    def test_embed_commutes(self):
        s = HilbertSpace(10)
        A = fock.embed(fock.SIGMA_Z, "ancilla", s)
        B = fock.embed(fock.annihilation(10), "cavity", s)
        assert np.max(np.abs(A @ B - B @ A)) < 1e-12

    def test_ordering_is_ancilla_major(self):
        s = HilbertSpace(3)
        psi = np.kron(fock.KET_E, fock.fock_ket(3, 0))
        assert psi[3] == 1

    def test_embed_shape_check(self):
        with pytest.raises(DimensionMismatch):
            fock.embed(np.eye(3), "ancilla", HilbertSpace(4))

    def test_partial_trace_and_fidelity(self, rng):
        s = HilbertSpace(5)
        v = rng.normal(size=5) + 1j * rng.normal(size=5)
        v /= np.linalg.norm(v)
        rc = np.outer(v, v.conj())
        full = np.kron(np.diag([1.0, 0.0]), rc)
        np.testing.assert_allclose(fock.partial_trace_ancilla(full, s), rc, atol=1e-14)
        ket = np.kron(fock.KET_G, v)
        np.testing.assert_allclose(fock.partial_trace_ancilla(ket, s), rc, atol=1e-14)
        assert fock.state_fidelity(rc, v) == pytest.approx(1)
        vac = fock.fock_ket(4, 0)
        assert fock.state_fidelity(np.outer(vac, vac), vac) == 1

    def test_expectation_ket_and_dm_agree(self, rng):
        v = fock.normalize(rng.normal(size=6) + 1j * rng.normal(size=6))
        op = fock.number(6)
        assert fock.expectation(v, op) == pytest.approx(fock.expectation(np.outer(v, v.conj()), op))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fock.state_fidelity(np.eye(3), np.ones(4))


def test_convergence_guard_flags_cutoff_dependence():
    from gkpqudit.errors import ConvergenceError

    ok = fock.convergence_guard(lambda s: np.array([1.0]), HilbertSpace(10))
    assert ok[0] == 1.0
    with pytest.raises(ConvergenceError):
        fock.convergence_guard(lambda s: np.array([float(s.cavity_dim)]), HilbertSpace(10))
