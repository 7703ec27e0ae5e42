import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gkpqudit import channels, fock, gkp
from gkpqudit.channels import DEVICE, KrausChannel, NoiseModel
from gkpqudit.errors import BasisNotOrthogonal, FitDiverged, IncompleteTable, NonlinearRegime, StepTooLarge, UnsupportedDimension


def random_unitary(d, rng):
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def unitary_mixture(d, rng, k=3, weyl=False):
    """Random mixture of unitaries; unital, so the decomposition applies."""
    p = rng.dirichlet(np.ones(k))
    if weyl:
        basis = channels.weyl_basis(d)
        us = [basis[i] for i in rng.choice(len(basis), size=k)]
    else:
        us = [random_unitary(d, rng) for _ in range(k)]
    return KrausChannel([math.sqrt(pi) * U for pi, U in zip(p, us)])


def process_fidelity_route(channel, d):
    # F_avg = (d F_e + 1) / (d + 1), with F_e from the Choi state
    return (d * channels.entanglement_fidelity(channel, d) + 1) / (d + 1)


class TestKraus:
    def test_completeness_checked(self):
        with pytest.raises(ValueError):
            KrausChannel([2 * np.eye(2)])
        with pytest.raises(ValueError):
            KrausChannel([])

    def test_compose(self):
        rng = np.random.default_rng(0)
        A, B = unitary_mixture(3, rng), unitary_mixture(3, rng)
        rho = np.diag([0.5, 0.3, 0.2]).astype(complex)
        np.testing.assert_allclose(A.then(B)(rho), B(A(rho)), atol=1e-12)

    def test_idle_zero_step_is_identity(self):
        ch = channels.cavity_idle_kraus((1e-3, 1e-3), 0.0, space=10)
        rho = np.full((10, 10), 0.1, dtype=complex)
        np.testing.assert_allclose(ch(rho), rho)

    def test_vacuum_fixed(self):
        ch = channels.cavity_idle_kraus((0.01, 0.005), 1.0, space=10)
        rho = np.zeros((10, 10), dtype=complex)
        rho[0, 0] = 1
        np.testing.assert_allclose(ch(rho), rho, atol=1e-15)

    def test_printed_operators(self):
        k1, kp, dt = 0.02, 0.01, 0.5
        ops = channels.cavity_idle_kraus((k1, kp), dt, space=6).kraus_ops
        a = fock.annihilation(6)
        n = np.diag(np.arange(6.0))
        np.testing.assert_allclose(ops[0], np.eye(6) - 0.5 * k1 * dt * n - kp * dt * n @ n)
        np.testing.assert_allclose(ops[1], math.sqrt(k1 * dt) * a)
        np.testing.assert_allclose(ops[2], math.sqrt(2 * kp * dt) * n)

    def test_photon_number_decay_law(self):
        T1 = DEVICE["T1c"]
        steps = 2000
        ch = channels.cavity_idle_kraus((1 / T1, 0.0), T1 / steps, space=20)
        psi = np.exp(-0.5) / np.sqrt([math.factorial(k) for k in range(20)]).astype(complex)
        rho = np.outer(psi, psi.conj())
        for _ in range(steps):
            rho = ch(rho)
        nbar = np.trace(np.diag(np.arange(20)) @ rho).real / np.trace(rho).real
        assert nbar == pytest.approx(math.exp(-1), rel=0.02)

    def test_step_limits(self):
        with pytest.raises(StepTooLarge):
            channels.cavity_idle_kraus((1.0, 0.0), 1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            with pytest.raises(UserWarning):
                channels.cavity_idle_kraus((0.1, 0.0), 1.0)


class TestNoiseModel:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            NoiseModel(kappa_1c=-1)
        with pytest.raises(ValueError):
            NoiseModel(n_th=1.5)

    def test_device_preset(self):
        m = channels.noise_preset("paper-device")
        assert m.kappa_1c == pytest.approx(1 / 631)
        assert m.kappa_phi_c == pytest.approx(0.022 / 295)
        assert m.kerr == 0 and m.chi_prime == 0
        with pytest.raises(KeyError):
            channels.noise_preset("nope")


class TestDepolarizing:
    def test_identity_at_zero(self):
        rho = np.diag([0.7, 0.3]).astype(complex)
        np.testing.assert_allclose(channels.depolarizing_channel(2, 1.0, 0.0)(rho), rho)

    @given(st.integers(2, 4), st.floats(0, 5))
    def test_maximally_mixed_fixed(self, d, gt):
        eye = np.eye(d) / d
        np.testing.assert_allclose(channels.depolarizing_channel(d, 1.0, gt)(eye), eye, atol=1e-15)

    @given(st.integers(2, 4), st.floats(0, 5))
    def test_fidelity_closed_form(self, d, gt):
        F = channels.average_channel_fidelity(channels.depolarizing_channel(d, 1.0, gt), d)
        assert F == pytest.approx(1 / d + (d - 1) / d * math.exp(-gt), abs=1e-12)

    def test_full_depolarization_d3(self):
        F = channels.average_channel_fidelity(channels.depolarizing_channel(3, 1.0, 1e3), 3)
        assert F == pytest.approx(1 / 3, abs=1e-12)
        # the Weyl-basis sum keeps only the identity term (the only trace-carrying one)
        assert F == pytest.approx(1 / 4 + 3 / 36, abs=1e-12)


class TestAverageFidelity:
    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_identity(self, d):
        assert channels.average_channel_fidelity(lambda r: r, d) == pytest.approx(1)

    def test_basis_checks(self):
        with pytest.raises(BasisNotOrthogonal):
            channels.average_channel_fidelity(lambda r: r, 2, [np.eye(2)] * 4)
        with pytest.raises(BasisNotOrthogonal):
            channels.average_channel_fidelity(lambda r: r, 2, [np.eye(2)])

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_matches_choi_route(self, d):
        rng = np.random.default_rng(d)
        for _ in range(20):
            ch = unitary_mixture(d, rng)
            assert channels.average_channel_fidelity(ch, d) == pytest.approx(process_fidelity_route(ch, d), abs=1e-10)

    def test_amplitude_damping_matches_choi_route(self):
        ch = KrausChannel([np.diag([1, math.sqrt(0.7)]), np.array([[0, math.sqrt(0.3)], [0, 0]])])
        assert channels.average_channel_fidelity(ch, 2) == pytest.approx(process_fidelity_route(ch, 2), abs=1e-12)


class TestDecomposition:
    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_theorem_on_weyl_mixtures(self, d):
        rng = np.random.default_rng(100 + d)
        for _ in range(50):
            ch = unitary_mixture(d, rng, k=4, weyl=True)
            direct = channels.average_channel_fidelity(ch, d)
            assert channels.decomposed_fidelity(channels.survival_table(ch, d), d) == pytest.approx(direct, abs=1e-9)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_depolarizing_decomposes(self, d):
        ch = channels.depolarizing_channel(d, 1.0, 0.3)
        direct = channels.average_channel_fidelity(ch, d)
        assert channels.decomposed_fidelity(channels.survival_table(ch, d), d) == pytest.approx(direct, abs=1e-12)

    def test_table_sizes(self):
        assert len(channels.survival_table(lambda r: r, 2)) == 6
        assert len(channels.survival_table(lambda r: r, 3)) == 12
        assert len(channels.survival_table(lambda r: r, 4)) == 28

    def test_parity_four_term_identity(self):
        # 1 + st + st(-1)^{n+m} + (-1)^{n+m} = 4 delta_nm delta_st
        for s, t, n, m in itertools.product((-1, 1), (-1, 1), (0, 1), (0, 1)):
            val = 1 + s * t + s * t * (-1) ** (n + m) + (-1) ** (n + m)
            assert val == 4 * (n == m) * (s == t)

    def test_parity_vectors_are_parity_eigenstates(self):
        X2 = gkp.logical_pauli_matrix(4, gkp.PauliLabel(2, 0))
        Z2 = gkp.logical_pauli_matrix(4, gkp.PauliLabel(0, 2))
        for (s, m), v in zip(gkp.PARITY_LABELS, channels._parity_vectors()):
            np.testing.assert_allclose(X2 @ v, (1 if s == "+" else -1) * v, atol=1e-12)
            np.testing.assert_allclose(Z2 @ v, (-1) ** m * v, atol=1e-12)

    def test_incomplete(self):
        table = channels.survival_table(lambda r: r, 3)
        table.pop(("Z", 1))
        with pytest.raises(IncompleteTable):
            channels.decomposed_fidelity(table, 3)
        with pytest.raises(UnsupportedDimension):
            channels.decomposed_fidelity({}, 5)

    def test_uniform_rates(self):
        for d in (2, 3, 4):
            table = {k: 0.25 for k in channels._required_keys(d)}
            assert channels.effective_rate_from_decays(table, d) == pytest.approx(0.25)

    @pytest.mark.parametrize("d,want", [(2, 1537), (3, 886), (4, 620)])
    def test_printed_tables(self, d, want):
        g = channels.rates_from_lifetimes(channels.MEASURED_GAMMA_INV_US[d])
        assert 1 / channels.effective_rate_from_decays(g, d) == pytest.approx(want, abs=1)

    def test_printed_table_entries(self):
        t = channels.MEASURED_GAMMA_INV_US
        assert t[3][("X", 0)] == 1153 and t[3][("X2Z", 2)] == 723
        assert t[4][("sqrtwX3Z", 3)] == 488 and t[4][("parity", ("+", 0))] == 607
        assert len(t[4]) == 28

    def test_representative_rate(self):
        g = {"X": 1.0, "Z": 2.0, "sqrtwXZ": 3.0}
        assert channels.representative_rate(g, 2) == pytest.approx(2.0)
        g4 = {lab.name(): 1.0 for lab in gkp.measurement_pauli_sets(4)} | {"parity": 1.0}
        assert channels.representative_rate(g4, 4) == pytest.approx(1.0)


class TestRates:
    @pytest.mark.parametrize("d,life", [(2, 851), (3, 488), (4, 332)])
    def test_fock_lifetimes(self, d, life):
        k1, kp = channels.fock_baseline_rates()
        assert 1 / channels.fock_qudit_rate(d, k1, kp) == pytest.approx(life, rel=0.01)

    def test_fock_unsupported(self):
        with pytest.raises(UnsupportedDimension):
            channels.fock_qudit_rate(5, 1, 1)

    def test_depolarizing_short_time(self):
        fam = lambda dt: channels.depolarizing_channel(3, 0.02, dt)
        assert channels.short_time_rate(fam, 3) == pytest.approx(0.02, rel=1e-6)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_truncated_cavity_prefactors(self, d):
        k1, kp = 1 / 631, 1 / 1500
        fam = channels.truncated_cavity_channel(d, k1, kp)
        assert channels.short_time_rate(fam, d) == pytest.approx(channels.fock_qudit_rate(d, k1, kp), rel=1e-4)

    def test_prefactors_separately(self):
        for d, (a, b) in channels._FOCK_PREFACTORS.items():
            loss = channels.short_time_rate(channels.truncated_cavity_channel(d, 1e-3, 0.0), d)
            deph = channels.short_time_rate(channels.truncated_cavity_channel(d, 0.0, 1e-3), d)
            assert loss == pytest.approx(a * 1e-3, rel=1e-4)
            assert deph == pytest.approx(b * 1e-3, rel=1e-4)

    def test_nonlinear_regime(self):
        fam = lambda dt: channels.depolarizing_channel(2, 50.0, dt)
        with pytest.raises(NonlinearRegime):
            channels.short_time_rate(fam, 2)

    def test_gain(self):
        assert channels.qec_gain(0.5, 0.5) == 1
        assert channels.qec_gain(1 / 488, 1 / 886) == pytest.approx(1.82, abs=0.01)
        assert channels.qec_gain(1 / 332, 1 / 620) == pytest.approx(1.87, abs=0.01)
        with pytest.raises(ValueError):
            channels.qec_gain(0, 1)


class TestFit:
    def test_noiseless_recovery(self):
        t = np.linspace(0, 3000, 16)
        p = 0.5 * np.exp(-t / 1000) + 1 / 2
        fit = channels.fit_exponential(t, p, 2)
        assert fit.gamma == pytest.approx(1e-3, rel=1e-3)
        assert fit.offset == 0.5 and fit.offset_fixed

    def test_constant_curve_degenerate(self):
        fit = channels.fit_exponential(np.arange(6.0), np.full(6, 1 / 3), 3)
        assert fit.degenerate and fit.gamma == 0 and fit.lifetime == math.inf

    def test_noisy_qubit_regime(self):
        rng = np.random.default_rng(5)
        errs = []
        for _ in range(50):
            t = np.linspace(0, 6000, 25)
            p = 0.45 * np.exp(-t / 1900) + 0.5 + rng.normal(0, 0.01, t.size)
            errs.append(channels.fit_exponential(t, p, 2).gamma * 1900 - 1)
        assert abs(np.mean(errs)) < 0.03
        assert np.std(errs) < 0.1

    def test_free_offset(self):
        t = np.linspace(0, 50, 20)
        p = 0.6 * np.exp(-t / 10) + 0.3
        fit = channels.fit_exponential(t, p, 2, free_offset=True)
        assert fit.offset == pytest.approx(0.3, abs=1e-6) and not fit.offset_fixed

    def test_too_few_points(self):
        with pytest.raises(FitDiverged):
            channels.fit_exponential([0, 1, 2], [1, 0.9, 0.8], 2)

    @given(st.floats(1e-4, 1e-2), st.floats(0.2, 0.5))
    def test_recovery_property(self, gamma, amp):
        t = np.linspace(0, 3 / gamma, 12)
        fit = channels.fit_exponential(t, amp * np.exp(-gamma * t) + 0.25, 4)
        assert fit.gamma == pytest.approx(gamma, rel=1e-4)


class TestGammaCsv:
    def test_round_trip(self):
        table = channels.MEASURED_GAMMA_INV_US[4]
        text = channels.write_gamma_csv(table)
        assert text.splitlines()[0] == "basis_label,n,gamma_inv_us,err"
        back, errs = channels.read_gamma_csv(text)
        assert back == table and errs == {}

    def test_errors_column(self):
        table = {("X", 0): 1000.0}
        back, errs = channels.read_gamma_csv(channels.write_gamma_csv(table, {("X", 0): 12.0}))
        assert errs == {("X", 0): 12.0}
