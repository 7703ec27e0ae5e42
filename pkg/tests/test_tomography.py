import cmath
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gkpqudit import fock, gkp
from gkpqudit import tomography as T
from gkpqudit.errors import GridTooCoarse, Underdetermined


def fock_rho(n, k):
    rho = np.zeros((n, n), dtype=complex)
    rho[k, k] = 1
    return rho


def coherent(n, alpha):
    k = np.arange(n)
    logf = np.array([math.lgamma(j + 1) for j in k])
    mag = np.exp(-abs(alpha) ** 2 / 2 + k * math.log(abs(alpha)) - logf / 2)
    return mag * np.exp(1j * k * cmath.phase(alpha))


def coherent_cf(beta, alpha):
    return np.exp(-np.abs(beta) ** 2 / 2 + beta * np.conj(alpha) - np.conj(beta) * alpha)


def grid_from(values_fn, h, m):
    ax = h * np.arange(-m, m + 1)
    b = ax[None, :] + 1j * ax[:, None]
    return T.PhaseSpaceGrid(ax, ax, values_fn(b), kind="cf")


def random_low_energy_state(n, rng, levels=6):
    v = np.zeros(n, dtype=complex)
    v[:levels] = rng.normal(size=levels) + 1j * rng.normal(size=levels)
    return v / np.linalg.norm(v)


class TestWigner:
    def test_parity_values(self):
        assert T.wigner_at(fock_rho(20, 0), [0])[0] == pytest.approx(1)
        assert T.wigner_at(fock_rho(20, 1), [0])[0] == pytest.approx(-1)

    def test_coherent_closed_form(self):
        alpha = 0.8 - 0.4j
        pts = np.array([0, 0.8 - 0.4j, 1.2 + 0.3j, -0.5j])
        want = np.exp(-2 * np.abs(pts - alpha) ** 2)
        np.testing.assert_allclose(T.wigner_at(coherent(40, alpha), pts), want, atol=1e-10)

    def test_density_normalization(self):
        ax = np.linspace(-4, 4, 81)
        rho = np.outer(coherent(40, 0.5 + 0.5j), coherent(40, 0.5 + 0.5j).conj())
        W = T.wigner(rho, ax, density=True)
        h = ax[1] - ax[0]
        assert W.values.sum() * h * h == pytest.approx(1, abs=0.02)
        P = T.wigner(rho, ax)
        assert P.values.sum() * h * h * 2 / math.pi == pytest.approx(1, abs=0.02)
        assert np.all(np.abs(P.values) <= 1 + 1e-9)

    def test_qutrit_negativity(self, codes):
        ax = np.linspace(-3, 3, 41)
        W = T.wigner(gkp.maximally_mixed(codes(3)), ax)
        assert W.values.min() < -0.01
        assert np.isrealobj(W.values)

    def test_fourier_duality(self):
        psi = (coherent(40, 0.7) + coherent(40, -0.7)) / 1
        psi /= np.linalg.norm(psi)
        cf = T.characteristic_function(psi, np.linspace(-6, 6, 121))
        pts = np.array([0, 0.3, 0.7, 0.2j, 0.5 + 0.5j])
        np.testing.assert_allclose(T.wigner_from_cf(cf, pts), T.wigner_at(psi, pts), atol=0.02)


class TestCharacteristic:
    @given(st.integers(0, 5))
    def test_origin_is_one(self, k):
        assert T.characteristic_at(fock_rho(12, k), [0])[0] == pytest.approx(1)

    def test_hermitian_symmetry(self, rng):
        psi = random_low_energy_state(30, rng)
        b = np.array([0.3 + 0.1j, -1.1 + 0.6j, 0.9j])
        np.testing.assert_allclose(T.characteristic_at(psi, -b), np.conj(T.characteristic_at(psi, b)), atol=1e-12)

    def test_matches_displacement_operator(self, rng):
        psi = random_low_energy_state(30, rng)
        space = fock.HilbertSpace(30)
        for beta in (0.4, -0.3 + 0.8j):
            want = np.vdot(psi, fock.displacement(space, beta) @ psi)
            assert T.characteristic_at(psi, [beta])[0] == pytest.approx(want, abs=1e-10)

    def test_elements_match_displacement(self):
        space = fock.HilbertSpace(25)
        beta = 0.9 - 0.4j
        M = T.displacement_elements(np.array([beta]), 25)[0]
        D = fock.displacement(space, beta)
        # the truncated exponential is only converged well below the cutoff
        np.testing.assert_allclose(M[:10, :10], D[:10, :10], rtol=0, atol=1e-9)

    def test_mixed_state_peaks(self, codes):
        for d in (2, 3):
            code = codes(d)
            rho = gkp.maximally_mixed(code)
            ell = code.length
            vals = T.characteristic_at(rho, [ell, 1j * ell])
            assert np.all(vals.real > 0.4)
            ax = np.linspace(-3, 3, 25)
            cf = T.characteristic_function(rho, ax)
            assert np.max(np.abs(cf.values.imag)) < 0.02


class TestPhotonStats:
    def test_vacuum(self):
        g = grid_from(lambda b: coherent_cf(b, 0), 0.02, 2)
        assert T.photon_stats_from_cf(g) == pytest.approx(0, abs=0.01)

    def test_coherent(self):
        alpha = 1.0 + 1.0j
        g = grid_from(lambda b: coherent_cf(b, alpha), 0.02, 2)
        assert T.photon_stats_from_cf(g) == pytest.approx(2, abs=0.05)
        # same estimate from the numerically evaluated characteristic function
        num = T.characteristic_function(coherent(40, alpha), 0.02 * np.arange(-2, 3))
        assert T.photon_stats_from_cf(num) == pytest.approx(2, abs=0.05)

    def test_gaussian_envelope(self):
        g = grid_from(lambda b: T.gaussian_cf(b, 0.290), 0.02, 2)
        assert T.photon_stats_from_cf(g) == pytest.approx(5.45, rel=0.01)

    def test_coarse_grid(self):
        with pytest.raises(GridTooCoarse):
            T.photon_stats_from_cf(grid_from(lambda b: coherent_cf(b, 0), 0.1, 2))
        ax = 0.02 * np.arange(1, 6)
        with pytest.raises(GridTooCoarse):
            T.photon_stats_from_cf(T.PhaseSpaceGrid(ax, ax, np.ones((5, 5))))


class TestDeltaEff:
    @given(st.floats(0.2, 0.45))
    def test_synthetic(self, delta):
        g = grid_from(lambda b: T.gaussian_cf(b, delta, 0.9, 0.02), 0.05, 16)
        s, A, B = T.fit_delta_eff(g)
        assert s == pytest.approx(delta, abs=1e-3)
        assert A == pytest.approx(0.9, abs=1e-3)

    def test_steady_qutrit(self, steady):
        ax = np.linspace(-0.8, 0.8, 33)
        s, _, _ = T.fit_delta_eff(T.characteristic_function(steady(3), ax))
        assert 0.24 <= s <= 0.32

    def test_decreases_with_d(self, steady):
        ax = np.linspace(-0.8, 0.8, 33)
        s2, _, _ = T.fit_delta_eff(T.characteristic_function(steady(2), ax))
        s4, _, _ = T.fit_delta_eff(T.characteristic_function(steady(4), ax))
        assert s4 < s2


class TestReconstruction:
    def test_vacuum(self):
        ax = np.linspace(-3, 3, 15)
        al = (ax[None, :] + 1j * ax[:, None]).ravel()
        res = T.reconstruct_density_matrix(al, T.wigner_at(fock_rho(8, 0), al), 8)
        assert res.rho[0, 0].real > 0.999

    def test_random_states_noiseless(self):
        rng = np.random.default_rng(11)
        ax = np.linspace(-3.5, 3.5, 25)
        al = (ax[None, :] + 1j * ax[:, None]).ravel()
        for _ in range(5):
            psi = random_low_energy_state(12, rng)
            res = T.reconstruct_density_matrix(al, T.wigner_at(psi, al), 12)
            assert np.vdot(psi, res.rho @ psi).real >= 0.99
            assert np.trace(res.rho).real == pytest.approx(1)
            assert np.linalg.eigvalsh(res.rho).min() > -1e-12

    def test_noisy_gkp_round_trip(self, codes):
        # the rank cap supplies the purity prior that linear inversion lacks
        psi = codes(2, 0.34).codewords[0]
        n = 24
        ax = np.linspace(-4.5, 4.5, 81)
        al = (ax[None, :] + 1j * ax[:, None]).ravel()
        W = T.wigner_at(psi, al) + np.random.default_rng(0).normal(0, 0.01, al.size)
        res = T.reconstruct_density_matrix(al, W, n, rank_cap=1)
        assert np.vdot(psi[:n], res.rho @ psi[:n]).real > 0.95

    def test_underdetermined(self):
        with pytest.raises(Underdetermined):
            T.reconstruct_density_matrix(np.zeros(10), np.zeros(10), 4)


class TestExport:
    def test_csv_and_header(self):
        ax = np.array([-0.5, 0.0, 0.5])
        g = T.characteristic_function(fock_rho(10, 0), ax)
        lines = g.to_csv().splitlines()
        assert lines[0] == "re,im,value,value_im"
        assert len(lines) == 10
        head = json.loads(g.header_json())
        assert head["re"] == [-0.5, 0.5, 3]
        w = T.wigner(fock_rho(10, 0), ax)
        assert w.to_csv().splitlines()[0] == "re,im,value"
